//! Per-session evaluation: cluster encoder features of the cumulative test
//! set with k = |label space|, match clusters to classes once on All, and
//! decompose accuracy into Old/New under that same matching.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::assignment::{hungarian_acc, subset_acc};
use super::kmeans::{kmeans_cluster, KmeansConfig, KmeansInit};
use super::EvalError;
use crate::model::{ForwardScope, ModelState};
use crate::rng::derive_seed_indexed;
use crate::sessions::SessionStream;

/// Harness-side clustering knobs; `k` always comes from the label space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub max_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub init: KmeansInit,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            restarts: 64,
            seed: 0x6576616c,
            init: KmeansInit::Random,
        }
    }
}

/// One session's clustering accuracy report.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub session: usize,
    pub test_count: usize,
    pub acc_all: f64,
    pub acc_old: Option<f64>,
    pub acc_new: Option<f64>,
    /// Optimal cluster -> class matching computed on All.
    pub mapping: BTreeMap<i64, i64>,
    pub per_class_recall: BTreeMap<i64, f64>,
    /// Means over the incremental sessions seen so far (absent before any).
    pub mean_all: Option<f64>,
    pub mean_old: Option<f64>,
    pub mean_new: Option<f64>,
    pub y_true: Vec<i64>,
    pub y_pred: Vec<i64>,
}

/// Means of All/Old/New accuracy over incremental sessions (id >= 1).
pub(crate) fn cross_session_means(
    reports: &[&EvalReport],
) -> (Option<f64>, Option<f64>, Option<f64>) {
    let mean = |values: Vec<f64>| {
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    };
    let incremental: Vec<&&EvalReport> = reports.iter().filter(|r| r.session >= 1).collect();
    (
        mean(incremental.iter().map(|r| r.acc_all).collect()),
        mean(incremental.iter().filter_map(|r| r.acc_old).collect()),
        mean(incremental.iter().filter_map(|r| r.acc_new).collect()),
    )
}

/// Evaluates `model` on the cumulative test set of `session_id`.
/// `history` holds the reports of earlier sessions, in order.
pub fn session_report(
    stream: &SessionStream,
    model: &ModelState,
    session_id: usize,
    settings: &EvalSettings,
    history: &[EvalReport],
) -> Result<EvalReport, EvalError> {
    let (instances, y_true) = stream
        .cumulative_test(session_id)
        .map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
    if y_true.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (features, _) = model.forward(&instances, ForwardScope::FeaturesOnly)?;

    let k = stream.label_space(session_id).len();
    let clusters = kmeans_cluster(
        &features,
        &KmeansConfig {
            k,
            max_iters: settings.max_iters,
            restarts: settings.restarts,
            seed: derive_seed_indexed(settings.seed, "session", session_id as u64),
            init: settings.init,
        },
    )?;
    let y_pred: Vec<i64> = clusters.labels.iter().map(|&c| c as i64).collect();

    let (acc_all, mapping) = hungarian_acc(&y_true, &y_pred)?;
    let old_classes: Vec<i64> = if session_id == 0 {
        stream.label_space(0).to_vec()
    } else {
        stream.label_space(session_id - 1).to_vec()
    };
    let (acc_old, acc_new) = subset_acc(&y_true, &y_pred, &mapping, &old_classes);

    let mut per_class_recall = BTreeMap::new();
    for class in stream.label_space(session_id) {
        let total = y_true.iter().filter(|&&t| t == *class).count();
        if total == 0 {
            continue;
        }
        let hit = y_true
            .iter()
            .zip(&y_pred)
            .filter(|&(t, p)| t == class && mapping.get(p) == Some(t))
            .count();
        per_class_recall.insert(*class, hit as f64 / total as f64);
    }

    let mut report = EvalReport {
        session: session_id,
        test_count: y_true.len(),
        acc_all,
        acc_old,
        acc_new,
        mapping,
        per_class_recall,
        mean_all: None,
        mean_old: None,
        mean_new: None,
        y_true,
        y_pred,
    };
    let mut all: Vec<&EvalReport> = history.iter().collect();
    all.push(&report);
    let (mean_all, mean_old, mean_new) = cross_session_means(&all);
    report.mean_all = mean_all;
    report.mean_old = mean_old;
    report.mean_new = mean_new;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `session,acc_all,acc_old,acc_new,mA,mO,mN` with one row per report.
pub fn write_summary_csv(reports: &[EvalReport], path: &Path) -> Result<(), EvalError> {
    let mut out = std::fs::File::create(path)?;
    writeln!(out, "session,acc_all,acc_old,acc_new,mA,mO,mN")?;
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.session,
            r.acc_all,
            fmt_opt(r.acc_old),
            fmt_opt(r.acc_new),
            fmt_opt(r.mean_all),
            fmt_opt(r.mean_old),
            fmt_opt(r.mean_new),
        )?;
    }
    Ok(())
}

/// True class x matched cluster counts for one session.
pub fn write_confusion_csv(report: &EvalReport, path: &Path) -> Result<(), EvalError> {
    let mut clusters: Vec<i64> = report.y_pred.clone();
    clusters.sort_unstable();
    clusters.dedup();
    let mut classes: Vec<i64> = report.y_true.clone();
    classes.sort_unstable();
    classes.dedup();

    let mut out = std::fs::File::create(path)?;
    let header: Vec<String> = clusters
        .iter()
        .map(|c| match report.mapping.get(c) {
            Some(class) => format!("cluster_{c}_as_{class}"),
            None => format!("cluster_{c}_unmatched"),
        })
        .collect();
    writeln!(out, "true_class,{}", header.join(","))?;
    for class in &classes {
        let mut row = vec![class.to_string()];
        for cluster in &clusters {
            let count = report
                .y_true
                .iter()
                .zip(&report.y_pred)
                .filter(|&(t, p)| t == class && p == cluster)
                .count();
            row.push(count.to_string());
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
