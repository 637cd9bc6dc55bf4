fn main() {
    std::process::exit(cgcd::cli::run());
}
