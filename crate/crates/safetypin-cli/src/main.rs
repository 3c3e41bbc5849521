fn main() {
    std::process::exit(safetypin_cli::run_cli(std::env::args()));
}
