fn main() {
    std::process::exit(fluosr::cli::run_from(std::env::args_os()));
}
