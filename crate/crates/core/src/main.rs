fn main() {
    std::process::exit(chanprune::cli::run_from(std::env::args_os()));
}
