fn main() {
    std::process::exit(pointlab::cli::run_from_args(std::env::args_os()));
}
