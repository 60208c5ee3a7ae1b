fn main() {
    std::process::exit(svt_core::cli::run_from_args(std::env::args_os()));
}
