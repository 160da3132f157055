fn main() {
    std::process::exit(qssdiag_cli::run_cli(std::env::args_os()));
}
