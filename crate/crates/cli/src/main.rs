fn main() {
    std::process::exit(solidarity_cli::run_cli(std::env::args_os()));
}
