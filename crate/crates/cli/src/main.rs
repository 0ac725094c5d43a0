fn main() {
    std::process::exit(crodobo_cli::run_cli(std::env::args_os()));
}
