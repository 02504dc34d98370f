fn main() {
    std::process::exit(bhl::cli::run_cli(std::env::args_os()));
}
