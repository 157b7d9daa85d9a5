fn main() {
    std::process::exit(avalanche_cli::run(std::env::args_os()));
}
