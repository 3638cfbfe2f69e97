fn main() {
    std::process::exit(densescan_cli::run(std::env::args_os()));
}
