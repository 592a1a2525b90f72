fn main() {
    std::process::exit(pista_cli::run(std::env::args_os()));
}
