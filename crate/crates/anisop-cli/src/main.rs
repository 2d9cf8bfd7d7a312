fn main() {
    std::process::exit(anisop_cli::run(std::env::args_os()));
}
