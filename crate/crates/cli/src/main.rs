fn main() {
    std::process::exit(morphik_cli::cli::run(std::env::args_os()));
}
