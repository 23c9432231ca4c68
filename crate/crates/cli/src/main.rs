fn main() {
    std::process::exit(forge_cli::run_cli(std::env::args_os()));
}
