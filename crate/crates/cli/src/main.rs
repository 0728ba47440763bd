fn main() {
    std::process::exit(harmony_cli::run(std::env::args_os()));
}
