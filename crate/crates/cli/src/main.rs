fn main() {
    std::process::exit(lapace_cli::run(std::env::args_os()));
}
