fn main() {
    std::process::exit(dart_cli::run(std::env::args_os()));
}
