fn main() {
    std::process::exit(mirlab_cli::run(std::env::args_os()));
}
