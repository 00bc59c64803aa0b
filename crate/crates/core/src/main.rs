fn main() {
    std::process::exit(whitney::cli::run(std::env::args_os()));
}
