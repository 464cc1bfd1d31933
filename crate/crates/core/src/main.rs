fn main() {
    std::process::exit(overflowlab::cli::run(std::env::args_os()));
}
