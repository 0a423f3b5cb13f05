fn main() {
    std::process::exit(fairkern::cli::run(std::env::args_os()));
}
