fn main() {
    std::process::exit(structcov::cli::run(std::env::args_os()));
}
