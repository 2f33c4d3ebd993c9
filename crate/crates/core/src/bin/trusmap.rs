fn main() {
    std::process::exit(trusmap::cli::run(std::env::args_os()));
}
