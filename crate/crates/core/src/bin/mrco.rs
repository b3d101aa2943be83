fn main() {
    std::process::exit(mrco::cli::run(std::env::args_os()));
}
