fn main() {
    std::process::exit(optibfm::cli::main_with_args(std::env::args_os()));
}
