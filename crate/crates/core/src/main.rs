fn main() {
    std::process::exit(crashmle::cli::main_with_args(std::env::args_os()));
}
