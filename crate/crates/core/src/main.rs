fn main() {
    std::process::exit(nlsecap::cli::main_with_args(std::env::args_os()));
}
