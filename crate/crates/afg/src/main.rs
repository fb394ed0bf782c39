fn main() {
    std::process::exit(afg::cli::main_with_args(std::env::args_os()));
}
