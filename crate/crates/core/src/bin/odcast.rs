fn main() {
    std::process::exit(odcast::cli::main_with_args(std::env::args_os()));
}
