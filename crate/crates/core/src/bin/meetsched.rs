fn main() {
    std::process::exit(meetsched::cli::main_with_args(std::env::args_os()));
}
