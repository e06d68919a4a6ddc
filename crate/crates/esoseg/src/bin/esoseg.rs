fn main() {
    std::process::exit(esoseg::cli::main_with_args(std::env::args_os()));
}
