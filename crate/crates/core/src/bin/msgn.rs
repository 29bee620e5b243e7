fn main() {
    std::process::exit(msgn::cli::main_with_args(std::env::args_os()));
}
