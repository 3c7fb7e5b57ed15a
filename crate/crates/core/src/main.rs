fn main() {
    std::process::exit(mvftest::cli::main_with_args(std::env::args_os()));
}
