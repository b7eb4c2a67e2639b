fn main() {
    std::process::exit(d2c_cli::main_with_args(std::env::args_os()));
}
