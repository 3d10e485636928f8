fn main() {
    std::process::exit(holiv::cli::main_with_args(std::env::args_os()));
}
