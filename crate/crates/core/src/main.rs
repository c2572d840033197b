fn main() {
    std::process::exit(oac3::cli::main_with_args(std::env::args_os()));
}
