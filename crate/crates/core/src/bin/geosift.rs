fn main() {
    std::process::exit(geosift::cli::main_with_args(std::env::args_os()));
}
