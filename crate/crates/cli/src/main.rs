fn main() {
    std::process::exit(charrnn_cli::main_with_args(std::env::args_os()));
}
