fn main() {
    std::process::exit(hsbnn_cli::main_with_args(std::env::args_os()));
}
