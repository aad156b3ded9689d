fn main() {
    std::process::exit(irfusion_cli::main_with_args(std::env::args_os()));
}
