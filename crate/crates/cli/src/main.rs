fn main() {
    std::process::exit(heatflow_cli::commands::main_with(std::env::args_os()));
}
