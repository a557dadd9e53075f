fn main() {
    std::process::exit(taskbench::cli::main_with_args(std::env::args_os()));
}
