fn main() {
    std::process::exit(liquid_perception::cli::main_with_args(std::env::args_os()));
}
