fn main() {
    std::process::exit(airan_sim::cli::main_with_args(std::env::args_os()));
}
