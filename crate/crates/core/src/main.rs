fn main() {
    std::process::exit(phasematch::cli::main_with_args(std::env::args_os()));
}
