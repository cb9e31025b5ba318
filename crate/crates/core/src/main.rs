fn main() {
    std::process::exit(hilbert_flow::cli::run(std::env::args_os()));
}
