fn main() {
    std::process::exit(dp_batcher::cli::run(std::env::args_os()));
}
