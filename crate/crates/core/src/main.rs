fn main() {
    std::process::exit(neurotext::cli::dispatch(std::env::args_os()));
}
