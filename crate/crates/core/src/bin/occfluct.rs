fn main() {
    std::process::exit(occfluct::cli::dispatch(std::env::args_os()));
}
