fn main() {
    std::process::exit(dvta_cli::dispatch(std::env::args_os()));
}
