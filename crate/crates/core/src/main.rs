fn main() {
    std::process::exit(cellfree::cli::parse_and_dispatch(std::env::args_os()));
}
