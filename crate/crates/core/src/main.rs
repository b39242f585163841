fn main() {
    std::process::exit(asybo_core::cli::parse_and_dispatch(std::env::args_os()));
}
