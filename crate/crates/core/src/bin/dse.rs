fn main() {
    std::process::exit(dse_core::cli::dispatch(std::env::args_os()));
}
