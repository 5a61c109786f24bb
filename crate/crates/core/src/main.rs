fn main() {
    std::process::exit(knockoff_sim::cli::dispatch(std::env::args_os()));
}
