fn main() {
    std::process::exit(fdtkit_cli::dispatch(std::env::args_os()));
}
