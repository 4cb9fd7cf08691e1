fn main() {
    std::process::exit(facefit_cli::dispatch(std::env::args_os()));
}
