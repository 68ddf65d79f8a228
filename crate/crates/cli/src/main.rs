fn main() {
    std::process::exit(mccqr_cli::run(std::env::args_os()));
}
