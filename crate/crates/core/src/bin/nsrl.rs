fn main() {
    std::process::exit(nsrl::cli::run(std::env::args_os()));
}
