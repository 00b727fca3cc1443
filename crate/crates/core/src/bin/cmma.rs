fn main() {
    std::process::exit(cmma::cli::run(std::env::args_os()));
}
