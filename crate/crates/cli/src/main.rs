fn main() {
    std::process::exit(hankel_arma_cli::run_from(std::env::args_os()));
}
