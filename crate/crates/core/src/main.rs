fn main() {
    std::process::exit(spectral_rbm::cli::main_with_args(std::env::args_os()));
}
