fn main() {
    std::process::exit(kvn_spectral::cli::run());
}
