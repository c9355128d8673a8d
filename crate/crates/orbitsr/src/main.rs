fn main() {
    std::process::exit(orbitsr::cli::run());
}
