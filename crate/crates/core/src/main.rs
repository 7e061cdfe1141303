fn main() {
    std::process::exit(engagerank::cli::run());
}
