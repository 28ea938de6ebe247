fn main() {
    std::process::exit(catefuse::cli::main());
}
