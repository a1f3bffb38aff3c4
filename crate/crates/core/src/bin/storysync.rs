fn main() {
    std::process::exit(storysync::cli::main());
}
