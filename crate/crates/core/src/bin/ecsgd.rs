fn main() {
    std::process::exit(ecsgd::cli::main());
}
