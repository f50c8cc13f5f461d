fn main() {
    std::process::exit(videodpo::cli::main());
}
