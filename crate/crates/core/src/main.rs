fn main() {
    std::process::exit(densopt::cli::main());
}
