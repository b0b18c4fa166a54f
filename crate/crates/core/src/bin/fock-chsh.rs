fn main() {
    std::process::exit(fock_chsh::cli::main());
}
