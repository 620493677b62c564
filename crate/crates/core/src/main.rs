fn main() {
    std::process::exit(mlme::cli::main());
}
