fn main() {
    std::process::exit(callcheck::cli::run());
}
