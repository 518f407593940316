fn main() {
    std::process::exit(envkit::cli::run());
}
