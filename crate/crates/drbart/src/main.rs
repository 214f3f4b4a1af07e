fn main() {
    std::process::exit(drbart::cli::run());
}
