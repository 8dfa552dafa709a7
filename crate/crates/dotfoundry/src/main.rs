fn main() {
    std::process::exit(dotfoundry::cli::run());
}
