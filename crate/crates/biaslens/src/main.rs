fn main() {
    std::process::exit(biaslens::harness::cli::run(std::env::args()));
}
