fn main() {
    std::process::exit(rotreg::harness::cli::cli_main(std::env::args()));
}
