fn main() {
    std::process::exit(wgflow::harness::cli::main());
}
