fn main() {
    std::process::exit(bevbench::harness::cli::run(std::env::args_os()));
}
