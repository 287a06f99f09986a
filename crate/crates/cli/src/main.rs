fn main() {
    std::process::exit(irgen_cli::run(std::env::args_os()));
}
