fn main() {
    std::process::exit(trope_core::cli::run(std::env::args_os()));
}
