fn main() {
    std::process::exit(deforma_core::cli::run(std::env::args_os()));
}
