fn main() {
    std::process::exit(wavelatent::cli::run(std::env::args_os()));
}
