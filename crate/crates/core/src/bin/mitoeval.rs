fn main() {
    std::process::exit(mitoeval::cli::run(std::env::args_os()));
}
