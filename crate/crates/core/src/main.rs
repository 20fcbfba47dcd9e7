fn main() {
    std::process::exit(gdiff::cli::run(std::env::args_os()));
}
