fn main() {
    std::process::exit(morphogate::cli::run(std::env::args_os()));
}
