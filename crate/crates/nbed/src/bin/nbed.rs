fn main() {
    std::process::exit(nbed::cli::run(std::env::args_os()));
}
