fn main() {
    std::process::exit(afrnet::cli::run(std::env::args_os()));
}
