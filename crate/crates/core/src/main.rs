fn main() {
    std::process::exit(navlab::cli::run(std::env::args_os()));
}
