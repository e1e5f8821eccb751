fn main() {
    std::process::exit(edgeloc::cli::run(std::env::args_os()));
}
