fn main() {
    std::process::exit(orientgen::cli::run(std::env::args_os()));
}
