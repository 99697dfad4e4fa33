fn main() {
    std::process::exit(cosserat::cli::run(std::env::args_os()));
}
