fn main() {
    std::process::exit(gradlab::cli::run(std::env::args_os()));
}
