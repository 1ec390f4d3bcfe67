fn main() {
    std::process::exit(dre::cli::run(std::env::args_os()));
}
