fn main() {
    std::process::exit(tnt::cli::run(std::env::args_os()));
}
