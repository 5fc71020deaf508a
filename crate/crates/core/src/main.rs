fn main() {
    std::process::exit(qpalm::cli::main_from(std::env::args_os()));
}
