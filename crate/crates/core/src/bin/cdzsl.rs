fn main() {
    std::process::exit(cdzsl::cli::main_with(std::env::args_os()));
}
