fn main() {
    std::process::exit(duinnet::cli::main_entry(std::env::args_os()));
}
