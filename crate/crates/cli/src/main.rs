fn main() {
    std::process::exit(relnet_cli::run(std::env::args_os()));
}
