fn main() {
    std::process::exit(octseg_cli::run(std::env::args_os()));
}
