fn main() {
    std::process::exit(exdos_cli::run(std::env::args_os()));
}
