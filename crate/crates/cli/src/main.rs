fn main() {
    std::process::exit(histoner_cli::run(std::env::args_os()));
}
