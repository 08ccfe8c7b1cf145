fn main() {
    std::process::exit(dfprune_cli::run(std::env::args_os()));
}
