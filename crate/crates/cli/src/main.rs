fn main() {
    std::process::exit(jackstraw_cli::run(std::env::args_os()));
}
