fn main() {
    std::process::exit(l1rate::cli::cli_main(std::env::args_os()));
}
