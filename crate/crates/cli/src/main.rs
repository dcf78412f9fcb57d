fn main() {
    std::process::exit(complex_se_cli::run(std::env::args_os()));
}
