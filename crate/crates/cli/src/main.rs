fn main() {
    std::process::exit(powerbench_cli::run(std::env::args_os()));
}
