fn main() {
    std::process::exit(semicoint::cli::cli_main(std::env::args_os()));
}
