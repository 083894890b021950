fn main() -> std::process::ExitCode {
    inferscan::cli::run(std::env::args_os())
}
