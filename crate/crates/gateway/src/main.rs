fn main() -> std::process::ExitCode {
    entrain::cli::run(std::env::args_os())
}
