fn main() -> std::process::ExitCode {
    gglab::cli::run(std::env::args_os())
}
