use std::process::ExitCode;

fn main() -> ExitCode {
    fetomosaic::cli::run(std::env::args_os())
}
