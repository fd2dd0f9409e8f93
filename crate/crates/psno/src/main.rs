use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(psno::cli::run(std::env::args_os()))
}
