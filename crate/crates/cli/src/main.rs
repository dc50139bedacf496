use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(opcov_cli::app::run(std::env::args_os()))
}
