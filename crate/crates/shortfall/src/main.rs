use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(shortfall::cli::run() as u8)
}
