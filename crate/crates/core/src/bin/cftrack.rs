use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(cftrack::cli::run(std::env::args_os()))
}
