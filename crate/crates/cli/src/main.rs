use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(refmix_cli::run(std::env::args_os()))
}
