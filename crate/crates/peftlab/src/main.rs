use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(peftlab::cli::run(std::env::args_os()))
}
