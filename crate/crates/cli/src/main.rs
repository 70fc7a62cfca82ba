use std::process::ExitCode;

fn main() -> ExitCode {
    signbart_cli::run(std::env::args_os())
}
