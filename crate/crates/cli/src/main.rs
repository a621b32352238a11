use std::process::ExitCode;

fn main() -> ExitCode {
    bald_cli::main_with(std::env::args_os())
}
