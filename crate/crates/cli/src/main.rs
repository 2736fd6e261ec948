use std::process::ExitCode;

fn main() -> ExitCode {
    trisim_cli::main_with(std::env::args_os())
}
