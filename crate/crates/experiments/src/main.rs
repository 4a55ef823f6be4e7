use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(ntk_experiments::cli::main_with_args(std::env::args_os()))
}
