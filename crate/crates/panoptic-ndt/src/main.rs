use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(panoptic_ndt::cli::run_cli(std::env::args()) as u8)
}
