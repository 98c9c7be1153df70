use std::process::ExitCode;

fn main() -> ExitCode {
    trafficrules::cli::run(std::env::args_os())
}
