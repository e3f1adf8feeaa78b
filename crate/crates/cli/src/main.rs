use std::process::ExitCode;

fn main() -> ExitCode {
    lightnet_cli::app::main()
}
