use std::process::ExitCode;

fn main() -> ExitCode {
    falkon::cli::main_entry()
}
