use std::process::ExitCode;

fn main() -> ExitCode {
    trot::cli::main()
}
