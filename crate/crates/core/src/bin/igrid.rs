use std::process::ExitCode;

fn main() -> ExitCode {
    igrid::cli::main()
}
