use std::process::ExitCode;

fn main() -> ExitCode {
    emomsase::cli::main()
}
