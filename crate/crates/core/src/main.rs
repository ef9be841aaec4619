use std::process::ExitCode;

fn main() -> ExitCode {
    match shape_qmc::cli::run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
