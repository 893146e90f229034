use std::io::{self, Write};
use std::process::ExitCode;

use dogtouch::cli::{error_line, run_from};

fn main() -> ExitCode {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match run_from(std::env::args_os(), &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            eprintln!("{}", error_line(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
