use std::process::ExitCode;

fn main() -> ExitCode {
    let max_n = match coa::cli::max_n_from_env() {
        Ok(n) => n,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(coa::cli::EXIT_USAGE as u8);
        }
    };
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = coa::cli::execute(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock(), max_n);
    ExitCode::from(code as u8)
}
