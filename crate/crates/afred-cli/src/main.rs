//! Binary entry point: parse, run, map the outcome to the exit code.

use clap::Parser;

fn main() {
    let cli = afred_cli::Cli::parse();
    match afred_cli::run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(2);
        }
    }
}
