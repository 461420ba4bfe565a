use clap::Parser;

use cmflow::cli::{run, Cli};
use cmflow::Error;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        match &e {
            Error::Config(errs) => {
                eprintln!("error: invalid configuration");
                for msg in errs {
                    eprintln!("  - {msg}");
                }
            }
            _ => eprintln!("error: {e}"),
        }
        std::process::exit(e.kind().exit_code());
    }
}
