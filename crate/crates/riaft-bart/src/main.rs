use clap::Parser;
use riaft_bart::cli::{run, Cli};

fn main() {
    let cli = Cli::parse(); // clap exits with code 2 on usage errors
    if let Err(err) = run(cli) {
        // machine-readable error record on stderr
        eprintln!(
            "{}",
            serde_json::json!({ "error": err.to_string(), "exit_code": err.exit_code() })
        );
        std::process::exit(err.exit_code());
    }
}
