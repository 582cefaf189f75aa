use amodal_cli::{exit_code, run, Cli};
use clap::Parser;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli, &|k| std::env::var(k).ok()) {
        // Causes already quoted by their parent are not repeated.
        let mut msg = String::new();
        for cause in e.chain().map(|c| c.to_string()) {
            if !msg.contains(&cause) {
                if !msg.is_empty() {
                    msg.push_str(": ");
                }
                msg.push_str(&cause);
            }
        }
        eprintln!("error: {msg}");
        std::process::exit(exit_code(&e));
    }
}
