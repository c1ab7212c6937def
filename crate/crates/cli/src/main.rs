use clap::Parser;
use hdqkd_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(cli, &mut stdout) {
        eprintln!("hdqkd: {e}");
        std::process::exit(e.exit_code());
    }
}
