use clap::Parser;
use paneltx_cli::{configure_threads, run, Cli};

fn main() {
    let cli = Cli::parse();
    configure_threads(cli.threads);
    if let Err(e) = run(&cli) {
        eprintln!("{}", e);
        let code = if e.is_input_error() { 2 } else { 3 };
        std::process::exit(code);
    }
}
