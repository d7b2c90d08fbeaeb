use clap::Parser;
use motionlab::cli::Cli;
use motionlab::commands::run;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
