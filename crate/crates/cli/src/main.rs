use clap::Parser;

mod commands;

/// Depth estimation for cross-shaped light fields.
#[derive(Parser)]
#[command(name = "lfdepth", version, about)]
struct Cli {
    #[command(subcommand)]
    command: commands::Command,
}

fn main() {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
