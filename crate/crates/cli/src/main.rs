use clap::Parser;

fn main() {
    let cli = catseye_cli::Cli::parse();
    if let Err(e) = catseye_cli::run(cli) {
        eprintln!("catseye: {e}");
        std::process::exit(e.exit_code());
    }
}
