use clap::Parser;

fn main() {
    let cli = pspp::cli::Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = pspp::cli::run(cli, &mut stdout.lock()) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
