use clap::Parser;

fn main() {
    let cli = pcbreak_cli::Cli::parse();
    if let Err(e) = pcbreak_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
