use clap::Parser;

fn main() {
    let cli = fedcbmir::cli::Cli::parse();
    if let Err(e) = fedcbmir::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
