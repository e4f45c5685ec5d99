use clap::Parser;

fn main() {
    let cli = lowdose::cli::Cli::parse();
    if let Err(e) = lowdose::cli::execute(cli) {
        eprintln!("lowdose: {e}");
        std::process::exit(e.exit_code());
    }
}
