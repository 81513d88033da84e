use clap::Parser;

fn main() {
    let cli = renscen::cli::Cli::parse();
    if let Err(e) = renscen::cli::run(cli) {
        eprintln!("renscen: {e}");
        std::process::exit(e.exit_code());
    }
}
