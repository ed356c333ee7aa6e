use clap::Parser;

fn main() {
    let cli = mcmarg::cli::Cli::parse();
    if let Err(err) = mcmarg::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(1);
    }
}
