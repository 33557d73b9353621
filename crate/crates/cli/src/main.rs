use clap::Parser;

fn main() {
    // clap handles usage errors itself with exit code 2
    let cli = prearrival_cli::Cli::parse();
    if let Err(err) = prearrival_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
