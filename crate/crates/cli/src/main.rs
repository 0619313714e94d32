use clap::Parser;

fn main() {
    let cli = atomsim_cli::Cli::parse();
    if let Err(err) = atomsim_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
