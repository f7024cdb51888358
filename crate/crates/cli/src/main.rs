use clap::Parser;

fn main() {
    let args = tnpq_cli::Args::parse();
    std::process::exit(tnpq_cli::run(&args));
}
