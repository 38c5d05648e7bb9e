use clap::Parser;

fn main() {
    let cli = crossdepict::Cli::parse();
    std::process::exit(cli.run());
}
