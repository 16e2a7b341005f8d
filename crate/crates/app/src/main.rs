use clap::Parser;

fn main() {
    std::process::exit(chartforge::cli::run(chartforge::cli::Cli::parse()));
}
