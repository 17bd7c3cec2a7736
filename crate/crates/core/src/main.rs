use clap::Parser;
use dub_engine::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
