use clap::Parser;

fn main() {
    std::process::exit(szego_lab::main_with(szego_lab::Cli::parse()));
}
