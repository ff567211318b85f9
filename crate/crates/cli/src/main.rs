use clap::Parser;

fn main() {
    let args = gsurf::Args::parse();
    std::process::exit(gsurf::main_with(&args));
}
