use clap::Parser;
use sre_gateway::cli::{run, Cli};

#[global_allocator]
static ALLOC: sre_bench::alloc::CountingAlloc = sre_bench::alloc::CountingAlloc;

fn main() {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_target(false).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    if let Err(f) = run(cli, &mut stdout.lock()) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.exit);
    }
}
