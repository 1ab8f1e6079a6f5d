use clap::Parser;
use slu_cascade::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(
        env_logger::Env::new()
            .filter("SLU_CASCADE_LOG")
            .default_filter_or("error"),
    )
    .format_timestamp(None)
    .init();

    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error[{}]: {}", e.code(), e);
        std::process::exit(1);
    }
}
