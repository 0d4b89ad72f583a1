use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = arena_harness::cli::Cli::parse();
    if let Err(e) = arena_harness::cli::run(cli) {
        eprintln!("{}", arena_harness::cli::error_line(&e));
        std::process::exit(1);
    }
}
