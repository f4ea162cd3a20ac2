use clap::Parser;

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = voir::cli::Cli::parse();
    voir::cli::run(cli, &mut std::io::stdin().lock(), &mut std::io::stdout().lock())
}
