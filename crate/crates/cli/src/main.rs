use anyhow::Context;
use clap::Parser;
use coagents_cli::args::{resolve, Action, Cli};
use coagents_cli::config::MANIFEST_FILE;
use coagents_cli::{execute, rerun};

fn main() -> anyhow::Result<()> {
    let action = resolve(Cli::parse())?;
    let manifest = match action {
        Action::Run(cfg) => execute(&cfg).with_context(|| format!("{} failed", cfg.name()))?,
        Action::Rerun { manifest, out } => rerun(&manifest, out).with_context(|| format!("rerun of {} failed", manifest.display()))?,
    };
    let out = manifest.config.out();
    if let coagents_cli::RunConfig::Report(_) = manifest.config {
        if let Ok(md) = std::fs::read_to_string(out.join("report.md")) {
            print!("{md}");
        }
    }
    eprintln!("{} done; manifest at {}", manifest.config.name(), out.join(MANIFEST_FILE).display());
    Ok(())
}
