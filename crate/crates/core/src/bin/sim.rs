//! `sim <scenario> --config <path> [--set key=value ...] --out <path>
//! [--workers n] [--no-timestamp]`
//!
//! Any config key can also be given as `--key value` or `--key=value`.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use cavity_correlations::scenario::config::{parse_override, read_config_file};
use cavity_correlations::scenario::{run, Scenario, ScenarioConfig};
use clap::Parser;

#[derive(Parser, Debug)]
#[command(
    name = "sim",
    about = "Driven dissipative cavity QED scenarios",
    version
)]
struct Cli {
    /// fig1-purity, fig1-correlations, fig2-sweep, fig3-thermal, custom or window-report.
    scenario: Scenario,

    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one key (repeatable); applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,

    /// Worker threads for sweep points (default: all cores).
    #[arg(long)]
    workers: Option<usize>,

    /// Omit the wall-clock line so identical runs give identical bytes.
    #[arg(long)]
    no_timestamp: bool,
}

const OWN_FLAGS: [&str; 5] = ["--config", "--set", "--out", "--workers", "--no-timestamp"];

/// Rewrites `--key value` and `--key=value` for config keys into `--set key=value`.
fn expand_key_flags(args: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut it = args.into_iter().peekable();
    if let Some(program) = it.next() {
        out.push(program);
    }
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            out.push(arg);
            continue;
        };
        let name = body.split('=').next().unwrap_or("");
        let own = OWN_FLAGS.contains(&format!("--{name}").as_str());
        if own || body.is_empty() || name == "help" || name == "version" {
            out.push(arg);
            continue;
        }
        let pair = if body.contains('=') {
            body.to_string()
        } else {
            match it.next() {
                Some(value) => format!("{body}={value}"),
                None => body.to_string(),
            }
        };
        out.push("--set".into());
        out.push(pair);
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    let cli = Cli::parse_from(expand_key_flags(std::env::args().collect()));
    let mut pairs = match &cli.config {
        Some(path) => {
            read_config_file(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => Vec::new(),
    };
    for s in &cli.set {
        pairs.push(parse_override(s)?);
    }
    let cfg = ScenarioConfig::resolve(cli.scenario, &pairs)?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build()?;
    let table = pool.install(|| run(&cfg))?;

    let timestamp = if cli.no_timestamp {
        None
    } else {
        Some(SystemTime::now().duration_since(UNIX_EPOCH)?.as_secs())
    };
    let file = File::create(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    table.write_csv(BufWriter::new(file), timestamp)?;

    if table.failures().is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} point(s) failed:", table.failures().len());
        for f in table.failures() {
            eprintln!("  {f}");
        }
        Ok(ExitCode::from(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn key_flags_become_overrides() {
        let args = v(&[
            "sim",
            "custom",
            "--g",
            "0.1",
            "--epsilon=2",
            "--out",
            "x.csv",
            "--no-timestamp",
        ]);
        assert_eq!(
            expand_key_flags(args),
            v(&[
                "sim",
                "custom",
                "--set",
                "g=0.1",
                "--set",
                "epsilon=2",
                "--out",
                "x.csv",
                "--no-timestamp"
            ])
        );
    }
}
