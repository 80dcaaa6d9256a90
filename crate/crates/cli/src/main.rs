mod commands;
mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use serde_json::json;

use config::{Command, ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(name = "risklq", version, about = "Risk-constrained decentralized LQ control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Overrides,
}

const STAGING: &str = ".staging";

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(err) = e.downcast_ref::<risklq::Error>() {
        err.kind()
    } else if e.downcast_ref::<std::io::Error>().is_some() {
        "Io"
    } else {
        "Config"
    }
}

fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("RISKLQ_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().with_context(|| format!("RISKLQ_THREADS={raw:?} is not a count"))?;
    if n == 0 {
        bail!("RISKLQ_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// Run into a staging directory and move the files into place only on success.
fn execute(cfg: &ExperimentConfig) -> anyhow::Result<bool> {
    let staging = cfg.out.join(STAGING);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    let result = commands::run(cfg, &staging).and_then(|outcome| {
        let passed = outcome.checks.iter().all(|c| c.passed);
        let report = json!({
            "command": cfg.command.name(),
            "seed": cfg.seed,
            "config": cfg,
            "summary": outcome.summary,
            "checks": outcome.checks,
            "passed": passed,
        });
        fs::write(staging.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        Ok(passed)
    });
    match result {
        Ok(passed) => {
            let _ = fs::remove_file(cfg.out.join("error.json"));
            let mut names: Vec<PathBuf> =
                fs::read_dir(&staging)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
            names.sort();
            for path in names {
                let name = path.file_name().expect("directory entries have names");
                fs::rename(&path, cfg.out.join(name))?;
            }
            fs::remove_dir(&staging)?;
            Ok(passed)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn report_error(out: &Path, command: Command, cfg: Option<&ExperimentConfig>, e: &anyhow::Error) {
    let record = json!({
        "error": error_kind(e),
        "message": format!("{e:#}"),
        "command": command.name(),
        "config": cfg,
    });
    let text = serde_json::to_string(&record).expect("error record serializes");
    eprintln!("{text}");
    if fs::create_dir_all(out).is_ok() {
        let _ = fs::write(out.join("error.json"), text + "\n");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved =
        init_threads().and_then(|_| ExperimentConfig::resolve(cli.command, &cli.flags)).and_then(|mut cfg| {
            commands::finalize(&mut cfg)?;
            Ok(cfg)
        });
    let cfg = match resolved {
        Ok(cfg) => cfg,
        Err(e) => {
            let out = cli.flags.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            report_error(&out, cli.command, None, &e);
            return ExitCode::from(2);
        }
    };
    match execute(&cfg) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!(
                "{} finished but a check failed; see {}",
                cfg.command.name(),
                cfg.out.join("report.json").display()
            );
            ExitCode::from(1)
        }
        Err(e) => {
            report_error(&cfg.out, cfg.command, Some(&cfg), &e);
            ExitCode::from(2)
        }
    }
}
