use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Finite-horizon gains, cost breakdown and analytic risk at a fixed μ.
    Solve,
    /// Stationary gains and the mean-square boundedness verdict.
    Stationary,
    /// Smallest μ meeting the risk budget, with its certificate.
    Bisect,
    /// Closed-loop Monte Carlo ensemble at a fixed μ.
    Simulate,
    /// Built-in Example 1: variance profiles and remote covariance traces.
    Example1,
    /// Built-in Example 2: multiplier bisection.
    Example2,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Stationary => "stationary",
            Command::Bisect => "bisect",
            Command::Simulate => "simulate",
            Command::Example1 => "example1",
            Command::Example2 => "example2",
        }
    }

    fn needs_model(self) -> bool {
        !matches!(self, Command::Example1 | Command::Example2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RiskEvalMode {
    Analytic,
    Mc,
}

/// Flags shared by every command. Anything set here overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON config file with any of the fields below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Model JSON file.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub risk_eval: Option<RiskEvalMode>,
}

/// Config file contents. All fields optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<PathBuf>,
    pub mu: Option<f64>,
    pub epsilon: Option<f64>,
    pub horizon: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub risk_eval: Option<RiskEvalMode>,
}

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_HORIZON: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: Command,
    pub model: Option<PathBuf>,
    pub horizon: Option<usize>,
    pub mu: Option<f64>,
    pub epsilon: Option<f64>,
    pub samples: usize,
    pub seed: u64,
    #[serde(skip)]
    pub out: PathBuf,
    pub risk_eval: RiskEvalMode,
}

impl ExperimentConfig {
    pub fn resolve(command: Command, flags: &Overrides) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let mut cfg: FileConfig =
                    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                // model paths in a config file are relative to the file
                if let (Some(m), Some(dir)) = (&cfg.model, path.parent()) {
                    if m.is_relative() {
                        cfg.model = Some(dir.join(m));
                    }
                }
                cfg
            }
            None => FileConfig::default(),
        };
        let cfg = ExperimentConfig {
            command,
            model: flags.model.clone().or(file.model),
            horizon: flags.horizon.or(file.horizon),
            mu: flags.mu.or(file.mu),
            epsilon: flags.epsilon.or(file.epsilon),
            samples: flags.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            out: flags.out.clone().or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            risk_eval: flags.risk_eval.or(file.risk_eval).unwrap_or(RiskEvalMode::Analytic),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.command.needs_model() {
            match &self.model {
                None => bail!("command {} needs --model", self.command.name()),
                Some(p) if !p.is_file() => bail!("model file {} does not exist", p.display()),
                _ => {}
            }
        }
        if let Some(mu) = self.mu {
            if !(mu.is_finite() && mu >= 0.0) {
                bail!("--mu must be finite and >= 0, got {mu}");
            }
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps >= 0.0) {
                bail!("--epsilon must be finite and >= 0, got {eps}");
            }
        }
        if self.samples < 2 {
            bail!("--samples must be at least 2, got {}", self.samples);
        }
        Ok(())
    }

    pub fn mu(&self) -> f64 {
        self.mu.unwrap_or(0.0)
    }

    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(DEFAULT_HORIZON)
    }

    pub fn model_path(&self) -> &Path {
        self.model.as_deref().expect("checked in resolve")
    }

    /// One-line JSON of the resolved config, embedded in every artifact.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("config serialization is infallible")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seed": 3, "samples": 50, "horizon": 7}"#).unwrap();
        let flags = Overrides { config: Some(path), seed: Some(9), ..Default::default() };
        let cfg = ExperimentConfig::resolve(Command::Example2, &flags).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.samples, 50);
        assert_eq!(cfg.horizon, Some(7));
    }

    #[test]
    fn unknown_config_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, r#"{"seeds": 3}"#).unwrap();
        let flags = Overrides { config: Some(path), ..Default::default() };
        assert!(ExperimentConfig::resolve(Command::Example2, &flags).is_err());
    }

    #[test]
    fn missing_model_is_rejected() {
        assert!(ExperimentConfig::resolve(Command::Solve, &Overrides::default()).is_err());
        let flags = Overrides { model: Some("/nonexistent/model.json".into()), ..Default::default() };
        assert!(ExperimentConfig::resolve(Command::Solve, &flags).is_err());
    }

    #[test]
    fn negative_mu_is_rejected() {
        let flags = Overrides { mu: Some(-1.0), ..Default::default() };
        assert!(ExperimentConfig::resolve(Command::Example1, &flags).is_err());
    }
}
