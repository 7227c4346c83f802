//! Versioned experiment configuration. Unknown keys are rejected so typos
//! fail loudly before any compute is spent.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use metastable::geometry::{build_paper_domain, Disk, Domain, Interval};
use metastable::landscape::AnyPotential;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// One of: exit_distribution, sigma_split, fv_qsd, parrep, kmc, spectral.
    pub experiment: String,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<String>,
    /// 0 means all available cores.
    #[serde(default)]
    pub workers: usize,
    pub potential: PotentialConfig,
    pub domain: DomainConfig,
    pub sampling: SamplingConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    /// paper | interval | disk
    pub kind: String,
    #[serde(default)]
    pub lo: Option<f64>,
    #[serde(default)]
    pub hi: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub beta: Vec<f64>,
    pub dt: f64,
    #[serde(default = "default_events")]
    pub events_per_beta: usize,
    #[serde(default = "default_particles")]
    pub n_particles: usize,
    #[serde(default)]
    pub n_replicas: Option<usize>,
    #[serde(default = "default_region")]
    pub target_region: String,
    /// Wall-clock budget per beta in seconds; 0 disables the deadline.
    #[serde(default)]
    pub budget_secs: u64,
    /// Spectral grid step; defaults to a quarter thermal length.
    #[serde(default)]
    pub grid_step: Option<f64>,
    #[serde(default)]
    pub t_corr: Option<f64>,
    #[serde(default)]
    pub t_end: Option<f64>,
}

fn default_events() -> usize {
    10_000
}
fn default_particles() -> usize {
    500
}
fn default_region() -> String {
    "sigma2".into()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()?;
        Ok((cfg, text))
    }

    pub fn from_str_validated(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("parsing config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            bail!(
                "config schema version {} unsupported (expected {SCHEMA_VERSION})",
                self.version
            );
        }
        if self.sampling.beta.is_empty() {
            bail!("sampling.beta must list at least one value");
        }
        if self.sampling.beta.iter().any(|b| *b <= 0.0) {
            bail!("all beta values must be positive");
        }
        if self.sampling.dt <= 0.0 {
            bail!("sampling.dt must be positive");
        }
        if self.sampling.events_per_beta == 0 {
            bail!("sampling.events_per_beta must be positive");
        }
        if self.sampling.n_particles < 2 {
            bail!("sampling.n_particles must be at least 2");
        }
        self.build_potential()?;
        self.build_domain()?;
        Ok(())
    }

    pub fn build_potential(&self) -> Result<AnyPotential> {
        let params: Vec<(String, f64)> = self
            .potential
            .params
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        AnyPotential::by_name(&self.potential.name, &params)
            .map_err(|e| anyhow::anyhow!("potential: {e}"))
    }

    pub fn build_domain(&self) -> Result<Box<dyn Domain>> {
        match self.domain.kind.as_str() {
            "paper" => Ok(Box::new(build_paper_domain())),
            "interval" => {
                let lo = self.domain.lo.unwrap_or(0.0);
                let hi = self.domain.hi.unwrap_or(1.0);
                if hi <= lo {
                    bail!("interval domain needs lo < hi");
                }
                Ok(Box::new(Interval::new(lo, hi)))
            }
            "disk" => Ok(Box::new(Disk::new(self.domain.radius.unwrap_or(1.0)))),
            other => bail!("unknown domain kind `{other}`"),
        }
    }
}

/// FNV-1a hash of the raw config text; embedded in every output so results
/// can be traced back to the exact inputs.
pub fn config_hash(text: &str) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"
version = 1
experiment = "exit_distribution"
seed = 42

[potential]
name = "quadratic_shifted"
[potential.params]
a = 0.1

[domain]
kind = "paper"

[sampling]
beta = [10.0]
dt = 0.005
events_per_beta = 1000
"#;

    #[test]
    fn parses_and_validates() {
        let cfg = ExperimentConfig::from_str_validated(GOOD).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.sampling.n_particles, 500);
        cfg.build_potential().unwrap();
        cfg.build_domain().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = GOOD.replace("seed = 42", "seed = 42\ntypo_key = 1");
        assert!(ExperimentConfig::from_str_validated(&bad).is_err());
    }

    #[test]
    fn zero_samples_are_rejected() {
        let bad = GOOD.replace("events_per_beta = 1000", "events_per_beta = 0");
        assert!(ExperimentConfig::from_str_validated(&bad).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        assert_eq!(config_hash(GOOD), config_hash(GOOD));
        assert_ne!(config_hash(GOOD), config_hash(&GOOD.replace('1', "2")));
    }
}
