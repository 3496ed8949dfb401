//! Scenario configuration and run manifests.
//!
//! A scenario is one TOML file: model, prior, clients, schedule, estimators,
//! trials, seed, bound variant, and an optional grid that expands the base
//! scenario into labeled points. A run manifest (JSON) embeds the resolved
//! scenario plus the master seed, so feeding a manifest back in reproduces
//! every output seed-exactly.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use std::path::Path;

use crate::bounds::BoundVariant;
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::privacy::{pure_dp_to_zcdp, ZcdpBudget};
use crate::protocol::ClientSpec;

fn default_schema_version() -> String {
    crate::report::SCHEMA_VERSION.to_string()
}

fn default_count() -> usize {
    1
}

fn default_variant() -> BoundVariant {
    BoundVariant::Exact
}

fn default_schedule() -> ScheduleSpec {
    ScheduleSpec::Roundwise { rounds: 1 }
}

/// Data-generating model of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// x = theta + N(0, sigma^2 I_dim).
    Mean { dim: usize, sigma: f64 },
    /// (z, y) with z ~ N(0, design), y = theta . z + N(0, noise_sd^2).
    Linreg { design: Vec<Vec<f64>>, noise_sd: f64 },
    /// Smoothness-constrained regression bound calculator (no sampler).
    Nonparametric { alpha: f64, dim: usize, radius: f64, sigma: f64 },
    /// Two-point family used by the exact-enumeration verification suite.
    Bernoulli,
}

/// Prior window radius; isotropic over the model dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub radius: f64,
}

/// One client group; `count` replicates it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientEntry {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_count")]
    pub count: usize,
}

/// Speaking order for simulated protocol runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    OnePass,
    Roundwise { rounds: usize },
    Sequential { active: Vec<usize> },
}

/// Cartesian expansion of the base scenario. Empty axes keep the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dim: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clients: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rho: Vec<f64>,
}

/// One experiment description, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_schema_version")]
    pub schema_version: String,
    pub name: String,
    pub seed: u64,
    pub trials: usize,
    #[serde(default = "default_variant")]
    pub bound_variant: BoundVariant,
    pub model: ModelSpec,
    pub prior: PriorSpec,
    pub clients: Vec<ClientEntry>,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimators: Vec<EstimatorKind>,
    /// Fixed parameter for simulated runs; drawn from the prior when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

/// A pure-DP input that was converted to the native budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConversionNote {
    pub client: usize,
    pub epsilon: f64,
    pub rho: f64,
}

/// Client list after replication and epsilon conversion.
#[derive(Debug, Clone)]
pub struct ResolvedClients {
    pub specs: Vec<ClientSpec>,
    pub conversions: Vec<ConversionNote>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("name: must be non-empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials: must be >= 1".into()));
        }
        if self.clients.is_empty() {
            return Err(Error::Config("clients: at least one entry required".into()));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.n == 0 {
                return Err(Error::Config(format!("clients[{i}].n: must be >= 1")));
            }
            if c.count == 0 {
                return Err(Error::Config(format!("clients[{i}].count: must be >= 1")));
            }
            match (c.rho, c.epsilon) {
                (Some(r), None) if r > 0.0 && r.is_finite() => {}
                (None, Some(e)) if e > 0.0 && e.is_finite() => {}
                (Some(_), Some(_)) => {
                    return Err(Error::Config(format!(
                        "clients[{i}]: rho and epsilon are mutually exclusive"
                    )));
                }
                (None, None) => {
                    return Err(Error::Config(format!(
                        "clients[{i}]: one of rho or epsilon is required"
                    )));
                }
                _ => {
                    return Err(Error::Config(format!(
                        "clients[{i}]: budget must be finite and positive"
                    )));
                }
            }
        }
        if !(self.prior.radius > 0.0 && self.prior.radius.is_finite()) {
            return Err(Error::Config("prior.radius: must be finite and positive".into()));
        }
        match &self.model {
            ModelSpec::Mean { dim, sigma } => {
                if *dim == 0 {
                    return Err(Error::Config("model.dim: must be >= 1".into()));
                }
                if !(*sigma > 0.0 && sigma.is_finite()) {
                    return Err(Error::Config(
                        "model.sigma: must be finite and positive".into(),
                    ));
                }
            }
            ModelSpec::Linreg { design, noise_sd } => {
                let d = design.len();
                if d == 0 || design.iter().any(|row| row.len() != d) {
                    return Err(Error::Config(
                        "model.design: must be a non-empty square matrix".into(),
                    ));
                }
                if !(*noise_sd > 0.0 && noise_sd.is_finite()) {
                    return Err(Error::Config(
                        "model.noise_sd: must be finite and positive".into(),
                    ));
                }
            }
            ModelSpec::Nonparametric { alpha, dim, radius, sigma } => {
                if !(*alpha > 0.0) || *dim == 0 || !(*radius > 0.0) || !(*sigma > 0.0) {
                    return Err(Error::Config(
                        "model: alpha, dim, radius, sigma must all be positive".into(),
                    ));
                }
            }
            ModelSpec::Bernoulli => {
                if let Some(t) = &self.theta {
                    if t.len() != 1 || !(t[0] > 0.0 && t[0] < 1.0) {
                        return Err(Error::Config(
                            "theta: two-point family needs a single value in (0, 1)".into(),
                        ));
                    }
                }
            }
        }
        if let ScheduleSpec::Sequential { active } = &self.schedule {
            let m = self.resolved_client_count();
            if let Some(&bad) = active.iter().find(|&&l| l >= m) {
                return Err(Error::Config(format!(
                    "schedule.active: client {bad} out of range for {m} clients"
                )));
            }
        }
        Ok(())
    }

    pub fn resolved_client_count(&self) -> usize {
        self.clients.iter().map(|c| c.count).sum()
    }

    /// Replicates entries and converts epsilon budgets, recording each
    /// conversion so reports can flag it.
    pub fn resolve_clients(&self) -> Result<ResolvedClients> {
        let mut specs = Vec::new();
        let mut conversions = Vec::new();
        for entry in &self.clients {
            for _ in 0..entry.count {
                let id = specs.len();
                let budget = match (entry.rho, entry.epsilon) {
                    (Some(r), None) => ZcdpBudget::new(r)?,
                    (None, Some(e)) => {
                        let b = pure_dp_to_zcdp(e)?;
                        conversions.push(ConversionNote { client: id, epsilon: e, rho: b.rho() });
                        b
                    }
                    _ => unreachable!("validated on load"),
                };
                specs.push(ClientSpec::new(id, entry.n, budget)?);
            }
        }
        Ok(ResolvedClients { specs, conversions })
    }

    /// Canonical content hash: SHA-256 over the serialized scenario.
    pub fn hash(&self) -> Result<String> {
        let canon = self.to_toml()?;
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        Ok(format!("{:x}", h.finalize()))
    }

    /// Grid expansion into labeled scenario points; a scenario without a
    /// grid expands to itself.
    pub fn expand(&self) -> Result<Vec<(String, Scenario)>> {
        let Some(grid) = &self.grid else {
            return Ok(vec![(self.name.clone(), self.clone())]);
        };
        let dims: Vec<Option<usize>> = axis(&grid.dim);
        let ms: Vec<Option<usize>> = axis(&grid.clients);
        let ns: Vec<Option<usize>> = axis(&grid.n);
        let rhos: Vec<Option<f64>> = axis(&grid.rho);
        let mut out = Vec::new();
        for &d in &dims {
            for &m in &ms {
                for &n in &ns {
                    for &rho in &rhos {
                        let mut point = self.clone();
                        point.grid = None;
                        let mut label = self.name.clone();
                        if let Some(d) = d {
                            match &mut point.model {
                                ModelSpec::Mean { dim, .. } => *dim = d,
                                ModelSpec::Nonparametric { dim, .. } => *dim = d,
                                _ => {
                                    return Err(Error::Config(
                                        "grid.dim: only mean and nonparametric models take a \
                                         dimension axis"
                                            .into(),
                                    ));
                                }
                            }
                            label.push_str(&format!("_d{d}"));
                        }
                        if let Some(m) = m {
                            let base = point.clients[0].clone();
                            point.clients = vec![ClientEntry { count: m, ..base }];
                            label.push_str(&format!("_m{m}"));
                        }
                        if let Some(n) = n {
                            for c in &mut point.clients {
                                c.n = n;
                            }
                            label.push_str(&format!("_n{n}"));
                        }
                        if let Some(r) = rho {
                            for c in &mut point.clients {
                                c.rho = Some(r);
                                c.epsilon = None;
                            }
                            label.push_str(&format!("_rho{r}"));
                        }
                        point.name = label.clone();
                        point.validate()?;
                        out.push((label, point));
                    }
                }
            }
        }
        Ok(out)
    }
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

/// Record of one executed command, sufficient to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub tool_version: String,
    pub command: String,
    pub scenario_hash: String,
    pub master_seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
    pub seed_derivation: String,
    pub scenario: Scenario,
}

impl RunManifest {
    pub fn new(command: &str, scenario: Scenario, master_seed: u64) -> Result<Self> {
        let scenario_hash = scenario.hash()?;
        let now = chrono::Utc::now().to_rfc3339();
        Ok(RunManifest {
            schema_version: crate::report::SCHEMA_VERSION.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            scenario_hash,
            master_seed,
            started_at: now.clone(),
            finished_at: now,
            outputs: Vec::new(),
            seed_derivation: crate::rng::DERIVATION_NOTE.to_string(),
            scenario,
        })
    }

    pub fn finish(&mut self, outputs: Vec<String>) {
        self.outputs = outputs;
        self.finished_at = chrono::Utc::now().to_rfc3339();
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }
}

/// A config file is either a scenario (TOML) or a previous run's manifest
/// (JSON); a manifest re-run pins the embedded scenario and master seed.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub scenario: Scenario,
    /// Present when loaded from a manifest.
    pub manifest_seed: Option<u64>,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('{') {
        let manifest: RunManifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        manifest.scenario.validate()?;
        Ok(LoadedConfig {
            manifest_seed: Some(manifest.master_seed),
            scenario: manifest.scenario,
        })
    } else {
        Ok(LoadedConfig { scenario: Scenario::from_toml(&text)?, manifest_seed: None })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEMO: &str = r#"
name = "mean-demo"
seed = 42
trials = 2000
estimators = ["nonprivate_mean", "fed_gaussian_mean"]

[model]
kind = "mean"
dim = 1
sigma = 1.0

[prior]
radius = 1.0

[[clients]]
n = 100
rho = 0.5
"#;

    #[test]
    fn toml_round_trip_is_identity() {
        let s = Scenario::from_toml(DEMO).unwrap();
        let text = s.to_toml().unwrap();
        let s2 = Scenario::from_toml(&text).unwrap();
        assert_eq!(s, s2);
        assert_eq!(s.hash().unwrap(), s2.hash().unwrap());
    }

    #[test]
    fn epsilon_budgets_convert_and_flag() {
        let mut s = Scenario::from_toml(DEMO).unwrap();
        s.clients[0].rho = None;
        s.clients[0].epsilon = Some(1.0);
        let resolved = s.resolve_clients().unwrap();
        assert_eq!(resolved.conversions.len(), 1);
        assert_eq!(resolved.conversions[0].rho, 0.5);
        assert_eq!(resolved.specs[0].rho_budget.rho(), 0.5);
    }

    #[test]
    fn field_level_validation_errors() {
        let mut s = Scenario::from_toml(DEMO).unwrap();
        s.clients[0].epsilon = Some(1.0); // both budgets set
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("clients[0]"), "{msg}");

        let bad = DEMO.replace("trials = 2000", "trials = 0");
        assert!(Scenario::from_toml(&bad).is_err());

        let unknown = format!("{DEMO}\nbogus_key = 1\n");
        let err = Scenario::from_toml(&unknown).unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
    }

    #[test]
    fn grid_expansion_replicates_clients_and_labels() {
        let mut s = Scenario::from_toml(DEMO).unwrap();
        s.grid = Some(GridSpec {
            dim: vec![1, 3],
            clients: vec![1, 5],
            n: vec![50],
            rho: vec![0.1, 1.0],
        });
        let points = s.expand().unwrap();
        assert_eq!(points.len(), 8);
        let (label, p) = &points[7];
        assert_eq!(label, "mean-demo_d3_m5_n50_rho1");
        assert_eq!(p.resolved_client_count(), 5);
        assert_eq!(p.clients[0].n, 50);
        assert_eq!(p.clients[0].rho, Some(1.0));
        assert!(matches!(p.model, ModelSpec::Mean { dim: 3, .. }));
    }

    #[test]
    fn manifest_embeds_scenario_and_reloads() {
        let s = Scenario::from_toml(DEMO).unwrap();
        let mut m = RunManifest::new("risk", s.clone(), 42).unwrap();
        m.finish(vec!["risk.csv".into()]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, m.to_json().unwrap()).unwrap();
        let loaded = load_config(&path).unwrap();
        assert_eq!(loaded.manifest_seed, Some(42));
        assert_eq!(loaded.scenario, s);

        let toml_path = dir.path().join("scenario.toml");
        std::fs::write(&toml_path, s.to_toml().unwrap()).unwrap();
        let loaded2 = load_config(&toml_path).unwrap();
        assert_eq!(loaded2.manifest_seed, None);
        assert_eq!(loaded2.scenario, s);
    }
}
