use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::engine::{Algorithm, EngineConfig, UcbTarget};
use crate::env::Behavior;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "KIPG_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EnvironmentSpec {
    /// Simulated music world where every user follows `behavior`.
    Music {
        behavior: Behavior,
        #[serde(default)]
        label_noise: f64,
        /// Random pulls used to induce candidate contexts.
        #[serde(default = "default_warmup")]
        warmup: usize,
    },
    /// Replay of a labelled fact file. Without `path` the bundled synthetic
    /// dataset and its knowledge are used.
    Replay {
        path: Option<PathBuf>,
        knowledge: Option<PathBuf>,
    },
}

fn default_window() -> [u64; 2] {
    [1, 50]
}

fn default_warmup() -> usize {
    50
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        EnvironmentSpec::Music {
            behavior: Behavior::A,
            label_noise: 0.0,
            warmup: default_warmup(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "quality", rename_all = "lowercase", deny_unknown_fields)]
pub enum KnowledgeQuality {
    #[default]
    Perfect,
    /// Every source tells the truth with probability `p` during the
    /// inclusive step window and always outside it.
    Noisy {
        p: f64,
        #[serde(default = "default_window")]
        window: [u64; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub environment: EnvironmentSpec,
    pub algorithms: Vec<Algorithm>,
    pub steps: u64,
    pub runs: usize,
    pub knowledge: KnowledgeQuality,
    pub eta: f64,
    pub psi0: f64,
    /// Trees kept per arm; 0 keeps every tree.
    pub trees_per_arm: usize,
    pub update_unchosen: bool,
    pub ucb_target: UcbTarget,
    pub ucb_floor: f64,
    /// Run `r` (0-based) is seeded with `seed_base + r`.
    pub seed_base: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let engine = EngineConfig::default();
        ExperimentSpec {
            environment: EnvironmentSpec::default(),
            algorithms: Algorithm::ALL.to_vec(),
            steps: engine.steps,
            runs: 5,
            knowledge: KnowledgeQuality::Perfect,
            eta: engine.eta,
            psi0: engine.psi0,
            trees_per_arm: engine.trees_per_arm.unwrap_or(0),
            update_unchosen: engine.update_unchosen,
            ucb_target: engine.ucb_target,
            ucb_floor: engine.ucb_floor,
            seed_base: 0,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentSpec {
    /// Parses a TOML spec, then applies `key=value` overrides. Keys may be
    /// dotted (`environment.behavior=B`); values are TOML literals, and bare
    /// words are read as strings.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, HarnessError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        fill_tags(&mut table);
        let spec: ExperimentSpec = table
            .try_into()
            .map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.runs < 1 {
            return bad("runs must be >= 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("at least one algorithm is required".into());
        }
        for (i, a) in self.algorithms.iter().enumerate() {
            if self.algorithms[..i].contains(a) {
                return bad(format!("algorithm `{a}` listed twice"));
            }
        }
        if let KnowledgeQuality::Noisy { p, window: [a, b] } = self.knowledge {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("knowledge reliability p must lie in [0, 1], got {p}"));
            }
            if a < 1 || a > b {
                return bad(format!(
                    "knowledge window {a}..{b} must be non-empty and start at 1 or later"
                ));
            }
        }
        if let EnvironmentSpec::Music {
            label_noise, warmup, ..
        } = self.environment
        {
            if !(0.0..=1.0).contains(&label_noise) {
                return bad(format!("label noise must lie in [0, 1], got {label_noise}"));
            }
            if warmup < 1 {
                return bad("warmup must be >= 1".into());
            }
        }
        for &alg in &self.algorithms {
            self.engine_config(alg, 0).validate()?;
        }
        Ok(())
    }

    pub fn seed(&self, run: usize) -> u64 {
        self.seed_base.wrapping_add(run as u64)
    }

    pub fn engine_config(&self, algorithm: Algorithm, run: usize) -> EngineConfig {
        EngineConfig {
            steps: self.steps,
            eta: self.eta,
            algorithm,
            ucb_floor: self.ucb_floor,
            ucb_target: self.ucb_target,
            seed: self.seed(run),
            trees_per_arm: (self.trees_per_arm > 0).then_some(self.trees_per_arm),
            update_unchosen: self.update_unchosen,
            psi0: self.psi0,
            ..EngineConfig::default()
        }
    }
}

/// Lets `[environment]` and `[knowledge]` tables omit their tag: the
/// environment defaults to the music world, and knowledge is noisy when a
/// reliability is given.
fn fill_tags(table: &mut toml::Table) {
    if let Some(env) = table.get_mut("environment").and_then(toml::Value::as_table_mut) {
        env.entry("kind").or_insert_with(|| "music".into());
    }
    if let Some(k) = table.get_mut("knowledge").and_then(toml::Value::as_table_mut) {
        let quality = if k.contains_key("p") { "noisy" } else { "perfect" };
        k.entry("quality").or_insert_with(|| quality.into());
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), HarnessError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override `{item}` is not `key=value`")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
