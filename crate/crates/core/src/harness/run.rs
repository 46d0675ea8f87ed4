use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::compare::{compare, CompareTable};
use super::output::{write_mean_csv, write_run_csv, MeanRow};
use super::spec::{EnvironmentSpec, ExperimentSpec, KnowledgeQuality};
use super::HarnessError;
use crate::engine::{run, Algorithm, RunTrace};
use crate::env::{
    induce_contexts, load_replay, music_knowledge, parse_replay, replay_candidates, EnvError, MusicWorld,
    ReplayDataset, ReplayEnv, WorldConfig, BUNDLED_REPLAY, BUNDLED_REPLAY_KNOWLEDGE,
};
use crate::knowledge::{make_noisy, parse_knowledge, KnowledgeSource};
use crate::relational::{Clause, Schema};

/// Runs of one algorithm and their mean cumulative-regret curve.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmTrace {
    pub algorithm: Algorithm,
    pub runs: Vec<RunTrace>,
    pub mean: Vec<f64>,
}

impl AlgorithmTrace {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub steps: u64,
    pub algorithms: Vec<AlgorithmTrace>,
    pub warnings: Vec<String>,
}

impl RegretTrace {
    pub fn get(&self, algorithm: Algorithm) -> Option<&AlgorithmTrace> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }

    pub fn curves(&self) -> Vec<(String, Vec<f64>)> {
        self.algorithms
            .iter()
            .map(|a| (a.algorithm.to_string(), a.mean.clone()))
            .collect()
    }

    pub fn mean_rows(&self) -> Vec<MeanRow> {
        self.algorithms
            .iter()
            .flat_map(|a| {
                a.mean.iter().enumerate().map(move |(i, &m)| MeanRow {
                    k: i as u64 + 1,
                    algorithm: a.algorithm,
                    runs: a.runs.len(),
                    mean_cum_regret: m,
                })
            })
            .collect()
    }

    /// One line with the final mean cumulative regret of every algorithm.
    pub fn summary_line(&self) -> String {
        let runs = self.algorithms.first().map_or(0, |a| a.runs.len());
        let mut s = format!("final cumulative regret (K={}, mean of {runs} runs):", self.steps);
        for a in &self.algorithms {
            let _ = write!(s, " {}={:.3}", a.algorithm, a.final_mean());
        }
        s
    }
}

/// Arithmetic mean of equally long curves at each position.
pub fn mean_curve(runs: &[&[f64]]) -> Vec<f64> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    let n = runs.len() as f64;
    (0..first.len())
        .map(|k| runs.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect()
}

enum Setting {
    Music(MusicWorld),
    Replay(Arc<ReplayDataset>),
}

struct Prepared {
    setting: Setting,
    candidates: Vec<Clause>,
    sources: Vec<KnowledgeSource>,
    warnings: Vec<String>,
}

fn read_knowledge(path: &Path) -> Result<KnowledgeSource, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|source| {
        HarnessError::Env(EnvError::Io {
            path: path.display().to_string(),
            source,
        })
    })?;
    parse_knowledge(&text, &mut Schema::new()).map_err(|source| HarnessError::Knowledge {
        path: path.display().to_string(),
        source,
    })
}

fn prepare(spec: &ExperimentSpec) -> Result<Prepared, HarnessError> {
    let mut warnings = Vec::new();
    let (setting, candidates, mut sources) = match &spec.environment {
        EnvironmentSpec::Music {
            behavior,
            label_noise,
            warmup,
        } => {
            let world = MusicWorld::new(WorldConfig {
                label_noise: *label_noise,
                ..WorldConfig::uniform(*behavior)
            })?;
            // contexts come from a world where every behavior is present;
            // in a single-behavior world the behavior's own clause does not
            // separate users and would be filtered out
            let mixed = MusicWorld::new(WorldConfig::mixed())?;
            let induced = induce_contexts(&mixed, *warmup, &mut ChaCha8Rng::seed_from_u64(spec.seed_base));
            warnings.extend(induced.warnings);
            (Setting::Music(world), induced.clauses, vec![music_knowledge(*behavior)])
        }
        EnvironmentSpec::Replay { path, knowledge } => {
            let data = match path {
                Some(p) => load_replay(p)?,
                None => parse_replay(BUNDLED_REPLAY)?,
            };
            let sources =
                match (path, knowledge) {
                    (_, Some(k)) => vec![read_knowledge(k)?],
                    (None, None) => vec![parse_knowledge(BUNDLED_REPLAY_KNOWLEDGE, &mut Schema::new())
                        .expect("bundled knowledge parses")],
                    (Some(_), None) => {
                        warnings.push("no knowledge file given; kipg and kipgucb behave like the baseline".into());
                        Vec::new()
                    }
                };
            let candidates = replay_candidates(&data);
            (Setting::Replay(Arc::new(data)), candidates, sources)
        }
    };
    if let KnowledgeQuality::Noisy { p, window: [a, b] } = spec.knowledge {
        sources = sources
            .iter()
            .map(|s| make_noisy(s, p, a..=b))
            .collect::<Result<_, _>>()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    if candidates.is_empty() {
        warnings.push("no candidate contexts; trees can only shift every arm equally".into());
    }
    Ok(Prepared {
        setting,
        candidates,
        sources,
        warnings,
    })
}

/// Runs every algorithm `spec.runs` times; run `r` uses seed
/// `seed_base + r` for every algorithm. Runs execute in parallel and are
/// collected in (algorithm, run) order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RegretTrace, HarnessError> {
    spec.validate()?;
    let prep = prepare(spec)?;
    let jobs: Vec<(Algorithm, usize)> = spec
        .algorithms
        .iter()
        .flat_map(|&a| (0..spec.runs).map(move |r| (a, r)))
        .collect();
    let traces: Vec<RunTrace> = jobs
        .into_par_iter()
        .map(|(alg, r)| {
            let cfg = spec.engine_config(alg, r);
            let trace = match &prep.setting {
                Setting::Music(world) => run(&mut world.clone(), &cfg, &prep.sources, &prep.candidates),
                Setting::Replay(data) => {
                    let mut env = ReplayEnv::new(data.clone(), cfg.seed);
                    run(&mut env, &cfg, &prep.sources, &prep.candidates)
                }
            };
            trace.map_err(HarnessError::from)
        })
        .collect::<Result<_, _>>()?;
    let mut traces = traces.into_iter();
    let algorithms = spec
        .algorithms
        .iter()
        .map(|&algorithm| {
            let runs: Vec<RunTrace> = traces.by_ref().take(spec.runs).collect();
            let curves: Vec<Vec<f64>> = runs.iter().map(RunTrace::cumulative).collect();
            let refs: Vec<&[f64]> = curves.iter().map(Vec::as_slice).collect();
            AlgorithmTrace {
                algorithm,
                mean: mean_curve(&refs),
                runs,
            }
        })
        .collect();
    Ok(RegretTrace {
        steps: spec.steps,
        algorithms,
        warnings: prep.warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub files: Vec<PathBuf>,
    pub table: CompareTable,
}

/// Writes `spec.toml`, one CSV per run (`<algorithm>_seed<seed>.csv`),
/// `mean.csv`, `summary.csv` and `summary.txt` into `dir`.
pub fn write_outputs(
    spec: &ExperimentSpec,
    trace: &RegretTrace,
    dir: &Path,
) -> Result<ExperimentOutcome, HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut files = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<(), HarnessError> {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))?;
        files.push(p);
        Ok(())
    };
    put("spec.toml", &spec.to_toml())?;
    let table = compare(&trace.curves())?;
    put("summary.csv", &table.render_csv())?;
    put(
        "summary.txt",
        &format!("{}\n\n{}", trace.summary_line(), table.render_text()),
    )?;
    for a in &trace.algorithms {
        for r in &a.runs {
            let p = dir.join(format!("{}_seed{}.csv", a.algorithm, r.seed));
            write_run_csv(&p, r)?;
            files.push(p);
        }
    }
    let p = dir.join("mean.csv");
    write_mean_csv(&p, &trace.mean_rows())?;
    files.push(p);
    Ok(ExperimentOutcome { files, table })
}
