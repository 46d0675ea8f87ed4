use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::HarnessError;
use crate::engine::{Algorithm, RunTrace};
use crate::env::parse_replay;
use crate::knowledge::parse_knowledge;
use crate::relational::{parse_clause_file, parse_fact_file, Schema};

/// First line of every per-run CSV.
pub const RUN_SCHEMA: &str = "#schema=kipg-run/1";
/// First line of every mean-curve CSV.
pub const MEAN_SCHEMA: &str = "#schema=kipg-mean/1";
/// First line of every summary CSV.
pub const SUMMARY_SCHEMA: &str = "#schema=kipg-summary/1";

const TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub k: u64,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub chosen_arm: String,
    pub pi: f64,
    pub reward: u8,
    pub gt_reward: u8,
    pub step_regret: f64,
    pub cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub k: u64,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub mean_cum_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct SummaryRow {
    pub label: String,
    pub final_regret: f64,
    pub auc: f64,
    pub dominance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    RunCsv,
    MeanCsv,
    SummaryCsv,
    Facts,
    Replay,
    Knowledge,
    Clauses,
}

impl fmt::Display for FileKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FileKind::RunCsv => "per-run regret CSV",
            FileKind::MeanCsv => "mean regret CSV",
            FileKind::SummaryCsv => "summary CSV",
            FileKind::Facts => "fact file",
            FileKind::Replay => "replay file",
            FileKind::Knowledge => "knowledge file",
            FileKind::Clauses => "clause file",
        })
    }
}

pub(crate) fn rows_of(trace: &RunTrace) -> Vec<RunRow> {
    trace
        .records
        .iter()
        .map(|r| RunRow {
            k: r.k,
            algorithm: trace.algorithm,
            seed: trace.seed,
            chosen_arm: r.chosen.label().to_string(),
            pi: r.pi_chosen,
            reward: r.reward,
            gt_reward: r.gt_reward,
            step_regret: r.step_regret,
            cum_regret: r.cumulative_regret,
        })
        .collect()
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<(), HarnessError> {
    let csv_err = |source| HarnessError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut buf = format!("{schema}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        for r in rows {
            w.serialize(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| HarnessError::io(path, e))
}

pub fn write_run_csv(path: &Path, trace: &RunTrace) -> Result<(), HarnessError> {
    write_csv(path, RUN_SCHEMA, &rows_of(trace))
}

pub fn write_mean_csv(path: &Path, rows: &[MeanRow]) -> Result<(), HarnessError> {
    write_csv(path, MEAN_SCHEMA, rows)
}

fn schema_err(path: &Path, line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Schema {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

/// Rows of a CSV whose first line must be `schema`, each with its line number.
fn read_csv<T: DeserializeOwned>(path: &Path, text: &str, schema: &str) -> Result<Vec<(usize, T)>, HarnessError> {
    let first = text.lines().next().unwrap_or("").trim();
    if first != schema {
        return Err(schema_err(path, 1, format!("expected `{schema}`, found `{first}`")));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        let row: T = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            schema_err(path, line, e.to_string())
        })?;
        // the schema line is skipped as a comment, so csv counts from it
        out.push((out.len() + 3, row));
    }
    if out.is_empty() {
        return Err(schema_err(path, 2, "no data rows"));
    }
    Ok(out)
}

fn check_run_rows(path: &Path, rows: &[(usize, RunRow)]) -> Result<(), HarnessError> {
    let mut state: BTreeMap<(Algorithm, u64), (u64, f64)> = BTreeMap::new();
    for (line, r) in rows {
        let bad = |m: String| Err(schema_err(path, *line, m));
        if !(r.pi > 0.0 && r.pi <= 1.0) {
            return bad(format!("pi {} outside (0, 1]", r.pi));
        }
        if r.reward > 1 || r.gt_reward > 1 {
            return bad("rewards must be 0 or 1".into());
        }
        let expect = f64::from(r.gt_reward) - r.pi * f64::from(r.reward);
        if (r.step_regret - expect).abs() > TOL {
            return bad(format!(
                "step_regret {} != gt_reward - pi*reward = {expect}",
                r.step_regret
            ));
        }
        let (k, cum) = state.entry((r.algorithm, r.seed)).or_insert((0, 0.0));
        if r.k != *k + 1 {
            return bad(format!("expected k = {}, found {}", *k + 1, r.k));
        }
        *k = r.k;
        *cum += r.step_regret;
        if (r.cum_regret - *cum).abs() > TOL * cum.abs().max(1.0) {
            return bad(format!("cum_regret {} != running sum {}", r.cum_regret, cum));
        }
    }
    Ok(())
}

fn check_mean_rows(path: &Path, rows: &[(usize, MeanRow)]) -> Result<(), HarnessError> {
    let mut last: BTreeMap<Algorithm, u64> = BTreeMap::new();
    for (line, r) in rows {
        let k = last.entry(r.algorithm).or_insert(0);
        if r.k != *k + 1 {
            return Err(schema_err(
                path,
                *line,
                format!("expected k = {}, found {}", *k + 1, r.k),
            ));
        }
        *k = r.k;
        if r.runs < 1 || !r.mean_cum_regret.is_finite() {
            return Err(schema_err(path, *line, "runs must be >= 1 and the mean finite"));
        }
    }
    Ok(())
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RunRow>, HarnessError> {
    let rows = read_csv(path, &read_text(path)?, RUN_SCHEMA)?;
    check_run_rows(path, &rows)?;
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

pub fn read_mean_csv(path: &Path) -> Result<Vec<MeanRow>, HarnessError> {
    let rows = read_csv(path, &read_text(path)?, MEAN_SCHEMA)?;
    check_mean_rows(path, &rows)?;
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Checks a CSV against its declared schema, or parses a fact, replay,
/// knowledge (`.kb`) or clause file. Returns the kind and the number of
/// records.
pub fn validate_file(path: &Path) -> Result<(FileKind, usize), HarnessError> {
    let text = read_text(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let parse_err = |source| HarnessError::Parse {
        path: path.display().to_string(),
        source,
    };
    match ext {
        "csv" => {
            let first = text.lines().next().unwrap_or("").trim();
            match first {
                RUN_SCHEMA => {
                    let rows = read_csv::<RunRow>(path, &text, RUN_SCHEMA)?;
                    check_run_rows(path, &rows)?;
                    Ok((FileKind::RunCsv, rows.len()))
                }
                MEAN_SCHEMA => {
                    let rows = read_csv::<MeanRow>(path, &text, MEAN_SCHEMA)?;
                    check_mean_rows(path, &rows)?;
                    Ok((FileKind::MeanCsv, rows.len()))
                }
                SUMMARY_SCHEMA => {
                    let rows = read_csv::<SummaryRow>(path, &text, SUMMARY_SCHEMA)?;
                    Ok((FileKind::SummaryCsv, rows.len()))
                }
                other => Err(schema_err(path, 1, format!("unknown schema line `{other}`"))),
            }
        }
        "facts" if text.lines().any(|l| l.trim_start().starts_with("#instance")) => {
            let d = parse_replay(&text).map_err(HarnessError::Env)?;
            Ok((FileKind::Replay, d.len()))
        }
        "facts" => {
            let fb = parse_fact_file(&text, &mut Schema::new(), 0).map_err(parse_err)?;
            Ok((FileKind::Facts, fb.len()))
        }
        "kb" => {
            let src = parse_knowledge(&text, &mut Schema::new()).map_err(|source| HarnessError::Knowledge {
                path: path.display().to_string(),
                source,
            })?;
            Ok((FileKind::Knowledge, src.rules.len()))
        }
        "clauses" => {
            let cs = parse_clause_file(&text, &mut Schema::new()).map_err(parse_err)?;
            Ok((FileKind::Clauses, cs.len()))
        }
        _ => Err(HarnessError::Config(format!(
            "{}: unrecognised file type (expected .csv, .facts, .kb or .clauses)",
            path.display()
        ))),
    }
}

/// Mean cumulative-regret curves per label from per-run and mean CSVs.
/// Per-run files of the same algorithm are averaged. A label seen in more
/// than one mean file is qualified with its file name.
pub fn read_curves(paths: &[impl AsRef<Path>]) -> Result<Vec<(String, Vec<f64>)>, HarnessError> {
    let mut runs: BTreeMap<Algorithm, Vec<Vec<f64>>> = BTreeMap::new();
    let mut curves: Vec<(String, Vec<f64>)> = Vec::new();
    for p in paths {
        let path = p.as_ref();
        let text = read_text(path)?;
        match text.lines().next().unwrap_or("").trim() {
            RUN_SCHEMA => {
                let rows = read_csv::<RunRow>(path, &text, RUN_SCHEMA)?;
                check_run_rows(path, &rows)?;
                let mut by_seed: BTreeMap<(Algorithm, u64), Vec<f64>> = BTreeMap::new();
                for (_, r) in rows {
                    by_seed.entry((r.algorithm, r.seed)).or_default().push(r.cum_regret);
                }
                for ((alg, _), c) in by_seed {
                    runs.entry(alg).or_default().push(c);
                }
            }
            MEAN_SCHEMA => {
                let rows = read_csv::<MeanRow>(path, &text, MEAN_SCHEMA)?;
                check_mean_rows(path, &rows)?;
                let mut by_alg: BTreeMap<Algorithm, Vec<f64>> = BTreeMap::new();
                for (_, r) in rows {
                    by_alg.entry(r.algorithm).or_default().push(r.mean_cum_regret);
                }
                for (alg, c) in by_alg {
                    let name = alg.to_string();
                    let label = if curves.iter().any(|(l, _)| *l == name) {
                        format!("{}:{name}", path.display())
                    } else {
                        name
                    };
                    curves.push((label, c));
                }
            }
            other => return Err(schema_err(path, 1, format!("not a regret CSV: `{other}`"))),
        }
    }
    for (alg, traces) in runs {
        let k = traces[0].len();
        if let Some(t) = traces.iter().find(|t| t.len() != k) {
            return Err(HarnessError::Mismatch(format!(
                "{alg}: runs of {k} and {} steps",
                t.len()
            )));
        }
        let refs: Vec<&[f64]> = traces.iter().map(Vec::as_slice).collect();
        curves.push((alg.to_string(), super::mean_curve(&refs)));
    }
    Ok(curves)
}
