use std::fmt::Write as _;

use super::output::{SummaryRow, SUMMARY_SCHEMA};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub label: String,
    pub final_regret: f64,
    /// Sum of the cumulative-regret curve over all steps.
    pub auc: f64,
    /// Fraction of steps where this curve is strictly below every other.
    pub dominance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareTable {
    pub steps: usize,
    pub rows: Vec<CompareRow>,
}

/// Fraction of positions where `a` is strictly below `b`.
pub fn fraction_below(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x < y).count() as f64 / a.len() as f64
}

/// Summarises mean cumulative-regret curves that share a length. With a
/// single curve the dominance fraction is 0.
pub fn compare(curves: &[(String, Vec<f64>)]) -> Result<CompareTable, HarnessError> {
    let Some((first, rest)) = curves.split_first() else {
        return Err(HarnessError::Config("nothing to compare".into()));
    };
    let steps = first.1.len();
    if steps == 0 {
        return Err(HarnessError::Mismatch(format!("`{}` is empty", first.0)));
    }
    if let Some((l, c)) = rest.iter().find(|(_, c)| c.len() != steps) {
        return Err(HarnessError::Mismatch(format!(
            "`{}` has {steps} steps, `{l}` has {}",
            first.0,
            c.len()
        )));
    }
    let rows = curves
        .iter()
        .enumerate()
        .map(|(i, (label, c))| {
            let wins = (0..steps)
                .filter(|&k| curves.len() > 1 && curves.iter().enumerate().all(|(j, (_, o))| j == i || c[k] < o[k]))
                .count();
            CompareRow {
                label: label.clone(),
                final_regret: c[steps - 1],
                auc: c.iter().sum(),
                dominance: wins as f64 / steps as f64,
            }
        })
        .collect();
    Ok(CompareTable { steps, rows })
}

impl CompareTable {
    pub fn render_text(&self) -> String {
        let w = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(9);
        let mut s = format!(
            "{:<w$}  {:>12}  {:>14}  {:>9}\n",
            "algorithm", "final_regret", "auc", "dominance"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<w$}  {:>12.3}  {:>14.1}  {:>9.3}",
                r.label, r.final_regret, r.auc, r.dominance
            );
        }
        s
    }

    pub fn render_csv(&self) -> String {
        let mut buf = format!("{SUMMARY_SCHEMA}\n").into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in &self.rows {
                w.serialize(SummaryRow {
                    label: r.label.clone(),
                    final_regret: r.final_regret,
                    auc: r.auc,
                    dominance: r.dominance,
                })
                .expect("in-memory csv write");
            }
            w.flush().expect("in-memory csv flush");
        }
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Labels ordered by final regret, lowest first.
    pub fn ranking(&self) -> Vec<&str> {
        let mut r: Vec<&CompareRow> = self.rows.iter().collect();
        r.sort_by(|a, b| a.final_regret.total_cmp(&b.final_regret));
        r.into_iter().map(|r| r.label.as_str()).collect()
    }
}
