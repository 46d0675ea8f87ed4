//! Per-arm functional policies grown by boosting relational regression stumps.
//!
//! Each arm `i` carries `psi(i) = psi0(i) + eta * sum_k delta_k(i)` where every
//! `delta_k` is a small regression tree whose node tests are clause
//! antecedents evaluated against the step's fact base. The arm is chosen with
//! probability tied to `sigmoid(psi(i))`.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::arm::{ArmId, Context};
use crate::relational::{parse_clause, Clause, ParseError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ForestError {
    #[error("unknown arm {0}")]
    UnknownArm(String),
    #[error("no gradient examples to fit")]
    NoExamples,
    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },
    #[error("invalid ensemble configuration: {0}")]
    Config(String),
    #[error("ensemble text line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("ensemble text line {line}: {source}")]
    Clause {
        line: usize,
        #[source]
        source: ParseError,
    },
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Policy probabilities are kept strictly inside (0, 1) so that `I - pi` and
/// logarithms of gaps stay finite.
pub const PI_EPS: f64 = 1e-12;

pub fn policy_probability(psi: f64) -> f64 {
    sigmoid(psi).clamp(PI_EPS, 1.0 - PI_EPS)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf(f64),
    Split {
        test: Arc<Clause>,
        yes: Box<TreeNode>,
        no: Box<TreeNode>,
    },
}

impl TreeNode {
    fn evaluate_with(&self, test: &mut impl FnMut(&Arc<Clause>) -> bool) -> f64 {
        match self {
            TreeNode::Leaf(v) => *v,
            TreeNode::Split { test: t, yes, no } => {
                if test(t) {
                    yes.evaluate_with(test)
                } else {
                    no.evaluate_with(test)
                }
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf(_) => 0,
            TreeNode::Split { yes, no, .. } => 1 + yes.depth().max(no.depth()),
        }
    }

    fn leaves(&self, out: &mut Vec<f64>) {
        match self {
            TreeNode::Leaf(v) => out.push(*v),
            TreeNode::Split { yes, no, .. } => {
                yes.leaves(out);
                no.leaves(out);
            }
        }
    }
}

/// A relational regression tree; depth 1 (a stump) by default.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeStump {
    root: TreeNode,
}

impl TreeStump {
    pub fn leaf(value: f64) -> Self {
        TreeStump {
            root: TreeNode::Leaf(value),
        }
    }

    /// `yes` is reached when the test antecedent is satisfied.
    pub fn split(test: Clause, yes: f64, no: f64) -> Self {
        TreeStump {
            root: TreeNode::Split {
                test: Arc::new(test),
                yes: Box::new(TreeNode::Leaf(yes)),
                no: Box::new(TreeNode::Leaf(no)),
            },
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    /// Leaf value reached for `arm` under `ctx`.
    pub fn evaluate(&self, ctx: &Context, arm: &ArmId) -> f64 {
        self.root.evaluate_with(&mut |c| ctx.test(c, arm))
    }

    /// Like [`TreeStump::evaluate`] with node tests answered by `test`.
    pub fn evaluate_with(&self, mut test: impl FnMut(&Arc<Clause>) -> bool) -> f64 {
        self.root.evaluate_with(&mut test)
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn leaf_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.root.leaves(&mut out);
        out
    }

    /// Root test, if the tree splits at all.
    pub fn test(&self) -> Option<&Clause> {
        match &self.root {
            TreeNode::Split { test, .. } => Some(test),
            TreeNode::Leaf(_) => None,
        }
    }
}

/// One regression target for the weak learner: the functional gradient
/// for `arm` observed under `context`.
#[derive(Debug, Clone)]
pub struct GradientExample {
    pub context: Arc<Context>,
    pub arm: ArmId,
    pub target: f64,
}

fn mean(ys: impl Iterator<Item = f64> + Clone) -> f64 {
    let (s, n) = ys.fold((0.0, 0usize), |(s, n), y| (s + y, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn sse(targets: &[f64], idx: &[usize]) -> f64 {
    let m = mean(idx.iter().map(|&i| targets[i]));
    idx.iter().map(|&i| (targets[i] - m).powi(2)).sum()
}

/// Fits a regression tree to gradient targets by greedy least squares.
///
/// At each node the candidate test with the smallest summed squared error
/// over the two induced partitions wins (earliest candidate on ties). A node
/// only splits when that strictly improves on not splitting; leaves hold the
/// mean target of the examples that reach them. With `max_depth == 1` the
/// result is the best single-test stump.
pub fn fit_stump(
    examples: &[GradientExample],
    candidates: &[Clause],
    max_depth: usize,
) -> Result<TreeStump, ForestError> {
    let tests: Vec<Arc<Clause>> = candidates.iter().cloned().map(Arc::new).collect();
    let outcomes: Vec<Vec<bool>> = examples
        .iter()
        .map(|e| tests.iter().map(|t| e.context.test(t, &e.arm)).collect())
        .collect();
    let targets: Vec<f64> = examples.iter().map(|e| e.target).collect();
    fit_tree(&targets, &outcomes, &tests, max_depth)
}

/// Tree fit from precomputed test outcomes: `outcomes[e][t]` says whether
/// candidate `t` holds for example `e`. Nodes share the `tests` pointers.
pub fn fit_tree(
    targets: &[f64],
    outcomes: &[Vec<bool>],
    tests: &[Arc<Clause>],
    max_depth: usize,
) -> Result<TreeStump, ForestError> {
    if targets.is_empty() {
        return Err(ForestError::NoExamples);
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(ForestError::NonFinite {
            what: "gradient target",
            value: *t,
        });
    }
    debug_assert_eq!(targets.len(), outcomes.len());
    let all: Vec<usize> = (0..targets.len()).collect();
    Ok(TreeStump {
        root: grow(targets, outcomes, tests, &all, max_depth),
    })
}

fn grow(targets: &[f64], outcomes: &[Vec<bool>], tests: &[Arc<Clause>], idx: &[usize], depth_left: usize) -> TreeNode {
    let leaf = TreeNode::Leaf(mean(idx.iter().map(|&i| targets[i])));
    if depth_left == 0 || idx.len() < 2 {
        return leaf;
    }
    let parent = sse(targets, idx);
    let mut best: Option<(usize, f64, Vec<usize>, Vec<usize>)> = None;
    for (t, _) in tests.iter().enumerate() {
        let (yes, no): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| outcomes[i][t]);
        if yes.is_empty() || no.is_empty() {
            continue;
        }
        let err = sse(targets, &yes) + sse(targets, &no);
        if best.as_ref().is_none_or(|b| err < b.1) {
            best = Some((t, err, yes, no));
        }
    }
    match best {
        Some((t, err, yes, no)) if err < parent - 1e-12 * parent.max(1.0) => TreeNode::Split {
            test: tests[t].clone(),
            yes: Box::new(grow(targets, outcomes, tests, &yes, depth_left - 1)),
            no: Box::new(grow(targets, outcomes, tests, &no, depth_left - 1)),
        },
        _ => leaf,
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ArmPolicy {
    arm: ArmId,
    psi0: f64,
    stumps: VecDeque<TreeStump>,
    updates: u64,
}

/// Boosted policy for every arm. Cloning yields an independent snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyEnsemble {
    arms: Vec<ArmPolicy>,
    eta: f64,
    cap: Option<usize>,
}

pub const ENSEMBLE_FORMAT_HEADER: &str = "#kipg-ensemble v1";

impl PolicyEnsemble {
    pub fn new(arms: &[ArmId], eta: f64) -> Result<Self, ForestError> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(ForestError::Config(format!("learning rate must be > 0, got {eta}")));
        }
        for (i, a) in arms.iter().enumerate() {
            if a.index() != i + 1 {
                return Err(ForestError::Config(format!(
                    "arm indices must be dense from 1; `{a}` has index {}",
                    a.index()
                )));
            }
        }
        Ok(PolicyEnsemble {
            arms: arms
                .iter()
                .map(|a| ArmPolicy {
                    arm: a.clone(),
                    psi0: 0.0,
                    stumps: VecDeque::new(),
                    updates: 0,
                })
                .collect(),
            eta,
            cap: None,
        })
    }

    /// Keeps at most `cap` trees per arm; once full, each new tree evicts the
    /// oldest.
    pub fn with_cap(mut self, cap: Option<usize>) -> Result<Self, ForestError> {
        if cap == Some(0) {
            return Err(ForestError::Config("tree cap must be at least 1".into()));
        }
        self.cap = cap;
        Ok(self)
    }

    pub fn set_psi0(&mut self, arm: &ArmId, psi0: f64) -> Result<(), ForestError> {
        if !psi0.is_finite() {
            return Err(ForestError::NonFinite {
                what: "psi0",
                value: psi0,
            });
        }
        self.slot_mut(arm)?.psi0 = psi0;
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn cap(&self) -> Option<usize> {
        self.cap
    }

    pub fn arms(&self) -> impl Iterator<Item = &ArmId> {
        self.arms.iter().map(|a| &a.arm)
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    fn slot(&self, arm: &ArmId) -> Result<&ArmPolicy, ForestError> {
        self.arms
            .get(arm.index().wrapping_sub(1))
            .filter(|p| p.arm == *arm)
            .ok_or_else(|| ForestError::UnknownArm(arm.to_string()))
    }

    fn slot_mut(&mut self, arm: &ArmId) -> Result<&mut ArmPolicy, ForestError> {
        self.arms
            .get_mut(arm.index().wrapping_sub(1))
            .filter(|p| p.arm == *arm)
            .ok_or_else(|| ForestError::UnknownArm(arm.to_string()))
    }

    pub fn stumps(&self, arm: &ArmId) -> Result<impl Iterator<Item = &TreeStump>, ForestError> {
        Ok(self.slot(arm)?.stumps.iter())
    }

    /// Number of boosting steps in which `arm` received a tree.
    pub fn updates(&self, arm: &ArmId) -> Result<u64, ForestError> {
        Ok(self.slot(arm)?.updates)
    }

    /// `psi0 + eta * sum of reached leaf values`.
    pub fn psi_value(&self, arm: &ArmId, ctx: &Context) -> Result<f64, ForestError> {
        let p = self.slot(arm)?;
        let sum: f64 = p.stumps.iter().map(|s| s.evaluate(ctx, arm)).sum();
        Ok(p.psi0 + self.eta * sum)
    }

    /// `psi_value` with clause tests answered by `test` (e.g. from a
    /// precomputed feature table).
    pub fn psi_with(&self, arm: &ArmId, mut test: impl FnMut(&Arc<Clause>) -> bool) -> Result<f64, ForestError> {
        let p = self.slot(arm)?;
        let sum: f64 = p.stumps.iter().map(|s| s.evaluate_with(&mut test)).sum();
        Ok(p.psi0 + self.eta * sum)
    }

    pub fn pi_value(&self, arm: &ArmId, ctx: &Context) -> Result<f64, ForestError> {
        Ok(policy_probability(self.psi_value(arm, ctx)?))
    }

    pub fn append_stump(&mut self, arm: &ArmId, stump: TreeStump) -> Result<(), ForestError> {
        if let Some(v) = stump.leaf_values().into_iter().find(|v| !v.is_finite()) {
            return Err(ForestError::NonFinite {
                what: "leaf value",
                value: v,
            });
        }
        let cap = self.cap;
        let p = self.slot_mut(arm)?;
        if cap.is_some_and(|c| p.stumps.len() >= c) {
            p.stumps.pop_front();
        }
        p.stumps.push_back(stump);
        p.updates += 1;
        Ok(())
    }

    /// Flat text checkpoint. Only depth-1 trees are representable; a
    /// single-leaf tree is written with test `*` and equal leaves.
    pub fn to_text(&self) -> Result<String, ForestError> {
        let mut out = String::new();
        writeln!(out, "{ENSEMBLE_FORMAT_HEADER}").unwrap();
        for p in &self.arms {
            writeln!(out, "#arm\t{}\t{}\t{}", p.arm.index(), p.arm.label(), p.psi0).unwrap();
        }
        for p in &self.arms {
            for s in &p.stumps {
                let (clause, yes, no) = match s.root() {
                    TreeNode::Leaf(v) => ("*".to_string(), *v, *v),
                    TreeNode::Split { test, yes, no } => match (&**yes, &**no) {
                        (TreeNode::Leaf(y), TreeNode::Leaf(n)) => (test.to_string(), *y, *n),
                        _ => return Err(ForestError::Config("only depth-1 trees can be written as text".into())),
                    },
                };
                writeln!(out, "{}\t{}\t{}\t{}\t{}", p.arm.index(), self.eta, clause, yes, no).unwrap();
            }
        }
        Ok(out)
    }

    pub fn from_text(text: &str) -> Result<Self, ForestError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == ENSEMBLE_FORMAT_HEADER => {}
            _ => {
                return Err(ForestError::Format {
                    line: 1,
                    msg: format!("expected header `{ENSEMBLE_FORMAT_HEADER}`"),
                })
            }
        }
        let fmt_err = |line: usize, msg: String| ForestError::Format { line: line + 1, msg };
        let num = |line: usize, s: &str| -> Result<f64, ForestError> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| fmt_err(line, format!("bad number `{s}`: {e}")))
        };
        let mut arms = Vec::new();
        let mut psi0s = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols[0] == "#arm" {
                if cols.len() != 4 {
                    return Err(fmt_err(i, "arm line needs 4 columns".into()));
                }
                let idx: usize = cols[1]
                    .parse()
                    .map_err(|_| fmt_err(i, format!("bad arm index `{}`", cols[1])))?;
                if idx != arms.len() + 1 {
                    return Err(fmt_err(i, "arm indices must be dense and ordered".into()));
                }
                arms.push(ArmId::new(idx, cols[2]));
                psi0s.push(num(i, cols[3])?);
                continue;
            }
            if cols.len() != 5 {
                return Err(fmt_err(
                    i,
                    format!("expected 5 tab-separated columns, got {}", cols.len()),
                ));
            }
            rows.push((
                i,
                cols[0].to_string(),
                num(i, cols[1])?,
                cols[2].to_string(),
                num(i, cols[3])?,
                num(i, cols[4])?,
            ));
        }
        let eta = rows.first().map(|r| r.2).unwrap_or(1.0);
        let mut ens = PolicyEnsemble::new(&arms, eta)?;
        for (arm, psi0) in arms.iter().zip(psi0s) {
            ens.set_psi0(arm, psi0)?;
        }
        for (i, arm_col, row_eta, clause, yes, no) in rows {
            if row_eta != eta {
                return Err(fmt_err(i, format!("learning rate {row_eta} differs from {eta}")));
            }
            let idx: usize = arm_col
                .parse()
                .map_err(|_| fmt_err(i, format!("bad arm index `{arm_col}`")))?;
            let arm = arms
                .get(idx.wrapping_sub(1))
                .ok_or_else(|| fmt_err(i, format!("unknown arm {idx}")))?
                .clone();
            let stump = if clause.trim() == "*" {
                TreeStump::leaf(yes)
            } else {
                let c = parse_clause(&clause).map_err(|source| ForestError::Clause { line: i + 1, source })?;
                TreeStump::split(c, yes, no)
            };
            ens.append_stump(&arm, stump)?;
        }
        Ok(ens)
    }
}
