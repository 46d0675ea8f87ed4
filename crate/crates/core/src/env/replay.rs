use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EnvError;
use crate::arm::{arms_from_labels, ArmId, Context};
use crate::engine::{Environment, Feedback};
use crate::relational::facts::parse_fact_line;
use crate::relational::parse::strip_comment;
use crate::relational::{Atom, Clause, FactBase, Literal, Schema, Symbol, Term};

/// Synthetic 20-instance dataset shipped with the crate.
pub const BUNDLED_REPLAY: &str = include_str!("../../data/replay/synthetic_imdb.facts");
/// Expert knowledge for [`BUNDLED_REPLAY`].
pub const BUNDLED_REPLAY_KNOWLEDGE: &str = include_str!("../../data/replay/synthetic_imdb.kb");

const HEADER: &str = "#instance";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayInstance {
    pub facts: FactBase,
    pub label: Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayDataset {
    pub instances: Vec<ReplayInstance>,
    arms: Vec<ArmId>,
    schema: Schema,
}

impl ReplayDataset {
    /// Arms are the distinct labels in order of first appearance.
    pub fn arms(&self) -> &[ArmId] {
        &self.arms
    }

    pub fn arm_for(&self, label: &str) -> Option<&ArmId> {
        self.arms.iter().find(|a| a.label() == label)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Parses blank-line separated `#instance <label>` blocks of facts.
pub fn parse_replay(text: &str) -> Result<ReplayDataset, EnvError> {
    let mut schema = Schema::new();
    let mut instances: Vec<ReplayInstance> = Vec::new();
    let mut open = false;
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        if let Some(rest) = raw.trim().strip_prefix(HEADER) {
            let label = rest.trim();
            if label.is_empty() || label.split_whitespace().count() != 1 {
                return Err(EnvError::Format {
                    line: n,
                    msg: "expected `#instance <label>`".into(),
                });
            }
            instances.push(ReplayInstance {
                facts: FactBase::new(1),
                label: label.into(),
            });
            open = true;
            continue;
        }
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            if raw.trim().is_empty() {
                open = false;
            }
            continue;
        }
        let inst = match instances.last_mut() {
            Some(inst) if open => inst,
            _ => {
                return Err(EnvError::Format {
                    line: n,
                    msg: "fact outside an `#instance` block".into(),
                })
            }
        };
        let atom = parse_fact_line(line).map_err(|e| e.at_line(n))?;
        schema.register(&atom).map_err(|e| e.at_line(n))?;
        inst.facts.insert(atom).map_err(|e| e.at_line(n))?;
    }
    if instances.is_empty() {
        return Err(EnvError::Empty);
    }
    let mut labels: Vec<&str> = Vec::new();
    for inst in &instances {
        if !labels.contains(&inst.label.as_ref()) {
            labels.push(&inst.label);
        }
    }
    if let Some(l) = labels.iter().find(|l| schema.arity(l).is_some()) {
        return Err(EnvError::Config(format!("label `{l}` clashes with a fact predicate")));
    }
    let arms = arms_from_labels(&labels);
    Ok(ReplayDataset {
        instances,
        arms,
        schema,
    })
}

pub fn load_replay(path: impl AsRef<Path>) -> Result<ReplayDataset, EnvError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| EnvError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_replay(&text)
}

fn vars(prefix: &str, n: usize) -> Vec<Term> {
    (0..n).map(|i| Term::variable(&format!("{prefix}{i}"))).collect()
}

/// Candidate tests for a replay dataset: for every label, each predicate on
/// its own and every pair of predicates joined on one argument position.
/// The consequent is the nullary label atom, so a clause only fires for the
/// arm it names.
pub fn replay_candidates(data: &ReplayDataset) -> Vec<Clause> {
    let mut preds: BTreeMap<Symbol, usize> = BTreeMap::new();
    for inst in &data.instances {
        for f in inst.facts.iter() {
            preds.insert(f.predicate.clone(), f.arity());
        }
    }
    let preds: Vec<(Symbol, usize)> = preds.into_iter().collect();
    let mut bodies: Vec<Vec<Literal>> = Vec::new();
    for (p, n) in &preds {
        bodies.push(vec![Literal::pos(Atom::new(p, vars("X", *n)))]);
    }
    for (a, (p, n)) in preds.iter().enumerate() {
        for (q, m) in &preds[a..] {
            for i in 0..*n {
                for j in 0..*m {
                    let left = vars("X", *n);
                    let mut right = vars("Y", *m);
                    right[j] = left[i].clone();
                    bodies.push(vec![
                        Literal::pos(Atom::new(p, left)),
                        Literal::pos(Atom::new(q, right)),
                    ]);
                }
            }
        }
    }
    let mut out = Vec::new();
    for arm in data.arms() {
        let head = Atom::new(arm.label(), Vec::new());
        for body in &bodies {
            if let Ok(c) = Clause::new(body.clone(), head.clone()) {
                out.push(c);
            }
        }
    }
    out
}

/// Replays a dataset in a seeded random order, cycling when exhausted.
/// The reward is 1 exactly when the chosen arm is the instance label.
#[derive(Debug, Clone)]
pub struct ReplayEnv {
    data: Arc<ReplayDataset>,
    order: Vec<usize>,
    current: Option<usize>,
}

impl ReplayEnv {
    pub fn new(data: Arc<ReplayDataset>, seed: u64) -> Self {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        ReplayEnv {
            data,
            order,
            current: None,
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn dataset(&self) -> &ReplayDataset {
        &self.data
    }
}

impl Environment for ReplayEnv {
    fn arms(&self) -> &[ArmId] {
        self.data.arms()
    }

    fn observe(&mut self, k: u64, _rng: &mut dyn RngCore) -> Result<Context, EnvError> {
        let idx = self.order[((k - 1) % self.order.len() as u64) as usize];
        self.current = Some(idx);
        let mut facts = self.data.instances[idx].facts.clone();
        facts.set_step(k);
        let queries = self
            .data
            .arms()
            .iter()
            .map(|a| Atom::new(a.label(), Vec::new()))
            .collect();
        Ok(Context::new(facts, queries))
    }

    fn gt_arm(&self) -> Result<ArmId, EnvError> {
        let idx = self.current.ok_or(EnvError::NotObserved)?;
        let label = &self.data.instances[idx].label;
        Ok(self.data.arm_for(label).expect("labels are arms").clone())
    }

    fn pull(&mut self, arm: &ArmId, _rng: &mut dyn RngCore) -> Result<Feedback, EnvError> {
        if self.data.arms().get(arm.index().wrapping_sub(1)) != Some(arm) {
            return Err(EnvError::UnknownArm(arm.label().to_string()));
        }
        let gt = self.gt_arm()?;
        self.current = None;
        Ok(Feedback {
            reward: u8::from(*arm == gt),
            gt_reward: 1,
        })
    }
}
