use std::fmt;
use std::sync::Arc;

use crate::relational::{satisfies, Atom, Clause, FactBase, Symbol};

/// A bandit arm. Indices are dense and 1-based; the label is what gets
/// printed and written to traces (a song id, a dataset class label, ...).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArmId {
    index: usize,
    label: Symbol,
}

impl ArmId {
    pub fn new(index: usize, label: &str) -> Self {
        assert!(index >= 1, "arm indices start at 1");
        ArmId {
            index,
            label: label.into(),
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Zero-based slot for array indexing.
    pub(crate) fn slot(&self) -> usize {
        self.index - 1
    }
}

impl fmt::Display for ArmId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// Builds arms `1..=n` from labels.
pub fn arms_from_labels<S: AsRef<str>>(labels: &[S]) -> Vec<ArmId> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| ArmId::new(i + 1, l.as_ref()))
        .collect()
}

/// The relational context of one step: the observed fact base plus, for
/// each arm, the ground atom asserting that arm (e.g. `listens(u3,s7)`).
/// Clause consequents are matched against that atom to bind their query
/// variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Context {
    pub facts: Arc<FactBase>,
    queries: Vec<Atom>,
}

impl Context {
    pub fn new(facts: FactBase, queries: Vec<Atom>) -> Self {
        Context {
            facts: Arc::new(facts),
            queries,
        }
    }

    pub fn step(&self) -> u64 {
        self.facts.step()
    }

    pub fn num_arms(&self) -> usize {
        self.queries.len()
    }

    pub fn query(&self, arm: &ArmId) -> Option<&Atom> {
        self.queries.get(arm.slot())
    }

    /// Evaluates a clause antecedent as a feature of `arm`. A clause whose
    /// consequent does not match the arm's atom is false for that arm.
    pub fn test(&self, clause: &Clause, arm: &ArmId) -> bool {
        self.applies(clause, arm).unwrap_or(false)
    }

    /// Like [`Context::test`] but `None` when the clause consequent does not
    /// speak about this arm at all.
    pub fn applies(&self, clause: &Clause, arm: &ArmId) -> Option<bool> {
        let binding = clause.head_binding(self.query(arm)?)?;
        Some(satisfies(clause, &self.facts, &binding))
    }
}
