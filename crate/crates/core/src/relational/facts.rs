use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::parse::{parse_atom, strip_comment};
use super::{Atom, ParseError, Schema, Symbol, Term};

/// Set of ground atoms observed at one step, indexed by predicate and by
/// (predicate, first argument).
#[derive(Debug, Clone, Default)]
pub struct FactBase {
    step: u64,
    facts: BTreeSet<Atom>,
    by_pred: BTreeMap<Symbol, Vec<Atom>>,
    by_first: BTreeMap<(Symbol, Symbol), Vec<Atom>>,
    constants: BTreeSet<Symbol>,
}

impl PartialEq for FactBase {
    fn eq(&self, other: &Self) -> bool {
        self.step == other.step && self.facts == other.facts
    }
}

impl Eq for FactBase {}

impl FactBase {
    pub fn new(step: u64) -> Self {
        FactBase {
            step,
            ..Default::default()
        }
    }

    pub fn from_facts(step: u64, facts: impl IntoIterator<Item = Atom>) -> Result<Self, ParseError> {
        let mut fb = FactBase::new(step);
        for f in facts {
            fb.insert(f)?;
        }
        Ok(fb)
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_step(&mut self, step: u64) {
        self.step = step;
    }

    /// Inserts a ground atom. Returns `Ok(false)` if it was already present.
    pub fn insert(&mut self, fact: Atom) -> Result<bool, ParseError> {
        if !fact.is_ground() {
            return Err(ParseError::NonGroundFact(fact.to_string()));
        }
        if self.facts.contains(&fact) {
            return Ok(false);
        }
        for t in &fact.args {
            self.constants.insert(t.name().clone());
        }
        self.by_pred
            .entry(fact.predicate.clone())
            .or_default()
            .push(fact.clone());
        if let Some(Term::Const(first)) = fact.args.first() {
            self.by_first
                .entry((fact.predicate.clone(), first.clone()))
                .or_default()
                .push(fact.clone());
        }
        self.facts.insert(fact);
        Ok(true)
    }

    pub fn contains(&self, fact: &Atom) -> bool {
        self.facts.contains(fact)
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Atom> {
        self.facts.iter()
    }

    /// Facts with `predicate`, narrowed by first argument when known.
    pub(crate) fn candidates(&self, predicate: &Symbol, first: Option<&Symbol>) -> &[Atom] {
        let hit = match first {
            Some(c) => self.by_first.get(&(predicate.clone(), c.clone())),
            None => self.by_pred.get(predicate),
        };
        hit.map(Vec::as_slice).unwrap_or(&[])
    }

    /// Active domain: every constant appearing in some fact.
    pub fn constants(&self) -> &BTreeSet<Symbol> {
        &self.constants
    }

    /// Keeps only facts whose arguments all lie in `domain`.
    pub fn restrict(&self, domain: &BTreeSet<Symbol>) -> FactBase {
        let mut out = FactBase::new(self.step);
        for f in self
            .facts
            .iter()
            .filter(|f| f.args.iter().all(|t| domain.contains(t.name())))
        {
            out.insert(f.clone()).expect("ground");
        }
        out
    }
}

/// Renders in the fact-file format, one `p(a,b).` per line.
impl fmt::Display for FactBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for fact in &self.facts {
            writeln!(f, "{fact}.")?;
        }
        Ok(())
    }
}

pub(crate) fn parse_fact_line(line: &str) -> Result<Atom, ParseError> {
    let trimmed = line.trim_end();
    let Some(body) = trimmed.strip_suffix('.') else {
        return Err(ParseError::Syntax {
            pos: trimmed.chars().count() + 1,
            msg: "expected `.` at end of fact".into(),
        });
    };
    let atom = parse_atom(body)?;
    if !atom.is_ground() {
        return Err(ParseError::NonGroundFact(atom.to_string()));
    }
    Ok(atom)
}

/// Parses a fact file: one `predicate(c1,c2).` per line, `%` comments.
pub fn parse_fact_file(text: &str, schema: &mut Schema, step: u64) -> Result<FactBase, ParseError> {
    let mut fb = FactBase::new(step);
    for (i, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let fact = parse_fact_line(line).map_err(|e| e.at_line(i + 1))?;
        schema.register(&fact).map_err(|e| e.at_line(i + 1))?;
        fb.insert(fact).map_err(|e| e.at_line(i + 1))?;
    }
    Ok(fb)
}
