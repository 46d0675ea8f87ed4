//! Flat first-order logic: terms, atoms, clauses and ground fact bases.
//!
//! Clauses are conjunctive antecedents with a single consequent atom, e.g.
//! `sungBy(B,C), !popular(C) => listens(A,B)`. Negated literals use
//! negation as failure over the closed fact base. Variables start with an
//! uppercase letter or `_`; everything else is a constant.

pub(crate) mod facts;
mod matching;
pub(crate) mod parse;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

pub use facts::{parse_fact_file, FactBase};
pub use matching::{enumerate_groundings, satisfies, GroundingLimit, DEFAULT_GROUNDING_CAP};
pub use parse::{parse_atom, parse_clause, parse_clause_file, parse_literals};

/// Interned-ish symbol. Cheap to clone, compared by content.
pub type Symbol = Arc<str>;

/// Partial assignment of variables to constants.
pub type Binding = BTreeMap<Symbol, Symbol>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at column {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("predicate `{predicate}` used with arity {found}, previously declared with arity {expected}")]
    Arity {
        predicate: String,
        expected: usize,
        found: usize,
    },
    #[error("variable `{var}` occurs only under negation")]
    UnsafeVariable { var: String },
    #[error("fact `{0}` contains variables")]
    NonGroundFact(String),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<ParseError>,
    },
}

impl ParseError {
    pub(crate) fn at_line(self, line: usize) -> Self {
        ParseError::Line {
            line,
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Const(Symbol),
    Var(Symbol),
}

impl Term {
    /// Classifies `name` by its first character (Prolog convention).
    pub fn from_name(name: &str) -> Term {
        if is_variable_name(name) {
            Term::Var(name.into())
        } else {
            Term::Const(name.into())
        }
    }

    pub fn constant(name: &str) -> Term {
        Term::Const(name.into())
    }

    pub fn variable(name: &str) -> Term {
        Term::Var(name.into())
    }

    pub fn name(&self) -> &Symbol {
        match self {
            Term::Const(s) | Term::Var(s) => s,
        }
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }
}

pub(crate) fn is_variable_name(name: &str) -> bool {
    name.chars().next().is_some_and(|c| c.is_uppercase() || c == '_')
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub predicate: Symbol,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.into(),
            args,
        }
    }

    /// Ground atom from constant names.
    pub fn ground(predicate: &str, args: &[&str]) -> Self {
        Atom::new(predicate, args.iter().map(|a| Term::constant(a)).collect())
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }

    pub fn variables(&self) -> impl Iterator<Item = &Symbol> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        })
    }

    /// Applies `binding`; unbound variables are left in place.
    pub fn substitute(&self, binding: &Binding) -> Atom {
        Atom {
            predicate: self.predicate.clone(),
            args: self
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => binding
                        .get(v)
                        .map(|c| Term::Const(c.clone()))
                        .unwrap_or_else(|| t.clone()),
                    Term::Const(_) => t.clone(),
                })
                .collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{a}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    pub atom: Atom,
    pub negated: bool,
}

impl Literal {
    pub fn pos(atom: Atom) -> Self {
        Literal { atom, negated: false }
    }

    pub fn neg(atom: Atom) -> Self {
        Literal { atom, negated: true }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negated {
            f.write_str("!")?;
        }
        write!(f, "{}", self.atom)
    }
}

/// `antecedent => consequent`. The consequent names the arm the clause
/// speaks about; its variables act as query variables bound by the caller.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Clause {
    pub body: Vec<Literal>,
    pub head: Atom,
}

impl Clause {
    /// Builds a clause, checking arity consistency and negation safety.
    pub fn new(body: Vec<Literal>, head: Atom) -> Result<Self, ParseError> {
        let clause = Clause { body, head };
        let mut schema = Schema::default();
        schema.register_clause(&clause)?;
        clause.check_safety()?;
        Ok(clause)
    }

    fn check_safety(&self) -> Result<(), ParseError> {
        let mut bound: BTreeSet<&Symbol> = self.head.variables().collect();
        for lit in self.body.iter().filter(|l| !l.negated) {
            bound.extend(lit.atom.variables());
        }
        for lit in self.body.iter().filter(|l| l.negated) {
            if let Some(v) = lit.atom.variables().find(|v| !bound.contains(v)) {
                return Err(ParseError::UnsafeVariable { var: v.to_string() });
            }
        }
        Ok(())
    }

    /// Distinct antecedent variables, in order of first occurrence.
    pub fn body_variables(&self) -> Vec<Symbol> {
        let mut seen = Vec::<Symbol>::new();
        for v in self.body.iter().flat_map(|l| l.atom.variables()) {
            if !seen.contains(v) {
                seen.push(v.clone());
            }
        }
        seen
    }

    /// Binds head variables positionally against a ground query atom.
    ///
    /// Returns `None` when the predicate differs, arities differ (unless the
    /// query is nullary, which binds nothing), or a head constant conflicts.
    pub fn head_binding(&self, query: &Atom) -> Option<Binding> {
        if self.head.predicate != query.predicate {
            return None;
        }
        let mut binding = Binding::new();
        if query.args.is_empty() {
            return Some(binding);
        }
        if query.arity() != self.head.arity() {
            return None;
        }
        for (h, q) in self.head.args.iter().zip(&query.args) {
            let Term::Const(qc) = q else { continue };
            match h {
                Term::Const(hc) if hc != qc => return None,
                Term::Const(_) => {}
                Term::Var(v) => match binding.get(v) {
                    Some(prev) if prev != qc => return None,
                    Some(_) => {}
                    None => {
                        binding.insert(v.clone(), qc.clone());
                    }
                },
            }
        }
        Some(binding)
    }

    /// Variables renamed `V0, V1, ...` in order of first occurrence (head
    /// first). Two clauses are alpha-equivalent iff their canonical forms
    /// are equal.
    pub fn canonical(&self) -> Clause {
        let mut names = BTreeMap::<Symbol, Symbol>::new();
        let mut rename = |atom: &Atom| Atom {
            predicate: atom.predicate.clone(),
            args: atom
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => {
                        let next = names.len();
                        Term::Var(
                            names
                                .entry(v.clone())
                                .or_insert_with(|| format!("V{next}").into())
                                .clone(),
                        )
                    }
                    c => c.clone(),
                })
                .collect(),
        };
        let head = rename(&self.head);
        let body = self
            .body
            .iter()
            .map(|l| Literal {
                atom: rename(&l.atom),
                negated: l.negated,
            })
            .collect();
        Clause { body, head }
    }

    pub fn alpha_eq(&self, other: &Clause) -> bool {
        self.canonical() == other.canonical()
    }

    /// Renders only the antecedent, e.g. `sungBy(B,C), !popular(C)`.
    pub fn antecedent_string(&self) -> String {
        self.body.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.body.is_empty() {
            write!(f, "=> {}", self.head)
        } else {
            write!(f, "{} => {}", self.antecedent_string(), self.head)
        }
    }
}

/// Predicate arity registry. The first use of a predicate fixes its arity.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Schema {
    arities: BTreeMap<Symbol, usize>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, atom: &Atom) -> Result<(), ParseError> {
        match self.arities.get(&atom.predicate) {
            Some(&expected) if expected != atom.arity() => Err(ParseError::Arity {
                predicate: atom.predicate.to_string(),
                expected,
                found: atom.arity(),
            }),
            Some(_) => Ok(()),
            None => {
                self.arities.insert(atom.predicate.clone(), atom.arity());
                Ok(())
            }
        }
    }

    pub fn register_clause(&mut self, clause: &Clause) -> Result<(), ParseError> {
        for lit in &clause.body {
            self.register(&lit.atom)?;
        }
        self.register(&clause.head)
    }

    pub fn arity(&self, predicate: &str) -> Option<usize> {
        self.arities.get(predicate).copied()
    }
}
