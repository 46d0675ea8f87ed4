use std::collections::BTreeSet;

use super::{Atom, Binding, Clause, FactBase, Literal, Symbol, Term};

pub const DEFAULT_GROUNDING_CAP: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("grounding count exceeded cap of {cap}")]
pub struct GroundingLimit {
    pub cap: usize,
}

/// Working substitution for the backtracking matcher. Assignments are
/// pushed and truncated, so undo is O(1).
struct Trail {
    slots: Vec<(Symbol, Symbol)>,
}

impl Trail {
    fn from_binding(b: &Binding) -> Self {
        Trail {
            slots: b.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    fn get(&self, var: &Symbol) -> Option<&Symbol> {
        self.slots.iter().rev().find(|(k, _)| k == var).map(|(_, v)| v)
    }

    fn resolve<'a>(&'a self, t: &'a Term) -> Option<&'a Symbol> {
        match t {
            Term::Const(c) => Some(c),
            Term::Var(v) => self.get(v),
        }
    }

    /// Extends the trail so that `pattern` matches `fact`; on failure the
    /// trail is restored.
    fn unify(&mut self, pattern: &Atom, fact: &Atom) -> bool {
        if pattern.args.len() != fact.args.len() {
            return false;
        }
        let mark = self.slots.len();
        for (p, f) in pattern.args.iter().zip(&fact.args) {
            let fc = f.name();
            match p {
                Term::Const(c) if c != fc => {
                    self.slots.truncate(mark);
                    return false;
                }
                Term::Const(_) => {}
                Term::Var(v) => match self.get(v) {
                    Some(bound) if bound != fc => {
                        self.slots.truncate(mark);
                        return false;
                    }
                    Some(_) => {}
                    None => self.slots.push((v.clone(), fc.clone())),
                },
            }
        }
        true
    }

    fn ground(&self, atom: &Atom) -> Option<Atom> {
        let args = atom
            .args
            .iter()
            .map(|t| self.resolve(t).map(|c| Term::Const(c.clone())))
            .collect::<Option<Vec<_>>>()?;
        Some(Atom {
            predicate: atom.predicate.clone(),
            args,
        })
    }
}

struct Matcher<'a> {
    fb: &'a FactBase,
    positives: Vec<&'a Atom>,
    negatives: Vec<&'a Atom>,
    domain: Vec<Symbol>,
}

impl<'a> Matcher<'a> {
    fn solve(&self, idx: usize, trail: &mut Trail) -> bool {
        let Some(pattern) = self.positives.get(idx) else {
            return self.check_negatives(trail);
        };
        let first = pattern.args.first().and_then(|t| trail.resolve(t)).cloned();
        for fact in self.fb.candidates(&pattern.predicate, first.as_ref()) {
            let mark = trail.slots.len();
            if trail.unify(pattern, fact) {
                if self.solve(idx + 1, trail) {
                    return true;
                }
                trail.slots.truncate(mark);
            }
        }
        false
    }

    /// All positives hold. Variables still free inside negated literals
    /// range over the active domain; one assignment making every negated
    /// atom absent suffices.
    fn check_negatives(&self, trail: &mut Trail) -> bool {
        let mut free = Vec::<Symbol>::new();
        for atom in &self.negatives {
            for v in atom.variables() {
                if trail.get(v).is_none() && !free.contains(v) {
                    free.push(v.clone());
                }
            }
        }
        self.assign_free(&free, trail)
    }

    fn assign_free(&self, free: &[Symbol], trail: &mut Trail) -> bool {
        let Some((var, rest)) = free.split_first() else {
            return self
                .negatives
                .iter()
                .all(|a| !self.fb.contains(&trail.ground(a).expect("grounded")));
        };
        for c in &self.domain {
            trail.slots.push((var.clone(), c.clone()));
            let ok = self.assign_free(rest, trail);
            trail.slots.pop();
            if ok {
                return true;
            }
        }
        false
    }
}

fn domain_of(fb: &FactBase, binding: &Binding) -> Vec<Symbol> {
    let mut d: BTreeSet<Symbol> = fb.constants().clone();
    d.extend(binding.values().cloned());
    d.into_iter().collect()
}

fn relevant_binding(clause: &Clause, binding: &Binding) -> Binding {
    let vars: BTreeSet<Symbol> = clause
        .body
        .iter()
        .flat_map(|l| l.atom.variables().cloned())
        .chain(clause.head.variables().cloned())
        .collect();
    binding
        .iter()
        .filter(|(k, _)| vars.contains(*k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect()
}

/// True iff some extension of `binding` grounds the antecedent so that every
/// positive literal is in `fb` and no negated literal is.
///
/// Bindings for variables that do not occur in the clause are ignored.
pub fn satisfies(clause: &Clause, fb: &FactBase, binding: &Binding) -> bool {
    let binding = relevant_binding(clause, binding);
    let m = Matcher {
        fb,
        positives: clause.body.iter().filter(|l| !l.negated).map(|l| &l.atom).collect(),
        negatives: clause.body.iter().filter(|l| l.negated).map(|l| &l.atom).collect(),
        domain: if clause.body.iter().any(|l| l.negated) {
            domain_of(fb, &binding)
        } else {
            Vec::new()
        },
    };
    let mut trail = Trail::from_binding(&binding);
    m.solve(0, &mut trail)
}

/// Every complete assignment of the antecedent variables (not already in
/// `binding`) that satisfies the clause body.
///
/// Generate-and-test over the active domain, checking each literal as soon
/// as its last variable is assigned. Deliberately shares no code with
/// [`satisfies`] so the two can check one another.
pub fn enumerate_groundings(
    clause: &Clause,
    fb: &FactBase,
    binding: &Binding,
    cap: usize,
) -> Result<Vec<Binding>, GroundingLimit> {
    let base = relevant_binding(clause, binding);
    let vars: Vec<Symbol> = clause
        .body_variables()
        .into_iter()
        .filter(|v| !base.contains_key(v))
        .collect();
    let domain = domain_of(fb, &base);

    // literal i becomes checkable once vars[..=ready_at[i]] are assigned
    let ready_at: Vec<Option<usize>> = clause
        .body
        .iter()
        .map(|l| {
            l.atom
                .variables()
                .filter_map(|v| vars.iter().position(|x| x == v))
                .max()
        })
        .collect();

    let holds = |lit: &Literal, b: &Binding| -> bool {
        let g = lit.atom.substitute(b);
        fb.contains(&g) != lit.negated
    };

    let mut current = base.clone();
    if clause
        .body
        .iter()
        .zip(&ready_at)
        .any(|(l, r)| r.is_none() && !holds(l, &current))
    {
        return Ok(Vec::new());
    }

    let mut out = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn rec(
        depth: usize,
        vars: &[Symbol],
        domain: &[Symbol],
        clause: &Clause,
        ready_at: &[Option<usize>],
        current: &mut Binding,
        holds: &dyn Fn(&Literal, &Binding) -> bool,
        out: &mut Vec<Binding>,
        cap: usize,
    ) -> Result<(), GroundingLimit> {
        if depth == vars.len() {
            if out.len() >= cap {
                return Err(GroundingLimit { cap });
            }
            out.push(current.clone());
            return Ok(());
        }
        for c in domain {
            current.insert(vars[depth].clone(), c.clone());
            let ok = clause
                .body
                .iter()
                .zip(ready_at)
                .filter(|(_, r)| **r == Some(depth))
                .all(|(l, _)| holds(l, current));
            if ok {
                rec(depth + 1, vars, domain, clause, ready_at, current, holds, out, cap)?;
            }
        }
        current.remove(&vars[depth]);
        Ok(())
    }
    rec(
        0,
        &vars,
        &domain,
        clause,
        &ready_at,
        &mut current,
        &holds,
        &mut out,
        cap,
    )?;
    Ok(out)
}
