use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use super::music::MusicWorld;
use crate::arm::{ArmId, Context};
use crate::engine::Environment;
use crate::relational::{Atom, Clause, Literal, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    User,
    Song,
    Artist,
}

/// Predicates of the inductive bias with their argument types.
const SIGNATURES: [(&str, &[Ty]); 3] = [
    ("sungBy", &[Ty::Song, Ty::Artist]),
    ("popular", &[Ty::Artist]),
    ("listened", &[Ty::User, Ty::Song]),
];
const NEGATABLE: [&str; 1] = ["popular"];
const MAX_LITERALS: usize = 2;

type Vars = Vec<(String, Ty)>;

fn fresh_name(vars: &Vars) -> String {
    // A and B are the consequent's user and song
    let c = (b'A' + vars.len() as u8) as char;
    c.to_string()
}

/// Every literal over the bias that reuses at least one variable of `vars`,
/// together with the variable list extended by its fresh variables.
fn literal_options(vars: &Vars) -> Vec<(Literal, Vars)> {
    let mut out = Vec::new();
    for (pred, types) in SIGNATURES {
        let mut partial: Vec<(Vec<Term>, Vars, bool)> = vec![(Vec::new(), vars.clone(), false)];
        for &ty in types {
            let mut next = Vec::new();
            for (args, vs, reused) in &partial {
                for (name, t) in vs.iter() {
                    if *t == ty {
                        let mut a = args.clone();
                        a.push(Term::variable(name));
                        next.push((a, vs.clone(), true));
                    }
                }
                let name = fresh_name(vs);
                let mut a = args.clone();
                a.push(Term::variable(&name));
                let mut v2 = vs.clone();
                v2.push((name, ty));
                next.push((a, v2, *reused));
            }
            partial = next;
        }
        for (args, vs, reused) in partial {
            if !reused {
                continue;
            }
            let atom = Atom::new(pred, args);
            let all_known = vs.len() == vars.len();
            out.push((Literal::pos(atom.clone()), vs));
            if all_known && NEGATABLE.contains(&pred) {
                out.push((Literal::neg(atom), vars.clone()));
            }
        }
    }
    out
}

/// The candidate clause space: linked antecedents of at most two literals
/// over `sungBy/2`, `popular/1` and `listened/2` (only `popular` may be
/// negated), each with consequent `listens(A,B)`. Duplicates up to variable
/// renaming and literal order are removed.
pub fn template_clauses() -> Vec<Clause> {
    let head = Atom::new("listens", vec![Term::variable("A"), Term::variable("B")]);
    let head_vars: Vars = vec![("A".into(), Ty::User), ("B".into(), Ty::Song)];
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |body: Vec<Literal>| {
        let Ok(c) = Clause::new(body.clone(), head.clone()) else {
            return;
        };
        let mut keys = vec![c.canonical().to_string()];
        if body.len() == 2 {
            let swapped = vec![body[1].clone(), body[0].clone()];
            if let Ok(s) = Clause::new(swapped, head.clone()) {
                keys.push(s.canonical().to_string());
            }
        }
        let key = keys.into_iter().min().expect("non-empty");
        if seen.insert(key) {
            out.push(c);
        }
    };
    let first = literal_options(&head_vars);
    for (l1, _) in first.iter().filter(|(l, _)| !l.negated) {
        push(vec![l1.clone()]);
    }
    if MAX_LITERALS >= 2 {
        for (l1, vars1) in first.iter().filter(|(l, _)| !l.negated) {
            for (l2, _) in literal_options(vars1) {
                if l2.atom != l1.atom {
                    push(vec![l1.clone(), l2]);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InducedClauseSet {
    pub clauses: Vec<Clause>,
    pub warnings: Vec<String>,
}

impl InducedClauseSet {
    pub fn contains_alpha(&self, clause: &Clause) -> bool {
        self.clauses.iter().any(|c| c.alpha_eq(clause))
    }
}

/// Truth value of `clause` for each `(context, arm)` observation.
pub fn discrimination_profile(clause: &Clause, observations: &[(Context, ArmId)]) -> Vec<bool> {
    observations.iter().map(|(ctx, arm)| ctx.test(clause, arm)).collect()
}

/// Induces candidate contexts from `warmup` random pulls on a copy of
/// `world`. Each warm-up user is described by the context at their first
/// visit paired with the song they wanted. A template clause is kept when
/// it is true for some of those users and false for others.
pub fn induce_contexts<R: Rng + ?Sized>(world: &MusicWorld, warmup: usize, rng: &mut R) -> InducedClauseSet {
    let mut sim = world.clone();
    let users = sim.config().users;
    let arms = sim.arms().to_vec();
    let mut first: BTreeMap<usize, (Context, ArmId)> = BTreeMap::new();
    for k in 1..=warmup as u64 {
        let user = rng.gen_range(1..=users);
        first
            .entry(user)
            .or_insert_with(|| (sim.context(user, k), sim.gt_arm_for(user)));
        let chosen = &arms[rng.gen_range(0..arms.len())];
        sim.step(user, k, chosen, rng).expect("arm comes from the world");
    }
    let observations: Vec<(Context, ArmId)> = first.into_values().collect();
    let mut set = InducedClauseSet::default();
    if observations.len() < 2 {
        set.warnings.push(format!(
            "only {} distinct user(s) seen during warm-up; no clause can discriminate",
            observations.len()
        ));
        return set;
    }
    for clause in template_clauses() {
        let profile = discrimination_profile(&clause, &observations);
        if profile.iter().any(|&b| b) && profile.iter().any(|&b| !b) {
            set.clauses.push(clause);
        }
    }
    if set.clauses.is_empty() {
        set.warnings
            .push("no template clause discriminates the warm-up users".into());
    }
    set
}
