//! Expert preference knowledge and its contribution to the policy gradient.
//!
//! An expert states tuples `(context, prefer(arm) = 0|1)`. Under a Laplace
//! prior every source that fires adds exactly `+1` (prefer) or `-1`
//! (dis-prefer) to the log-policy gradient of the arm, so `S` sources
//! contribute `n_prefer - n_disprefer`. Under a Normal prior the
//! contribution is `±alpha - sigmoid(psi)`.
//!
//! Noisy experts are simulated by flipping each source's report with
//! probability `1 - p` during a configured window of steps.

use std::fmt;
use std::ops::RangeInclusive;

use rand::Rng;

use crate::arm::{ArmId, Context};
use crate::relational::parse::strip_comment;
use crate::relational::{parse_atom, parse_literals, Clause, ParseError, Schema};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KnowledgeError {
    #[error("reliability must lie in [0, 1], got {0}")]
    Reliability(f64),
    #[error("invalid step window {start}..{end}")]
    Window { start: u64, end: u64 },
    #[error("normal prior needs alpha >= 1, got {0}")]
    Alpha(f64),
    #[error("source does not use a {0} prior")]
    WrongPrior(&'static str),
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Clause {
        line: usize,
        #[source]
        source: ParseError,
    },
}

/// Minimum knowledge strength that qualifies a source as expert when
/// running for `horizon` steps: `K * max gradient = K * K`. The Laplace
/// formulation makes the update independent of this value; it is exposed
/// for reference only.
pub fn expert_strength(horizon: u64) -> f64 {
    (horizon as f64).powi(2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PriorKind {
    Laplace,
    Normal { alpha: f64 },
}

/// `(condition, prefer(arm) = 0|1)`. The clause body is the condition and
/// its consequent identifies the arm(s) the rule talks about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceRule {
    pub clause: Clause,
    pub prefer: bool,
}

impl PreferenceRule {
    pub fn new(clause: Clause, prefer: bool) -> Self {
        PreferenceRule { clause, prefer }
    }

    /// `Some(±1)` when the rule speaks about `arm` and its condition holds.
    pub fn fires(&self, ctx: &Context, arm: &ArmId) -> Option<i8> {
        match ctx.applies(&self.clause, arm) {
            Some(true) => Some(if self.prefer { 1 } else { -1 }),
            _ => None,
        }
    }
}

impl fmt::Display for PreferenceRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -> prefer({})={}",
            self.clause.antecedent_string(),
            self.clause.head,
            u8::from(self.prefer)
        )
    }
}

/// Step windows with a truth-telling probability; steps outside every
/// window are reported truthfully.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReliabilitySchedule {
    windows: Vec<(RangeInclusive<u64>, f64)>,
}

impl ReliabilitySchedule {
    pub fn perfect() -> Self {
        Self::default()
    }

    pub fn window(steps: RangeInclusive<u64>, p: f64) -> Result<Self, KnowledgeError> {
        let mut s = Self::default();
        s.push(steps, p)?;
        Ok(s)
    }

    pub fn push(&mut self, steps: RangeInclusive<u64>, p: f64) -> Result<(), KnowledgeError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(KnowledgeError::Reliability(p));
        }
        if steps.is_empty() || *steps.start() == 0 {
            return Err(KnowledgeError::Window {
                start: *steps.start(),
                end: *steps.end(),
            });
        }
        self.windows.push((steps, p));
        Ok(())
    }

    /// Probability of a truthful report at `step` (first matching window).
    pub fn at(&self, step: u64) -> f64 {
        self.windows
            .iter()
            .find(|(r, _)| r.contains(&step))
            .map_or(1.0, |(_, p)| *p)
    }

    pub fn windows(&self) -> &[(RangeInclusive<u64>, f64)] {
        &self.windows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSource {
    pub rules: Vec<PreferenceRule>,
    prior: PriorKind,
    reliability: ReliabilitySchedule,
}

impl KnowledgeSource {
    pub fn laplace(rules: Vec<PreferenceRule>) -> Self {
        KnowledgeSource {
            rules,
            prior: PriorKind::Laplace,
            reliability: ReliabilitySchedule::perfect(),
        }
    }

    pub fn normal(rules: Vec<PreferenceRule>, alpha: f64) -> Result<Self, KnowledgeError> {
        if !(alpha.is_finite() && alpha >= 1.0) {
            return Err(KnowledgeError::Alpha(alpha));
        }
        Ok(KnowledgeSource {
            rules,
            prior: PriorKind::Normal { alpha },
            reliability: ReliabilitySchedule::perfect(),
        })
    }

    pub fn prior(&self) -> PriorKind {
        self.prior
    }

    pub fn reliability(&self) -> &ReliabilitySchedule {
        &self.reliability
    }

    pub fn with_reliability(mut self, schedule: ReliabilitySchedule) -> Self {
        self.reliability = schedule;
        self
    }

    /// The source's honest opinion about `arm`: the sign of the majority of
    /// firing rules, 0 when none fire or they tie.
    pub fn vote(&self, ctx: &Context, arm: &ArmId) -> i8 {
        let net: i64 = self.rules.iter().filter_map(|r| r.fires(ctx, arm)).map(i64::from).sum();
        net.signum() as i8
    }

    /// The vote as reported at the context's step: flipped with probability
    /// `1 - p`. Randomness is only consumed when a flip is possible.
    pub fn reported_vote<R: Rng + ?Sized>(&self, ctx: &Context, arm: &ArmId, rng: &mut R) -> i8 {
        let v = self.vote(ctx, arm);
        if v == 0 {
            return 0;
        }
        let p = self.reliability.at(ctx.step());
        if p < 1.0 && rng.gen::<f64>() >= p {
            -v
        } else {
            v
        }
    }
}

/// Renders the knowledge-file format accepted by [`parse_knowledge`].
impl fmt::Display for KnowledgeSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.prior {
            PriorKind::Laplace => writeln!(f, "prior laplace")?,
            PriorKind::Normal { alpha } => writeln!(f, "prior normal alpha={alpha}")?,
        }
        for (r, p) in &self.reliability.windows {
            writeln!(f, "noise p={p} steps={}..{}", r.start(), r.end())?;
        }
        for rule in &self.rules {
            writeln!(f, "{rule}")?;
        }
        Ok(())
    }
}

/// `n_prefer - n_disprefer` over Laplace sources, each after its noisy
/// report. Sources with another prior are skipped.
pub fn laplace_signal<R: Rng + ?Sized>(sources: &[KnowledgeSource], ctx: &Context, arm: &ArmId, rng: &mut R) -> i64 {
    sources
        .iter()
        .filter(|s| s.prior == PriorKind::Laplace)
        .map(|s| i64::from(s.reported_vote(ctx, arm, rng)))
        .sum()
}

/// `±alpha - sigma` when the source fires for `arm`, otherwise 0.
pub fn normal_signal(
    source: &KnowledgeSource,
    ctx: &Context,
    arm: &ArmId,
    current_sigma: f64,
) -> Result<f64, KnowledgeError> {
    let PriorKind::Normal { alpha } = source.prior else {
        return Err(KnowledgeError::WrongPrior("normal"));
    };
    Ok(normal_term(source.vote(ctx, arm), alpha, current_sigma))
}

fn normal_term(vote: i8, alpha: f64, sigma: f64) -> f64 {
    if vote == 0 {
        0.0
    } else {
        f64::from(vote) * alpha - sigma
    }
}

/// Total prior-gradient contribution of all sources for `arm`, mixing
/// Laplace and Normal sources; both are subject to the reliability schedule.
pub fn knowledge_signal<R: Rng + ?Sized>(
    sources: &[KnowledgeSource],
    ctx: &Context,
    arm: &ArmId,
    current_sigma: f64,
    rng: &mut R,
) -> f64 {
    sources
        .iter()
        .map(|s| {
            let v = s.reported_vote(ctx, arm, rng);
            match s.prior {
                PriorKind::Laplace => f64::from(v),
                PriorKind::Normal { alpha } => normal_term(v, alpha, current_sigma),
            }
        })
        .sum()
}

/// Knowledge contribution for every arm at one step. Each source decides
/// once per step whether it reports truthfully, so a lying source flips
/// all of its opinions together. One random draw is consumed per source
/// with reliability below 1, whether or not any rule fires.
pub fn knowledge_signals<R: Rng + ?Sized>(
    sources: &[KnowledgeSource],
    ctx: &Context,
    arms: &[ArmId],
    current_sigmas: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let mut out = vec![0.0; arms.len()];
    for s in sources {
        let p = s.reliability.at(ctx.step());
        let flip = p < 1.0 && rng.gen::<f64>() >= p;
        for ((arm, sigma), acc) in arms.iter().zip(current_sigmas).zip(out.iter_mut()) {
            let mut v = s.vote(ctx, arm);
            if flip {
                v = -v;
            }
            *acc += match s.prior {
                PriorKind::Laplace => f64::from(v),
                PriorKind::Normal { alpha } => normal_term(v, alpha, *sigma),
            };
        }
    }
    out
}

/// Copy of `source` that tells the truth with probability `p` during
/// `steps` and always outside it.
pub fn make_noisy(
    source: &KnowledgeSource,
    p: f64,
    steps: RangeInclusive<u64>,
) -> Result<KnowledgeSource, KnowledgeError> {
    Ok(source.clone().with_reliability(ReliabilitySchedule::window(steps, p)?))
}

fn parse_kv<'a>(line: usize, tok: &'a str, key: &str) -> Result<&'a str, KnowledgeError> {
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| KnowledgeError::Format {
            line,
            msg: format!("expected `{key}=...`, found `{tok}`"),
        })
}

fn parse_window(line: usize, s: &str) -> Result<RangeInclusive<u64>, KnowledgeError> {
    let bad = || KnowledgeError::Format {
        line,
        msg: format!("expected `<a>..<b>`, found `{s}`"),
    };
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    Ok(a.trim().parse().map_err(|_| bad())?..=b.trim().parse().map_err(|_| bad())?)
}

fn parse_rule(line: usize, text: &str, schema: &mut Schema) -> Result<PreferenceRule, KnowledgeError> {
    let fmt_err = |msg: String| KnowledgeError::Format { line, msg };
    let clause_err = |source| KnowledgeError::Clause { line, source };
    let (cond, pref) = text
        .split_once("->")
        .ok_or_else(|| fmt_err("expected `condition -> prefer(atom)=0|1`".into()))?;
    let pref = pref.trim();
    let inner = pref
        .strip_prefix("prefer(")
        .ok_or_else(|| fmt_err(format!("expected `prefer(...)`, found `{pref}`")))?;
    let (atom_text, flag) = inner
        .rsplit_once(")=")
        .ok_or_else(|| fmt_err("expected `)=0` or `)=1`".into()))?;
    let prefer = match flag.trim() {
        "1" => true,
        "0" => false,
        other => return Err(fmt_err(format!("preference must be 0 or 1, found `{other}`"))),
    };
    let body = parse_literals(cond).map_err(clause_err)?;
    let head = parse_atom(atom_text).map_err(clause_err)?;
    let clause = Clause::new(body, head).map_err(clause_err)?;
    schema.register_clause(&clause).map_err(clause_err)?;
    Ok(PreferenceRule::new(clause, prefer))
}

/// Parses a knowledge file.
///
/// ```text
/// % optional headers
/// prior laplace                 (or: prior normal alpha=2)
/// noise p=0.6 steps=1..50
/// sungBy(B,C), !popular(C) -> prefer(listens(A,B))=1
/// ```
pub fn parse_knowledge(text: &str, schema: &mut Schema) -> Result<KnowledgeSource, KnowledgeError> {
    let mut prior = PriorKind::Laplace;
    let mut schedule = ReliabilitySchedule::perfect();
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("prior") => match toks.next() {
                Some("laplace") => prior = PriorKind::Laplace,
                Some("normal") => {
                    let alpha_tok = toks.next().ok_or_else(|| KnowledgeError::Format {
                        line: n,
                        msg: "normal prior needs alpha=<a>".into(),
                    })?;
                    let alpha: f64 = parse_kv(n, alpha_tok, "alpha")?
                        .parse()
                        .map_err(|_| KnowledgeError::Format {
                            line: n,
                            msg: format!("bad alpha `{alpha_tok}`"),
                        })?;
                    if !(alpha.is_finite() && alpha >= 1.0) {
                        return Err(KnowledgeError::Alpha(alpha));
                    }
                    prior = PriorKind::Normal { alpha };
                }
                other => {
                    return Err(KnowledgeError::Format {
                        line: n,
                        msg: format!("unknown prior `{}`", other.unwrap_or("")),
                    })
                }
            },
            Some("noise") => {
                let p_tok = toks.next().unwrap_or("");
                let s_tok = toks.next().unwrap_or("");
                let p: f64 = parse_kv(n, p_tok, "p")?.parse().map_err(|_| KnowledgeError::Format {
                    line: n,
                    msg: format!("bad probability `{p_tok}`"),
                })?;
                let window = parse_window(n, parse_kv(n, s_tok, "steps")?)?;
                schedule.push(window, p)?;
            }
            _ => rules.push(parse_rule(n, line, schema)?),
        }
    }
    Ok(KnowledgeSource {
        rules,
        prior,
        reliability: schedule,
    })
}
