//! Online learning loops: arm selection, gradient assembly and the boosted
//! policy update for the knowledge-free baseline, KIPG and KIPGUCB.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::arm::{ArmId, Context};
use crate::env::EnvError;
use crate::forest::{fit_tree, policy_probability, ForestError, PolicyEnsemble};
use crate::knowledge::{knowledge_signals, KnowledgeSource};
use crate::relational::Clause;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Baseline,
    Kipg,
    Kipgucb,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Baseline, Algorithm::Kipg, Algorithm::Kipgucb];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Baseline => "baseline",
            Algorithm::Kipg => "kipg",
            Algorithm::Kipgucb => "kipgucb",
        }
    }

    pub fn uses_knowledge(self) -> bool {
        self != Algorithm::Baseline
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected baseline, kipg or kipgucb)"))
    }
}

/// Target used for the chosen arm in the UCB gap `|pi - pi_star|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UcbTarget {
    /// 1 when the drawn arm is the greedy (highest-pi) arm, 0 otherwise.
    #[default]
    Greedy,
    /// Always 1, i.e. gap = 1 - pi.
    One,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub steps: u64,
    pub eta: f64,
    pub algorithm: Algorithm,
    pub ucb_floor: f64,
    pub ucb_target: UcbTarget,
    pub seed: u64,
    pub trees_per_arm: Option<usize>,
    pub max_depth: usize,
    /// Also regress unchosen arms (indicator 0) every step.
    pub update_unchosen: bool,
    pub psi0: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            steps: 500,
            eta: 1.0,
            algorithm: Algorithm::Kipg,
            ucb_floor: 1e-6,
            ucb_target: UcbTarget::Greedy,
            seed: 0,
            trees_per_arm: Some(10),
            max_depth: 1,
            update_unchosen: true,
            psi0: 0.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: String| Err(EngineError::Config(m));
        if self.steps < 1 {
            return bad("steps must be >= 1".into());
        }
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta must be > 0, got {}", self.eta));
        }
        if !(self.ucb_floor > 0.0 && self.ucb_floor < 1.0) {
            return bad(format!("ucb_floor must lie in (0, 1), got {}", self.ucb_floor));
        }
        if self.trees_per_arm == Some(0) {
            return bad("trees_per_arm must be >= 1".into());
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1".into());
        }
        if !self.psi0.is_finite() {
            return bad(format!("psi0 must be finite, got {}", self.psi0));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Feedback {
    pub reward: u8,
    pub gt_reward: u8,
}

/// A bandit world the engine interacts with. Each step the engine first
/// observes the context, then pulls one arm.
pub trait Environment {
    fn arms(&self) -> &[ArmId];

    /// Facts visible before the pull at step `k` (1-based).
    fn observe(&mut self, k: u64, rng: &mut dyn RngCore) -> Result<Context, EnvError>;

    /// Optimal arm for the most recently observed context.
    fn gt_arm(&self) -> Result<ArmId, EnvError>;

    fn pull(&mut self, arm: &ArmId, rng: &mut dyn RngCore) -> Result<Feedback, EnvError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: u64,
    pub chosen: ArmId,
    pub pi_chosen: f64,
    pub reward: u8,
    pub gt_reward: u8,
    pub step_regret: f64,
    pub cumulative_regret: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub records: Vec<StepRecord>,
}

impl RunTrace {
    pub fn final_regret(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.cumulative_regret)
    }

    pub fn cumulative(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.cumulative_regret).collect()
    }
}

/// Draws one arm from the categorical distribution proportional to
/// `pi(i)` on `ctx`.
pub fn select_arm<R: Rng + ?Sized>(ens: &PolicyEnsemble, ctx: &Context, rng: &mut R) -> Result<ArmId, ForestError> {
    let arms: Vec<&ArmId> = ens.arms().collect();
    let pis = arms
        .iter()
        .map(|a| ens.pi_value(a, ctx))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(arms[draw(&pis, rng)].clone())
}

fn draw<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    if weights.len() == 1 {
        return 0;
    }
    WeightedIndex::new(weights)
        .expect("policy probabilities are positive and finite")
        .sample(rng)
}

/// `I - pi + signal + bonus`.
pub fn compute_log_policy_gradient(indicator: bool, pi: f64, knowledge: f64, bonus: f64) -> f64 {
    f64::from(u8::from(indicator)) - pi + knowledge + bonus
}

/// `-log(max(|pi - pi_star|, eps)) / (2k)`.
pub fn ucb_bonus(pi_star: f64, pi: f64, k: u64, eps_min: f64) -> f64 {
    assert!(k >= 1, "steps are 1-based");
    let gap = (pi - pi_star).abs().max(eps_min);
    -gap.ln() / (2.0 * k as f64)
}

/// Functional-gradient regression target with add-one reward smoothing.
pub fn gradient_target(pi: f64, gradient: f64, reward: u8) -> f64 {
    pi * gradient * (f64::from(reward) + 1.0)
}

/// Independent random streams of one run, all derived from the seed.
#[derive(Debug, Clone)]
pub struct RunRngs {
    pub select: ChaCha8Rng,
    pub knowledge: ChaCha8Rng,
    pub env: ChaCha8Rng,
}

impl RunRngs {
    pub fn from_seed(seed: u64) -> Self {
        let stream = |s| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        RunRngs {
            select: stream(1),
            knowledge: stream(2),
            env: stream(3),
        }
    }
}

/// Mutable learner state of one run.
#[derive(Debug, Clone)]
pub struct Engine {
    cfg: EngineConfig,
    ens: PolicyEnsemble,
    candidates: Vec<Arc<Clause>>,
    sources: Vec<KnowledgeSource>,
    rngs: RunRngs,
    cumulative: f64,
}

impl Engine {
    pub fn new(
        arms: &[ArmId],
        candidates: Vec<Clause>,
        sources: Vec<KnowledgeSource>,
        cfg: EngineConfig,
    ) -> Result<Self, EngineError> {
        cfg.validate()?;
        if arms.is_empty() {
            return Err(EngineError::Config("environment has no arms".into()));
        }
        let mut ens = PolicyEnsemble::new(arms, cfg.eta)?.with_cap(cfg.trees_per_arm)?;
        for a in arms {
            ens.set_psi0(a, cfg.psi0)?;
        }
        Ok(Engine {
            rngs: RunRngs::from_seed(cfg.seed),
            cfg,
            ens,
            candidates: candidates.into_iter().map(Arc::new).collect(),
            sources,
            cumulative: 0.0,
        })
    }

    pub fn ensemble(&self) -> &PolicyEnsemble {
        &self.ens
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// One observe / select / pull / update cycle under the configured
    /// algorithm.
    pub fn step<E: Environment + ?Sized>(&mut self, env: &mut E, k: u64) -> Result<StepRecord, EngineError> {
        let ctx = env.observe(k, &mut self.rngs.env)?;
        let arms: Vec<ArmId> = self.ens.arms().cloned().collect();
        // every candidate test for every arm, evaluated once per step
        let table: Vec<Vec<bool>> = arms
            .iter()
            .map(|a| self.candidates.iter().map(|c| ctx.test(c, a)).collect())
            .collect();
        let candidates = &self.candidates;
        let pis = arms
            .iter()
            .zip(&table)
            .map(|(a, row)| {
                self.ens
                    .psi_with(a, |c| match candidates.iter().position(|x| Arc::ptr_eq(x, c)) {
                        Some(t) => row[t],
                        None => ctx.test(c, a),
                    })
                    .map(policy_probability)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let chosen = draw(&pis, &mut self.rngs.select);
        let feedback = env.pull(&arms[chosen], &mut self.rngs.env)?;

        let greedy = pis
            .iter()
            .enumerate()
            .fold(0, |best, (i, p)| if *p > pis[best] { i } else { best });

        let signals = if self.cfg.algorithm.uses_knowledge() {
            knowledge_signals(&self.sources, &ctx, &arms, &pis, &mut self.rngs.knowledge)
        } else {
            vec![0.0; arms.len()]
        };
        let mut updated = Vec::with_capacity(arms.len());
        let mut targets = Vec::with_capacity(arms.len());
        let mut outcomes = Vec::with_capacity(arms.len());
        for (i, arm) in arms.iter().enumerate() {
            let is_chosen = i == chosen;
            if !is_chosen && !self.cfg.update_unchosen {
                continue;
            }
            let pi = pis[i];
            let signal = signals[i];
            let bonus = if is_chosen && self.cfg.algorithm == Algorithm::Kipgucb {
                let pi_star = match self.cfg.ucb_target {
                    UcbTarget::Greedy => f64::from(u8::from(i == greedy)),
                    UcbTarget::One => 1.0,
                };
                ucb_bonus(pi_star, pi, k, self.cfg.ucb_floor)
            } else {
                0.0
            };
            // unchosen arms have no observed reward
            let reward = if is_chosen { feedback.reward } else { 0 };
            let grad = compute_log_policy_gradient(is_chosen, pi, signal, bonus);
            updated.push(arm);
            targets.push(gradient_target(pi, grad, reward));
            outcomes.push(table[i].clone());
        }
        let stump = fit_tree(&targets, &outcomes, &self.candidates, self.cfg.max_depth)?;
        for arm in updated {
            self.ens.append_stump(arm, stump.clone())?;
        }

        let pi_chosen = pis[chosen];
        let step_regret = f64::from(feedback.gt_reward) - pi_chosen * f64::from(feedback.reward);
        self.cumulative += step_regret;
        Ok(StepRecord {
            k,
            chosen: arms[chosen].clone(),
            pi_chosen,
            reward: feedback.reward,
            gt_reward: feedback.gt_reward,
            step_regret,
            cumulative_regret: self.cumulative,
        })
    }
}

fn checked_step<E: Environment + ?Sized>(
    engine: &mut Engine,
    env: &mut E,
    k: u64,
    expected: Algorithm,
) -> Result<StepRecord, EngineError> {
    if engine.cfg.algorithm != expected {
        return Err(EngineError::Config(format!(
            "engine configured for {}, not {expected}",
            engine.cfg.algorithm
        )));
    }
    engine.step(env, k)
}

/// Knowledge-infused step without the confidence bonus.
pub fn kipg_step<E: Environment + ?Sized>(engine: &mut Engine, env: &mut E, k: u64) -> Result<StepRecord, EngineError> {
    checked_step(engine, env, k, Algorithm::Kipg)
}

/// Knowledge-infused step whose chosen-arm gradient carries the UCB bonus.
pub fn kipgucb_step<E: Environment + ?Sized>(
    engine: &mut Engine,
    env: &mut E,
    k: u64,
) -> Result<StepRecord, EngineError> {
    checked_step(engine, env, k, Algorithm::Kipgucb)
}

pub fn baseline_step<E: Environment + ?Sized>(
    engine: &mut Engine,
    env: &mut E,
    k: u64,
) -> Result<StepRecord, EngineError> {
    checked_step(engine, env, k, Algorithm::Baseline)
}

/// Runs `cfg.steps` steps from a fresh ensemble.
pub fn run<E: Environment + ?Sized>(
    env: &mut E,
    cfg: &EngineConfig,
    sources: &[KnowledgeSource],
    candidates: &[Clause],
) -> Result<RunTrace, EngineError> {
    let mut engine = Engine::new(env.arms(), candidates.to_vec(), sources.to_vec(), cfg.clone())?;
    let records = (1..=cfg.steps)
        .map(|k| engine.step(env, k))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunTrace {
        algorithm: cfg.algorithm,
        seed: cfg.seed,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::arms_from_labels;
    use crate::forest::sigmoid;
    use crate::knowledge::PreferenceRule;
    use crate::relational::{parse_clause, Atom, FactBase};

    /// Two arms; arm `good` always pays. The context marks the good arm with
    /// a `good(x)` fact so a clause can separate the arms.
    struct Toy {
        arms: Vec<ArmId>,
        good: usize,
    }

    impl Toy {
        fn new() -> Self {
            Toy {
                arms: arms_from_labels(&["x1", "x2", "x3"]),
                good: 2,
            }
        }
    }

    impl Environment for Toy {
        fn arms(&self) -> &[ArmId] {
            &self.arms
        }

        fn observe(&mut self, k: u64, _rng: &mut dyn RngCore) -> Result<Context, EnvError> {
            let facts = FactBase::from_facts(k, [Atom::ground("good", &[self.arms[self.good].label()])]).unwrap();
            let queries = self.arms.iter().map(|a| Atom::ground("pick", &[a.label()])).collect();
            Ok(Context::new(facts, queries))
        }

        fn gt_arm(&self) -> Result<ArmId, EnvError> {
            Ok(self.arms[self.good].clone())
        }

        fn pull(&mut self, arm: &ArmId, _rng: &mut dyn RngCore) -> Result<Feedback, EnvError> {
            Ok(Feedback {
                reward: u8::from(arm.slot() == self.good),
                gt_reward: 1,
            })
        }
    }

    fn toy_candidates() -> Vec<Clause> {
        vec![parse_clause("good(X) => pick(X)").unwrap()]
    }

    fn toy_knowledge() -> Vec<KnowledgeSource> {
        vec![KnowledgeSource::laplace(vec![PreferenceRule::new(
            parse_clause("good(X) => pick(X)").unwrap(),
            true,
        )])]
    }

    fn cfg(algorithm: Algorithm, seed: u64) -> EngineConfig {
        EngineConfig {
            steps: 60,
            algorithm,
            seed,
            ..EngineConfig::default()
        }
    }

    #[test]
    fn gradient_examples() {
        let g = compute_log_policy_gradient(true, 0.5, 1.0, 0.0);
        assert_eq!(g, 1.5);
        assert_eq!(gradient_target(0.5, g, 1), 1.5);
        assert_eq!(compute_log_policy_gradient(true, 0.5, 0.0, 0.0), 0.5);
        assert_eq!(gradient_target(0.5, 0.5, 0), 0.25);
        assert_eq!(compute_log_policy_gradient(false, 0.5, -1.0, 0.0), -1.5);
        let b = ucb_bonus(1.0, 0.5, 10, 1e-6);
        let g = compute_log_policy_gradient(true, 0.5, 1.0, b);
        assert!((gradient_target(0.5, g, 1) - 1.534_657).abs() < 1e-6);
    }

    #[test]
    fn bonus_values() {
        assert!((ucb_bonus(0.0, 0.5, 10, 1e-6) - 0.034_657_359).abs() < 1e-9);
        assert_eq!(ucb_bonus(1.0, 0.0, 3, 1e-6), 0.0);
        let b = ucb_bonus(0.3, 0.3, 5, 1e-6);
        assert!(b.is_finite() && (b - 1e-6f64.ln() / -10.0).abs() < 1e-12);
        assert!((ucb_bonus(0.0, 0.4, 20, 1e-6) * 2.0 - ucb_bonus(0.0, 0.4, 10, 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn selection_probabilities() {
        let arms = arms_from_labels(&["a", "b"]);
        let ctx = Context::new(
            FactBase::new(1),
            vec![Atom::ground("q", &["a"]), Atom::ground("q", &["b"])],
        );
        let mut ens = PolicyEnsemble::new(&arms, 1.0).unwrap();
        ens.set_psi0(&arms[0], 10.0).unwrap();
        ens.set_psi0(&arms[1], -10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        let hits = (0..n)
            .filter(|_| select_arm(&ens, &ctx, &mut rng).unwrap() == arms[0])
            .count();
        let p = sigmoid(10.0) / (sigmoid(10.0) + sigmoid(-10.0));
        assert!((p - 0.99996).abs() < 1e-5);
        assert!(hits as f64 / n as f64 > 0.999);

        let single = arms_from_labels(&["only"]);
        let ens = PolicyEnsemble::new(&single, 1.0).unwrap();
        let ctx1 = Context::new(FactBase::new(1), vec![Atom::ground("q", &["only"])]);
        assert_eq!(select_arm(&ens, &ctx1, &mut rng).unwrap(), single[0]);
    }

    #[test]
    fn uniform_selection_when_psi_is_zero() {
        let arms = arms_from_labels(&["a", "b", "c", "d"]);
        let ctx = Context::new(
            FactBase::new(1),
            arms.iter().map(|a| Atom::ground("q", &[a.label()])).collect(),
        );
        let ens = PolicyEnsemble::new(&arms, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[select_arm(&ens, &ctx, &mut rng).unwrap().slot()] += 1;
        }
        let se = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 4.0 * se);
        }
    }

    #[test]
    fn positive_target_raises_chosen_policy() {
        let mut env = Toy::new();
        let mut engine = Engine::new(
            &env.arms.clone(),
            toy_candidates(),
            toy_knowledge(),
            cfg(Algorithm::Kipg, 1),
        )
        .unwrap();
        let before_ctx = env.observe(1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let good = env.arms[env.good].clone();
        let before = engine.ensemble().pi_value(&good, &before_ctx).unwrap();
        engine.step(&mut env, 1).unwrap();
        let after = engine.ensemble().pi_value(&good, &before_ctx).unwrap();
        assert!(after > before);
    }

    #[test]
    fn knowledge_reduces_regret_on_toy() {
        let mut total = [0.0; 2];
        for seed in 0..5 {
            for (slot, alg) in [Algorithm::Baseline, Algorithm::Kipg].into_iter().enumerate() {
                total[slot] += run(&mut Toy::new(), &cfg(alg, seed), &toy_knowledge(), &toy_candidates())
                    .unwrap()
                    .final_regret();
            }
        }
        assert!(total[1] < total[0], "{total:?}");
    }

    #[test]
    fn determinism() {
        for alg in Algorithm::ALL {
            let a = run(&mut Toy::new(), &cfg(alg, 9), &toy_knowledge(), &toy_candidates()).unwrap();
            let b = run(&mut Toy::new(), &cfg(alg, 9), &toy_knowledge(), &toy_candidates()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn baseline_equals_kipg_without_knowledge() {
        let base = run(
            &mut Toy::new(),
            &cfg(Algorithm::Baseline, 4),
            &toy_knowledge(),
            &toy_candidates(),
        )
        .unwrap();
        let silent = run(&mut Toy::new(), &cfg(Algorithm::Kipg, 4), &[], &toy_candidates()).unwrap();
        assert_eq!(base.records, silent.records);
    }

    #[test]
    fn regret_accounting() {
        let t = run(
            &mut Toy::new(),
            &cfg(Algorithm::Kipg, 3),
            &toy_knowledge(),
            &toy_candidates(),
        )
        .unwrap();
        let mut acc = 0.0;
        for r in &t.records {
            assert_eq!(
                r.step_regret,
                f64::from(r.gt_reward) - r.pi_chosen * f64::from(r.reward)
            );
            acc += r.step_regret;
            assert_eq!(r.cumulative_regret, acc);
            assert!(r.step_regret >= 0.0);
        }
    }

    #[test]
    fn step_wrappers_check_algorithm() {
        let mut env = Toy::new();
        let mut e = Engine::new(&env.arms.clone(), toy_candidates(), vec![], cfg(Algorithm::Kipg, 0)).unwrap();
        assert!(kipg_step(&mut e, &mut env, 1).is_ok());
        assert!(matches!(kipgucb_step(&mut e, &mut env, 2), Err(EngineError::Config(_))));
        assert!(matches!(
            baseline_step(&mut e, &mut env, 2),
            Err(EngineError::Config(_))
        ));
    }

    #[test]
    fn config_validation() {
        for bad in [
            EngineConfig {
                steps: 0,
                ..EngineConfig::default()
            },
            EngineConfig {
                eta: 0.0,
                ..EngineConfig::default()
            },
            EngineConfig {
                ucb_floor: 1.0,
                ..EngineConfig::default()
            },
            EngineConfig {
                trees_per_arm: Some(0),
                ..EngineConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
        assert_eq!("KIPGUCB".parse::<Algorithm>().unwrap(), Algorithm::Kipgucb);
        assert!("rb2".parse::<Algorithm>().is_err());
    }
}
