use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::EnvError;
use crate::arm::{arms_from_labels, ArmId, Context};
use crate::engine::{Environment, Feedback};
use crate::knowledge::{parse_knowledge, KnowledgeSource};
use crate::relational::{Atom, FactBase, Schema};

/// How a simulated user picks the song they actually want.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Behavior {
    /// Fan of one (non-popular) artist: wants that artist's songs.
    A,
    /// Follows the crowd: wants the most listened song.
    B,
    /// Wants songs by popular artists.
    C,
}

impl FromStr for Behavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(Behavior::A),
            "B" | "b" => Ok(Behavior::B),
            "C" | "c" => Ok(Behavior::C),
            other => Err(format!("unknown behavior `{other}` (expected A, B or C)")),
        }
    }
}

/// Shipped expert knowledge for each behavior.
pub fn music_knowledge(behavior: Behavior) -> KnowledgeSource {
    let text = match behavior {
        Behavior::A => include_str!("../../data/knowledge/behavior_a.kb"),
        Behavior::B => include_str!("../../data/knowledge/behavior_b.kb"),
        Behavior::C => include_str!("../../data/knowledge/behavior_c.kb"),
    };
    parse_knowledge(text, &mut Schema::new()).expect("bundled knowledge files parse")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub users: usize,
    pub songs: usize,
    pub artists: usize,
    /// The last `popular` artists are popular.
    pub popular: usize,
    /// Artist (1-based) that behavior-A users are fans of.
    pub fan_artist: usize,
    /// Behavior of user `u` is `behaviors[(u - 1) % len]`.
    pub behaviors: Vec<Behavior>,
    /// Probability that an observed reward is flipped.
    pub label_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            users: 10,
            songs: 10,
            artists: 5,
            popular: 2,
            fan_artist: 2,
            behaviors: vec![Behavior::A],
            label_noise: 0.0,
        }
    }
}

impl WorldConfig {
    pub fn uniform(behavior: Behavior) -> Self {
        WorldConfig {
            behaviors: vec![behavior],
            ..Self::default()
        }
    }

    /// Users cycle through behaviors A, B, C.
    pub fn mixed() -> Self {
        WorldConfig {
            behaviors: vec![Behavior::A, Behavior::B, Behavior::C],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.users == 0 || self.songs == 0 || self.behaviors.is_empty() {
            return bad("users, songs and behaviors must be non-empty".into());
        }
        if self.popular == 0 || self.popular >= self.artists {
            return bad(format!(
                "need at least one popular and one non-popular artist (artists={}, popular={})",
                self.artists, self.popular
            ));
        }
        if self.songs < self.artists {
            return bad("every artist needs at least one song".into());
        }
        if self.fan_artist == 0 || self.fan_artist > self.artists - self.popular {
            return bad(format!("fan artist a{} must be a non-popular artist", self.fan_artist));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad(format!("label noise must lie in [0, 1], got {}", self.label_noise));
        }
        Ok(())
    }
}

/// The simulated world. Songs are dealt to artists round-robin
/// (`s_j` is sung by `a_{(j-1) mod artists + 1}`); each artist has one album.
/// Users, songs and artists are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct MusicWorld {
    cfg: WorldConfig,
    arms: Vec<ArmId>,
    listened: BTreeSet<(usize, usize)>,
    current: Option<(usize, u64)>,
}

impl MusicWorld {
    pub fn new(cfg: WorldConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let labels: Vec<String> = (1..=cfg.songs).map(|s| format!("s{s}")).collect();
        Ok(MusicWorld {
            arms: arms_from_labels(&labels),
            cfg,
            listened: BTreeSet::new(),
            current: None,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn artist_of(&self, song: usize) -> usize {
        (song - 1) % self.cfg.artists + 1
    }

    pub fn is_popular(&self, artist: usize) -> bool {
        artist > self.cfg.artists - self.cfg.popular
    }

    pub fn behavior(&self, user: usize) -> Behavior {
        self.cfg.behaviors[(user - 1) % self.cfg.behaviors.len()]
    }

    pub fn listeners(&self, song: usize) -> usize {
        self.listened.iter().filter(|(_, s)| *s == song).count()
    }

    pub fn history(&self) -> &BTreeSet<(usize, usize)> {
        &self.listened
    }

    /// The song `user` wants given the current history; lowest id on ties.
    pub fn gt_song(&self, user: usize) -> usize {
        let songs = 1..=self.cfg.songs;
        let found = match self.behavior(user) {
            Behavior::A => songs.clone().find(|&s| self.artist_of(s) == self.cfg.fan_artist),
            Behavior::B => songs
                .clone()
                .fold(None, |best: Option<(usize, usize)>, s| {
                    let n = self.listeners(s);
                    match best {
                        Some((_, m)) if m >= n => best,
                        _ => Some((s, n)),
                    }
                })
                .map(|(s, _)| s),
            Behavior::C => songs.clone().find(|&s| self.is_popular(self.artist_of(s))),
        };
        found.expect("validated worlds always have a candidate song")
    }

    pub fn gt_arm_for(&self, user: usize) -> ArmId {
        self.arms[self.gt_song(user) - 1].clone()
    }

    /// Static facts plus the listening history accumulated so far.
    pub fn facts(&self, step: u64) -> FactBase {
        let mut fb = FactBase::new(step);
        let mut add = |p: &str, args: &[&str]| {
            fb.insert(Atom::ground(p, args)).expect("ground");
        };
        for s in 1..=self.cfg.songs {
            let a = self.artist_of(s);
            add("sungBy", &[&format!("s{s}"), &format!("a{a}")]);
            add("onAlbum", &[&format!("s{s}"), &format!("al{a}")]);
        }
        for a in 1..=self.cfg.artists {
            if self.is_popular(a) {
                add("popular", &[&format!("a{a}")]);
            }
        }
        for (u, s) in &self.listened {
            add("listened", &[&format!("u{u}"), &format!("s{s}")]);
        }
        fb
    }

    /// The context `user` is seen in: the fact base plus one
    /// `listens(user, song)` query atom per arm.
    pub fn context(&self, user: usize, step: u64) -> Context {
        let u = format!("u{user}");
        let queries = self
            .arms
            .iter()
            .map(|a| Atom::ground("listens", &[&u, a.label()]))
            .collect();
        Context::new(self.facts(step), queries)
    }

    /// Serves `user` with `chosen`: returns the (possibly noisy) reward and
    /// the fact base that was visible, then records the wanted song in the
    /// history.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        user: usize,
        step: u64,
        chosen: &ArmId,
        rng: &mut R,
    ) -> Result<(Feedback, FactBase), EnvError> {
        if self.arms.get(chosen.index().wrapping_sub(1)) != Some(chosen) {
            return Err(EnvError::UnknownArm(chosen.label().to_string()));
        }
        let fb = self.facts(step);
        let gt = self.gt_song(user);
        let flip = self.cfg.label_noise > 0.0 && rng.gen::<f64>() < self.cfg.label_noise;
        let hit = chosen.index() == gt;
        let feedback = Feedback {
            reward: u8::from(hit != flip),
            gt_reward: u8::from(!flip),
        };
        self.listened.insert((user, gt));
        Ok((feedback, fb))
    }

    /// Fact-file snapshot with the user behaviors as comments.
    pub fn dump(&self, step: u64) -> String {
        let mut out = String::new();
        for u in 1..=self.cfg.users {
            let _ = writeln!(
                out,
                "% u{u}: behavior {:?}, wants s{}",
                self.behavior(u),
                self.gt_song(u)
            );
        }
        out.push_str(&self.facts(step).to_string());
        out
    }
}

impl Environment for MusicWorld {
    fn arms(&self) -> &[ArmId] {
        &self.arms
    }

    fn observe(&mut self, k: u64, rng: &mut dyn RngCore) -> Result<Context, EnvError> {
        let user = rng.gen_range(1..=self.cfg.users);
        self.current = Some((user, k));
        Ok(self.context(user, k))
    }

    fn gt_arm(&self) -> Result<ArmId, EnvError> {
        let (user, _) = self.current.ok_or(EnvError::NotObserved)?;
        Ok(self.gt_arm_for(user))
    }

    fn pull(&mut self, arm: &ArmId, rng: &mut dyn RngCore) -> Result<Feedback, EnvError> {
        let (user, k) = self.current.take().ok_or(EnvError::NotObserved)?;
        self.step(user, k, arm, rng).map(|(f, _)| f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world(cfg: WorldConfig) -> MusicWorld {
        MusicWorld::new(cfg).unwrap()
    }

    #[test]
    fn layout() {
        let w = world(WorldConfig::default());
        assert_eq!(w.artist_of(1), 1);
        assert_eq!(w.artist_of(7), 2);
        assert!(w.is_popular(4) && w.is_popular(5) && !w.is_popular(3));
        let fb = w.facts(1);
        assert!(fb.contains(&Atom::ground("sungBy", &["s6", "a1"])));
        assert!(fb.contains(&Atom::ground("popular", &["a5"])));
        assert!(fb.contains(&Atom::ground("onAlbum", &["s6", "al1"])));
    }

    #[test]
    fn ground_truth_per_behavior() {
        let mut cfg = WorldConfig::mixed();
        cfg.users = 3;
        let mut w = world(cfg);
        assert_eq!(w.gt_song(1), 2); // fan of a2
        assert_eq!(w.gt_song(2), 1); // no history: tie at zero, lowest id
        assert_eq!(w.gt_song(3), 4); // a4 popular
        w.listened.extend([(1, 3), (2, 3), (3, 3), (1, 5)]);
        assert_eq!(w.gt_song(2), 3);
        assert_eq!(w.gt_song(2), w.gt_song(2));
    }

    #[test]
    fn popular_only_song() {
        let cfg = WorldConfig {
            songs: 2,
            artists: 2,
            popular: 1,
            fan_artist: 1,
            behaviors: vec![Behavior::C],
            ..WorldConfig::default()
        };
        let w = world(cfg);
        // a2 is the popular artist here, so s2 is the only candidate
        assert_eq!(w.gt_song(1), 2);
    }

    #[test]
    fn rewards_and_history() {
        let mut w = world(WorldConfig::uniform(Behavior::A));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arms = w.arms.clone();
        let (f, fb) = w.step(1, 1, &arms[1], &mut rng).unwrap();
        assert_eq!(
            f,
            Feedback {
                reward: 1,
                gt_reward: 1
            }
        );
        assert!(!fb.contains(&Atom::ground("listened", &["u1", "s2"])));
        let (f, _) = w.step(1, 2, &arms[0], &mut rng).unwrap();
        assert_eq!(f.reward, 0);
        assert!(w.facts(3).contains(&Atom::ground("listened", &["u1", "s2"])));
        assert!(matches!(
            w.step(1, 3, &ArmId::new(11, "s11"), &mut rng),
            Err(EnvError::UnknownArm(_))
        ));
    }

    #[test]
    fn label_noise_rate() {
        let cfg = WorldConfig {
            label_noise: 0.1,
            ..WorldConfig::uniform(Behavior::C)
        };
        let mut w = world(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1000;
        let mut total = 0.0;
        for k in 1..=n {
            let ctx_user = rng.gen_range(1..=10);
            let best = w.gt_arm_for(ctx_user);
            total += f64::from(w.step(ctx_user, k, &best, &mut rng).unwrap().0.reward);
        }
        let mean = total / n as f64;
        let se = (0.9f64 * 0.1 / n as f64).sqrt();
        assert!((mean - 0.9).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn crowd_song_is_shared() {
        let mut w = world(WorldConfig::uniform(Behavior::B));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let arms = w.arms.clone();
        for k in 1..50 {
            let u = rng.gen_range(1..=10);
            w.step(u, k, &arms[0], &mut rng).unwrap();
        }
        let gts: BTreeSet<usize> = (1..=10).map(|u| w.gt_song(u)).collect();
        assert_eq!(gts.len(), 1);
    }

    #[test]
    fn invalid_worlds() {
        for cfg in [
            WorldConfig {
                popular: 0,
                ..WorldConfig::default()
            },
            WorldConfig {
                popular: 5,
                ..WorldConfig::default()
            },
            WorldConfig {
                fan_artist: 5,
                ..WorldConfig::default()
            },
            WorldConfig {
                songs: 3,
                ..WorldConfig::default()
            },
            WorldConfig {
                label_noise: 2.0,
                ..WorldConfig::default()
            },
        ] {
            assert!(MusicWorld::new(cfg).is_err());
        }
    }

    #[test]
    fn bundled_knowledge_parses() {
        for b in [Behavior::A, Behavior::B, Behavior::C] {
            assert!(!music_knowledge(b).rules.is_empty());
        }
    }
}
