//! Oblivious reward-sequence generators and the experts encoding.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::mdp::{DeterministicPolicy, Dims, MdpSpec, RewardTensor, TransitionKernel};
use crate::rng;

/// A reward sequence fixed before the run starts: `next_reward(t)` depends on
/// the episode index only.
#[derive(Debug, Clone, PartialEq)]
pub enum AdversarySpec {
    Constant(RewardTensor),
    /// Fresh uniform `[0, 1]` entries each episode from the adversary's own stream.
    IidUniform { dims: Dims, seed: u64 },
    /// Reward 1 on action `floor((t - 1) / period) mod A` at every `(s, h)`, 0 elsewhere.
    Switching { dims: Dims, period: usize },
    Replay(Arc<ReplayTape>),
}

impl AdversarySpec {
    pub fn switching(dims: Dims, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(invalid("period", "switch period must be positive"));
        }
        Ok(Self::Switching { dims, period })
    }

    pub fn constant(reward: RewardTensor) -> Result<Self> {
        reward.check_unit_range()?;
        Ok(Self::Constant(reward))
    }

    pub fn dims(&self) -> Dims {
        match self {
            Self::Constant(r) => r.dims(),
            Self::IidUniform { dims, .. } | Self::Switching { dims, .. } => *dims,
            Self::Replay(tape) => tape.dims,
        }
    }

    /// Reward tensor of episode `t` (1-based).
    pub fn next_reward(&self, t: usize) -> Result<RewardTensor> {
        if t == 0 {
            return Err(invalid("t", "episodes are numbered from 1"));
        }
        match self {
            Self::Constant(r) => Ok(r.clone()),
            Self::IidUniform { dims, seed } => {
                let mut stream = rng::stream(*seed, t as u64);
                Ok(RewardTensor::from_fn(*dims, |_, _, _| stream.gen::<f64>()))
            }
            Self::Switching { dims, period } => {
                let active = ((t - 1) / period) % dims.actions;
                Ok(RewardTensor::from_fn(*dims, |_, a, _| if a == active { 1.0 } else { 0.0 }))
            }
            Self::Replay(tape) => tape.episode(t).cloned(),
        }
    }
}

/// Reward tensors read from a replay file.
///
/// The format is a header line `T S A H` followed by `T` blocks of `S*A*H`
/// whitespace-separated values in `(h, s, a)` order, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTape {
    dims: Dims,
    rewards: Vec<RewardTensor>,
}

impl ReplayTape {
    pub fn new(dims: Dims, rewards: Vec<RewardTensor>) -> Result<Self> {
        for r in &rewards {
            if r.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims.to_string(),
                    found: r.dims().to_string(),
                });
            }
            r.check_unit_range()?;
        }
        Ok(Self { dims, rewards })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text
            .lines()
            .enumerate()
            .flat_map(|(i, line)| line.split('#').next().unwrap_or("").split_whitespace().map(move |tok| (i + 1, tok)));
        let mut header = [0usize; 4];
        for (slot, name) in header.iter_mut().zip(["T", "S", "A", "H"]) {
            let (line, tok) = tokens.next().ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("header is missing `{name}`"),
            })?;
            *slot = tok.parse().map_err(|_| Error::Parse {
                line,
                message: format!("`{name}` expects a nonnegative integer, got `{tok}`"),
            })?;
        }
        let [episodes, states, actions, horizon] = header;
        let dims = Dims::new(states, actions, horizon)?;
        let mut rewards = Vec::with_capacity(episodes);
        for t in 1..=episodes {
            let mut values = Vec::with_capacity(dims.len());
            for _ in 0..dims.len() {
                let (line, tok) = tokens.next().ok_or_else(|| Error::Parse {
                    line: 0,
                    message: format!("episode {t} block is truncated"),
                })?;
                let v: f64 = tok.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("not a number: `{tok}`"),
                })?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parse {
                        line,
                        message: format!("reward {v} outside [0, 1]"),
                    });
                }
                values.push(v);
            }
            rewards.push(RewardTensor::from_values(dims, values)?);
        }
        if let Some((line, tok)) = tokens.next() {
            return Err(Error::Parse {
                line,
                message: format!("trailing data after {episodes} episodes: `{tok}`"),
            });
        }
        Ok(Self { dims, rewards })
    }

    pub fn render(&self) -> String {
        let d = self.dims;
        let mut out = format!("{} {} {} {}\n", self.rewards.len(), d.states, d.actions, d.horizon);
        for r in &self.rewards {
            let row: Vec<String> = r.as_slice().iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn episode(&self, t: usize) -> Result<&RewardTensor> {
        self.rewards.get(t.wrapping_sub(1)).ok_or(Error::ReplayExhausted {
            requested: t,
            available: self.rewards.len(),
        })
    }
}

/// Reads a replay file. I/O failures are returned separately from format errors.
pub fn load_replay(path: &Path) -> std::io::Result<Result<ReplayTape>> {
    let text = std::fs::read_to_string(path)?;
    Ok(ReplayTape::parse(&text))
}

/// Prediction with expert advice: `n` experts, one loss vector per round.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertsInstance {
    pub experts: usize,
    pub losses: Vec<Vec<f64>>,
}

/// Encodes an experts problem as a one-state, one-layer MDP with `n` actions
/// and rewards `1 - loss`.
pub fn experts_as_mdp(instance: &ExpertsInstance) -> Result<(MdpSpec, AdversarySpec)> {
    let n = instance.experts;
    if n == 0 {
        return Err(invalid("experts", "need at least one expert"));
    }
    let dims = Dims::new(1, n, 1)?;
    let mut rewards = Vec::with_capacity(instance.losses.len());
    for (round, losses) in instance.losses.iter().enumerate() {
        if losses.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} losses"),
                found: format!("{} losses in round {}", losses.len(), round + 1),
            });
        }
        if let Some(&bad) = losses.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(invalid("loss", format!("round {}: loss {bad} outside [0, 1]", round + 1)));
        }
        rewards.push(RewardTensor::from_values(dims, losses.iter().map(|l| 1.0 - l).collect())?);
    }
    let spec = MdpSpec::new(1, TransitionKernel::uniform(1, n), 0)?;
    Ok((spec, AdversarySpec::Replay(Arc::new(ReplayTape::new(dims, rewards)?))))
}

/// Anything the harness can draw episode rewards from.
pub trait RewardSource {
    /// Reward of episode `t`; `played` is the policy the agent committed to.
    fn reward(&mut self, t: usize, played: &DeterministicPolicy) -> Result<RewardTensor>;

    /// False for sources that react to the agent. No regret guarantee applies to those.
    fn is_oblivious(&self) -> bool {
        true
    }
}

impl RewardSource for AdversarySpec {
    fn reward(&mut self, t: usize, _played: &DeterministicPolicy) -> Result<RewardTensor> {
        self.next_reward(t)
    }
}

/// Adaptive source that sees the played policy.
pub struct Adaptive<F>(pub F);

impl<F> RewardSource for Adaptive<F>
where
    F: FnMut(usize, &DeterministicPolicy) -> RewardTensor,
{
    fn reward(&mut self, t: usize, played: &DeterministicPolicy) -> Result<RewardTensor> {
        let r = (self.0)(t, played);
        r.check_unit_range()?;
        Ok(r)
    }

    fn is_oblivious(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{accumulate, opt_in_hindsight};

    fn d(s: usize, a: usize, h: usize) -> Dims {
        Dims::new(s, a, h).unwrap()
    }

    #[test]
    fn constant_repeats() {
        let r = RewardTensor::from_fn(d(2, 2, 2), |s, a, h| (s + a + h) as f64 / 6.0);
        let adv = AdversarySpec::constant(r.clone()).unwrap();
        for t in 1..10 {
            assert_eq!(adv.next_reward(t).unwrap(), r);
        }
        assert!(AdversarySpec::constant(RewardTensor::filled(d(1, 1, 1), 1.5)).is_err());
    }

    #[test]
    fn switching_period_one_alternates() {
        let adv = AdversarySpec::switching(d(1, 2, 1), 1).unwrap();
        let seq: Vec<Vec<f64>> = (1..=4).map(|t| adv.next_reward(t).unwrap().as_slice().to_vec()).collect();
        assert_eq!(seq, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn switching_with_full_period_is_constant() {
        let t_total = 37;
        let adv = AdversarySpec::switching(d(2, 3, 2), t_total).unwrap();
        let first = adv.next_reward(1).unwrap();
        assert!((1..=t_total).all(|t| adv.next_reward(t).unwrap() == first));
        assert_eq!(first.get(1, 0, 2), 1.0);
        assert_eq!(first.get(1, 1, 2), 0.0);
        assert!(AdversarySpec::switching(d(1, 2, 1), 0).is_err());
    }

    #[test]
    fn iid_uniform_is_pure_in_t() {
        let adv = AdversarySpec::IidUniform { dims: d(3, 2, 2), seed: 5 };
        let a = adv.next_reward(7).unwrap();
        let _ = adv.next_reward(3).unwrap();
        assert_eq!(adv.next_reward(7).unwrap(), a);
        assert_ne!(adv.next_reward(8).unwrap(), a);
        assert!(a.check_unit_range().is_ok());
    }

    #[test]
    fn replay_roundtrip_and_exhaustion() {
        let dims = d(1, 2, 2);
        let tape = ReplayTape::new(
            dims,
            vec![RewardTensor::filled(dims, 0.25), RewardTensor::from_fn(dims, |_, a, h| (a * h) as f64 / 2.0)],
        )
        .unwrap();
        let parsed = ReplayTape::parse(&tape.render()).unwrap();
        assert_eq!(parsed, tape);
        let adv = AdversarySpec::Replay(Arc::new(parsed));
        assert_eq!(adv.next_reward(2).unwrap().get(0, 1, 2), 1.0);
        assert_eq!(
            adv.next_reward(3).unwrap_err(),
            Error::ReplayExhausted { requested: 3, available: 2 }
        );
    }

    #[test]
    fn replay_format_errors() {
        assert!(matches!(ReplayTape::parse("2 1 2"), Err(Error::Parse { .. })));
        assert!(matches!(ReplayTape::parse("1 1 2 1\n0.5"), Err(Error::Parse { .. })));
        assert!(matches!(ReplayTape::parse("1 1 2 1\n0.5 1.5"), Err(Error::Parse { .. })));
        assert!(matches!(ReplayTape::parse("1 1 2 1\n0.5 x"), Err(Error::Parse { .. })));
        assert!(matches!(ReplayTape::parse("1 1 2 1\n0.5 0.5 0.5"), Err(Error::Parse { .. })));
        assert!(ReplayTape::parse("# comment\n1 1 2 1\n0.5 0.5 # trailing\n").is_ok());
    }

    #[test]
    fn experts_encoding() {
        let inst = ExpertsInstance { experts: 2, losses: vec![vec![0.0, 1.0]] };
        let (spec, adv) = experts_as_mdp(&inst).unwrap();
        assert_eq!(spec.dims(), d(1, 2, 1));
        assert_eq!(adv.next_reward(1).unwrap().as_slice(), &[1.0, 0.0]);

        let bad = ExpertsInstance { experts: 2, losses: vec![vec![0.0, 1.2]] };
        assert!(experts_as_mdp(&bad).is_err());
        assert!(experts_as_mdp(&ExpertsInstance { experts: 0, losses: vec![] }).is_err());
    }

    #[test]
    fn experts_opt_is_best_expert() {
        let losses: Vec<Vec<f64>> = (0..40)
            .map(|t| (0..5).map(|i| ((t * 7 + i * 3) % 11) as f64 / 10.0).collect())
            .collect();
        let inst = ExpertsInstance { experts: 5, losses: losses.clone() };
        let (spec, adv) = experts_as_mdp(&inst).unwrap();
        let rewards: Vec<RewardTensor> = (1..=40).map(|t| adv.next_reward(t).unwrap()).collect();
        let total = accumulate(spec.dims(), &rewards).unwrap();
        let (opt, _) = opt_in_hindsight(&total, spec.kernel(), 0).unwrap();
        let best = (0..5)
            .map(|i| losses.iter().map(|l| 1.0 - l[i]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(opt, best);
    }

    #[test]
    fn adaptive_sources_are_flagged() {
        let dims = d(1, 2, 1);
        let mut src = Adaptive(|_t: usize, played: &DeterministicPolicy| {
            RewardTensor::from_fn(dims, |_, a, _| if a == played.action(0, 1) { 0.0 } else { 1.0 })
        });
        assert!(!src.is_oblivious());
        let p = DeterministicPolicy::constant(dims, 1).unwrap();
        assert_eq!(src.reward(1, &p).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(AdversarySpec::switching(dims, 2).unwrap().is_oblivious());
    }
}
