//! Follow-the-perturbed-leader for adversarial MDPs with a known kernel.
//!
//! A perturbation tensor `r_0 ~ Exp(eta)^{SAH}` is drawn once. Each episode
//! the agent plays the greedy policy on `r_0 + r_{1:t-1}`, recomputed from
//! scratch with one backward value-iteration pass.

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::mdp::{value_iteration_counted, DeterministicPolicy, MdpSpec, OpCounter, RewardTensor, ValueTables};
use crate::perturbation::{sample_exp_tensor, ExpParams};

#[derive(Debug, Clone)]
pub struct FplAgent {
    spec: MdpSpec,
    params: ExpParams,
    perturbation: RewardTensor,
    cumulative: RewardTensor,
    episode: usize,
}

impl FplAgent {
    pub fn new<R: Rng + ?Sized>(spec: MdpSpec, params: ExpParams, rng: &mut R) -> Self {
        let perturbation = sample_exp_tensor(params, spec.dims(), rng);
        Self::assemble(spec, params, perturbation)
    }

    /// Builds an agent around a caller-chosen `r_0`. Intended for tests and
    /// oracles that need a fixed perturbation.
    pub fn with_perturbation(spec: MdpSpec, params: ExpParams, perturbation: RewardTensor) -> Result<Self> {
        if perturbation.dims() != spec.dims() {
            return Err(Error::DimensionMismatch {
                expected: spec.dims().to_string(),
                found: perturbation.dims().to_string(),
            });
        }
        perturbation.check_nonnegative()?;
        Ok(Self::assemble(spec, params, perturbation))
    }

    fn assemble(spec: MdpSpec, params: ExpParams, perturbation: RewardTensor) -> Self {
        let cumulative = RewardTensor::zeros(spec.dims());
        Self {
            spec,
            params,
            perturbation,
            cumulative,
            episode: 1,
        }
    }

    pub fn spec(&self) -> &MdpSpec {
        &self.spec
    }

    pub fn params(&self) -> ExpParams {
        self.params
    }

    pub fn perturbation(&self) -> &RewardTensor {
        &self.perturbation
    }

    /// `r_{1:t-1}`.
    pub fn cumulative(&self) -> &RewardTensor {
        &self.cumulative
    }

    /// Index `t` of the episode about to be played.
    pub fn episode(&self) -> usize {
        self.episode
    }

    /// `r_0 + r_{1:t-1}`.
    pub fn leader(&self) -> RewardTensor {
        leader_tensor(&self.perturbation, &self.cumulative)
    }

    pub fn select_policy(&self) -> DeterministicPolicy {
        self.plan(&mut OpCounter::default()).0
    }

    /// Greedy policy and value tables on the perturbed leader, counting work into `counter`.
    pub fn plan(&self, counter: &mut OpCounter) -> (DeterministicPolicy, ValueTables) {
        value_iteration_counted(&self.leader(), self.spec.kernel(), counter)
            .expect("leader tensor is nonnegative and matches the kernel")
    }

    /// Full-information update with the revealed reward tensor.
    pub fn observe(&mut self, reward: &RewardTensor) -> Result<()> {
        if reward.dims() != self.spec.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.spec.dims().to_string(),
                found: reward.dims().to_string(),
            });
        }
        reward.check_unit_range()?;
        self.cumulative.add_assign(reward)?;
        self.episode += 1;
        Ok(())
    }
}

pub(crate) fn leader_tensor(perturbation: &RewardTensor, cumulative: &RewardTensor) -> RewardTensor {
    perturbation
        .sum(cumulative)
        .expect("perturbation and cumulative share dimensions")
}

/// `sqrt((1 + ln(S A)) / (H^2 T))`.
pub fn recommended_eta(states: usize, actions: usize, horizon: usize, episodes: usize) -> Result<f64> {
    if states == 0 || actions == 0 || horizon == 0 || episodes == 0 {
        return Err(invalid("recommended_eta", "S, A, H, T must all be at least 1"));
    }
    let (s, a, h, t) = (states as f64, actions as f64, horizon as f64, episodes as f64);
    Ok(((1.0 + (s * a).ln()) / (h * h * t)).sqrt())
}
