//! Follow-the-perturbed-optimistic-policy for adversarial MDPs with an
//! unknown, fixed transition kernel.
//!
//! Episodes are grouped into epochs. Within an epoch the confidence set and
//! the perturbation `r_0` are frozen; each episode the agent plans with
//! extended value iteration on `r_0 + r_{1:t-1}`. An epoch ends once some
//! pair's within-epoch visits reach `max(1, N)` where `N` is its lifetime
//! visit count when the epoch began; the confidence set is then rebuilt and
//! `r_0` resampled.

use crate::confidence::{extended_value_iteration, ConfidenceSet, OptimisticPlan, VisitCounters};
use crate::error::{invalid, Error, Result};
use crate::fpl::leader_tensor;
use crate::mdp::{DeterministicPolicy, Dims, RewardTensor, TransitionKernel, Trajectory};
use crate::perturbation::{sample_exp_tensor, ExpParams};
use crate::rng::SeedRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpopSettings {
    pub dims: Dims,
    pub initial_state: usize,
    /// Planned number of episodes `T`; enters the confidence radii.
    pub episodes: usize,
    pub params: ExpParams,
    pub delta: f64,
}

impl FpopSettings {
    fn check(&self) -> Result<()> {
        if self.initial_state >= self.dims.states {
            return Err(invalid("initial_state", format!("state {} out of range", self.initial_state)));
        }
        if self.episodes == 0 {
            return Err(invalid("T", "need at least one episode"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// Emitted when an episode closes an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EpochEvent {
    /// Episode after which the new epoch starts.
    pub episode: usize,
    pub new_epoch: usize,
    /// Lowest-index pair that met the doubling condition.
    pub trigger: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct FpopAgent {
    settings: FpopSettings,
    rng: SeedRng,
    epoch: usize,
    counters: VisitCounters,
    epoch_start_visits: Vec<u64>,
    cset: ConfidenceSet,
    perturbation: RewardTensor,
    cumulative: RewardTensor,
    episode: usize,
    pinned: bool,
}

impl FpopAgent {
    /// Fresh agent: first epoch, unrestricted confidence set, `r_0` drawn from `rng`.
    pub fn new(settings: FpopSettings, rng: SeedRng) -> Result<Self> {
        settings.check()?;
        let d = settings.dims;
        let cset = ConfidenceSet::unrestricted(d.states, d.actions, settings.episodes, settings.delta)?;
        Ok(Self::assemble(settings, rng, cset, false))
    }

    /// Debug construction: the confidence set is pinned to `kernel` with zero
    /// radii and never refreshed, so the agent never resamples `r_0`. With
    /// the true kernel this reproduces FPL exactly.
    pub fn pinned(settings: FpopSettings, kernel: TransitionKernel, rng: SeedRng) -> Result<Self> {
        settings.check()?;
        if kernel.states() != settings.dims.states || kernel.actions() != settings.dims.actions {
            return Err(Error::DimensionMismatch {
                expected: settings.dims.to_string(),
                found: format!("kernel with S={} A={}", kernel.states(), kernel.actions()),
            });
        }
        Ok(Self::assemble(settings, rng, ConfidenceSet::pinned(kernel), true))
    }

    fn assemble(settings: FpopSettings, mut rng: SeedRng, cset: ConfidenceSet, pinned: bool) -> Self {
        let d = settings.dims;
        let perturbation = sample_exp_tensor(settings.params, d, &mut rng);
        Self {
            settings,
            rng,
            epoch: 1,
            counters: VisitCounters::new(d.states, d.actions),
            epoch_start_visits: vec![0; d.states * d.actions],
            cset,
            perturbation,
            cumulative: RewardTensor::zeros(d),
            episode: 1,
            pinned,
        }
    }

    /// Replaces the current `r_0`. Test hook for fixed perturbations.
    pub fn set_perturbation(&mut self, perturbation: RewardTensor) -> Result<()> {
        if perturbation.dims() != self.settings.dims {
            return Err(Error::DimensionMismatch {
                expected: self.settings.dims.to_string(),
                found: perturbation.dims().to_string(),
            });
        }
        perturbation.check_nonnegative()?;
        self.perturbation = perturbation;
        Ok(())
    }

    pub fn settings(&self) -> &FpopSettings {
        &self.settings
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    pub fn confidence_set(&self) -> &ConfidenceSet {
        &self.cset
    }

    pub fn counters(&self) -> &VisitCounters {
        &self.counters
    }

    pub fn perturbation(&self) -> &RewardTensor {
        &self.perturbation
    }

    pub fn cumulative(&self) -> &RewardTensor {
        &self.cumulative
    }

    /// Lifetime visit count of `(s, a)` when the current epoch began.
    pub fn epoch_start_visits(&self, state: usize, action: usize) -> u64 {
        self.epoch_start_visits[state * self.settings.dims.actions + action]
    }

    /// Optimistic plan on `r_0 + r_{1:t-1}` over the current confidence set.
    pub fn plan(&self) -> OptimisticPlan {
        let leader = leader_tensor(&self.perturbation, &self.cumulative);
        extended_value_iteration(&leader, &self.cset).expect("leader tensor is nonnegative and matches the set")
    }

    pub fn select_policy(&self) -> DeterministicPolicy {
        self.plan().into_policy()
    }

    /// `w_1(s_1)` of the current plan.
    pub fn optimistic_value(&self) -> f64 {
        self.plan().w(1, self.settings.initial_state)
    }

    /// Within-epoch counts never exceed the doubling threshold by more than
    /// one episode's worth of visits.
    pub fn epoch_counts_bounded(&self) -> bool {
        let d = self.settings.dims;
        (0..d.states).all(|s| {
            (0..d.actions).all(|a| {
                let threshold = self.epoch_start_visits(s, a).max(1);
                self.counters.epoch_visits(s, a) < threshold + d.horizon as u64
            })
        })
    }

    fn check_trajectory(&self, trajectory: &Trajectory) -> Result<()> {
        let d = self.settings.dims;
        if trajectory.len() != d.horizon {
            return Err(invalid(
                "trajectory",
                format!("expected {} steps, found {}", d.horizon, trajectory.len()),
            ));
        }
        if let Some((i, &(s, a))) =
            trajectory.steps.iter().enumerate().find(|(_, &(s, a))| s >= d.states || a >= d.actions)
        {
            return Err(invalid("trajectory", format!("step {} visits ({s},{a}) out of range", i + 1)));
        }
        Ok(())
    }

    /// Closes the current episode: records the trajectory, adds `r_t` to the
    /// history and starts a new epoch when the doubling condition fires.
    pub fn end_episode(&mut self, trajectory: &Trajectory, reward: &RewardTensor) -> Result<Option<EpochEvent>> {
        if reward.dims() != self.settings.dims {
            return Err(Error::DimensionMismatch {
                expected: self.settings.dims.to_string(),
                found: reward.dims().to_string(),
            });
        }
        reward.check_unit_range()?;
        self.check_trajectory(trajectory)?;

        self.cumulative.add_assign(reward)?;
        self.counters.update(trajectory);
        let finished = self.episode;
        self.episode += 1;
        if self.pinned {
            return Ok(None);
        }

        let d = self.settings.dims;
        let trigger = (0..d.states)
            .flat_map(|s| (0..d.actions).map(move |a| (s, a)))
            .find(|&(s, a)| self.counters.epoch_visits(s, a) >= self.epoch_start_visits(s, a).max(1));
        let Some(trigger) = trigger else {
            return Ok(None);
        };

        self.epoch += 1;
        self.cset = ConfidenceSet::from_counters(&self.counters, self.settings.episodes, self.settings.delta, self.epoch)?;
        self.epoch_start_visits.copy_from_slice(self.counters.all_visits());
        self.counters.reset_epoch();
        self.perturbation = sample_exp_tensor(self.settings.params, d, &mut self.rng);
        Ok(Some(EpochEvent {
            episode: finished,
            new_epoch: self.epoch,
            trigger,
        }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecommendedParams {
    pub eta: f64,
    pub delta: f64,
    /// Set when `eta > H^-2`, outside the regime the stability argument covers.
    pub eta_exceeds_limit: bool,
}

/// `eta = sqrt(S A / (H^2 T))`, `delta = 1 / (H T)`.
pub fn recommended_params(states: usize, actions: usize, horizon: usize, episodes: usize) -> Result<RecommendedParams> {
    if states == 0 || actions == 0 || horizon == 0 || episodes == 0 {
        return Err(invalid("recommended_params", "S, A, H, T must all be at least 1"));
    }
    let (s, a, h, t) = (states as f64, actions as f64, horizon as f64, episodes as f64);
    let eta = (s * a / (h * h * t)).sqrt();
    Ok(RecommendedParams {
        eta,
        delta: 1.0 / (h * t),
        eta_exceeds_limit: eta > 1.0 / (h * h),
    })
}
