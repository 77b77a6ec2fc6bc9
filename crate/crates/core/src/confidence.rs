//! Visit counting, empirical transition estimates, L1 confidence sets and
//! extended value iteration.
//!
//! Extended value iteration plans against the most favourable kernel inside
//! the confidence set: for each `(s, a)` it moves up to `b(s,a)/2` probability
//! mass onto the state with the highest next-layer value and takes it from the
//! lowest-valued states. States are re-sorted at every layer, so the
//! maximizing kernel is kept per layer.

use crate::error::{invalid, Result};
use crate::mdp::{
    check_reward_kernel, evaluate_with, greedy_layer, DeterministicPolicy, OpCounter, RewardTensor,
    TransitionKernel, Trajectory, ValueTables,
};

/// Lifetime and within-epoch visit counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VisitCounters {
    states: usize,
    actions: usize,
    visits: Vec<u64>,
    transitions: Vec<u64>,
    epoch_visits: Vec<u64>,
}

impl VisitCounters {
    pub fn new(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            visits: vec![0; states * actions],
            transitions: vec![0; states * actions * states],
            epoch_visits: vec![0; states * actions],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    #[inline]
    fn pair(&self, state: usize, action: usize) -> usize {
        state * self.actions + action
    }

    /// Records one episode. Every step counts as a visit; only steps before
    /// the last layer record a successor.
    pub fn update(&mut self, trajectory: &Trajectory) {
        let steps = &trajectory.steps;
        for (i, &(s, a)) in steps.iter().enumerate() {
            let p = self.pair(s, a);
            self.visits[p] += 1;
            self.epoch_visits[p] += 1;
            if let Some(&(next, _)) = steps.get(i + 1) {
                self.transitions[p * self.states + next] += 1;
            }
        }
    }

    /// Lifetime visits `N(s,a)`.
    pub fn visits(&self, state: usize, action: usize) -> u64 {
        self.visits[self.pair(state, action)]
    }

    /// Lifetime transitions `N(s,a,s')`.
    pub fn transitions(&self, state: usize, action: usize, next: usize) -> u64 {
        self.transitions[self.pair(state, action) * self.states + next]
    }

    /// Number of observed successors of `(s, a)`, i.e. visits before the last layer.
    pub fn successors(&self, state: usize, action: usize) -> u64 {
        let start = self.pair(state, action) * self.states;
        self.transitions[start..start + self.states].iter().sum()
    }

    /// Within-epoch visits `n(s,a)`.
    pub fn epoch_visits(&self, state: usize, action: usize) -> u64 {
        self.epoch_visits[self.pair(state, action)]
    }

    pub fn all_visits(&self) -> &[u64] {
        &self.visits
    }

    pub fn reset_epoch(&mut self) {
        self.epoch_visits.iter_mut().for_each(|n| *n = 0);
    }
}

/// Empirical kernel `N(s,a,s') / sum_s'' N(s,a,s'')`; rows without any
/// observed successor are uniform.
pub fn empirical_kernel(counters: &VisitCounters) -> TransitionKernel {
    let (states, actions) = (counters.states, counters.actions);
    let mut probs = Vec::with_capacity(states * actions * states);
    for s in 0..states {
        for a in 0..actions {
            let total = counters.successors(s, a);
            if total == 0 {
                probs.extend(std::iter::repeat(1.0 / states as f64).take(states));
            } else {
                probs.extend((0..states).map(|next| counters.transitions(s, a, next) as f64 / total as f64));
            }
        }
    }
    TransitionKernel::from_rows_unchecked(states, actions, probs)
}

/// L1 radius `sqrt(2 S ln(S A T / delta) / max(1, n))`.
pub fn radius(count: u64, states: usize, actions: usize, episodes: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if states == 0 || actions == 0 || episodes == 0 {
        return Err(invalid("radius", "S, A, T must all be at least 1"));
    }
    let s = states as f64;
    let log_term = (s * actions as f64 * episodes as f64 / delta).ln();
    Ok((2.0 * s * log_term / count.max(1) as f64).sqrt())
}

/// Per-`(s,a)` L1 balls around an empirical kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    center: TransitionKernel,
    radii: Vec<f64>,
    epoch: usize,
    sample_counts: Vec<u64>,
}

impl ConfidenceSet {
    /// The set of all kernels: uniform center with the zero-count radius everywhere.
    pub fn unrestricted(states: usize, actions: usize, episodes: usize, delta: f64) -> Result<Self> {
        let r = radius(0, states, actions, episodes, delta)?;
        Ok(Self {
            center: TransitionKernel::uniform(states, actions),
            radii: vec![r; states * actions],
            epoch: 1,
            sample_counts: vec![0; states * actions],
        })
    }

    /// Rebuilds the set from lifetime counts. Each ball's size is driven by the
    /// number of observed successors of the pair.
    pub fn from_counters(counters: &VisitCounters, episodes: usize, delta: f64, epoch: usize) -> Result<Self> {
        let (states, actions) = (counters.states, counters.actions);
        let mut radii = Vec::with_capacity(states * actions);
        let mut sample_counts = Vec::with_capacity(states * actions);
        for s in 0..states {
            for a in 0..actions {
                let n = counters.successors(s, a);
                sample_counts.push(n);
                radii.push(radius(n, states, actions, episodes, delta)?);
            }
        }
        Ok(Self {
            center: empirical_kernel(counters),
            radii,
            epoch,
            sample_counts,
        })
    }

    /// Zero-radius set pinned at `kernel`.
    pub fn pinned(kernel: TransitionKernel) -> Self {
        let pairs = kernel.states() * kernel.actions();
        Self {
            center: kernel,
            radii: vec![0.0; pairs],
            epoch: 1,
            sample_counts: vec![0; pairs],
        }
    }

    pub fn center(&self) -> &TransitionKernel {
        &self.center
    }

    pub fn radius(&self, state: usize, action: usize) -> f64 {
        self.radii[state * self.center.actions() + action]
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Successor counts the radii were computed from.
    pub fn sample_counts(&self) -> &[u64] {
        &self.sample_counts
    }

    /// Whether every row of `kernel` lies in its ball.
    pub fn contains(&self, kernel: &TransitionKernel) -> bool {
        (0..self.center.states()).all(|s| {
            (0..self.center.actions()).all(|a| self.center.row_l1_distance(kernel, s, a) <= self.radius(s, a))
        })
    }
}

/// States sorted by descending value; equal values keep index order.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    order
}

/// The distribution in the L1 ball of radius `b` around `p_row` that
/// maximizes the expectation of `w_next`.
pub fn optimistic_row(p_row: &[f64], b: f64, w_next: &[f64]) -> Vec<f64> {
    optimistic_row_ordered(p_row, b, &descending_order(w_next))
}

fn optimistic_row_ordered(p_row: &[f64], b: f64, order: &[usize]) -> Vec<f64> {
    let mut q = p_row.to_vec();
    if !(b > 0.0) || q.len() < 2 {
        return q;
    }
    let top = order[0];
    q[top] = (p_row[top] + b / 2.0).min(1.0);
    let mut excess = q[top] - p_row[top];
    for &j in order[1..].iter().rev() {
        if excess <= 0.0 {
            break;
        }
        let cut = q[j].min(excess);
        q[j] -= cut;
        excess -= cut;
    }
    q
}

/// Output of extended value iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimisticPlan {
    policy: DeterministicPolicy,
    tables: ValueTables,
    layered: Vec<TransitionKernel>,
}

impl OptimisticPlan {
    pub fn policy(&self) -> &DeterministicPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> DeterministicPolicy {
        self.policy
    }

    /// `w_h(s)`, with `w_{H+1} = 0`.
    pub fn w(&self, layer: usize, state: usize) -> f64 {
        self.tables.v(layer, state)
    }

    pub fn tables(&self) -> &ValueTables {
        &self.tables
    }

    /// The maximizing kernel used at `layer`.
    pub fn transition(&self, layer: usize) -> &TransitionKernel {
        &self.layered[layer - 1]
    }

    /// Value of `policy` under `reward` and the layered optimistic kernels.
    pub fn evaluate(&self, reward: &RewardTensor, policy: &DeterministicPolicy, start: usize) -> f64 {
        evaluate_with(reward, policy, start, |h, s, a| self.layered[h - 1].row(s, a))
    }

    /// Value of the plan's own policy under `reward` and its optimistic kernels.
    pub fn optimistic_value(&self, reward: &RewardTensor, start: usize) -> f64 {
        self.evaluate(reward, &self.policy, start)
    }
}

pub fn extended_value_iteration(reward: &RewardTensor, cset: &ConfidenceSet) -> Result<OptimisticPlan> {
    extended_value_iteration_counted(reward, cset, &mut OpCounter::default())
}

pub fn extended_value_iteration_counted(
    reward: &RewardTensor,
    cset: &ConfidenceSet,
    counter: &mut OpCounter,
) -> Result<OptimisticPlan> {
    check_reward_kernel(reward, &cset.center)?;
    reward.check_nonnegative()?;
    let dims = reward.dims();
    let (states, actions) = (dims.states, dims.actions);
    let mut tables = ValueTables::zeros(dims);
    let mut policy = DeterministicPolicy::empty(dims);
    let mut layered = Vec::with_capacity(dims.horizon);

    for layer in (1..=dims.horizon).rev() {
        let order = descending_order(tables.v_layer(layer + 1));
        let mut rows = Vec::with_capacity(states * actions * states);
        for s in 0..states {
            for a in 0..actions {
                rows.extend(optimistic_row_ordered(cset.center.row(s, a), cset.radius(s, a), &order));
            }
        }
        let kernel = TransitionKernel::from_rows_unchecked(states, actions, rows);
        greedy_layer(reward, layer, |s, a| kernel.row(s, a), &mut tables, &mut policy, counter);
        layered.push(kernel);
    }
    layered.reverse();
    Ok(OptimisticPlan {
        policy,
        tables,
        layered,
    })
}
