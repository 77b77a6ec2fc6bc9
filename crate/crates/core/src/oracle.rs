//! Independent oracles: exhaustive search, grid search, closed forms and
//! Monte Carlo estimators. Agents never call into this module; the oracles
//! only use the agents' public planning and update operations.

use rand::{Rng, RngCore};
use rayon::prelude::*;

use crate::confidence::{extended_value_iteration, ConfidenceSet};
use crate::error::{invalid, Error, Result};
use crate::fpl::FplAgent;
use crate::mdp::{
    accumulate, opt_in_hindsight, policy_value, DeterministicPolicy, Dims, MdpSpec, RewardTensor, TransitionKernel,
};
use crate::perturbation::{sample_exp_tensor, ExpParams};
use crate::rng::{self, SeedRng};

/// Largest policy space `brute_force_opt` will enumerate.
pub const MAX_ENUMERATED_POLICIES: u128 = 1 << 20;

/// Monte Carlo slack in standard errors.
pub const MC_SIGMAS: f64 = 4.0;

const MC_CHUNKS: u64 = 64;

/// Value of `policy` by pushing the state distribution forward layer by layer.
pub fn forward_policy_value(
    reward: &RewardTensor,
    kernel: &TransitionKernel,
    policy: &DeterministicPolicy,
    start: usize,
) -> f64 {
    let d = reward.dims();
    let mut occupancy = vec![0.0; d.states];
    occupancy[start] = 1.0;
    let mut total = 0.0;
    for h in 1..=d.horizon {
        let mut next = vec![0.0; d.states];
        for (s, &mass) in occupancy.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let a = policy.action(s, h);
            total += mass * reward.get(s, a, h);
            for (n, p) in kernel.row(s, a).iter().enumerate() {
                next[n] += mass * p;
            }
        }
        occupancy = next;
    }
    total
}

/// Best fixed-policy value found by evaluating every deterministic policy.
pub fn brute_force_opt(cumulative: &RewardTensor, kernel: &TransitionKernel, start: usize) -> Result<f64> {
    let d = cumulative.dims();
    let cells = (d.states * d.horizon) as u32;
    let count = (d.actions as u128).checked_pow(cells).filter(|&n| n <= MAX_ENUMERATED_POLICIES);
    let Some(count) = count else {
        return Err(Error::InstanceTooLarge(format!(
            "A^(S*H) = {}^{} policies exceeds 2^20 ({d})",
            d.actions, cells
        )));
    };
    let mut best = f64::NEG_INFINITY;
    for code in 0..count {
        let mut c = code;
        let policy = DeterministicPolicy::from_fn(d, |_, _| {
            let a = (c % d.actions as u128) as usize;
            c /= d.actions as u128;
            a
        })?;
        best = best.max(policy_value(cumulative, kernel, &policy, start)?);
    }
    Ok(best)
}

/// Grid search for `max q.w` over distributions `q` with `|q - p_row|_1 <= b`.
///
/// One coordinate is left free and fixed by the sum constraint; the others
/// range over `p_i + k * resolution` plus the endpoints 0 and 1. Every free
/// coordinate is tried, so the optimum is found to within one grid step.
pub fn grid_l1_ball_max(p_row: &[f64], b: f64, w: &[f64], resolution: f64) -> Result<f64> {
    let n = p_row.len();
    if n == 0 || n > 3 || w.len() != n {
        return Err(invalid("p_row", format!("grid oracle supports 1 to 3 states, got {n}")));
    }
    if !(resolution > 0.0 && resolution <= 0.1) {
        return Err(invalid("resolution", format!("must lie in (0, 0.1], got {resolution}")));
    }
    if !(b >= 0.0) {
        return Err(invalid("b", format!("radius must be nonnegative, got {b}")));
    }
    const SLACK: f64 = 1e-12;
    let reach = (b / 2.0).min(1.0);
    let steps = (reach / resolution).ceil() as i64 + 1;
    let candidates: Vec<Vec<f64>> = p_row
        .iter()
        .map(|&p| {
            let mut c: Vec<f64> = (-steps..=steps)
                .map(|k| p + k as f64 * resolution)
                .filter(|q| (0.0..=1.0).contains(q))
                .collect();
            c.extend([0.0, 1.0]);
            c
        })
        .collect();

    let mut best = f64::NEG_INFINITY;
    for free in 0..n {
        let others: Vec<usize> = (0..n).filter(|&i| i != free).collect();
        let mut q = vec![0.0; n];
        let mut visit = |q: &mut [f64]| {
            let rest: f64 = others.iter().map(|&i| q[i]).sum();
            q[free] = 1.0 - rest;
            if q[free] < -SLACK {
                return;
            }
            let dist: f64 = q.iter().zip(p_row).map(|(x, p)| (x - p).abs()).sum();
            if dist <= b + SLACK {
                let value: f64 = q.iter().zip(w).map(|(x, y)| x * y).sum();
                best = best.max(value);
            }
        };
        match others.as_slice() {
            [] => visit(&mut q),
            [i] => {
                for &x in &candidates[*i] {
                    q[*i] = x;
                    visit(&mut q);
                }
            }
            [i, j] => {
                for &x in &candidates[*i] {
                    for &y in &candidates[*j] {
                        q[*i] = x;
                        q[*j] = y;
                        visit(&mut q);
                    }
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(best)
}

/// Probability that FPL picks the action leading by `lead` in a one-state,
/// one-layer, two-action problem: the difference of two `Exp(eta)` draws is
/// Laplace with scale `1 / eta`, giving `1 - exp(-eta * lead) / 2`.
pub fn two_action_choice_prob(lead: f64, params: ExpParams) -> Result<f64> {
    if !(lead >= 0.0) {
        return Err(invalid("lead", format!("must be nonnegative (swap the actions), got {lead}")));
    }
    Ok(1.0 - 0.5 * (-params.eta() * lead).exp())
}

/// Frequencies of `pi(s, h) = a` over perturbation resamples.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionProbTable {
    dims: Dims,
    counts: Vec<u64>,
    samples: u64,
}

impl ActionProbTable {
    fn new(dims: Dims) -> Self {
        Self {
            dims,
            counts: vec![0; dims.len()],
            samples: 0,
        }
    }

    fn index(&self, state: usize, layer: usize, action: usize) -> usize {
        ((layer - 1) * self.dims.states + state) * self.dims.actions + action
    }

    fn record(&mut self, policy: &DeterministicPolicy) {
        for h in 1..=self.dims.horizon {
            for s in 0..self.dims.states {
                let i = self.index(s, h, policy.action(s, h));
                self.counts[i] += 1;
            }
        }
        self.samples += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        for (x, y) in self.counts.iter_mut().zip(&other.counts) {
            *x += y;
        }
        self.samples += other.samples;
        self
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    pub fn prob(&self, state: usize, layer: usize, action: usize) -> f64 {
        self.counts[self.index(state, layer, action)] as f64 / self.samples as f64
    }

    /// Binomial standard error of [`Self::prob`].
    pub fn stderr(&self, state: usize, layer: usize, action: usize) -> f64 {
        let p = self.prob(state, layer, action);
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }
}

fn check_samples(samples: u64) -> Result<()> {
    if samples < 10_000 {
        return Err(invalid("samples", format!("need at least 10^4 samples, got {samples}")));
    }
    Ok(())
}

fn chunk_sizes(samples: u64) -> impl ParallelIterator<Item = (u64, u64)> {
    (0..MC_CHUNKS).into_par_iter().map(move |chunk| {
        let size = samples / MC_CHUNKS + u64::from(chunk < samples % MC_CHUNKS);
        (chunk, size)
    })
}

/// Builds `samples` fresh FPL agents (each with its own `r_0`), feeds each the
/// same history and tallies the resulting policies.
pub fn mc_action_probs<F, R>(
    agent_factory: F,
    history: &[RewardTensor],
    samples: u64,
    rng: &mut R,
) -> Result<ActionProbTable>
where
    F: Fn(&mut SeedRng) -> FplAgent + Sync,
    R: RngCore + ?Sized,
{
    check_samples(samples)?;
    let base = rng.next_u64();
    let dims = agent_factory(&mut rng::stream(base, u64::MAX)).spec().dims();
    chunk_sizes(samples)
        .map(|(chunk, size)| -> Result<ActionProbTable> {
            let mut stream = rng::stream(base, chunk);
            let mut table = ActionProbTable::new(dims);
            for _ in 0..size {
                let mut agent = agent_factory(&mut stream);
                for r in history {
                    agent.observe(r)?;
                }
                table.record(&agent.select_policy());
            }
            Ok(table)
        })
        .try_reduce(|| ActionProbTable::new(dims), |a, b| Ok(a.merge(b)))
}

/// One `(s, h, a)` comparison of two action distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioEntry {
    pub state: usize,
    pub layer: usize,
    pub action: usize,
    pub prob_current: f64,
    pub prob_next: f64,
    pub ratio: f64,
    pub stderr: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
}

/// Comparison of expected values of the two policies on the extra reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueComparison {
    pub current: f64,
    pub next: f64,
    /// Allowed factor on `current`.
    pub factor: f64,
    /// Standard error of `next - factor * current`.
    pub stderr: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioReport {
    pub samples: u64,
    pub noise_floor: f64,
    pub entries: Vec<RatioEntry>,
    pub value: Option<ValueComparison>,
}

impl RatioReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.pass) && self.value.as_ref().is_none_or(|v| v.pass)
    }
}

/// Per-sample pair of policies (before and after one extra episode) and
/// their values on that episode's reward.
struct PairedTally {
    dims: Dims,
    samples: u64,
    current: Vec<u64>,
    next: Vec<u64>,
    both: Vec<u64>,
    sum_current: f64,
    sum_next: f64,
    sum_sq_diff: f64,
    sum_diff: f64,
}

impl PairedTally {
    fn new(dims: Dims) -> Self {
        Self {
            dims,
            samples: 0,
            current: vec![0; dims.len()],
            next: vec![0; dims.len()],
            both: vec![0; dims.len()],
            sum_current: 0.0,
            sum_next: 0.0,
            sum_sq_diff: 0.0,
            sum_diff: 0.0,
        }
    }

    fn record(&mut self, current: &DeterministicPolicy, next: &DeterministicPolicy, values: (f64, f64), factor: f64) {
        let d = self.dims;
        for h in 1..=d.horizon {
            for s in 0..d.states {
                let base = ((h - 1) * d.states + s) * d.actions;
                let (a, b) = (current.action(s, h), next.action(s, h));
                self.current[base + a] += 1;
                self.next[base + b] += 1;
                if a == b {
                    self.both[base + a] += 1;
                }
            }
        }
        let diff = values.1 - factor * values.0;
        self.sum_current += values.0;
        self.sum_next += values.1;
        self.sum_diff += diff;
        self.sum_sq_diff += diff * diff;
        self.samples += 1;
    }

    fn merge(mut self, other: Self) -> Self {
        for (dst, src) in [
            (&mut self.current, &other.current),
            (&mut self.next, &other.next),
            (&mut self.both, &other.both),
        ] {
            for (x, y) in dst.iter_mut().zip(src) {
                *x += y;
            }
        }
        self.samples += other.samples;
        self.sum_current += other.sum_current;
        self.sum_next += other.sum_next;
        self.sum_diff += other.sum_diff;
        self.sum_sq_diff += other.sum_sq_diff;
        self
    }

    /// Ratios `Pr[current = a] / Pr[next = a]` with delta-method errors that
    /// account for the pairing.
    fn ratios(&self, log_bound: impl Fn(usize) -> f64) -> (f64, Vec<RatioEntry>) {
        let d = self.dims;
        let n = self.samples as f64;
        let floor = 10.0 / n.sqrt();
        let mut entries = Vec::new();
        for h in 1..=d.horizon {
            let width = log_bound(h);
            for s in 0..d.states {
                for a in 0..d.actions {
                    let i = ((h - 1) * d.states + s) * d.actions + a;
                    let p1 = self.current[i] as f64 / n;
                    let p2 = self.next[i] as f64 / n;
                    if p1 < floor || p2 < floor {
                        continue;
                    }
                    let p12 = self.both[i] as f64 / n;
                    let cov = p12 - p1 * p2;
                    let var = (p1 * (1.0 - p1) / (p2 * p2) + p1 * p1 * p2 * (1.0 - p2) / p2.powi(4)
                        - 2.0 * p1 * cov / p2.powi(3))
                        / n;
                    let stderr = var.max(0.0).sqrt();
                    let ratio = p1 / p2;
                    let (lower, upper) = ((-width).exp(), width.exp());
                    let pass = ratio >= lower - MC_SIGMAS * stderr && ratio <= upper + MC_SIGMAS * stderr;
                    entries.push(RatioEntry {
                        state: s,
                        layer: h,
                        action: a,
                        prob_current: p1,
                        prob_next: p2,
                        ratio,
                        stderr,
                        lower,
                        upper,
                        pass,
                    });
                }
            }
        }
        (floor, entries)
    }

    fn value_comparison(&self, factor: f64) -> ValueComparison {
        let n = self.samples as f64;
        let mean = self.sum_diff / n;
        let var = (self.sum_sq_diff / n - mean * mean).max(0.0) * n / (n - 1.0);
        let stderr = (var / n).sqrt();
        ValueComparison {
            current: self.sum_current / n,
            next: self.sum_next / n,
            factor,
            stderr,
            pass: mean <= MC_SIGMAS * stderr,
        }
    }
}

fn paired_mc<F>(dims: Dims, samples: u64, base: u64, factor: f64, per_sample: F) -> Result<PairedTally>
where
    F: Fn(&mut SeedRng) -> Result<(DeterministicPolicy, DeterministicPolicy, (f64, f64))> + Sync,
{
    chunk_sizes(samples)
        .map(|(chunk, size)| -> Result<PairedTally> {
            let mut stream = rng::stream(base, chunk);
            let mut tally = PairedTally::new(dims);
            for _ in 0..size {
                let (current, next, values) = per_sample(&mut stream)?;
                tally.record(&current, &next, values, factor);
            }
            Ok(tally)
        })
        .try_reduce(|| PairedTally::new(dims), |a, b| Ok(a.merge(b)))
}

/// Monte Carlo check that one extra episode moves FPL's action
/// probabilities by at most `exp(+-eta (H - h + 1))` at layer `h`, and the
/// expected value on that episode by at most `exp(eta H^2)`.
///
/// Both policies are computed from the same `r_0` draw.
pub fn stability_check<R: RngCore + ?Sized>(
    spec: &MdpSpec,
    params: ExpParams,
    history: &[RewardTensor],
    extra_reward: &RewardTensor,
    samples: u64,
    rng: &mut R,
) -> Result<RatioReport> {
    check_samples(samples)?;
    extra_reward.check_unit_range()?;
    let d = spec.dims();
    let eta = params.eta();
    let horizon = d.horizon as f64;
    let factor = (eta * horizon * horizon).exp();
    let base = rng.next_u64();
    let s1 = spec.initial_state();
    let tally = paired_mc(d, samples, base, factor, |stream| {
        let mut agent = FplAgent::new(spec.clone(), params, stream);
        for r in history {
            agent.observe(r)?;
        }
        let current = agent.select_policy();
        agent.observe(extra_reward)?;
        let next = agent.select_policy();
        let values = (
            policy_value(extra_reward, spec.kernel(), &current, s1)?,
            policy_value(extra_reward, spec.kernel(), &next, s1)?,
        );
        Ok((current, next, values))
    })?;
    let (noise_floor, entries) = tally.ratios(|h| eta * (d.horizon - h + 1) as f64);
    Ok(RatioReport {
        samples,
        noise_floor,
        entries,
        value: Some(tally.value_comparison(factor)),
    })
}

/// Same comparison for optimistic planning over a fixed confidence set: the
/// ratio of `Pr[plan on r_{0:t-1} picks a]` to `Pr[plan on r_{0:t} picks a]`
/// must lie in `[exp(-eta H), exp(eta H)]`.
pub fn optimistic_lookahead_check<R: RngCore + ?Sized>(
    cset: &ConfidenceSet,
    params: ExpParams,
    history: &RewardTensor,
    extra_reward: &RewardTensor,
    samples: u64,
    rng: &mut R,
) -> Result<RatioReport> {
    check_samples(samples)?;
    extra_reward.check_unit_range()?;
    history.check_nonnegative()?;
    let d = history.dims();
    let with_extra = history.sum(extra_reward)?;
    let base = rng.next_u64();
    let tally = paired_mc(d, samples, base, 1.0, |stream| {
        let r0 = sample_exp_tensor(params, d, stream);
        let current = extended_value_iteration(&r0.sum(history)?, cset)?.into_policy();
        let next = extended_value_iteration(&r0.sum(&with_extra)?, cset)?.into_policy();
        Ok((current, next, (0.0, 0.0)))
    })?;
    let width = params.eta() * d.horizon as f64;
    let (noise_floor, entries) = tally.ratios(|_| width);
    Ok(RatioReport {
        samples,
        noise_floor,
        entries,
        value: None,
    })
}

/// Everything needed to replay an FPL run after the fact.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub kernel: TransitionKernel,
    pub initial_state: usize,
    pub perturbation: RewardTensor,
    pub rewards: Vec<RewardTensor>,
    /// `pi_1 ..= pi_{T+1}`; the last is greedy on `r_{0:T}`.
    pub policies: Vec<DeterministicPolicy>,
}

impl RunRecord {
    /// Plays `agent` against `rewards` and records every policy.
    pub fn play(mut agent: FplAgent, rewards: &[RewardTensor]) -> Result<Self> {
        let mut policies = Vec::with_capacity(rewards.len() + 1);
        for r in rewards {
            policies.push(agent.select_policy());
            agent.observe(r)?;
        }
        policies.push(agent.select_policy());
        Ok(Self {
            kernel: agent.spec().kernel().clone(),
            initial_state: agent.spec().initial_state(),
            perturbation: agent.perturbation().clone(),
            rewards: rewards.to_vec(),
            policies,
        })
    }
}

/// `sum_t V^{pi_{t+1}}(r_t) - OPT + V^{pi_1}(r_0)`, nonnegative on every FPL run.
pub fn btl_residual(record: &RunRecord) -> Result<f64> {
    let t = record.rewards.len();
    if record.policies.len() != t + 1 {
        return Err(Error::IncompleteRecord(format!(
            "{} rewards need {} policies, found {}",
            t,
            t + 1,
            record.policies.len()
        )));
    }
    let s1 = record.initial_state;
    let dims = record.perturbation.dims();
    let mut lookahead = 0.0;
    for (r, policy) in record.rewards.iter().zip(&record.policies[1..]) {
        lookahead += policy_value(r, &record.kernel, policy, s1)?;
    }
    let (opt, _) = opt_in_hindsight(&accumulate(dims, &record.rewards)?, &record.kernel, s1)?;
    let head = policy_value(&record.perturbation, &record.kernel, &record.policies[0], s1)?;
    Ok(lookahead - opt + head)
}

/// Sample mean and standard error of the maximum of `m` i.i.d. `Exp(eta)` draws.
pub fn mc_max_of_exponentials<R: Rng + ?Sized>(m: usize, params: ExpParams, trials: usize, rng: &mut R) -> (f64, f64) {
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let x = (0..m).map(|_| params.sample(rng)).fold(0.0, f64::max);
        sum += x;
        sum_sq += x * x;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}
