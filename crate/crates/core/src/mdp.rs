//! Finite-horizon tabular MDPs: transition kernels, layered reward tensors,
//! deterministic policies, backward value iteration, exact policy evaluation
//! and trajectory sampling.
//!
//! Layers are 1-based (`h` in `1..=H`); states and actions are 0-based.

use std::fmt;

use rand::Rng;

use crate::error::{invalid, Error, Result};

/// Absolute tolerance on `|sum_s' p(s'|s,a) - 1|`.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn new(states: usize, actions: usize, horizon: usize) -> Result<Self> {
        if states == 0 || actions == 0 || horizon == 0 {
            return Err(invalid(
                "dims",
                format!("S, A, H must be positive, got ({states}, {actions}, {horizon})"),
            ));
        }
        Ok(Self {
            states,
            actions,
            horizon,
        })
    }

    /// Number of reward entries, `S * A * H`.
    pub fn len(&self) -> usize {
        self.states * self.actions * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S={} A={} H={}", self.states, self.actions, self.horizon)
    }
}

fn check_dims(expected: Dims, found: Dims) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

/// A single defect found while validating an MDP description.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyDimension { name: &'static str },
    InitialStateOutOfRange { state: usize, num_states: usize },
    ShapeMismatch { expected: usize, found: usize },
    ProbabilityOutOfRange { state: usize, action: usize, next: usize, value: f64 },
    RowSum { state: usize, action: usize, sum: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyDimension { name } => write!(f, "{name} must be positive"),
            Violation::InitialStateOutOfRange { state, num_states } => {
                write!(f, "initial state {state} outside [0, {num_states})")
            }
            Violation::ShapeMismatch { expected, found } => {
                write!(f, "expected {expected} transition probabilities, found {found}")
            }
            Violation::ProbabilityOutOfRange {
                state,
                action,
                next,
                value,
            } => write!(f, "p({next}|{state},{action}) = {value} outside [0, 1]"),
            Violation::RowSum { state, action, sum } => {
                write!(f, "row ({state},{action}) sums to {sum}")
            }
        }
    }
}

/// Checks the raw parts of an MDP and lists every violated invariant.
///
/// `probs` is laid out row-major by `(s, a, s')`.
pub fn validate(
    states: usize,
    actions: usize,
    horizon: usize,
    initial_state: usize,
    probs: &[f64],
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, value) in [("S", states), ("A", actions), ("H", horizon)] {
        if value == 0 {
            out.push(Violation::EmptyDimension { name });
        }
    }
    if states > 0 && initial_state >= states {
        out.push(Violation::InitialStateOutOfRange {
            state: initial_state,
            num_states: states,
        });
    }
    out.extend(validate_kernel(states, actions, probs));
    out
}

fn validate_kernel(states: usize, actions: usize, probs: &[f64]) -> Vec<Violation> {
    let mut out = Vec::new();
    let expected = states * states * actions;
    if probs.len() != expected {
        out.push(Violation::ShapeMismatch {
            expected,
            found: probs.len(),
        });
        return out;
    }
    if states == 0 {
        return out;
    }
    for (row_index, row) in probs.chunks(states).enumerate() {
        let (state, action) = (row_index / actions, row_index % actions);
        for (next, &value) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                out.push(Violation::ProbabilityOutOfRange {
                    state,
                    action,
                    next,
                    value,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= ROW_SUM_TOLERANCE) {
            out.push(Violation::RowSum { state, action, sum });
        }
    }
    out
}

/// Row-stochastic kernel `p(s'|s,a)`, stored row-major by `(s, a, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    states: usize,
    actions: usize,
    probs: Vec<f64>,
}

impl TransitionKernel {
    /// Builds a kernel, refusing any row that is not a distribution.
    /// Rows are never renormalized.
    pub fn new(states: usize, actions: usize, probs: Vec<f64>) -> Result<Self> {
        let mut violations = Vec::new();
        if states == 0 {
            violations.push(Violation::EmptyDimension { name: "S" });
        }
        if actions == 0 {
            violations.push(Violation::EmptyDimension { name: "A" });
        }
        violations.extend(validate_kernel(states, actions, &probs));
        if !violations.is_empty() {
            return Err(Error::InvalidMdp(violations));
        }
        Ok(Self {
            states,
            actions,
            probs,
        })
    }

    pub fn uniform(states: usize, actions: usize) -> Self {
        let p = 1.0 / states as f64;
        Self {
            states,
            actions,
            probs: vec![p; states * actions * states],
        }
    }

    /// Kernel where `(s, a)` always moves to `next(s, a)`.
    pub fn deterministic(
        states: usize,
        actions: usize,
        next: impl Fn(usize, usize) -> usize,
    ) -> Result<Self> {
        let mut probs = vec![0.0; states * actions * states];
        for s in 0..states {
            for a in 0..actions {
                let target = next(s, a);
                if target >= states {
                    return Err(invalid("next", format!("successor {target} of ({s},{a}) out of range")));
                }
                probs[(s * actions + a) * states + target] = 1.0;
            }
        }
        Self::new(states, actions, probs)
    }

    /// Draws every row from the flat Dirichlet distribution.
    pub fn random<R: Rng + ?Sized>(states: usize, actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(states * actions * states);
        for _ in 0..states * actions {
            let draws: Vec<f64> = (0..states)
                .map(|_| -rng.sample::<f64, _>(rand::distributions::Open01).ln())
                .collect();
            let total: f64 = draws.iter().sum();
            probs.extend(draws.iter().map(|x| x / total));
        }
        Self {
            states,
            actions,
            probs,
        }
    }

    pub(crate) fn from_rows_unchecked(states: usize, actions: usize, probs: Vec<f64>) -> Self {
        debug_assert_eq!(probs.len(), states * actions * states);
        Self {
            states,
            actions,
            probs,
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    #[inline]
    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let start = (state * self.actions + action) * self.states;
        &self.probs[start..start + self.states]
    }

    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.row(state, action)[next]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    /// L1 distance between the `(s, a)` rows of two kernels.
    pub fn row_l1_distance(&self, other: &TransitionKernel, state: usize, action: usize) -> f64 {
        self.row(state, action)
            .iter()
            .zip(other.row(state, action))
            .map(|(p, q)| (p - q).abs())
            .sum()
    }
}

/// `(S, A, H, p, s1)`; the reward lives in [`RewardTensor`] because it
/// changes every episode.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    dims: Dims,
    kernel: TransitionKernel,
    initial_state: usize,
}

impl MdpSpec {
    pub fn new(horizon: usize, kernel: TransitionKernel, initial_state: usize) -> Result<Self> {
        let violations = validate(
            kernel.states,
            kernel.actions,
            horizon,
            initial_state,
            &kernel.probs,
        );
        if !violations.is_empty() {
            return Err(Error::InvalidMdp(violations));
        }
        Ok(Self {
            dims: Dims {
                states: kernel.states,
                actions: kernel.actions,
                horizon,
            },
            kernel,
            initial_state,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn kernel(&self) -> &TransitionKernel {
        &self.kernel
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }
}

/// Contents of an MDP instance file before validation.
///
/// The text format is a sequence of `key value` lines for `S`, `A`, `H` and
/// `s1` followed by one line of `S` probabilities per `(s, a)` pair in
/// state-major order. Blank lines and `#` comments are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpFile {
    pub states: usize,
    pub actions: usize,
    pub horizon: usize,
    pub initial_state: usize,
    pub probs: Vec<f64>,
}

impl MdpFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut header: [Option<usize>; 4] = [None; 4];
        const KEYS: [&str; 4] = ["S", "A", "H", "s1"];
        let mut probs = Vec::new();
        let mut rows = 0usize;

        for (index, raw) in text.lines().enumerate() {
            let line_no = index + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let first = line
                .split(|c: char| c.is_whitespace() || c == '=' || c == ':')
                .next()
                .unwrap_or("");
            if let Some(slot) = KEYS.iter().position(|k| *k == first) {
                if rows > 0 {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("key `{first}` after transition rows"),
                    });
                }
                let value = line[first.len()..]
                    .trim_start_matches(|c: char| c.is_whitespace() || c == '=' || c == ':')
                    .trim();
                let parsed = value.parse::<usize>().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("`{first}` expects a nonnegative integer, got `{value}`"),
                })?;
                if header[slot].replace(parsed).is_some() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("duplicate key `{first}`"),
                    });
                }
                continue;
            }
            let states = match header[0] {
                Some(s) if header.iter().all(Option::is_some) => s,
                _ => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "transition rows must follow the S, A, H, s1 keys".into(),
                    })
                }
            };
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map_err(|_| Error::Parse {
                        line: line_no,
                        message: format!("not a number: `{tok}`"),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != states {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected {states} probabilities, found {}", row.len()),
                });
            }
            probs.extend(row);
            rows += 1;
        }

        let missing: Vec<&str> = KEYS
            .iter()
            .zip(header.iter())
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| *k)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Parse {
                line: 0,
                message: format!("missing keys: {}", missing.join(", ")),
            });
        }
        let [states, actions, horizon, initial_state] = header.map(Option::unwrap);
        if rows != states * actions {
            return Err(Error::Parse {
                line: 0,
                message: format!("expected {} transition rows, found {rows}", states * actions),
            });
        }
        Ok(Self {
            states,
            actions,
            horizon,
            initial_state,
            probs,
        })
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate(
            self.states,
            self.actions,
            self.horizon,
            self.initial_state,
            &self.probs,
        )
    }

    pub fn into_spec(self) -> Result<MdpSpec> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidMdp(violations));
        }
        let kernel = TransitionKernel::from_rows_unchecked(self.states, self.actions, self.probs);
        MdpSpec::new(self.horizon, kernel, self.initial_state)
    }

    pub fn render(spec: &MdpSpec) -> String {
        let dims = spec.dims();
        let mut out = format!(
            "S {}\nA {}\nH {}\ns1 {}\n",
            dims.states,
            dims.actions,
            dims.horizon,
            spec.initial_state()
        );
        for s in 0..dims.states {
            for a in 0..dims.actions {
                let row: Vec<String> = spec
                    .kernel()
                    .row(s, a)
                    .iter()
                    .map(|p| format!("{p:?}"))
                    .collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        out
    }
}

/// Reward values `r(s, a, h)`, stored layer-major then state then action.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTensor {
    dims: Dims,
    values: Vec<f64>,
}

impl RewardTensor {
    pub fn zeros(dims: Dims) -> Self {
        Self::filled(dims, 0.0)
    }

    pub fn filled(dims: Dims, value: f64) -> Self {
        Self {
            dims,
            values: vec![value; dims.len()],
        }
    }

    /// `values` in `(h, s, a)` order with `h` running over `1..=H`.
    pub fn from_values(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} entries ({dims})", dims.len()),
                found: format!("{} entries", values.len()),
            });
        }
        Ok(Self { dims, values })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(dims.len());
        for h in 1..=dims.horizon {
            for s in 0..dims.states {
                for a in 0..dims.actions {
                    values.push(f(s, a, h));
                }
            }
        }
        Self { dims, values }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    fn index(&self, state: usize, action: usize, layer: usize) -> usize {
        debug_assert!(layer >= 1 && layer <= self.dims.horizon);
        ((layer - 1) * self.dims.states + state) * self.dims.actions + action
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize, layer: usize) -> f64 {
        self.values[self.index(state, action, layer)]
    }

    pub fn set(&mut self, state: usize, action: usize, layer: usize, value: f64) {
        let i = self.index(state, action, layer);
        self.values[i] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    fn position(&self, flat: usize) -> (usize, usize, usize) {
        let a = flat % self.dims.actions;
        let s = (flat / self.dims.actions) % self.dims.states;
        let h = flat / (self.dims.actions * self.dims.states) + 1;
        (s, a, h)
    }

    pub fn add_assign(&mut self, other: &RewardTensor) -> Result<()> {
        check_dims(self.dims, other.dims)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += y;
        }
        Ok(())
    }

    /// Entrywise `self + other`.
    pub fn sum(&self, other: &RewardTensor) -> Result<RewardTensor> {
        check_dims(self.dims, other.dims)?;
        Ok(Self {
            dims: self.dims,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| x + y)
                .collect(),
        })
    }

    /// Fails on the first entry outside `[0, 1]`.
    pub fn check_unit_range(&self) -> Result<()> {
        match self.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            None => Ok(()),
            Some(flat) => {
                let (state, action, layer) = self.position(flat);
                Err(Error::RewardOutOfRange {
                    state,
                    action,
                    layer,
                    value: self.values[flat],
                })
            }
        }
    }

    pub fn check_nonnegative(&self) -> Result<()> {
        match self.values.iter().position(|v| !(*v >= 0.0)) {
            None => Ok(()),
            Some(flat) => {
                let (state, action, layer) = self.position(flat);
                Err(Error::NegativeReward {
                    state,
                    action,
                    layer,
                    value: self.values[flat],
                })
            }
        }
    }
}

/// Entrywise sum of a sequence of tensors; the zero tensor when empty.
pub fn accumulate<'a>(
    dims: Dims,
    rewards: impl IntoIterator<Item = &'a RewardTensor>,
) -> Result<RewardTensor> {
    let mut total = RewardTensor::zeros(dims);
    for r in rewards {
        total.add_assign(r)?;
    }
    Ok(total)
}

/// Layer-indexed map `(s, h) -> a`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy {
    states: usize,
    actions: usize,
    horizon: usize,
    table: Vec<usize>,
}

impl DeterministicPolicy {
    pub fn constant(dims: Dims, action: usize) -> Result<Self> {
        Self::from_fn(dims, |_, _| action)
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize) -> usize) -> Result<Self> {
        let mut table = Vec::with_capacity(dims.states * dims.horizon);
        for h in 1..=dims.horizon {
            for s in 0..dims.states {
                let a = f(s, h);
                if a >= dims.actions {
                    return Err(invalid("policy", format!("action {a} at ({s},{h}) out of range")));
                }
                table.push(a);
            }
        }
        Ok(Self {
            states: dims.states,
            actions: dims.actions,
            horizon: dims.horizon,
            table,
        })
    }

    pub(crate) fn empty(dims: Dims) -> Self {
        Self {
            states: dims.states,
            actions: dims.actions,
            horizon: dims.horizon,
            table: vec![0; dims.states * dims.horizon],
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            states: self.states,
            actions: self.actions,
            horizon: self.horizon,
        }
    }

    #[inline]
    pub fn action(&self, state: usize, layer: usize) -> usize {
        self.table[(layer - 1) * self.states + state]
    }

    fn set(&mut self, state: usize, layer: usize, action: usize) {
        self.table[(layer - 1) * self.states + state] = action;
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.table
    }
}

/// `V_h(s)` for `h` in `1..=H+1` (with `V_{H+1} = 0`) and `Q_h(s, a)` for `h` in `1..=H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    dims: Dims,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl ValueTables {
    pub(crate) fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            v: vec![0.0; (dims.horizon + 1) * dims.states],
            q: vec![0.0; dims.len()],
        }
    }

    pub fn v(&self, layer: usize, state: usize) -> f64 {
        self.v[(layer - 1) * self.dims.states + state]
    }

    pub fn q(&self, layer: usize, state: usize, action: usize) -> f64 {
        self.q[((layer - 1) * self.dims.states + state) * self.dims.actions + action]
    }

    /// The `V_h` vector over states.
    pub fn v_layer(&self, layer: usize) -> &[f64] {
        let start = (layer - 1) * self.dims.states;
        &self.v[start..start + self.dims.states]
    }
}

/// Scalar multiply-add tally for planning passes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounter {
    pub multiply_adds: u64,
}

/// `sum_s' p(s') v(s')` in state order. Every planner and evaluator goes
/// through this so identical inputs give bit-identical values.
#[inline]
pub(crate) fn expected_next(row: &[f64], next_values: &[f64]) -> f64 {
    row.iter().zip(next_values).map(|(p, v)| p * v).sum()
}

/// Greedy backup of one layer: fills `Q_h`, `V_h` and the argmax policy.
/// Ties go to the lowest action index.
pub(crate) fn greedy_layer<'k>(
    reward: &RewardTensor,
    layer: usize,
    row: impl Fn(usize, usize) -> &'k [f64],
    tables: &mut ValueTables,
    policy: &mut DeterministicPolicy,
    counter: &mut OpCounter,
) {
    let dims = reward.dims;
    let (before, after) = tables.v.split_at_mut(layer * dims.states);
    let next = &after[..dims.states];
    let current = &mut before[(layer - 1) * dims.states..];
    for s in 0..dims.states {
        let mut best = f64::NEG_INFINITY;
        let mut best_action = 0;
        for a in 0..dims.actions {
            let q = reward.get(s, a, layer) + expected_next(row(s, a), next);
            counter.multiply_adds += dims.states as u64;
            tables.q[((layer - 1) * dims.states + s) * dims.actions + a] = q;
            if q > best {
                best = q;
                best_action = a;
            }
        }
        current[s] = best;
        policy.set(s, layer, best_action);
    }
}

/// Backward value iteration over `h = H..1`.
pub fn value_iteration(
    reward: &RewardTensor,
    kernel: &TransitionKernel,
) -> Result<(DeterministicPolicy, ValueTables)> {
    value_iteration_counted(reward, kernel, &mut OpCounter::default())
}

/// [`value_iteration`] that also tallies scalar work into `counter`.
pub fn value_iteration_counted(
    reward: &RewardTensor,
    kernel: &TransitionKernel,
    counter: &mut OpCounter,
) -> Result<(DeterministicPolicy, ValueTables)> {
    check_kernel_dims(reward.dims, kernel)?;
    reward.check_nonnegative()?;
    let dims = reward.dims;
    let mut tables = ValueTables::zeros(dims);
    let mut policy = DeterministicPolicy::empty(dims);
    for layer in (1..=dims.horizon).rev() {
        greedy_layer(
            reward,
            layer,
            |s, a| kernel.row(s, a),
            &mut tables,
            &mut policy,
            counter,
        );
    }
    Ok((policy, tables))
}

fn check_kernel_dims(dims: Dims, kernel: &TransitionKernel) -> Result<()> {
    if kernel.states != dims.states || kernel.actions != dims.actions {
        return Err(Error::DimensionMismatch {
            expected: format!("kernel with S={} A={}", dims.states, dims.actions),
            found: format!("kernel with S={} A={}", kernel.states, kernel.actions),
        });
    }
    Ok(())
}

pub(crate) fn check_reward_kernel(reward: &RewardTensor, kernel: &TransitionKernel) -> Result<()> {
    check_kernel_dims(reward.dims, kernel)
}

fn check_policy_dims(dims: Dims, policy: &DeterministicPolicy) -> Result<()> {
    check_dims(dims, policy.dims())
}

/// Backward evaluation of `policy` with transition rows supplied per layer.
pub(crate) fn evaluate_with<'k>(
    reward: &RewardTensor,
    policy: &DeterministicPolicy,
    start: usize,
    row: impl Fn(usize, usize, usize) -> &'k [f64],
) -> f64 {
    let dims = reward.dims;
    let mut next = vec![0.0; dims.states];
    let mut current = vec![0.0; dims.states];
    for layer in (1..=dims.horizon).rev() {
        for (s, slot) in current.iter_mut().enumerate() {
            let a = policy.action(s, layer);
            *slot = reward.get(s, a, layer) + expected_next(row(layer, s, a), &next);
        }
        std::mem::swap(&mut next, &mut current);
    }
    next[start]
}

/// Exact expected return of `policy` from `start` at layer 1.
pub fn policy_value(
    reward: &RewardTensor,
    kernel: &TransitionKernel,
    policy: &DeterministicPolicy,
    start: usize,
) -> Result<f64> {
    check_kernel_dims(reward.dims, kernel)?;
    check_policy_dims(reward.dims, policy)?;
    if start >= reward.dims.states {
        return Err(invalid("start", format!("state {start} out of range")));
    }
    Ok(evaluate_with(reward, policy, start, |_, s, a| kernel.row(s, a)))
}

/// Value and argmax policy of the best fixed policy on a cumulative tensor.
pub fn opt_in_hindsight(
    cumulative: &RewardTensor,
    kernel: &TransitionKernel,
    initial_state: usize,
) -> Result<(f64, DeterministicPolicy)> {
    if initial_state >= cumulative.dims.states {
        return Err(invalid("initial_state", format!("state {initial_state} out of range")));
    }
    let (policy, tables) = value_iteration(cumulative, kernel)?;
    Ok((tables.v(1, initial_state), policy))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    /// `(s_h, a_h)` for `h = 1..=H`.
    pub steps: Vec<(usize, usize)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Sum of `r(s_h, a_h, h)` along the trajectory.
    pub fn realized_reward(&self, reward: &RewardTensor) -> f64 {
        self.steps
            .iter()
            .enumerate()
            .map(|(i, &(s, a))| reward.get(s, a, i + 1))
            .sum()
    }
}

/// Inverse-CDF draw from a distribution row.
pub(crate) fn sample_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    let mut last_positive = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            cumulative += p;
            if u < cumulative {
                return i;
            }
        }
    }
    last_positive
}

/// Rolls out `policy` for `H` steps from `start`; no successor is drawn after layer `H`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    kernel: &TransitionKernel,
    policy: &DeterministicPolicy,
    start: usize,
    rng: &mut R,
) -> Trajectory {
    let horizon = policy.horizon;
    let mut steps = Vec::with_capacity(horizon);
    let mut state = start;
    for layer in 1..=horizon {
        let action = policy.action(state, layer);
        steps.push((state, action));
        if layer < horizon {
            state = sample_row(kernel.row(state, action), rng);
        }
    }
    Trajectory { steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims(s: usize, a: usize, h: usize) -> Dims {
        Dims::new(s, a, h).unwrap()
    }

    /// Brute force over every deterministic policy.
    fn enumerate_best(reward: &RewardTensor, kernel: &TransitionKernel, start: usize) -> f64 {
        let d = reward.dims();
        let cells = d.states * d.horizon;
        let total = d.actions.pow(cells as u32);
        let mut best = f64::NEG_INFINITY;
        for code in 0..total {
            let mut c = code;
            let policy = DeterministicPolicy::from_fn(d, |_, _| {
                let a = c % d.actions;
                c /= d.actions;
                a
            })
            .unwrap();
            best = best.max(policy_value(reward, kernel, &policy, start).unwrap());
        }
        best
    }

    fn two_state_example() -> (RewardTensor, TransitionKernel) {
        let d = dims(2, 2, 2);
        let kernel = TransitionKernel::deterministic(2, 2, |_, a| a).unwrap();
        let mut r = RewardTensor::zeros(d);
        r.set(0, 0, 1, 0.5);
        r.set(0, 1, 1, 0.0);
        r.set(0, 0, 2, 0.2);
        r.set(0, 1, 2, 0.2);
        r.set(1, 0, 2, 0.9);
        r.set(1, 1, 2, 0.9);
        (r, kernel)
    }

    #[test]
    fn validate_accepts_well_formed() {
        let k = TransitionKernel::uniform(3, 2);
        assert!(validate(3, 2, 4, 0, k.as_slice()).is_empty());
    }

    #[test]
    fn validate_reports_short_row() {
        let mut probs = TransitionKernel::uniform(2, 2).as_slice().to_vec();
        probs[2] = 0.4; // row (0,1) now sums to 0.9
        let v = validate(2, 2, 1, 0, &probs);
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::RowSum { state, action, sum } => {
                assert_eq!((*state, *action), (0, 1));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validate_reports_negative_entry() {
        let mut probs = TransitionKernel::uniform(3, 1).as_slice().to_vec();
        probs[..3].copy_from_slice(&[-0.1, 0.6, 0.5]);
        let v = validate(3, 1, 1, 0, &probs);
        assert_eq!(
            v,
            vec![Violation::ProbabilityOutOfRange {
                state: 0,
                action: 0,
                next: 0,
                value: -0.1
            }]
        );
    }

    #[test]
    fn kernel_constructor_refuses_instead_of_renormalizing() {
        let err = TransitionKernel::new(2, 1, vec![0.5, 0.6, 1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InvalidMdp(_)));
        assert!(MdpSpec::new(1, TransitionKernel::uniform(2, 1), 2).is_err());
        assert!(MdpSpec::new(0, TransitionKernel::uniform(2, 1), 0).is_err());
    }

    #[test]
    fn single_state_picks_larger_reward() {
        let r = RewardTensor::from_values(dims(1, 2, 1), vec![0.3, 0.7]).unwrap();
        let (policy, tables) = value_iteration(&r, &TransitionKernel::uniform(1, 2)).unwrap();
        assert_eq!(policy.action(0, 1), 1);
        assert_eq!(tables.v(1, 0), 0.7);
    }

    #[test]
    fn zero_reward_ties_to_action_zero() {
        let d = dims(3, 4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kernel = TransitionKernel::random(3, 4, &mut rng);
        let (policy, tables) = value_iteration(&RewardTensor::zeros(d), &kernel).unwrap();
        assert!(policy.as_slice().iter().all(|&a| a == 0));
        for h in 1..=4 {
            assert!(tables.v_layer(h).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn two_state_example_matches_enumeration() {
        let (r, kernel) = two_state_example();
        // Oracle: all 16 deterministic policies.
        let brute = enumerate_best(&r, &kernel, 0);
        assert!((brute - 0.9).abs() < 1e-12);
        let (policy, tables) = value_iteration(&r, &kernel).unwrap();
        assert!((tables.v(1, 0) - 0.9).abs() < 1e-12);
        assert_eq!(policy.action(0, 1), 1);
    }

    #[test]
    fn policy_value_of_fixed_action_zero() {
        let (r, kernel) = two_state_example();
        let always_zero = DeterministicPolicy::constant(r.dims(), 0).unwrap();
        let v = policy_value(&r, &kernel, &always_zero, 0).unwrap();
        assert!((v - 0.7).abs() < 1e-12);
        let zero = RewardTensor::zeros(r.dims());
        assert_eq!(policy_value(&zero, &kernel, &always_zero, 0).unwrap(), 0.0);
    }

    #[test]
    fn greedy_policy_value_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let d = dims(4, 3, 5);
            let kernel = TransitionKernel::random(4, 3, &mut rng);
            let r = RewardTensor::from_fn(d, |_, _, _| rng.gen::<f64>() * 3.0);
            let (policy, tables) = value_iteration(&r, &kernel).unwrap();
            for s in 0..4 {
                assert_eq!(policy_value(&r, &kernel, &policy, s).unwrap(), tables.v(1, s));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let r = RewardTensor::zeros(dims(2, 2, 1));
        let k = TransitionKernel::uniform(3, 2);
        assert!(matches!(value_iteration(&r, &k), Err(Error::DimensionMismatch { .. })));
        let p = DeterministicPolicy::constant(dims(3, 2, 1), 0).unwrap();
        assert!(policy_value(&r, &TransitionKernel::uniform(2, 2), &p, 0).is_err());
        assert!(accumulate(dims(2, 2, 1), [&RewardTensor::zeros(dims(2, 2, 2))]).is_err());
    }

    #[test]
    fn accumulate_identities() {
        let d = dims(2, 3, 2);
        assert_eq!(accumulate(d, []).unwrap(), RewardTensor::zeros(d));
        let one = RewardTensor::from_fn(d, |s, a, h| (s + a + h) as f64 / 10.0);
        assert_eq!(accumulate(d, [&one]).unwrap(), one);
        let ones = RewardTensor::filled(d, 1.0);
        assert_eq!(accumulate(d, [&ones, &ones]).unwrap(), RewardTensor::filled(d, 2.0));
    }

    #[test]
    fn opt_in_hindsight_small_cases() {
        let d = dims(1, 2, 1);
        let k = TransitionKernel::uniform(1, 2);
        assert_eq!(opt_in_hindsight(&RewardTensor::zeros(d), &k, 0).unwrap().0, 0.0);
        let r1 = RewardTensor::from_values(d, vec![1.0, 0.0]).unwrap();
        let r2 = RewardTensor::from_values(d, vec![0.0, 1.0]).unwrap();
        let total = accumulate(d, [&r1, &r2]).unwrap();
        assert_eq!(opt_in_hindsight(&total, &k, 0).unwrap().0, 1.0);
    }

    #[test]
    fn opt_matches_enumeration_on_random_instance() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let d = dims(3, 2, 3);
        for _ in 0..20 {
            let kernel = TransitionKernel::random(3, 2, &mut rng);
            let r = RewardTensor::from_fn(d, |_, _, _| rng.gen::<f64>() * 10.0);
            let (opt, _) = opt_in_hindsight(&r, &kernel, 0).unwrap();
            let brute = enumerate_best(&r, &kernel, 0);
            assert!((opt - brute).abs() < 1e-9, "{opt} vs {brute}");
        }
    }

    #[test]
    fn deterministic_kernel_trajectory_ignores_rng() {
        let kernel = TransitionKernel::deterministic(3, 2, |s, a| (s + a + 1) % 3).unwrap();
        let policy = DeterministicPolicy::from_fn(dims(3, 2, 4), |s, h| (s + h) % 2).unwrap();
        let a = sample_trajectory(&kernel, &policy, 0, &mut ChaCha8Rng::seed_from_u64(1));
        let b = sample_trajectory(&kernel, &policy, 0, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        // 0 -a1-> 2 -a0-> 0 -a1-> 2
        assert_eq!(a.steps, vec![(0, 1), (2, 0), (0, 1), (2, 0)]);
    }

    #[test]
    fn horizon_one_has_one_step() {
        let kernel = TransitionKernel::uniform(2, 2);
        let policy = DeterministicPolicy::constant(dims(2, 2, 1), 1).unwrap();
        let t = sample_trajectory(&kernel, &policy, 1, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(t.steps, vec![(1, 1)]);
    }

    #[test]
    fn next_state_frequencies_match_kernel() {
        // Monte Carlo frequency oracle: each count is Binomial(n, p).
        let probs = vec![0.2, 0.5, 0.3];
        let kernel = TransitionKernel::new(3, 1, [probs.clone(), probs.clone(), probs.clone()].concat()).unwrap();
        let policy = DeterministicPolicy::constant(dims(3, 1, 2), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            let t = sample_trajectory(&kernel, &policy, 0, &mut rng);
            counts[t.steps[1].0] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn uniform_kernel_frequencies_within_four_sigma() {
        let kernel = TransitionKernel::uniform(4, 2);
        let policy = DeterministicPolicy::constant(dims(4, 2, 2), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_trajectory(&kernel, &policy, 2, &mut rng).steps[1].0] += 1;
        }
        let sigma = (0.25 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() <= 4.0 * sigma);
        }
    }

    #[test]
    fn mdp_file_roundtrip_and_errors() {
        let text = "# tiny\nS 2\nA = 1\nH: 3\ns1 1\n0.25 0.75\n1 0\n";
        let file = MdpFile::parse(text).unwrap();
        assert_eq!((file.states, file.actions, file.horizon, file.initial_state), (2, 1, 3, 1));
        let spec = file.clone().into_spec().unwrap();
        assert_eq!(MdpFile::parse(&MdpFile::render(&spec)).unwrap(), file);

        assert!(matches!(MdpFile::parse("S 2\nA 1\nH 1\n0.5 0.5\n"), Err(Error::Parse { .. })));
        assert!(matches!(MdpFile::parse("S 2\nA 1\nH 1\ns1 0\n0.5 0.5\n"), Err(Error::Parse { .. })));
        assert!(matches!(MdpFile::parse("S 2\nA 1\nH 1\ns1 0\n0.5\n1 0\n"), Err(Error::Parse { .. })));
        let bad = MdpFile::parse("S 2\nA 1\nH 1\ns1 0\n0.5 0.4\n1 0\n").unwrap();
        assert_eq!(bad.validate().len(), 1);
        assert!(bad.into_spec().is_err());
    }

    #[test]
    fn unit_range_check_names_entry() {
        let mut r = RewardTensor::zeros(dims(2, 2, 3));
        r.set(1, 0, 3, 1.5);
        assert_eq!(
            r.check_unit_range().unwrap_err(),
            Error::RewardOutOfRange { state: 1, action: 0, layer: 3, value: 1.5 }
        );
    }
}
