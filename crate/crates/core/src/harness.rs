//! Experiment driver: configuration, the episode loop, regret accounting and
//! CSV output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::adversary::{load_replay, AdversarySpec, RewardSource};
use crate::error::Error;
use crate::fpl::{recommended_eta, FplAgent};
use crate::fpop::{recommended_params, FpopAgent, FpopSettings};
use crate::mdp::{
    opt_in_hindsight, policy_value, sample_trajectory, DeterministicPolicy, Dims, MdpFile, MdpSpec, RewardTensor,
    TransitionKernel,
};
use crate::perturbation::ExpParams;
use crate::rng::{self, streams};

/// Per-seed CSV header.
pub const EPISODE_HEADER: &str = "t,epoch,v_t,v_tilde,cum_algo,prefix_regret,epoch_event";

/// Summary CSV header.
pub const SUMMARY_HEADER: &str = "seed,setting,S,A,H,T,eta,delta,opt,algo,regret,bound,ratio_to_bound";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    Check(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Check(_) => 3,
            Self::Io { .. } => 4,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<Error> for HarnessError {
    fn from(e: Error) -> Self {
        Self::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Known,
    Unknown,
}

impl Setting {
    pub fn name(self) -> &'static str {
        match self {
            Self::Known => "known",
            Self::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

/// A number, or `"auto"` for the recommended tuning.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Tunable {
    Value(f64),
    Auto(Auto),
}

impl Default for Tunable {
    fn default() -> Self {
        Self::Auto(Auto::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversaryKind {
    Constant,
    IidUniform,
    Switching,
    Replay,
}

fn default_kernel() -> String {
    "random".into()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Flat TOML run description. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub setting: Setting,
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    #[serde(rename = "T")]
    pub episodes: usize,
    #[serde(default)]
    pub eta: Tunable,
    pub delta: Option<Tunable>,
    pub adversary: AdversaryKind,
    pub adversary_period: Option<usize>,
    /// Constant adversary: every entry equals this value. Without it the
    /// constant tensor is drawn uniformly from `adversary_seed`.
    pub adversary_value: Option<f64>,
    #[serde(default)]
    pub adversary_seed: u64,
    pub adversary_file: Option<PathBuf>,
    /// `random`, `uniform`, or a path to an MDP file.
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default)]
    pub kernel_seed: u64,
    pub initial_state: Option<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub log_hindsight_prefix: bool,
    /// Unknown setting only: pin the confidence set to the true kernel with
    /// zero radii. Output is marked as a debug run.
    #[serde(default)]
    pub debug_collapse: bool,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut config = Self::parse(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn resolve(&self) -> Result<ResolvedConfig, HarnessError> {
        let dims = Dims::new(self.states, self.actions, self.horizon)?;
        if self.episodes == 0 {
            return Err(HarnessError::Config("T must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("seeds must not be empty".into()));
        }
        if self.setting == Setting::Known {
            if self.delta.is_some() {
                return Err(HarnessError::Config("delta applies to the unknown setting only".into()));
            }
            if self.debug_collapse {
                return Err(HarnessError::Config("debug_collapse applies to the unknown setting only".into()));
            }
        }

        let spec = self.true_mdp(dims)?;
        let adversary = self.adversary(dims)?;
        let mut resolved = ResolvedConfig {
            setting: self.setting,
            spec,
            episodes: self.episodes,
            eta_setting: self.eta,
            delta_setting: self.delta.unwrap_or_default(),
            eta: 0.0,
            delta: None,
            adversary,
            seeds: self.seeds.clone(),
            out: self.path(&self.out),
            log_hindsight_prefix: self.log_hindsight_prefix,
            debug_collapse: self.debug_collapse,
            warnings: Vec::new(),
        };
        resolved.tune()?;
        Ok(resolved)
    }

    fn true_mdp(&self, dims: Dims) -> Result<MdpSpec, HarnessError> {
        let kernel = match self.kernel.as_str() {
            "random" => {
                TransitionKernel::random(dims.states, dims.actions, &mut rng::stream(self.kernel_seed, 0))
            }
            "uniform" => TransitionKernel::uniform(dims.states, dims.actions),
            file => {
                let path = self.path(Path::new(file));
                let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                let spec = MdpFile::parse(&text)?.into_spec()?;
                if spec.dims() != dims {
                    return Err(HarnessError::Config(format!(
                        "kernel file {} has {}, config has {dims}",
                        path.display(),
                        spec.dims()
                    )));
                }
                if let Some(s1) = self.initial_state {
                    if s1 != spec.initial_state() {
                        return Err(HarnessError::Config(format!(
                            "initial_state {s1} disagrees with s1 = {} in {}",
                            spec.initial_state(),
                            path.display()
                        )));
                    }
                }
                return Ok(spec);
            }
        };
        Ok(MdpSpec::new(dims.horizon, kernel, self.initial_state.unwrap_or(0))?)
    }

    fn adversary(&self, dims: Dims) -> Result<AdversarySpec, HarnessError> {
        let unused = |key: &str, present: bool| {
            if present {
                Err(HarnessError::Config(format!("{key} is not used by the {:?} adversary", self.adversary)))
            } else {
                Ok(())
            }
        };
        match self.adversary {
            AdversaryKind::Constant => {
                unused("adversary_period", self.adversary_period.is_some())?;
                unused("adversary_file", self.adversary_file.is_some())?;
                let tensor = match self.adversary_value {
                    Some(v) => RewardTensor::filled(dims, v),
                    None => {
                        let mut stream = rng::stream(self.adversary_seed, 0);
                        RewardTensor::from_fn(dims, |_, _, _| stream.gen())
                    }
                };
                Ok(AdversarySpec::constant(tensor)?)
            }
            AdversaryKind::IidUniform => {
                unused("adversary_period", self.adversary_period.is_some())?;
                unused("adversary_value", self.adversary_value.is_some())?;
                unused("adversary_file", self.adversary_file.is_some())?;
                Ok(AdversarySpec::IidUniform {
                    dims,
                    seed: self.adversary_seed,
                })
            }
            AdversaryKind::Switching => {
                unused("adversary_value", self.adversary_value.is_some())?;
                unused("adversary_file", self.adversary_file.is_some())?;
                let period = self
                    .adversary_period
                    .ok_or_else(|| HarnessError::Config("switching adversary needs adversary_period".into()))?;
                Ok(AdversarySpec::switching(dims, period)?)
            }
            AdversaryKind::Replay => {
                unused("adversary_period", self.adversary_period.is_some())?;
                unused("adversary_value", self.adversary_value.is_some())?;
                let file = self
                    .adversary_file
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("replay adversary needs adversary_file".into()))?;
                let path = self.path(file);
                let tape = load_replay(&path).map_err(|e| HarnessError::io(&path, e))??;
                if tape.dims() != dims {
                    return Err(HarnessError::Config(format!(
                        "replay file {} has {}, config has {dims}",
                        path.display(),
                        tape.dims()
                    )));
                }
                Ok(AdversarySpec::Replay(Arc::new(tape)))
            }
        }
    }
}

/// A validated run with concrete parameters.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub setting: Setting,
    /// The true MDP. Only the harness reads its kernel in the unknown setting.
    pub spec: MdpSpec,
    pub episodes: usize,
    pub eta_setting: Tunable,
    pub delta_setting: Tunable,
    pub eta: f64,
    /// Unknown setting only.
    pub delta: Option<f64>,
    pub adversary: AdversarySpec,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub log_hindsight_prefix: bool,
    pub debug_collapse: bool,
    pub warnings: Vec<String>,
}

impl ResolvedConfig {
    fn tune(&mut self) -> Result<(), HarnessError> {
        let d = self.spec.dims();
        let t = self.episodes;
        self.warnings.clear();
        match self.setting {
            Setting::Known => {
                self.eta = match self.eta_setting {
                    Tunable::Value(eta) => eta,
                    Tunable::Auto(_) => recommended_eta(d.states, d.actions, d.horizon, t)?,
                };
                self.delta = None;
            }
            Setting::Unknown => {
                let rec = recommended_params(d.states, d.actions, d.horizon, t)?;
                self.eta = match self.eta_setting {
                    Tunable::Value(eta) => eta,
                    Tunable::Auto(_) => rec.eta,
                };
                self.delta = Some(match self.delta_setting {
                    Tunable::Value(delta) => delta,
                    Tunable::Auto(_) => rec.delta,
                });
                if self.eta > 1.0 / (d.horizon * d.horizon) as f64 {
                    self.warnings.push(format!(
                        "eta = {} exceeds 1/H^2 = {}; the stability argument does not cover this regime",
                        self.eta,
                        1.0 / (d.horizon * d.horizon) as f64
                    ));
                }
            }
        }
        ExpParams::new(self.eta)?;
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(HarnessError::Config(format!("delta must lie in (0, 1), got {delta}")));
            }
        }
        Ok(())
    }

    /// Same run with a different number of episodes; `auto` parameters are re-tuned.
    pub fn with_episodes(&self, episodes: usize) -> Result<Self, HarnessError> {
        if episodes == 0 {
            return Err(HarnessError::Config("T must be at least 1".into()));
        }
        let mut next = self.clone();
        next.episodes = episodes;
        next.tune()?;
        Ok(next)
    }

    pub fn dims(&self) -> Dims {
        self.spec.dims()
    }

    /// Adversary for one run seed. Only `iid_uniform` depends on the seed.
    pub fn adversary_for_seed(&self, seed: u64) -> AdversarySpec {
        match &self.adversary {
            AdversarySpec::IidUniform { dims, seed: base } => AdversarySpec::IidUniform {
                dims: *dims,
                seed: rng::derive_seed(*base, seed),
            },
            other => other.clone(),
        }
    }

    /// Reference regret scale: `2 H^2 sqrt((1 + ln SA) T)` with known
    /// transitions, `H^2 S sqrt(A T)` without.
    pub fn bound(&self) -> f64 {
        let d = self.dims();
        let (s, a, h, t) = (d.states as f64, d.actions as f64, d.horizon as f64, self.episodes as f64);
        match self.setting {
            Setting::Known => 2.0 * h * h * ((1.0 + (s * a).ln()) * t).sqrt(),
            Setting::Unknown => h * h * s * (a * t).sqrt(),
        }
    }

    fn setting_label(&self) -> &'static str {
        match (self.setting, self.debug_collapse) {
            (Setting::Unknown, true) => "unknown(debug-collapse)",
            (s, _) => s.name(),
        }
    }
}

/// One row of the per-seed CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub t: usize,
    pub epoch: Option<usize>,
    pub v_t: f64,
    pub v_tilde: Option<f64>,
    pub cum_algo: f64,
    pub prefix_regret: Option<f64>,
    pub epoch_event: Option<bool>,
}

/// Exact-value regret accounting for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretLedger {
    pub values: Vec<f64>,
    pub algo: f64,
    pub opt: f64,
    pub opt_policy: DeterministicPolicy,
}

impl RegretLedger {
    pub fn regret(&self) -> f64 {
        self.opt - self.algo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeedStatus {
    Completed(RegretLedger),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
    pub status: SeedStatus,
    /// Policies played, in order.
    pub policies: Vec<DeterministicPolicy>,
    /// Epochs (with at least one episode) whose confidence set held the true kernel.
    pub epochs_containing_truth: usize,
    pub epochs: usize,
}

impl SeedOutcome {
    pub fn ledger(&self) -> Option<&RegretLedger> {
        match &self.status {
            SeedStatus::Completed(l) => Some(l),
            SeedStatus::Failed(_) => None,
        }
    }

    pub fn regret(&self) -> Option<f64> {
        self.ledger().map(RegretLedger::regret)
    }
}

enum Learner {
    Known(FplAgent),
    Unknown(FpopAgent),
}

/// Runs one seed against the configured (oblivious) adversary.
pub fn run_seed(config: &ResolvedConfig, seed: u64) -> SeedOutcome {
    let mut source = config.adversary_for_seed(seed);
    run_seed_with_source(config, seed, &mut source, false).expect("configured adversaries are oblivious")
}

/// Runs one seed against any reward source. Adaptive sources are refused
/// unless `allow_adaptive` is set, since no regret guarantee covers them.
pub fn run_seed_with_source(
    config: &ResolvedConfig,
    seed: u64,
    source: &mut dyn RewardSource,
    allow_adaptive: bool,
) -> Result<SeedOutcome, Error> {
    if !source.is_oblivious() && !allow_adaptive {
        return Err(Error::AdaptiveNotAcknowledged);
    }
    let mut outcome = SeedOutcome {
        seed,
        records: Vec::with_capacity(config.episodes),
        status: SeedStatus::Failed(String::new()),
        policies: Vec::with_capacity(config.episodes),
        epochs_containing_truth: 0,
        epochs: 0,
    };
    outcome.status = match episode_loop(config, seed, source, &mut outcome) {
        Ok(ledger) => SeedStatus::Completed(ledger),
        Err(e) => SeedStatus::Failed(e.to_string()),
    };
    Ok(outcome)
}

fn episode_loop(
    config: &ResolvedConfig,
    seed: u64,
    source: &mut dyn RewardSource,
    outcome: &mut SeedOutcome,
) -> Result<RegretLedger, Error> {
    let spec = &config.spec;
    let dims = spec.dims();
    let kernel = spec.kernel();
    let s1 = spec.initial_state();
    let params = ExpParams::new(config.eta)?;
    let mut agent_rng = rng::stream(seed, streams::AGENT);
    let mut env_rng = rng::stream(seed, streams::ENVIRONMENT);

    let mut learner = match config.setting {
        Setting::Known => Learner::Known(FplAgent::new(spec.clone(), params, &mut agent_rng)),
        Setting::Unknown => {
            let settings = FpopSettings {
                dims,
                initial_state: s1,
                episodes: config.episodes,
                params,
                delta: config.delta.expect("unknown setting has delta"),
            };
            Learner::Unknown(if config.debug_collapse {
                FpopAgent::pinned(settings, kernel.clone(), agent_rng)?
            } else {
                FpopAgent::new(settings, agent_rng)?
            })
        }
    };

    let mut cumulative = RewardTensor::zeros(dims);
    let mut values = Vec::with_capacity(config.episodes);
    let mut algo = 0.0;
    let mut checked_epoch = 0;
    for t in 1..=config.episodes {
        let (policy, plan, epoch) = match &learner {
            Learner::Known(agent) => (agent.select_policy(), None, None),
            Learner::Unknown(agent) => {
                if agent.epoch() != checked_epoch {
                    checked_epoch = agent.epoch();
                    outcome.epochs += 1;
                    if agent.confidence_set().contains(kernel) {
                        outcome.epochs_containing_truth += 1;
                    }
                }
                let plan = agent.plan();
                (plan.policy().clone(), Some(plan), Some(agent.epoch()))
            }
        };
        let reward = source.reward(t, &policy)?;
        reward.check_unit_range()?;
        let v_t = policy_value(&reward, kernel, &policy, s1)?;
        let v_tilde = plan.as_ref().map(|p| p.optimistic_value(&reward, s1));

        let epoch_event = match &mut learner {
            Learner::Known(agent) => {
                agent.observe(&reward)?;
                None
            }
            Learner::Unknown(agent) => {
                let trajectory = sample_trajectory(kernel, &policy, s1, &mut env_rng);
                Some(agent.end_episode(&trajectory, &reward)?.is_some())
            }
        };

        algo += v_t;
        values.push(v_t);
        cumulative.add_assign(&reward)?;
        let prefix_regret = if config.log_hindsight_prefix {
            Some(opt_in_hindsight(&cumulative, kernel, s1)?.0 - algo)
        } else {
            None
        };
        outcome.records.push(EpisodeRecord {
            t,
            epoch,
            v_t,
            v_tilde,
            cum_algo: algo,
            prefix_regret,
            epoch_event,
        });
        outcome.policies.push(policy);
    }
    let (opt, opt_policy) = opt_in_hindsight(&cumulative, kernel, s1)?;
    Ok(RegretLedger {
        values,
        algo,
        opt,
        opt_policy,
    })
}

/// All seeds of one configuration, in config order.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ResolvedConfig,
    pub outcomes: Vec<SeedOutcome>,
}

impl RunReport {
    pub fn failures(&self) -> Vec<(u64, &str)> {
        self.outcomes
            .iter()
            .filter_map(|o| match &o.status {
                SeedStatus::Failed(msg) => Some((o.seed, msg.as_str())),
                SeedStatus::Completed(_) => None,
            })
            .collect()
    }

    /// Mean regret over completed seeds.
    pub fn mean_regret(&self) -> Option<f64> {
        let regrets: Vec<f64> = self.outcomes.iter().filter_map(SeedOutcome::regret).collect();
        (!regrets.is_empty()).then(|| regrets.iter().sum::<f64>() / regrets.len() as f64)
    }

    /// Pooled fraction of epochs whose confidence set held the true kernel.
    pub fn containment_rate(&self) -> Option<f64> {
        let epochs: usize = self.outcomes.iter().map(|o| o.epochs).sum();
        let held: usize = self.outcomes.iter().map(|o| o.epochs_containing_truth).sum();
        (epochs > 0).then(|| held as f64 / epochs as f64)
    }
}

/// Runs every seed in parallel.
pub fn run(config: &ResolvedConfig) -> RunReport {
    let outcomes = config.seeds.par_iter().map(|&seed| run_seed(config, seed)).collect();
    RunReport {
        config: config.clone(),
        outcomes,
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn cell<T>(x: Option<T>, f: impl FnOnce(T) -> String) -> String {
    x.map(f).unwrap_or_default()
}

pub fn episode_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(EPISODE_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.t,
            cell(r.epoch, |e| e.to_string()),
            format_float(r.v_t),
            cell(r.v_tilde, format_float),
            format_float(r.cum_algo),
            cell(r.prefix_regret, format_float),
            cell(r.epoch_event, |e| u8::from(e).to_string()),
        );
    }
    out
}

pub fn summary_csv(report: &RunReport) -> String {
    let c = &report.config;
    let d = c.dims();
    let bound = c.bound();
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for o in &report.outcomes {
        let (label, numbers) = match o.ledger() {
            Some(l) => (
                c.setting_label().to_string(),
                format!(
                    "{},{},{},{},{}",
                    format_float(l.opt),
                    format_float(l.algo),
                    format_float(l.regret()),
                    format_float(bound),
                    format_float(l.regret() / bound)
                ),
            ),
            None => (format!("{}:failed", c.setting_label()), format!(",,,{},", format_float(bound))),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            o.seed,
            label,
            d.states,
            d.actions,
            d.horizon,
            c.episodes,
            format_float(c.eta),
            cell(c.delta, format_float),
            numbers
        );
    }
    out
}

pub fn episode_file_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

/// Writes `seed_<seed>.csv` per seed and `summary.csv` into `dir`.
pub fn write_outputs(report: &RunReport, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for o in &report.outcomes {
        let path = dir.join(episode_file_name(o.seed));
        fs::write(&path, episode_csv(&o.records)).map_err(|e| HarnessError::io(&path, e))?;
    }
    let path = dir.join("summary.csv");
    fs::write(&path, summary_csv(report)).map_err(|e| HarnessError::io(&path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub episodes: usize,
    pub mean_regret: f64,
    pub failed_seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of log mean regret against log T; `None` when
    /// some mean regret is not positive.
    pub slope: Option<f64>,
}

impl ScalingReport {
    pub fn render(&self) -> String {
        let mut out = String::from("T,mean_regret,failed_seeds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.episodes, format_float(r.mean_regret), r.failed_seeds);
        }
        match self.slope {
            Some(s) => {
                let _ = writeln!(out, "slope,{}", format_float(s));
            }
            None => out.push_str("slope,undefined (degenerate: nonpositive mean regret)\n"),
        }
        out
    }
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = points.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean regret per horizon and the log-log slope.
pub fn scaling(config: &ResolvedConfig, horizons: &[usize]) -> Result<ScalingReport, HarnessError> {
    let mut distinct = horizons.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(HarnessError::Config("scaling needs at least two distinct values of T".into()));
    }
    let mut rows = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let report = run(&config.with_episodes(t)?);
        let failed = report.failures().len();
        let mean = report
            .mean_regret()
            .ok_or_else(|| HarnessError::Check(format!("every seed failed at T = {t}")))?;
        rows.push(ScalingRow {
            episodes: t,
            mean_regret: mean,
            failed_seeds: failed,
        });
    }
    let slope = rows.iter().all(|r| r.mean_regret > 0.0).then(|| {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| ((r.episodes as f64).ln(), r.mean_regret.ln()))
            .collect();
        ls_slope(&points)
    });
    Ok(ScalingReport { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(extra: &str) -> String {
        format!(
            "setting = \"known\"\nS = 2\nA = 2\nH = 2\nT = 10\nadversary = \"switching\"\nadversary_period = 3\nseeds = [1, 2]\n{extra}"
        )
    }

    #[test]
    fn parses_minimal_config() {
        let c = RunConfig::parse(&base("")).unwrap();
        assert_eq!(c.eta, Tunable::Auto(Auto::Auto));
        assert_eq!(c.kernel, "random");
        let r = c.resolve().unwrap();
        assert!((r.eta - recommended_eta(2, 2, 2, 10).unwrap()).abs() < 1e-15);
        assert_eq!(r.delta, None);
    }

    #[test]
    fn explicit_and_integer_eta() {
        let r = RunConfig::parse(&base("eta = 1")).unwrap().resolve().unwrap();
        assert_eq!(r.eta, 1.0);
        let r = RunConfig::parse(&base("eta = 0.25")).unwrap().resolve().unwrap();
        assert_eq!(r.eta, 0.25);
        assert!(RunConfig::parse(&base("eta = \"fast\"")).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::parse(&base("colour = 3")).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("colour"));
    }

    #[test]
    fn config_contract_errors() {
        for extra in ["delta = 0.1", "debug_collapse = true"] {
            assert!(RunConfig::parse(&base(extra)).unwrap().resolve().is_err(), "{extra}");
        }
        let no_seeds = base("").replace("seeds = [1, 2]", "seeds = []");
        assert!(RunConfig::parse(&no_seeds).unwrap().resolve().is_err());
        let zero_t = base("").replace("T = 10", "T = 0");
        assert!(RunConfig::parse(&zero_t).unwrap().resolve().is_err());
        let no_period = base("").replace("adversary_period = 3\n", "");
        assert!(RunConfig::parse(&no_period).unwrap().resolve().is_err());
    }

    #[test]
    fn unknown_setting_tunes_delta() {
        let text = base("").replace("\"known\"", "\"unknown\"");
        let r = RunConfig::parse(&text).unwrap().resolve().unwrap();
        let rec = recommended_params(2, 2, 2, 10).unwrap();
        assert_eq!((r.eta, r.delta), (rec.eta, Some(rec.delta)));
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn bounds() {
        let r = RunConfig::parse(&base("")).unwrap().resolve().unwrap();
        assert!((r.bound() - 8.0 * ((1.0 + 4f64.ln()) * 10.0).sqrt()).abs() < 1e-12);
        let text = base("").replace("\"known\"", "\"unknown\"");
        let r = RunConfig::parse(&text).unwrap().resolve().unwrap();
        assert!((r.bound() - 4.0 * 2.0 * 20f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn float_cells_round_trip() {
        for x in [0.1, 1.0 / 3.0, 12345.678901234567, 0.0, -2.5e-300] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(f64, f64)> = [1.0f64, 10.0, 100.0].iter().map(|&t| (t.ln(), (3.0 * t.sqrt()).ln())).collect();
        assert!((ls_slope(&pts) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn episode_csv_leaves_absent_cells_empty() {
        let rec = EpisodeRecord {
            t: 1,
            epoch: None,
            v_t: 0.5,
            v_tilde: None,
            cum_algo: 0.5,
            prefix_regret: None,
            epoch_event: None,
        };
        let csv = episode_csv(&[rec]);
        assert_eq!(csv, format!("{EPISODE_HEADER}\n1,,5.0000000000000000e-1,,5.0000000000000000e-1,,\n"));
    }
}
