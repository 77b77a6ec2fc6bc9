//! Exponential perturbations and the two facts about them that the
//! agents' guarantees lean on.

use rand::distributions::Open01;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::mdp::{Dims, RewardTensor};

/// Rate of an exponential distribution (mean `1 / eta`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpParams {
    eta: f64,
}

impl ExpParams {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(invalid("eta", format!("must be positive and finite, got {eta}")));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// One inverse-transform draw, `-ln(u) / eta` with `u` in the open unit interval.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.sample(Open01);
        -u.ln() / self.eta
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            -(-self.eta * x).exp_m1()
        }
    }
}

/// `S * A * H` i.i.d. `Exp(eta)` entries, drawn in tensor storage order.
pub fn sample_exp_tensor<R: Rng + ?Sized>(params: ExpParams, dims: Dims, rng: &mut R) -> RewardTensor {
    RewardTensor::from_fn(dims, |_, _, _| params.sample(rng))
}

/// `ln(1 - F(x)) = min(0, -eta x)` for the `Exp(eta)` c.d.f. `F`.
pub fn log_survival(x: f64, params: ExpParams) -> f64 {
    (-params.eta * x).min(0.0)
}

/// Upper bound `(1 + ln m) / eta` on the mean of the maximum of `m` i.i.d. `Exp(eta)` draws.
pub fn max_expectation_bound(m: usize, params: ExpParams) -> Result<f64> {
    if m < 1 {
        return Err(invalid("m", "need at least one variable"));
    }
    Ok((1.0 + (m as f64).ln()) / params.eta)
}
