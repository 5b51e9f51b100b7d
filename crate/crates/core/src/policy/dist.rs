//! Squashed diagonal Gaussian over edit actions.

use rand::Rng;
use rand_distr::StandardNormal;

use super::net::PolicyParams;
use super::obs::Observation;
use crate::demo::{ActionBounds, EditAction};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Distance from the interval ends used when inverting the squash.
pub const INTERIOR: f64 = 1e-6;

/// Maps raw Gaussian samples into the action box by `tanh` then an affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct Squash {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub dof: usize,
}

impl Squash {
    /// Requires every interval to have positive width.
    pub fn new(bounds: &ActionBounds, dof: usize) -> Result<Self> {
        bounds.validate()?;
        let (lo, hi): (Vec<f64>, Vec<f64>) = bounds.intervals(dof).into_iter().unzip();
        if lo.iter().zip(&hi).any(|(l, h)| !(h > l)) {
            return Err(Error::InvalidArgument("policy action bounds must have positive width".into()));
        }
        Ok(Self { lo, hi, dof })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (l, h))| l + 0.5 * (h - l) * (x.tanh() + 1.0))
            .collect()
    }

    /// Inverse squash. Components at or beyond an interval end are pulled
    /// `INTERIOR` (relative to the width) inside first; returns how many were.
    pub fn invert(&self, action: &[f64]) -> (Vec<f64>, usize) {
        let mut clamped = 0;
        let raw = action
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(a, (l, h))| {
                let u = 2.0 * (a - l) / (h - l) - 1.0;
                let lim = 1.0 - INTERIOR;
                let u = if u.abs() > lim {
                    clamped += 1;
                    u.clamp(-lim, lim)
                } else {
                    u
                };
                u.atanh()
            })
            .collect();
        (raw, clamped)
    }

    /// `Σ log(d action / d raw)`.
    pub fn log_jacobian(&self, raw: &[f64]) -> f64 {
        raw.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(x, (l, h))| (0.5 * (h - l)).ln() + log_sech2(*x))
            .sum()
    }

    pub fn to_action(&self, raw: &[f64]) -> EditAction {
        EditAction::from_vec(&self.apply(raw), self.dof).expect("squash dimension matches the hand")
    }
}

/// `log(1 − tanh²x)` without cancellation for large `|x|`.
fn log_sech2(x: f64) -> f64 {
    let y = -2.0 * x.abs();
    2.0 * (std::f64::consts::LN_2 - x.abs() - y.exp().ln_1p())
}

/// Log density of `raw` under `N(mean, exp(log_std)²)`.
pub fn gaussian_log_prob(raw: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    raw.iter()
        .zip(mean.iter().zip(log_std))
        .map(|(x, (m, s))| {
            let z = (x - m) / s.exp();
            -0.5 * z * z - s - 0.5 * LN_2PI
        })
        .sum()
}

/// Log density of the squashed action whose pre-image is `raw`.
pub fn squashed_log_prob(raw: &[f64], mean: &[f64], log_std: &[f64], squash: &Squash) -> f64 {
    gaussian_log_prob(raw, mean, log_std) - squash.log_jacobian(raw)
}

/// Differential entropy of the pre-squash Gaussian.
pub fn entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|s| s + 0.5 * (LN_2PI + 1.0)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionSample {
    pub raw: Vec<f64>,
    pub action: EditAction,
    pub log_prob: f64,
}

pub fn sample_action<R: Rng + ?Sized>(mean: &[f64], log_std: &[f64], squash: &Squash, rng: &mut R) -> ActionSample {
    let raw: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .map(|(m, s)| m + s.exp() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let log_prob = squashed_log_prob(&raw, mean, log_std, squash);
    ActionSample {
        action: squash.to_action(&raw),
        raw,
        log_prob,
    }
}

/// The deterministic action used for evaluation.
pub fn mean_action(mean: &[f64], squash: &Squash) -> EditAction {
    squash.to_action(mean)
}

/// Log-probability of an already-squashed action under the policy.
/// Returns the value and the number of components that had to be pulled off a bound.
pub fn action_log_prob(params: &PolicyParams, obs: &Observation, action: &EditAction, squash: &Squash) -> Result<(f64, usize)> {
    let cache = params.forward(&[obs])?;
    let v = action.to_vec();
    if v.len() != squash.dim() {
        return Err(Error::dim("action", squash.dim(), v.len()));
    }
    let (raw, clamped) = squash.invert(&v);
    Ok((squashed_log_prob(&raw, cache.mean_row(0), &cache.log_std, squash), clamped))
}
