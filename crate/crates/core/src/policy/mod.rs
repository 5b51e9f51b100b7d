//! Conditioned one-step stochastic policy.

pub mod dist;
pub mod net;
pub mod obs;

pub use dist::{action_log_prob, mean_action, sample_action, ActionSample, Squash};
pub use net::{ForwardCache, NetShape, PolicyParams, Upstream};
pub use obs::{encode_observation, CloudBank, CloudFeatures, Observation, DEFAULT_POINTS};

use rayon::prelude::*;

use crate::error::Result;

/// Rows per forward chunk when many observations are evaluated at once.
const FORWARD_CHUNK: usize = 64;

/// Means and values for many observations, computed in fixed-size chunks on
/// the current rayon pool. Rows are independent, so the result does not
/// depend on the number of threads.
pub fn forward_many(params: &PolicyParams, obs: &[Observation]) -> Result<Vec<(Vec<f64>, f64)>> {
    let chunks: Vec<Result<Vec<(Vec<f64>, f64)>>> = obs
        .par_chunks(FORWARD_CHUNK)
        .map(|chunk| {
            let refs: Vec<&Observation> = chunk.iter().collect();
            let c = params.forward(&refs)?;
            Ok((0..chunk.len()).map(|i| (c.mean_row(i).to_vec(), c.value[i])).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(obs.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}
