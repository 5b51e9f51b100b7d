//! One-step PPO. Each episode is a single edit decision followed by one replay
//! of the edited demonstration, so returns are immediate rewards: there is no
//! discounting and no bootstrapping.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demo::{ActionBounds, EditAction};
use crate::error::{Error, Result};
use crate::eval::{evaluate, metrics_from_records, Actor, EvalConfig, Metrics};
use crate::io::{save_checkpoint, CheckpointMeta};
use crate::policy::dist::{entropy, gaussian_log_prob, sample_action};
use crate::policy::{encode_observation, forward_many, CloudBank, CloudFeatures, NetShape, Observation, PolicyParams, Squash, Upstream};
use crate::reward::RewardConfig;
use crate::rng::{self, rng_for, Stream};
use crate::sim::{reset_env, rollout, EnvState, RolloutRecord, Scene, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Episodes per iteration `E`.
    pub envs_per_iter: usize,
    pub iterations: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    /// Global gradient-norm cap per minibatch step.
    pub max_grad_norm: f64,
    /// Style disturbance sigma (radians); 0 disables it.
    pub sigma_style: f64,
    pub init_log_std: f64,
    /// Cloud points fed to the encoder.
    pub points: usize,
    pub seed: u64,
    /// Object names to train on; empty means every loaded object.
    pub objects: Vec<String>,
    /// Evaluate every this many iterations (0 = only after the last one).
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Write a checkpoint every this many iterations (0 = only at the end).
    pub checkpoint_every: usize,
    pub reward: RewardConfig,
    pub bounds: ActionBounds,
    pub sim: SimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            envs_per_iter: 512,
            iterations: 500,
            minibatch: 128,
            epochs: 4,
            clip: 0.2,
            entropy_coef: 0.005,
            value_coef: 0.5,
            learning_rate: 3e-4,
            max_grad_norm: 0.5,
            sigma_style: 0.05,
            init_log_std: -2.0,
            points: crate::policy::DEFAULT_POINTS,
            seed: 0,
            objects: Vec::new(),
            eval_every: 0,
            eval_episodes: 500,
            checkpoint_every: 0,
            reward: RewardConfig::default(),
            bounds: ActionBounds::default(),
            sim: SimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.minibatch == 0 || self.envs_per_iter < self.minibatch {
            return bad("envs_per_iter must be at least minibatch, and minibatch positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        let positive = [self.clip, self.learning_rate, self.max_grad_norm];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("clip, learning_rate and max_grad_norm must be positive");
        }
        let nonneg = [self.entropy_coef, self.value_coef, self.sigma_style];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return bad("entropy_coef, value_coef and sigma_style must be non-negative");
        }
        if self.points == 0 || self.eval_episodes == 0 {
            return bad("points and eval_episodes must be positive");
        }
        if !self.init_log_std.is_finite() {
            return bad("init_log_std must be finite");
        }
        self.reward.validate()?;
        self.bounds.validate()?;
        self.sim.validate()
    }

    /// Resolves `objects` against the scene (all objects when empty).
    pub fn object_indices(&self, scene: &Scene) -> Result<Vec<usize>> {
        if self.objects.is_empty() {
            return Ok((0..scene.objects.len()).collect());
        }
        self.objects
            .iter()
            .map(|name| {
                scene
                    .objects
                    .iter()
                    .position(|o| &o.model.name == name)
                    .ok_or_else(|| Error::Config(format!("unknown object `{name}`")))
            })
            .collect()
    }
}

/// Result of executing one episode's action.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub reward: f64,
    pub success: bool,
    pub record: Option<RolloutRecord>,
}

/// A one-step decision problem the trainer can optimize.
pub trait OneStepTask: Sync {
    type State: Send + Sync;

    fn shape(&self) -> NetShape;
    fn squash(&self) -> &Squash;
    fn reset(&self, rng: &mut rng::Rng) -> (Self::State, Observation);
    fn step(&self, state: &Self::State, action: &EditAction) -> Result<StepOutcome>;

    /// Task metrics over a batch's records, if the task has any.
    fn summarize(&self, _records: &[RolloutRecord]) -> Option<Metrics> {
        None
    }
}

/// Demonstration editing on a scene: random object, placement, affordance and style.
pub struct GraspTask<'a> {
    pub scene: &'a Scene,
    pub bank: CloudBank,
    pub objects: Vec<usize>,
    squash: Squash,
    sim: SimConfig,
    reward: RewardConfig,
    sigma_style: f64,
}

impl<'a> GraspTask<'a> {
    pub fn new(scene: &'a Scene, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            bank: CloudBank::new(scene, cfg.points, cfg.seed)?,
            objects: cfg.object_indices(scene)?,
            squash: Squash::new(&cfg.bounds, scene.spec.dof())?,
            scene,
            sim: cfg.sim,
            reward: cfg.reward,
            sigma_style: cfg.sigma_style,
        })
    }
}

impl OneStepTask for GraspTask<'_> {
    type State = EnvState;

    fn shape(&self) -> NetShape {
        NetShape {
            styles: self.scene.style_count(),
            dof: self.scene.spec.dof(),
            points: self.bank.points,
        }
    }

    fn squash(&self) -> &Squash {
        &self.squash
    }

    fn reset(&self, rng: &mut rng::Rng) -> (EnvState, Observation) {
        let object = self.objects[rng.random_range(0..self.objects.len())];
        let sigma = (self.sigma_style > 0.0).then_some(self.sigma_style);
        let env = reset_env(self.scene, object, None, sigma, &self.sim, rng);
        let obs = encode_observation(&env, self.scene, &self.bank);
        (env, obs)
    }

    fn step(&self, env: &EnvState, action: &EditAction) -> Result<StepOutcome> {
        let mut rec = rollout(self.scene, env, action, &self.sim)?;
        // the style term compares against the canonical style, not the disturbed one
        let r = rec.score(&self.scene.styles[env.style].q, &self.reward);
        rec.trajectory = Vec::new();
        Ok(StepOutcome {
            reward: r.total,
            success: rec.success,
            record: Some(rec),
        })
    }

    fn summarize(&self, records: &[RolloutRecord]) -> Option<Metrics> {
        Some(metrics_from_records(records, &self.scene.spec, false))
    }
}

/// Synthetic bandit: reward `−‖a − a*‖²` on the squashed action, optimum 0.
pub struct QuadraticBandit {
    pub target: Vec<f64>,
    shape: NetShape,
    squash: Squash,
    obs: Observation,
}

impl QuadraticBandit {
    /// Places `a*` at a fixed interior point of every action interval.
    pub fn new(bounds: &ActionBounds, dof: usize) -> Result<Self> {
        let squash = Squash::new(bounds, dof)?;
        let target = squash
            .lo
            .iter()
            .zip(&squash.hi)
            .enumerate()
            .map(|(j, (l, h))| {
                let u = 0.5 + 0.3 * if j % 2 == 0 { 1.0 } else { -1.0 };
                l + u * (h - l)
            })
            .collect();
        let shape = NetShape { styles: 1, dof, points: 4 };
        let mut features = vec![0.0; shape.feature_dim()];
        features[3] = 1.0;
        features[10] = 1.0;
        features[17] = 1.0;
        features[18] = 0.1;
        let cloud = (0..shape.points * 6).map(|i| ((i * 7 % 11) as f64 / 11.0) - 0.5).collect();
        Ok(Self {
            target,
            shape,
            squash,
            obs: Observation {
                features,
                cloud: std::sync::Arc::new(CloudFeatures::new(cloud)),
            },
        })
    }
}

impl OneStepTask for QuadraticBandit {
    type State = ();

    fn shape(&self) -> NetShape {
        self.shape
    }

    fn squash(&self) -> &Squash {
        &self.squash
    }

    fn reset(&self, _rng: &mut rng::Rng) -> ((), Observation) {
        ((), self.obs.clone())
    }

    fn step(&self, _: &(), action: &EditAction) -> Result<StepOutcome> {
        let a = action.to_vec();
        let d2: f64 = a.iter().zip(&self.target).map(|(x, t)| (x - t) * (x - t)).sum();
        Ok(StepOutcome {
            reward: -d2,
            success: false,
            record: None,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Observation,
    pub raw: Vec<f64>,
    pub action: Vec<f64>,
    /// Log-probability of the squashed action.
    pub log_prob: f64,
    /// Log-density of `raw` before squashing. The squash Jacobian does not
    /// depend on the parameters, so probability ratios use this part only.
    pub raw_log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub success: bool,
    /// The episode errored and was scored as zero reward.
    pub failed: bool,
    pub record: Option<RolloutRecord>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub transitions: Vec<Transition>,
    /// `reward − value_old`, normalized once over the batch.
    pub advantages: Vec<f64>,
    pub episode_errors: usize,
}

impl Batch {
    pub fn mean_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum::<f64>() / self.transitions.len().max(1) as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.transitions.iter().filter(|t| t.success).count() as f64 / self.transitions.len().max(1) as f64
    }

    pub fn records(&self) -> Vec<RolloutRecord> {
        self.transitions.iter().filter_map(|t| t.record.clone()).collect()
    }
}

/// Zero mean, unit standard deviation (`ε = 1e-8`).
pub fn normalize_advantages(raw: &[f64]) -> Vec<f64> {
    let n = raw.len().max(1) as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    raw.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Runs `episodes` independent episodes against a frozen snapshot on the
/// current rayon pool. Episode `i` draws from its own `(seed, iteration, i)`
/// stream, so the batch does not depend on the worker count.
pub fn collect_batch<T: OneStepTask>(params: &PolicyParams, task: &T, episodes: usize, seed: u64, iteration: u64) -> Result<Batch> {
    let starts: Vec<(rng::Rng, T::State, Observation)> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_for(seed, Stream::Episode, iteration, i as u64);
            let (state, obs) = task.reset(&mut rng);
            (rng, state, obs)
        })
        .collect();
    let obs: Vec<Observation> = starts.iter().map(|s| s.2.clone()).collect();
    let heads = forward_many(params, &obs)?;
    let log_std = params.log_std();
    let squash = task.squash();
    let transitions: Vec<Transition> = starts
        .into_par_iter()
        .zip(heads.into_par_iter())
        .enumerate()
        .map(|(i, ((mut rng, state, obs), (mean, value)))| {
            let s = sample_action(&mean, &log_std, squash, &mut rng);
            let raw_log_prob = gaussian_log_prob(&s.raw, &mean, &log_std);
            let (reward, success, failed, record) = match task.step(&state, &s.action) {
                Ok(o) => (o.reward, o.success, false, o.record),
                Err(e) => {
                    log::warn!("episode {i} of iteration {iteration} failed: {e}");
                    (0.0, false, true, None)
                }
            };
            Transition {
                obs,
                action: s.action.to_vec(),
                raw: s.raw,
                log_prob: s.log_prob,
                raw_log_prob,
                value,
                reward,
                success,
                failed,
                record,
            }
        })
        .collect();
    let adv: Vec<f64> = transitions.iter().map(|t| t.reward - t.value).collect();
    let episode_errors = transitions.iter().filter(|t| t.failed).count();
    let b = Batch {
        advantages: normalize_advantages(&adv),
        transitions,
        episode_errors,
    };
    if b.advantages.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("batch advantages".into()));
    }
    Ok(b)
}

/// Clipped surrogate `min(ρÂ, clip(ρ, 1−ε, 1+ε)Â)` and its derivative in `ρ`.
pub fn surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    let a = ratio * adv;
    let b = clipped * adv;
    if a <= b {
        (a, adv)
    } else {
        (b, 0.0)
    }
}

/// Per-sample inputs of the PPO loss.
#[derive(Debug, Clone, Copy)]
pub struct LossSample<'a> {
    pub obs: &'a Observation,
    pub raw: &'a [f64],
    pub old_log_prob: f64,
    pub advantage: f64,
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossCoefs {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
}

impl From<&TrainConfig> for LossCoefs {
    fn from(c: &TrainConfig) -> Self {
        Self {
            clip: c.clip,
            value: c.value_coef,
            entropy: c.entropy_coef,
        }
    }
}

/// `−L_clip + c_v·mean((v − R)²) − c_e·H` over a minibatch, with its exact gradient.
/// `old_log_prob` is the pre-squash density; the squash Jacobian cancels in `ρ`.
pub fn ppo_loss(params: &PolicyParams, samples: &[LossSample<'_>], coefs: LossCoefs, want_grad: bool) -> Result<(LossParts, Option<Vec<f64>>, Vec<u64>)> {
    let obs: Vec<&Observation> = samples.iter().map(|s| s.obs).collect();
    let cache = params.forward(&obs)?;
    let a = params.shape.action_dim();
    let b = samples.len() as f64;
    let log_std = &cache.log_std;
    let inv_var: Vec<f64> = log_std.iter().map(|s| (-2.0 * s).exp()).collect();
    let mut up = Upstream::zeros(samples.len(), a);
    let mut parts = LossParts::default();
    let mut clipped = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let mean = cache.mean_row(i);
        let lp = gaussian_log_prob(s.raw, mean, log_std);
        let ratio = (lp - s.old_log_prob).exp();
        let (l, dl) = surrogate(ratio, s.advantage, coefs.clip);
        if (ratio - 1.0).abs() > coefs.clip {
            clipped += 1;
        }
        parts.policy -= l / b;
        parts.approx_kl += (s.old_log_prob - lp) / b;
        let err = cache.value[i] - s.ret;
        parts.value += err * err / b;
        up.d_value[i] = coefs.value * 2.0 * err / b;
        let g_lp = -dl * ratio / b;
        if g_lp != 0.0 {
            for j in 0..a {
                let diff = s.raw[j] - mean[j];
                up.d_mean[i * a + j] = g_lp * diff * inv_var[j];
                up.d_log_std[j] += g_lp * (diff * diff * inv_var[j] - 1.0);
            }
        }
    }
    parts.entropy = entropy(log_std);
    for g in &mut up.d_log_std {
        *g -= coefs.entropy;
    }
    parts.clip_fraction = clipped as f64 / b;
    parts.total = parts.policy + coefs.value * parts.value - coefs.entropy * parts.entropy;
    let grad = want_grad.then(|| params.backward(&cache, &up));
    Ok((parts, grad, cache.signature()))
}

/// Adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            params[k] -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
        }
    }
}

/// Scales `grad` so its norm is at most `max_norm`; returns the norm before scaling.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub mean_reward: f64,
    pub gsr: f64,
    pub clip_fraction: f64,
    pub entropy: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    /// A non-finite loss stopped the update and the previous parameters were restored.
    pub aborted: bool,
}

/// `epochs` passes of shuffled minibatch steps. On a non-finite loss the
/// parameters and optimizer state from before the call are restored.
pub fn ppo_update(params: &mut PolicyParams, adam: &mut Adam, batch: &Batch, cfg: &TrainConfig, iteration: u64) -> UpdateStats {
    let saved = (params.clone(), adam.clone());
    let coefs = LossCoefs::from(cfg);
    let mut stats = UpdateStats {
        mean_reward: batch.mean_reward(),
        gsr: batch.success_rate(),
        ..Default::default()
    };
    let n = batch.transitions.len();
    let mut steps = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng_for(cfg.seed, Stream::Shuffle, iteration, epoch as u64));
        for chunk in order.chunks(cfg.minibatch) {
            let samples: Vec<LossSample<'_>> = chunk
                .iter()
                .map(|&i| {
                    let t = &batch.transitions[i];
                    LossSample {
                        obs: &t.obs,
                        raw: &t.raw,
                        old_log_prob: t.raw_log_prob,
                        advantage: batch.advantages[i],
                        ret: t.reward,
                    }
                })
                .collect();
            let result = ppo_loss(params, &samples, coefs, true);
            let (parts, grad) = match result {
                Ok((p, Some(g), _)) if p.total.is_finite() && g.iter().all(|v| v.is_finite()) => (p, g),
                other => {
                    let why = match other {
                        Err(e) => e.to_string(),
                        _ => "non-finite loss or gradient".to_string(),
                    };
                    log::warn!("iteration {iteration}: {why}; restoring previous parameters");
                    *params = saved.0;
                    *adam = saved.1;
                    stats.aborted = true;
                    return stats;
                }
            };
            let mut grad = grad;
            clip_grad_norm(&mut grad, cfg.max_grad_norm);
            adam.step(&mut params.data, &grad);
            params.clamp_log_std();
            stats.clip_fraction += parts.clip_fraction;
            stats.value_loss += parts.value;
            stats.approx_kl += parts.approx_kl;
            steps += 1;
        }
    }
    let s = steps.max(1) as f64;
    stats.clip_fraction /= s;
    stats.value_loss /= s;
    stats.approx_kl /= s;
    stats.entropy = entropy(&params.log_std());
    stats
}

/// Largest relative error between `grad[k]` and central differences of `f`
/// over `indices` (denominator floored at 1e-6).
pub fn finite_diff_check_fn(f: impl Fn(&[f64]) -> f64, grad: &[f64], x: &[f64], indices: &[usize], h: f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut y = x.to_vec();
    for &k in indices {
        y[k] = x[k] + h;
        let fp = f(&y);
        y[k] = x[k] - h;
        let fm = f(&y);
        y[k] = x[k];
        let num = (fp - fm) / (2.0 * h);
        worst = worst.max(relative_error(grad[k], num));
    }
    worst
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameters skipped because a perturbation crossed a ReLU or max-pool switch.
    pub skipped: usize,
    /// Worst error per parameter block.
    pub per_block: Vec<(String, f64)>,
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Central finite differences of the full PPO loss against the analytic
/// gradient on `count` parameters drawn evenly from every block. Samples use
/// actions drawn from the policy itself, random advantages and returns.
pub fn finite_diff_check(params: &PolicyParams, obs: &[Observation], squash: &Squash, count: usize, seed: u64) -> Result<GradCheck> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("gradient check needs at least one observation".into()));
    }
    let mut rng = rng_for(seed, Stream::Misc, 0, 0);
    let refs: Vec<&Observation> = obs.iter().collect();
    let cache = params.forward(&refs)?;
    let log_std = cache.log_std.clone();
    let mut raws = Vec::new();
    let mut olds = Vec::new();
    for i in 0..obs.len() {
        let s = sample_action(cache.mean_row(i), &log_std, squash, &mut rng);
        // old log-prob slightly off so the ratio is not exactly one
        olds.push(gaussian_log_prob(&s.raw, cache.mean_row(i), &log_std) + rng.random_range(-0.05..0.05));
        raws.push(s.raw);
    }
    let advs: Vec<f64> = (0..obs.len()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let rets: Vec<f64> = (0..obs.len()).map(|_| rng.random_range(-1.0..3.0)).collect();
    let samples: Vec<LossSample<'_>> = (0..obs.len())
        .map(|i| LossSample {
            obs: &obs[i],
            raw: &raws[i],
            old_log_prob: olds[i],
            advantage: advs[i],
            ret: rets[i],
        })
        .collect();
    let coefs = LossCoefs { clip: 0.2, value: 0.5, entropy: 0.005 };
    let (_, grad, base_sig) = ppo_loss(params, &samples, coefs, true)?;
    let grad = grad.expect("gradient requested");

    let mut blocks: Vec<(String, std::ops::Range<usize>)> = params
        .layers()
        .iter()
        .enumerate()
        .map(|(k, l)| (PolicyParams::layer_name(k).to_string(), l.offset..l.offset + l.len()))
        .collect();
    blocks.push(("log_std".into(), params.log_std_offset()..params.data.len()));

    let h = GRAD_CHECK_STEP;
    let mut p = params.clone();
    let eval = |p: &PolicyParams| -> Result<(f64, Vec<u64>)> {
        let (parts, _, sig) = ppo_loss(p, &samples, coefs, false)?;
        Ok((parts.total, sig))
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
        per_block: Vec::new(),
    };
    let per_block = count.div_ceil(blocks.len());
    for (name, range) in &blocks {
        let mut worst: f64 = 0.0;
        let mut done = 0;
        let mut attempts = 0;
        // small blocks are sampled with replacement so each gets the same share
        while done < per_block && attempts < 20 * per_block {
            attempts += 1;
            let k = rng.random_range(range.clone());
            let x = p.data[k];
            p.data[k] = x + h;
            let (fp, sp) = eval(&p)?;
            p.data[k] = x - h;
            let (fm, sm) = eval(&p)?;
            p.data[k] = x;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let num = (fp - fm) / (2.0 * h);
            let e = relative_error(grad[k], num);
            if !e.is_finite() {
                return Err(Error::NonFinite(format!("gradient check in block {name}")));
            }
            worst = worst.max(e);
            done += 1;
        }
        report.checked += done;
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_block.push((name.clone(), worst));
    }
    Ok(report)
}

/// Gradient check on a freshly initialized policy for `task`, using real
/// observations. Weights are jittered and the mean head widened so every block
/// carries signal.
pub fn check_task_gradients<T: OneStepTask>(task: &T, observations: usize, count: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = rng_for(seed, Stream::Misc, 1, 0);
    let mut p = PolicyParams::init(task.shape(), -0.7, &mut rng);
    for v in &mut p.data {
        *v *= 1.0 + 0.1 * rng.random_range(-1.0..1.0);
    }
    let head = p.layers()[4];
    for k in head.offset..head.offset + head.len() {
        p.data[k] = rng.random_range(-0.2..0.2);
    }
    let obs: Vec<Observation> = (0..observations.max(1))
        .map(|i| task.reset(&mut rng_for(seed, Stream::Misc, 2, i as u64)).1)
        .collect();
    finite_diff_check(&p, &obs, task.squash(), count, seed)
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub mean_reward: f64,
    /// Success rate of the (stochastic) training batch.
    pub gsr: f64,
    pub sad: Option<f64>,
    pub sa: Option<f64>,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub episode_errors: usize,
    pub aborted: bool,
    /// Deterministic evaluation, when scheduled on this iteration.
    pub eval: Option<Metrics>,
}

/// Bulk-synchronous collect/update loop over a task.
pub struct Trainer<'t, T: OneStepTask> {
    pub task: &'t T,
    pub cfg: TrainConfig,
    pub params: PolicyParams,
    pub iteration: usize,
    adam: Adam,
    pool: rayon::ThreadPool,
}

impl<'t, T: OneStepTask> Trainer<'t, T> {
    pub fn new(task: &'t T, cfg: TrainConfig, workers: usize) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng_for(cfg.seed, Stream::Init, 0, 0);
        let params = PolicyParams::init(task.shape(), cfg.init_log_std, &mut rng);
        Self::with_params(task, cfg, params, workers)
    }

    pub fn with_params(task: &'t T, cfg: TrainConfig, params: PolicyParams, workers: usize) -> Result<Self> {
        cfg.validate()?;
        if params.shape != task.shape() {
            return Err(Error::Checkpoint(format!("parameter shape {:?} does not match task {:?}", params.shape, task.shape())));
        }
        let pool = build_pool(workers)?;
        Ok(Self {
            adam: Adam::new(params.data.len(), cfg.learning_rate),
            task,
            cfg,
            params,
            iteration: 0,
            pool,
        })
    }

    /// Runs `f` on this trainer's worker pool.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.pool.install(f)
    }

    /// One collect + update iteration.
    pub fn step(&mut self) -> Result<IterationLog> {
        let it = self.iteration as u64;
        let batch = {
            let (params, task, cfg) = (&self.params, self.task, &self.cfg);
            self.pool.install(|| collect_batch(params, task, cfg.envs_per_iter, cfg.seed, it))?
        };
        let stats = ppo_update(&mut self.params, &mut self.adam, &batch, &self.cfg, it);
        let m = self.task.summarize(&batch.records());
        self.iteration += 1;
        Ok(IterationLog {
            iteration: self.iteration,
            mean_reward: stats.mean_reward,
            gsr: stats.gsr,
            sad: m.as_ref().and_then(|m| m.sad),
            sa: m.as_ref().and_then(|m| m.sa),
            entropy: stats.entropy,
            clip_fraction: stats.clip_fraction,
            value_loss: stats.value_loss,
            approx_kl: stats.approx_kl,
            episode_errors: batch.episode_errors,
            aborted: stats.aborted,
            eval: None,
        })
    }
}

pub fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    if workers == 0 {
        return Err(Error::InvalidArgument("workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))
}

/// Metrics log written by [`train_grasp`], one JSON object per iteration.
pub const METRICS_LOG: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint.json";
/// Written when a run stops on an error.
pub const FAILURE_CHECKPOINT: &str = "checkpoint_failed.json";

pub fn periodic_checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.json")
}

/// Seed of the deterministic evaluations inside a training run.
pub fn eval_seed(seed: u64) -> u64 {
    rng::derive(seed, Stream::Eval, 1, 0)
}

/// Squashed-mean evaluation of `params` on the task's objects.
pub fn evaluate_policy(task: &GraspTask<'_>, params: &PolicyParams, cfg: &TrainConfig) -> Result<Metrics> {
    let mut ec = EvalConfig::new(cfg.eval_episodes, eval_seed(cfg.seed));
    ec.sim = cfg.sim;
    ec.reward = cfg.reward;
    let actor = Actor::Policy {
        params,
        bank: &task.bank,
        squash: &task.squash,
        stochastic: false,
    };
    Ok(evaluate(task.scene, &task.objects, &actor, &ec)?.metrics)
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: PolicyParams,
    pub meta: CheckpointMeta,
    pub logs: Vec<IterationLog>,
    /// Deterministic evaluation of the final parameters.
    pub final_eval: Metrics,
}

/// Full training run on a scene. With `out`, writes the metrics log, periodic
/// and final checkpoints there; on error the current parameters are saved as
/// [`FAILURE_CHECKPOINT`] before the error is returned.
pub fn train_grasp(scene: &Scene, cfg: &TrainConfig, workers: usize, out: Option<&Path>) -> Result<TrainRun> {
    let task = GraspTask::new(scene, cfg)?;
    let mut trainer = Trainer::new(&task, cfg.clone(), workers)?;
    let meta = |iteration: usize| CheckpointMeta {
        hand: scene.spec.name.clone(),
        styles: scene.style_count(),
        dof: scene.spec.dof(),
        points: cfg.points,
        seed: cfg.seed,
        iteration,
        fps_seed: task.bank.seed,
    };
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(METRICS_LOG);
            Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
        }
        None => None,
    };
    let mut logs = Vec::with_capacity(cfg.iterations);
    let mut body = || -> Result<()> {
        for _ in 0..cfg.iterations {
            let mut l = trainer.step()?;
            let it = l.iteration;
            if it == cfg.iterations || (cfg.eval_every > 0 && it % cfg.eval_every == 0) {
                let params = &trainer.params;
                l.eval = Some(trainer.install(|| evaluate_policy(&task, params, cfg))?);
            }
            log::info!(
                "iter {it}: reward {:.4} batch gsr {:.3} entropy {:.3}{}",
                l.mean_reward,
                l.gsr,
                l.entropy,
                l.eval.as_ref().map(|m| format!(" | eval {m}")).unwrap_or_default()
            );
            if l.aborted {
                log::warn!("iter {it}: non-finite loss, update skipped");
            }
            if let Some((w, path)) = log.as_mut() {
                let line = serde_json::to_string(&l).map_err(|e| Error::parse("metrics log", e))?;
                writeln!(w, "{line}").and_then(|_| w.flush()).map_err(|e| Error::io(&*path, e))?;
            }
            if let (Some(dir), true) = (out, cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0) {
                save_checkpoint(&trainer.params, &meta(it), dir.join(periodic_checkpoint_name(it)))?;
            }
            logs.push(l);
        }
        Ok(())
    };
    if let Err(e) = body() {
        if let Some(dir) = out {
            if let Err(save) = save_checkpoint(&trainer.params, &meta(trainer.iteration), dir.join(FAILURE_CHECKPOINT)) {
                log::warn!("could not save failure checkpoint: {save}");
            }
        }
        return Err(e);
    }
    let final_eval = match logs.last().and_then(|l| l.eval.clone()) {
        Some(m) => m,
        None => {
            let params = &trainer.params;
            trainer.install(|| evaluate_policy(&task, params, cfg))?
        }
    };
    let meta = meta(trainer.iteration);
    if let Some(dir) = out {
        save_checkpoint(&trainer.params, &meta, dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(TrainRun {
        params: trainer.params,
        meta,
        logs,
        final_eval,
    })
}
