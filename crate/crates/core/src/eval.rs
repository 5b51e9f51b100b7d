//! Grasp metrics, evaluation episodes, the uniform-random baseline and
//! component ablations.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demo::{ActionBounds, EditAction};
use crate::error::{Error, Result};
use crate::hand::HandSpec;
use crate::policy::{self, encode_observation, CloudBank, PolicyParams, Squash};
use crate::reward::RewardConfig;
use crate::rng::{rng_for, Stream};
use crate::sim::{reset_env, rollout, EnvState, RolloutRecord, Scene, SimConfig};
use crate::trainer::{train_grasp, TrainConfig};

/// Affordance distance bound of the composite strict success.
pub const STRICT_AFFORD_DISTANCE: f64 = 0.04;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub gsr: f64,
    /// Mean final affordance distance over successes (meters); `None` without successes.
    pub sad: Option<f64>,
    /// Mean pairwise joint distance over successful final configurations.
    pub sd: f64,
    /// `sd` computed on joint-limit-normalized configurations.
    pub sd_normalized: f64,
    /// `sd` relative to a supplied baseline run.
    pub sd_ratio: Option<f64>,
    /// Fraction of successes whose executed style matches the condition; `None` without successes.
    pub sa: Option<f64>,
    pub n_episodes: usize,
    pub n_success: usize,
    /// Whether success meant the composite strict definition.
    pub strict: bool,
}

impl Metrics {
    pub fn with_baseline(mut self, baseline: &Metrics) -> Self {
        self.sd_ratio = (baseline.sd > 0.0).then(|| self.sd / baseline.sd);
        self
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>, scale: f64| v.map_or("n/a".to_string(), |x| format!("{:.2}", x * scale));
        write!(
            f,
            "GSR {:.2}%  SAD {} cm  SD {:.4}  SA {}%  ({}/{} successes)",
            100.0 * self.gsr,
            opt(self.sad, 100.0),
            self.sd,
            opt(self.sa, 100.0),
            self.n_success,
            self.n_episodes
        )
    }
}

/// Mean of `‖q_i − q_j‖₂` over unordered pairs; 0 with fewer than two entries.
pub fn pairwise_style_diversity(qs: &[Vec<f64>]) -> f64 {
    let n = qs.len();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += qs[i].iter().zip(&qs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        }
    }
    sum / (n * (n - 1) / 2) as f64
}

/// Plain success, or the strict composite (also close to the affordance and in the conditioned style).
pub fn counts_as_success(rec: &RolloutRecord, strict: bool) -> bool {
    rec.success && (!strict || (rec.d_final < STRICT_AFFORD_DISTANCE && rec.executed_style == rec.style))
}

pub fn metrics_from_records(records: &[RolloutRecord], spec: &HandSpec, strict: bool) -> Metrics {
    let wins: Vec<&RolloutRecord> = records.iter().filter(|r| counts_as_success(r, strict)).collect();
    let n = records.len();
    let k = wins.len();
    let qs: Vec<Vec<f64>> = wins.iter().map(|r| r.q_final.clone()).collect();
    let qn: Vec<Vec<f64>> = qs.iter().map(|q| spec.normalize(q)).collect();
    Metrics {
        gsr: if n == 0 { 0.0 } else { k as f64 / n as f64 },
        sad: (k > 0).then(|| wins.iter().map(|r| r.d_final).sum::<f64>() / k as f64),
        sd: pairwise_style_diversity(&qs),
        sd_normalized: pairwise_style_diversity(&qn),
        sd_ratio: None,
        sa: (k > 0).then(|| wins.iter().filter(|r| r.executed_style == r.style).count() as f64 / k as f64),
        n_episodes: n,
        n_success: k,
        strict,
    }
}

/// Where evaluation actions come from.
pub enum Actor<'a> {
    Policy {
        params: &'a PolicyParams,
        bank: &'a CloudBank,
        squash: &'a Squash,
        /// Sample instead of taking the squashed mean.
        stochastic: bool,
    },
    /// Independent uniform draws inside each `(lo, hi)`.
    Uniform(Vec<(f64, f64)>),
    Fixed(EditAction),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    pub stochastic: bool,
    pub strict: bool,
    /// Replay every style per episode and keep the best one.
    pub exhaustive_styles: bool,
    pub sim: SimConfig,
    pub reward: RewardConfig,
}

impl EvalConfig {
    pub fn new(episodes: usize, seed: u64) -> Self {
        Self {
            episodes,
            seed,
            stochastic: false,
            strict: false,
            exhaustive_styles: false,
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub metrics: Metrics,
    /// One record per episode, in episode order.
    pub records: Vec<RolloutRecord>,
}

/// Runs `cfg.episodes` episodes cycling through `objects`, on the current rayon pool.
pub fn evaluate(scene: &Scene, objects: &[usize], actor: &Actor<'_>, cfg: &EvalConfig) -> Result<Evaluation> {
    if objects.is_empty() {
        return Err(Error::InvalidArgument("evaluation object set is empty".into()));
    }
    if cfg.episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    if let Some(&bad) = objects.iter().find(|&&o| o >= scene.objects.len()) {
        return Err(Error::InvalidArgument(format!("object index {bad} out of range")));
    }
    let s = scene.style_count();
    let per = if cfg.exhaustive_styles { s } else { 1 };
    let mut envs: Vec<EnvState> = Vec::with_capacity(cfg.episodes * per);
    for i in 0..cfg.episodes {
        let mut rng = rng_for(cfg.seed, Stream::Eval, 0, i as u64);
        let env = reset_env(scene, objects[i % objects.len()], None, None, &cfg.sim, &mut rng);
        if cfg.exhaustive_styles {
            for style in 0..s {
                envs.push(EnvState {
                    style,
                    q_style: scene.styles[style].q.clone(),
                    ..env.clone()
                });
            }
        } else {
            envs.push(env);
        }
    }
    let actions = actions_for(scene, &envs, actor, cfg.seed)?;
    let mut records: Vec<RolloutRecord> = envs
        .par_iter()
        .zip(actions.par_iter())
        .map(|(env, a)| {
            let mut rec = rollout(scene, env, a, &cfg.sim)?;
            rec.score(&scene.styles[env.style].q, &cfg.reward);
            Ok(rec)
        })
        .collect::<Result<Vec<_>>>()?;
    if cfg.exhaustive_styles {
        records = records
            .chunks(per)
            .map(|cands| {
                let key = |r: &RolloutRecord| (counts_as_success(r, cfg.strict), -r.d_final);
                let mut best = &cands[0];
                for r in &cands[1..] {
                    let (ks, kd) = key(r);
                    let (bs, bd) = key(best);
                    if (ks && !bs) || (ks == bs && kd > bd) {
                        best = r;
                    }
                }
                best.clone()
            })
            .collect();
    }
    let metrics = metrics_from_records(&records, &scene.spec, cfg.strict);
    Ok(Evaluation { metrics, records })
}

fn actions_for(scene: &Scene, envs: &[EnvState], actor: &Actor<'_>, seed: u64) -> Result<Vec<EditAction>> {
    let dof = scene.spec.dof();
    match actor {
        Actor::Fixed(a) => Ok(vec![a.clone(); envs.len()]),
        Actor::Uniform(iv) => Ok((0..envs.len())
            .map(|i| {
                let mut rng = rng_for(seed, Stream::Baseline, 0, i as u64);
                let v: Vec<f64> = iv
                    .iter()
                    .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi) } else { lo })
                    .collect();
                EditAction::from_vec(&v, dof)
            })
            .collect::<Result<Vec<_>>>()?),
        Actor::Policy {
            params,
            bank,
            squash,
            stochastic,
        } => {
            let obs: Vec<_> = envs.iter().map(|e| encode_observation(e, scene, bank)).collect();
            let out = policy::forward_many(params, &obs)?;
            let log_std = params.log_std();
            Ok(out
                .iter()
                .enumerate()
                .map(|(i, (mean, _))| {
                    if *stochastic {
                        let mut rng = rng_for(seed, Stream::Eval, 1, i as u64);
                        policy::sample_action(mean, &log_std, squash, &mut rng).action
                    } else {
                        policy::mean_action(mean, squash)
                    }
                })
                .collect())
        }
    }
}

/// Uniform-random edits inside `bounds`, scored by the same pipeline.
pub fn random_baseline(scene: &Scene, objects: &[usize], bounds: &ActionBounds, cfg: &EvalConfig) -> Result<Evaluation> {
    bounds.validate()?;
    evaluate(scene, objects, &Actor::Uniform(bounds.intervals(scene.spec.dof())), cfg)
}

/// A training ingredient that can be switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Afford,
    Clip,
    Close,
    Qpos,
    Disturbance,
}

impl Component {
    pub const ALL: [Component; 5] = [Self::Afford, Self::Clip, Self::Close, Self::Qpos, Self::Disturbance];

    pub fn name(self) -> &'static str {
        match self {
            Self::Afford => "afford",
            Self::Clip => "clip",
            Self::Close => "close",
            Self::Qpos => "qpos",
            Self::Disturbance => "disturbance",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation component `{s}` (expected afford, clip, close, qpos or disturbance)")))
    }
}

/// Reward flags or style noise with one component disabled.
pub fn ablate(reward: &RewardConfig, sigma_style: f64, c: Component) -> (RewardConfig, f64) {
    let mut r = *reward;
    let mut sigma = sigma_style;
    match c {
        Component::Afford => r.afford_on = false,
        Component::Clip => r.clip_on = false,
        Component::Close => r.close_on = false,
        Component::Qpos => r.qpos_on = false,
        Component::Disturbance => sigma = 0.0,
    }
    (r, sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsDelta {
    pub gsr: f64,
    pub sad: Option<f64>,
    pub sd: f64,
    pub sa: Option<f64>,
}

impl MetricsDelta {
    /// `ablated − full`.
    pub fn between(full: &Metrics, ablated: &Metrics) -> Self {
        let d = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(x, y)| y - x);
        Self {
            gsr: ablated.gsr - full.gsr,
            sad: d(full.sad, ablated.sad),
            sd: ablated.sd - full.sd,
            sa: d(full.sa, ablated.sa),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub component: Component,
    pub full: Metrics,
    pub ablated: Metrics,
    pub delta: MetricsDelta,
}

/// Trains the base configuration and a copy with `component` disabled, same
/// seed, and evaluates both the same way.
pub fn ablation_run(scene: &Scene, base: &TrainConfig, component: Component, workers: usize) -> Result<AblationReport> {
    let mut cfg = base.clone();
    (cfg.reward, cfg.sigma_style) = ablate(&base.reward, base.sigma_style, component);
    let full = train_grasp(scene, base, workers, None)?.final_eval;
    let ablated = train_grasp(scene, &cfg, workers, None)?.final_eval;
    Ok(AblationReport {
        component,
        delta: MetricsDelta::between(&full, &ablated),
        full,
        ablated,
    })
}
