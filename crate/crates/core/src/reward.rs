//! Reward stack: sparse affordance proximity, dense closeness, style
//! consistency and a success bonus.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Acceptance radius of the affordance term when object-size clipping is off.
pub const FIXED_AFFORD_RADIUS: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub lambda_afford: f64,
    pub lambda_close: f64,
    pub lambda_qpos: f64,
    pub success_reward: f64,
    /// Object-size divisor: the affordance term only pays inside `obj_bb / gamma`.
    pub gamma: f64,
    pub close_threshold: f64,
    pub afford_on: bool,
    pub close_on: bool,
    pub qpos_on: bool,
    pub clip_on: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda_afford: 2.0,
            lambda_close: 0.5,
            lambda_qpos: 0.5,
            success_reward: 1.0,
            gamma: 4.0,
            close_threshold: 0.03,
            afford_on: true,
            close_on: true,
            qpos_on: true,
            clip_on: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_afford, self.lambda_close, self.lambda_qpos];
        if weights.iter().any(|w| !(*w >= 0.0)) || !self.success_reward.is_finite() {
            return Err(Error::Config("reward weights must be finite and non-negative".into()));
        }
        if !(self.gamma > 0.0) || !(self.close_threshold > 0.0) {
            return Err(Error::Config("gamma and close_threshold must be positive".into()));
        }
        Ok(())
    }

    /// Radius inside which the affordance term is paid.
    pub fn afford_radius(&self, obj_bb: f64) -> f64 {
        if self.clip_on {
            obj_bb / self.gamma
        } else {
            FIXED_AFFORD_RADIUS
        }
    }

    /// Upper bound of the total reward.
    pub fn max_total(&self) -> f64 {
        self.lambda_afford + self.lambda_close + self.lambda_qpos + self.success_reward
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub r_afford: f64,
    pub r_close: f64,
    pub r_qpos: f64,
    pub r_success: f64,
    pub total: f64,
}

/// `exp(-‖q − q*‖₂)`.
pub fn qpos_reward(q: &[f64], q_star: &[f64]) -> f64 {
    let d2: f64 = q.iter().zip(q_star).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2.sqrt()).exp()
}

pub fn afford_reward(success: bool, d_final: f64, obj_bb: f64, cfg: &RewardConfig) -> f64 {
    if success && d_final < cfg.afford_radius(obj_bb) {
        (-d_final).exp()
    } else {
        0.0
    }
}

/// Paid whenever the trajectory came close to the affordance, success or not.
pub fn close_reward(d_min: f64, cfg: &RewardConfig) -> f64 {
    if d_min < cfg.close_threshold {
        1.0
    } else {
        0.0
    }
}

/// Inputs of the reward, extracted from a rollout.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs<'a> {
    pub success: bool,
    pub d_final: f64,
    pub d_min: f64,
    pub obj_bb: f64,
    /// Canonical joints of the conditioned style.
    pub q_style: &'a [f64],
    /// Edited joint target.
    pub q_star: &'a [f64],
}

pub fn total_reward(x: &RewardInputs<'_>, cfg: &RewardConfig) -> RewardTerms {
    let r_afford = afford_reward(x.success, x.d_final, x.obj_bb, cfg);
    let r_close = close_reward(x.d_min, cfg);
    let r_qpos = qpos_reward(x.q_style, x.q_star);
    let r_success = if x.success { cfg.success_reward } else { 0.0 };
    combine(r_afford, r_close, r_qpos, r_success, cfg)
}

/// Weighted sum with disabled terms reported as zero.
pub fn combine(r_afford: f64, r_close: f64, r_qpos: f64, r_success: f64, cfg: &RewardConfig) -> RewardTerms {
    let r_afford = if cfg.afford_on { r_afford } else { 0.0 };
    let r_close = if cfg.close_on { r_close } else { 0.0 };
    let r_qpos = if cfg.qpos_on { r_qpos } else { 0.0 };
    RewardTerms {
        r_afford,
        r_close,
        r_qpos,
        r_success,
        total: cfg.lambda_afford * r_afford + cfg.lambda_close * r_close + cfg.lambda_qpos * r_qpos + r_success,
    }
}
