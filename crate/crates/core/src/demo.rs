//! Demonstrations and the one-step edit: a rigid wrist offset in the object
//! frame, a scaled-plus-residual joint target, and per-joint interpolation
//! along the recorded closing motion.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AxisAngle, Pose, Vec3};
use crate::hand::HandSpec;

/// Joints whose recorded excursion is below this are treated as static.
pub const STATIC_EPS: f64 = 1e-9;
/// Out-of-limit demo joints within this margin are clamped instead of rejected.
const LIMIT_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoFrame {
    /// End-effector pose in the object frame.
    pub p: Pose,
    /// Reference hand joints.
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub hand: String,
    pub frames: Vec<DemoFrame>,
    /// Frame at which the reference grasp closes.
    pub grasp_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemoFile {
    pub hand: String,
    #[serde(rename = "T_l")]
    pub t_l: usize,
    pub frames: Vec<DemoFrame>,
}

impl Demonstration {
    pub fn load(path: impl AsRef<Path>, spec: &HandSpec) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DemoFile =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
        Self::from_file(file, spec)
    }

    pub fn from_file(file: DemoFile, spec: &HandSpec) -> Result<Self> {
        if file.frames.len() < 3 {
            return Err(Error::Demo(format!(
                "need at least 3 frames (T_D >= 2), got {}",
                file.frames.len()
            )));
        }
        let horizon = file.frames.len() - 1;
        if file.t_l == 0 || file.t_l > horizon {
            return Err(Error::Demo(format!("T_l = {} outside (0, {horizon}]", file.t_l)));
        }
        let mut frames = file.frames;
        for (t, fr) in frames.iter_mut().enumerate() {
            spec.check_dim(&fr.q, &format!("demo frame {t} joints"))?;
            if !spec.within_limits(&fr.q, LIMIT_SLACK) {
                return Err(Error::Demo(format!("frame {t} violates joint limits")));
            }
            if !spec.within_limits(&fr.q, 0.0) {
                log::warn!("demo frame {t}: joints marginally outside limits, clamped");
                fr.q = spec.clamp_to_limits(&fr.q);
            }
        }
        if file.hand != spec.name {
            log::warn!("demo recorded for `{}`, configured hand is `{}`", file.hand, spec.name);
        }
        Ok(Self {
            hand: file.hand,
            frames,
            grasp_index: file.t_l,
        })
    }

    pub fn to_file(&self) -> DemoFile {
        DemoFile {
            hand: self.hand.clone(),
            t_l: self.grasp_index,
            frames: self.frames.clone(),
        }
    }

    /// `T_D`: index of the last frame.
    pub fn horizon(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn dof(&self) -> usize {
        self.frames[0].q.len()
    }

    pub fn q0(&self) -> &[f64] {
        &self.frames[0].q
    }

    pub fn q_grasp(&self) -> &[f64] {
        &self.frames[self.grasp_index].q
    }
}

/// Action bounds. The rotation bound applies to the norm of the axis-angle
/// vector, which each component enforces by staying within `b_r / √3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionBounds {
    pub translation: f64,
    pub rotation: f64,
    pub joint: f64,
    pub k_min: f64,
    pub k_max: f64,
}

impl Default for ActionBounds {
    fn default() -> Self {
        Self {
            translation: 0.10,
            rotation: 0.8,
            joint: 0.3,
            k_min: 0.6,
            k_max: 1.4,
        }
    }
}

impl ActionBounds {
    pub fn action_dim(dof: usize) -> usize {
        3 + 3 + dof + 1
    }

    /// Per-component `(lo, hi)` of the flat action vector `[dt, dr, dq, k]`.
    pub fn intervals(&self, dof: usize) -> Vec<(f64, f64)> {
        let r = self.rotation / 3f64.sqrt();
        let mut v = vec![(-self.translation, self.translation); 3];
        v.extend(std::iter::repeat_n((-r, r), 3));
        v.extend(std::iter::repeat_n((-self.joint, self.joint), dof));
        v.push((self.k_min, self.k_max));
        v
    }

    /// Collapses every interval to its midpoint (the identity edit when bounds are symmetric).
    pub fn zero(&self) -> Self {
        let k = 0.5 * (self.k_min + self.k_max);
        Self {
            translation: 0.0,
            rotation: 0.0,
            joint: 0.0,
            k_min: k,
            k_max: k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.translation >= 0.0
            && self.rotation >= 0.0
            && self.rotation < std::f64::consts::PI
            && self.joint >= 0.0
            && self.k_min <= self.k_max;
        if !ok {
            return Err(Error::Config(format!("invalid action bounds {self:?}")));
        }
        Ok(())
    }
}

/// `a = (ΔT, Δq, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditAction {
    pub dt: [f64; 3],
    pub dr: AxisAngle,
    pub dq: Vec<f64>,
    pub k: f64,
}

impl EditAction {
    pub fn identity(dof: usize) -> Self {
        Self {
            dt: [0.0; 3],
            dr: AxisAngle::zero(),
            dq: vec![0.0; dof],
            k: 1.0,
        }
    }

    pub fn from_vec(v: &[f64], dof: usize) -> Result<Self> {
        if v.len() != ActionBounds::action_dim(dof) {
            return Err(Error::dim("action vector", ActionBounds::action_dim(dof), v.len()));
        }
        Ok(Self {
            dt: [v[0], v[1], v[2]],
            dr: AxisAngle([v[3], v[4], v[5]]),
            dq: v[6..6 + dof].to_vec(),
            k: v[6 + dof],
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(7 + self.dq.len());
        v.extend_from_slice(&self.dt);
        v.extend_from_slice(&self.dr.0);
        v.extend_from_slice(&self.dq);
        v.push(self.k);
        v
    }

    /// The object-frame wrist offset `ΔT`.
    pub fn wrist_offset(&self) -> Pose {
        Pose {
            t: Vec3::from(self.dt),
            r: self.dr.to_quat(),
        }
    }
}

/// Per-joint interpolation coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fraction {
    Moving(f64),
    /// The demo never moves this joint; it ramps linearly to the target instead.
    Static,
}

/// `q* = clamp(k·q_style + Δq)`.
pub fn target_joint_config(style_q: &[f64], k: f64, dq: &[f64], spec: &HandSpec) -> Vec<f64> {
    let raw: Vec<f64> = style_q.iter().zip(dq).map(|(q, d)| k * q + d).collect();
    spec.clamp_to_limits(&raw)
}

/// `f = (q* − q₀) / (q_T − q₀)` per joint; not clamped, so targets beyond the
/// demo's closure extrapolate.
pub fn interpolation_fraction(q0: &[f64], q_t: &[f64], q_star: &[f64]) -> Vec<Fraction> {
    q0.iter()
        .zip(q_t)
        .zip(q_star)
        .map(|((&a, &b), &s)| {
            if (b - a).abs() < STATIC_EPS {
                Fraction::Static
            } else {
                Fraction::Moving((s - a) / (b - a))
            }
        })
        .collect()
}

/// Joints at frame `t` before clamping.
pub fn interpolate_joints_raw(demo: &Demonstration, f: &[Fraction], t: usize, q_star: &[f64]) -> Vec<f64> {
    let q0 = demo.q0();
    let qt = &demo.frames[t].q;
    let ramp = (t as f64 / demo.grasp_index as f64).min(1.0);
    f.iter()
        .enumerate()
        .map(|(j, fr)| match *fr {
            Fraction::Moving(fj) => q0[j] + fj * (qt[j] - q0[j]),
            Fraction::Static => q0[j] + ramp * (q_star[j] - q0[j]),
        })
        .collect()
}

pub fn interpolate_joints(
    demo: &Demonstration,
    f: &[Fraction],
    t: usize,
    q_star: &[f64],
    spec: &HandSpec,
) -> Vec<f64> {
    spec.clamp_to_limits(&interpolate_joints_raw(demo, f, t, q_star))
}

/// World end-effector poses `object_pose ∘ ΔT ∘ p_t` for every frame.
pub fn edit_wrist(demo: &Demonstration, action: &EditAction, object_pose: &Pose) -> Vec<Pose> {
    let base = object_pose.compose(&action.wrist_offset());
    demo.frames.iter().map(|f| base.compose(&f.p)).collect()
}

/// Gaussian perturbation of a style's joints, clamped to limits.
pub fn disturb_style<R: Rng + ?Sized>(style_q: &[f64], sigma: f64, spec: &HandSpec, rng: &mut R) -> Vec<f64> {
    if sigma <= 0.0 {
        return style_q.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let raw: Vec<f64> = style_q.iter().map(|q| q + normal.sample(rng)).collect();
    spec.clamp_to_limits(&raw)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditedFrame {
    pub ee_world: Pose,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditedTrajectory {
    pub frames: Vec<EditedFrame>,
    pub q_star: Vec<f64>,
    pub fraction: Vec<Fraction>,
}

/// Applies an edit to the whole demonstration.
pub fn edit_demo(
    demo: &Demonstration,
    action: &EditAction,
    style_q: &[f64],
    object_pose: &Pose,
    spec: &HandSpec,
) -> Result<EditedTrajectory> {
    spec.check_dim(style_q, "style joints")?;
    spec.check_dim(&action.dq, "action dq")?;
    spec.check_dim(demo.q0(), "demo joints")?;
    let q_star = target_joint_config(style_q, action.k, &action.dq, spec);
    let fraction = interpolation_fraction(demo.q0(), demo.q_grasp(), &q_star);
    let wrists = edit_wrist(demo, action, object_pose);
    let frames = wrists
        .into_iter()
        .enumerate()
        .map(|(t, ee_world)| EditedFrame {
            ee_world,
            q: interpolate_joints(demo, &fraction, t, &q_star, spec),
        })
        .collect();
    Ok(EditedTrajectory {
        frames,
        q_star,
        fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::hand::load_styles;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn inspire() -> (HandSpec, Demonstration) {
        let spec = HandSpec::load(assets::hand_path("inspire_like")).unwrap();
        let demo = Demonstration::load(assets::demo_path("inspire_like"), &spec).unwrap();
        (spec, demo)
    }

    #[test]
    fn bundled_demo_shape() {
        let (_, demo) = inspire();
        assert_eq!(demo.horizon(), 40);
        assert_eq!(demo.grasp_index, 30);
    }

    #[test]
    fn rejects_single_frame_and_wrong_hand() {
        let (spec, demo) = inspire();
        let mut file = demo.to_file();
        file.frames.truncate(1);
        assert!(matches!(Demonstration::from_file(file, &spec), Err(Error::Demo(_))));

        let shadow = HandSpec::load(assets::hand_path("shadow_like")).unwrap();
        let err = Demonstration::load(assets::demo_path("shadow_like"), &spec).unwrap_err();
        assert!(matches!(err, Error::Dimension { expected: 6, got: 22, .. }), "{err}");
        assert!(Demonstration::load(assets::demo_path("shadow_like"), &shadow).is_ok());
    }

    #[test]
    fn marginal_limit_violation_is_clamped() {
        let (spec, demo) = inspire();
        let mut file = demo.to_file();
        file.frames[2].q[0] = spec.limits[0].1 + 5e-7;
        let d = Demonstration::from_file(file.clone(), &spec).unwrap();
        assert_eq!(d.frames[2].q[0], spec.limits[0].1);
        file.frames[2].q[0] = spec.limits[0].1 + 1e-3;
        assert!(Demonstration::from_file(file, &spec).is_err());
    }

    #[test]
    fn target_config_cases() {
        let (spec, _) = inspire();
        let styles = load_styles(assets::styles_path("inspire_like"), &spec).unwrap();
        let q = &styles[1].q;
        let zero = vec![0.0; 6];
        assert_eq!(target_joint_config(q, 1.0, &zero, &spec), *q);
        assert_eq!(target_joint_config(q, 0.0, &zero, &spec), spec.clamp_to_limits(&zero));
        let dq = [0.01, -0.02, 0.03, 0.0, -0.01, 0.02];
        let got = target_joint_config(q, 1.2, &dq, &spec);
        for j in 0..6 {
            let (lo, hi) = spec.limits[j];
            let mut v = 1.2 * q[j];
            v += dq[j];
            let v = if v < lo { lo } else if v > hi { hi } else { v };
            assert_eq!(got[j], v);
        }
    }

    #[test]
    fn fraction_cases() {
        let q0 = [0.0, 1.0, 0.5];
        let qt = [1.0, 3.0, 0.5];
        let m = |f: &[Fraction]| f.iter().map(|x| match x { Fraction::Moving(v) => Some(*v), _ => None }).collect::<Vec<_>>();
        assert_eq!(m(&interpolation_fraction(&q0, &qt, &qt)), vec![Some(1.0), Some(1.0), None]);
        assert_eq!(m(&interpolation_fraction(&q0, &qt, &q0)), vec![Some(0.0), Some(0.0), None]);
        assert_eq!(m(&interpolation_fraction(&q0, &qt, &[0.5, 2.0, 9.0])), vec![Some(0.5), Some(0.5), None]);
        // extrapolation is kept
        assert_eq!(m(&interpolation_fraction(&q0, &qt, &[2.0, 1.0, 0.5]))[0], Some(2.0));
    }

    #[test]
    fn replay_identity_and_endpoint() {
        let (spec, demo) = inspire();
        let f = interpolation_fraction(demo.q0(), demo.q_grasp(), demo.q_grasp());
        for t in 0..=demo.horizon() {
            let q = interpolate_joints_raw(&demo, &f, t, demo.q_grasp());
            for (a, b) in q.iter().zip(&demo.frames[t].q) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let q_star = spec.clamp_to_limits(&demo.q_grasp().iter().map(|q| q * 0.8 + 0.05).collect::<Vec<_>>());
        let f = interpolation_fraction(demo.q0(), demo.q_grasp(), &q_star);
        let at = interpolate_joints_raw(&demo, &f, demo.grasp_index, &q_star);
        for (j, fr) in f.iter().enumerate() {
            if matches!(fr, Fraction::Moving(_)) {
                assert!((at[j] - q_star[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn static_joint_ramps_to_target() {
        let (spec, demo) = inspire();
        let statics: Vec<usize> = interpolation_fraction(demo.q0(), demo.q_grasp(), demo.q_grasp())
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f, Fraction::Static))
            .map(|(j, _)| j)
            .collect();
        assert!(!statics.is_empty(), "bundled demo should hold at least one joint still");
        let mut q_star = demo.q_grasp().to_vec();
        let j = statics[0];
        q_star[j] += 0.2;
        let f = interpolation_fraction(demo.q0(), demo.q_grasp(), &q_star);
        let tl = demo.grasp_index as f64;
        for t in 0..=demo.horizon() {
            let q = interpolate_joints(&demo, &f, t, &q_star, &spec);
            let expected = demo.q0()[j] + (t as f64 / tl).min(1.0) * 0.2;
            assert!((q[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_in_fraction() {
        let (_, demo) = inspire();
        let j = 3;
        for t in 0..=demo.horizon() {
            let dref = demo.frames[t].q[j] - demo.q0()[j];
            if dref < 0.0 {
                continue;
            }
            let lo = interpolate_joints_raw(&demo, &[Fraction::Moving(0.7); 6], t, demo.q_grasp());
            let hi = interpolate_joints_raw(&demo, &[Fraction::Moving(1.3); 6], t, demo.q_grasp());
            assert!(lo[j] <= hi[j]);
        }
    }

    #[test]
    fn wrist_editing() {
        let (_, demo) = inspire();
        let id = EditAction::identity(6);
        let poses = edit_wrist(&demo, &id, &Pose::identity());
        for (p, f) in poses.iter().zip(&demo.frames) {
            assert_eq!(p.t, f.p.t);
            assert!(crate::geometry::quat_distance(&p.r, &f.p.r) < 1e-15);
        }
        let mut up = id.clone();
        up.dt = [0.0, 0.0, 0.05];
        for (p, f) in edit_wrist(&demo, &up, &Pose::identity()).iter().zip(&demo.frames) {
            assert!((p.t - f.p.t - Vec3::new(0.0, 0.0, 0.05)).norm() < 1e-15);
        }
        let obj = Pose::yaw(FRAC_PI_2).compose(&Pose::from_translation(Vec3::new(0.1, 0.0, 0.0)));
        for (p, f) in edit_wrist(&demo, &id, &obj).iter().zip(&demo.frames) {
            let oracle = obj.compose(&f.p);
            let (dt, dr) = p.distance(&oracle);
            assert!(dt < 1e-15 && dr < 1e-15);
            // rigid rotation of the object-frame pose
            let rotated = Pose::yaw(FRAC_PI_2).transform_point(&(f.p.t + Vec3::new(0.1, 0.0, 0.0)));
            assert!((p.t - rotated).norm() < 1e-12);
        }
    }

    #[test]
    fn disturbance_statistics() {
        let (spec, _) = inspire();
        let q = vec![0.0, 0.5, 0.5, 0.5, 0.5, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(disturb_style(&q, 0.0, &spec, &mut rng), q);
        let a = disturb_style(&q, 0.1, &spec, &mut ChaCha8Rng::seed_from_u64(9));
        let b = disturb_style(&q, 0.1, &spec, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let sigma = 0.05;
        let n = 100_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let d = disturb_style(&q, sigma, &spec, &mut rng)[1] - q[1];
            s += d;
            s2 += d * d;
        }
        let mean = s / n as f64;
        let std = (s2 / n as f64 - mean * mean).sqrt();
        assert!((std - sigma).abs() < 0.02 * sigma, "std {std}");
    }

    #[test]
    fn action_vector_round_trip() {
        let a = EditAction { dt: [0.1, -0.2, 0.3], dr: AxisAngle([0.01, 0.02, 0.03]), dq: vec![1.0, 2.0], k: 0.9 };
        assert_eq!(EditAction::from_vec(&a.to_vec(), 2).unwrap(), a);
        assert!(EditAction::from_vec(&a.to_vec(), 3).is_err());
        let iv = ActionBounds::default().intervals(2);
        assert_eq!(iv.len(), ActionBounds::action_dim(2));
        let r = iv[3].1;
        assert!((3.0 * r * r).sqrt() <= 0.8 + 1e-12);
    }
}
