//! Multi-finger hand models: revolute finger chains with spherical collision
//! proxies, forward kinematics and style classification.

use std::path::Path;

use nalgebra::{Unit, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};

/// How a segment's revolute joint is driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JointDrive {
    /// Index into the active joint vector.
    Active(usize),
    /// Passive joint following `ratio * q[source]`.
    Coupled { source: usize, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub length: f64,
    pub axis: Unit<Vec3>,
    pub drive: JointDrive,
    /// Collision sphere radius at the segment's distal end.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finger {
    pub name: String,
    /// Chain base relative to the wrist. Segments extend along the base's local x axis.
    pub base: Pose,
    pub segments: Vec<Segment>,
    pub tip_radius: f64,
}

impl Finger {
    pub fn active_joint_count(&self) -> usize {
        self.segments
            .iter()
            .filter(|s| matches!(s.drive, JointDrive::Active(_)))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PalmSphere {
    pub center: [f64; 3],
    pub radius: f64,
}

/// A kinematic hand: finger chains, active joint limits and palm proxies.
#[derive(Debug, Clone, PartialEq)]
pub struct HandSpec {
    pub name: String,
    pub fingers: Vec<Finger>,
    pub palm: Vec<PalmSphere>,
    pub joint_names: Vec<String>,
    pub limits: Vec<(f64, f64)>,
}

// ---- file schema ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandSpecFile {
    pub name: String,
    pub fingers: Vec<FingerFile>,
    #[serde(default)]
    pub palm: Vec<PalmSphere>,
    #[serde(default)]
    pub coupling: Vec<CouplingFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerFile {
    pub name: String,
    pub base: Pose,
    pub segments: Vec<SegmentFile>,
    pub tip_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    pub length: f64,
    pub axis: [f64; 3],
    /// Required for active joints, ignored for coupled ones.
    #[serde(default)]
    pub limits: Option<[f64; 2]>,
    pub radius: f64,
}

/// Marks `fingers[finger].segments[segment]` as passive, following
/// `ratio * q[source]` where `source` indexes the active joint vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingFile {
    pub finger: usize,
    pub segment: usize,
    pub source: usize,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
}

fn default_ratio() -> f64 {
    1.0
}

impl HandSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: HandSpecFile = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
        Self::from_file(file)
    }

    pub fn from_file(file: HandSpecFile) -> Result<Self> {
        let is_coupled = |f: usize, s: usize| file.coupling.iter().find(|c| c.finger == f && c.segment == s);
        for c in &file.coupling {
            let ok = file
                .fingers
                .get(c.finger)
                .is_some_and(|f| c.segment < f.segments.len());
            if !ok {
                return Err(Error::HandSpec(format!(
                    "coupling refers to missing segment {}.{}",
                    c.finger, c.segment
                )));
            }
        }
        if file.fingers.is_empty() {
            return Err(Error::HandSpec("hand has no fingers".into()));
        }

        let mut joint_names = Vec::new();
        let mut limits = Vec::new();
        let mut pending = Vec::new();
        for (fi, f) in file.fingers.iter().enumerate() {
            if f.segments.is_empty() {
                return Err(Error::HandSpec(format!("finger `{}` has no segments", f.name)));
            }
            if !(f.tip_radius > 0.0) {
                return Err(Error::HandSpec(format!("finger `{}` tip_radius must be > 0", f.name)));
            }
            let mut segs = Vec::new();
            for (si, s) in f.segments.iter().enumerate() {
                let name = format!("{}.{}", f.name, si);
                if !(s.length > 0.0) || !(s.radius > 0.0) {
                    return Err(Error::HandSpec(format!(
                        "segment `{name}` needs positive length and radius"
                    )));
                }
                let axis = Vec3::from(s.axis);
                if !(axis.norm() > 1e-9) {
                    return Err(Error::HandSpec(format!("segment `{name}` has a zero axis")));
                }
                let drive = match is_coupled(fi, si) {
                    Some(c) => JointDrive::Coupled {
                        source: c.source,
                        ratio: c.ratio,
                    },
                    None => {
                        let [lo, hi] = s.limits.ok_or_else(|| {
                            Error::HandSpec(format!("active joint `{name}` is missing limits"))
                        })?;
                        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                            return Err(Error::JointLimits { joint: name, lo, hi });
                        }
                        joint_names.push(name);
                        limits.push((lo, hi));
                        JointDrive::Active(limits.len() - 1)
                    }
                };
                segs.push(Segment {
                    length: s.length,
                    axis: Unit::new_normalize(axis),
                    drive,
                    radius: s.radius,
                });
            }
            pending.push(Finger {
                name: f.name.clone(),
                base: f.base,
                segments: segs,
                tip_radius: f.tip_radius,
            });
        }
        let dof = limits.len();
        for c in &file.coupling {
            if c.source >= dof {
                return Err(Error::HandSpec(format!(
                    "coupling source {} out of range for {dof} active joints",
                    c.source
                )));
            }
        }
        let spec = HandSpec {
            name: file.name,
            fingers: pending,
            palm: file.palm,
            joint_names,
            limits,
        };
        debug_assert_eq!(
            spec.fingers.iter().map(Finger::active_joint_count).sum::<usize>(),
            spec.dof()
        );
        Ok(spec)
    }

    /// Number of active joints.
    pub fn dof(&self) -> usize {
        self.limits.len()
    }

    pub fn finger_count(&self) -> usize {
        self.fingers.len()
    }

    pub fn check_dim(&self, q: &[f64], what: &str) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::dim(what, self.dof(), q.len()));
        }
        Ok(())
    }

    pub fn clamp_to_limits(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(&self.limits)
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect()
    }

    pub fn within_limits(&self, q: &[f64], tol: f64) -> bool {
        q.len() == self.dof()
            && q
                .iter()
                .zip(&self.limits)
                .all(|(&v, &(lo, hi))| v >= lo - tol && v <= hi + tol)
    }

    /// Joint-limit-normalized coordinates in `[0, 1]` for in-range joints.
    pub fn normalize(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(&self.limits)
            .map(|(&v, &(lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn forward_kinematics(&self, wrist: &Pose, q: &[f64]) -> Result<HandFrames> {
        self.check_dim(q, "joint vector")?;
        let mut spheres = Vec::new();
        let mut fingertips = Vec::with_capacity(self.fingers.len());
        for (fi, finger) in self.fingers.iter().enumerate() {
            let mut frame = wrist.compose(&finger.base);
            let last = finger.segments.len() - 1;
            for (si, seg) in finger.segments.iter().enumerate() {
                let angle = match seg.drive {
                    JointDrive::Active(j) => q[j],
                    JointDrive::Coupled { source, ratio } => ratio * q[source],
                };
                frame = frame.compose(&Pose::from_rotation(UnitQuaternion::from_axis_angle(
                    &seg.axis, angle,
                )));
                frame = frame.compose(&Pose::from_translation(Vec3::new(seg.length, 0.0, 0.0)));
                let radius = if si == last { finger.tip_radius } else { seg.radius };
                spheres.push(SphereFrame {
                    finger: fi,
                    segment: si,
                    center: frame.t,
                    radius,
                });
            }
            fingertips.push(frame.t);
        }
        let palm = self
            .palm
            .iter()
            .map(|p| (wrist.transform_point(&Vec3::from(p.center)), p.radius))
            .collect();
        Ok(HandFrames {
            wrist: *wrist,
            spheres,
            fingertips,
            palm,
        })
    }

    /// Nearest canonical style in joint-limit-normalized coordinates; ties
    /// (within round-off) go to the lowest index.
    pub fn classify_style(&self, q_final: &[f64], styles: &[Style]) -> usize {
        let qn = self.normalize(q_final);
        let mut best = (0, f64::INFINITY);
        for (i, s) in styles.iter().enumerate() {
            let sn = self.normalize(&s.q);
            let d: f64 = qn.iter().zip(&sn).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.1 - 1e-12 {
                best = (i, d);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereFrame {
    pub finger: usize,
    pub segment: usize,
    pub center: Vec3,
    pub radius: f64,
}

/// World-frame collision geometry of a posed hand.
#[derive(Debug, Clone, PartialEq)]
pub struct HandFrames {
    pub wrist: Pose,
    pub spheres: Vec<SphereFrame>,
    /// Fingertip of finger `f` is the last sphere center of chain `f`.
    pub fingertips: Vec<Vec3>,
    pub palm: Vec<(Vec3, f64)>,
}

/// A grasp style: canonical joint configuration plus intended contact fingers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Style {
    pub id: String,
    #[serde(skip)]
    pub index: usize,
    pub q: Vec<f64>,
    pub contact_mask: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleFile {
    pub hand: String,
    pub styles: Vec<Style>,
}

/// Loads and validates a style file against `spec`.
pub fn load_styles(path: impl AsRef<Path>, spec: &HandSpec) -> Result<Vec<Style>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: StyleFile =
        serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    validate_styles(file, spec)
}

pub fn validate_styles(file: StyleFile, spec: &HandSpec) -> Result<Vec<Style>> {
    if file.hand != spec.name {
        return Err(Error::HandSpec(format!(
            "styles are for hand `{}`, configured hand is `{}`",
            file.hand, spec.name
        )));
    }
    if file.styles.is_empty() {
        return Err(Error::HandSpec("style file has no styles".into()));
    }
    let mut out = Vec::with_capacity(file.styles.len());
    for (i, mut s) in file.styles.into_iter().enumerate() {
        spec.check_dim(&s.q, &format!("style `{}`", s.id))?;
        if !spec.within_limits(&s.q, 0.0) {
            return Err(Error::HandSpec(format!("style `{}` violates joint limits", s.id)));
        }
        s.contact_mask.sort_unstable();
        s.contact_mask.dedup();
        if s.contact_mask.is_empty()
            || s.contact_mask.len() > spec.finger_count()
            || s.contact_mask.iter().any(|&f| f >= spec.finger_count())
        {
            return Err(Error::HandSpec(format!("style `{}` has an invalid contact mask", s.id)));
        }
        s.index = i;
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn two_link() -> HandSpec {
        let file: HandSpecFile = serde_json::from_value(serde_json::json!({
            "name": "two-link",
            "fingers": [{
                "name": "f",
                "base": {"t": [0.0, 0.0, 0.0], "r": [1.0, 0.0, 0.0, 0.0]},
                "tip_radius": 0.01,
                "segments": [
                    {"length": 0.3, "axis": [0.0, 0.0, 1.0], "limits": [-3.0, 3.0], "radius": 0.02},
                    {"length": 0.2, "axis": [0.0, 0.0, 1.0], "limits": [-3.0, 3.0], "radius": 0.02}
                ]
            }]
        }))
        .unwrap();
        HandSpec::from_file(file).unwrap()
    }

    #[test]
    fn bundled_hands_have_expected_dof() {
        let inspire = HandSpec::load(assets::hand_path("inspire_like")).unwrap();
        assert_eq!(inspire.dof(), 6);
        assert_eq!(inspire.finger_count(), 4);
        let shadow = HandSpec::load(assets::hand_path("shadow_like")).unwrap();
        assert_eq!(shadow.dof(), 22);
        assert_eq!(shadow.finger_count(), 5);
        let s4 = load_styles(assets::styles_path("inspire_like"), &inspire).unwrap();
        assert_eq!(s4.len(), 4);
        let s9 = load_styles(assets::styles_path("shadow_like"), &shadow).unwrap();
        assert_eq!(s9.len(), 9);
    }

    #[test]
    fn rejects_inverted_limits_naming_the_joint() {
        let mut file: HandSpecFile =
            serde_json::from_str(&std::fs::read_to_string(assets::hand_path("inspire_like")).unwrap())
                .unwrap();
        file.fingers[1].segments[0].limits = Some([1.0, 1.0]);
        match HandSpec::from_file(file) {
            Err(Error::JointLimits { joint, .. }) => assert!(joint.starts_with(&format!("index"))),
            other => panic!("expected limit rejection, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\n \"name\": \"x\",\n \"fingers\": 3\n}").unwrap();
        let err = HandSpec::load(&p).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }

    #[test]
    fn straight_chain_at_zero() {
        let spec = two_link();
        let frames = spec.forward_kinematics(&Pose::identity(), &[0.0, 0.0]).unwrap();
        assert!((frames.fingertips[0] - Vec3::new(0.5, 0.0, 0.0)).norm() < 1e-15);
        assert_eq!(frames.spheres.last().unwrap().center, frames.fingertips[0]);
        assert_eq!(frames.spheres.last().unwrap().radius, 0.01);
    }

    #[test]
    fn two_link_closed_form() {
        let spec = two_link();
        for (a, b) in [(FRAC_PI_2, 0.0), (0.3, -1.1), (-2.0, 0.7)] {
            let f = spec.forward_kinematics(&Pose::identity(), &[a, b]).unwrap();
            let expected = Vec3::new(
                0.3 * a.cos() + 0.2 * (a + b).cos(),
                0.3 * a.sin() + 0.2 * (a + b).sin(),
                0.0,
            );
            assert!((f.fingertips[0] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn fk_dimension_mismatch() {
        let spec = two_link();
        assert!(matches!(
            spec.forward_kinematics(&Pose::identity(), &[0.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn wrist_translation_moves_every_sphere() {
        let spec = HandSpec::load(assets::hand_path("inspire_like")).unwrap();
        let q = vec![0.2; spec.dof()];
        let q = spec.clamp_to_limits(&q);
        let d = Vec3::new(0.1, -0.3, 0.05);
        let a = spec.forward_kinematics(&Pose::identity(), &q).unwrap();
        let b = spec.forward_kinematics(&Pose::from_translation(d), &q).unwrap();
        for (sa, sb) in a.spheres.iter().zip(&b.spheres) {
            assert!((sb.center - sa.center - d).norm() < 1e-12);
        }
    }

    #[test]
    fn clamp_cases() {
        let spec = two_link();
        assert_eq!(spec.clamp_to_limits(&[0.5, -0.5]), vec![0.5, -0.5]);
        assert_eq!(spec.clamp_to_limits(&[4.0, 0.0]), vec![3.0, 0.0]);
        let q = [7.0, -9.0];
        let once = spec.clamp_to_limits(&q);
        assert_eq!(spec.clamp_to_limits(&once), once);
    }

    #[test]
    fn classify_exact_and_ties() {
        let spec = two_link();
        let styles = vec![
            Style { id: "a".into(), index: 0, q: vec![-1.0, 0.0], contact_mask: vec![0] },
            Style { id: "b".into(), index: 1, q: vec![1.0, 0.0], contact_mask: vec![0] },
        ];
        assert_eq!(spec.classify_style(&[1.0, 0.0], &styles), 1);
        assert_eq!(spec.classify_style(&[-1.0, 0.0], &styles), 0);
        assert_eq!(spec.classify_style(&[0.0, 0.0], &styles), 0);
    }

    #[test]
    fn classify_survives_noise_below_half_gap() {
        for hand in ["inspire_like", "shadow_like"] {
            let spec = HandSpec::load(assets::hand_path(hand)).unwrap();
            let styles = load_styles(assets::styles_path(hand), &spec).unwrap();
            let normed: Vec<_> = styles.iter().map(|s| spec.normalize(&s.q)).collect();
            let mut min_gap = f64::INFINITY;
            for i in 0..normed.len() {
                for j in i + 1..normed.len() {
                    let d: f64 = normed[i].iter().zip(&normed[j]).map(|(a, b)| (a - b).powi(2)).sum();
                    min_gap = min_gap.min(d.sqrt());
                }
            }
            assert!(min_gap > 0.1, "{hand} styles too close: {min_gap}");
            // perturb along a fixed pseudo-random direction with norm 0.49 * gap (normalized units)
            for s in &styles {
                let dir: Vec<f64> = (0..spec.dof()).map(|j| ((j * 7 + s.index * 3) as f64).sin()).collect();
                let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
                let q: Vec<f64> = s
                    .q
                    .iter()
                    .zip(&dir)
                    .zip(&spec.limits)
                    .map(|((&v, &d), &(lo, hi))| v + 0.49 * min_gap * d / n * (hi - lo))
                    .collect();
                assert_eq!(spec.classify_style(&q, &styles), s.index, "{hand} style {}", s.id);
            }
        }
    }

    proptest! {
        #[test]
        fn fk_is_wrist_equivariant(
            t in prop::array::uniform3(-1.0f64..1.0),
            yaw in -3.0f64..3.0,
            roll in -3.0f64..3.0,
            u in prop::collection::vec(0.0f64..1.0, 6),
        ) {
            let spec = HandSpec::load(assets::hand_path("inspire_like")).unwrap();
            let q: Vec<f64> = u.iter().zip(&spec.limits).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect();
            let wrist = Pose::new(Vec3::new(0.1, 0.2, 0.3), [0.8, 0.1, 0.3, -0.2]);
            let g = Pose::from_translation(Vec3::from(t))
                .compose(&Pose::yaw(yaw))
                .compose(&Pose::from_rotation(UnitQuaternion::from_axis_angle(&Vec3::x_axis(), roll)));
            let a = spec.forward_kinematics(&g.compose(&wrist), &q).unwrap();
            let b = spec.forward_kinematics(&wrist, &q).unwrap();
            for (sa, sb) in a.spheres.iter().zip(&b.spheres) {
                prop_assert!((sa.center - g.transform_point(&sb.center)).norm() < 1e-9);
            }
        }

        #[test]
        fn classification_ignores_candidate_order(u in prop::collection::vec(0.0f64..1.0, 6), seed in 0usize..24) {
            let spec = HandSpec::load(assets::hand_path("inspire_like")).unwrap();
            let styles = load_styles(assets::styles_path("inspire_like"), &spec).unwrap();
            let q: Vec<f64> = u.iter().zip(&spec.limits).map(|(u, (lo, hi))| lo + u * (hi - lo)).collect();
            let best = spec.classify_style(&q, &styles);
            let mut perm = styles.clone();
            perm.rotate_left(seed % styles.len());
            if seed % 2 == 1 { perm.reverse(); }
            let pick = spec.classify_style(&q, &perm);
            prop_assert_eq!(&perm[pick].id, &styles[best].id);
        }
    }
}
