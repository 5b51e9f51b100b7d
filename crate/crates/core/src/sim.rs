//! Quasi-static rollout of an edited demonstration against a point-cloud
//! object: contacts, table and crush checks, affordance distance tracking and
//! a perturbed force-closure test at the grasp frame.

use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assets;
use crate::demo::{disturb_style, edit_demo, Demonstration, EditAction, EditedFrame};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::hand::{load_styles, HandFrames, HandSpec, Style};
use crate::lp::nonneg_combination;
use crate::object::{affordance_distribution, load_object_dir, AffordanceDistribution, AffordanceParams, ObjectModel};
use crate::reward::{total_reward, RewardConfig, RewardInputs, RewardTerms};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Contact is registered when a sphere surface is within this gap of the cloud (m).
    pub delta_c: f64,
    pub table_tol: f64,
    pub mu: f64,
    /// Load perturbation as a fraction of the gravity wrench norm.
    pub eta: f64,
    /// Torsional friction of a soft contact is `mu * patch_radius` per unit normal force.
    pub patch_radius: f64,
    /// Pre-grasp penetration beyond this multiple of a sphere radius fails the episode.
    pub crush_ratio: f64,
    /// Object positions are drawn from `[-w, w]²`.
    pub square_half_width: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            delta_c: 0.005,
            table_tol: 0.002,
            mu: 0.5,
            eta: 0.2,
            patch_radius: 0.01,
            crush_ratio: 1.5,
            square_half_width: 0.25,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.delta_c >= 0.0
            && self.table_tol >= 0.0
            && self.mu >= 0.0
            && self.eta >= 0.0
            && self.patch_radius >= 0.0
            && self.crush_ratio > 0.0
            && self.square_half_width >= 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid simulation config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SceneObject {
    pub model: ObjectModel,
    pub afford: AffordanceDistribution,
}

/// Everything a rollout reads: hand, styles, demonstration and objects.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: HandSpec,
    pub styles: Vec<Style>,
    pub demo: Demonstration,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn new(
        spec: HandSpec,
        styles: Vec<Style>,
        demo: Demonstration,
        objects: Vec<ObjectModel>,
        params: AffordanceParams,
    ) -> Result<Self> {
        if objects.is_empty() {
            return Err(Error::InvalidArgument("object set is empty".into()));
        }
        spec.check_dim(demo.q0(), "demonstration joints")?;
        let objects = objects
            .into_iter()
            .map(|model| {
                let afford = affordance_distribution(&model, params)?;
                Ok(SceneObject { model, afford })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            styles,
            demo,
            objects,
        })
    }

    /// Loads hand, styles and demo files plus every `.ply` in `objects_dir`.
    pub fn load(
        hand: &Path,
        styles: &Path,
        demo: &Path,
        objects_dir: &Path,
        params: AffordanceParams,
    ) -> Result<Self> {
        let spec = HandSpec::load(hand)?;
        let styles = load_styles(styles, &spec)?;
        let demo = Demonstration::load(demo, &spec)?;
        let objects = load_object_dir(objects_dir)?;
        Self::new(spec, styles, demo, objects, params)
    }

    /// The bundled hand `name` with the bundled toy objects.
    pub fn bundled(name: &str) -> Result<Self> {
        Self::load(
            &assets::hand_path(name),
            &assets::styles_path(name),
            &assets::demo_path(name),
            &assets::objects_dir(),
            AffordanceParams::default(),
        )
    }

    pub fn style_count(&self) -> usize {
        self.styles.len()
    }
}

/// One episode's randomized condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub object: usize,
    pub object_pose: Pose,
    pub afford_index: usize,
    /// Affordance point in the object frame.
    pub p_afford: Vec3,
    pub style: usize,
    /// Style joints actually fed to the editor (disturbed during training).
    pub q_style: Vec<f64>,
}

impl EnvState {
    pub fn p_afford_world(&self) -> Vec3 {
        self.object_pose.transform_point(&self.p_afford)
    }
}

/// Randomizes object placement, affordance and (unless fixed) style.
/// `disturbance` is the style perturbation sigma for training episodes.
pub fn reset_env<R: Rng + ?Sized>(
    scene: &Scene,
    object: usize,
    style: Option<usize>,
    disturbance: Option<f64>,
    cfg: &SimConfig,
    rng: &mut R,
) -> EnvState {
    let w = cfg.square_half_width;
    let x = if w > 0.0 { rng.random_range(-w..w) } else { 0.0 };
    let y = if w > 0.0 { rng.random_range(-w..w) } else { 0.0 };
    let yaw = if w > 0.0 { rng.random_range(-PI..PI) } else { 0.0 };
    let object_pose = Pose::from_translation(Vec3::new(x, y, 0.0)).compose(&Pose::yaw(yaw));
    let entry = &scene.objects[object];
    let (afford_index, p_afford) = entry.afford.sample(&entry.model, rng);
    let style = style.unwrap_or_else(|| rng.random_range(0..scene.styles.len()));
    let canonical = &scene.styles[style].q;
    let q_style = match disturbance {
        Some(sigma) => disturb_style(canonical, sigma, &scene.spec, rng),
        None => canonical.clone(),
    };
    EnvState {
        object,
        object_pose,
        afford_index,
        p_afford,
        style,
        q_style,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub finger: usize,
    /// Matched cloud point, world frame.
    pub point: Vec3,
    /// Outward object normal at the matched point, world frame.
    pub normal: Vec3,
    pub penetration: f64,
}

/// Per finger, the deepest sphere within `radius + delta_c` of the cloud.
pub fn detect_contacts(frames: &HandFrames, obj: &ObjectModel, object_pose: &Pose, delta_c: f64) -> Vec<Contact> {
    let inv = object_pose.inverse();
    // (finger) -> (signed gap, contact)
    let mut best: Vec<Option<(f64, Contact)>> = vec![None; frames.fingertips.len()];
    for s in &frames.spheres {
        let x = inv.transform_point(&s.center);
        if obj.bbox_distance(&x) > s.radius + delta_c {
            continue;
        }
        let (i, dist) = obj.nearest(&x);
        if dist > s.radius + delta_c {
            continue;
        }
        let p = obj.points[i];
        let n = obj.normals[i];
        let signed = (x - p).dot(&n);
        let depth = s.radius - signed;
        let c = Contact {
            finger: s.finger,
            point: object_pose.transform_point(&p),
            normal: object_pose.transform_vector(&n),
            penetration: depth.max(0.0),
        };
        let slot = &mut best[s.finger];
        if slot.as_ref().is_none_or(|(d, _)| depth > *d) {
            *slot = Some((depth, c));
        }
    }
    best.into_iter().flatten().map(|(_, c)| c).collect()
}

/// Mean fingertip position of the mask fingers.
pub fn style_contact_point(frames: &HandFrames, mask: &[usize]) -> Vec3 {
    let sum: Vec3 = mask.iter().map(|&f| frames.fingertips[f]).sum();
    sum / mask.len() as f64
}

/// True when any finger or palm sphere dips below the table plane by more
/// than `tol` (center below `radius - tol`).
pub fn check_table_collision(frames: &HandFrames, tol: f64) -> bool {
    frames.spheres.iter().any(|s| s.center.z < s.radius - tol)
        || frames.palm.iter().any(|(c, r)| c.z < r - tol)
}

/// True when any sphere center is deeper inside the object than
/// `(ratio - 1) * radius` (penetration beyond `ratio * radius`).
pub fn crushes(frames: &HandFrames, obj: &ObjectModel, inv_object_pose: &Pose, ratio: f64) -> bool {
    let spheres = frames
        .spheres
        .iter()
        .map(|s| (s.center, s.radius))
        .chain(frames.palm.iter().copied());
    for (c, r) in spheres {
        let x = inv_object_pose.transform_point(&c);
        if obj.bbox_distance(&x) > 0.0 {
            continue;
        }
        let (i, _) = obj.nearest(&x);
        let signed = (x - obj.points[i]).dot(&obj.normals[i]);
        if r - signed > ratio * r {
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    TooFewContacts,
    NoForceClosure,
    TableCollision,
    Crushed,
    DegenerateContact,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        self == Outcome::Success
    }
}

/// Inputs of the grasp-frame success test. Contacts and center of mass are
/// given in a z-up frame; rollouts use the object frame so that the friction
/// pyramids and load perturbations turn with the object.
#[derive(Debug, Clone, Copy)]
pub struct GraspCheck<'a> {
    pub contacts: &'a [Contact],
    pub mask: &'a [usize],
    pub com: Vec3,
    pub obj_bb: f64,
    pub table_collision: bool,
}

/// Contact wrench generators: four friction-pyramid edges plus two
/// normal-plus-torsion generators per soft contact. Torques are taken about
/// `center` and divided by `scale`.
pub fn contact_wrenches(contacts: &[Contact], center: &Vec3, scale: f64, mu: f64, torsion: f64) -> Vec<Vec<f64>> {
    let mut cols = Vec::with_capacity(contacts.len() * 6);
    for c in contacts {
        let n = c.normal.normalize();
        let d = -n;
        let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
        let t1 = n.cross(&helper).normalize();
        let t2 = n.cross(&t1);
        let arm = c.point - center;
        let mut push = |f: Vec3, m: Vec3| {
            let tau = (arm.cross(&f) + m) / scale;
            cols.push(vec![f.x, f.y, f.z, tau.x, tau.y, tau.z]);
        };
        for t in [t1, -t1, t2, -t2] {
            push(d + t * mu, Vec3::zeros());
        }
        for s in [1.0, -1.0] {
            push(d, d * (s * torsion));
        }
    }
    cols
}

/// Gravity load the contacts must supply, followed by its `±eta·|w|` perturbations along every wrench axis.
pub fn load_wrenches(com: &Vec3, center: &Vec3, scale: f64, eta: f64) -> Vec<[f64; 6]> {
    let up = Vec3::z();
    let tau = (com - center).cross(&up) / scale;
    let base = [0.0, 0.0, 1.0, tau.x, tau.y, tau.z];
    let mag = base.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = vec![base];
    if eta > 0.0 {
        for axis in 0..6 {
            for s in [1.0, -1.0] {
                let mut w = base;
                w[axis] += s * eta * mag;
                out.push(w);
            }
        }
    }
    out
}

pub fn grasp_success(check: &GraspCheck<'_>, cfg: &SimConfig) -> Outcome {
    if check.table_collision {
        return Outcome::TableCollision;
    }
    let degenerate = check
        .contacts
        .iter()
        .any(|c| !c.normal.iter().chain(c.point.iter()).all(|v| v.is_finite()) || c.normal.norm() < 1e-9);
    if degenerate {
        log::debug!("degenerate contact normal at grasp frame");
        return Outcome::DegenerateContact;
    }
    let mask_hits = check
        .contacts
        .iter()
        .filter(|c| check.mask.contains(&c.finger))
        .count();
    if mask_hits < 2 {
        return Outcome::TooFewContacts;
    }
    let center = check.contacts.iter().map(|c| c.point).sum::<Vec3>() / check.contacts.len() as f64;
    let scale = 0.5 * check.obj_bb;
    let cols = contact_wrenches(check.contacts, &center, scale, cfg.mu, cfg.mu * cfg.patch_radius / scale);
    let closed = load_wrenches(&check.com, &center, scale, cfg.eta)
        .iter()
        .all(|w| nonneg_combination(&cols, w, 1e-9).is_some());
    if closed {
        Outcome::Success
    } else {
        Outcome::NoForceClosure
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub object: usize,
    pub style: usize,
    pub outcome: Outcome,
    pub success: bool,
    /// Affordance to style-contact-point distance, one entry per frame.
    pub d_series: Vec<f64>,
    pub d_min: f64,
    pub d_final: f64,
    pub q_final: Vec<f64>,
    pub q_star: Vec<f64>,
    pub contacts_at_grasp: Vec<Contact>,
    pub executed_style: usize,
    pub table_collision: bool,
    pub crushed: bool,
    pub p_afford_world: Vec3,
    pub obj_bb: f64,
    #[serde(skip)]
    pub trajectory: Vec<EditedFrame>,
    pub reward: RewardTerms,
}

impl RolloutRecord {
    /// Fills `reward` from the record and the conditioned style's canonical joints.
    pub fn score(&mut self, canonical_q: &[f64], cfg: &RewardConfig) -> RewardTerms {
        self.reward = total_reward(
            &RewardInputs {
                success: self.success,
                d_final: self.d_final,
                d_min: self.d_min,
                obj_bb: self.obj_bb,
                q_style: canonical_q,
                q_star: &self.q_star,
            },
            cfg,
        );
        self.reward
    }
}

/// Executes the edited demonstration once. Pure: equal inputs give equal records.
///
/// The object stays put until the grasp frame. On success it is carried
/// rigidly with the wrist afterwards, so the affordance distance over the lift
/// reflects the hand-object relation rather than the lift height.
pub fn rollout(scene: &Scene, env: &EnvState, action: &EditAction, cfg: &SimConfig) -> Result<RolloutRecord> {
    let spec = &scene.spec;
    let demo = &scene.demo;
    let obj = &scene.objects[env.object].model;
    let style = &scene.styles[env.style];
    let traj = edit_demo(demo, action, &env.q_style, &env.object_pose, spec)?;
    let tl = demo.grasp_index;
    let inv_obj = env.object_pose.inverse();
    let afford_world = env.p_afford_world();

    let mut crushed = false;
    let mut table_collision = false;
    let mut contacts = Vec::new();
    let mut outcome = Outcome::TooFewContacts;
    let mut carried: Option<Pose> = None;
    let mut d_series = Vec::with_capacity(traj.frames.len());
    for (t, frame) in traj.frames.iter().enumerate() {
        let fr = spec.forward_kinematics(&frame.ee_world, &frame.q)?;
        if t < tl && !crushed {
            crushed = crushes(&fr, obj, &inv_obj, cfg.crush_ratio);
        }
        if t <= tl && !table_collision {
            table_collision = check_table_collision(&fr, cfg.table_tol);
        }
        if t == tl {
            contacts = detect_contacts(&fr, obj, &env.object_pose, cfg.delta_c);
            outcome = if crushed {
                Outcome::Crushed
            } else {
                let local: Vec<Contact> = contacts
                    .iter()
                    .map(|c| Contact {
                        point: inv_obj.transform_point(&c.point),
                        normal: inv_obj.transform_vector(&c.normal),
                        ..*c
                    })
                    .collect();
                grasp_success(
                    &GraspCheck {
                        contacts: &local,
                        mask: &style.contact_mask,
                        com: obj.centroid,
                        obj_bb: obj.obj_bb,
                        table_collision,
                    },
                    cfg,
                )
            };
            if outcome.is_success() {
                carried = Some(frame.ee_world.inverse().compose(&env.object_pose));
            }
        }
        let target = match carried {
            Some(rel) if t > tl => frame.ee_world.compose(&rel).transform_point(&env.p_afford),
            _ => afford_world,
        };
        let d = (style_contact_point(&fr, &style.contact_mask) - target).norm();
        if !d.is_finite() {
            return Err(Error::NonFinite(format!("affordance distance at frame {t}")));
        }
        d_series.push(d);
    }
    let d_min = d_series.iter().copied().fold(f64::INFINITY, f64::min);
    let d_final = *d_series.last().expect("demonstration has frames");
    let q_final = traj.frames.last().expect("demonstration has frames").q.clone();
    let executed_style = spec.classify_style(&q_final, &scene.styles);
    Ok(RolloutRecord {
        object: env.object,
        style: env.style,
        outcome,
        success: outcome.is_success(),
        d_series,
        d_min,
        d_final,
        q_final,
        q_star: traj.q_star,
        contacts_at_grasp: contacts,
        executed_style,
        table_collision,
        crushed,
        p_afford_world: afford_world,
        obj_bb: obj.obj_bb,
        trajectory: traj.frames,
        reward: RewardTerms::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::SphereFrame;
    use crate::toy;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> Scene {
        Scene::bundled("inspire_like").unwrap()
    }

    fn frames_with(spheres: Vec<(usize, Vec3, f64)>) -> HandFrames {
        let n = spheres.iter().map(|s| s.0).max().unwrap_or(0) + 1;
        let mut tips = vec![Vec3::zeros(); n];
        let spheres = spheres
            .into_iter()
            .map(|(finger, center, radius)| {
                tips[finger] = center;
                SphereFrame { finger, segment: 0, center, radius }
            })
            .collect();
        HandFrames { wrist: Pose::identity(), spheres, fingertips: tips, palm: vec![] }
    }

    fn contact(finger: usize, point: Vec3, normal: Vec3) -> Contact {
        Contact { finger, point, normal, penetration: 0.0 }
    }

    #[test]
    fn reset_is_deterministic_and_respects_square() {
        let s = scene();
        let cfg = SimConfig::default();
        let a = reset_env(&s, 1, None, Some(0.05), &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = reset_env(&s, 1, None, Some(0.05), &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        let zero = SimConfig { square_half_width: 0.0, ..cfg };
        let e = reset_env(&s, 0, None, None, &zero, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(e.object_pose, Pose::identity());
        assert_eq!(e.q_style, s.styles[e.style].q);
    }

    #[test]
    fn reset_positions_are_uniform() {
        let s = scene();
        let cfg = SimConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let e = reset_env(&s, 2, None, None, &cfg, &mut rng);
            xs.push(e.object_pose.t.x);
            ys.push(e.object_pose.t.y);
        }
        for v in [&mut xs, &mut ys] {
            v.sort_by(f64::total_cmp);
            let w = cfg.square_half_width;
            let ks = v
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let cdf = (x + w) / (2.0 * w);
                    (cdf - i as f64 / n as f64).abs().max((cdf - (i + 1) as f64 / n as f64).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.02, "KS statistic {ks}");
        }
    }

    #[test]
    fn contacts_far_and_exact() {
        let obj = toy::sphere_object("s", 0.035, 0.004).unwrap();
        let far = frames_with(vec![(0, Vec3::new(1.0, 0.0, 0.0), 0.01)]);
        assert!(detect_contacts(&far, &obj, &Pose::identity(), 0.005).is_empty());
        let on = frames_with(vec![(0, obj.points[17], 0.01)]);
        let c = detect_contacts(&on, &obj, &Pose::identity(), 0.005);
        assert_eq!(c.len(), 1);
        assert!((c[0].penetration - 0.01).abs() < 1e-15);
    }

    #[test]
    fn straddled_cylinder_gives_opposing_normals() {
        let obj = toy::cylinder_object("c", 0.03, 0.11, 0.004).unwrap();
        let r = 0.009;
        let fr = frames_with(vec![
            (0, Vec3::new(0.0, 0.03 + r, 0.05), r),
            (1, Vec3::new(0.0, -0.03 - r, 0.05), r),
        ]);
        let c = detect_contacts(&fr, &obj, &Pose::identity(), 0.005);
        assert_eq!(c.len(), 2);
        assert!(c[0].normal.dot(&c[1].normal) < -0.9);
    }

    #[test]
    fn style_point_cases() {
        let fr = frames_with(vec![
            (0, Vec3::new(0.1, 0.0, 0.0), 0.01),
            (1, Vec3::new(-0.1, 0.0, 0.0), 0.01),
            (2, Vec3::new(0.3, 0.6, -0.9), 0.01),
        ]);
        assert_eq!(style_contact_point(&fr, &[2]), Vec3::new(0.3, 0.6, -0.9));
        assert_eq!(style_contact_point(&fr, &[0, 1]), Vec3::zeros());
        let c = style_contact_point(&fr, &[0, 1, 2]);
        assert!((c - Vec3::new(0.1, 0.2, -0.3)).norm() < 1e-15);
    }

    #[test]
    fn table_collision_cases() {
        let r = 0.01;
        let tol = 0.002;
        assert!(!check_table_collision(&frames_with(vec![(0, Vec3::new(0.0, 0.0, 0.05), r)]), tol));
        assert!(check_table_collision(&frames_with(vec![(0, Vec3::zeros(), r)]), tol));
        // grazing: center at radius - tol/2 is above the threshold radius - tol
        assert!(!check_table_collision(&frames_with(vec![(0, Vec3::new(0.0, 0.0, r - tol / 2.0), r)]), tol));
        assert!(check_table_collision(&frames_with(vec![(0, Vec3::new(0.0, 0.0, r - 1.5 * tol), r)]), tol));
    }

    fn antipodal(mu: f64) -> Outcome {
        let r = 0.035;
        let center = Vec3::new(0.0, 0.0, r);
        let contacts = [
            contact(0, center + Vec3::new(r, 0.0, 0.0), Vec3::x()),
            contact(1, center - Vec3::new(r, 0.0, 0.0), -Vec3::x()),
        ];
        let cfg = SimConfig { mu, ..Default::default() };
        grasp_success(
            &GraspCheck { contacts: &contacts, mask: &[0, 1], com: center, obj_bb: 2.0 * r, table_collision: false },
            &cfg,
        )
    }

    #[test]
    fn force_closure_cases() {
        assert_eq!(antipodal(0.5), Outcome::Success);
        let c = [contact(0, Vec3::new(0.035, 0.0, 0.035), Vec3::x())];
        let check = GraspCheck { contacts: &c, mask: &[0, 1], com: Vec3::new(0.0, 0.0, 0.035), obj_bb: 0.07, table_collision: false };
        assert_eq!(grasp_success(&check, &SimConfig::default()), Outcome::TooFewContacts);
        let same = [
            contact(0, Vec3::new(0.035, 0.01, 0.035), Vec3::x()),
            contact(1, Vec3::new(0.035, -0.01, 0.035), Vec3::x()),
        ];
        let cfg = SimConfig { mu: 0.1, ..Default::default() };
        let check = GraspCheck { contacts: &same, mask: &[0, 1], com: Vec3::new(0.0, 0.0, 0.035), obj_bb: 0.07, table_collision: false };
        assert_eq!(grasp_success(&check, &cfg), Outcome::NoForceClosure);
        let mut nan = same;
        nan[0].normal = Vec3::new(f64::NAN, 0.0, 0.0);
        let check = GraspCheck { contacts: &nan, ..check };
        assert_eq!(grasp_success(&check, &cfg), Outcome::DegenerateContact);
    }

    #[test]
    fn force_closure_monotone_in_mu() {
        let mut seen_success = false;
        for i in 0..=40 {
            let ok = antipodal(i as f64 * 0.025).is_success();
            assert!(!seen_success || ok, "lost closure at mu = {}", i as f64 * 0.025);
            seen_success |= ok;
        }
        assert!(seen_success);
        assert!(!antipodal(0.0).is_success());
    }

    #[test]
    fn far_wrist_fails_without_contacts() {
        let s = scene();
        let env = reset_env(&s, 0, Some(0), None, &SimConfig::default(), &mut ChaCha8Rng::seed_from_u64(1));
        let mut a = EditAction::identity(s.spec.dof());
        a.dt = [1.0, 0.0, 0.0];
        let rec = rollout(&s, &env, &a, &SimConfig::default()).unwrap();
        assert!(rec.contacts_at_grasp.is_empty());
        assert!(!rec.success);
    }

    #[test]
    fn identity_replay_succeeds_on_box_at_origin() {
        let s = scene();
        let cfg = SimConfig { square_half_width: 0.0, ..Default::default() };
        let bx = s.objects.iter().position(|o| o.model.name == "box").unwrap();
        let env = reset_env(&s, bx, Some(0), None, &cfg, &mut ChaCha8Rng::seed_from_u64(2));
        let rec = rollout(&s, &env, &EditAction::identity(s.spec.dof()), &cfg).unwrap();
        assert!(rec.success, "{:?}", rec.outcome);
        assert!(rec.d_series.iter().all(|d| d.is_finite() && *d >= 0.0));
        assert_eq!(rec.d_series.len(), s.demo.horizon() + 1);
        assert!(rec.d_min <= rec.d_final);
        let again = rollout(&s, &env, &EditAction::identity(s.spec.dof()), &cfg).unwrap();
        assert_eq!(rec, again);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn planar_rigid_motion_leaves_outcome_unchanged(
            seed in 0u64..1000, yaw in -3.0f64..3.0, dx in -0.3f64..0.3, dy in -0.3f64..0.3,
            obj in 0usize..5, style in 0usize..4,
        ) {
            let s = scene();
            let cfg = SimConfig::default();
            let env = reset_env(&s, obj, Some(style), None, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
            let g = Pose::from_translation(Vec3::new(dx, dy, 0.0)).compose(&Pose::yaw(yaw));
            let moved = EnvState { object_pose: g.compose(&env.object_pose), ..env.clone() };
            let a = EditAction { dt: [0.01, -0.005, 0.0], ..EditAction::identity(s.spec.dof()) };
            let r1 = rollout(&s, &env, &a, &cfg).unwrap();
            let r2 = rollout(&s, &moved, &a, &cfg).unwrap();
            prop_assert_eq!(r1.success, r2.success);
            for (x, y) in r1.d_series.iter().zip(&r2.d_series) {
                prop_assert!((x - y).abs() < 1e-9);
            }
            prop_assert_eq!(r1.contacts_at_grasp.len(), r2.contacts_at_grasp.len());
            // equidistant cloud points may swap under round-off, so compare depths
            for (c1, c2) in r1.contacts_at_grasp.iter().zip(&r2.contacts_at_grasp) {
                prop_assert_eq!(c1.finger, c2.finger);
                prop_assert!((c1.penetration - c2.penetration).abs() < 1e-9);
            }
        }
    }
}
