//! Oriented point-cloud objects, affordance likelihoods and point sampling.

use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::ply;
use crate::rng;
use crate::spatial::PointGrid;

pub const MIN_POINTS: usize = 64;
const NORMAL_NEIGHBORS: usize = 8;

/// Oriented point cloud in its canonical frame (resting on the table, min z = 0).
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub name: String,
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub centroid: Vec3,
    pub bb_min: Vec3,
    pub bb_max: Vec3,
    pub bb_edges: Vec3,
    /// Longest bounding-box edge.
    pub obj_bb: f64,
    /// Set when normals were missing from the source and had to be estimated.
    pub normals_estimated: bool,
    grid: PointGrid,
}

impl ObjectModel {
    /// Builds a model, renormalizing normals and shifting the cloud so its lowest point sits at z = 0.
    pub fn new(name: impl Into<String>, points: Vec<Vec3>, normals: Option<Vec<Vec3>>) -> Result<Self> {
        let name = name.into();
        let fail = |reason: String| Error::Object {
            name: name.clone(),
            reason,
        };
        if points.len() < MIN_POINTS {
            return Err(fail(format!(
                "{} points, at least {MIN_POINTS} required",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(fail("non-finite coordinates".into()));
        }
        let min_z = points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        let points: Vec<Vec3> = points.into_iter().map(|p| p - Vec3::new(0.0, 0.0, min_z)).collect();
        let centroid = points.iter().sum::<Vec3>() / points.len() as f64;

        let (normals, estimated) = match normals {
            Some(n) => {
                if n.len() != points.len() {
                    return Err(fail("normal count differs from point count".into()));
                }
                let mut out = Vec::with_capacity(n.len());
                for v in n {
                    let norm = v.norm();
                    if !norm.is_finite() || norm < 1e-12 {
                        return Err(fail("degenerate normal".into()));
                    }
                    out.push(v / norm);
                }
                (out, false)
            }
            None => (estimate_normals(&points, &centroid), true),
        };

        let mut bb_min = Vec3::repeat(f64::INFINITY);
        let mut bb_max = Vec3::repeat(f64::NEG_INFINITY);
        for p in &points {
            bb_min = bb_min.inf(p);
            bb_max = bb_max.sup(p);
        }
        let bb_edges = bb_max - bb_min;
        let obj_bb = bb_edges.max();
        let grid = PointGrid::new(&points, (obj_bb / 16.0).max(1e-3));
        Ok(Self {
            name,
            points,
            normals,
            centroid,
            bb_min,
            bb_max,
            bb_edges,
            obj_bb,
            normals_estimated: estimated,
            grid,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cloud = ply::read_ply(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "object".into());
        let model = Self::new(name, cloud.points, cloud.normals)?;
        if model.normals_estimated {
            log::warn!(
                "{}: normals missing, estimated from {NORMAL_NEIGHBORS}-nearest-neighbor plane fits",
                path.display()
            );
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        ply::write_ply(path.as_ref(), &self.points, Some(&self.normals))
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Uniformly scaled copy (about the origin, which keeps the table contact at z = 0).
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let pts = self.points.iter().map(|p| p * c).collect();
        Self::new(self.name.clone(), pts, Some(self.normals.clone()))
    }

    /// Nearest cloud point to `x` (object frame): `(index, distance)`.
    pub fn nearest(&self, x: &Vec3) -> (usize, f64) {
        self.grid.nearest(&self.points, x)
    }

    /// Distance from `x` to the axis-aligned bounding box (0 inside).
    pub fn bbox_distance(&self, x: &Vec3) -> f64 {
        let d = (self.bb_min - x).sup(&(x - self.bb_max)).sup(&Vec3::zeros());
        d.norm()
    }
}

/// Loads every `.ply` file in `dir`, sorted by file name.
pub fn load_object_dir(dir: impl AsRef<Path>) -> Result<Vec<ObjectModel>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ply")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!("no .ply objects in {}", dir.display())));
    }
    paths.iter().map(ObjectModel::load).collect()
}

fn estimate_normals(points: &[Vec3], centroid: &Vec3) -> Vec<Vec3> {
    let k = NORMAL_NEIGHBORS.min(points.len() - 1);
    points
        .iter()
        .map(|p| {
            let mut d: Vec<(f64, usize)> = points
                .iter()
                .enumerate()
                .map(|(i, q)| ((q - p).norm_squared(), i))
                .collect();
            d.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0));
            let nbrs: Vec<Vec3> = d[..=k].iter().map(|&(_, i)| points[i]).collect();
            let mean = nbrs.iter().sum::<Vec3>() / nbrs.len() as f64;
            let mut cov = Matrix3::zeros();
            for q in &nbrs {
                let v = q - mean;
                cov += v * v.transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let imin = eig.eigenvalues.imin();
            let mut n: Vec3 = eig.eigenvectors.column(imin).into_owned();
            if n.dot(&(p - centroid)) < 0.0 {
                n = -n;
            }
            n.normalize()
        })
        .collect()
}

/// Parameters of the normal-alignment affordance likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffordanceParams {
    pub beta: f64,
    /// Points below this height (m) are excluded.
    pub h_min: f64,
    /// Blend between upward-facing (1.0) and outward-facing (0.0) normals.
    pub up_weight: f64,
}

impl Default for AffordanceParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            h_min: 0.01,
            up_weight: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AffordanceDistribution {
    pub weights: Vec<f64>,
    pub params: AffordanceParams,
    sampler: WeightedIndex<f64>,
}

impl AffordanceDistribution {
    pub fn from_weights(weights: Vec<f64>, params: AffordanceParams) -> Result<Self> {
        let sampler = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidArgument(format!("affordance weights: {e}")))?;
        Ok(Self {
            weights,
            params,
            sampler,
        })
    }

    /// Categorical draw over point indices.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    /// Draws an affordance point (object frame).
    pub fn sample<R: Rng + ?Sized>(&self, obj: &ObjectModel, rng: &mut R) -> (usize, Vec3) {
        let i = self.sample_index(rng);
        (i, obj.points[i])
    }
}

/// Affordance likelihood over the cloud: each point scores
/// `max(0, up·(n·ẑ) + (1-up)·(n·o))^beta`, with `o` the horizontal outward
/// direction from the centroid, and points below `h_min` get zero weight.
pub fn affordance_distribution(obj: &ObjectModel, params: AffordanceParams) -> Result<AffordanceDistribution> {
    let eligible: Vec<bool> = obj.points.iter().map(|p| p.z >= params.h_min).collect();
    if !eligible.iter().any(|&e| e) {
        return Err(Error::Object {
            name: obj.name.clone(),
            reason: format!("no points above h_min = {}", params.h_min),
        });
    }
    let mut w: Vec<f64> = obj
        .points
        .iter()
        .zip(&obj.normals)
        .zip(&eligible)
        .map(|((p, n), &ok)| {
            if !ok {
                return 0.0;
            }
            let mut o = p - obj.centroid;
            o.z = 0.0;
            let on = o.norm();
            let outward = if on > 1e-12 { n.dot(&(o / on)) } else { 0.0 };
            let score = params.up_weight * n.z + (1.0 - params.up_weight) * outward;
            score.max(0.0).powf(params.beta)
        })
        .collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        let count = eligible.iter().filter(|&&e| e).count() as f64;
        w = eligible.iter().map(|&e| if e { 1.0 / count } else { 0.0 }).collect();
    } else {
        w.iter_mut().for_each(|x| *x /= total);
    }
    AffordanceDistribution::from_weights(w, params)
}

/// Greedy farthest-point sampling. The seed picks an anchor point; sampling
/// starts from the point farthest from the anchor so the result does not
/// depend on where inside the cloud the anchor landed.
pub fn farthest_point_sample(points: &[Vec3], m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.len();
    if m > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {m} points from a cloud of {n}"
        )));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let anchor = (rng::mix(seed, 0x5eed) % n as u64) as usize;
    let mut dist: Vec<f64> = points.iter().map(|p| (p - points[anchor]).norm_squared()).collect();
    let mut out = Vec::with_capacity(m);
    let mut next = argmax(&dist);
    dist.iter_mut().for_each(|d| *d = f64::INFINITY);
    for _ in 0..m {
        out.push(next);
        let c = points[next];
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
        dist[next] = -1.0;
        next = argmax(&dist);
    }
    Ok(out)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sphere(n: usize, r: f64) -> ObjectModel {
        let (pts, nrm) = toy::fibonacci_sphere(n, r, Vec3::new(0.0, 0.0, r));
        ObjectModel::new("sphere", pts, Some(nrm)).unwrap()
    }

    #[test]
    fn unit_cube_and_cylinder_boxes() {
        let cube = toy::box_object("cube", Vec3::new(1.0, 1.0, 1.0), 0.05).unwrap();
        assert!((cube.bb_edges - Vec3::new(1.0, 1.0, 1.0)).norm() < 1e-12);
        assert!((cube.obj_bb - 1.0).abs() < 1e-12);
        let cyl = toy::cylinder_object("cyl", 0.03, 0.20, 0.004).unwrap();
        assert!((cyl.obj_bb - 0.20).abs() < 1e-12);
        assert_eq!(cyl.obj_bb, cyl.bb_edges.max());
    }

    #[test]
    fn canonicalizes_min_z() {
        let (pts, nrm) = toy::fibonacci_sphere(200, 0.05, Vec3::zeros());
        assert!(pts.iter().any(|p| p.z < -0.049));
        let obj = ObjectModel::new("s", pts, Some(nrm)).unwrap();
        let min_z = obj.points.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
        assert_eq!(min_z, 0.0);
    }

    #[test]
    fn rejects_small_and_non_finite_clouds() {
        let pts = vec![Vec3::zeros(); 10];
        assert!(ObjectModel::new("tiny", pts, None).is_err());
        let (mut pts, n) = toy::fibonacci_sphere(100, 0.05, Vec3::zeros());
        pts[3].x = f64::NAN;
        assert!(ObjectModel::new("nan", pts, Some(n)).is_err());
    }

    #[test]
    fn estimates_missing_normals() {
        let (pts, truth) = toy::fibonacci_sphere(400, 0.05, Vec3::zeros());
        let obj = ObjectModel::new("s", pts, None).unwrap();
        assert!(obj.normals_estimated);
        for (n, t) in obj.normals.iter().zip(&truth) {
            assert!((n.norm() - 1.0).abs() < 1e-6);
            assert!(n.dot(t) > 0.95);
        }
    }

    #[test]
    fn sphere_affordance_follows_upward_normals() {
        let obj = sphere(500, 0.05);
        let params = AffordanceParams { beta: 1.0, h_min: 0.0, up_weight: 1.0 };
        let dist = affordance_distribution(&obj, params).unwrap();
        let raw: Vec<f64> = obj.normals.iter().map(|n| n.z.max(0.0)).collect();
        let total: f64 = raw.iter().sum();
        for (w, r) in dist.weights.iter().zip(&raw) {
            assert!((w - r / total).abs() < 1e-12);
        }
        let top = argmax(&obj.points.iter().map(|p| p.z).collect::<Vec<_>>());
        assert_eq!(argmax(&dist.weights), top);
        assert!((dist.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn h_min_above_object_is_rejected() {
        let obj = sphere(200, 0.05);
        let params = AffordanceParams { h_min: 0.5, ..Default::default() };
        assert!(affordance_distribution(&obj, params).is_err());
    }

    #[test]
    fn downward_normals_fall_back_to_uniform() {
        let (pts, _) = toy::fibonacci_sphere(200, 0.05, Vec3::zeros());
        let normals = vec![-Vec3::z(); pts.len()];
        let obj = ObjectModel::new("down", pts, Some(normals)).unwrap();
        let params = AffordanceParams { up_weight: 1.0, ..Default::default() };
        let dist = affordance_distribution(&obj, params).unwrap();
        let eligible = obj.points.iter().filter(|p| p.z >= params.h_min).count() as f64;
        for (w, p) in dist.weights.iter().zip(&obj.points) {
            let expected = if p.z >= params.h_min { 1.0 / eligible } else { 0.0 };
            assert!((w - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn affordance_weights_follow_permutation() {
        let obj = toy::suite().unwrap().remove(4);
        let perm: Vec<usize> = (0..obj.len()).rev().collect();
        let permuted = ObjectModel::new(
            "p",
            perm.iter().map(|&i| obj.points[i]).collect(),
            Some(perm.iter().map(|&i| obj.normals[i]).collect()),
        )
        .unwrap();
        let a = affordance_distribution(&obj, Default::default()).unwrap();
        let b = affordance_distribution(&permuted, Default::default()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert!((a.weights[i] - b.weights[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn obj_bb_scales_linearly() {
        for obj in toy::suite().unwrap() {
            let s = obj.scaled(2.5).unwrap();
            assert!((s.obj_bb - 2.5 * obj.obj_bb).abs() < 1e-12 * s.obj_bb.max(1.0));
        }
    }

    #[test]
    fn one_hot_and_seeded_sampling() {
        let obj = sphere(100, 0.05);
        let mut w = vec![0.0; obj.len()];
        w[17] = 1.0;
        let d = AffordanceDistribution::from_weights(w, Default::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(d.sample(&obj, &mut rng).1, obj.points[17]);
        }
        let full = affordance_distribution(&obj, Default::default()).unwrap();
        let a = full.sample(&obj, &mut ChaCha8Rng::seed_from_u64(11));
        let b = full.sample(&obj, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_frequencies_match_weights() {
        let weights = vec![0.2, 0.5, 0.3];
        let d = AffordanceDistribution::from_weights(weights.clone(), Default::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[d.sample_index(&mut rng)] += 1;
        }
        for (c, w) in counts.iter().zip(&weights) {
            assert!((*c as f64 / n as f64 - w).abs() < 0.01);
        }
    }

    #[test]
    fn fps_cases() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64 * 0.1 + 0.05 * ((i * 7) % 3) as f64, 0.0, 0.0)).collect();
        let all = farthest_point_sample(&pts, pts.len(), 4).unwrap();
        let mut sorted = all.clone();
        sorted.sort();
        assert_eq!(sorted, (0..20).collect::<Vec<_>>());

        let seg: Vec<Vec3> = (0..11).map(|i| Vec3::new(i as f64 / 10.0, 0.0, 0.0)).collect();
        for seed in 0..10 {
            let mut two = farthest_point_sample(&seg, 2, seed).unwrap();
            two.sort();
            assert_eq!(two, vec![0, 10]);
        }
        assert!(farthest_point_sample(&seg, 12, 0).is_err());
    }

    #[test]
    fn fps_spreads_better_than_random_subsets() {
        use rand::seq::index::sample;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..400)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let min_pair = |idx: &[usize]| {
            let mut m = f64::INFINITY;
            for a in 0..idx.len() {
                for b in a + 1..idx.len() {
                    m = m.min((pts[idx[a]] - pts[idx[b]]).norm());
                }
            }
            m
        };
        let m = 32;
        let fps = min_pair(&farthest_point_sample(&pts, m, 1).unwrap());
        for _ in 0..100 {
            let sub = sample(&mut rng, pts.len(), m).into_vec();
            assert!(fps >= min_pair(&sub));
        }
    }

    #[test]
    fn nearest_matches_brute_force() {
        let obj = toy::suite().unwrap().remove(3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let x = Vec3::new(
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.15..0.15),
                rng.random_range(-0.05..0.2),
            );
            let (_, d) = obj.nearest(&x);
            let brute = obj.points.iter().map(|p| (p - x).norm()).fold(f64::INFINITY, f64::min);
            assert!((d - brute).abs() < 1e-15);
        }
    }
}
