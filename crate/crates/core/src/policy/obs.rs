//! Observation encoding.

use std::sync::Arc;

use crate::error::Result;
use crate::geometry::Pose;
use crate::object::{farthest_point_sample, ObjectModel};
use crate::sim::{EnvState, Scene};

/// Per-point input width: centered, size-normalized position plus normal.
pub const POINT_DIM: usize = 6;
pub const DEFAULT_POINTS: usize = 128;

/// Normalized object cloud, `M × 6` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudFeatures {
    pub data: Vec<f64>,
}

impl CloudFeatures {
    pub fn new(data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % POINT_DIM, 0);
        Self { data }
    }

    pub fn points(&self) -> usize {
        self.data.len() / POINT_DIM
    }

    /// Farthest-point subsample of `obj`, centered on the centroid and divided by `obj_bb`.
    pub fn from_object(obj: &ObjectModel, m: usize, seed: u64) -> Result<Self> {
        let idx = farthest_point_sample(&obj.points, m.min(obj.len()), seed)?;
        let mut data = Vec::with_capacity(m * POINT_DIM);
        for &i in &idx {
            let p = (obj.points[i] - obj.centroid) / obj.obj_bb;
            let n = obj.normals[i];
            data.extend_from_slice(&[p.x, p.y, p.z, n.x, n.y, n.z]);
        }
        // small clouds repeat their samples; max-pooling is unaffected
        let mut k = 0;
        while data.len() < m * POINT_DIM {
            let row = data[k * POINT_DIM..(k + 1) * POINT_DIM].to_vec();
            data.extend_from_slice(&row);
            k += 1;
        }
        Ok(Self { data })
    }
}

/// Encoded clouds for every scene object, computed once and shared.
#[derive(Debug, Clone)]
pub struct CloudBank {
    pub points: usize,
    pub seed: u64,
    clouds: Vec<Arc<CloudFeatures>>,
}

impl CloudBank {
    pub fn new(scene: &Scene, points: usize, seed: u64) -> Result<Self> {
        let clouds = scene
            .objects
            .iter()
            .map(|o| CloudFeatures::from_object(&o.model, points, seed).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { points, seed, clouds })
    }

    pub fn get(&self, object: usize) -> &Arc<CloudFeatures> {
        &self.clouds[object]
    }
}

/// Policy input: flat features plus a shared handle to the object cloud.
///
/// `features` = `[s_r (7), s_o (7), p_afford_rel (3), one-hot style (S), obj_bb (1)]`.
#[derive(Debug, Clone)]
pub struct Observation {
    pub features: Vec<f64>,
    pub cloud: Arc<CloudFeatures>,
}

fn push_pose(out: &mut Vec<f64>, p: &Pose) {
    let mut a = p.to_array7();
    // q and -q are the same rotation; keep w ≥ 0 so the encoding is unique
    if a[3] < 0.0 {
        for v in &mut a[3..] {
            *v = -*v;
        }
    }
    out.extend_from_slice(&a);
}

/// Encodes a reset environment. Deterministic.
pub fn encode_observation(env: &EnvState, scene: &Scene, bank: &CloudBank) -> Observation {
    let obj = &scene.objects[env.object].model;
    let s = scene.style_count();
    let mut f = Vec::with_capacity(18 + s);
    let ee = env.object_pose.compose(&scene.demo.frames[0].p);
    push_pose(&mut f, &ee);
    push_pose(&mut f, &env.object_pose);
    let rel = (env.p_afford - obj.centroid) / obj.obj_bb;
    f.extend_from_slice(&[rel.x, rel.y, rel.z]);
    f.extend((0..s).map(|k| if k == env.style { 1.0 } else { 0.0 }));
    f.push(obj.obj_bb);
    Observation {
        features: f,
        cloud: Arc::clone(bank.get(env.object)),
    }
}
