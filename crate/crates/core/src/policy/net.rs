//! Actor-critic network with a pointwise-MLP + max-pool cloud encoder and
//! hand-written reverse-mode gradients.
//!
//! All parameters live in one flat vector so optimizers, checkpoints and
//! finite-difference checks treat them uniformly.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::obs::{CloudFeatures, Observation, POINT_DIM};
use crate::error::{Error, Result};

pub const POINT_HIDDEN: usize = 32;
pub const EMBED: usize = 64;
pub const TRUNK: usize = 128;
pub const CRITIC_HIDDEN: [usize; 2] = [128, 64];
pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;
/// Gain of the output heads, keeping the initial policy close to replay.
pub const HEAD_GAIN: f64 = 0.01;

const P1: usize = 0;
const P2: usize = 1;
const T1: usize = 2;
const T2: usize = 3;
const MEAN: usize = 4;
const C1: usize = 5;
const C2: usize = 6;
const VALUE: usize = 7;
const LAYER_NAMES: [&str; 8] = ["point1", "point2", "trunk1", "trunk2", "mean", "critic1", "critic2", "value"];

/// Sizes that determine the parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    /// Number of styles `S`.
    pub styles: usize,
    /// Active hand joints `J`.
    pub dof: usize,
    /// Cloud points `M` fed to the encoder.
    pub points: usize,
}

impl NetShape {
    /// Non-cloud observation features: `s_r`, `s_o`, `p_afford_rel`, one-hot, `obj_bb`.
    pub fn feature_dim(&self) -> usize {
        7 + 7 + 3 + self.styles + 1
    }

    /// Trunk input width `D`.
    pub fn input_dim(&self) -> usize {
        self.feature_dim() + EMBED
    }

    pub fn action_dim(&self) -> usize {
        3 + 3 + self.dof + 1
    }

    fn layer_dims(&self) -> [(usize, usize); 8] {
        let d = self.input_dim();
        [
            (POINT_DIM, POINT_HIDDEN),
            (POINT_HIDDEN, EMBED),
            (d, TRUNK),
            (TRUNK, TRUNK),
            (TRUNK, self.action_dim()),
            (d, CRITIC_HIDDEN[0]),
            (CRITIC_HIDDEN[0], CRITIC_HIDDEN[1]),
            (CRITIC_HIDDEN[1], 1),
        ]
    }
}

/// Dense layer stored row-major (`w[o * n_in + i]`) followed by its bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub offset: usize,
}

impl Layer {
    pub fn len(&self) -> usize {
        self.n_out * (self.n_in + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bias(&self) -> usize {
        self.offset + self.n_out * self.n_in
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub shape: NetShape,
    pub data: Vec<f64>,
    layers: [Layer; 8],
    log_std: usize,
}

impl PolicyParams {
    fn layout(shape: NetShape) -> ([Layer; 8], usize) {
        let mut offset = 0;
        let layers = shape.layer_dims().map(|(n_in, n_out)| {
            let l = Layer { n_in, n_out, offset };
            offset += l.len();
            l
        });
        (layers, offset)
    }

    pub fn param_count(shape: NetShape) -> usize {
        let (_, log_std) = Self::layout(shape);
        log_std + shape.action_dim()
    }

    pub fn zeros(shape: NetShape) -> Self {
        let (layers, log_std) = Self::layout(shape);
        Self {
            shape,
            data: vec![0.0; log_std + shape.action_dim()],
            layers,
            log_std,
        }
    }

    /// Wraps a flat parameter vector, checking its length.
    pub fn from_flat(shape: NetShape, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(shape);
        if data.len() != p.data.len() {
            return Err(Error::dim("policy parameters", p.data.len(), data.len()));
        }
        p.data = data;
        Ok(p)
    }

    /// Orthogonal initialization (gain √2 for hidden layers, [`HEAD_GAIN`] for
    /// both output heads), zero biases, constant log-std.
    pub fn init<R: Rng + ?Sized>(shape: NetShape, init_log_std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for (k, l) in p.layers.iter().enumerate() {
            let gain = if k == MEAN || k == VALUE { HEAD_GAIN } else { 2f64.sqrt() };
            let w = orthogonal(l.n_out, l.n_in, rng);
            for o in 0..l.n_out {
                for i in 0..l.n_in {
                    p.data[l.offset + o * l.n_in + i] = gain * w[(o, i)];
                }
            }
        }
        let ls = init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
        let a = shape.action_dim();
        p.data[p.log_std..p.log_std + a].fill(ls);
        p
    }

    pub fn layers(&self) -> &[Layer; 8] {
        &self.layers
    }

    pub fn layer_name(k: usize) -> &'static str {
        LAYER_NAMES[k]
    }

    /// Offset of the log-std block in `data`.
    pub fn log_std_offset(&self) -> usize {
        self.log_std
    }

    /// Clamped log-std vector.
    pub fn log_std(&self) -> Vec<f64> {
        self.data[self.log_std..]
            .iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect()
    }

    /// Keeps stored log-std values inside their clamp range.
    pub fn clamp_log_std(&mut self) {
        for v in &mut self.data[self.log_std..] {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// Zeroes both output heads (means and value become exactly zero).
    pub fn zero_heads(&mut self) {
        for k in [MEAN, VALUE] {
            let l = self.layers[k];
            self.data[l.offset..l.offset + l.len()].fill(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn linear(&self, k: usize, x: &[f64], y: &mut [f64]) {
        let l = &self.layers[k];
        let w = &self.data[l.offset..l.bias()];
        let b = &self.data[l.bias()..l.bias() + l.n_out];
        for o in 0..l.n_out {
            let row = &w[o * l.n_in..(o + 1) * l.n_in];
            y[o] = b[o] + dot(row, x);
        }
    }

    /// Accumulates weight/bias gradients and, if requested, the input gradient.
    fn linear_back(&self, k: usize, x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let l = &self.layers[k];
        let bias = l.bias();
        for o in 0..l.n_out {
            let g = dy[o];
            if g == 0.0 {
                continue;
            }
            grad[bias + o] += g;
            let row = &mut grad[l.offset + o * l.n_in..l.offset + (o + 1) * l.n_in];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
        if let Some(dx) = dx {
            let w = &self.data[l.offset..bias];
            for o in 0..l.n_out {
                let g = dy[o];
                if g == 0.0 {
                    continue;
                }
                for (d, wi) in dx.iter_mut().zip(&w[o * l.n_in..(o + 1) * l.n_in]) {
                    *d += g * wi;
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu_inplace(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Masks `d` by the activation pattern of a ReLU output `y`.
fn relu_back(y: &[f64], d: &mut [f64]) {
    for (g, &v) in d.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let tall = rows >= cols;
    let (r, c) = if tall { (rows, cols) } else { (cols, rows) };
    let g = DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    // sign fix makes the draw uniform over orthogonal matrices
    let rdiag = qr.r().diagonal();
    for j in 0..c {
        if rdiag[j] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if tall {
        q
    } else {
        q.transpose()
    }
}

/// Per-cloud encoder activations.
#[derive(Debug, Clone)]
pub struct CloudCache {
    pub cloud: Arc<CloudFeatures>,
    /// `M × 32` hidden activations.
    z1: Vec<f64>,
    /// `M × 64` point features.
    z2: Vec<f64>,
    /// Winning point per channel (lowest index on ties).
    pub argmax: Vec<usize>,
    pub embedding: Vec<f64>,
}

/// Activations recorded by [`PolicyParams::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub clouds: Vec<CloudCache>,
    /// Index into `clouds` per sample.
    pub sample_cloud: Vec<usize>,
    pub batch: usize,
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    c1: Vec<f64>,
    c2: Vec<f64>,
    /// `B × A` action means.
    pub mean: Vec<f64>,
    /// Clamped log-std (shared by the batch).
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

impl ForwardCache {
    pub fn mean_row(&self, i: usize) -> &[f64] {
        let a = self.log_std.len();
        &self.mean[i * a..(i + 1) * a]
    }

    /// ReLU patterns and max-pool routing; changes when a parameter
    /// perturbation crosses a non-differentiable point.
    pub fn signature(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut push_bits = |v: &[f64]| {
            for chunk in v.chunks(64) {
                let mut w = 0u64;
                for (k, x) in chunk.iter().enumerate() {
                    if *x > 0.0 {
                        w |= 1 << k;
                    }
                }
                out.push(w);
            }
        };
        for c in &self.clouds {
            push_bits(&c.z1);
            push_bits(&c.z2);
        }
        push_bits(&self.h1);
        push_bits(&self.h2);
        push_bits(&self.c1);
        push_bits(&self.c2);
        for c in &self.clouds {
            out.extend(c.argmax.iter().map(|&a| a as u64));
        }
        out
    }
}

/// Upstream gradients of a scalar loss with respect to the network outputs.
#[derive(Debug, Clone)]
pub struct Upstream {
    /// `B × A`.
    pub d_mean: Vec<f64>,
    /// `A`, gradient with respect to the (clamped) log-std.
    pub d_log_std: Vec<f64>,
    /// `B`.
    pub d_value: Vec<f64>,
}

impl Upstream {
    pub fn zeros(batch: usize, action_dim: usize) -> Self {
        Self {
            d_mean: vec![0.0; batch * action_dim],
            d_log_std: vec![0.0; action_dim],
            d_value: vec![0.0; batch],
        }
    }
}

impl PolicyParams {
    fn encode_cloud(&self, cloud: &Arc<CloudFeatures>) -> CloudCache {
        let m = cloud.points();
        let mut z1 = vec![0.0; m * POINT_HIDDEN];
        let mut z2 = vec![0.0; m * EMBED];
        for p in 0..m {
            let x = &cloud.data[p * POINT_DIM..(p + 1) * POINT_DIM];
            let h = &mut z1[p * POINT_HIDDEN..(p + 1) * POINT_HIDDEN];
            self.linear(P1, x, h);
            relu_inplace(h);
            let y = &mut z2[p * EMBED..(p + 1) * EMBED];
            self.linear(P2, &z1[p * POINT_HIDDEN..(p + 1) * POINT_HIDDEN], y);
            relu_inplace(y);
        }
        let mut argmax = vec![0usize; EMBED];
        let mut embedding = vec![f64::NEG_INFINITY; EMBED];
        for p in 0..m {
            for c in 0..EMBED {
                let v = z2[p * EMBED + c];
                if v > embedding[c] {
                    embedding[c] = v;
                    argmax[c] = p;
                }
            }
        }
        if m == 0 {
            embedding.fill(0.0);
        }
        CloudCache {
            cloud: Arc::clone(cloud),
            z1,
            z2,
            argmax,
            embedding,
        }
    }

    /// Batch forward pass. Observations sharing the same cloud allocation
    /// (`Arc::ptr_eq`) run the encoder once.
    pub fn forward(&self, obs: &[&Observation]) -> Result<ForwardCache> {
        let shape = self.shape;
        let fdim = shape.feature_dim();
        let d = shape.input_dim();
        let a = shape.action_dim();
        let b = obs.len();
        let mut clouds: Vec<CloudCache> = Vec::new();
        let mut sample_cloud = Vec::with_capacity(b);
        for o in obs {
            if o.features.len() != fdim {
                return Err(Error::dim("observation features", fdim, o.features.len()));
            }
            if o.cloud.points() != shape.points {
                return Err(Error::dim("observation cloud points", shape.points, o.cloud.points()));
            }
            let idx = match clouds.iter().position(|c| Arc::ptr_eq(&c.cloud, &o.cloud)) {
                Some(i) => i,
                None => {
                    clouds.push(self.encode_cloud(&o.cloud));
                    clouds.len() - 1
                }
            };
            sample_cloud.push(idx);
        }
        let mut x = vec![0.0; b * d];
        let mut h1 = vec![0.0; b * TRUNK];
        let mut h2 = vec![0.0; b * TRUNK];
        let mut c1 = vec![0.0; b * CRITIC_HIDDEN[0]];
        let mut c2 = vec![0.0; b * CRITIC_HIDDEN[1]];
        let mut mean = vec![0.0; b * a];
        let mut value = vec![0.0; b];
        for (i, o) in obs.iter().enumerate() {
            let xi = &mut x[i * d..(i + 1) * d];
            assemble_input(&o.features, &clouds[sample_cloud[i]].embedding, xi);
            let xi = &x[i * d..(i + 1) * d];
            let h1i = &mut h1[i * TRUNK..(i + 1) * TRUNK];
            self.linear(T1, xi, h1i);
            relu_inplace(h1i);
            let h2i = &mut h2[i * TRUNK..(i + 1) * TRUNK];
            self.linear(T2, &h1[i * TRUNK..(i + 1) * TRUNK], h2i);
            relu_inplace(h2i);
            self.linear(MEAN, &h2[i * TRUNK..(i + 1) * TRUNK], &mut mean[i * a..(i + 1) * a]);

            let (n1, n2) = (CRITIC_HIDDEN[0], CRITIC_HIDDEN[1]);
            let c1i = &mut c1[i * n1..(i + 1) * n1];
            self.linear(C1, xi, c1i);
            relu_inplace(c1i);
            let c2i = &mut c2[i * n2..(i + 1) * n2];
            self.linear(C2, &c1[i * n1..(i + 1) * n1], c2i);
            relu_inplace(c2i);
            let mut v = [0.0];
            self.linear(VALUE, &c2[i * n2..(i + 1) * n2], &mut v);
            value[i] = v[0];
        }
        let cache = ForwardCache {
            clouds,
            sample_cloud,
            batch: b,
            x,
            h1,
            h2,
            c1,
            c2,
            mean,
            log_std: self.log_std(),
            value,
        };
        if !cache.mean.iter().chain(&cache.value).all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("policy forward, layer `{}`", first_bad_layer(&cache))));
        }
        Ok(cache)
    }

    /// Exact gradient of a scalar loss given its gradients with respect to the outputs.
    pub fn backward(&self, cache: &ForwardCache, up: &Upstream) -> Vec<f64> {
        let shape = self.shape;
        let d = shape.input_dim();
        let a = shape.action_dim();
        let fdim = shape.feature_dim();
        let (n1, n2) = (CRITIC_HIDDEN[0], CRITIC_HIDDEN[1]);
        let mut grad = vec![0.0; self.data.len()];
        let mut d_embed = vec![0.0; cache.clouds.len() * EMBED];
        let mut dh2 = vec![0.0; TRUNK];
        let mut dh1 = vec![0.0; TRUNK];
        let mut dc2 = vec![0.0; n2];
        let mut dc1 = vec![0.0; n1];
        let mut dx = vec![0.0; d];
        for i in 0..cache.batch {
            let xi = &cache.x[i * d..(i + 1) * d];
            let h1i = &cache.h1[i * TRUNK..(i + 1) * TRUNK];
            let h2i = &cache.h2[i * TRUNK..(i + 1) * TRUNK];
            let c1i = &cache.c1[i * n1..(i + 1) * n1];
            let c2i = &cache.c2[i * n2..(i + 1) * n2];
            dx.fill(0.0);

            let dm = &up.d_mean[i * a..(i + 1) * a];
            if dm.iter().any(|&g| g != 0.0) {
                dh2.fill(0.0);
                self.linear_back(MEAN, h2i, dm, &mut grad, Some(&mut dh2));
                relu_back(h2i, &mut dh2);
                dh1.fill(0.0);
                self.linear_back(T2, h1i, &dh2, &mut grad, Some(&mut dh1));
                relu_back(h1i, &mut dh1);
                self.linear_back(T1, xi, &dh1, &mut grad, Some(&mut dx));
            }
            let dv = up.d_value[i];
            if dv != 0.0 {
                dc2.fill(0.0);
                self.linear_back(VALUE, c2i, &[dv], &mut grad, Some(&mut dc2));
                relu_back(c2i, &mut dc2);
                dc1.fill(0.0);
                self.linear_back(C2, c1i, &dc2, &mut grad, Some(&mut dc1));
                relu_back(c1i, &mut dc1);
                self.linear_back(C1, xi, &dc1, &mut grad, Some(&mut dx));
            }
            let k = cache.sample_cloud[i];
            let (_, de, _) = split_input(&dx, fdim);
            for (acc, g) in d_embed[k * EMBED..(k + 1) * EMBED].iter_mut().zip(de) {
                *acc += g;
            }
        }
        // max-pool routes each channel's gradient to its winning point only
        let mut dz2 = vec![0.0; EMBED];
        let mut dz1 = vec![0.0; POINT_HIDDEN];
        for (k, cc) in cache.clouds.iter().enumerate() {
            let de = &d_embed[k * EMBED..(k + 1) * EMBED];
            if de.iter().all(|&g| g == 0.0) {
                continue;
            }
            let m = cc.cloud.points();
            let mut per_point: Vec<Vec<(usize, f64)>> = vec![Vec::new(); m];
            for c in 0..EMBED {
                if de[c] != 0.0 {
                    per_point[cc.argmax[c]].push((c, de[c]));
                }
            }
            for (p, routed) in per_point.iter().enumerate() {
                if routed.is_empty() {
                    continue;
                }
                dz2.fill(0.0);
                for &(c, g) in routed {
                    dz2[c] = g;
                }
                let z2p = &cc.z2[p * EMBED..(p + 1) * EMBED];
                relu_back(z2p, &mut dz2);
                let z1p = &cc.z1[p * POINT_HIDDEN..(p + 1) * POINT_HIDDEN];
                dz1.fill(0.0);
                self.linear_back(P2, z1p, &dz2, &mut grad, Some(&mut dz1));
                relu_back(z1p, &mut dz1);
                let xp = &cc.cloud.data[p * POINT_DIM..(p + 1) * POINT_DIM];
                self.linear_back(P1, xp, &dz1, &mut grad, None);
            }
        }
        let raw = &self.data[self.log_std..];
        for (j, g) in up.d_log_std.iter().enumerate() {
            // clamped entries pass no gradient
            if raw[j] > LOG_STD_MIN && raw[j] < LOG_STD_MAX {
                grad[self.log_std + j] += g;
            }
        }
        grad
    }
}

/// Trunk input layout: `[s_r, s_o, embedding, p_afford_rel, one-hot, obj_bb]`.
fn assemble_input(features: &[f64], embedding: &[f64], x: &mut [f64]) {
    x[..14].copy_from_slice(&features[..14]);
    x[14..14 + EMBED].copy_from_slice(embedding);
    x[14 + EMBED..].copy_from_slice(&features[14..]);
}

fn split_input(x: &[f64], fdim: usize) -> (&[f64], &[f64], &[f64]) {
    debug_assert_eq!(x.len(), fdim + EMBED);
    (&x[..14], &x[14..14 + EMBED], &x[14 + EMBED..])
}

fn first_bad_layer(c: &ForwardCache) -> &'static str {
    let bad = |v: &[f64]| v.iter().any(|x| !x.is_finite());
    if c.clouds.iter().any(|cc| bad(&cc.z1)) {
        return LAYER_NAMES[P1];
    }
    if c.clouds.iter().any(|cc| bad(&cc.z2)) {
        return LAYER_NAMES[P2];
    }
    for (v, k) in [(&c.x, T1), (&c.h1, T1), (&c.h2, T2), (&c.mean, MEAN), (&c.c1, C1), (&c.c2, C2), (&c.value, VALUE)] {
        if bad(v) {
            return LAYER_NAMES[k];
        }
    }
    "output"
}


#[cfg(test)]
mod tests {
    use super::tests_support::random_obs;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn shape() -> NetShape {
        NetShape { styles: 4, dof: 6, points: 16 }
    }

    #[test]
    fn zero_heads_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = PolicyParams::init(shape(), -1.0, &mut rng);
        p.zero_heads();
        let obs: Vec<Observation> = (0..3).map(|_| random_obs(shape(), &mut rng)).collect();
        let refs: Vec<&Observation> = obs.iter().collect();
        let c = p.forward(&refs).unwrap();
        assert!(c.mean.iter().all(|&m| m == 0.0));
        assert!(c.value.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn orthogonal_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = orthogonal(8, 20, &mut rng);
        let g = &q * q.transpose();
        assert!((g - DMatrix::identity(8, 8)).norm() < 1e-12);
    }

    #[test]
    fn point_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = PolicyParams::init(shape(), -1.0, &mut rng);
        let o = random_obs(shape(), &mut rng);
        let m = shape().points;
        let mut perm: Vec<usize> = (0..m).collect();
        perm.reverse();
        perm.swap(0, 5);
        let mut data = vec![0.0; m * POINT_DIM];
        for (dst, &src) in perm.iter().enumerate() {
            data[dst * POINT_DIM..(dst + 1) * POINT_DIM].copy_from_slice(&o.cloud.data[src * POINT_DIM..(src + 1) * POINT_DIM]);
        }
        let o2 = Observation { features: o.features.clone(), cloud: Arc::new(CloudFeatures::new(data)) };
        let a = p.forward(&[&o]).unwrap();
        let b = p.forward(&[&o2]).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.value, b.value);
        let mut up = Upstream::zeros(1, shape().action_dim());
        up.d_mean.iter_mut().enumerate().for_each(|(i, g)| *g = (i as f64).sin());
        up.d_value[0] = 0.7;
        // summation order over points differs, so gradients agree to round-off
        for (x, y) in p.backward(&a, &up).iter().zip(p.backward(&b, &up)) {
            assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = PolicyParams::init(shape(), -1.0, &mut rng);
        let o = random_obs(shape(), &mut rng);
        let c = p.forward(&[&o, &o]).unwrap();
        let g = p.backward(&c, &Upstream::zeros(2, shape().action_dim()));
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_row_doubles_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = PolicyParams::init(shape(), -1.0, &mut rng);
        let o = random_obs(shape(), &mut rng);
        let a = shape().action_dim();
        let mut one = Upstream::zeros(1, a);
        one.d_mean.iter_mut().enumerate().for_each(|(i, g)| *g = 0.1 * i as f64 - 0.3);
        one.d_value[0] = -1.3;
        let g1 = p.backward(&p.forward(&[&o]).unwrap(), &one);
        let mut two = Upstream::zeros(2, a);
        two.d_mean[..a].copy_from_slice(&one.d_mean);
        two.d_mean[a..].copy_from_slice(&one.d_mean);
        two.d_value = vec![-1.3, -1.3];
        let g2 = p.backward(&p.forward(&[&o, &o]).unwrap(), &two);
        for (x, y) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn shared_cloud_is_encoded_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = PolicyParams::init(shape(), -1.0, &mut rng);
        let o = random_obs(shape(), &mut rng);
        let o2 = Observation { features: o.features.iter().map(|v| v * 0.5).collect(), cloud: Arc::clone(&o.cloud) };
        let c = p.forward(&[&o, &o2, &o]).unwrap();
        assert_eq!(c.clouds.len(), 1);
        let separate = Observation { features: o2.features.clone(), cloud: Arc::new((*o.cloud).clone()) };
        let c2 = p.forward(&[&o, &separate, &o]).unwrap();
        assert_eq!(c2.clouds.len(), 2);
        assert_eq!(c.mean, c2.mean);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = PolicyParams::init(shape(), -1.0, &mut rng);
        let mut o = random_obs(shape(), &mut rng);
        o.features[0] = f64::NAN;
        let err = p.forward(&[&o]).unwrap_err().to_string();
        assert!(err.contains("trunk1"), "{err}");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = PolicyParams::init(shape(), -1.0, &mut rng);
        let o = random_obs(NetShape { styles: 9, ..shape() }, &mut rng);
        assert!(matches!(p.forward(&[&o]), Err(Error::Dimension { .. })));
    }
}
