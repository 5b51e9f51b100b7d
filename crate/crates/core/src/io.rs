//! Camera projection, rollout export and policy checkpoints.
//!
//! Every file written here goes to a temporary sibling first and is renamed
//! into place, so a failed write never leaves a truncated artifact behind.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::policy::{NetShape, PolicyParams};
use crate::reward::RewardTerms;
use crate::sim::{Outcome, RolloutRecord, Scene};

pub const SCHEMA_VERSION: u32 = 1;

/// Depths at or below this are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole camera. `extrinsic` maps world points into the camera frame
/// (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub name: String,
    #[serde(default = "default_side")]
    pub width: u32,
    #[serde(default = "default_side")]
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub extrinsic: Pose,
}

fn default_side() -> u32 {
    256
}

/// Result of projecting one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// Camera-frame z.
    pub depth: f64,
    /// Pixel coordinates; absent when the point is behind the camera.
    pub pixel: Option<(f64, f64)>,
    pub in_frame: bool,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("camera `{}`: {m}", self.name)));
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return bad("focal lengths must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return bad(format!("principal point ({}, {}) outside the image", self.cx, self.cy));
        }
        Ok(())
    }

    pub fn project(&self, p_world: &Vec3) -> Projection {
        let p = self.extrinsic.transform_point(p_world);
        if p.z <= MIN_DEPTH {
            return Projection {
                depth: p.z,
                pixel: None,
                in_frame: false,
            };
        }
        let u = self.fx * p.x / p.z + self.cx;
        let v = self.fy * p.y / p.z + self.cy;
        let in_frame = u >= 0.0 && u < self.width as f64 && v >= 0.0 && v < self.height as f64;
        Projection {
            depth: p.z,
            pixel: Some((u, v)),
            in_frame,
        }
    }

    /// World point seen at pixel `(u, v)` with camera-frame depth `depth`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Vec3 {
        let p = Vec3::new((u - self.cx) / self.fx * depth, (v - self.cy) / self.fy * depth, depth);
        self.extrinsic.inverse().transform_point(&p)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraFile {
    cameras: Vec<CameraModel>,
}

pub fn load_cameras(path: impl AsRef<Path>) -> Result<Vec<CameraModel>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CameraFile = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    for c in &file.cameras {
        c.validate()?;
    }
    Ok(file.cameras)
}

/// The two bundled diagonal cameras.
pub fn default_cameras() -> Result<Vec<CameraModel>> {
    load_cameras(crate::assets::cameras_path())
}

/// Hex SHA-256 of a value's JSON serialization.
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ---- atomic writes ----

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes through `f` into a temporary file and renames it over `path`.
/// The temporary file is removed on any failure.
fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<()> {
    let tmp = tmp_path(path);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        f(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

// ---- rollout export ----

/// Projection of the affordance point into one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceCue {
    pub camera: String,
    pub u: Option<f64>,
    pub v: Option<f64>,
    pub depth: f64,
    pub in_frame: bool,
}

/// Per-episode outcome, attached to the episode's last frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    pub outcome: Outcome,
    pub d_final: f64,
    pub d_min: f64,
    pub q_final: Vec<f64>,
    pub executed_style: usize,
    pub obj_bb: f64,
    pub reward: RewardTerms,
}

/// Target of a frame: absolute wrist pose and joints of the following frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTarget {
    /// `[tx, ty, tz, qw, qx, qy, qz]` in the world frame.
    pub ee: [f64; 7],
    pub q: Vec<f64>,
}

/// One JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLine {
    pub episode: usize,
    pub frame: usize,
    pub object: String,
    /// Conditioned style index.
    pub style: usize,
    pub p_afford: [f64; 3],
    pub c_afford: Vec<AffordanceCue>,
    /// Wrist pose `[tx, ty, tz, qw, qx, qy, qz]` in the world frame.
    pub s_r: [f64; 7],
    pub q: Vec<f64>,
    pub target: FrameTarget,
    pub episode_end: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<EpisodeResult>,
}

/// First line of an export file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub schema_version: u32,
    pub hand: String,
    pub dof: usize,
    pub styles: Vec<String>,
    pub cameras: Vec<String>,
    pub pose_layout: String,
    pub target_convention: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub schema_version: u32,
    pub data_file: String,
    pub episodes_seen: usize,
    pub episodes_exported: usize,
    pub successes: usize,
    pub frames: usize,
    pub success_only: bool,
    pub config_digest: String,
    pub cameras: Vec<CameraModel>,
}

/// Path of the manifest written next to an export file.
pub fn manifest_path(data: &Path) -> PathBuf {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data.with_file_name(format!("{stem}.manifest.json"))
}

fn frame_lines(scene: &Scene, id: usize, rec: &RolloutRecord, cameras: &[CameraModel]) -> Result<Vec<FrameLine>> {
    if rec.trajectory.is_empty() {
        return Err(Error::InvalidArgument(format!("episode {id} carries no trajectory to export")));
    }
    let p = rec.p_afford_world;
    let c_afford: Vec<AffordanceCue> = cameras
        .iter()
        .map(|c| {
            let pr = c.project(&p);
            AffordanceCue {
                camera: c.name.clone(),
                u: pr.pixel.map(|x| x.0),
                v: pr.pixel.map(|x| x.1),
                depth: pr.depth,
                in_frame: pr.in_frame,
            }
        })
        .collect();
    let n = rec.trajectory.len();
    Ok((0..n)
        .map(|t| {
            let f = &rec.trajectory[t];
            let next = &rec.trajectory[(t + 1).min(n - 1)];
            let end = t + 1 == n;
            FrameLine {
                episode: id,
                frame: t,
                object: scene.objects[rec.object].model.name.clone(),
                style: rec.style,
                p_afford: [p.x, p.y, p.z],
                c_afford: c_afford.clone(),
                s_r: f.ee_world.to_array7(),
                q: f.q.clone(),
                target: FrameTarget {
                    ee: next.ee_world.to_array7(),
                    q: next.q.clone(),
                },
                episode_end: end,
                result: end.then(|| EpisodeResult {
                    success: rec.success,
                    outcome: rec.outcome,
                    d_final: rec.d_final,
                    d_min: rec.d_min,
                    q_final: rec.q_final.clone(),
                    executed_style: rec.executed_style,
                    obj_bb: rec.obj_bb,
                    reward: rec.reward,
                }),
            }
        })
        .collect())
}

/// Writes `records` as JSONL (header line, then one line per frame) plus a
/// manifest next to it. Episode ids are indices into `records`.
pub fn export_rollouts(
    scene: &Scene,
    records: &[RolloutRecord],
    cameras: &[CameraModel],
    path: impl AsRef<Path>,
    success_only: bool,
    config_digest: &str,
) -> Result<ExportManifest> {
    let path = path.as_ref();
    let header = ExportHeader {
        schema_version: SCHEMA_VERSION,
        hand: scene.spec.name.clone(),
        dof: scene.spec.dof(),
        styles: scene.styles.iter().map(|s| s.id.clone()).collect(),
        cameras: cameras.iter().map(|c| c.name.clone()).collect(),
        pose_layout: "tx ty tz qw qx qy qz".into(),
        target_convention: "absolute wrist pose and joints of the next frame; the last frame targets itself".into(),
    };
    let mut lines = Vec::new();
    let mut manifest = ExportManifest {
        schema_version: SCHEMA_VERSION,
        data_file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        episodes_seen: records.len(),
        episodes_exported: 0,
        successes: 0,
        frames: 0,
        success_only,
        config_digest: config_digest.to_string(),
        cameras: cameras.to_vec(),
    };
    for (id, rec) in records.iter().enumerate() {
        if success_only && !rec.success {
            continue;
        }
        let l = frame_lines(scene, id, rec, cameras)?;
        manifest.episodes_exported += 1;
        manifest.successes += rec.success as usize;
        manifest.frames += l.len();
        lines.extend(l);
    }
    let ser = |e: serde_json::Error| std::io::Error::other(e);
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, &header).map_err(ser)?;
        w.write_all(b"\n")?;
        for l in &lines {
            serde_json::to_writer(&mut *w, l).map_err(ser)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    })?;
    let mpath = manifest_path(path);
    let written = write_atomic(&mpath, |w| serde_json::to_writer_pretty(w, &manifest).map_err(ser));
    if written.is_err() {
        let _ = fs::remove_file(path);
    }
    written?;
    Ok(manifest)
}

/// Parses an export file back into its header and frame lines.
pub fn read_export(path: impl AsRef<Path>) -> Result<(ExportHeader, Vec<FrameLine>)> {
    let path = path.as_ref();
    let ctx = |n: usize| format!("{} line {}", path.display(), n + 1);
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = None;
    let mut frames = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 {
            let h: ExportHeader = serde_json::from_str(&line).map_err(|e| Error::parse(ctx(n), e))?;
            if h.schema_version != SCHEMA_VERSION {
                return Err(Error::parse(ctx(n), format!("unsupported schema version {}", h.schema_version)));
            }
            header = Some(h);
        } else if !line.trim().is_empty() {
            frames.push(serde_json::from_str(&line).map_err(|e| Error::parse(ctx(n), e))?);
        }
    }
    let header = header.ok_or_else(|| Error::parse(path.display().to_string(), "missing header line"))?;
    Ok((header, frames))
}

// ---- checkpoints ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub hand: String,
    pub styles: usize,
    pub dof: usize,
    pub points: usize,
    pub seed: u64,
    pub iteration: usize,
    /// Seed of the farthest-point sampling that built the cloud inputs.
    pub fps_seed: u64,
}

impl CheckpointMeta {
    pub fn shape(&self) -> NetShape {
        NetShape {
            styles: self.styles,
            dof: self.dof,
            points: self.points,
        }
    }

    /// Rejects a checkpoint trained for a different hand, style set or cloud size.
    pub fn ensure_compatible(&self, hand: &str, styles: usize, dof: usize, points: usize) -> Result<()> {
        let mut diffs = Vec::new();
        if self.hand != hand {
            diffs.push(format!("hand `{}` (expected `{hand}`)", self.hand));
        }
        if self.dof != dof {
            diffs.push(format!("{} joints (expected {dof})", self.dof));
        }
        if self.styles != styles {
            diffs.push(format!("{} styles (expected {styles})", self.styles));
        }
        if self.points != points {
            diffs.push(format!("{} cloud points (expected {points})", self.points));
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!("checkpoint was trained for {}", diffs.join(", "))))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerInfo {
    name: String,
    n_in: usize,
    n_out: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    schema_version: u32,
    meta: CheckpointMeta,
    layers: Vec<LayerInfo>,
    params: Vec<f64>,
}

fn layer_infos(p: &PolicyParams) -> Vec<LayerInfo> {
    p.layers()
        .iter()
        .enumerate()
        .map(|(k, l)| LayerInfo {
            name: PolicyParams::layer_name(k).to_string(),
            n_in: l.n_in,
            n_out: l.n_out,
        })
        .collect()
}

pub fn save_checkpoint(params: &PolicyParams, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    if meta.shape() != params.shape {
        return Err(Error::Checkpoint(format!("metadata shape {:?} does not match parameters {:?}", meta.shape(), params.shape)));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    let file = CheckpointFile {
        schema_version: SCHEMA_VERSION,
        meta: meta.clone(),
        layers: layer_infos(params),
        params: params.data.clone(),
    };
    write_atomic(path.as_ref(), |w| serde_json::to_writer(w, &file).map_err(std::io::Error::other))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PolicyParams, CheckpointMeta)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::Checkpoint(format!(
            "schema version {} is not supported (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    let params = PolicyParams::from_flat(file.meta.shape(), file.params).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let expect = layer_infos(&params);
    let same = expect.len() == file.layers.len()
        && expect
            .iter()
            .zip(&file.layers)
            .all(|(a, b)| a.name == b.name && a.n_in == b.n_in && a.n_out == b.n_out);
    if !same {
        return Err(Error::Checkpoint("layer layout differs from this build's network".into()));
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    Ok((params, file.meta))
}
