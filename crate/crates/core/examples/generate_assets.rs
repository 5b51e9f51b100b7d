//! Regenerates the bundled assets: hand models, style files, demonstrations,
//! toy object clouds and camera definitions.
//!
//! cargo run -p fungrasp-core --example generate_assets

use std::f64::consts::FRAC_1_SQRT_2;
use std::fs;
use std::path::Path;

use fungrasp_core::geometry::{Pose, Vec3};
use fungrasp_core::{assets, toy};
use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde_json::{json, Value};

/// Finger chains hang along the wrist's -z axis.
const DOWN: [f64; 4] = [FRAC_1_SQRT_2, 0.0, FRAC_1_SQRT_2, 0.0];
/// Curl toward -y (fingers on the +y side).
const CURL_NEG_Y: [f64; 3] = [0.0, 0.0, -1.0];
/// Curl toward +y (thumb on the -y side).
const CURL_POS_Y: [f64; 3] = [0.0, 0.0, 1.0];
const TWIST: [f64; 3] = [1.0, 0.0, 0.0];
const SPREAD: [f64; 3] = [0.0, 1.0, 0.0];

const FLEX: [f64; 2] = [-0.3, 1.6];

// Demonstration timing and wrist path (object frame).
const FRAMES: usize = 41;
const T_L: usize = 30;
const DESCENT_END: usize = 20;
const Z_START: f64 = 0.205;
const Z_GRASP: f64 = 0.105;
const LIFT: f64 = 0.10;
const SQUEEZE: f64 = 0.02;

// Inspire-like closure: [twist, thumb.1, thumb.2, index, middle, ring].
const INSPIRE_OPEN: [f64; 6] = [0.0, -0.1, -0.1, -0.1, -0.1, -0.1];
const INSPIRE_GRASP: [f64; 6] = [0.0, 0.30, 0.30, 0.24, 0.24, 0.24];

fn seg(length: f64, axis: [f64; 3], limits: Option<[f64; 2]>, radius: f64) -> Value {
    let mut v = json!({"length": length, "axis": axis, "radius": radius});
    if let Some(l) = limits {
        v["limits"] = json!(l);
    }
    v
}

fn finger(name: &str, x: f64, y: f64, segments: Vec<Value>, tip: f64) -> Value {
    json!({
        "name": name,
        "base": {"t": [x, y, 0.0], "r": DOWN},
        "segments": segments,
        "tip_radius": tip,
    })
}

fn palm() -> Value {
    let mut v = Vec::new();
    for (x, y) in [(0.0, 0.0), (0.025, 0.025), (0.025, -0.025), (-0.025, 0.025), (-0.025, -0.025)] {
        v.push(json!({"center": [x, y, 0.015], "radius": 0.015}));
    }
    json!(v)
}

fn inspire_hand() -> Value {
    let r = 0.009;
    let tip = 0.0085;
    let y = 0.06;
    let two = |axis| vec![seg(0.045, axis, Some(FLEX), r), seg(0.035, axis, None, tip)];
    json!({
        "name": "inspire_like",
        "fingers": [
            finger("thumb", 0.0, -y, vec![
                seg(0.012, TWIST, Some([-0.8, 0.8]), r),
                seg(0.04, CURL_POS_Y, Some(FLEX), r),
                seg(0.03, CURL_POS_Y, Some(FLEX), tip),
            ], tip),
            finger("index", 0.025, y, two(CURL_NEG_Y), tip),
            finger("middle", 0.0, y, two(CURL_NEG_Y), tip),
            finger("ring", -0.025, y, two(CURL_NEG_Y), tip),
        ],
        "palm": palm(),
        "coupling": [
            {"finger": 1, "segment": 1, "source": 3},
            {"finger": 2, "segment": 1, "source": 4},
            {"finger": 3, "segment": 1, "source": 5},
        ],
    })
}

fn inspire_styles() -> Value {
    let g = INSPIRE_GRASP;
    let open = -0.15;
    json!({
        "hand": "inspire_like",
        "styles": [
            {"id": "power", "q": g, "contact_mask": [0, 1, 2, 3]},
            {"id": "tripod", "q": [g[0], g[1], g[2], g[3], g[4], open], "contact_mask": [0, 1, 2]},
            {"id": "pinch", "q": [g[0], g[1], g[2], g[3], open, open], "contact_mask": [0, 1]},
            {"id": "side", "q": [-0.35, g[1], g[2], open, g[4], g[5]], "contact_mask": [0, 2, 3]},
        ],
    })
}

// Shadow-like: thumb 5, index 4, middle 4, ring 4, little 5 joints.
fn shadow_hand() -> Value {
    let r = 0.009;
    let tip = 0.008;
    let y = 0.055;
    let spread = Some([-0.35, 0.35]);
    let digit = |prefix: Vec<Value>| {
        let mut v = prefix;
        v.push(seg(0.045, CURL_NEG_Y, Some(FLEX), r));
        v.push(seg(0.025, CURL_NEG_Y, Some(FLEX), r));
        v.push(seg(0.02, CURL_NEG_Y, Some(FLEX), tip));
        v
    };
    json!({
        "name": "shadow_like",
        "fingers": [
            finger("thumb", 0.0, -y, vec![
                seg(0.01, TWIST, Some([-0.9, 0.9]), r),
                seg(0.01, SPREAD, Some([-0.5, 0.5]), r),
                seg(0.035, CURL_POS_Y, Some(FLEX), r),
                seg(0.03, CURL_POS_Y, Some(FLEX), r),
                seg(0.025, CURL_POS_Y, Some(FLEX), tip),
            ], tip),
            finger("index", 0.033, y, digit(vec![seg(0.005, SPREAD, spread, r)]), tip),
            finger("middle", 0.011, y, digit(vec![seg(0.005, SPREAD, spread, r)]), tip),
            finger("ring", -0.011, y, digit(vec![seg(0.005, SPREAD, spread, r)]), tip),
            finger("little", -0.033, y, digit(vec![
                seg(0.005, TWIST, Some([0.0, 0.7]), r),
                seg(0.005, SPREAD, spread, r),
            ]), tip),
        ],
        "palm": palm(),
    })
}

/// Joint layout of the shadow-like hand.
struct ShadowQ([f64; 22]);

impl ShadowQ {
    fn new(thumb: [f64; 5], digits: [[f64; 4]; 3], little: [f64; 5]) -> Self {
        let mut q = [0.0; 22];
        q[..5].copy_from_slice(&thumb);
        for (i, d) in digits.iter().enumerate() {
            q[5 + 4 * i..9 + 4 * i].copy_from_slice(d);
        }
        q[17..].copy_from_slice(&little);
        ShadowQ(q)
    }
}

fn shadow_open() -> ShadowQ {
    let d = [0.0, -0.1, -0.1, -0.1];
    ShadowQ::new([0.0, 0.0, -0.1, -0.1, -0.1], [d; 3], [0.0, 0.0, -0.1, -0.1, -0.1])
}

fn shadow_grasp() -> ShadowQ {
    let d = [0.0, 0.2, 0.25, 0.2];
    ShadowQ::new([0.0, 0.0, 0.3, 0.25, 0.2], [d; 3], [0.1, 0.0, 0.2, 0.25, 0.2])
}

fn shadow_styles() -> Value {
    let c = [0.0, 0.2, 0.25, 0.2];
    let o = [0.0, -0.15, -0.1, -0.1];
    let th = [0.0, 0.0, 0.3, 0.25, 0.2];
    let lc = [0.1, 0.0, 0.2, 0.25, 0.2];
    let lo = [0.0, 0.0, -0.15, -0.1, -0.1];
    let styles = [
        ("power", ShadowQ::new(th, [c, c, c], lc), vec![0, 1, 2, 3, 4]),
        ("tripod", ShadowQ::new(th, [c, c, o], lo), vec![0, 1, 2]),
        ("pinch", ShadowQ::new(th, [c, o, o], lo), vec![0, 1]),
        ("middle_pinch", ShadowQ::new(th, [o, c, o], lo), vec![0, 2]),
        ("four_finger", ShadowQ::new(th, [c, c, c], lo), vec![0, 1, 2, 3]),
        ("spread", ShadowQ::new(th, [[-0.3, 0.2, 0.25, 0.2], c, [0.3, 0.2, 0.25, 0.2]], lc), vec![0, 1, 3, 4]),
        ("hook", ShadowQ::new([0.0, 0.0, -0.15, -0.1, -0.1], [[0.0, 0.6, 0.8, 0.6]; 3], [0.1, 0.0, 0.6, 0.8, 0.6]), vec![1, 2, 3, 4]),
        ("lateral", ShadowQ::new([0.6, 0.3, 0.3, 0.25, 0.2], [[0.0, 0.8, 0.9, 0.6], o, o], lo), vec![0, 1]),
        ("ring_pinch", ShadowQ::new([-0.5, -0.3, 0.3, 0.25, 0.2], [o, o, c], lo), vec![0, 3]),
    ];
    json!({
        "hand": "shadow_like",
        "styles": styles
            .iter()
            .map(|(id, q, mask)| json!({"id": id, "q": q.0.to_vec(), "contact_mask": mask}))
            .collect::<Vec<_>>(),
    })
}

fn smooth(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Top-down approach, closure, then lift with a slight extra squeeze.
fn demo(hand: &str, open: &[f64], grasp: &[f64], static_joints: &[usize]) -> Value {
    let frames: Vec<Value> = (0..FRAMES)
        .map(|t| {
            let z = if t <= DESCENT_END {
                Z_START + (Z_GRASP - Z_START) * smooth(t as f64 / DESCENT_END as f64)
            } else if t <= T_L {
                Z_GRASP
            } else {
                Z_GRASP + LIFT * smooth((t - T_L) as f64 / (FRAMES - 1 - T_L) as f64)
            };
            let q: Vec<f64> = (0..open.len())
                .map(|j| {
                    if static_joints.contains(&j) {
                        return open[j];
                    }
                    if t <= DESCENT_END {
                        open[j]
                    } else if t <= T_L {
                        let s = smooth((t - DESCENT_END) as f64 / (T_L - DESCENT_END) as f64);
                        open[j] + s * (grasp[j] - open[j])
                    } else {
                        let s = (t - T_L) as f64 / (FRAMES - 1 - T_L) as f64;
                        grasp[j] + s * SQUEEZE
                    }
                })
                .collect();
            json!({"p": {"t": [0.0, 0.0, z], "r": [1.0, 0.0, 0.0, 0.0]}, "q": q})
        })
        .collect();
    json!({"hand": hand, "T_l": T_L, "frames": frames})
}

/// Pinhole camera at `eye` looking at `target` (x right, y down, z forward).
fn camera(name: &str, eye: Vec3, target: Vec3) -> Value {
    let z = (target - eye).normalize();
    let x = z.cross(&Vec3::z()).normalize();
    let y = z.cross(&x);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z]));
    let cam_to_world = Pose { t: eye, r: UnitQuaternion::from_rotation_matrix(&rot) };
    let extrinsic = cam_to_world.inverse();
    json!({
        "name": name,
        "width": 256,
        "height": 256,
        "fx": 220.0,
        "fy": 220.0,
        "cx": 128.0,
        "cy": 128.0,
        "extrinsic": extrinsic,
    })
}

fn write(path: &Path, v: &Value) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, serde_json::to_string_pretty(v).unwrap() + "\n").unwrap();
    println!("wrote {}", path.display());
}

fn main() {
    write(&assets::hand_path("inspire_like"), &inspire_hand());
    write(&assets::styles_path("inspire_like"), &inspire_styles());
    write(&assets::demo_path("inspire_like"), &demo("inspire_like", &INSPIRE_OPEN, &INSPIRE_GRASP, &[0]));

    write(&assets::hand_path("shadow_like"), &shadow_hand());
    write(&assets::styles_path("shadow_like"), &shadow_styles());
    let (open, grasp) = (shadow_open().0, shadow_grasp().0);
    let statics: Vec<usize> = (0..22).filter(|&j| open[j] == grasp[j]).collect();
    write(&assets::demo_path("shadow_like"), &demo("shadow_like", &open, &grasp, &statics));

    let dir = assets::objects_dir();
    fs::create_dir_all(&dir).unwrap();
    for obj in toy::suite().unwrap() {
        let p = dir.join(format!("{}.ply", obj.name));
        obj.save(&p).unwrap();
        println!("wrote {} ({} points)", p.display(), obj.len());
    }

    let cams = json!({
        "cameras": [
            camera("left", Vec3::new(0.45, 0.45, 0.55), Vec3::new(0.0, 0.0, 0.05)),
            camera("right", Vec3::new(0.45, -0.45, 0.55), Vec3::new(0.0, 0.0, 0.05)),
        ]
    });
    write(&assets::cameras_path(), &cams);
}
