//! Procedural toy objects with analytic normals, so tests and training runs
//! need no external datasets.
//!
//! Every generator centers the x/y bounding box on the origin; [`ObjectModel::new`]
//! then puts the lowest point on the table plane.

use std::f64::consts::PI;

use crate::error::Result;
use crate::geometry::Vec3;
use crate::object::ObjectModel;

/// Default surface sampling spacing for the bundled suite (m).
pub const SUITE_SPACING: f64 = 0.004;

type Cloud = (Vec<Vec3>, Vec<Vec3>);

/// The bundled five-object suite: box, cylinder, sphere, L-shape and mug.
pub fn suite() -> Result<Vec<ObjectModel>> {
    let s = SUITE_SPACING;
    Ok(vec![
        box_object("box", Vec3::new(0.06, 0.05, 0.10), s)?,
        cylinder_object("cylinder", 0.03, 0.11, s)?,
        sphere_object("sphere", 0.035, s)?,
        l_shape_object("l_shape", s)?,
        mug_object("mug", s)?,
    ])
}

pub fn fibonacci_sphere(n: usize, r: f64, center: Vec3) -> Cloud {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let rho = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            let nrm = Vec3::new(rho * th.cos(), rho * th.sin(), z);
            (center + nrm * r, nrm)
        })
        .unzip()
}

/// Axis-aligned box `[lo, hi]` surface samples at cell centers of each face.
fn box_surface(lo: Vec3, hi: Vec3, spacing: f64) -> Cloud {
    let mut pts = Vec::new();
    let mut nrm = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        let nu = ((hi[u] - lo[u]) / spacing).ceil().max(1.0) as usize;
        let nv = ((hi[v] - lo[v]) / spacing).ceil().max(1.0) as usize;
        for side in [-1.0, 1.0] {
            let mut n = Vec3::zeros();
            n[axis] = side;
            for i in 0..nu {
                for j in 0..nv {
                    let mut p = Vec3::zeros();
                    p[axis] = if side < 0.0 { lo[axis] } else { hi[axis] };
                    p[u] = lo[u] + (hi[u] - lo[u]) * (i as f64 + 0.5) / nu as f64;
                    p[v] = lo[v] + (hi[v] - lo[v]) * (j as f64 + 0.5) / nv as f64;
                    pts.push(p);
                    nrm.push(n);
                }
            }
        }
    }
    (pts, nrm)
}

fn cylinder_surface(r: f64, h: f64, spacing: f64) -> Cloud {
    let mut pts = Vec::new();
    let mut nrm = Vec::new();
    let nt = ((2.0 * PI * r) / spacing).ceil() as usize;
    let nz = (h / spacing).ceil() as usize;
    for i in 0..nt {
        let th = 2.0 * PI * (i as f64 + 0.5) / nt as f64;
        let n = Vec3::new(th.cos(), th.sin(), 0.0);
        for k in 0..nz {
            let z = h * (k as f64 + 0.5) / nz as f64;
            pts.push(Vec3::new(r * n.x, r * n.y, z));
            nrm.push(n);
        }
    }
    let rings = (r / spacing).ceil() as usize;
    for ring in 0..rings {
        let rho = r * (ring as f64 + 0.5) / rings as f64;
        let m = ((2.0 * PI * rho) / spacing).ceil().max(3.0) as usize;
        for i in 0..m {
            let th = 2.0 * PI * (i as f64 + 0.5 * (ring % 2) as f64) / m as f64;
            for (z, nz) in [(0.0, -1.0), (h, 1.0)] {
                pts.push(Vec3::new(rho * th.cos(), rho * th.sin(), z));
                nrm.push(Vec3::new(0.0, 0.0, nz));
            }
        }
    }
    (pts, nrm)
}

fn center_xy(cloud: Cloud) -> Cloud {
    let (mut pts, nrm) = cloud;
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    for p in &pts {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let shift = Vec3::new(0.5 * (lo.x + hi.x), 0.5 * (lo.y + hi.y), 0.0);
    for p in &mut pts {
        *p -= shift;
    }
    (pts, nrm)
}

fn build(name: &str, cloud: Cloud) -> Result<ObjectModel> {
    let (pts, nrm) = center_xy(cloud);
    ObjectModel::new(name, pts, Some(nrm))
}

pub fn box_object(name: &str, dims: Vec3, spacing: f64) -> Result<ObjectModel> {
    let lo = Vec3::new(-0.5 * dims.x, -0.5 * dims.y, 0.0);
    let hi = Vec3::new(0.5 * dims.x, 0.5 * dims.y, dims.z);
    build(name, box_surface(lo, hi, spacing))
}

pub fn cylinder_object(name: &str, r: f64, h: f64, spacing: f64) -> Result<ObjectModel> {
    build(name, cylinder_surface(r, h, spacing))
}

pub fn sphere_object(name: &str, r: f64, spacing: f64) -> Result<ObjectModel> {
    let n = (4.0 * PI * r * r / (spacing * spacing)).ceil() as usize;
    build(name, fibonacci_sphere(n, r, Vec3::new(0.0, 0.0, r)))
}

fn inside(p: &Vec3, lo: &Vec3, hi: &Vec3) -> bool {
    (0..3).all(|a| p[a] > lo[a] && p[a] < hi[a])
}

/// A low slab with an upright post standing on one end.
pub fn l_shape_object(name: &str, spacing: f64) -> Result<ObjectModel> {
    let (a_lo, a_hi) = (Vec3::new(-0.05, -0.025, 0.0), Vec3::new(0.05, 0.025, 0.03));
    let (b_lo, b_hi) = (Vec3::new(0.02, -0.025, 0.03), Vec3::new(0.05, 0.025, 0.09));
    let eps = 1e-6;
    let mut pts = Vec::new();
    let mut nrm = Vec::new();
    for ((lo, hi), (olo, ohi)) in [((a_lo, a_hi), (b_lo, b_hi)), ((b_lo, b_hi), (a_lo, a_hi))] {
        let (p, n) = box_surface(lo, hi, spacing);
        // drop faces buried in the other box
        for (p, n) in p.into_iter().zip(n) {
            if !inside(&(p + n * eps), &olo, &ohi) && !inside(&(p - n * eps), &olo, &ohi) {
                pts.push(p);
                nrm.push(n);
            }
        }
    }
    build(name, (pts, nrm))
}

/// Cylindrical body with a half-torus handle on the +x side.
pub fn mug_object(name: &str, spacing: f64) -> Result<ObjectModel> {
    let (r, h) = (0.035, 0.09);
    let (major, tube) = (0.025, 0.006);
    let hc = Vec3::new(r, 0.0, 0.5 * h);
    let tube_dist = |p: &Vec3| {
        // distance from p to the handle's core circle in the x-z plane
        let d = p - hc;
        let radial = Vec3::new(d.x, 0.0, d.z);
        let core = if radial.norm() > 1e-12 { radial.normalize() * major } else { Vec3::x() * major };
        (d - core).norm()
    };
    let (bp, bn) = cylinder_surface(r, h, spacing);
    let mut pts = Vec::new();
    let mut nrm = Vec::new();
    for (p, n) in bp.into_iter().zip(bn) {
        if tube_dist(&p) > tube {
            pts.push(p);
            nrm.push(n);
        }
    }
    let n_major = ((PI * (major + tube)) / spacing).ceil() as usize * 2;
    let n_tube = ((2.0 * PI * tube) / spacing).ceil().max(6.0) as usize;
    for i in 0..n_major {
        let phi = -PI / 2.0 + 2.0 * PI * (i as f64 + 0.5) / n_major as f64;
        let axis = Vec3::new(phi.cos(), 0.0, phi.sin());
        let core = hc + axis * major;
        for j in 0..n_tube {
            let psi = 2.0 * PI * (j as f64 + 0.5) / n_tube as f64;
            let n = axis * psi.cos() + Vec3::y() * psi.sin();
            let p = core + n * tube;
            if p.x * p.x + p.y * p.y > r * r {
                pts.push(p);
                nrm.push(n);
            }
        }
    }
    build(name, (pts, nrm))
}
