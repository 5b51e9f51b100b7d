//! ASCII PLY point clouds (`x y z [nx ny nz]` vertex properties; faces ignored).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

pub struct PlyCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
}

pub fn read_ply(path: &Path) -> Result<PlyCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text).map_err(|msg| Error::parse(path.display().to_string(), msg))
}

pub fn parse_ply(text: &str) -> std::result::Result<PlyCloud, String> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err("line 1: missing `ply` magic".into()),
    }
    let mut vertex_count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let (no, line) = lines.next().ok_or("unexpected end of header")?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(format!("line {}: only ascii PLY is supported", no + 1))
            }
            ["element", "vertex", n] => {
                vertex_count = Some(
                    n.parse::<usize>()
                        .map_err(|e| format!("line {}: vertex count: {e}", no + 1))?,
                );
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] => {}
            ["property", _ty, name] if in_vertex => props.push(name.to_string()),
            ["end_header"] => break,
            _ => {}
        }
    }
    let n = vertex_count.ok_or("no vertex element")?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (x, y, z) = match (col("x"), col("y"), col("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertex element lacks x/y/z".into()),
    };
    let normal_cols = match (col("nx"), col("ny"), col("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let mut points = Vec::with_capacity(n);
    let mut normals = normal_cols.map(|_| Vec::with_capacity(n));
    for _ in 0..n {
        let (no, line) = lines.next().ok_or("fewer vertices than declared")?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", no + 1))?;
        if vals.len() < props.len() {
            return Err(format!("line {}: expected {} values", no + 1, props.len()));
        }
        points.push(Vec3::new(vals[x], vals[y], vals[z]));
        if let (Some(out), Some((a, b, c))) = (normals.as_mut(), normal_cols) {
            out.push(Vec3::new(vals[a], vals[b], vals[c]));
        }
    }
    Ok(PlyCloud { points, normals })
}

pub fn write_ply(path: &Path, points: &[Vec3], normals: Option<&[Vec3]>) -> Result<()> {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", points.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if normals.is_some() {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    s.push_str("end_header\n");
    for (i, p) in points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = normals {
            let _ = write!(s, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
