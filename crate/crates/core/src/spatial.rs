//! Uniform voxel grid for exact nearest-point queries on small clouds.

use std::collections::HashMap;

use crate::geometry::Vec3;

/// Distances closer than this count as ties.
const TIE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub(crate) struct PointGrid {
    cell: f64,
    cells: HashMap<[i32; 3], Vec<u32>>,
    lo: [i32; 3],
    hi: [i32; 3],
}

impl PointGrid {
    pub fn new(points: &[Vec3], cell: f64) -> Self {
        let mut cells: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i as u32);
        }
        Self { cell, cells, lo, hi }
    }

    /// Exact nearest neighbour by expanding cubic shells around the query cell.
    pub fn nearest(&self, points: &[Vec3], x: &Vec3) -> (usize, f64) {
        let c = key(x, self.cell);
        let mut best = (0usize, f64::INFINITY);
        // shells beyond this radius cover the whole occupied box
        let max_ring = (0..3)
            .map(|a| (c[a] - self.lo[a]).abs().max((self.hi[a] - c[a]).abs()))
            .max()
            .unwrap_or(0);
        for ring in 0..=max_ring {
            // every point in shell `ring` is at least (ring - 1) * cell away
            if ring > 0 && best.1 + TIE < (ring - 1) as f64 * self.cell {
                break;
            }
            self.visit_shell(c, ring, |idx| {
                for &i in idx {
                    let d = (points[i as usize] - x).norm();
                    // near-equal distances go to the lowest index so that
                    // rigidly moved queries resolve ties the same way
                    if d < best.1 - TIE || (d <= best.1 + TIE && (i as usize) < best.0) {
                        best = (i as usize, d);
                    }
                }
            });
        }
        best
    }

    fn visit_shell(&self, c: [i32; 3], ring: i32, mut f: impl FnMut(&[u32])) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                let edge = dx.abs() == ring || dy.abs() == ring;
                let dzs: Box<dyn Iterator<Item = i32>> = if edge {
                    Box::new(-ring..=ring)
                } else {
                    Box::new([-ring, ring].into_iter())
                };
                for dz in dzs {
                    let k = [c[0] + dx, c[1] + dy, c[2] + dz];
                    if (0..3).any(|a| k[a] < self.lo[a] || k[a] > self.hi[a]) {
                        continue;
                    }
                    if let Some(v) = self.cells.get(&k) {
                        f(v);
                    }
                    if ring == 0 {
                        return;
                    }
                }
            }
        }
    }
}

fn key(p: &Vec3, cell: f64) -> [i32; 3] {
    [
        (p.x / cell).floor() as i32,
        (p.y / cell).floor() as i32,
        (p.z / cell).floor() as i32,
    ]
}
