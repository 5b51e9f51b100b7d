//! Nonnegative-combination feasibility: does `G α = w` have a solution with
//! `α ≥ 0`? Solved with a dense phase-one simplex under Bland's rule, which
//! cannot cycle. Sized for grasp wrench problems (6 rows, a few dozen columns).

const PIVOT_EPS: f64 = 1e-12;
const MAX_PIVOTS: usize = 10_000;

/// Returns a nonnegative `α` with `Σ α_j columns[j] = target` (within `tol`
/// per row, relative to the target's scale), or `None` when infeasible.
pub fn nonneg_combination(columns: &[Vec<f64>], target: &[f64], tol: f64) -> Option<Vec<f64>> {
    let m = target.len();
    let n = columns.len();
    debug_assert!(columns.iter().all(|c| c.len() == m));
    let width = n + m + 1;
    // rows are flipped so the right-hand side is nonnegative
    let mut tab = vec![0.0; m * width];
    for i in 0..m {
        let sign = if target[i] < 0.0 { -1.0 } else { 1.0 };
        let row = &mut tab[i * width..(i + 1) * width];
        for (j, c) in columns.iter().enumerate() {
            row[j] = sign * c[i];
        }
        row[n + i] = 1.0;
        row[width - 1] = sign * target[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let is_artificial = |j: usize| j >= n;

    for _ in 0..MAX_PIVOTS {
        // reduced cost of column j: -(sum of its entries over rows with an artificial basis)
        let mut entering = None;
        for j in 0..n + m {
            if basis.contains(&j) {
                continue;
            }
            let mut rc = if is_artificial(j) { 1.0 } else { 0.0 };
            for (i, &b) in basis.iter().enumerate() {
                if is_artificial(b) {
                    rc -= tab[i * width + j];
                }
            }
            if rc < -1e-11 {
                entering = Some(j);
                break;
            }
        }
        let Some(e) = entering else { break };
        let mut leave: Option<(usize, f64)> = None;
        for i in 0..m {
            let a = tab[i * width + e];
            if a > PIVOT_EPS {
                let ratio = tab[i * width + width - 1] / a;
                let better = match leave {
                    None => true,
                    Some((li, lr)) => ratio < lr - 1e-15 || (ratio <= lr + 1e-15 && basis[i] < basis[li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        // phase one is bounded below by zero, so an entering column always has a pivot row
        let (r, _) = leave?;
        pivot(&mut tab, width, m, r, e);
        basis[r] = e;
    }

    let scale = 1.0 + target.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut alpha = vec![0.0; n];
    for (i, &b) in basis.iter().enumerate() {
        let v = tab[i * width + width - 1];
        if is_artificial(b) {
            if v > tol * scale {
                return None;
            }
        } else {
            alpha[b] = v.max(0.0);
        }
    }
    // guard against accumulated round-off
    for i in 0..m {
        let got: f64 = columns.iter().zip(&alpha).map(|(c, a)| c[i] * a).sum();
        if (got - target[i]).abs() > 1e3 * tol * scale {
            return None;
        }
    }
    Some(alpha)
}

fn pivot(tab: &mut [f64], width: usize, m: usize, r: usize, e: usize) {
    let p = tab[r * width + e];
    for k in 0..width {
        tab[r * width + k] /= p;
    }
    for i in 0..m {
        if i == r {
            continue;
        }
        let f = tab[i * width + e];
        if f != 0.0 {
            for k in 0..width {
                tab[i * width + k] -= f * tab[r * width + k];
            }
        }
    }
}
