//! Energies and derivative sup norms of a discrete solution.

use super::solve::elements;
use super::{DiscreteSolution, NeckGrid};
use crate::error::{Error, Result};
use crate::geometry::NeckProfile;

/// `int |grad w|^2` over the columns `xi in [lo, hi]`, using the bilinear
/// interpolant of each component and a 3x3 Gauss rule per element.
fn energy_between(sol: &DiscreteSolution, lo: f64, hi: f64) -> f64 {
    let g = &*sol.grid;
    let xi1: Vec<f64> = g.faces.iter().map(|c| c.xi).collect();
    let t2: Vec<f64> = (0..=g.n2).map(|b| g.t2(b)).collect();
    let mut total = 0.0;
    for (xi, t, vals) in [(&xi1[..], &g.t1[..], &sol.w1), (&g.xi2[..], &t2[..], &sol.w2)] {
        elements(g, xi, t, (lo, hi), 3, |nodes, pts| {
            for p in pts {
                let mut d = [0.0; 2];
                for (n, dp) in nodes.iter().zip(&p.dphi) {
                    d[0] += vals[*n] * dp[0];
                    d[1] += vals[*n] * dp[1];
                }
                let m = &p.metric;
                total += p.w * (m[0][0] * d[0] * d[0] + 2.0 * m[0][1] * d[0] * d[1] + m[1][1] * d[1] * d[1]);
            }
        });
    }
    total
}

/// `int |grad w|^2` over the whole grid.
pub fn global_energy(sol: &DiscreteSolution) -> f64 {
    energy_between(sol, -1.0, 1.0)
}

/// The window `|x1 - z1| < delta(z1)`.
pub fn local_window(profile: &NeckProfile, z1: f64) -> Result<(f64, f64)> {
    let d = profile.delta(z1)?;
    Ok((z1 - d, z1 + d))
}

/// `int |grad w|^2` over the part of the neck above `|x1 - z1| < delta(z1)`.
pub fn local_energy(sol: &DiscreteSolution, z1: f64) -> Result<f64> {
    let g = &*sol.grid;
    if !(z1.abs() <= g.profile.r) {
        return Err(Error::domain(format!("window centre {z1} outside |x1| <= {}", g.profile.r)));
    }
    let (lo, hi) = local_window(&g.profile, z1)?;
    if lo < -g.r || hi > g.r {
        return Err(Error::domain(format!(
            "window [{lo}, {hi}] outside grid [-{}, {}]",
            g.r, g.r
        )));
    }
    Ok(energy_between(sol, g.xi_of(lo), g.xi_of(hi)))
}

/// Weights of the three-point first derivative at the middle of
/// `s0 < s1 < s2`.
fn centered(s0: f64, s1: f64, s2: f64) -> [f64; 3] {
    let (h1, h2) = (s1 - s0, s2 - s1);
    [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))]
}

/// Gradient from differences of a field and of the node positions along
/// the two grid directions; exact for fields linear in `(x1, x2)`.
fn chain(du: [f64; 2], dx: [f64; 2], dy: [f64; 2]) -> [f64; 2] {
    // [dx0 dy0; dx1 dy1] (g1, g2) = du
    let det = dx[0] * dy[1] - dy[0] * dx[1];
    [(du[0] * dy[1] - dy[0] * du[1]) / det, (dx[0] * du[1] - du[0] * dx[1]) / det]
}

/// Velocity gradient `[[d1 w1, d2 w1], [d1 w2, d2 w2]]` at every cell
/// centre, `i`-major.
pub fn cell_gradients(sol: &DiscreteSolution) -> Vec<[[f64; 2]; 2]> {
    let g = &*sol.grid;
    let mut out = Vec::with_capacity(g.n1 * g.n2);
    for i in 0..g.n1 {
        let (fa, fb) = (&g.faces[i], &g.faces[i + 1]);
        let c = i + 1;
        let cols = [g.column2(c - 1), g.column2(c), g.column2(c + 1)];
        let wxi = centered(g.xi2[c - 1], g.xi2[c], g.xi2[c + 1]);
        for j in 0..g.n2 {
            // First component: faces i and i+1, rows k-1, k, k+1.
            let k = j + 1;
            let du_xi = sol.w1_at(i + 1, k) - sol.w1_at(i, k);
            let dx_xi = fb.x1 - fa.x1;
            let dy_xi = fb.x2(g.t1[k]) - fa.x2(g.t1[k]);
            let wt = centered(g.t1[k - 1], g.t1[k], g.t1[k + 1]);
            let (mut du_t, mut dy_t) = (0.0, 0.0);
            for (w, kk) in wt.iter().zip(k - 1..=k + 1) {
                du_t += w * 0.5 * (sol.w1_at(i, kk) + sol.w1_at(i + 1, kk));
                dy_t += w * 0.5 * (fa.x2(g.t1[kk]) + fb.x2(g.t1[kk]));
            }
            let g1 = chain([du_xi, du_t], [dx_xi, 0.0], [dy_xi, dy_t]);

            // Second component: faces j and j+1 on line c, lines c-1..c+1.
            let (ta, tb) = (g.t2(j), g.t2(j + 1));
            let du_t = sol.w2_at(c, j + 1) - sol.w2_at(c, j);
            let dy_t = cols[1].x2(tb) - cols[1].x2(ta);
            let (mut du_xi, mut dx_xi, mut dy_xi) = (0.0, 0.0, 0.0);
            for (w, (cc, col)) in wxi.iter().zip((c - 1..=c + 1).zip(cols)) {
                du_xi += w * 0.5 * (sol.w2_at(cc, j) + sol.w2_at(cc, j + 1));
                dx_xi += w * col.x1;
                dy_xi += w * 0.5 * (col.x2(ta) + col.x2(tb));
            }
            let g2 = chain([du_xi, du_t], [dx_xi, 0.0], [dy_xi, dy_t]);
            out.push([g1, g2]);
        }
    }
    out
}

fn check_region(g: &NeckGrid, (lo, hi): (f64, f64), margin: usize) -> Result<Vec<usize>> {
    let cols: Vec<usize> = (margin..g.n1.saturating_sub(margin))
        .filter(|&i| (lo..=hi).contains(&g.centers[i].x1))
        .collect();
    if cols.is_empty() {
        return Err(Error::domain(format!(
            "no interior cells with x1 in [{lo}, {hi}] (margin {margin} cells)"
        )));
    }
    Ok(cols)
}

/// Largest `|grad w|` (Frobenius) over cells with `x1` in `region`, at
/// least two cells away from the side lines.
pub fn sup_grad(sol: &DiscreteSolution, region: (f64, f64)) -> Result<f64> {
    let g = &*sol.grid;
    let cols = check_region(g, region, 2)?;
    let grads = cell_gradients(sol);
    Ok(cols
        .iter()
        .flat_map(|&i| (0..g.n2).map(move |j| i * g.n2 + j))
        .map(|c| {
            let m = grads[c];
            (m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]).sqrt()
        })
        .fold(0.0, f64::max))
}

/// Physical gradient of a cell-centred field by three-point differences
/// in the grid directions (one-sided at the edges).
fn grad_cells(g: &NeckGrid, f: &[f64]) -> [Vec<f64>; 2] {
    let (n1, n2) = (g.n1, g.n2);
    let diff = |n: usize, idx: usize| -> ([usize; 3], [f64; 3]) {
        if idx == 0 {
            ([0, 1, 2], [-1.5, 2.0, -0.5])
        } else if idx == n - 1 {
            ([n - 3, n - 2, n - 1], [0.5, -2.0, 1.5])
        } else {
            ([idx - 1, idx, idx + 1], [-0.5, 0.0, 0.5])
        }
    };
    let y = |i: usize, j: usize| g.centers[i].x2(g.t1[j + 1]);
    let mut d1 = vec![0.0; n1 * n2];
    let mut d2 = vec![0.0; n1 * n2];
    for i in 0..n1 {
        let (ii, wi) = diff(n1, i);
        for j in 0..n2 {
            let (jj, wj) = diff(n2, j);
            let (mut fx, mut xx, mut yx, mut ft, mut yt) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&a, &w) in ii.iter().zip(&wi) {
                fx += w * f[a * n2 + j];
                xx += w * g.centers[a].x1;
                yx += w * y(a, j);
            }
            for (&b, &w) in jj.iter().zip(&wj) {
                ft += w * f[i * n2 + b];
                yt += w * y(i, b);
            }
            let [a, b] = chain([fx, ft], [xx, 0.0], [yx, yt]);
            d1[i * n2 + j] = a;
            d2[i * n2 + j] = b;
        }
    }
    [d1, d2]
}

/// Largest `|grad^(order+1) w| + |grad^order q|` over cells with `x1` in
/// `region`, keeping `order + 2` cells away from the side lines.
/// Derivatives are full tensors (every index order counted).
pub fn sup_high_deriv(sol: &DiscreteSolution, order: usize, region: (f64, f64)) -> Result<f64> {
    let g = &*sol.grid;
    let support = 2 * (order + 2) + 1;
    if support > g.n1 || support > g.n2 {
        return Err(Error::input(format!(
            "derivative order {order} too high for a {}x{} grid",
            g.n1, g.n2
        )));
    }
    let cols = check_region(g, region, order + 2)?;
    let grads = cell_gradients(sol);
    let mut w: Vec<Vec<f64>> = (0..4).map(|k| grads.iter().map(|m| m[k / 2][k % 2]).collect()).collect();
    let mut q = vec![sol.q.clone()];
    for _ in 0..order {
        w = w.iter().flat_map(|f| grad_cells(g, f)).collect();
        q = q.iter().flat_map(|f| grad_cells(g, f)).collect();
    }
    let norm = |fs: &[Vec<f64>], c: usize| fs.iter().map(|f| f[c] * f[c]).sum::<f64>().sqrt();
    Ok(cols
        .iter()
        .flat_map(|&i| (0..g.n2).map(move |j| i * g.n2 + j))
        .map(|c| norm(&w, c) + norm(&q, c))
        .fold(0.0, f64::max))
}
