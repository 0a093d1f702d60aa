//! Assembly and solution of the discrete saddle point system.

use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use super::{Column, DiscreteSolution, Forcing, NeckGrid, SideBc, SOLVE_TOL};
use crate::error::{Error, Result};
use crate::geometry::NeckProfile;

/// A velocity node referenced by a stencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Node {
    W1(usize),
    W2(usize),
}

/// Net outward flux of cell `(i, j)` in mapped units, as a linear
/// combination of velocity nodes.
///
/// The vertical faces carry `delta w1`; the horizontal faces carry
/// `jac (w2 - skew w1)` with `w1` averaged from the four nearest faces.
pub(super) fn div_stencil(g: &NeckGrid, i: usize, j: usize, out: &mut Vec<(Node, f64)>) {
    out.clear();
    let (dxi, dt) = (g.dxi(), g.dt());
    let r1 = g.rows1();
    let k = j + 1;
    out.push((Node::W1((i + 1) * r1 + k), dt * g.faces[i + 1].delta));
    out.push((Node::W1(i * r1 + k), -dt * g.faces[i].delta));
    let col = &g.centers[i];
    for (b, sign) in [(j + 1, 1.0), (j, -1.0)] {
        let c = sign * dxi * col.jac;
        out.push((Node::W2((i + 1) * g.rows2() + b), c));
        // w1 at the horizontal face: mean of the faces above and below,
        // or the wall value itself on the walls.
        let rows: &[usize] = if b == 0 {
            &[0]
        } else if b == g.n2 {
            &[g.n2 + 1]
        } else {
            &[b, b + 1]
        };
        let w = -c * col.skew(g.t2(b)) / (2 * rows.len()) as f64;
        for &kk in rows {
            out.push((Node::W1(i * r1 + kk), w));
            out.push((Node::W1((i + 1) * r1 + kk), w));
        }
    }
}

/// One quadrature point of a bilinear element.
pub(super) struct Gp {
    /// Weight times `dxi dt`.
    pub w: f64,
    pub phi: [f64; 4],
    /// `(d/dxi, d/dt)` of each shape function.
    pub dphi: [[f64; 2]; 4],
    /// Energy metric: `|grad u|^2 dx = g^T M g dxi dt` with `g = (u_xi, u_t)`.
    pub metric: [[f64; 2]; 2],
    pub area: f64,
}

fn gauss(n: usize) -> (&'static [f64], &'static [f64]) {
    const X2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
    const W2: [f64; 2] = [1.0, 1.0];
    const X3: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
    const W3: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    match n {
        2 => (&X2, &W2),
        _ => (&X3, &W3),
    }
}

pub(super) fn energy_metric(col: &Column, t: f64) -> ([[f64; 2]; 2], f64) {
    let s = col.skew(t);
    let m = [
        [col.delta / col.jac, -s],
        [-s, col.jac * (1.0 + s * s) / col.delta],
    ];
    (m, col.area())
}

/// Visits the bilinear elements of the node lattice `xi x t` (node index
/// `e * t.len() + k`) clipped to `xi in [lo, hi]`, passing the corner nodes
/// and the quadrature points of the clipped element.
pub(super) fn elements(
    g: &NeckGrid,
    xi: &[f64],
    t: &[f64],
    (lo, hi): (f64, f64),
    npts: usize,
    mut visit: impl FnMut([usize; 4], &[Gp]),
) {
    let (gx, gw) = gauss(npts);
    let rows = t.len();
    let mut pts = Vec::with_capacity(npts * npts);
    for e in 0..xi.len() - 1 {
        let (x0, x1) = (xi[e].max(lo), xi[e + 1].min(hi));
        if x1 <= x0 {
            continue;
        }
        let hx = xi[e + 1] - xi[e];
        let cols: Vec<(Column, f64)> = gx
            .iter()
            .zip(gw)
            .map(|(&u, &w)| {
                let c = g.column(0.5 * (x0 + x1) + 0.5 * (x1 - x0) * u);
                (c, 0.5 * (x1 - x0) * w)
            })
            .collect();
        for k in 0..rows - 1 {
            let ht = t[k + 1] - t[k];
            pts.clear();
            for (col, wx) in &cols {
                let p = (col.xi - xi[e]) / hx;
                for (&u, &w) in gx.iter().zip(gw) {
                    let tt = t[k] + 0.5 * ht * (1.0 + u);
                    let r = 0.5 * (1.0 + u);
                    let (metric, area) = energy_metric(col, tt);
                    pts.push(Gp {
                        w: wx * 0.5 * ht * w,
                        phi: [(1.0 - p) * (1.0 - r), p * (1.0 - r), (1.0 - p) * r, p * r],
                        dphi: [
                            [-(1.0 - r) / hx, -(1.0 - p) / ht],
                            [(1.0 - r) / hx, -p / ht],
                            [-r / hx, (1.0 - p) / ht],
                            [r / hx, p / ht],
                        ],
                        metric,
                        area,
                    });
                }
            }
            let corners = [e * rows + k, (e + 1) * rows + k, e * rows + k + 1, (e + 1) * rows + k + 1];
            visit(corners, &pts);
        }
    }
}

/// Degrees of freedom of one velocity component: node to unknown index.
struct Dofs {
    map: Vec<Option<usize>>,
}

impl Dofs {
    fn new(len: usize, rows: usize, cols: std::ops::Range<usize>, inner: std::ops::Range<usize>, start: usize) -> (Self, usize) {
        let mut map = vec![None; len];
        let mut n = start;
        for a in cols {
            for k in inner.clone() {
                map[a * rows + k] = Some(n);
                n += 1;
            }
        }
        (Dofs { map }, n)
    }
}

struct Assembly {
    trips: Vec<(usize, usize, f64)>,
    rhs: Vec<f64>,
}

impl Assembly {
    /// Adds `coef * x[node]` to equation `row`, moving known values to the
    /// right-hand side.
    fn add(&mut self, row: usize, col: Option<usize>, known: f64, coef: f64) {
        match col {
            Some(c) => self.trips.push((row, c, coef)),
            None => self.rhs[row] -= coef * known,
        }
    }
}

/// Solves `-mu Lap w + grad q = f`, `div w = 0` on the grid, with `w = 0` on
/// both walls and `side_bc` on `x1 = +-r`.
pub fn solve_w(
    profile: &NeckProfile,
    f: &dyn Forcing,
    side_bc: &SideBc,
    grid: &Arc<NeckGrid>,
) -> Result<DiscreteSolution> {
    let g = &**grid;
    if *profile != g.profile {
        return Err(Error::input("the grid was built for a different profile"));
    }
    let mu = profile.mu;
    let (r1, r2) = (g.rows1(), g.rows2());
    let (n1, n2) = (g.n1, g.n2);

    // Boundary values: walls are zero, sides from the side data.
    let mut w1 = vec![0.0; g.len1()];
    let mut w2 = vec![0.0; g.len2()];
    if let SideBc::Sampled(h) = side_bc {
        for a in [0, n1] {
            for k in 1..=n2 {
                let (x, y) = g.node1(a, k);
                w1[a * r1 + k] = h(x, y)[0];
            }
        }
        for c in [0, n1 + 1] {
            for b in 1..n2 {
                let (x, y) = g.node2(c, b);
                w2[c * r2 + b] = h(x, y)[1];
            }
        }
        let net: f64 = (1..=n2)
            .map(|k| g.faces[n1].delta * w1[n1 * r1 + k] - g.faces[0].delta * w1[k])
            .sum::<f64>()
            * g.dt();
        let scale: f64 = (1..=n2)
            .map(|k| g.faces[n1].delta * w1[n1 * r1 + k].abs() + g.faces[0].delta * w1[k].abs())
            .sum::<f64>()
            * g.dt();
        if !net.is_finite() || net.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::input(format!("side data carries a net flux of {net:e}")));
        }
    }

    let (d1, next) = Dofs::new(g.len1(), r1, 1..n1, 1..n2 + 1, 0);
    let (d2, nvel) = Dofs::new(g.len2(), r2, 1..n1 + 1, 1..n2, next);
    let ncell = n1 * n2;
    // Cell 0 is pinned: its pressure is zero and its (implied) balance
    // equation is dropped.
    let pdof = |cell: usize| (cell > 0).then(|| nvel + cell - 1);
    let n = nvel + ncell - 1;

    let mut asm = Assembly { trips: Vec::with_capacity(40 * n), rhs: vec![0.0; n] };

    // Forcing on the interior nodes.
    let mut load1 = vec![0.0; g.len1()];
    let mut load2 = vec![0.0; g.len2()];
    let mut buf = Vec::new();
    let mut ys = Vec::new();
    for a in 1..n1 {
        ys.clear();
        ys.extend((1..=n2).map(|k| g.node1(a, k).1));
        buf.resize(ys.len(), [0.0; 2]);
        f.sample(g.faces[a].x1, &ys, &mut buf)?;
        for (k, v) in (1..=n2).zip(&buf) {
            load1[a * r1 + k] = v[0];
        }
    }
    for c in 1..=n1 {
        ys.clear();
        ys.extend((1..n2).map(|b| g.node2(c, b).1));
        buf.resize(ys.len(), [0.0; 2]);
        f.sample(g.column2(c).x1, &ys, &mut buf)?;
        for (b, v) in (1..n2).zip(&buf) {
            load2[c * r2 + b] = v[1];
        }
    }
    if let Some(bad) = load1.iter().chain(&load2).position(|v| !v.is_finite()) {
        return Err(Error::input(format!("forcing is not finite at grid node {bad}")));
    }

    // Viscous blocks and lumped loads.
    let xi1: Vec<f64> = g.faces.iter().map(|c| c.xi).collect();
    let t2: Vec<f64> = (0..=n2).map(|b| g.t2(b)).collect();
    let mut mass1 = vec![0.0; g.len1()];
    let mut mass2 = vec![0.0; g.len2()];
    for (xi, t, dofs, vals, mass) in [
        (&xi1[..], &g.t1[..], &d1, &w1, &mut mass1),
        (&g.xi2[..], &t2[..], &d2, &w2, &mut mass2),
    ] {
        elements(g, xi, t, (-1.0, 1.0), 2, |nodes, pts| {
            let mut ke = [[0.0; 4]; 4];
            for p in pts {
                for (a, da) in p.dphi.iter().enumerate() {
                    let ma = [
                        p.metric[0][0] * da[0] + p.metric[0][1] * da[1],
                        p.metric[1][0] * da[0] + p.metric[1][1] * da[1],
                    ];
                    for (b, db) in p.dphi.iter().enumerate() {
                        ke[a][b] += p.w * (ma[0] * db[0] + ma[1] * db[1]);
                    }
                    mass[nodes[a]] += p.w * p.phi[a] * p.area;
                }
            }
            for a in 0..4 {
                let Some(row) = dofs.map[nodes[a]] else { continue };
                for b in 0..4 {
                    asm.add(row, dofs.map[nodes[b]], vals[nodes[b]], mu * ke[a][b]);
                }
            }
        });
    }
    let mut work_weights = Vec::with_capacity(nvel);
    for (dofs, load, mass) in [(&d1, &load1, &mass1), (&d2, &load2, &mass2)] {
        for (node, dof) in dofs.map.iter().enumerate() {
            if let Some(row) = dof {
                let fl = load[node] * mass[node];
                asm.rhs[*row] += fl;
                work_weights.push((*row, fl));
            }
        }
    }

    // Pressure gradient (-B^T) and balance equations (-B w = 0).
    let mut st = Vec::new();
    for i in 0..n1 {
        for j in 0..n2 {
            let cell = i * n2 + j;
            div_stencil(g, i, j, &mut st);
            for &(node, c) in &st {
                let (col, known) = match node {
                    Node::W1(k) => (d1.map[k], w1[k]),
                    Node::W2(k) => (d2.map[k], w2[k]),
                };
                if let Some(p) = pdof(cell) {
                    asm.add(p, col, known, -c);
                    if let Some(v) = col {
                        asm.trips.push((v, p, -c));
                    }
                }
            }
        }
    }

    let (mat, entries) = build_matrix(n, asm.trips)?;
    // Each factorization runs on the calling thread; sweeps parallelize
    // across solves instead.
    faer::set_global_parallelism(faer::Par::Seq);
    let lu = mat
        .sp_lu()
        .map_err(|e| Error::Solver(format!("sparse LU failed: {e:?}")))?;
    let rhs = Mat::<f64>::from_fn(n, 1, |i, _| asm.rhs[i]);
    let mut x: Vec<f64> = {
        let s = lu.solve(&rhs);
        (0..n).map(|i| s[(i, 0)]).collect()
    };
    let bnorm = asm.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut residual = relative_residual(&entries, &x, &asm.rhs, bnorm);
    // Iterative refinement; the balance rows have much smaller coefficients
    // than the momentum rows, so a few steps pay off even when the overall
    // residual is already small.
    for _ in 0..3 {
        if !residual.is_finite() {
            break;
        }
        let r = residual_vec(&entries, &x, &asm.rhs);
        let corr = lu.solve(&Mat::<f64>::from_fn(n, 1, |i, _| r[i]));
        let trial: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + corr[(i, 0)]).collect();
        let res = relative_residual(&entries, &trial, &asm.rhs, bnorm);
        if !(res < residual) {
            break;
        }
        x = trial;
        residual = res;
    }
    if !residual.is_finite() || residual > SOLVE_TOL {
        return Err(Error::Solver(format!(
            "saddle point system is singular or ill-conditioned (relative residual {residual:e})"
        )));
    }

    for (dofs, vals) in [(&d1, &mut w1), (&d2, &mut w2)] {
        for (node, dof) in dofs.map.iter().enumerate() {
            if let Some(k) = dof {
                vals[node] = x[*k];
            }
        }
    }
    let mut q: Vec<f64> = (0..ncell).map(|c| pdof(c).map_or(0.0, |k| x[k])).collect();
    let (mut total, mut area) = (0.0, 0.0);
    for i in 0..n1 {
        let a = g.centers[i].area();
        for j in 0..n2 {
            total += a * q[i * n2 + j];
            area += a;
        }
    }
    let mean = total / area;
    q.iter_mut().for_each(|v| *v -= mean);

    let forcing_work = work_weights.iter().map(|&(k, fl)| fl * x[k]).sum();
    let mut sol = DiscreteSolution {
        grid: grid.clone(),
        w1,
        w2,
        q,
        residual,
        max_divergence: 0.0,
        forcing_work,
    };
    sol.max_divergence = sol.divergence().into_iter().fold(0.0, |m, d| m.max(d.abs()));
    Ok(sol)
}

/// `(row, column, value)` matrix entries.
type Entries = Vec<(usize, usize, f64)>;

/// Merges duplicate entries (in a fixed order, so results are
/// reproducible) and builds the sparse matrix.
fn build_matrix(n: usize, mut trips: Entries) -> Result<(SparseColMat<usize, f64>, Entries)> {
    trips.sort_by_key(|t| (t.1, t.0));
    let mut merged: Entries = Vec::with_capacity(trips.len());
    for (r, c, v) in trips {
        match merged.last_mut() {
            Some(last) if last.0 == r && last.1 == c => last.2 += v,
            _ => merged.push((r, c, v)),
        }
    }
    let list: Vec<Triplet<usize, usize, f64>> =
        merged.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    let mat = SparseColMat::try_new_from_triplets(n, n, &list)
        .map_err(|e| Error::Solver(format!("matrix assembly failed: {e:?}")))?;
    Ok((mat, merged))
}

fn residual_vec(entries: &[(usize, usize, f64)], x: &[f64], b: &[f64]) -> Vec<f64> {
    let mut r = b.to_vec();
    for &(i, j, v) in entries {
        r[i] -= v * x[j];
    }
    r
}

fn relative_residual(entries: &[(usize, usize, f64)], x: &[f64], b: &[f64], bnorm: f64) -> f64 {
    let r = residual_vec(entries, x, b);
    let rn = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bnorm > 0.0 {
        rn / bnorm
    } else {
        // Homogeneous system: measure against the size of the operator.
        let scale = entries.iter().fold(0.0f64, |m, e| m.max(e.2.abs()));
        rn / scale.max(f64::MIN_POSITIVE)
    }
}
