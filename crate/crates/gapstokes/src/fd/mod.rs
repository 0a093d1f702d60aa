//! Finite-difference Stokes solver on the neck.
//!
//! The neck `{|x1| < r, bottom(x1) < x2 < top(x1)}` is mapped onto the
//! rectangle `(xi, t) in [-1, 1] x [-1/2, 1/2]` by
//! `x1 = X(xi)`, `x2 = delta(x1) t + mid(x1)`, with `X` a sinh stretching
//! that clusters columns at the thinnest point. Velocities are stored in
//! Cartesian components on a staggered layout: `w1` on vertical cell faces,
//! `w2` on horizontal cell faces, `q` at cell centres. Each velocity
//! component also carries nodes on the boundary lines it touches, so the
//! walls `t = +-1/2` are matched exactly.
//!
//! The viscous term is the bilinear-element stiffness of each component on
//! its own node lattice, integrated with the mapped metric. The divergence
//! is the flux balance of every cell, exact for the discrete fluxes, and the
//! pressure gradient is its transpose, so the discrete system is a
//! symmetric saddle point problem solved by sparse LU with one pressure
//! cell pinned.

mod diagnostics;
mod manufactured;
mod solve;
mod studies;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::fields::{FieldEvaluator, VectorField2};
use crate::geometry::NeckProfile;

pub use diagnostics::{
    cell_gradients, global_energy, local_energy, local_window, sup_grad, sup_high_deriv,
};
pub use manufactured::Manufactured;
pub use solve::solve_w;
pub use studies::{
    manufactured_convergence, residual_response, ConvergenceStudy, ResidualResponse, ResponseSample,
};

/// Smallest accepted number of cells across the gap.
pub const MIN_N2: usize = 32;
/// Default cells along the neck and across the gap.
pub const DEFAULT_N1: usize = 256;
pub const DEFAULT_N2: usize = 64;
/// Target relative residual of the linear solve.
pub const SOLVE_TOL: f64 = 1e-10;

/// Column metrics of the map at one `xi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Column {
    pub xi: f64,
    pub x1: f64,
    /// `dx1 / dxi`.
    pub jac: f64,
    pub delta: f64,
    pub mid: f64,
    /// `d delta / dx1`.
    pub ddelta: f64,
    /// `d mid / dx1`.
    pub dmid: f64,
}

impl Column {
    pub fn x2(&self, t: f64) -> f64 {
        self.delta * t + self.mid
    }

    /// `-delta * dt/dx1` at height `t`.
    pub fn skew(&self, t: f64) -> f64 {
        self.dmid + t * self.ddelta
    }

    /// Area element `dx1 dx2 = jac * delta * dxi dt`.
    pub fn area(&self) -> f64 {
        self.jac * self.delta
    }
}

/// Body-fitted grid of the neck `|x1| <= r`.
#[derive(Clone, Debug)]
pub struct NeckGrid {
    pub profile: NeckProfile,
    pub r: f64,
    pub n1: usize,
    pub n2: usize,
    /// Sinh stretching length; `None` for uniform columns.
    pub stretch: Option<f64>,
    beta: f64,
    /// Metrics at the vertical cell faces, `xi = -1 + a dxi`.
    pub faces: Vec<Column>,
    /// Metrics at the cell centres.
    pub centers: Vec<Column>,
    /// Heights of the `w1` nodes: both walls and the cell rows.
    pub t1: Vec<f64>,
    /// Abscissae of the `w2` nodes: both sides and the cell centres.
    pub xi2: Vec<f64>,
}

impl NeckGrid {
    /// Grid over `|x1| <= r` with the default stretching length
    /// `2 sqrt(eps)` (uniform when that is not small against `r`).
    pub fn new(profile: &NeckProfile, r: f64, n1: usize, n2: usize) -> Result<Self> {
        let a = 2.0 * profile.eps.sqrt();
        Self::with_stretch(profile, r, n1, n2, (a < 0.5 * r).then_some(a))
    }

    pub fn with_stretch(
        profile: &NeckProfile,
        r: f64,
        n1: usize,
        n2: usize,
        stretch: Option<f64>,
    ) -> Result<Self> {
        if n2 < MIN_N2 {
            return Err(Error::input(format!("the gap needs at least {MIN_N2} cells, got {n2}")));
        }
        if n1 < 8 {
            return Err(Error::input(format!("need at least 8 cells along the neck, got {n1}")));
        }
        if !(r > 0.0 && r <= 2.0 * profile.r) {
            return Err(Error::input(format!(
                "grid half-width {r} must lie in (0, {}]",
                2.0 * profile.r
            )));
        }
        if let Some(a) = stretch {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::input(format!("stretching length must be positive, got {a}")));
            }
        }
        let beta = stretch.map_or(0.0, |a| (r / a).asinh());
        let mut g = NeckGrid {
            profile: profile.clone(),
            r,
            n1,
            n2,
            stretch,
            beta,
            faces: Vec::new(),
            centers: Vec::new(),
            t1: Vec::new(),
            xi2: Vec::new(),
        };
        let dxi = g.dxi();
        g.faces = (0..=n1).map(|a| g.column(-1.0 + a as f64 * dxi)).collect();
        g.centers = (0..n1).map(|i| g.column(-1.0 + (i as f64 + 0.5) * dxi)).collect();
        let dt = g.dt();
        g.t1 = std::iter::once(-0.5)
            .chain((0..n2).map(|j| -0.5 + (j as f64 + 0.5) * dt))
            .chain(std::iter::once(0.5))
            .collect();
        g.xi2 = std::iter::once(-1.0)
            .chain(g.centers.iter().map(|c| c.xi))
            .chain(std::iter::once(1.0))
            .collect();
        Ok(g)
    }

    pub fn dxi(&self) -> f64 {
        2.0 / self.n1 as f64
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n2 as f64
    }

    /// Height of the `b`-th horizontal face.
    pub fn t2(&self, b: usize) -> f64 {
        -0.5 + b as f64 * self.dt()
    }

    pub fn x_of(&self, xi: f64) -> f64 {
        match self.stretch {
            Some(a) => a * (self.beta * xi).sinh(),
            None => self.r * xi,
        }
    }

    pub fn xi_of(&self, x1: f64) -> f64 {
        match self.stretch {
            Some(a) => (x1 / a).asinh() / self.beta,
            None => x1 / self.r,
        }
    }

    fn jac_of(&self, xi: f64) -> f64 {
        match self.stretch {
            Some(a) => a * self.beta * (self.beta * xi).cosh(),
            None => self.r,
        }
    }

    /// Map metrics at an arbitrary `xi`.
    pub fn column(&self, xi: f64) -> Column {
        let x1 = self.x_of(xi);
        let p = &self.profile;
        let (h1, h2) = (p.h1.eval(x1), p.h2.eval(x1));
        let (d1, d2) = (p.h1.deriv(1, x1), p.h2.deriv(1, x1));
        Column {
            xi,
            x1,
            jac: self.jac_of(xi),
            delta: p.eps + h1 + h2,
            mid: 0.5 * (h1 - h2),
            ddelta: d1 + d2,
            dmid: 0.5 * (d1 - d2),
        }
    }

    /// Column of the `c`-th `w2` node line (sides included).
    pub fn column2(&self, c: usize) -> &Column {
        if c == 0 {
            &self.faces[0]
        } else if c == self.n1 + 1 {
            &self.faces[self.n1]
        } else {
            &self.centers[c - 1]
        }
    }

    /// Number of `w1` nodes per column and `w2` nodes per column.
    pub fn rows1(&self) -> usize {
        self.n2 + 2
    }

    pub fn rows2(&self) -> usize {
        self.n2 + 1
    }

    pub fn len1(&self) -> usize {
        (self.n1 + 1) * self.rows1()
    }

    pub fn len2(&self) -> usize {
        (self.n1 + 2) * self.rows2()
    }

    /// Physical position of `w1` node `(a, k)`.
    pub fn node1(&self, a: usize, k: usize) -> (f64, f64) {
        let c = &self.faces[a];
        (c.x1, c.x2(self.t1[k]))
    }

    /// Physical position of `w2` node `(c, b)`.
    pub fn node2(&self, c: usize, b: usize) -> (f64, f64) {
        let col = self.column2(c);
        (col.x1, col.x2(self.t2(b)))
    }

    /// Physical position of the centre of cell `(i, j)`.
    pub fn cell(&self, i: usize, j: usize) -> (f64, f64) {
        let c = &self.centers[i];
        (c.x1, c.x2(self.t1[j + 1]))
    }
}

/// Right-hand side of the momentum equation, sampled along vertical lines.
pub trait Forcing: Sync {
    /// Writes `f(x1, x2[j])` into `out[j]`.
    fn sample(&self, x1: f64, x2: &[f64], out: &mut [[f64; 2]]) -> Result<()>;
}

/// A forcing given by a closure of `(x1, x2)`.
pub struct FnForcing<F>(pub F);

impl<F: Fn(f64, f64) -> [f64; 2] + Sync> Forcing for FnForcing<F> {
    fn sample(&self, x1: f64, x2: &[f64], out: &mut [[f64; 2]]) -> Result<()> {
        for (o, &y) in out.iter_mut().zip(x2) {
            *o = (self.0)(x1, y);
        }
        Ok(())
    }
}

/// The zero forcing.
pub struct NoForcing;

impl Forcing for NoForcing {
    fn sample(&self, _x1: f64, _x2: &[f64], out: &mut [[f64; 2]]) -> Result<()> {
        out.fill([0.0; 2]);
        Ok(())
    }
}

/// A polynomial vector field (for instance a hierarchy residual) used as
/// forcing; coefficients are evaluated once per line.
pub struct FieldForcing {
    eval: FieldEvaluator,
}

impl FieldForcing {
    pub fn new(f: &VectorField2, tol: f64) -> Result<Self> {
        Ok(FieldForcing { eval: FieldEvaluator::new(&[&f.u1, &f.u2], tol)? })
    }
}

impl Forcing for FieldForcing {
    fn sample(&self, x1: f64, x2: &[f64], out: &mut [[f64; 2]]) -> Result<()> {
        let fv = self.eval.coeffs_at(x1)?;
        for (o, &y) in out.iter_mut().zip(x2) {
            *o = [fv.value(0, y), fv.value(1, y)];
        }
        Ok(())
    }
}

/// Velocity prescribed on the side lines `x1 = +-r`.
#[derive(Clone, Default)]
pub enum SideBc {
    #[default]
    Zero,
    /// Values of `(w1, w2)` at side points; must carry no net flux.
    Sampled(Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>),
}

impl fmt::Debug for SideBc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SideBc::Zero => f.write_str("Zero"),
            SideBc::Sampled(_) => f.write_str("Sampled(..)"),
        }
    }
}

/// Velocity and pressure on a [`NeckGrid`].
///
/// `w1[a * rows1 + k]` sits at face column `a`, height `t1[k]`;
/// `w2[c * rows2 + b]` at line `c` of `xi2`, height `t2(b)`;
/// `q[i * n2 + j]` at the centre of cell `(i, j)`.
#[derive(Clone, Debug)]
pub struct DiscreteSolution {
    pub grid: Arc<NeckGrid>,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub q: Vec<f64>,
    /// Relative residual of the saddle point system.
    pub residual: f64,
    /// Largest cell divergence (flux balance over cell area).
    pub max_divergence: f64,
    /// `int f . w`, with the same lumped quadrature as the load vector.
    pub forcing_work: f64,
}

impl DiscreteSolution {
    /// Samples a velocity field and a pressure on every node; used for
    /// diagnostics on known fields. Solver statistics are zero.
    pub fn from_fn(
        grid: Arc<NeckGrid>,
        w: impl Fn(f64, f64) -> [f64; 2],
        q: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let g = &*grid;
        let mut w1 = vec![0.0; g.len1()];
        for a in 0..=g.n1 {
            for k in 0..g.rows1() {
                let (x, y) = g.node1(a, k);
                w1[a * g.rows1() + k] = w(x, y)[0];
            }
        }
        let mut w2 = vec![0.0; g.len2()];
        for c in 0..g.n1 + 2 {
            for b in 0..g.rows2() {
                let (x, y) = g.node2(c, b);
                w2[c * g.rows2() + b] = w(x, y)[1];
            }
        }
        let mut qv = vec![0.0; g.n1 * g.n2];
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                let (x, y) = g.cell(i, j);
                qv[i * g.n2 + j] = q(x, y);
            }
        }
        let mut s = DiscreteSolution {
            grid,
            w1,
            w2,
            q: qv,
            residual: 0.0,
            max_divergence: 0.0,
            forcing_work: 0.0,
        };
        s.max_divergence = s.divergence().into_iter().fold(0.0, |m, d| m.max(d.abs()));
        s
    }

    pub fn w1_at(&self, a: usize, k: usize) -> f64 {
        self.w1[a * self.grid.rows1() + k]
    }

    pub fn w2_at(&self, c: usize, b: usize) -> f64 {
        self.w2[c * self.grid.rows2() + b]
    }

    /// Flux balance of every cell divided by its area, `i`-major.
    pub fn divergence(&self) -> Vec<f64> {
        let g = &*self.grid;
        let mut out = Vec::with_capacity(g.n1 * g.n2);
        let mut st = Vec::new();
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                solve::div_stencil(g, i, j, &mut st);
                let flux: f64 = st
                    .iter()
                    .map(|&(node, c)| {
                        c * match node {
                            solve::Node::W1(n) => self.w1[n],
                            solve::Node::W2(n) => self.w2[n],
                        }
                    })
                    .sum();
                out.push(flux / (g.centers[i].area() * g.dxi() * g.dt()));
            }
        }
        out
    }

    /// Largest velocity magnitude over all nodes.
    pub fn max_velocity(&self) -> f64 {
        self.w1.iter().chain(&self.w2).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Point cloud at the cell centres with columns `x1,x2,w1,w2,q`;
    /// velocities are averaged from the neighbouring faces.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let g = &*self.grid;
        let mut out = String::from("x1,x2,w1,w2,q\n");
        for i in 0..g.n1 {
            for j in 0..g.n2 {
                let (x, y) = g.cell(i, j);
                let u = 0.5 * (self.w1_at(i, j + 1) + self.w1_at(i + 1, j + 1));
                let v = 0.5 * (self.w2_at(i + 1, j) + self.w2_at(i + 1, j + 1));
                writeln!(out, "{x:?},{y:?},{u:?},{v:?},{:?}", self.q[i * g.n2 + j]).unwrap();
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let io = |e: std::io::Error| Error::Io { path: path.display().to_string(), detail: e.to_string() };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        std::fs::write(path, self.to_csv()).map_err(io)
    }
}

#[cfg(test)]
mod tests;
