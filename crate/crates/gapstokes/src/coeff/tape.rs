//! Linearized evaluation of coefficient DAGs.

use std::collections::HashMap;
use std::sync::Arc;

use super::{Antideriv, Coeff, CumTable, Kind, MIN_TOL};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    X1,
    Profile(u32),
    Sum(u32, u32),
    Prod(u32, u32),
    Quot(u32, u32),
    Pow(u32, i32),
    Anti(u32),
}

#[derive(Debug)]
struct Inner {
    ops: Vec<Op>,
    args: Vec<u32>,
    roots: Vec<u32>,
    /// Derivative polynomials of wall profiles, increasing powers.
    polys: Vec<Vec<f64>>,
    antis: Vec<Arc<Antideriv>>,
    cap_violation: Option<(u32, u32)>,
}

/// A compiled, deduplicated instruction list for a set of root coefficients.
#[derive(Clone, Debug)]
pub struct Tape(Arc<Inner>);

impl Tape {
    pub fn compile(roots: &[Coeff]) -> Tape {
        let mut slot: HashMap<usize, u32> = HashMap::new();
        let mut inner = Inner {
            ops: Vec::new(),
            args: Vec::new(),
            roots: Vec::with_capacity(roots.len()),
            polys: Vec::new(),
            antis: Vec::new(),
            cap_violation: None,
        };
        for root in roots {
            // Iterative post-order traversal.
            let mut stack: Vec<(Coeff, bool)> = vec![(root.clone(), false)];
            while let Some((c, expanded)) = stack.pop() {
                let key = c.ptr_key();
                if slot.contains_key(&key) {
                    continue;
                }
                if !expanded {
                    stack.push((c.clone(), true));
                    for ch in c.children() {
                        if !slot.contains_key(&ch.ptr_key()) {
                            stack.push((ch, false));
                        }
                    }
                    continue;
                }
                let op = match c.kind() {
                    Kind::Const(v) => Op::Const(*v),
                    Kind::X1 => Op::X1,
                    Kind::Profile(w, k) => {
                        if *k > w.cap && inner.cap_violation.is_none() {
                            inner.cap_violation = Some((*k, w.cap));
                        }
                        let d = derivative_poly(w.poly.coeffs(), *k);
                        inner.polys.push(d);
                        Op::Profile(inner.polys.len() as u32 - 1)
                    }
                    Kind::Sum(ts) | Kind::Prod(ts) => {
                        let start = inner.args.len() as u32;
                        inner.args.extend(ts.iter().map(|t| slot[&t.ptr_key()]));
                        if matches!(c.kind(), Kind::Sum(_)) {
                            Op::Sum(start, ts.len() as u32)
                        } else {
                            Op::Prod(start, ts.len() as u32)
                        }
                    }
                    Kind::Quotient(n, d) => Op::Quot(slot[&n.ptr_key()], slot[&d.ptr_key()]),
                    Kind::IntPow(b, n) => Op::Pow(slot[&b.ptr_key()], *n),
                    Kind::Antideriv(a) => {
                        inner.antis.push(a.clone());
                        Op::Anti(inner.antis.len() as u32 - 1)
                    }
                };
                inner.ops.push(op);
                slot.insert(key, inner.ops.len() as u32 - 1);
            }
            inner.roots.push(slot[&root.ptr_key()]);
        }
        Tape(Arc::new(inner))
    }

    pub fn len(&self) -> usize {
        self.0.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.ops.is_empty()
    }

    pub fn root_count(&self) -> usize {
        self.0.roots.len()
    }

    /// Resolves every integral node to a table accurate to `tol` (relative).
    ///
    /// Fails with a capability error if a wall derivative above the cap is
    /// referenced, or with a quadrature error naming the offending node.
    pub fn bind(&self, tol: f64) -> Result<BoundTape> {
        if let Some((order, cap)) = self.0.cap_violation {
            return Err(Error::Capability { order, cap });
        }
        let tol = tol.max(MIN_TOL);
        let tables = self
            .0
            .antis
            .iter()
            .map(|a| a.table(tol))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundTape { tape: self.clone(), tables })
    }
}

/// A tape whose integral nodes have been resolved; evaluation is pure
/// arithmetic plus table lookups and is safe to share across threads.
#[derive(Clone, Debug)]
pub struct BoundTape {
    tape: Tape,
    tables: Vec<Arc<CumTable>>,
}

impl BoundTape {
    pub fn root_count(&self) -> usize {
        self.tape.root_count()
    }

    /// Evaluates all roots at `x1` into `out`; `scratch` is reused storage.
    pub fn eval_into(&self, x1: f64, scratch: &mut Vec<f64>, out: &mut [f64]) -> Result<()> {
        let t = &*self.tape.0;
        scratch.clear();
        scratch.reserve(t.ops.len());
        for op in &t.ops {
            let v = match *op {
                Op::Const(c) => c,
                Op::X1 => x1,
                Op::Profile(i) => horner(&t.polys[i as usize], x1),
                Op::Sum(s, n) => t.args[s as usize..(s + n) as usize]
                    .iter()
                    .map(|&a| scratch[a as usize])
                    .sum(),
                Op::Prod(s, n) => t.args[s as usize..(s + n) as usize]
                    .iter()
                    .fold(1.0, |acc, &a| acc * scratch[a as usize]),
                Op::Quot(a, b) => scratch[a as usize] / scratch[b as usize],
                Op::Pow(a, n) => scratch[a as usize].powi(n),
                Op::Anti(i) => self.tables[i as usize].eval(x1)?,
            };
            scratch.push(v);
        }
        for (o, &r) in out.iter_mut().zip(&t.roots) {
            *o = scratch[r as usize];
        }
        Ok(())
    }

    /// Like [`BoundTape::eval_into`] for the first root, also returning a
    /// first-order bound on the error accumulated along the tape from
    /// rounding and from the integral tables.
    pub(crate) fn eval_first_with_error(
        &self,
        x1: f64,
        vals: &mut Vec<f64>,
        errs: &mut Vec<f64>,
    ) -> Result<(f64, f64)> {
        const U: f64 = f64::EPSILON;
        let t = &*self.tape.0;
        vals.clear();
        errs.clear();
        for op in &t.ops {
            let (v, e) = match *op {
                Op::Const(c) => (c, 0.0),
                Op::X1 => (x1, 0.0),
                Op::Profile(i) => {
                    let c = &t.polys[i as usize];
                    let mag = horner_abs(c, x1.abs());
                    (horner(c, x1), 2.0 * c.len() as f64 * U * mag)
                }
                Op::Sum(s, n) => {
                    let args = &t.args[s as usize..(s + n) as usize];
                    let (mut v, mut e, mut mag) = (0.0, 0.0, 0.0);
                    for &a in args {
                        v += vals[a as usize];
                        e += errs[a as usize];
                        mag += vals[a as usize].abs();
                    }
                    (v, e + n as f64 * U * mag)
                }
                Op::Prod(s, n) => {
                    let args = &t.args[s as usize..(s + n) as usize];
                    // e = sum_i err_i prod_{j != i} |v_j|, via a running pair.
                    let (mut v, mut e) = (1.0f64, 0.0f64);
                    for &a in args {
                        let (va, ea) = (vals[a as usize], errs[a as usize]);
                        e = e * va.abs() + ea * v.abs();
                        v *= va;
                    }
                    (v, e + n as f64 * U * v.abs())
                }
                Op::Quot(a, b) => {
                    let (va, vb) = (vals[a as usize], vals[b as usize]);
                    let v = va / vb;
                    let e = (errs[a as usize] + v.abs() * errs[b as usize]) / vb.abs();
                    (v, e + U * v.abs())
                }
                Op::Pow(a, n) => {
                    let (va, ea) = (vals[a as usize], errs[a as usize]);
                    let v = va.powi(n);
                    let m = n.unsigned_abs() as f64;
                    let e = if va == 0.0 { 0.0 } else { m * (v / va).abs() * ea };
                    (v, e + m * U * v.abs())
                }
                Op::Anti(i) => {
                    let (v, e) = self.tables[i as usize].eval_with_error(x1)?;
                    (v, e + 4.0 * U * v.abs())
                }
            };
            vals.push(v);
            errs.push(e);
        }
        let r = t.roots[0] as usize;
        Ok((vals[r], errs[r]))
    }

    /// Convenience wrapper returning all root values at `x1`.
    pub fn eval(&self, x1: f64) -> Result<Vec<f64>> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.root_count()];
        self.eval_into(x1, &mut scratch, &mut out)?;
        Ok(out)
    }
}

fn derivative_poly(c: &[f64], k: u32) -> Vec<f64> {
    let k = k as usize;
    (k..c.len())
        .map(|j| c[j] * ((j - k + 1)..=j).fold(1.0, |acc, t| acc * t as f64))
        .collect()
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &cj| acc * x + cj)
}

fn horner_abs(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &cj| acc * x + cj.abs())
}
