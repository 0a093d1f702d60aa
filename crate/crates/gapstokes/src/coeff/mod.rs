//! Coefficient functions of `x1`.
//!
//! Every scalar coefficient that appears in a corrector (wall-Laplacian
//! solves, solenoidal complements, integral pressure terms, residual
//! coefficients) is a [`Coeff`]: a node in a hash-consed expression DAG over
//! constants, `x1`, wall-profile derivatives, sums, products, quotients,
//! integer powers and definite integrals `x1 -> int_a^x1 g(y) dy`.
//!
//! Nodes are interned, so structurally equal expressions share one
//! allocation. Derivatives are memoized per node. Only local rewrites are
//! applied when nodes are built: flattening, constant folding, collecting
//! like terms in sums and like bases in products, and turning quotients by
//! nonvanishing factors into negative powers. There is no canonical form.
//!
//! Numeric evaluation goes through [`Tape`], which linearizes a set of roots
//! into a deduplicated instruction list. Integral nodes are evaluated from
//! cumulative piecewise-Chebyshev tables built lazily per node and tolerance.

mod table;
mod tape;

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::hash::{Hash, Hasher};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock, Weak};

use crate::error::{Error, Result};
use crate::geometry::ProfileFn;

pub use tape::{BoundTape, Tape};

pub(crate) use table::CumTable;

/// Default relative quadrature tolerance for integral nodes.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Tolerances are never tightened below this.
pub const MIN_TOL: f64 = 1e-14;

/// Lower limit of an integral node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lower {
    /// A numeric lower limit.
    At(f64),
    /// The chart edge `R`, kept symbolic for display.
    ChartEdge(f64),
}

impl Lower {
    pub fn value(self) -> f64 {
        match self {
            Lower::At(a) | Lower::ChartEdge(a) => a,
        }
    }

    fn same(self, other: Lower) -> bool {
        match (self, other) {
            (Lower::At(a), Lower::At(b)) | (Lower::ChartEdge(a), Lower::ChartEdge(b)) => {
                a.to_bits() == b.to_bits()
            }
            _ => false,
        }
    }
}

/// A wall profile as seen from the expression algebra.
#[derive(Debug)]
pub struct Wall {
    /// 1 for the top wall `h1`, 2 for the bottom wall `h2`.
    pub side: u8,
    pub poly: Arc<ProfileFn>,
    /// Highest derivative order that may be evaluated.
    pub cap: u32,
}

impl Wall {
    fn same(&self, other: &Wall) -> bool {
        self.side == other.side
            && self.cap == other.cap
            && (Arc::ptr_eq(&self.poly, &other.poly) || self.poly == other.poly)
    }
}

/// Data of an integral node `x1 -> int_lower^x1 integrand`.
pub struct Antideriv {
    pub lower: Lower,
    pub integrand: Coeff,
    /// Interval on which the node may be evaluated.
    pub domain: (f64, f64),
    tables: Mutex<Vec<(u64, Arc<CumTable>)>>,
}

impl fmt::Debug for Antideriv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Antideriv")
            .field("lower", &self.lower)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

/// Node kinds.
#[derive(Clone, Debug)]
pub enum Kind {
    Const(f64),
    X1,
    /// `order`-th derivative of a wall profile.
    Profile(Arc<Wall>, u32),
    Sum(Vec<Coeff>),
    Prod(Vec<Coeff>),
    Quotient(Coeff, Coeff),
    IntPow(Coeff, i32),
    Antideriv(Arc<Antideriv>),
}

pub(crate) struct Node {
    kind: Kind,
    hash: u64,
    diff: OnceLock<Coeff>,
}

/// A coefficient function of `x1`; cheap to clone.
#[derive(Clone)]
pub struct Coeff(Arc<Node>);

impl PartialEq for Coeff {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

impl Eq for Coeff {}

impl Hash for Coeff {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.0.hash);
    }
}

impl fmt::Debug for Coeff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.size() <= 64 {
            f.write_str(&self.to_sexpr())
        } else {
            write!(f, "<coeff {:016x}, {} nodes>", self.0.hash, self.size())
        }
    }
}

// ---------------------------------------------------------------------------
// Interning
// ---------------------------------------------------------------------------

const SHARDS: usize = 64;
const PURGE_EVERY: usize = 1 << 14;

struct Shard {
    map: HashMap<u64, Vec<Weak<Node>>>,
    inserts: usize,
}

fn shards() -> &'static [Mutex<Shard>] {
    static SHARD_TABLE: OnceLock<Vec<Mutex<Shard>>> = OnceLock::new();
    SHARD_TABLE.get_or_init(|| {
        (0..SHARDS)
            .map(|_| Mutex::new(Shard { map: HashMap::new(), inserts: 0 }))
            .collect()
    })
}

fn mix(h: u64, v: u64) -> u64 {
    let mut z = (h ^ v).wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn kind_hash(kind: &Kind) -> u64 {
    match kind {
        Kind::Const(c) => mix(1, c.to_bits()),
        Kind::X1 => mix(2, 0),
        Kind::Profile(w, k) => {
            let mut h = mix(3, ((w.side as u64) << 40) | ((w.cap as u64) << 20) | *k as u64);
            for c in w.poly.coeffs() {
                h = mix(h, c.to_bits());
            }
            h
        }
        Kind::Sum(ts) => ts.iter().fold(mix(4, ts.len() as u64), |h, t| mix(h, t.0.hash)),
        Kind::Prod(fs) => fs.iter().fold(mix(5, fs.len() as u64), |h, f| mix(h, f.0.hash)),
        Kind::Quotient(n, d) => mix(mix(6, n.0.hash), d.0.hash),
        Kind::IntPow(b, n) => mix(mix(7, b.0.hash), *n as i64 as u64),
        Kind::Antideriv(a) => {
            let tag = match a.lower {
                Lower::At(_) => 8,
                Lower::ChartEdge(_) => 9,
            };
            let h = mix(mix(tag, a.lower.value().to_bits()), a.integrand.0.hash);
            mix(mix(h, a.domain.0.to_bits()), a.domain.1.to_bits())
        }
    }
}

fn same_list(a: &[Coeff], b: &[Coeff]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y)
}

fn kind_eq(a: &Kind, b: &Kind) -> bool {
    match (a, b) {
        (Kind::Const(x), Kind::Const(y)) => x.to_bits() == y.to_bits(),
        (Kind::X1, Kind::X1) => true,
        (Kind::Profile(w1, k1), Kind::Profile(w2, k2)) => k1 == k2 && w1.same(w2),
        (Kind::Sum(x), Kind::Sum(y)) | (Kind::Prod(x), Kind::Prod(y)) => same_list(x, y),
        (Kind::Quotient(n1, d1), Kind::Quotient(n2, d2)) => n1 == n2 && d1 == d2,
        (Kind::IntPow(b1, n1), Kind::IntPow(b2, n2)) => b1 == b2 && n1 == n2,
        (Kind::Antideriv(x), Kind::Antideriv(y)) => {
            x.lower.same(y.lower)
                && x.integrand == y.integrand
                && x.domain.0.to_bits() == y.domain.0.to_bits()
                && x.domain.1.to_bits() == y.domain.1.to_bits()
        }
        _ => false,
    }
}

fn intern(kind: Kind) -> Coeff {
    let hash = kind_hash(&kind);
    let shard = &shards()[(hash as usize) % SHARDS];
    let mut guard = shard.lock().unwrap_or_else(|e| e.into_inner());
    let Shard { map, inserts } = &mut *guard;
    let bucket = map.entry(hash).or_default();
    bucket.retain(|w| w.strong_count() > 0);
    for w in bucket.iter() {
        if let Some(node) = w.upgrade() {
            if kind_eq(&node.kind, &kind) {
                return Coeff(node);
            }
        }
    }
    let node = Arc::new(Node { kind, hash, diff: OnceLock::new() });
    bucket.push(Arc::downgrade(&node));
    *inserts += 1;
    if *inserts % PURGE_EVERY == 0 {
        map.retain(|_, b| {
            b.retain(|w| w.strong_count() > 0);
            !b.is_empty()
        });
    }
    Coeff(node)
}

// ---------------------------------------------------------------------------
// Constructors with local simplification
// ---------------------------------------------------------------------------

impl Coeff {
    pub fn constant(c: f64) -> Coeff {
        // Normalize -0.0 so that zero has a single representation.
        intern(Kind::Const(if c == 0.0 { 0.0 } else { c }))
    }

    pub fn zero() -> Coeff {
        Coeff::constant(0.0)
    }

    pub fn one() -> Coeff {
        Coeff::constant(1.0)
    }

    pub fn x1() -> Coeff {
        intern(Kind::X1)
    }

    /// `order`-th derivative of a wall profile. Orders above the polynomial
    /// degree fold to zero; orders above `cap` are rejected at evaluation.
    pub fn profile(side: u8, poly: Arc<ProfileFn>, cap: u32, order: u32) -> Coeff {
        let wall = Arc::new(Wall { side, poly, cap });
        Coeff::profile_of(&wall, order)
    }

    fn profile_of(wall: &Arc<Wall>, order: u32) -> Coeff {
        if order > wall.poly.degree() || wall.poly.coeffs().is_empty() {
            return Coeff::zero();
        }
        intern(Kind::Profile(wall.clone(), order))
    }

    pub fn kind(&self) -> &Kind {
        &self.0.kind
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.0.kind {
            Kind::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Structural hash; stable across runs.
    pub fn structural_hash(&self) -> u64 {
        self.0.hash
    }

    /// Sum with flattening, constant folding and like-term collection.
    pub fn sum<I: IntoIterator<Item = Coeff>>(terms: I) -> Coeff {
        let mut constant = 0.0;
        // (rest, scalar) in first-seen order, indexed by rest.
        let mut groups: Vec<(Coeff, f64)> = Vec::new();
        let mut index: HashMap<Coeff, usize> = HashMap::new();
        let mut stack: Vec<Coeff> = terms.into_iter().collect();
        stack.reverse();
        while let Some(t) = stack.pop() {
            match &t.0.kind {
                Kind::Const(c) => constant += c,
                Kind::Sum(inner) => stack.extend(inner.iter().rev().cloned()),
                _ => {
                    let (s, rest) = t.split_scalar();
                    match index.get(&rest) {
                        Some(&i) => groups[i].1 += s,
                        None => {
                            index.insert(rest.clone(), groups.len());
                            groups.push((rest, s));
                        }
                    }
                }
            }
        }
        let mut out: Vec<Coeff> = groups
            .into_iter()
            .filter(|(_, s)| *s != 0.0)
            .map(|(rest, s)| if s == 1.0 { rest } else { Coeff::scaled(s, rest) })
            .collect();
        if constant != 0.0 {
            out.push(Coeff::constant(constant));
        }
        match out.len() {
            0 => Coeff::zero(),
            1 => out.pop().unwrap(),
            _ => {
                out.sort_by_key(|c| c.0.hash);
                intern(Kind::Sum(out))
            }
        }
    }

    /// Splits `c * rest` with `c` the numeric factor of a product.
    fn split_scalar(&self) -> (f64, Coeff) {
        if let Kind::Prod(fs) = &self.0.kind {
            if let Some(c) = fs[0].as_const() {
                let rest = if fs.len() == 2 {
                    fs[1].clone()
                } else {
                    intern(Kind::Prod(fs[1..].to_vec()))
                };
                return (c, rest);
            }
        }
        (1.0, self.clone())
    }

    /// `s * rest` where `rest` is already a non-constant simplified node.
    fn scaled(s: f64, rest: Coeff) -> Coeff {
        let mut fs = vec![Coeff::constant(s)];
        match &rest.0.kind {
            Kind::Prod(inner) => fs.extend(inner.iter().cloned()),
            _ => fs.push(rest),
        }
        intern(Kind::Prod(fs))
    }

    /// Product with flattening, constant folding and collection of like
    /// bases into integer powers.
    pub fn prod<I: IntoIterator<Item = Coeff>>(factors: I) -> Coeff {
        let mut scalar = 1.0;
        let mut groups: Vec<(Coeff, i32)> = Vec::new();
        let mut index: HashMap<Coeff, usize> = HashMap::new();
        let mut stack: Vec<Coeff> = factors.into_iter().collect();
        stack.reverse();
        while let Some(f) = stack.pop() {
            match &f.0.kind {
                Kind::Const(c) => scalar *= c,
                Kind::Prod(inner) => stack.extend(inner.iter().rev().cloned()),
                _ => {
                    let (base, n) = match &f.0.kind {
                        Kind::IntPow(b, n) => (b.clone(), *n),
                        _ => (f.clone(), 1),
                    };
                    match index.get(&base) {
                        Some(&i) => groups[i].1 += n,
                        None => {
                            index.insert(base.clone(), groups.len());
                            groups.push((base, n));
                        }
                    }
                }
            }
        }
        if scalar == 0.0 {
            return Coeff::zero();
        }
        let mut out: Vec<Coeff> = Vec::with_capacity(groups.len() + 1);
        for (base, n) in groups {
            let p = base.powi(n);
            match &p.0.kind {
                Kind::Const(c) => scalar *= c,
                _ => out.push(p),
            }
        }
        out.sort_by_key(|c| c.0.hash);
        // A multiple of a single sum is distributed so that linear
        // combinations stay flat and cancel.
        if out.len() == 1 && scalar != 1.0 {
            if let Kind::Sum(ts) = &out[0].0.kind {
                return Coeff::sum(ts.iter().map(|t| t * scalar));
            }
        }
        match (out.len(), scalar == 1.0) {
            (0, _) => Coeff::constant(scalar),
            (1, true) => out.pop().unwrap(),
            (_, true) => intern(Kind::Prod(out)),
            (_, false) => {
                out.insert(0, Coeff::constant(scalar));
                intern(Kind::Prod(out))
            }
        }
    }

    /// Integer power. Negative powers require a provably nonvanishing base.
    ///
    /// # Panics
    /// Panics when a negative power of a base that is not provably
    /// nonvanishing is requested; use [`Coeff::try_powi`] to get an error.
    pub fn powi(&self, n: i32) -> Coeff {
        self.try_powi(n).unwrap_or_else(|e| panic!("{e}"))
    }

    pub fn try_powi(&self, n: i32) -> Result<Coeff> {
        if n == 0 {
            return Ok(Coeff::one());
        }
        if n == 1 {
            return Ok(self.clone());
        }
        match &self.0.kind {
            Kind::Const(c) => {
                if *c == 0.0 && n < 0 {
                    return Err(Error::Construction("negative power of zero".into()));
                }
                Ok(Coeff::constant(c.powi(n)))
            }
            Kind::IntPow(b, m) => b.try_powi(m * n),
            Kind::Prod(fs) => {
                let parts: Result<Vec<Coeff>> = fs.iter().map(|f| f.try_powi(n)).collect();
                Ok(Coeff::prod(parts?))
            }
            _ => {
                if n < 0 && !self.nonvanishing() {
                    return Err(Error::Construction(format!(
                        "negative power of a base that is not provably nonvanishing: {}",
                        self.short()
                    )));
                }
                Ok(intern(Kind::IntPow(self.clone(), n)))
            }
        }
    }

    /// Explicit quotient node. The denominator must be provably nonvanishing
    /// on the chart; zero numerators and constant denominators fold.
    pub fn quotient(num: &Coeff, den: &Coeff) -> Result<Coeff> {
        if !den.nonvanishing() {
            return Err(Error::Construction(format!(
                "quotient denominator is not provably nonvanishing: {}",
                den.short()
            )));
        }
        if num.is_zero() {
            return Ok(Coeff::zero());
        }
        if let Some(c) = den.as_const() {
            return Ok(num * (1.0 / c));
        }
        Ok(intern(Kind::Quotient(num.clone(), den.clone())))
    }

    /// `1 / self` as a negative power.
    pub fn recip(&self) -> Result<Coeff> {
        self.try_powi(-1)
    }

    /// The integral node `x1 -> int_lower^x1 integrand(y) dy` on `domain`.
    pub fn antideriv(lower: Lower, integrand: Coeff, domain: (f64, f64)) -> Result<Coeff> {
        let a = lower.value();
        if !(domain.0 < domain.1) || !(domain.0 <= a && a <= domain.1) {
            return Err(Error::input(format!(
                "integral lower limit {a} not inside domain [{}, {}]",
                domain.0, domain.1
            )));
        }
        if integrand.is_zero() {
            return Ok(Coeff::zero());
        }
        Ok(intern(Kind::Antideriv(Arc::new(Antideriv {
            lower,
            integrand,
            domain,
            tables: Mutex::new(Vec::new()),
        }))))
    }

    /// Rebuilds the expression with every wall atom replaced by `map(wall)`,
    /// simplifying on the way up. Shared subexpressions are rebuilt once.
    pub fn map_walls(&self, map: &dyn Fn(&Arc<Wall>) -> Arc<Wall>) -> Result<Coeff> {
        fn go(c: &Coeff, map: &dyn Fn(&Arc<Wall>) -> Arc<Wall>, memo: &mut HashMap<usize, Coeff>) -> Result<Coeff> {
            if let Some(done) = memo.get(&c.ptr_key()) {
                return Ok(done.clone());
            }
            let all = |cs: &[Coeff], memo: &mut HashMap<usize, Coeff>| -> Result<Vec<Coeff>> {
                cs.iter().map(|t| go(t, map, memo)).collect()
            };
            let out = match &c.0.kind {
                Kind::Const(_) | Kind::X1 => c.clone(),
                Kind::Profile(w, k) => Coeff::profile_of(&map(w), *k),
                Kind::Sum(ts) => Coeff::sum(all(ts, memo)?),
                Kind::Prod(fs) => Coeff::prod(all(fs, memo)?),
                Kind::Quotient(n, d) => Coeff::quotient(&go(n, map, memo)?, &go(d, map, memo)?)?,
                Kind::IntPow(b, n) => go(b, map, memo)?.try_powi(*n)?,
                Kind::Antideriv(a) => Coeff::antideriv(a.lower, go(&a.integrand, map, memo)?, a.domain)?,
            };
            memo.insert(c.ptr_key(), out.clone());
            Ok(out)
        }
        go(self, map, &mut HashMap::new())
    }

    // -----------------------------------------------------------------------
    // Predicates used to validate denominators
    // -----------------------------------------------------------------------

    /// Conservative structural certificate that `self > 0` on the chart.
    ///
    /// Recognizes positive constants, the gap width `c + h1 + h2` with
    /// `c > 0` (positive by the profile invariants), sums of nonnegative
    /// terms with at least one positive term (even wall profiles with
    /// nonnegative coefficients count as nonnegative), products and powers
    /// of these.
    pub fn positive(&self) -> bool {
        match &self.0.kind {
            Kind::Const(c) => *c > 0.0,
            Kind::Sum(ts) => {
                self.is_gap()
                    || (ts.iter().all(|t| t.nonnegative()) && ts.iter().any(|t| t.positive()))
            }
            Kind::Prod(fs) => fs.iter().all(|f| f.positive()),
            Kind::Quotient(n, d) => n.positive() && d.positive(),
            Kind::IntPow(b, n) => b.positive() || (n % 2 == 0 && b.nonvanishing()),
            _ => false,
        }
    }

    fn nonnegative(&self) -> bool {
        match &self.0.kind {
            Kind::Const(c) => *c >= 0.0,
            Kind::IntPow(_, n) if n % 2 == 0 && *n > 0 => true,
            Kind::Prod(fs) => fs.iter().all(|f| f.nonnegative()),
            Kind::Profile(w, 0) => w.poly.is_even() && w.poly.coeffs().iter().all(|c| *c >= 0.0),
            _ => self.positive(),
        }
    }

    /// Conservative structural certificate that `self != 0` on the chart.
    pub fn nonvanishing(&self) -> bool {
        match &self.0.kind {
            Kind::Const(c) => *c != 0.0,
            Kind::Prod(fs) => fs.iter().all(|f| f.nonvanishing()),
            Kind::IntPow(b, _) => b.nonvanishing(),
            Kind::Quotient(n, d) => n.nonvanishing() && d.nonvanishing(),
            _ => self.positive(),
        }
    }

    /// `c + h1 + h2` with unit weights and `c > 0`.
    fn is_gap(&self) -> bool {
        let Kind::Sum(ts) = &self.0.kind else { return false };
        if ts.len() != 3 {
            return false;
        }
        let mut sides = [false; 2];
        let mut c_ok = false;
        for t in ts {
            match &t.0.kind {
                Kind::Const(c) if *c > 0.0 => c_ok = true,
                Kind::Profile(w, 0) if (1..=2).contains(&w.side) => {
                    sides[w.side as usize - 1] = true
                }
                _ => return false,
            }
        }
        c_ok && sides[0] && sides[1]
    }

    // -----------------------------------------------------------------------
    // Differentiation
    // -----------------------------------------------------------------------

    /// Exact derivative with respect to `x1`, memoized per node.
    pub fn diff(&self) -> Coeff {
        if let Some(d) = self.0.diff.get() {
            return d.clone();
        }
        let d = self.compute_diff();
        self.0.diff.get_or_init(|| d).clone()
    }

    /// `n`-th derivative.
    pub fn diff_n(&self, n: u32) -> Coeff {
        (0..n).fold(self.clone(), |c, _| c.diff())
    }

    fn compute_diff(&self) -> Coeff {
        match &self.0.kind {
            Kind::Const(_) => Coeff::zero(),
            Kind::X1 => Coeff::one(),
            Kind::Profile(w, k) => Coeff::profile_of(w, k + 1),
            Kind::Sum(ts) => Coeff::sum(ts.iter().map(|t| t.diff())),
            Kind::Prod(fs) => {
                let mut terms = Vec::with_capacity(fs.len());
                for i in 0..fs.len() {
                    let di = fs[i].diff();
                    if di.is_zero() {
                        continue;
                    }
                    let mut factors = fs.clone();
                    factors[i] = di;
                    terms.push(Coeff::prod(factors));
                }
                Coeff::sum(terms)
            }
            Kind::Quotient(n, d) => {
                let num = &(&n.diff() * d) - &(n * &d.diff());
                Coeff::quotient(&num, &d.powi(2)).expect("square of a nonvanishing denominator")
            }
            Kind::IntPow(b, n) => Coeff::prod([
                Coeff::constant(*n as f64),
                b.powi(n - 1),
                b.diff(),
            ]),
            Kind::Antideriv(a) => a.integrand.clone(),
        }
    }

    // -----------------------------------------------------------------------
    // Inspection
    // -----------------------------------------------------------------------

    /// Direct children of this node.
    pub fn children(&self) -> Vec<Coeff> {
        match &self.0.kind {
            Kind::Const(_) | Kind::X1 | Kind::Profile(..) => Vec::new(),
            Kind::Sum(v) | Kind::Prod(v) => v.clone(),
            Kind::Quotient(n, d) => vec![n.clone(), d.clone()],
            Kind::IntPow(b, _) => vec![b.clone()],
            Kind::Antideriv(a) => vec![a.integrand.clone()],
        }
    }

    /// Number of distinct nodes reachable from this one.
    pub fn size(&self) -> usize {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(c) = stack.pop() {
            if seen.insert(Arc::as_ptr(&c.0) as usize) {
                stack.extend(c.children());
            }
        }
        seen.len()
    }

    /// Largest nesting depth of integral nodes.
    pub fn integral_depth(&self) -> usize {
        let mut memo: HashMap<usize, usize> = HashMap::new();
        fn go(c: &Coeff, memo: &mut HashMap<usize, usize>) -> usize {
            let key = Arc::as_ptr(&c.0) as usize;
            if let Some(&d) = memo.get(&key) {
                return d;
            }
            let own = usize::from(matches!(c.0.kind, Kind::Antideriv(_)));
            let d = own + c.children().iter().map(|ch| go(ch, memo)).max().unwrap_or(0);
            memo.insert(key, d);
            d
        }
        go(self, &mut memo)
    }

    /// Tree dump as an s-expression. Shared subexpressions are repeated, so
    /// the text can be exponentially larger than the node count; use
    /// [`DagDump`] for deep expressions.
    pub fn to_sexpr(&self) -> String {
        let mut s = String::new();
        self.write_sexpr(&mut s, usize::MAX);
        s
    }

    /// Writes the s-expression, stopping once `out` exceeds `limit` bytes.
    fn write_sexpr(&self, out: &mut String, limit: usize) {
        if out.len() > limit {
            return;
        }
        match &self.0.kind {
            Kind::Sum(v) | Kind::Prod(v) => {
                out.push_str(if matches!(self.0.kind, Kind::Sum(_)) { "(+" } else { "(*" });
                for c in v {
                    out.push(' ');
                    c.write_sexpr(out, limit);
                }
                out.push(')');
            }
            Kind::Quotient(n, d) => {
                out.push_str("(/ ");
                n.write_sexpr(out, limit);
                out.push(' ');
                d.write_sexpr(out, limit);
                out.push(')');
            }
            Kind::IntPow(b, n) => {
                out.push_str("(^ ");
                b.write_sexpr(out, limit);
                let _ = write!(out, " {n})");
            }
            Kind::Antideriv(a) => {
                out.push_str(&a.head());
                a.integrand.write_sexpr(out, limit);
                out.push(')');
            }
            _ => out.push_str(&self.leaf_text().expect("leaf node")),
        }
    }

    /// Text of constants, `x1` and wall atoms.
    fn leaf_text(&self) -> Option<String> {
        match &self.0.kind {
            Kind::Const(c) => Some(format!("{c}")),
            Kind::X1 => Some("x1".into()),
            Kind::Profile(w, k) => Some(format!("(h{} {k})", w.side)),
            _ => None,
        }
    }

    fn short(&self) -> String {
        let mut s = String::new();
        self.write_sexpr(&mut s, 120);
        if s.len() > 120 {
            // The dump is ASCII, so any byte offset is a char boundary.
            s.truncate(120);
            s.push_str("...");
        }
        s
    }

    /// Evaluates at one point with integral nodes accurate to `tol`.
    pub fn eval(&self, x1: f64, tol: f64) -> Result<f64> {
        let tape = Tape::compile(std::slice::from_ref(self));
        let bound = tape.bind(tol)?;
        let mut scratch = Vec::new();
        let mut out = [0.0];
        bound.eval_into(x1, &mut scratch, &mut out)?;
        Ok(out[0])
    }

    pub(crate) fn ptr_key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }
}

impl Antideriv {
    /// Opening of the s-expression form, up to the integrand.
    fn head(&self) -> String {
        match self.lower {
            Lower::At(v) => format!("(int {v} "),
            Lower::ChartEdge(_) => "(int R ".into(),
        }
    }

    /// Returns the cumulative table for this node at `tol`, building it on
    /// first use. Tables are cached per exact tolerance so that results do
    /// not depend on evaluation history.
    pub(crate) fn table(&self, tol: f64) -> Result<Arc<CumTable>> {
        let key = tol.to_bits();
        let mut guard = self.tables.lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, t)) = guard.iter().find(|(k, _)| *k == key) {
            return Ok(t.clone());
        }
        let t = Arc::new(CumTable::build(
            &self.integrand,
            self.lower.value(),
            self.domain,
            tol,
        )
        .map_err(|e| match e {
            Error::Quadrature { path, detail } => Error::Quadrature {
                path: format!("{} > {path}", self.label()),
                detail,
            },
            other => other,
        })?);
        guard.push((key, t.clone()));
        Ok(t)
    }

    fn label(&self) -> String {
        match self.lower {
            Lower::At(v) => format!("int_{v}"),
            Lower::ChartEdge(_) => "int_R".to_string(),
        }
    }
}

// ---------------------------------------------------------------------------
// Operators
// ---------------------------------------------------------------------------

impl Add for &Coeff {
    type Output = Coeff;
    fn add(self, rhs: &Coeff) -> Coeff {
        Coeff::sum([self.clone(), rhs.clone()])
    }
}

impl Sub for &Coeff {
    type Output = Coeff;
    fn sub(self, rhs: &Coeff) -> Coeff {
        Coeff::sum([self.clone(), -rhs])
    }
}

impl Mul for &Coeff {
    type Output = Coeff;
    fn mul(self, rhs: &Coeff) -> Coeff {
        Coeff::prod([self.clone(), rhs.clone()])
    }
}

impl Neg for &Coeff {
    type Output = Coeff;
    fn neg(self) -> Coeff {
        self * -1.0
    }
}

impl Mul<f64> for &Coeff {
    type Output = Coeff;
    fn mul(self, rhs: f64) -> Coeff {
        Coeff::prod([Coeff::constant(rhs), self.clone()])
    }
}

impl Add<f64> for &Coeff {
    type Output = Coeff;
    fn add(self, rhs: f64) -> Coeff {
        Coeff::sum([self.clone(), Coeff::constant(rhs)])
    }
}

macro_rules! forward_owned {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr for Coeff {
            type Output = Coeff;
            fn $m(self, rhs: Coeff) -> Coeff { (&self).$m(&rhs) }
        }
        impl $tr<&Coeff> for Coeff {
            type Output = Coeff;
            fn $m(self, rhs: &Coeff) -> Coeff { (&self).$m(rhs) }
        }
        impl $tr<Coeff> for &Coeff {
            type Output = Coeff;
            fn $m(self, rhs: Coeff) -> Coeff { self.$m(&rhs) }
        }
    )*};
}
forward_owned!(Add add, Sub sub, Mul mul);

impl Neg for Coeff {
    type Output = Coeff;
    fn neg(self) -> Coeff {
        -&self
    }
}

impl Mul<f64> for Coeff {
    type Output = Coeff;
    fn mul(self, rhs: f64) -> Coeff {
        &self * rhs
    }
}

impl Add<f64> for Coeff {
    type Output = Coeff;
    fn add(self, rhs: f64) -> Coeff {
        &self + rhs
    }
}

impl From<f64> for Coeff {
    fn from(c: f64) -> Coeff {
        Coeff::constant(c)
    }
}

#[cfg(test)]
mod tests;

/// Dump of several coefficients that prints every shared interior node once,
/// as numbered bindings `%k = (op ...)` that later bindings refer to. The
/// text is linear in the number of distinct nodes.
#[derive(Default)]
pub struct DagDump {
    ids: HashMap<usize, usize>,
    bindings: String,
}

impl DagDump {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the reference for `c` (a leaf's text or `%k`), appending
    /// bindings for nodes not seen before.
    pub fn add(&mut self, c: &Coeff) -> String {
        if let Some(t) = c.leaf_text() {
            return t;
        }
        if let Some(id) = self.ids.get(&c.ptr_key()) {
            return format!("%{id}");
        }
        let body = match &c.0.kind {
            Kind::Sum(v) | Kind::Prod(v) => {
                let op = if matches!(c.0.kind, Kind::Sum(_)) { "(+" } else { "(*" };
                let args: Vec<String> = v.iter().map(|x| self.add(x)).collect();
                format!("{op} {})", args.join(" "))
            }
            Kind::Quotient(n, d) => format!("(/ {} {})", self.add(n), self.add(d)),
            Kind::IntPow(b, n) => format!("(^ {} {n})", self.add(b)),
            Kind::Antideriv(a) => format!("{}{})", a.head(), self.add(&a.integrand)),
            _ => unreachable!("leaves are handled above"),
        };
        let id = self.ids.len();
        self.ids.insert(c.ptr_key(), id);
        let _ = writeln!(self.bindings, "%{id} = {body}");
        format!("%{id}")
    }

    /// Bindings emitted so far, one per line.
    pub fn bindings(&self) -> &str {
        &self.bindings
    }
}
