//! Regular cells, bracketed set distances, and sampling probes for the
//! regularity hypotheses the extension relies on.
//!
//! Cells are open cells (an interval, or a slab between two walls over a
//! lower-dimensional open cell) and graph cells `w = phi(u)` over an open cell,
//! possibly after a permutation of coordinates. Distances to cell closures are
//! computed by branch-and-bound over a parameterization of the closure by the
//! unit cube; the result is a `[lower, upper]` bracket.
//!
//! All regularity checks here are sampling probes with refinement-stability
//! verdicts. They can flag suspicious inputs; they cannot certify them.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_rational::BigRational;
use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{f64_to_rational, rational_to_f64, Expr, ExprFn, Numeric};
use crate::jet::MultiIndex;

/// Default half-width of the box unbounded cells are clipped to.
pub const DEFAULT_BBOX: f64 = 10.0;

/// Result of a membership test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Membership {
    Inside,
    Boundary,
    Outside,
}

/// A wall of a slab: `-inf`, `+inf`, or a function of the base coordinates.
#[derive(Clone, Debug, PartialEq)]
pub enum Wall {
    NegInf,
    PosInf,
    Fn(ExprFn),
}

impl Wall {
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Wall::NegInf => Some(f64::NEG_INFINITY),
            Wall::PosInf => Some(f64::INFINITY),
            Wall::Fn(f) => f.root().as_constant().map(rational_to_f64),
        }
    }

    fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            Wall::NegInf => Ok(f64::NEG_INFINITY),
            Wall::PosInf => Ok(f64::INFINITY),
            Wall::Fn(f) => f.evaluate(x),
        }
    }

    fn as_expr(&self, bbox: f64) -> Expr {
        match self {
            Wall::NegInf => Expr::Const(f64_to_rational(-bbox)),
            Wall::PosInf => Expr::Const(f64_to_rational(bbox)),
            Wall::Fn(f) => f.root().clone(),
        }
    }
}

/// Open cell: an interval, or `{(x', x_n): x' in base, lower(x') < x_n < upper(x')}`.
#[derive(Clone, Debug, PartialEq)]
pub enum OpenCellDesc {
    Interval { lo: Option<BigRational>, hi: Option<BigRational> },
    Slab { base: Box<OpenCellDesc>, lower: Wall, upper: Wall },
}

fn lo_f64(b: &Option<BigRational>) -> f64 {
    b.as_ref().map_or(f64::NEG_INFINITY, rational_to_f64)
}

fn hi_f64(b: &Option<BigRational>) -> f64 {
    b.as_ref().map_or(f64::INFINITY, rational_to_f64)
}

impl OpenCellDesc {
    pub fn interval(lo: f64, hi: f64) -> OpenCellDesc {
        let fin = |v: f64| if v.is_finite() { Some(f64_to_rational(v)) } else { None };
        OpenCellDesc::Interval { lo: fin(lo), hi: fin(hi) }
    }

    pub fn slab(base: OpenCellDesc, lower: Wall, upper: Wall) -> OpenCellDesc {
        OpenCellDesc::Slab { base: Box::new(base), lower, upper }
    }

    pub fn dim(&self) -> usize {
        match self {
            OpenCellDesc::Interval { .. } => 1,
            OpenCellDesc::Slab { base, .. } => base.dim() + 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OpenCellDesc::Interval { lo, hi } => {
                if lo_f64(lo) >= hi_f64(hi) {
                    return Err(Error::StratificationInvalid("empty interval".into()));
                }
                Ok(())
            }
            OpenCellDesc::Slab { base, lower, upper } => {
                base.validate()?;
                for w in [lower, upper] {
                    if let Wall::Fn(f) = w {
                        if f.arity() != base.dim() {
                            return Err(Error::ArityMismatch { expected: base.dim(), got: f.arity() });
                        }
                    }
                }
                if matches!(lower, Wall::PosInf) || matches!(upper, Wall::NegInf) {
                    return Err(Error::StratificationInvalid("slab walls are reversed".into()));
                }
                for t in graded_params(base.dim(), 0) {
                    let u = base.param_point(&t, DEFAULT_BBOX);
                    if let (Ok(a), Ok(b)) = (lower.eval(&u), upper.eval(&u)) {
                        if a >= b {
                            return Err(Error::StratificationInvalid(format!(
                                "lower wall {a} >= upper wall {b} at {u:?}"
                            )));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn contains(&self, x: &[f64], tau: f64) -> Membership {
        match self {
            OpenCellDesc::Interval { lo, hi } => {
                let (a, b) = (lo_f64(lo), hi_f64(hi));
                let t = x[0];
                if t > a + tau && t < b - tau {
                    Membership::Inside
                } else if (t - a).abs() <= tau || (t - b).abs() <= tau {
                    Membership::Boundary
                } else {
                    Membership::Outside
                }
            }
            OpenCellDesc::Slab { base, lower, upper } => {
                let k = base.dim();
                let inner = base.contains(&x[..k], tau);
                if inner == Membership::Outside {
                    return Membership::Outside;
                }
                let (a, b) = match (lower.eval(&x[..k]), upper.eval(&x[..k])) {
                    (Ok(a), Ok(b)) => (a, b),
                    _ => return Membership::Boundary,
                };
                let t = x[k];
                let strictly = t > a + tau && t < b - tau;
                let near = (t - a).abs() <= tau || (t - b).abs() <= tau;
                match (inner, strictly, near) {
                    (Membership::Inside, true, _) => Membership::Inside,
                    (_, true, _) | (_, _, true) => Membership::Boundary,
                    _ => Membership::Outside,
                }
            }
        }
    }

    /// Parameterization of the (bbox-clipped) closure by `[0, 1]^dim`, as
    /// expressions in the parameters `t_0 .. t_{dim-1}`.
    pub fn param_exprs(&self, bbox: f64) -> Vec<Expr> {
        match self {
            OpenCellDesc::Interval { lo, hi } => {
                let a = lo.clone().unwrap_or_else(|| f64_to_rational(-bbox));
                let b = hi.clone().unwrap_or_else(|| f64_to_rational(bbox));
                vec![Expr::Const(a.clone()) + Expr::Const(b - a) * Expr::var(0)]
            }
            OpenCellDesc::Slab { base, lower, upper } => {
                let mut coords = base.param_exprs(bbox);
                let k = coords.len();
                let lo = lower.as_expr(bbox).substitute(&coords);
                let hi = upper.as_expr(bbox).substitute(&coords);
                coords.push(lo.clone() + (hi - lo) * Expr::var(k));
                coords
            }
        }
    }

    /// Numeric version of [`OpenCellDesc::param_exprs`].
    pub fn param_point(&self, t: &[f64], bbox: f64) -> Vec<f64> {
        match self {
            OpenCellDesc::Interval { lo, hi } => {
                let a = lo_f64(lo).max(-bbox);
                let b = hi_f64(hi).min(bbox);
                vec![a + (b - a) * t[0]]
            }
            OpenCellDesc::Slab { base, lower, upper } => {
                let k = base.dim();
                let mut u = base.param_point(&t[..k], bbox);
                let a = lower.eval(&u).unwrap_or(f64::NAN).max(-bbox);
                let b = upper.eval(&u).unwrap_or(f64::NAN).min(bbox);
                u.push(a + (b - a) * t[k]);
                u
            }
        }
    }

    /// Distance to the boundary, following the wall recursion: wall gaps are
    /// corrected by the wall's `1/sqrt(1 + M^2)` and the base-boundary distance
    /// is carried up unchanged. `d(x, {}) = 1` when the boundary is empty.
    pub fn boundary_distance(&self, x: &[f64], wall_l: &dyn Fn(&Wall) -> f64) -> f64 {
        let d = self.boundary_distance_inner(x, wall_l);
        if d.is_finite() {
            d
        } else {
            1.0
        }
    }

    fn boundary_distance_inner(&self, x: &[f64], wall_l: &dyn Fn(&Wall) -> f64) -> f64 {
        match self {
            OpenCellDesc::Interval { lo, hi } => (x[0] - lo_f64(lo)).min(hi_f64(hi) - x[0]).max(0.0),
            OpenCellDesc::Slab { base, lower, upper } => {
                let k = base.dim();
                let mut d = base.boundary_distance_inner(&x[..k], wall_l);
                for w in [lower, upper] {
                    if let Ok(v) = w.eval(&x[..k]) {
                        if v.is_finite() {
                            d = d.min(wall_l(w) * (x[k] - v).abs());
                        }
                    }
                }
                d
            }
        }
    }

    /// Whether the closure is an axis-aligned box (all walls constant).
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            OpenCellDesc::Interval { lo, hi } => Some((vec![lo_f64(lo)], vec![hi_f64(hi)])),
            OpenCellDesc::Slab { base, lower, upper } => {
                let (mut lo, mut hi) = base.as_box()?;
                lo.push(lower.constant_value()?);
                hi.push(upper.constant_value()?);
                Some((lo, hi))
            }
        }
    }

    /// Walls as a list, innermost first (used for Lipschitz corrections).
    pub fn walls(&self) -> Vec<&Wall> {
        match self {
            OpenCellDesc::Interval { .. } => Vec::new(),
            OpenCellDesc::Slab { base, lower, upper } => {
                let mut v = base.walls();
                v.push(lower);
                v.push(upper);
                v
            }
        }
    }

    /// Sample interior points on the graded grid of the given level.
    pub fn sample(&self, level: usize, bbox: f64) -> Vec<Vec<f64>> {
        graded_params(self.dim(), level)
            .into_iter()
            .map(|t| self.param_point(&t, bbox))
            .filter(|u| u.iter().all(|v| v.is_finite()))
            .collect()
    }
}

/// Graph cell `{(u, w): u in base, w = phi(u)}`, in coordinates permuted so
/// that frame coordinate `i` is ambient coordinate `perm[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphCellDesc {
    n: usize,
    base: OpenCellDesc,
    graph_map: Vec<ExprFn>,
    perm: Vec<usize>,
}

impl GraphCellDesc {
    pub fn new(n: usize, base: OpenCellDesc, graph_map: Vec<ExprFn>, perm: Vec<usize>) -> Result<Self> {
        let m = base.dim();
        if m > n || graph_map.len() != n - m {
            return Err(Error::StratificationInvalid(format!(
                "graph cell of dimension {m} in R^{n} needs {} map components, got {}",
                n.saturating_sub(m),
                graph_map.len()
            )));
        }
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::StratificationInvalid(format!("{perm:?} is not a permutation of 0..{n}")));
        }
        for f in &graph_map {
            if f.arity() != m {
                return Err(Error::ArityMismatch { expected: m, got: f.arity() });
            }
        }
        base.validate()?;
        Ok(GraphCellDesc { n, base, graph_map, perm })
    }

    /// Open cell in its own space (no graph map, identity permutation).
    pub fn open(base: OpenCellDesc) -> Result<Self> {
        let n = base.dim();
        GraphCellDesc::new(n, base, Vec::new(), (0..n).collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn base(&self) -> &OpenCellDesc {
        &self.base
    }

    pub fn graph_map(&self) -> &[ExprFn] {
        &self.graph_map
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn is_open(&self) -> bool {
        self.dim() == self.n
    }

    /// Ambient point to frame coordinates `(u, w)`.
    pub fn to_frame<T: Clone>(&self, x: &[T]) -> Vec<T> {
        self.perm.iter().map(|&p| x[p].clone()).collect()
    }

    pub fn from_frame<T: Clone>(&self, y: &[T]) -> Vec<T> {
        let mut x = y.to_vec();
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i].clone();
        }
        x
    }

    pub fn phi(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.graph_map.iter().map(|f| f.evaluate(u)).collect()
    }

    pub fn phi_generic<T: Numeric>(&self, u: &[T]) -> Result<Vec<T>> {
        self.graph_map.iter().map(|f| f.evaluate_generic(u)).collect()
    }

    /// The point `(u, phi(u))` in ambient coordinates.
    pub fn embed(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut y = u.to_vec();
        y.extend(self.phi(u)?);
        Ok(self.from_frame(&y))
    }

    /// Membership; for proper graph cells "inside" means on the graph within `tau`.
    pub fn contains(&self, x: &[f64], tau: f64) -> Membership {
        let y = self.to_frame(x);
        let m = self.dim();
        let inner = self.base.contains(&y[..m], tau);
        if inner == Membership::Outside || self.is_open() {
            return inner;
        }
        let Ok(phi) = self.phi(&y[..m]) else {
            return Membership::Boundary;
        };
        let gap = norm(&y[m..].iter().zip(&phi).map(|(a, b)| a - b).collect::<Vec<_>>());
        if gap > tau {
            Membership::Outside
        } else {
            inner
        }
    }

    /// `|w - phi(u)|` for ambient `x`, or `None` when `u` is outside the base.
    pub fn vertical_gap(&self, x: &[f64], tau: f64) -> Option<f64> {
        let y = self.to_frame(x);
        let m = self.dim();
        if self.base.contains(&y[..m], tau) != Membership::Inside {
            return None;
        }
        let phi = self.phi(&y[..m]).ok()?;
        Some(norm(&y[m..].iter().zip(&phi).map(|(a, b)| a - b).collect::<Vec<_>>()))
    }

    /// Parameterization of the closure by the unit cube, ambient coordinates.
    pub fn param_exprs(&self, bbox: f64) -> Vec<Expr> {
        let mut y = self.base.param_exprs(bbox);
        let phis: Vec<Expr> = self.graph_map.iter().map(|f| f.root().substitute(&y)).collect();
        y.extend(phis);
        self.from_frame(&y)
    }

    /// Closure as an axis box (constant walls and constant graph map).
    pub fn as_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let (mut lo, mut hi) = self.base.as_box()?;
        for f in &self.graph_map {
            let c = rational_to_f64(f.root().as_constant()?);
            lo.push(c);
            hi.push(c);
        }
        Some((self.from_frame(&lo), self.from_frame(&hi)))
    }

    pub fn sample(&self, level: usize, bbox: f64) -> Vec<Vec<f64>> {
        self.base
            .sample(level, bbox)
            .into_iter()
            .filter_map(|u| self.embed(&u).ok())
            .collect()
    }

    /// Pieces whose union is the boundary `closure \ cell` (finite part only).
    pub fn boundary_pieces(&self, bbox: f64) -> Result<Vec<SetPiece>> {
        let m = self.dim();
        let eval_at = |e: &Expr, u: &[f64]| -> Result<f64> { e.eval_f64(u) };
        match &self.base {
            OpenCellDesc::Interval { lo, hi } => {
                let mut out = Vec::new();
                for end in [lo, hi].into_iter().flatten() {
                    let u = [rational_to_f64(end)];
                    let mut y = u.to_vec();
                    for f in &self.graph_map {
                        y.push(eval_at(f.root(), &u).or_else(|_| eval_limit(f.root(), &u))?);
                    }
                    out.push(SetPiece::Point(self.from_frame(&y)));
                }
                Ok(out)
            }
            OpenCellDesc::Slab { base, lower, upper } if m == 2 => {
                let OpenCellDesc::Interval { lo, hi } = base.as_ref() else {
                    return Err(Error::UnsupportedDescriptor("boundary of a nested slab".into()));
                };
                let mut out = Vec::new();
                // graphs of the two walls, lifted through phi
                for w in [lower, upper] {
                    let Wall::Fn(psi) = w else { continue };
                    let u0 = Expr::var(0);
                    let args = [u0.clone(), psi.root().clone()];
                    let mut maps = vec![psi.clone()];
                    for f in &self.graph_map {
                        maps.push(ExprFn::new(1, f.root().substitute(&args))?);
                    }
                    let cell = GraphCellDesc::new(self.n, (**base).clone(), maps, self.perm.clone())?;
                    out.push(SetPiece::cell(Arc::new(cell), bbox));
                }
                // vertical sides over the interval ends
                for end in [lo, hi].into_iter().flatten() {
                    let a = rational_to_f64(end);
                    let (l, u) = (
                        lower.eval(&[a]).or_else(|_| wall_limit(lower, a))?.max(-bbox),
                        upper.eval(&[a]).or_else(|_| wall_limit(upper, a))?.min(bbox),
                    );
                    if l >= u {
                        // degenerate side: already inside the wall closures
                        continue;
                    }
                    let side_base = OpenCellDesc::interval(l, u);
                    let mut maps = vec![ExprFn::new(1, Expr::Const(end.clone()))?];
                    for f in &self.graph_map {
                        maps.push(ExprFn::new(1, f.root().substitute(&[Expr::Const(end.clone()), Expr::var(0)]))?);
                    }
                    // frame of the side: (t, a, phi...) -> the free coordinate is frame index 1
                    let mut perm = vec![self.perm[1], self.perm[0]];
                    perm.extend_from_slice(&self.perm[2..]);
                    let cell = GraphCellDesc::new(self.n, side_base, maps, perm)?;
                    out.push(SetPiece::cell(Arc::new(cell), bbox));
                }
                Ok(out)
            }
            _ => Err(Error::UnsupportedDescriptor(format!("boundary of a {m}-dimensional cell"))),
        }
    }
}

fn eval_limit(e: &Expr, u: &[f64]) -> Result<f64> {
    // one-sided limit for walls singular exactly at a closure point
    for s in [1.0, -1.0] {
        if let Ok(v) = e.eval_f64(&[u[0] + s * 1e-12]) {
            return Ok(v);
        }
    }
    e.eval_f64(u)
}

fn wall_limit(w: &Wall, a: f64) -> Result<f64> {
    match w {
        Wall::Fn(f) => eval_limit(f.root(), &[a]),
        other => other.eval(&[a]),
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Parameter values in `(0, 1)`: a uniform grid plus dyadic points crowding
/// both ends. Higher levels double the grid and the boundary depth.
pub fn graded_ticks(level: usize) -> Vec<f64> {
    let n = 8usize << level;
    let depth = 6 * (level + 1);
    let mut ts: Vec<f64> = (1..n).map(|i| i as f64 / n as f64).collect();
    for j in 1..=depth {
        let s = 0.5f64.powi(j as i32);
        ts.push(s);
        ts.push(1.0 - s);
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts
}

/// Tensor product of [`graded_ticks`].
pub fn graded_params(dim: usize, level: usize) -> Vec<Vec<f64>> {
    let ticks = graded_ticks(level);
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                ticks.iter().map(move |&t| {
                    let mut q = p.clone();
                    q.push(t);
                    q
                })
            })
            .collect();
    }
    out
}

/// Closure of a cell parameterized by `[0, 1]^d`, with symbolic derivatives.
#[derive(Debug)]
pub struct Patch {
    n: usize,
    d: usize,
    comps: Vec<Expr>,
    jac: Vec<Vec<Expr>>,
    hess: Vec<Vec<Vec<Expr>>>,
}

struct PatchEval {
    p: Vec<f64>,
    jac: Vec<Vec<f64>>,
    hess: Vec<Vec<Vec<f64>>>,
}

impl Patch {
    pub fn new(comps: Vec<Expr>, d: usize) -> Patch {
        let jac: Vec<Vec<Expr>> = comps.iter().map(|c| (0..d).map(|j| c.partial(j)).collect()).collect();
        let hess = jac
            .iter()
            .map(|row| row.iter().map(|g| (0..d).map(|k| g.partial(k)).collect()).collect())
            .collect();
        Patch { n: comps.len(), d, comps, jac, hess }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, t: &[f64]) -> Result<Vec<f64>> {
        self.comps.iter().map(|c| c.eval_f64(t)).collect()
    }

    fn eval(&self, t: &[f64]) -> Result<PatchEval> {
        let try_at = |t: &[f64]| -> Result<PatchEval> {
            Ok(PatchEval {
                p: self.point(t)?,
                jac: self.jac.iter().map(|r| r.iter().map(|e| e.eval_f64(t)).collect()).collect::<Result<_>>()?,
                hess: self
                    .hess
                    .iter()
                    .map(|m| m.iter().map(|r| r.iter().map(|e| e.eval_f64(t)).collect()).collect())
                    .collect::<Result<_>>()?,
            })
        };
        try_at(t).or_else(|_| {
            let nudged: Vec<f64> = t.iter().map(|v| v.clamp(1e-10, 1.0 - 1e-10)).collect();
            try_at(&nudged)
        })
    }
}

/// One piece of a closed set descriptor.
#[derive(Clone, Debug)]
pub enum SetPiece {
    Point(Vec<f64>),
    /// Closed axis box; infinite bounds allowed.
    AxisBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Closure of a cell.
    Cell { cell: Arc<GraphCellDesc>, patch: Arc<Patch> },
}

impl SetPiece {
    /// Closure of `cell`; constant cells become axis boxes (closed form).
    pub fn cell(cell: Arc<GraphCellDesc>, bbox: f64) -> SetPiece {
        if let Some((lo, hi)) = cell.as_box() {
            let degenerate = lo.iter().zip(&hi).all(|(a, b)| a == b);
            if degenerate {
                return SetPiece::Point(lo);
            }
            return SetPiece::AxisBox { lo, hi };
        }
        let d = cell.dim();
        let patch = Arc::new(Patch::new(cell.param_exprs(bbox), d));
        SetPiece::Cell { cell, patch }
    }

    pub fn dim_hint(&self) -> usize {
        match self {
            SetPiece::Point(_) => 0,
            SetPiece::AxisBox { lo, hi } => lo.iter().zip(hi).filter(|(a, b)| a != b).count(),
            SetPiece::Cell { cell, .. } => cell.dim(),
        }
    }
}

/// Distance bracket `lower <= d <= upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bracket {
    pub lower: f64,
    pub upper: f64,
}

impl Bracket {
    pub fn exact(v: f64) -> Bracket {
        Bracket { lower: v, upper: v }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

/// Knobs for bracketed distance computation.
#[derive(Clone, Copy, Debug)]
pub struct DistanceOpts {
    /// Seed grid resolution per parameter dimension.
    pub grid: usize,
    /// Target bracket width.
    pub tol: f64,
    /// Branch-and-bound box budget.
    pub max_boxes: usize,
}

impl Default for DistanceOpts {
    fn default() -> Self {
        DistanceOpts { grid: 8, tol: 1e-9, max_boxes: 20_000 }
    }
}

/// Closed set given as a finite union of pieces. The empty set has `d = 1`.
#[derive(Clone, Debug, Default)]
pub struct SetDesc {
    pieces: Vec<SetPiece>,
}

impl SetDesc {
    pub fn empty() -> SetDesc {
        SetDesc::default()
    }

    pub fn new(pieces: Vec<SetPiece>) -> SetDesc {
        SetDesc { pieces }
    }

    pub fn points(points: Vec<Vec<f64>>) -> SetDesc {
        SetDesc { pieces: points.into_iter().map(SetPiece::Point).collect() }
    }

    pub fn cell_closure(cell: Arc<GraphCellDesc>, bbox: f64) -> SetDesc {
        SetDesc { pieces: vec![SetPiece::cell(cell, bbox)] }
    }

    pub fn pieces(&self) -> &[SetPiece] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn union(mut self, other: SetDesc) -> SetDesc {
        self.pieces.extend(other.pieces);
        self
    }

    pub fn push(&mut self, piece: SetPiece) {
        self.pieces.push(piece);
    }

    /// Bracketed distance with default options; never fails (returns the
    /// widest bracket reached if the budget runs out).
    pub fn distance(&self, x: &[f64]) -> Bracket {
        self.distance_bracket(x, &DistanceOpts::default(), None)
    }

    /// Bracketed distance, failing when the bracket is wider than `opts.tol`.
    pub fn set_distance(&self, x: &[f64], opts: &DistanceOpts) -> Result<Bracket> {
        let b = self.distance_bracket(x, opts, None);
        if b.width() > opts.tol {
            return Err(Error::ConvergenceFailure { lower: b.lower, upper: b.upper, tol: opts.tol });
        }
        Ok(b)
    }

    /// Bracketed distance; `hint` is a parameter vector for cell pieces to seed
    /// the search with.
    pub fn distance_bracket(&self, x: &[f64], opts: &DistanceOpts, hint: Option<&[f64]>) -> Bracket {
        if self.pieces.is_empty() {
            return Bracket::exact(1.0);
        }
        let mut best = Bracket { lower: f64::INFINITY, upper: f64::INFINITY };
        for piece in &self.pieces {
            let b = match piece {
                SetPiece::Point(a) => Bracket::exact(dist(a, x)),
                SetPiece::AxisBox { lo, hi } => Bracket::exact(box_distance(lo, hi, x)),
                SetPiece::Cell { patch, .. } => patch_distance(patch, x, opts, hint, best.upper),
            };
            best.lower = best.lower.min(b.lower);
            best.upper = best.upper.min(b.upper);
        }
        best
    }

    /// Sample points of the set (interior of each piece, graded toward ends).
    pub fn sample(&self, level: usize, bbox: f64) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for piece in &self.pieces {
            match piece {
                SetPiece::Point(a) => out.push(a.clone()),
                SetPiece::AxisBox { lo, hi } => {
                    let free: Vec<usize> = (0..lo.len()).filter(|&i| lo[i] != hi[i]).collect();
                    for t in graded_params(free.len(), level) {
                        let mut p = lo.clone();
                        for (k, &i) in free.iter().enumerate() {
                            let (a, b) = (lo[i].max(-bbox), hi[i].min(bbox));
                            p[i] = a + (b - a) * t[k];
                        }
                        out.push(p);
                    }
                }
                SetPiece::Cell { cell, .. } => out.extend(cell.sample(level, bbox)),
            }
        }
        out
    }
}

pub fn box_distance(lo: &[f64], hi: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() {
        let e = (lo[i] - x[i]).max(x[i] - hi[i]).max(0.0);
        s += e * e;
    }
    s.sqrt()
}

struct BbNode {
    lo: Vec<f64>,
    hi: Vec<f64>,
    lb: f64,
}

impl PartialEq for BbNode {
    fn eq(&self, o: &Self) -> bool {
        self.lb.total_cmp(&o.lb) == Ordering::Equal
    }
}
impl Eq for BbNode {}
impl PartialOrd for BbNode {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for BbNode {
    // min-heap on the lower bound
    fn cmp(&self, o: &Self) -> Ordering {
        o.lb.total_cmp(&self.lb)
    }
}

fn sq_dist_terms(ev: &PatchEval, x: &[f64]) -> (f64, Vec<f64>, f64) {
    let d = ev.jac.first().map_or(0, Vec::len);
    let r: Vec<f64> = ev.p.iter().zip(x).map(|(p, xi)| p - xi).collect();
    let s: f64 = r.iter().map(|v| v * v).sum();
    let mut g = vec![0.0; d];
    let mut h = vec![vec![0.0; d]; d];
    for i in 0..r.len() {
        for j in 0..d {
            g[j] += 2.0 * r[i] * ev.jac[i][j];
            for k in 0..d {
                h[j][k] += 2.0 * (ev.jac[i][j] * ev.jac[i][k] + r[i] * ev.hess[i][j][k]);
            }
        }
    }
    let hn = h.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    (s, g, hn)
}

/// Branch-and-bound minimization of `|x - P(t)|^2` over the unit cube with a
/// second-order lower bound per box.
fn patch_distance(patch: &Patch, x: &[f64], opts: &DistanceOpts, hint: Option<&[f64]>, cap: f64) -> Bracket {
    let d = patch.d;
    if d == 0 {
        return patch.point(&[]).map(|p| Bracket::exact(dist(&p, x))).unwrap_or(Bracket::exact(f64::INFINITY));
    }
    let mut ub = f64::INFINITY;
    let mut best_t = vec![0.5; d];
    let mut consider = |t: &[f64], ub: &mut f64, best_t: &mut Vec<f64>| -> Option<PatchEval> {
        let ev = patch.eval(t).ok()?;
        let s: f64 = ev.p.iter().zip(x).map(|(p, xi)| (p - xi) * (p - xi)).sum();
        if s < *ub {
            *ub = s;
            *best_t = t.to_vec();
        }
        Some(ev)
    };
    let make_node = |lo: Vec<f64>, hi: Vec<f64>, ub: &mut f64, best_t: &mut Vec<f64>, consider: &mut dyn FnMut(&[f64], &mut f64, &mut Vec<f64>) -> Option<PatchEval>| -> BbNode {
        let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let r = norm(&lo.iter().zip(&hi).map(|(a, b)| 0.5 * (b - a)).collect::<Vec<_>>());
        let Some(ev) = consider(&c, ub, best_t) else {
            return BbNode { lo, hi, lb: 0.0 };
        };
        let (s, g, mut hn) = sq_dist_terms(&ev, x);
        for corner in 0..(1usize << d) {
            let t: Vec<f64> = (0..d).map(|j| if corner >> j & 1 == 1 { hi[j] } else { lo[j] }).collect();
            if let Ok(evc) = patch.eval(&t) {
                hn = hn.max(sq_dist_terms(&evc, x).2);
            }
        }
        let lb = (s - norm(&g) * r - 0.5 * 1.25 * hn * r * r).max(0.0);
        BbNode { lo, hi, lb }
    };

    let n = opts.grid.max(1);
    let mut heap = BinaryHeap::new();
    for cell in graded_cells(d, n) {
        let (lo, hi) = cell;
        heap.push(make_node(lo, hi, &mut ub, &mut best_t, &mut consider));
    }
    for corner in 0..(1usize << d) {
        let t: Vec<f64> = (0..d).map(|j| (corner >> j & 1) as f64).collect();
        consider(&t, &mut ub, &mut best_t);
    }
    if let Some(h) = hint {
        consider(h, &mut ub, &mut best_t);
        let polished = gauss_newton(patch, x, h);
        consider(&polished, &mut ub, &mut best_t);
    }
    let start = best_t.clone();
    let polished = gauss_newton(patch, x, &start);
    consider(&polished, &mut ub, &mut best_t);

    let cap_s = if cap.is_finite() { cap * cap } else { f64::INFINITY };
    let mut boxes = heap.len();
    let mut lower_s = 0.0;
    let mut polish_at = 64;
    while let Some(node) = heap.pop() {
        lower_s = node.lb;
        // another piece is already closer than anything in this patch
        if lower_s >= cap_s {
            break;
        }
        if ub.sqrt() - lower_s.sqrt() <= opts.tol || boxes >= opts.max_boxes {
            break;
        }
        let j = (0..d)
            .max_by(|&a, &b| (node.hi[a] - node.lo[a]).total_cmp(&(node.hi[b] - node.lo[b])))
            .unwrap_or(0);
        let mid = 0.5 * (node.lo[j] + node.hi[j]);
        let (mut hi1, mut lo2) = (node.hi.clone(), node.lo.clone());
        hi1[j] = mid;
        lo2[j] = mid;
        for (lo, hi) in [(node.lo.clone(), hi1), (lo2, node.hi.clone())] {
            let child = make_node(lo, hi, &mut ub, &mut best_t, &mut consider);
            boxes += 1;
            if child.lb < ub {
                heap.push(child);
            }
        }
        if boxes >= polish_at {
            polish_at *= 2;
            let start = best_t.clone();
            let polished = gauss_newton(patch, x, &start);
            consider(&polished, &mut ub, &mut best_t);
        }
        if heap.is_empty() {
            lower_s = ub;
        }
    }
    if heap.is_empty() && lower_s < ub && ub.sqrt() - lower_s.sqrt() > opts.tol {
        // everything pruned: the bound is the incumbent
        lower_s = lower_s.max(0.0);
    }
    Bracket { lower: lower_s.max(0.0).sqrt().min(ub.sqrt()), upper: ub.sqrt() }
}

fn graded_cells(d: usize, n: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut out = vec![(Vec::new(), Vec::new())];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|(lo, hi)| {
                (0..n).map(move |i| {
                    let mut l = lo.clone();
                    let mut h = hi.clone();
                    l.push(i as f64 / n as f64);
                    h.push((i + 1) as f64 / n as f64);
                    (l, h)
                })
            })
            .collect();
    }
    out
}

/// Projected Levenberg-Marquardt on `|x - P(t)|^2`.
fn gauss_newton(patch: &Patch, x: &[f64], start: &[f64]) -> Vec<f64> {
    let d = patch.d;
    let mut t = start.to_vec();
    let Ok(mut ev) = patch.eval(&t) else { return t };
    let mut s: f64 = ev.p.iter().zip(x).map(|(p, xi)| (p - xi) * (p - xi)).sum();
    let mut mu = 1e-9;
    for _ in 0..60 {
        let j = DMatrix::from_fn(patch.n, d, |i, k| ev.jac[i][k]);
        let r = DVector::from_iterator(patch.n, x.iter().zip(&ev.p).map(|(xi, p)| xi - p));
        let a = j.transpose() * &j + DMatrix::identity(d, d) * mu;
        let Some(step) = a.lu().solve(&(j.transpose() * r)) else { break };
        let cand: Vec<f64> = t.iter().zip(step.iter()).map(|(a, b)| (a + b).clamp(0.0, 1.0)).collect();
        match patch.eval(&cand) {
            Ok(evc) => {
                let sc: f64 = evc.p.iter().zip(x).map(|(p, xi)| (p - xi) * (p - xi)).sum();
                if sc < s {
                    let moved = norm(&cand.iter().zip(&t).map(|(a, b)| a - b).collect::<Vec<_>>());
                    t = cand;
                    ev = evc;
                    s = sc;
                    mu = (mu * 0.3).max(1e-12);
                    if moved < 1e-15 {
                        break;
                    }
                } else {
                    mu *= 10.0;
                }
            }
            Err(_) => mu *= 10.0,
        }
        if mu > 1e12 {
            break;
        }
    }
    t
}

/// Empirical regularity constants for one multi-index.
#[derive(Clone, Debug, Serialize)]
pub struct RegularityEntry {
    pub alpha: Vec<u32>,
    /// max |D^alpha f(x)| d(x, boundary)^(|alpha| - 1), finest level.
    pub c_hat: f64,
    /// Same on the coarser level.
    pub c_hat_coarse: f64,
    pub ratio: f64,
    pub witness: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularityVerdict {
    PlausiblyRegular,
    UnboundedSuspicion { alpha: Vec<u32>, witness: Vec<f64> },
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    pub entries: Vec<RegularityEntry>,
    pub samples: usize,
    pub skipped_singular: usize,
    pub verdict: RegularityVerdict,
}

/// Sampling probe of `|D^alpha f| <= C / d(x, boundary)^(|alpha| - 1)` for
/// `1 <= |alpha| <= order`, on two refinement levels (`level`, `level + 1`).
pub fn check_lambda_regular(f: &ExprFn, omega: &OpenCellDesc, order: u32, level: usize, bbox: f64) -> Result<RegularityReport> {
    if f.arity() != omega.dim() {
        return Err(Error::ArityMismatch { expected: omega.dim(), got: f.arity() });
    }
    let wall_l = |w: &Wall| -> f64 {
        match (w, omega) {
            (Wall::Fn(psi), OpenCellDesc::Slab { .. }) => {
                let base = wall_base(omega, psi.arity());
                base.map_or(1.0, |b| lipschitz_estimate(std::slice::from_ref(psi), b, 1, bbox).map_or(1.0, |r| r.l_hat))
            }
            _ => 1.0,
        }
    };
    let alphas: Vec<MultiIndex> = MultiIndex::all_up_to(f.arity(), order).into_iter().filter(|a| a.degree() >= 1).collect();
    let derivs: Vec<ExprFn> = alphas.iter().map(|a| f.differentiate(a.exponents())).collect::<Result<_>>()?;
    let mut per_level = Vec::new();
    let mut samples = 0;
    let mut skipped = 0;
    for lvl in [level, level + 1] {
        let pts = omega.sample(lvl, bbox);
        samples = pts.len();
        let mut best = vec![(0.0f64, Vec::new()); alphas.len()];
        for x in &pts {
            let d = omega.boundary_distance(x, &wall_l);
            for (k, (a, df)) in alphas.iter().zip(&derivs).enumerate() {
                match df.evaluate(x) {
                    Ok(v) => {
                        let c = v.abs() * d.powi(a.degree() as i32 - 1);
                        if c > best[k].0 {
                            best[k] = (c, x.clone());
                        }
                    }
                    Err(_) => skipped += 1,
                }
            }
        }
        per_level.push(best);
    }
    let mut entries = Vec::new();
    let mut verdict = RegularityVerdict::PlausiblyRegular;
    for (k, a) in alphas.iter().enumerate() {
        let (coarse, _) = &per_level[0][k];
        let (fine, witness) = &per_level[1][k];
        let ratio = stability_ratio(*coarse, *fine);
        if ratio >= 2.0 && verdict == RegularityVerdict::PlausiblyRegular {
            verdict = RegularityVerdict::UnboundedSuspicion { alpha: a.exponents().to_vec(), witness: witness.clone() };
        }
        entries.push(RegularityEntry {
            alpha: a.exponents().to_vec(),
            c_hat: *fine,
            c_hat_coarse: *coarse,
            ratio,
            witness: witness.clone(),
        });
    }
    Ok(RegularityReport { entries, samples, skipped_singular: skipped, verdict })
}

fn wall_base(cell: &OpenCellDesc, arity: usize) -> Option<&OpenCellDesc> {
    match cell {
        OpenCellDesc::Slab { base, .. } if base.dim() == arity => Some(base),
        OpenCellDesc::Slab { base, .. } => wall_base(base, arity),
        OpenCellDesc::Interval { .. } => None,
    }
}

/// Ratio of the fine-level to the coarse-level constant (1 when both vanish).
pub fn stability_ratio(coarse: f64, fine: f64) -> f64 {
    if fine <= 1e-300 && coarse <= 1e-300 {
        1.0
    } else if coarse <= 1e-300 {
        f64::INFINITY
    } else {
        fine / coarse
    }
}

/// Empirical Lipschitz constant `M` and `L = 1 / sqrt(1 + M^2)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LipschitzReport {
    pub m_hat: f64,
    pub l_hat: f64,
    pub samples: usize,
}

/// Largest sampled operator norm of the Jacobian of `phi` over `base`.
pub fn lipschitz_estimate(phi: &[ExprFn], base: &OpenCellDesc, level: usize, bbox: f64) -> Result<LipschitzReport> {
    let m = base.dim();
    if phi.is_empty() {
        return Ok(LipschitzReport { m_hat: 0.0, l_hat: 1.0, samples: 0 });
    }
    let jac: Vec<Vec<ExprFn>> = phi
        .iter()
        .map(|f| (0..m).map(|j| f.differentiate(MultiIndex::unit(m, j).exponents())).collect())
        .collect::<Result<_>>()?;
    let pts = base.sample(level, bbox);
    let mut m_hat: f64 = 0.0;
    for u in &pts {
        let mut j = DMatrix::zeros(phi.len(), m);
        for (r, row) in jac.iter().enumerate() {
            for (c, e) in row.iter().enumerate() {
                j[(r, c)] = e.evaluate(u)?;
            }
        }
        m_hat = m_hat.max(spectral_norm(&j));
    }
    Ok(LipschitzReport { m_hat, l_hat: 1.0 / (1.0 + m_hat * m_hat).sqrt(), samples: pts.len() })
}

pub fn spectral_norm(j: &DMatrix<f64>) -> f64 {
    if j.is_empty() {
        return 0.0;
    }
    let jt = j.transpose() * j;
    jt.symmetric_eigenvalues().iter().fold(0.0f64, |m, &v| m.max(v)).max(0.0).sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichViolation {
    pub x: Vec<f64>,
    pub inequality: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SandwichReport {
    pub l_hat: f64,
    pub in_cylinder: usize,
    pub off_cylinder: usize,
    /// Largest `| d(x, S) - |w - phi(u)| |` seen inside the cylinder.
    pub max_upper_gap: f64,
    pub violations: Vec<SandwichViolation>,
}

/// Checks `L |w - phi(u)| <= d(x, S) <= |w - phi(u)|` over the cylinder and
/// `d(x, S) >= L d(x, boundary of S)` off it, using bracketed distances.
pub fn distance_sandwich_check(
    cell: &Arc<GraphCellDesc>,
    samples: &[Vec<f64>],
    lip: &LipschitzReport,
    eps: f64,
    bbox: f64,
) -> Result<SandwichReport> {
    let closure = SetDesc::cell_closure(cell.clone(), bbox);
    let boundary = SetDesc::new(cell.boundary_pieces(bbox)?);
    let opts = DistanceOpts { tol: 1e-10, max_boxes: 50_000, ..DistanceOpts::default() };
    let mut report = SandwichReport { l_hat: lip.l_hat, in_cylinder: 0, off_cylinder: 0, max_upper_gap: 0.0, violations: Vec::new() };
    let m = cell.dim();
    for x in samples {
        match cell.vertical_gap(x, 0.0) {
            Some(gap) => {
                report.in_cylinder += 1;
                let y = cell.to_frame(x);
                let hint = base_param_of(cell.base(), &y[..m], bbox);
                let d = closure.distance_bracket(x, &opts, hint.as_deref());
                report.max_upper_gap = report.max_upper_gap.max((d.upper - gap).abs());
                if lip.l_hat * gap - eps > d.lower {
                    report.violations.push(SandwichViolation { x: x.clone(), inequality: "L|w-phi(u)| <= d(x,S)", lhs: lip.l_hat * gap, rhs: d.lower });
                }
                if d.upper > gap + eps {
                    report.violations.push(SandwichViolation { x: x.clone(), inequality: "d(x,S) <= |w-phi(u)|", lhs: d.upper, rhs: gap });
                }
            }
            None => {
                report.off_cylinder += 1;
                let d = closure.distance_bracket(x, &opts, None);
                let db = boundary.distance_bracket(x, &opts, None);
                if d.lower < lip.l_hat * db.upper - eps {
                    report.violations.push(SandwichViolation { x: x.clone(), inequality: "d(x,S) >= L d(x,dS)", lhs: d.lower, rhs: lip.l_hat * db.upper });
                }
            }
        }
    }
    Ok(report)
}

/// Unit-cube parameter of a base point (inverse of `param_point`).
pub fn base_param_of(base: &OpenCellDesc, u: &[f64], bbox: f64) -> Option<Vec<f64>> {
    match base {
        OpenCellDesc::Interval { lo, hi } => {
            let a = lo_f64(lo).max(-bbox);
            let b = hi_f64(hi).min(bbox);
            Some(vec![((u[0] - a) / (b - a)).clamp(0.0, 1.0)])
        }
        OpenCellDesc::Slab { base, lower, upper } => {
            let k = base.dim();
            let mut t = base_param_of(base, &u[..k], bbox)?;
            let a = lower.eval(&u[..k]).ok()?.max(-bbox);
            let b = upper.eval(&u[..k]).ok()?.min(bbox);
            t.push(((u[k] - a) / (b - a)).clamp(0.0, 1.0));
            Some(t)
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SeparationReport {
    pub m_hat: f64,
    pub m_hat_coarse: f64,
    pub ratio: f64,
    pub simply_separated: bool,
    pub samples_used: usize,
}

/// Sampling probe of `d(x, A n B) <= M d(x, B)` for `x` in `A`, on two levels.
pub fn simply_separated_check(a: &SetDesc, b: &SetDesc, a_cap_b: &SetDesc, level: usize, bbox: f64) -> SeparationReport {
    let mut per_level = Vec::new();
    let mut used = 0;
    for lvl in [level, level + 1] {
        let mut m_hat: f64 = 0.0;
        used = 0;
        for x in a.sample(lvl, bbox) {
            let db = b.distance(&x).upper;
            if db <= 1e-12 {
                continue;
            }
            used += 1;
            let dc = if a_cap_b.is_empty() { 1.0 } else { a_cap_b.distance(&x).upper };
            m_hat = m_hat.max(dc / db);
        }
        per_level.push(m_hat);
    }
    let ratio = stability_ratio(per_level[0], per_level[1]);
    SeparationReport { m_hat: per_level[1], m_hat_coarse: per_level[0], ratio, simply_separated: ratio < 2.0, samples_used: used }
}

/// Shortest-path / chord ratio on a mesh graph sampled inside `cell`.
///
/// Open cells are meshed on a regular grid of the bounding box (nodes kept
/// when inside, edges kept when the midpoint is inside); graph cells are
/// meshed through their parameterization.
pub fn quasi_convexity_probe(cell: &GraphCellDesc, pairs: &[(Vec<f64>, Vec<f64>)], mesh: usize, bbox: f64) -> Result<f64> {
    let (nodes, edges) = if cell.is_open() { open_mesh(cell, mesh, bbox) } else { graph_mesh(cell, mesh, bbox)? };
    let mut g: UnGraph<(), f64> = UnGraph::new_undirected();
    let ids: Vec<NodeIndex> = nodes.iter().map(|_| g.add_node(())).collect();
    for (i, j) in edges {
        g.add_edge(ids[i], ids[j], dist(&nodes[i], &nodes[j]));
    }
    let nearest = |p: &[f64]| -> usize {
        (0..nodes.len()).min_by(|&i, &j| dist(&nodes[i], p).total_cmp(&dist(&nodes[j], p))).expect("non-empty mesh")
    };
    if nodes.is_empty() {
        return Err(Error::MeshDisconnected);
    }
    let mut worst: f64 = 0.0;
    for (a, b) in pairs {
        let chord = dist(a, b);
        if chord == 0.0 {
            worst = worst.max(1.0);
            continue;
        }
        let (ia, ib) = (nearest(a), nearest(b));
        let lengths = dijkstra(&g, ids[ia], Some(ids[ib]), |e| *e.weight());
        let path = *lengths.get(&ids[ib]).ok_or(Error::MeshDisconnected)?;
        let total = path + dist(a, &nodes[ia]) + dist(b, &nodes[ib]);
        worst = worst.max(total / chord);
    }
    Ok(worst)
}

type Mesh = (Vec<Vec<f64>>, Vec<(usize, usize)>);

fn open_mesh(cell: &GraphCellDesc, mesh: usize, bbox: f64) -> Mesh {
    let n = cell.n();
    let samples = cell.base().sample(0, bbox);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for s in &samples {
        for i in 0..n {
            lo[i] = lo[i].min(s[i]);
            hi[i] = hi[i].max(s[i]);
        }
    }
    let k = mesh.max(2);
    let grid = graded_cells_nodes(n, k);
    let mut index = vec![usize::MAX; grid.len()];
    let mut nodes = Vec::new();
    for (gi, t) in grid.iter().enumerate() {
        let x: Vec<f64> = (0..n).map(|i| lo[i] + (hi[i] - lo[i]) * t[i]).collect();
        if cell.contains(&x, 0.0) == Membership::Inside {
            index[gi] = nodes.len();
            nodes.push(x);
        }
    }
    let mut edges = Vec::new();
    let strides: Vec<usize> = (0..n).map(|i| (k + 1).pow(i as u32)).collect();
    for gi in 0..grid.len() {
        if index[gi] == usize::MAX {
            continue;
        }
        for offset in neighbor_offsets(n) {
            let mut gj = gi as i64;
            let mut ok = true;
            for i in 0..n {
                let coord = (gi / strides[i]) % (k + 1);
                let c = coord as i64 + offset[i];
                if c < 0 || c > k as i64 {
                    ok = false;
                    break;
                }
                gj += offset[i] * strides[i] as i64;
            }
            if !ok {
                continue;
            }
            let gj = gj as usize;
            if gj <= gi || index[gj] == usize::MAX {
                continue;
            }
            let (a, b) = (&nodes[index[gi]], &nodes[index[gj]]);
            let mid: Vec<f64> = a.iter().zip(b.iter()).map(|(p, q)| 0.5 * (p + q)).collect();
            if cell.contains(&mid, 0.0) == Membership::Inside {
                edges.push((index[gi], index[gj]));
            }
        }
    }
    (nodes, edges)
}

fn graph_mesh(cell: &GraphCellDesc, mesh: usize, bbox: f64) -> Result<Mesh> {
    let m = cell.dim();
    let k = mesh.max(2);
    let grid = graded_cells_nodes(m, k);
    let mut nodes = Vec::new();
    for t in &grid {
        let t: Vec<f64> = t.iter().map(|v| v.clamp(1e-9, 1.0 - 1e-9)).collect();
        let u = cell.base().param_point(&t, bbox);
        nodes.push(cell.embed(&u)?);
    }
    let strides: Vec<usize> = (0..m).map(|i| (k + 1).pow(i as u32)).collect();
    let mut edges = Vec::new();
    for gi in 0..grid.len() {
        for offset in neighbor_offsets(m) {
            let mut gj = gi as i64;
            let mut ok = true;
            for i in 0..m {
                let c = ((gi / strides[i]) % (k + 1)) as i64 + offset[i];
                if c < 0 || c > k as i64 {
                    ok = false;
                    break;
                }
                gj += offset[i] * strides[i] as i64;
            }
            if ok && (gj as usize) > gi {
                edges.push((gi, gj as usize));
            }
        }
    }
    Ok((nodes, edges))
}

fn graded_cells_nodes(d: usize, k: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..d {
        let mut next = Vec::with_capacity(out.len() * (k + 1));
        for i in 0..=k {
            for p in &out {
                let mut q = p.clone();
                q.push(i as f64 / k as f64);
                next.push(q);
            }
        }
        out = next;
    }
    // reorder so that coordinate 0 varies fastest, matching the strides
    out.sort_by(|a, b| {
        for i in (0..d).rev() {
            match a[i].total_cmp(&b[i]) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        Ordering::Equal
    });
    out
}

fn neighbor_offsets(d: usize) -> Vec<Vec<i64>> {
    let mut out: Vec<Vec<i64>> = vec![Vec::new()];
    for _ in 0..d {
        out = out
            .into_iter()
            .flat_map(|p| {
                [-1i64, 0, 1].into_iter().map(move |o| {
                    let mut q = p.clone();
                    q.push(o);
                    q
                })
            })
            .collect();
    }
    out.retain(|o| o.iter().any(|&v| v != 0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u0() -> Expr {
        Expr::var(0)
    }

    fn parabola() -> Arc<GraphCellDesc> {
        let phi = ExprFn::new(1, Expr::pow(u0(), 2)).unwrap();
        Arc::new(GraphCellDesc::new(2, OpenCellDesc::interval(0.0, 1.0), vec![phi], vec![0, 1]).unwrap())
    }

    fn diagonal() -> Arc<GraphCellDesc> {
        let phi = ExprFn::new(1, u0()).unwrap();
        Arc::new(GraphCellDesc::new(2, OpenCellDesc::interval(0.0, 1.0), vec![phi], vec![0, 1]).unwrap())
    }

    fn triangle() -> GraphCellDesc {
        let upper = Wall::Fn(ExprFn::new(1, u0()).unwrap());
        let lower = Wall::Fn(ExprFn::new(1, Expr::zero()).unwrap());
        GraphCellDesc::open(OpenCellDesc::slab(OpenCellDesc::interval(0.0, 1.0), lower, upper)).unwrap()
    }

    #[test]
    fn membership_examples() {
        let unit = OpenCellDesc::interval(0.0, 1.0);
        assert_eq!(unit.contains(&[0.5], 1e-9), Membership::Inside);
        assert_eq!(unit.contains(&[1.0], 1e-9), Membership::Boundary);
        assert_eq!(parabola().contains(&[0.5, 0.25], 1e-9), Membership::Inside);
        assert_eq!(parabola().contains(&[0.5, 0.3], 1e-9), Membership::Outside);
        assert_eq!(parabola().contains(&[0.0, 0.0], 1e-9), Membership::Boundary);
        assert_eq!(triangle().contains(&[0.5, 0.7], 1e-9), Membership::Outside);
        assert_eq!(triangle().contains(&[0.5, 0.2], 1e-9), Membership::Inside);
        assert_eq!(triangle().contains(&[0.5, 0.5], 1e-9), Membership::Boundary);
    }

    #[test]
    fn distance_examples() {
        assert_eq!(SetDesc::empty().distance(&[3.0, 4.0]), Bracket::exact(1.0));
        assert_eq!(SetDesc::points(vec![vec![0.0]]).distance(&[-3.0]), Bracket::exact(3.0));
        let flat = Arc::new(
            GraphCellDesc::new(2, OpenCellDesc::interval(0.0, 1.0), vec![ExprFn::new(1, Expr::ratio(1, 2)).unwrap()], vec![0, 1]).unwrap(),
        );
        let d = SetDesc::cell_closure(flat, DEFAULT_BBOX).distance(&[0.3, 2.0]);
        assert_eq!(d, Bracket::exact(1.5));
    }

    #[test]
    fn diagonal_distance_is_tight() {
        let set = SetDesc::cell_closure(diagonal(), DEFAULT_BBOX);
        let b = set.set_distance(&[0.5, 0.9], &DistanceOpts::default()).unwrap();
        let exact = 0.4 / 2f64.sqrt();
        assert!(b.lower <= exact + 1e-12 && b.upper >= exact - 1e-12, "{b:?}");
        assert!(b.width() < 1e-9);
    }

    #[test]
    fn parabola_distance_matches_dense_sampling() {
        let set = SetDesc::cell_closure(parabola(), DEFAULT_BBOX);
        for x in [[0.2, 0.9], [1.3, 0.2], [-0.4, -0.1], [0.5, 0.25]] {
            let b = set.distance(&x);
            let brute = (0..=200_000)
                .map(|i| {
                    let u = i as f64 / 200_000.0;
                    dist(&[u, u * u], &x)
                })
                .fold(f64::INFINITY, f64::min);
            assert!(b.lower <= brute + 1e-9 && brute <= b.upper + 1e-9, "{x:?}: {b:?} vs {brute}");
            assert!(b.width() < 1e-8, "{b:?}");
        }
    }

    #[test]
    fn lipschitz_examples() {
        let base = OpenCellDesc::interval(0.0, 1.0);
        let c = lipschitz_estimate(&[ExprFn::new(1, Expr::int(3)).unwrap()], &base, 1, DEFAULT_BBOX).unwrap();
        assert_eq!((c.m_hat, c.l_hat), (0.0, 1.0));
        let id = lipschitz_estimate(&[ExprFn::new(1, u0()).unwrap()], &base, 1, DEFAULT_BBOX).unwrap();
        assert!((id.m_hat - 1.0).abs() < 1e-12);
        assert!((id.l_hat - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn regularity_probe_verdicts() {
        let unit = OpenCellDesc::interval(0.0, 1.0);
        let lin = ExprFn::new(1, Expr::int(3) * u0() - Expr::one()).unwrap();
        let rep = check_lambda_regular(&lin, &unit, 2, 0, DEFAULT_BBOX).unwrap();
        assert_eq!(rep.entries[0].c_hat, 3.0);
        assert_eq!(rep.entries[1].c_hat, 0.0);
        assert_eq!(rep.verdict, RegularityVerdict::PlausiblyRegular);

        let three_halves = ExprFn::new(1, u0() * Expr::sqrt(u0())).unwrap();
        let rep = check_lambda_regular(&three_halves, &unit, 2, 0, DEFAULT_BBOX).unwrap();
        assert_eq!(rep.verdict, RegularityVerdict::PlausiblyRegular);
        // analytic bound (3/4) x^(1/2) d(x) <= 3/4
        assert!(rep.entries[1].c_hat <= 0.75);

        let root = ExprFn::new(1, Expr::sqrt(u0())).unwrap();
        let rep = check_lambda_regular(&root, &unit, 1, 0, DEFAULT_BBOX).unwrap();
        assert!(rep.entries[0].ratio > 2.0);
        assert!(matches!(rep.verdict, RegularityVerdict::UnboundedSuspicion { .. }));
    }

    #[test]
    fn separation_examples() {
        let a = SetDesc::new(vec![SetPiece::AxisBox { lo: vec![0.0, 0.0], hi: vec![1.0, 0.0] }]);
        let b = SetDesc::new(vec![SetPiece::AxisBox { lo: vec![0.0, 0.0], hi: vec![0.0, 1.0] }]);
        let cap = SetDesc::points(vec![vec![0.0, 0.0]]);
        let rep = simply_separated_check(&a, &b, &cap, 0, DEFAULT_BBOX);
        assert!((rep.m_hat - 1.0).abs() < 1e-12);
        assert!(rep.simply_separated);

        let tangent = SetDesc::cell_closure(parabola(), DEFAULT_BBOX);
        let axis = SetDesc::new(vec![SetPiece::AxisBox { lo: vec![-1.0, 0.0], hi: vec![2.0, 0.0] }]);
        let rep = simply_separated_check(&tangent, &axis, &cap, 0, DEFAULT_BBOX);
        assert!(!rep.simply_separated, "{rep:?}");

        let inside = simply_separated_check(&cap, &a, &cap, 0, DEFAULT_BBOX);
        assert_eq!(inside.m_hat, 0.0);
    }

    #[test]
    fn quasi_convexity_examples() {
        let square = GraphCellDesc::open(OpenCellDesc::slab(
            OpenCellDesc::interval(0.0, 1.0),
            Wall::Fn(ExprFn::new(1, Expr::zero()).unwrap()),
            Wall::Fn(ExprFn::new(1, Expr::one()).unwrap()),
        ))
        .unwrap();
        let pairs = vec![(vec![0.1, 0.1], vec![0.9, 0.9]), (vec![0.2, 0.8], vec![0.7, 0.3]), (vec![0.5, 0.5], vec![0.5, 0.5])];
        let c = quasi_convexity_probe(&square, &pairs, 40, DEFAULT_BBOX).unwrap();
        assert!((1.0..1.1).contains(&c), "{c}");

        // a valley: the chord between the two rims leaves the cell
        let valley = GraphCellDesc::open(OpenCellDesc::slab(
            OpenCellDesc::interval(-1.0, 1.0),
            Wall::Fn(ExprFn::new(1, Expr::int(-1)).unwrap()),
            Wall::Fn(ExprFn::new(1, Expr::int(4) * Expr::pow(u0(), 2) - Expr::ratio(9, 10)).unwrap()),
        ))
        .unwrap();
        let pairs = vec![(vec![-0.8, 1.5], vec![0.8, 1.5])];
        let c = quasi_convexity_probe(&valley, &pairs, 60, DEFAULT_BBOX).unwrap();
        assert!(c > 1.5 && c < 10.0, "{c}");
        let finer = quasi_convexity_probe(&valley, &pairs, 120, DEFAULT_BBOX).unwrap();
        assert!((finer - c).abs() / c < 0.1);
    }

    #[test]
    fn boundary_of_planar_slab() {
        let cell = triangle();
        let pieces = cell.boundary_pieces(DEFAULT_BBOX).unwrap();
        let bd = SetDesc::new(pieces);
        // centroid of the triangle (0,0),(1,0),(1,1)
        let d = bd.distance(&[2.0 / 3.0, 1.0 / 3.0]);
        let expect = (1.0f64 / 3.0).min((2.0 / 3.0 - 1.0 / 3.0) / 2f64.sqrt());
        assert!((d.upper - expect).abs() < 1e-9, "{d:?} vs {expect}");
    }
}
