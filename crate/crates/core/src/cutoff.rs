//! C^q cutoffs `omega` with `omega = 1` near `W`, support in `G_eta(W, Z)` and
//! `|D^a omega| <= C / d(x, Z)^|a|`.
//!
//! `omega = sigma((r - a) / (b - a))` where `r` is a ratio of regularized
//! distances and `sigma` is a Hermite transition. The thresholds `a < b` are
//! chosen from the comparability constants of the regularized distances so
//! that `r >= b` forces `d(x, W) >= eta d(x, Z)` and `r <= a` follows from
//! `d(x, W) <= rho' d(x, Z)`.

use std::sync::Arc;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{rational_to_f64, ExprFn, Numeric};
use crate::geometry::{
    stability_ratio, Bracket, GraphCellDesc, Membership, OpenCellDesc, SetDesc, SetPiece, DEFAULT_BBOX,
};
use crate::jet::{MultiIndex, PointJet};

/// Points with `d(x, Z)` below this (times the scene scale) are excluded from sampling.
pub const NEAR_Z_EXCLUSION: f64 = 1e-6;

/// Degree `2q + 1` Hermite transition: 1 for `s <= 0`, 0 for `s >= 1`.
#[derive(Clone, Debug)]
pub struct Transition {
    q: u32,
    exact: Vec<BigRational>,
    coeffs: Vec<f64>,
}

fn binomial(n: u32, k: u32) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// The transition profile of smoothness `q >= 1`.
pub fn smooth_transition(q: u32) -> Transition {
    assert!(q >= 1, "transition order must be at least 1");
    let deg = 2 * q + 1;
    // sigma = 1 - sum_{j > q} C(deg, j) s^j (1 - s)^(deg - j)
    let mut exact = vec![BigRational::zero(); deg as usize + 1];
    exact[0] = BigRational::one();
    for j in (q + 1)..=deg {
        let c = binomial(deg, j);
        for i in 0..=(deg - j) {
            let sign = if i % 2 == 0 { BigInt::one() } else { -BigInt::one() };
            let term = &c * binomial(deg - j, i) * sign;
            exact[(j + i) as usize] -= BigRational::from_integer(term);
        }
    }
    let coeffs = exact.iter().map(rational_to_f64).collect();
    Transition { q, exact, coeffs }
}

impl Transition {
    pub fn order(&self) -> u32 {
        self.q
    }

    /// Monomial coefficients of the polynomial piece on `[0, 1]`.
    pub fn coefficients(&self) -> &[BigRational] {
        &self.exact
    }

    pub fn eval(&self, s: f64) -> f64 {
        if s <= 0.0 {
            1.0
        } else if s >= 1.0 {
            0.0
        } else {
            self.coeffs.iter().rev().fold(0.0, |acc, c| acc * s + c)
        }
    }

    /// `k`-th derivative, piecewise.
    pub fn derivative(&self, k: u32, s: f64) -> f64 {
        if s <= 0.0 || s >= 1.0 {
            return if k == 0 { self.eval(s) } else { 0.0 };
        }
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(i, _)| *i as u32 >= k)
            .map(|(i, c)| {
                let i = i as u32;
                let falling: f64 = (0..k).map(|j| (i - j) as f64).product();
                c * falling * s.powi((i - k) as i32)
            })
            .sum()
    }

    pub fn eval_generic<T: Numeric>(&self, s: &T) -> T {
        let v = s.point_value();
        if v <= 0.0 {
            s.from_f64_like(1.0)
        } else if v >= 1.0 {
            s.from_f64_like(0.0)
        } else {
            let mut acc = s.from_f64_like(0.0);
            for c in self.coeffs.iter().rev() {
                acc = acc.mul(s).add(&s.from_f64_like(*c));
            }
            acc
        }
    }
}

/// Smooth per-piece surrogate terms `S_piece ~ d^-k`.
#[derive(Clone, Debug)]
enum Surrogate {
    Point(Vec<f64>),
    /// Graph of `phi` over `(lo, hi)` in a one-dimensional frame.
    Curve { cell: Arc<GraphCellDesc>, lo: f64, hi: f64, dphi: Vec<ExprFn> },
    /// Full-dimensional closure; inside gives `d~ = 0`, outside sums the faces.
    Solid { region: SolidRegion, faces: Vec<Surrogate> },
}

#[derive(Clone, Debug)]
enum SolidRegion {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Cell(Arc<GraphCellDesc>),
}

impl SolidRegion {
    fn contains(&self, x: &[f64]) -> bool {
        match self {
            SolidRegion::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (a, b))| v >= a && v <= b),
            SolidRegion::Cell(c) => c.contains(x, 0.0) != Membership::Outside,
        }
    }
}

enum Term<T> {
    Zero,
    Infinite,
    Finite(T),
}

fn segment_cell(n: usize, free: usize, lo: f64, hi: f64, fixed: &[f64]) -> Result<Arc<GraphCellDesc>> {
    let mut perm = vec![free];
    let mut maps = Vec::new();
    for (i, &v) in fixed.iter().enumerate() {
        if i != free {
            perm.push(i);
            maps.push(ExprFn::new(1, crate::expr::Expr::Const(crate::expr::f64_to_rational(v)))?);
        }
    }
    Ok(Arc::new(GraphCellDesc::new(n, OpenCellDesc::interval(lo, hi), maps, perm)?))
}

fn curve_surrogate(cell: Arc<GraphCellDesc>) -> Result<Surrogate> {
    let OpenCellDesc::Interval { lo, hi } = cell.base() else {
        return Err(Error::UnsupportedDescriptor("curve with a non-interval base".into()));
    };
    let lo = lo.as_ref().map_or(f64::NEG_INFINITY, rational_to_f64);
    let hi = hi.as_ref().map_or(f64::INFINITY, rational_to_f64);
    let dphi = cell.graph_map().iter().map(|f| f.differentiate(&[1])).collect::<Result<_>>()?;
    Ok(Surrogate::Curve { cell, lo, hi, dphi })
}

fn surrogates_of(piece: &SetPiece, n: usize, bbox: f64, out: &mut Vec<Surrogate>) -> Result<()> {
    match piece {
        SetPiece::Point(a) => out.push(Surrogate::Point(a.clone())),
        SetPiece::AxisBox { lo, hi } => {
            let free: Vec<usize> = (0..n).filter(|&i| lo[i] != hi[i]).collect();
            match free.len() {
                0 => out.push(Surrogate::Point(lo.clone())),
                1 if n > 1 => {
                    let i = free[0];
                    out.push(curve_surrogate(segment_cell(n, i, lo[i], hi[i], lo)?)?);
                    for end in [lo[i], hi[i]] {
                        if end.is_finite() {
                            let mut p = lo.clone();
                            p[i] = end;
                            out.push(Surrogate::Point(p));
                        }
                    }
                }
                k if k == n => {
                    let mut faces = Vec::new();
                    if n == 1 {
                        for end in [lo[0], hi[0]] {
                            if end.is_finite() {
                                faces.push(Surrogate::Point(vec![end]));
                            }
                        }
                    } else if n == 2 {
                        for (axis, other) in [(0usize, 1usize), (1, 0)] {
                            for side in [lo[other], hi[other]] {
                                if !side.is_finite() {
                                    continue;
                                }
                                let mut fixed = lo.clone();
                                fixed[other] = side;
                                faces.push(curve_surrogate(segment_cell(2, axis, lo[axis], hi[axis], &fixed)?)?);
                                for end in [lo[axis], hi[axis]] {
                                    if end.is_finite() {
                                        let mut p = fixed.clone();
                                        p[axis] = end;
                                        faces.push(Surrogate::Point(p));
                                    }
                                }
                            }
                        }
                    } else {
                        return Err(Error::UnsupportedDescriptor(format!("solid box in R^{n}")));
                    }
                    out.push(Surrogate::Solid { region: SolidRegion::Box { lo: lo.clone(), hi: hi.clone() }, faces });
                }
                k => return Err(Error::UnsupportedDescriptor(format!("{k}-dimensional box in R^{n}"))),
            }
        }
        SetPiece::Cell { cell, .. } => {
            let m = cell.dim();
            if m == 1 && n > 1 {
                out.push(curve_surrogate(cell.clone())?);
                for b in cell.boundary_pieces(bbox)? {
                    surrogates_of(&b, n, bbox, out)?;
                }
            } else if m == n {
                let mut faces = Vec::new();
                for b in cell.boundary_pieces(bbox)? {
                    surrogates_of(&b, n, bbox, &mut faces)?;
                }
                out.push(Surrogate::Solid { region: SolidRegion::Cell(cell.clone()), faces });
            } else {
                return Err(Error::UnsupportedDescriptor(format!("{m}-dimensional cell in R^{n}")));
            }
        }
    }
    Ok(())
}

fn leaf_count(s: &[Surrogate]) -> usize {
    s.iter()
        .map(|t| match t {
            Surrogate::Solid { faces, .. } => leaf_count(faces),
            _ => 1,
        })
        .sum()
}

/// Soft-min regularized distance `d~ = (sum_pieces S_piece)^(-1/k)`.
#[derive(Clone, Debug)]
pub struct RegularizedDistance {
    n: usize,
    pieces: Vec<Surrogate>,
    k: u32,
    taper: Transition,
    lambda: f64,
    c1: f64,
    c2: f64,
    exact_constants: bool,
}

impl RegularizedDistance {
    /// Builds the surrogate for `desc` in `R^n` with smoothness `q`; the
    /// exponent `k` is even, at least `2(q + 1)`, and large enough that the
    /// soft-min over the pieces loses at most a factor 2.
    pub fn new(desc: &SetDesc, n: usize, q: u32, bbox: f64) -> Result<Self> {
        let mut pieces = Vec::new();
        for piece in desc.pieces() {
            surrogates_of(piece, n, bbox, &mut pieces)?;
        }
        let count = leaf_count(&pieces).max(1);
        let mut k = 2 * (q + 1);
        while (count as f64).powf(1.0 / k as f64) > 2.0 {
            k += 2;
        }
        let mut rd = RegularizedDistance {
            n,
            pieces,
            k,
            taper: smooth_transition(q.max(1)),
            lambda: 1.0,
            c1: 1.0,
            c2: 1.0,
            exact_constants: true,
        };
        if desc.is_empty() {
            return Ok(rd);
        }
        if rd.pieces.iter().all(|p| matches!(p, Surrogate::Point(_))) {
            rd.c1 = (count as f64).powf(-1.0 / k as f64);
        } else {
            let (lo, hi) = rd.sample_ratios(desc, bbox)?;
            rd.c1 = lo / 1.1;
            rd.c2 = hi * 1.1;
            rd.exact_constants = false;
        }
        Ok(rd)
    }

    pub fn exponent(&self) -> u32 {
        self.k
    }

    /// Comparability constants `c1 d <= d~ <= c2 d`.
    pub fn constants(&self) -> (f64, f64) {
        (self.c1, self.c2)
    }

    pub fn constants_exact(&self) -> bool {
        self.exact_constants
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    fn sample_ratios(&self, desc: &SetDesc, bbox: f64) -> Result<(f64, f64)> {
        let base = desc.sample(0, bbox);
        let stride = (base.len() / 40).max(1);
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        for i in 0..self.n {
            for s in [1.0, -1.0] {
                let mut d = vec![0.0; self.n];
                d[i] = s;
                dirs.push(d);
            }
        }
        if self.n == 2 {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            for (a, b) in [(h, h), (h, -h), (-h, h), (-h, -h)] {
                dirs.push(vec![a, b]);
            }
        }
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for y in base.iter().step_by(stride) {
            for dir in &dirs {
                for j in 0..10 {
                    let s = 2f64.powi(1 - j);
                    let x: Vec<f64> = y.iter().zip(dir).map(|(a, b)| a + s * b).collect();
                    let d = desc.distance(&x).mid();
                    if d < 1e-9 {
                        continue;
                    }
                    let Ok(v) = self.eval(&x) else { continue };
                    lo = lo.min(v / d);
                    hi = hi.max(v / d);
                }
            }
        }
        if !lo.is_finite() && hi == 0.0 {
            // every probe landed inside the set (e.g. all of R^n): nothing to compare
            return Ok((1.0, 1.0));
        }
        if !lo.is_finite() || hi == 0.0 {
            return Err(Error::UnsupportedDescriptor("no usable samples for comparability constants".into()));
        }
        Ok((lo, hi))
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.eval_generic(x)
    }

    pub fn eval_generic<T: Numeric>(&self, x: &[T]) -> Result<T> {
        let one = x[0].from_f64_like(1.0);
        if self.pieces.is_empty() {
            return Ok(one);
        }
        let xv: Vec<f64> = x.iter().map(Numeric::point_value).collect();
        match self.sum_terms(&self.pieces, x, &xv)? {
            Term::Infinite => Ok(x[0].from_f64_like(0.0)),
            Term::Zero => Ok(x[0].from_f64_like(f64::INFINITY)),
            Term::Finite(s) => s.powf_like(-1.0 / self.k as f64),
        }
    }

    fn sum_terms<T: Numeric>(&self, pieces: &[Surrogate], x: &[T], xv: &[f64]) -> Result<Term<T>> {
        let mut acc: Option<T> = None;
        for p in pieces {
            match self.term(p, x, xv)? {
                Term::Infinite => return Ok(Term::Infinite),
                Term::Zero => {}
                Term::Finite(t) => acc = Some(match acc { Some(a) => a.add(&t), None => t }),
            }
        }
        Ok(acc.map_or(Term::Zero, Term::Finite))
    }

    fn term<T: Numeric>(&self, piece: &Surrogate, x: &[T], xv: &[f64]) -> Result<Term<T>> {
        let half_k = self.k / 2;
        match piece {
            Surrogate::Point(a) => {
                let mut r2 = x[0].from_f64_like(0.0);
                for (xi, ai) in x.iter().zip(a) {
                    let d = xi.sub(&xi.from_f64_like(*ai));
                    r2 = r2.add(&d.mul(&d));
                }
                if r2.point_value() <= 0.0 {
                    return Ok(Term::Infinite);
                }
                Ok(Term::Finite(r2.powi(half_k).recip()?))
            }
            Surrogate::Solid { region, faces } => {
                if region.contains(xv) {
                    return Ok(Term::Infinite);
                }
                self.sum_terms(faces, x, xv)
            }
            Surrogate::Curve { cell, lo, hi, dphi } => {
                let y = cell.to_frame(x);
                let u = &y[0];
                let uv = u.point_value();
                if uv <= *lo || uv >= *hi {
                    return Ok(Term::Zero);
                }
                let phi = cell.phi_generic(std::slice::from_ref(u))?;
                let slope: Vec<T> = dphi.iter().map(|f| f.evaluate_generic(std::slice::from_ref(u))).collect::<Result<_>>()?;
                // squared distance to the tangent line at (u, phi(u))
                let zero = u.from_f64_like(0.0);
                let (mut vv, mut vt, mut tt) = (zero.clone(), zero.clone(), u.from_f64_like(1.0));
                for ((w, f), t) in y[1..].iter().zip(&phi).zip(&slope) {
                    let v = w.sub(f);
                    vv = vv.add(&v.mul(&v));
                    vt = vt.add(&v.mul(t));
                    tt = tt.add(&t.mul(t));
                }
                let delta2 = vv.sub(&vt.mul(&vt).mul(&tt.recip()?));
                if delta2.point_value() <= 0.0 {
                    return Ok(Term::Infinite);
                }
                let delta = delta2.sqrt()?;
                let scale = delta.mul(&delta.from_f64_like(self.lambda)).recip()?;
                let mut chi = u.from_f64_like(1.0);
                if lo.is_finite() {
                    let s = u.sub(&u.from_f64_like(*lo)).mul(&scale);
                    chi = chi.mul(&u.from_f64_like(1.0).sub(&self.taper.eval_generic(&s)));
                }
                if hi.is_finite() {
                    let s = u.from_f64_like(*hi).sub(u).mul(&scale);
                    chi = chi.mul(&u.from_f64_like(1.0).sub(&self.taper.eval_generic(&s)));
                }
                if chi.point_value() == 0.0 {
                    return Ok(Term::Zero);
                }
                Ok(Term::Finite(chi.mul(&delta2.powi(half_k).recip()?)))
            }
        }
    }
}

/// Conservative membership in `G_eta(W, Z)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GMembership {
    True,
    False,
    Indeterminate,
}

/// `d(x, W) < eta d(x, Z)` decided on distance brackets.
pub fn in_g_eta(x: &[f64], w: &SetDesc, z: &SetDesc, eta: f64, tau: f64) -> Result<GMembership> {
    let dz = z.distance(x);
    if dz.upper <= tau {
        return Err(Error::OnZ(dz.upper));
    }
    let dw = w.distance(x);
    Ok(if dw.upper < eta * dz.lower {
        GMembership::True
    } else if dw.lower >= eta * dz.upper {
        GMembership::False
    } else {
        GMembership::Indeterminate
    })
}

/// Inputs of a cutoff.
#[derive(Clone, Debug)]
pub struct CutoffSpec {
    pub n: usize,
    pub w: SetDesc,
    pub z: SetDesc,
    pub eta: f64,
    /// Requested plateau ratio; derived from the comparability constants if absent.
    pub rho: Option<f64>,
    pub q: u32,
    pub bbox: f64,
}

impl CutoffSpec {
    pub fn new(n: usize, w: SetDesc, z: SetDesc, eta: f64, q: u32) -> Self {
        CutoffSpec { n, w, z, eta, rho: None, q, bbox: DEFAULT_BBOX }
    }
}

/// The assembled cutoff.
#[derive(Clone, Debug)]
pub struct CutoffFn {
    dw: RegularizedDistance,
    dz: RegularizedDistance,
    sigma: Transition,
    w_empty: bool,
    /// Plateau threshold on `r`.
    a: f64,
    /// Outer threshold on `r`.
    b: f64,
    eta: f64,
    rho_prime: f64,
    tau: f64,
}

/// Builds `omega` for `spec`.
pub fn build_cutoff(spec: &CutoffSpec) -> Result<CutoffFn> {
    if !(spec.eta > 0.0) {
        return Err(Error::SlackTooLarge { rho: spec.rho.unwrap_or(0.0), needed: 0.0, outer: spec.eta });
    }
    let dw = RegularizedDistance::new(&spec.w, spec.n, spec.q, spec.bbox)?;
    let dz = RegularizedDistance::new(&spec.z, spec.n, spec.q, spec.bbox)?;
    let (c1w, c2w) = dw.constants();
    let (c1z, c2z) = dz.constants();
    let b = spec.eta * c1w / c2z;
    let a = match spec.rho {
        None => 0.5 * b,
        Some(rho) => {
            let a = rho * c2w / c1z;
            if !(rho > 0.0 && rho < spec.eta) || a >= b {
                return Err(Error::SlackTooLarge { rho, needed: a, outer: b });
            }
            a
        }
    };
    let rho_prime = spec.rho.unwrap_or(a * c1z / c2w);
    Ok(CutoffFn {
        dw,
        dz,
        sigma: smooth_transition(spec.q.max(1)),
        w_empty: spec.w.is_empty(),
        a,
        b,
        eta: spec.eta,
        rho_prime,
        tau: 1e-14,
    })
}

impl CutoffFn {
    /// Cutoff with explicit thresholds on `r` (no slack bookkeeping).
    pub fn from_thresholds(spec: &CutoffSpec, plateau: f64, outer: f64) -> Result<CutoffFn> {
        let mut c = build_cutoff(spec)?;
        c.a = plateau;
        c.b = outer;
        Ok(c)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Ratio `rho'` for which `omega = 1` on `G_rho'(W, Z)`.
    pub fn rho_prime(&self) -> f64 {
        self.rho_prime
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn distances(&self) -> (&RegularizedDistance, &RegularizedDistance) {
        (&self.dw, &self.dz)
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.eval_generic(x)
    }

    /// `r = d~_W / d~_Z`.
    pub fn ratio(&self, x: &[f64]) -> Result<f64> {
        let dz = self.dz.eval(x)?;
        if dz <= self.tau {
            return Err(Error::OnZ(dz));
        }
        Ok(self.dw.eval(x)? / dz)
    }

    pub fn eval_generic<T: Numeric>(&self, x: &[T]) -> Result<T> {
        let zero = x[0].from_f64_like(0.0);
        let dz = self.dz.eval_generic(x)?;
        if dz.point_value() <= self.tau {
            return Err(Error::OnZ(dz.point_value()));
        }
        if self.w_empty {
            return Ok(zero);
        }
        let dw = self.dw.eval_generic(x)?;
        if dw.point_value() == 0.0 {
            return Ok(zero.from_f64_like(1.0));
        }
        let r = dw.mul(&dz.recip()?);
        let s = r.sub(&r.from_f64_like(self.a)).mul(&r.from_f64_like(1.0 / (self.b - self.a)));
        Ok(self.sigma.eval_generic(&s))
    }

    /// Jet of `omega` at `x` (all derivatives up to `order`).
    pub fn jet(&self, x: &[f64], order: u32) -> Result<PointJet<f64>> {
        let n = x.len();
        let vars: Vec<PointJet<f64>> = (0..n).map(|i| PointJet::variable(n, order, x.to_vec(), i)).collect();
        let mut j = self.eval_generic(&vars)?;
        // fill exact constants where the inner evaluation returned a bare constant
        if j.n() != n {
            j = PointJet::constant(n, order, x.to_vec(), *j.value());
        }
        Ok(j)
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct SubCheck {
    pub checked: usize,
    pub failed: usize,
    pub first_failure: Option<Vec<f64>>,
}

impl SubCheck {
    pub fn pass(&self) -> bool {
        self.failed == 0
    }

    fn record(&mut self, ok: bool, x: &[f64]) {
        self.checked += 1;
        if !ok {
            self.failed += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(x.to_vec());
            }
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundEntry {
    pub alpha: Vec<u32>,
    /// max |D^alpha omega| d(x, Z)^|alpha| on the finer sample set.
    pub c_hat: f64,
    pub c_hat_coarse: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CutoffReport {
    pub rho_prime: f64,
    pub eta: f64,
    pub thresholds: (f64, f64),
    pub constants_w: (f64, f64),
    pub constants_z: (f64, f64),
    pub exclusion_radius: f64,
    pub range: SubCheck,
    pub plateau: SubCheck,
    pub support: SubCheck,
    pub nesting: SubCheck,
    pub bounds: Vec<BoundEntry>,
    pub derivative_path: &'static str,
    pub pass: bool,
}

/// Sampling knobs for [`verify_cutoff`].
#[derive(Clone, Copy, Debug)]
pub struct CutoffVerifyOpts {
    pub samples: usize,
    pub bound_samples: usize,
    pub seed: u64,
    pub scale: f64,
}

impl Default for CutoffVerifyOpts {
    fn default() -> Self {
        CutoffVerifyOpts { samples: 10_000, bound_samples: 1_000, seed: 0, scale: 1.0 }
    }
}

/// Sample points around `W` and `Z`: uniform in an enlarged bounding box and
/// multiscale shells around points of both sets, down to `2^-depth`.
pub fn cutoff_samples(spec: &CutoffSpec, count: usize, depth: i32, seed: u64) -> Vec<Vec<f64>> {
    let n = spec.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_pts = spec.w.sample(0, spec.bbox);
    let z_pts = spec.z.sample(0, spec.bbox);
    let mut lo = vec![-1.0f64; n];
    let mut hi = vec![1.0f64; n];
    for p in w_pts.iter().chain(&z_pts) {
        for i in 0..n {
            lo[i] = lo[i].min(p[i] - 1.0);
            hi[i] = hi[i].max(p[i] + 1.0);
        }
    }
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let pick: f64 = rng.gen();
        let anchor = if pick < 0.35 || (w_pts.is_empty() && z_pts.is_empty()) {
            None
        } else if (pick < 0.65 && !w_pts.is_empty()) || z_pts.is_empty() {
            Some(&w_pts[rng.gen_range(0..w_pts.len())])
        } else {
            Some(&z_pts[rng.gen_range(0..z_pts.len())])
        };
        let x = match anchor {
            None => (0..n).map(|i| rng.gen_range(lo[i]..hi[i])).collect(),
            Some(y) => {
                let dir: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let norm = crate::geometry::norm(&dir).max(1e-12);
                let r = 2f64.powf(-rng.gen_range(0.0..depth as f64));
                y.iter().zip(&dir).map(|(a, d)| a + r * d / norm).collect()
            }
        };
        out.push(x);
    }
    out
}

/// Samples the three cutoff properties: plateau on `G_rho'`, support in
/// `G_eta`, and scaled derivative bounds with a refinement-stability ratio.
pub fn verify_cutoff(omega: &CutoffFn, spec: &CutoffSpec, opts: &CutoffVerifyOpts) -> Result<CutoffReport> {
    let exclusion = NEAR_Z_EXCLUSION * opts.scale;
    let mut range = SubCheck::default();
    let mut plateau = SubCheck::default();
    let mut support = SubCheck::default();
    let mut nesting = SubCheck::default();
    let rho = omega.rho_prime();
    for x in cutoff_samples(spec, opts.samples, 12, opts.seed) {
        let dz = if spec.z.is_empty() { Bracket::exact(1.0) } else { spec.z.distance(&x) };
        if dz.upper < exclusion {
            continue;
        }
        let dw = if spec.w.is_empty() { Bracket::exact(f64::INFINITY) } else { spec.w.distance(&x) };
        let v = omega.eval(&x)?;
        range.record((0.0..=1.0).contains(&v), &x);
        if dw.upper <= rho * dz.lower {
            plateau.record(v == 1.0, &x);
            nesting.record(dw.upper < spec.eta * dz.lower, &x);
        }
        if dw.lower >= spec.eta * dz.upper {
            support.record(v == 0.0, &x);
        }
    }
    let alphas: Vec<MultiIndex> = MultiIndex::all_up_to(spec.n, spec.q);
    let mut levels = Vec::new();
    for (lvl, depth) in [(0u64, 6), (1u64, 12)] {
        let mut best = vec![0.0f64; alphas.len()];
        for x in cutoff_samples(spec, opts.bound_samples, depth, opts.seed ^ (0x5eed + lvl)) {
            let dz = if spec.z.is_empty() { 1.0 } else { spec.z.distance(&x).upper };
            if dz < exclusion {
                continue;
            }
            let j = omega.jet(&x, spec.q)?;
            for (k, a) in alphas.iter().enumerate() {
                let v = j.coeff(a).copied().unwrap_or(0.0);
                best[k] = best[k].max(v.abs() * dz.powi(a.degree() as i32));
            }
        }
        levels.push(best);
    }
    let bounds: Vec<BoundEntry> = alphas
        .iter()
        .enumerate()
        .map(|(k, a)| BoundEntry {
            alpha: a.exponents().to_vec(),
            c_hat: levels[1][k],
            c_hat_coarse: levels[0][k],
            ratio: stability_ratio(levels[0][k], levels[1][k]),
        })
        .collect();
    let bounds_ok = bounds.iter().all(|b| b.c_hat.is_finite() && b.ratio < 2.0);
    let pass = range.pass() && plateau.pass() && support.pass() && nesting.pass() && bounds_ok;
    Ok(CutoffReport {
        rho_prime: rho,
        eta: spec.eta,
        thresholds: omega.thresholds(),
        constants_w: omega.dw.constants(),
        constants_z: omega.dz.constants(),
        exclusion_radius: exclusion,
        range,
        plateau,
        support,
        nesting,
        bounds,
        derivative_path: "jet",
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verify::finite_difference;

    fn line(n: usize, pts: &[f64]) -> SetDesc {
        SetDesc::points(pts.iter().map(|&p| {
            let mut v = vec![0.0; n];
            v[0] = p;
            v
        }).collect())
    }

    #[test]
    fn transition_q1_is_the_cubic() {
        let s = smooth_transition(1);
        let want = [1, 0, -3, 2];
        for (c, w) in s.coefficients().iter().zip(want) {
            assert_eq!(*c, BigRational::from_integer(w.into()));
        }
        assert_eq!(s.eval(0.5), 0.5);
        assert!(s.derivative(1, 1e-300).abs() < 1e-12);
        assert!(s.derivative(1, 1.0 - 1e-16).abs() < 1e-12);
    }

    #[test]
    fn transition_joints_are_flat_to_order_q() {
        let s = smooth_transition(3);
        // exact derivatives of the polynomial piece at both joints
        let c = s.coefficients();
        for k in 1..=3usize {
            let at0 = c[k].clone();
            let at1: BigRational = c.iter().enumerate().skip(k).map(|(i, ci)| {
                let falling: i64 = (0..k).map(|j| (i - j) as i64).product();
                ci * BigRational::from_integer(falling.into())
            }).sum();
            assert!(at0.is_zero() && at1.is_zero(), "k={k}");
        }
        // finite differences inside the piece match the analytic derivative
        for k in 1..=3u32 {
            for x in [0.01, 0.3, 0.77, 0.99] {
                let (h, tol) = if k < 3 { (1e-3, 1e-7) } else { (5e-3, 1e-6) };
                let fd = finite_difference(&|t: &[f64]| Ok(s.eval(t[0])), &[k], &[x], h).unwrap();
                assert!((fd.value - s.derivative(k, x)).abs() < tol * (1.0 + s.derivative(k, x).abs()), "k={k} x={x} {fd:?}");
            }
        }
        // monotone nonincreasing
        let mut prev = 1.0;
        for i in 0..=1000 {
            let v = s.eval(i as f64 / 1000.0);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn g_eta_examples() {
        let w = line(1, &[1.0]);
        let z = line(1, &[0.0]);
        assert_eq!(in_g_eta(&[0.9], &w, &z, 0.2, 1e-12).unwrap(), GMembership::True);
        assert_eq!(in_g_eta(&[0.5], &w, &z, 0.2, 1e-12).unwrap(), GMembership::False);
        assert_eq!(in_g_eta(&[1.0], &w, &z, 1e-6, 1e-12).unwrap(), GMembership::True);
        assert!(matches!(in_g_eta(&[0.0], &w, &z, 0.2, 1e-12), Err(Error::OnZ(_))));
    }

    #[test]
    fn point_surrogate_is_exact() {
        let rd = RegularizedDistance::new(&line(3, &[0.0]), 3, 2, DEFAULT_BBOX).unwrap();
        assert_eq!(rd.constants(), (1.0, 1.0));
        let x = [0.3, -1.2, 2.0];
        let exact = crate::geometry::norm(&x);
        assert!((rd.eval(&x).unwrap() - exact).abs() < 1e-14);
        // homogeneity for the scaled descriptor
        let scaled = RegularizedDistance::new(&line(1, &[0.0]), 1, 2, DEFAULT_BBOX).unwrap();
        assert!((scaled.eval(&[-6.0]).unwrap() - 3.0 * scaled.eval(&[-2.0]).unwrap()).abs() < 1e-13);
    }

    #[test]
    fn two_point_surrogate_is_comparable() {
        let set = line(1, &[-1.0, 1.0]);
        let rd = RegularizedDistance::new(&set, 1, 2, DEFAULT_BBOX).unwrap();
        let (c1, c2) = rd.constants();
        assert!(c2 / c1 <= 2.0);
        let v = rd.eval(&[0.0]).unwrap();
        assert!(v <= 1.0 && v >= c1);
        for i in -300..=300 {
            let x = i as f64 / 100.0 + 0.001;
            let d = set.distance(&[x]).mid();
            let v = rd.eval(&[x]).unwrap();
            assert!(v >= c1 * d * (1.0 - 1e-12) && v <= c2 * d * (1.0 + 1e-12));
        }
    }

    #[test]
    fn segment_surrogate_is_comparable() {
        let seg = SetDesc::new(vec![SetPiece::AxisBox { lo: vec![0.0, 0.0], hi: vec![1.0, 0.0] }]);
        let rd = RegularizedDistance::new(&seg, 2, 2, DEFAULT_BBOX).unwrap();
        let (c1, c2) = rd.constants();
        for i in 0..40 {
            for j in 1..40 {
                let x = [-1.0 + 3.0 * i as f64 / 40.0, -1.5 + 3.0 * j as f64 / 40.0 + 0.013];
                let d = seg.distance(&x).mid();
                let v = rd.eval(&x).unwrap();
                assert!(v >= c1 * d && v <= c2 * d, "{x:?} {v} {d} ({c1}, {c2})");
            }
        }
    }

    #[test]
    fn cutoff_examples_on_the_line() {
        let w = SetDesc::new(vec![SetPiece::AxisBox { lo: vec![0.9], hi: vec![1.1] }]);
        let spec = CutoffSpec::new(1, w, line(1, &[0.0]), 0.5, 2);
        let omega = build_cutoff(&spec).unwrap();
        assert_eq!(omega.eval(&[1.0]).unwrap(), 1.0);
        assert_eq!(omega.eval(&[0.1]).unwrap(), 0.0);
        assert!(omega.rho_prime() < spec.eta);
    }

    #[test]
    fn jets_match_finite_differences() {
        let spec = CutoffSpec::new(2, line(2, &[1.0]), line(2, &[0.0]), 0.5, 3);
        let omega = build_cutoff(&spec).unwrap();
        let (a, b) = omega.thresholds();
        // a point in the transition band
        let x = (1..400)
            .map(|i| [1.0 + i as f64 / 200.0, 0.01])
            .find(|x| {
                let r = omega.ratio(x).unwrap();
                r > a + 0.3 * (b - a) && r < b - 0.3 * (b - a)
            })
            .unwrap();
        let r = omega.ratio(&x).unwrap();
        assert!(r > a && r < b, "{r} not in ({a}, {b})");
        let j = omega.jet(&x, 3).unwrap();
        for alpha in MultiIndex::all_up_to(2, 2) {
            let fd = finite_difference(&|y: &[f64]| omega.eval(y), alpha.exponents(), &x, 1e-4).unwrap();
            let exact = *j.coeff(&alpha).unwrap();
            assert!((fd.value - exact).abs() < 1e-5 * (1.0 + exact.abs()), "{alpha:?}: {} vs {exact}", fd.value);
        }
    }

    #[test]
    fn swapped_thresholds_fail_support() {
        let spec = CutoffSpec::new(1, line(1, &[1.0]), line(1, &[0.0]), 0.5, 2);
        let good = build_cutoff(&spec).unwrap();
        let opts = CutoffVerifyOpts { samples: 2000, bound_samples: 200, ..Default::default() };
        let rep = verify_cutoff(&good, &spec, &opts).unwrap();
        assert!(rep.pass, "{rep:?}");
        let (a, b) = good.thresholds();
        let bad = CutoffFn::from_thresholds(&spec, b, a).unwrap();
        let rep = verify_cutoff(&bad, &spec, &opts).unwrap();
        assert!(!rep.support.pass());
    }

    #[test]
    fn empty_w_gives_zero() {
        let spec = CutoffSpec::new(1, SetDesc::empty(), line(1, &[0.0]), 0.5, 2);
        let omega = build_cutoff(&spec).unwrap();
        assert_eq!(omega.eval(&[0.7]).unwrap(), 0.0);
        let rep = verify_cutoff(&omega, &spec, &CutoffVerifyOpts { samples: 500, bound_samples: 100, ..Default::default() }).unwrap();
        assert_eq!(rep.plateau.checked, 0);
        assert!(rep.pass);
    }

    #[test]
    fn user_rho_too_large_is_rejected() {
        let mut spec = CutoffSpec::new(1, line(1, &[-1.0, 1.0]), line(1, &[0.0]), 0.5, 2);
        spec.rho = Some(0.49);
        assert!(matches!(build_cutoff(&spec), Err(Error::SlackTooLarge { .. })));
        spec.rho = Some(0.1);
        assert!(build_cutoff(&spec).is_ok());
    }

    #[test]
    fn empty_z_uses_unit_distance() {
        let spec = CutoffSpec::new(1, line(1, &[0.0]), SetDesc::empty(), 0.5, 1);
        let omega = build_cutoff(&spec).unwrap();
        assert_eq!(omega.eval(&[0.0]).unwrap(), 1.0);
        assert_eq!(omega.eval(&[5.0]).unwrap(), 0.0);
    }
}
