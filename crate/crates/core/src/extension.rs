//! Single-cell extensions `h = f * omega` and the induction-on-dimension
//! driver that assembles `g + sum_j h_j`.

use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cutoff::{build_cutoff, cutoff_samples, CutoffFn, CutoffSpec};
use crate::error::{Error, Result};
use crate::expr::Numeric;
use crate::field::StratumField;
use crate::geometry::{dist, GraphCellDesc, Membership, SetDesc};
use crate::jet::{MultiIndex, PointJet};
use crate::scene::{complement_closure, Scene, StratumKind};
use crate::verify::finite_difference;

/// How derivatives of a sub-extension are obtained when subtracting its Taylor field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativePath {
    /// Forward-mode jets through every term (exact up to rounding).
    Jet,
    /// Richardson finite differences; values only.
    FiniteDifference,
}

/// A field family `F - Tg` on one stratum; `g` absent means `F` itself.
#[derive(Clone, Debug)]
pub struct ResidualField {
    field: StratumField,
    g: Option<Arc<ExtensionFn>>,
    path: DerivativePath,
}

const FD_STEP: f64 = 1e-3;

impl ResidualField {
    pub fn plain(field: StratumField) -> Self {
        ResidualField { field, g: None, path: DerivativePath::Jet }
    }

    pub fn field(&self) -> &StratumField {
        &self.field
    }

    pub fn is_subtracted(&self) -> bool {
        self.g.is_some()
    }

    pub fn coeff(&self, alpha: &MultiIndex, x: &[f64]) -> Result<f64> {
        Ok(self.coeffs_generic(std::slice::from_ref(alpha), x, 0)?[0])
    }

    /// The jet of the residual field at `x`.
    pub fn jet_at(&self, x: &[f64]) -> Result<PointJet<f64>> {
        let n = self.field.n();
        let alphas = MultiIndex::all_up_to(n, self.field.order());
        let vals = self.coeffs_generic(&alphas, x, 0)?;
        PointJet::from_entries(n, self.field.order(), x.to_vec(), alphas.into_iter().zip(vals))
    }

    /// Coefficients at a (possibly jet-valued) point; `r` is the jet order of `T`.
    fn coeffs_generic<T: Numeric>(&self, alphas: &[MultiIndex], x: &[T], r: u32) -> Result<Vec<T>> {
        let mut vals: Vec<T> = alphas.iter().map(|a| self.field.coeff_generic(a, x)).collect::<Result<_>>()?;
        let Some(g) = &self.g else { return Ok(vals) };
        let xv: Vec<f64> = x.iter().map(Numeric::point_value).collect();
        match self.path {
            DerivativePath::Jet => {
                let jg = g.jet(&xv, self.field.order() + r)?;
                let d: Vec<T> = x.iter().zip(&xv).map(|(xi, v)| xi.sub(&xi.from_f64_like(*v))).collect();
                for (val, a) in vals.iter_mut().zip(alphas) {
                    *val = val.sub(&poly_eval(&jg.derivative(a)?, &d, &x[0]));
                }
            }
            DerivativePath::FiniteDifference => {
                if r > 0 {
                    return Err(Error::DerivativeUnavailable(format!(
                        "finite-difference residual field has no order-{r} jets"
                    )));
                }
                let gv = |y: &[f64]| g.value(y);
                for (val, a) in vals.iter_mut().zip(alphas) {
                    let d = finite_difference(&gv, a.exponents(), &xv, FD_STEP)
                        .map_err(|e| Error::DerivativeUnavailable(e.to_string()))?;
                    *val = val.sub(&val.from_f64_like(d.value));
                }
            }
        }
        Ok(vals)
    }
}

/// `F - Tg` on one stratum.
pub fn subtract_taylor(field: &StratumField, g: Arc<ExtensionFn>, path: DerivativePath) -> ResidualField {
    ResidualField { field: field.clone(), g: Some(g), path }
}

/// Evaluates the Taylor polynomial of `jet` at the offset `d`.
fn poly_eval<T: Numeric>(jet: &PointJet<f64>, d: &[T], template: &T) -> T {
    let shape = jet.shape();
    let mut acc = template.from_f64_like(0.0);
    for (i, (alpha, c)) in shape.indices().iter().zip(jet.coeffs()).enumerate() {
        if *c == 0.0 {
            continue;
        }
        let mut t = template.from_f64_like(c * shape.inv_factorial_f64(i));
        for (di, &k) in d.iter().zip(alpha.exponents()) {
            for _ in 0..k {
                t = t.mul(di);
            }
        }
        acc = acc.add(&t);
    }
    acc
}

#[derive(Clone, Debug)]
struct PointTerm {
    spec: CutoffSpec,
    center: Vec<f64>,
    jet: PointJet<f64>,
    cutoff: CutoffFn,
    /// `omega` vanishes for `|x - center| >= radius`.
    radius: f64,
}

#[derive(Clone, Debug)]
struct CellTerm {
    spec: CutoffSpec,
    cell: Arc<GraphCellDesc>,
    field: ResidualField,
    cutoff: CutoffFn,
    /// Ambient indices `(0, beta)` in frame order, with `beta` and `1 / beta!`.
    normals: Vec<(MultiIndex, MultiIndex, f64)>,
}

#[derive(Clone, Debug)]
enum Term {
    Point(PointTerm),
    Cell(CellTerm),
}

impl Term {
    fn eval<T: Numeric>(&self, x: &[T], xv: &[f64], r: u32) -> Result<Option<T>> {
        match self {
            Term::Point(t) => {
                if dist(xv, &t.center) >= t.radius {
                    return Ok(None);
                }
                let d: Vec<T> = x.iter().zip(&t.center).map(|(xi, a)| xi.sub(&xi.from_f64_like(*a))).collect();
                let om = t.cutoff.eval_generic(x)?;
                Ok(Some(poly_eval(&t.jet, &d, &x[0]).mul(&om)))
            }
            Term::Cell(t) => {
                let m = t.cell.dim();
                let yv = t.cell.to_frame(xv);
                if t.cell.base().contains(&yv[..m], 0.0) != Membership::Inside {
                    return Ok(None);
                }
                let om = match t.cutoff.eval_generic(x) {
                    Ok(v) => v,
                    Err(Error::OnZ(_)) => return Ok(None),
                    Err(e) => return Err(e),
                };
                if om.point_value() == 0.0 {
                    return Ok(None);
                }
                let y = t.cell.to_frame(x);
                let phis = t.cell.phi_generic(&y[..m])?;
                let v: Vec<T> = y[m..].iter().zip(&phis).map(|(w, f)| w.sub(f)).collect();
                let mut proj = y[..m].to_vec();
                proj.extend(phis);
                let pix = t.cell.from_frame(&proj);
                let alphas: Vec<MultiIndex> = t.normals.iter().map(|(a, _, _)| a.clone()).collect();
                let coeffs = t.field.coeffs_generic(&alphas, &pix, r)?;
                let mut f = x[0].from_f64_like(0.0);
                for (c, (_, beta, inv)) in coeffs.iter().zip(&t.normals) {
                    let mut mono = c.mul(&c.from_f64_like(*inv));
                    for (vi, &k) in v.iter().zip(beta.exponents()) {
                        for _ in 0..k {
                            mono = mono.mul(vi);
                        }
                    }
                    f = f.add(&mono);
                }
                Ok(Some(f.mul(&om)))
            }
        }
    }
}

/// One term of an assembled extension.
#[derive(Clone, Debug, Serialize)]
pub struct TraceEntry {
    pub stratum: String,
    pub kind: &'static str,
    pub dim: usize,
    /// Dimension of the scene the term was built for.
    pub level: usize,
    /// SHA-256 (first 16 hex digits) of the coefficient formulas.
    pub formula_hash: String,
    pub eta: f64,
    pub halvings: u32,
    pub rho_prime: f64,
    pub thresholds: (f64, f64),
    pub w_pieces: usize,
    pub z_pieces: usize,
    /// Comparability constants of the regularized distances to `W` and `Z`.
    pub w_constants: (f64, f64),
    pub z_constants: (f64, f64),
    pub subtracted: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AssemblyTrace {
    pub terms: Vec<TraceEntry>,
    pub derivative_path: DerivativePath,
}

/// An evaluable extension: a skeleton extension plus cell-local terms.
#[derive(Clone, Debug)]
pub struct ExtensionFn {
    n: usize,
    p: u32,
    q: u32,
    skeleton: Option<Arc<ExtensionFn>>,
    terms: Vec<Term>,
    trace: Vec<TraceEntry>,
    path: DerivativePath,
}

impl ExtensionFn {
    pub fn zero(n: usize, p: u32, q: u32) -> Self {
        ExtensionFn { n, p, q, skeleton: None, terms: Vec::new(), trace: Vec::new(), path: DerivativePath::Jet }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u32 {
        self.p
    }

    pub fn smoothness(&self) -> u32 {
        self.q
    }

    pub fn skeleton(&self) -> Option<&Arc<ExtensionFn>> {
        self.skeleton.as_ref()
    }

    /// Evaluation at a point whose coordinates may be jets of order `r`.
    pub fn eval_generic<T: Numeric>(&self, x: &[T], r: u32) -> Result<T> {
        if x.len() != self.n {
            return Err(Error::ArityMismatch { expected: self.n, got: x.len() });
        }
        let xv: Vec<f64> = x.iter().map(Numeric::point_value).collect();
        let mut acc = match &self.skeleton {
            Some(g) => g.eval_generic(x, r)?,
            None => x[0].from_f64_like(0.0),
        };
        for t in &self.terms {
            if let Some(v) = t.eval(x, &xv, r)? {
                acc = acc.add(&v);
            }
        }
        Ok(acc)
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.eval_generic(x, 0)
    }

    /// All derivatives up to `order` at `x`.
    pub fn jet(&self, x: &[f64], order: u32) -> Result<PointJet<f64>> {
        let vars: Vec<PointJet<f64>> = (0..self.n).map(|i| PointJet::variable(self.n, order, x.to_vec(), i)).collect();
        self.eval_generic(&vars, order)
    }

    /// Skeleton terms first, then this level's terms.
    pub fn trace(&self) -> AssemblyTrace {
        let mut terms = self.skeleton.as_ref().map_or_else(Vec::new, |g| g.trace().terms);
        terms.extend(self.trace.iter().cloned());
        AssemblyTrace { terms, derivative_path: self.path }
    }

    /// Every cutoff in the assembly with its spec, skeleton first.
    pub fn cutoffs(&self) -> Vec<(String, CutoffSpec, CutoffFn)> {
        let mut out = self.skeleton.as_ref().map_or_else(Vec::new, |g| g.cutoffs());
        for (t, e) in self.terms.iter().zip(&self.trace) {
            let (spec, c) = match t {
                Term::Point(p) => (&p.spec, &p.cutoff),
                Term::Cell(c) => (&c.spec, &c.cutoff),
            };
            out.push((e.stratum.clone(), spec.clone(), c.clone()));
        }
        out
    }

    /// The single term built for `stratum` at this level, without the skeleton.
    pub fn term_for(&self, stratum: &str) -> Option<ExtensionFn> {
        let k = self.trace.iter().position(|t| t.stratum == stratum)?;
        Some(ExtensionFn {
            skeleton: None,
            terms: vec![self.terms[k].clone()],
            trace: vec![self.trace[k].clone()],
            ..self.clone()
        })
    }
}

/// Knobs of the assembly.
#[derive(Clone, Debug)]
pub struct ExtendOptions {
    /// Subtract the skeleton's Taylor field before extending top cells.
    pub subtract_skeleton: bool,
    pub path: DerivativePath,
    pub eta0: f64,
    pub max_halvings: u32,
    pub leak_samples: usize,
    pub seed: u64,
}

impl Default for ExtendOptions {
    fn default() -> Self {
        ExtendOptions {
            subtract_skeleton: true,
            path: DerivativePath::Jet,
            eta0: 0.5,
            max_halvings: 20,
            leak_samples: 2000,
            seed: 0,
        }
    }
}

fn formula_hash(field: &StratumField) -> String {
    let mut h = Sha256::new();
    for (alpha, f) in field.entries() {
        h.update(format!("{alpha}={};", f.root()).as_bytes());
    }
    hex::encode(h.finalize())[..16].to_string()
}

const FRONTIER_TOL: f64 = 1e-7;

/// Builds `h = f * omega` for one cell with `W` its closure and the given `Z`.
fn cell_term(
    scene: &Scene,
    id: &str,
    cell: &Arc<GraphCellDesc>,
    field: ResidualField,
    z: SetDesc,
    opts: &ExtendOptions,
    level: usize,
) -> Result<(Term, TraceEntry)> {
    let bbox = scene.bbox;
    for piece in cell.boundary_pieces(bbox)? {
        for x in SetDesc::new(vec![piece]).sample(0, bbox) {
            let d = z.distance(&x).lower;
            if d > FRONTIER_TOL {
                return Err(Error::StratificationInvalid(format!(
                    "frontier point {x:?} of `{id}` is {d:.3e} away from Z"
                )));
            }
        }
    }
    let w = SetDesc::cell_closure(cell.clone(), bbox);
    let m = cell.dim();
    let mut eta = opts.eta0;
    let mut halvings = 0;
    let (spec, cutoff) = loop {
        let spec = CutoffSpec { bbox, ..CutoffSpec::new(scene.n, w.clone(), z.clone(), eta, scene.q) };
        let cutoff = build_cutoff(&spec)?;
        let leak = cutoff_samples(&spec, opts.leak_samples, 12, opts.seed).into_iter().any(|x| {
            let Ok(v) = cutoff.eval(&x) else { return false };
            v > 0.0 && cell.base().contains(&cell.to_frame(&x)[..m], 0.0) != Membership::Inside
        });
        if !leak {
            break (spec, cutoff);
        }
        if halvings == opts.max_halvings {
            return Err(Error::SupportLeak { stratum: id.to_string(), eta });
        }
        eta /= 2.0;
        halvings += 1;
    };
    let n = scene.n;
    let normals = MultiIndex::all_up_to(n - m, scene.p)
        .into_iter()
        .map(|beta| {
            let alpha = MultiIndex::zero(m).concat(&beta).unpermuted(cell.perm());
            let inv = 1.0 / crate::expr::rational_to_f64(&num_rational::BigRational::from_integer(beta.factorial()));
            (alpha, beta, inv)
        })
        .collect();
    let entry = TraceEntry {
        stratum: id.to_string(),
        kind: "cell",
        dim: m,
        level,
        formula_hash: formula_hash(field.field()),
        eta,
        halvings,
        rho_prime: cutoff.rho_prime(),
        thresholds: cutoff.thresholds(),
        w_pieces: w.pieces().len(),
        z_pieces: z.pieces().len(),
        w_constants: cutoff.distances().0.constants(),
        z_constants: cutoff.distances().1.constants(),
        subtracted: field.is_subtracted(),
    };
    Ok((Term::Cell(CellTerm { spec, cell: cell.clone(), field, cutoff, normals }), entry))
}

/// Base case: jet polynomials glued by point cutoffs with disjoint supports.
fn point_extension(scene: &Scene, opts: &ExtendOptions) -> Result<ExtensionFn> {
    let pts: Vec<(&str, &Vec<f64>)> = scene
        .strata
        .iter()
        .filter_map(|s| match &s.kind {
            StratumKind::Point(a) => Some((s.id.as_str(), a)),
            StratumKind::Cell(_) => None,
        })
        .collect();
    let mut gap = f64::INFINITY;
    for (i, (_, a)) in pts.iter().enumerate() {
        for (_, b) in &pts[i + 1..] {
            gap = gap.min(dist(a, b));
        }
    }
    let eta = opts.eta0.min(0.45 * gap);
    let mut ext = ExtensionFn::zero(scene.n, scene.p, scene.q);
    ext.path = opts.path;
    for (id, a) in pts {
        let field = &scene.fields[id];
        let spec = CutoffSpec { bbox: scene.bbox, ..CutoffSpec::new(scene.n, SetDesc::points(vec![a.clone()]), SetDesc::empty(), eta, scene.q) };
        let cutoff = build_cutoff(&spec)?;
        let radius = cutoff.thresholds().1;
        ext.trace.push(TraceEntry {
            stratum: id.to_string(),
            kind: "point",
            dim: 0,
            level: 0,
            formula_hash: formula_hash(field),
            eta,
            halvings: 0,
            rho_prime: cutoff.rho_prime(),
            thresholds: cutoff.thresholds(),
            w_pieces: 1,
            z_pieces: 0,
            w_constants: cutoff.distances().0.constants(),
            z_constants: cutoff.distances().1.constants(),
            subtracted: false,
        });
        ext.terms.push(Term::Point(PointTerm { spec, center: a.clone(), jet: field.jet_at(a)?, cutoff, radius }));
    }
    Ok(ext)
}

/// Extends the whole scene by induction on dimension: skeleton first, then
/// one cutoff term per top-dimensional cell for `F - Tg`.
pub fn extend_field(scene: &Scene, opts: &ExtendOptions) -> Result<ExtensionFn> {
    if scene.strata.is_empty() {
        return Ok(ExtensionFn::zero(scene.n, scene.p, scene.q));
    }
    let k = scene.dim();
    if k == 0 {
        return point_extension(scene, opts);
    }
    let skeleton_ids: Vec<String> = scene.strata.iter().filter(|s| s.dim() < k).map(|s| s.id.clone()).collect();
    let g = if skeleton_ids.is_empty() {
        None
    } else {
        Some(Arc::new(extend_field(&scene.restrict(&skeleton_ids)?, opts)?))
    };
    let mut ext = ExtensionFn::zero(scene.n, scene.p, scene.q);
    ext.path = opts.path;
    for s in scene.strata.iter().filter(|s| s.dim() == k) {
        let StratumKind::Cell(cell) = &s.kind else {
            return Err(Error::NotAGraphCell(s.id.clone()));
        };
        let field = &scene.fields[&s.id];
        let rf = match (&g, opts.subtract_skeleton) {
            (Some(g), true) => subtract_taylor(field, g.clone(), opts.path),
            _ => ResidualField::plain(field.clone()),
        };
        let z = complement_closure(scene, &s.id)?;
        let (term, entry) = cell_term(scene, &s.id, cell, rf, z, opts, k)?;
        ext.terms.push(term);
        ext.trace.push(entry);
    }
    ext.skeleton = g;
    Ok(ext)
}

/// `h = f * omega` for the cell `id`, with every other stratum declared flat.
pub fn extend_on_cell(scene: &Scene, id: &str, opts: &ExtendOptions) -> Result<ExtensionFn> {
    let s = scene.stratum(id)?;
    let StratumKind::Cell(cell) = &s.kind else {
        return Err(Error::NotAGraphCell(id.to_string()));
    };
    if scene.strata.iter().any(|o| o.id != id && !scene.flat_on.contains(&o.id)) {
        return Err(Error::FlatnessDeclarationMissing(id.to_string()));
    }
    let z = complement_closure(scene, id)?;
    let (term, entry) = cell_term(scene, id, cell, ResidualField::plain(scene.fields[id].clone()), z, opts, s.dim())?;
    let mut ext = ExtensionFn::zero(scene.n, scene.p, scene.q);
    ext.path = opts.path;
    ext.terms.push(term);
    ext.trace.push(entry);
    Ok(ext)
}

/// Normalized derivative values along an approach sequence for one `kappa`.
#[derive(Clone, Debug, Serialize)]
pub struct FlatnessSeries {
    pub kappa: Vec<u32>,
    /// `d(x_j, Z)`.
    pub scales: Vec<f64>,
    /// `|D^kappa h(x_j)| d(x_j, Z)^(|kappa| - p)`.
    pub values: Vec<f64>,
    /// Smallest ratio `values[j] / values[j + 1]` over the tail (infinite when the tail vanishes).
    pub tail_factor: f64,
    pub flat: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlatnessReport {
    pub c: f64,
    pub p: u32,
    pub theta: f64,
    pub points: Vec<Vec<f64>>,
    pub series: Vec<FlatnessSeries>,
    pub flat: bool,
}

/// `x_j = target + 2^-j dir` for `j` in `js`.
pub fn approach_sequence(target: &[f64], dir: &[f64], js: std::ops::RangeInclusive<i32>) -> Vec<Vec<f64>> {
    js.map(|j| {
        let s = 2f64.powi(-j);
        target.iter().zip(dir).map(|(t, d)| t + s * d).collect()
    })
    .collect()
}

/// Tests `D^kappa h = o(d(x, Z)^(p - |kappa|))` along `seq`, which must stay
/// in the cone `d(x, lambda) <= c d(x, Z)`.
pub fn flatness_rate_probe(
    h: &dyn Fn(&[f64]) -> Result<f64>,
    z: &SetDesc,
    lambda: &SetDesc,
    c: f64,
    p: u32,
    seq: &[Vec<f64>],
    theta: f64,
) -> Result<FlatnessReport> {
    let mut scales = Vec::with_capacity(seq.len());
    for (index, x) in seq.iter().enumerate() {
        let dz = z.distance(x);
        let dl = lambda.distance(x);
        if dl.lower > c * dz.upper {
            return Err(Error::SequenceLeavesCone { index, d_cell: dl.lower, bound: c * dz.upper });
        }
        scales.push(dz.mid());
    }
    let n = seq.first().map_or(0, Vec::len);
    let mut series = Vec::new();
    for kappa in MultiIndex::all_up_to(n, p) {
        let k = kappa.degree();
        let mut values = Vec::with_capacity(seq.len());
        for (x, &d) in seq.iter().zip(&scales) {
            let est = finite_difference(h, kappa.exponents(), x, d / 16.0)?;
            values.push(est.value.abs() * d.powi(k as i32 - p as i32));
        }
        let tail = &values[values.len() / 2..];
        let tail_factor = tail
            .windows(2)
            .map(|w| if w[1] == 0.0 { f64::INFINITY } else { w[0] / w[1] })
            .fold(f64::INFINITY, f64::min);
        let monotone = tail.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-6) + 1e-14);
        let flat = monotone && values.last().is_some_and(|v| *v < theta);
        series.push(FlatnessSeries { kappa: kappa.exponents().to_vec(), scales: scales.clone(), values, tail_factor, flat });
    }
    let flat = series.iter().all(|s| s.flat);
    Ok(FlatnessReport { c, p, theta, points: seq.to_vec(), series, flat })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, ExprFn};
    use crate::verify::DECAY_THETA;

    const HALF_LINE: &str = r#"{
        "schema": "whitney-scene/1", "name": "half-line", "n": 1, "p": 1, "q": 2,
        "strata": [
            {"id": "o", "type": "point", "at": ["0"]},
            {"id": "ray", "type": "cell", "cell": {"type": "interval", "lo": "0", "hi": "+inf"}, "boundary": ["o"]}
        ],
        "field": {"taylor_of": ["pow", ["var", 0], 3]},
        "flat_on": ["o"]
    }"#;

    const TWO_POINTS: &str = r#"{
        "schema": "whitney-scene/1", "name": "two-points", "n": 1, "p": 1, "q": 2,
        "strata": [
            {"id": "a", "type": "point", "at": ["0"]},
            {"id": "b", "type": "point", "at": ["1"]}
        ],
        "field": {"taylor_of": ["pow", ["var", 0], 2]}
    }"#;

    fn fd(f: &ExtensionFn, alpha: &[u32], x: &[f64], h: f64) -> f64 {
        finite_difference(&|y: &[f64]| f.value(y), alpha, x, h).unwrap().value
    }

    #[test]
    fn on_cell_agrees_with_data_where_omega_is_one() {
        let s = Scene::from_json_str(HALF_LINE).unwrap();
        let h = extend_on_cell(&s, "ray", &ExtendOptions::default()).unwrap();
        assert_eq!(h.value(&[2.0]).unwrap(), 8.0);
        assert_eq!(h.value(&[-0.5]).unwrap(), 0.0);
    }

    #[test]
    fn on_cell_needs_flatness_declaration() {
        let s = Scene::from_json_str(&HALF_LINE.replace(r#""flat_on": ["o"]"#, r#""flat_on": []"#)).unwrap();
        assert!(matches!(extend_on_cell(&s, "ray", &ExtendOptions::default()), Err(Error::FlatnessDeclarationMissing(_))));
    }

    #[test]
    fn glued_derivative_vanishes_from_the_left() {
        let s = Scene::from_json_str(HALF_LINE).unwrap();
        let h = extend_on_cell(&s, "ray", &ExtendOptions::default()).unwrap();
        for j in 3..=12 {
            let x = -(2f64.powi(-j));
            let d = fd(&h, &[1], &[x], 2f64.powi(-j) / 16.0);
            assert!(d.abs() < 1e-12, "h'({x}) = {d}");
        }
    }

    #[test]
    fn zero_field_gives_zero() {
        let s = Scene::from_json_str(&HALF_LINE.replace(r#"["pow", ["var", 0], 3]"#, "0")).unwrap();
        let f = extend_field(&s, &ExtendOptions::default()).unwrap();
        for x in [-1.0, -0.01, 0.0, 0.3, 4.0] {
            assert_eq!(f.value(&[x]).unwrap(), 0.0);
        }
    }

    #[test]
    fn two_points_interpolate_jets() {
        let s = Scene::from_json_str(TWO_POINTS).unwrap();
        let f = extend_field(&s, &ExtendOptions::default()).unwrap();
        assert_eq!(f.value(&[0.0]).unwrap(), 0.0);
        assert_eq!(f.value(&[1.0]).unwrap(), 1.0);
        assert!(fd(&f, &[1], &[0.0], 1e-3).abs() < 1e-9);
        assert!((fd(&f, &[1], &[1.0], 1e-3) - 2.0).abs() < 1e-9);
        // disjoint supports: nothing at the midpoint
        assert_eq!(f.value(&[0.5]).unwrap(), 0.0);
    }

    #[test]
    fn jets_match_finite_differences() {
        let s = Scene::from_json_str(HALF_LINE).unwrap();
        let f = extend_field(&s, &ExtendOptions::default()).unwrap();
        for x in [0.3, 1.7] {
            let j = f.jet(&[x], 2).unwrap();
            assert!((j.coeffs()[1] - 3.0 * x * x).abs() < 1e-12);
            assert!((j.coeffs()[2] - fd(&f, &[2], &[x], 1e-3)).abs() < 1e-6);
        }
    }

    #[test]
    fn subtract_taylor_of_exact_extension_vanishes() {
        let s = Scene::from_json_str(TWO_POINTS).unwrap();
        let g = Arc::new(extend_field(&s, &ExtendOptions::default()).unwrap());
        let field = &s.fields["a"];
        for path in [DerivativePath::Jet, DerivativePath::FiniteDifference] {
            let r = subtract_taylor(field, g.clone(), path);
            for x in [[0.0], [1.0]] {
                let j = r.jet_at(&x).unwrap();
                assert!(j.max_abs() < 1e-6, "{path:?} {x:?} {j:?}");
            }
        }
        // g = 0 leaves F unchanged
        let zero = Arc::new(ExtensionFn::zero(1, 1, 2));
        let r = subtract_taylor(field, zero, DerivativePath::Jet);
        assert_eq!(r.coeff(&MultiIndex::new(vec![1]), &[0.75]).unwrap(), 1.5);
    }

    #[test]
    fn finite_difference_path_has_no_jets() {
        let s = Scene::from_json_str(TWO_POINTS).unwrap();
        let g = Arc::new(extend_field(&s, &ExtendOptions::default()).unwrap());
        let r = subtract_taylor(&s.fields["a"], g, DerivativePath::FiniteDifference);
        let vars = vec![PointJet::variable(1, 1, vec![0.2], 0)];
        assert!(matches!(
            r.coeffs_generic(&[MultiIndex::zero(1)], &vars, 1),
            Err(Error::DerivativeUnavailable(_))
        ));
    }

    #[test]
    fn flatness_probe_basics() {
        let z = SetDesc::points(vec![vec![0.0]]);
        let lambda = SetDesc::new(vec![crate::geometry::SetPiece::AxisBox { lo: vec![0.0], hi: vec![f64::INFINITY] }]);
        let seq = approach_sequence(&[0.0], &[1.0], 3..=14);
        let zero = |_: &[f64]| Ok(0.0);
        let r = flatness_rate_probe(&zero, &z, &lambda, 0.5, 1, &seq, DECAY_THETA).unwrap();
        assert!(r.flat);
        assert!(r.series.iter().all(|s| s.values.iter().all(|v| *v == 0.0)));
        let ident = |x: &[f64]| Ok(x[0]);
        let r = flatness_rate_probe(&ident, &z, &lambda, 0.5, 1, &seq, DECAY_THETA).unwrap();
        let k0 = &r.series[0];
        assert!(k0.values.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(!k0.flat && !r.flat);
        let left = approach_sequence(&[0.0], &[-1.0], 3..=14);
        assert!(matches!(
            flatness_rate_probe(&zero, &z, &lambda, 0.5, 1, &left, DECAY_THETA),
            Err(Error::SequenceLeavesCone { index: 0, .. })
        ));
    }

    #[test]
    fn whole_space_uses_the_representative() {
        let text = r#"{
            "schema": "whitney-scene/1", "n": 2, "p": 1, "q": 1,
            "strata": [{"id": "plane", "type": "cell",
                "cell": {"type": "slab", "base": {"type": "interval"}, "lower": "-inf", "upper": "+inf"}}],
            "field": {"taylor_of": ["mul", ["var", 0], ["var", 1]]}
        }"#;
        let s = Scene::from_json_str(text).unwrap();
        let f = extend_field(&s, &ExtendOptions::default()).unwrap();
        for x in [[0.5, -2.0], [3.0, 1.25]] {
            assert_eq!(f.value(&x).unwrap(), x[0] * x[1]);
        }
        let g = ExprFn::new(2, Expr::mul(Expr::var(0), Expr::var(1))).unwrap();
        assert_eq!(g.evaluate(&[3.0, 1.25]).unwrap(), 3.75);
    }
}
