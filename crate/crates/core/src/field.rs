//! Whitney fields on strata: coefficient functions, the shift to a flat
//! graph, the Glaeser identification, and restriction.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Expr, ExprFn, Numeric};
use crate::geometry::{graded_params, GraphCellDesc, DEFAULT_BBOX};
use crate::jet::{jet_compose, taylor_field_symbolic, JetShape, MultiIndex, PointJet};

/// Coefficients `F^alpha` (`|alpha| <= p`, ambient multi-indices) of a field on
/// one stratum, each a function of the ambient point. Missing entries are 0.
#[derive(Clone, Debug, PartialEq)]
pub struct StratumField {
    n: usize,
    p: u32,
    coeffs: BTreeMap<MultiIndex, ExprFn>,
}

impl StratumField {
    pub fn zero(n: usize, p: u32) -> Self {
        StratumField { n, p, coeffs: BTreeMap::new() }
    }

    /// `T g`: coefficients are the symbolic derivatives of `g`.
    pub fn taylor_of(g: &ExprFn, p: u32) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for a in MultiIndex::all_up_to(g.arity(), p) {
            let d = g.differentiate(a.exponents())?;
            if !d.root().is_zero() {
                coeffs.insert(a, d);
            }
        }
        Ok(StratumField { n: g.arity(), p, coeffs })
    }

    pub fn from_coeffs(n: usize, p: u32, entries: impl IntoIterator<Item = (MultiIndex, ExprFn)>) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for (a, f) in entries {
            if a.dim() != n || a.degree() > p {
                return Err(Error::ShapeMismatch(format!("coefficient index {a} outside |alpha| <= {p} in {n} variables")));
            }
            if f.arity() != n {
                return Err(Error::ArityMismatch { expected: n, got: f.arity() });
            }
            if coeffs.insert(a.clone(), f).is_some() {
                return Err(Error::ShapeMismatch(format!("duplicate coefficient {a}")));
            }
        }
        Ok(StratumField { n, p, coeffs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u32 {
        self.p
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> Option<&ExprFn> {
        self.coeffs.get(alpha)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&MultiIndex, &ExprFn)> {
        self.coeffs.iter()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `F^alpha` evaluated generically (0 when absent).
    pub fn coeff_generic<T: Numeric>(&self, alpha: &MultiIndex, x: &[T]) -> Result<T> {
        match self.coeffs.get(alpha) {
            Some(f) => f.evaluate_generic(x),
            None => Ok(x[0].from_f64_like(0.0)),
        }
    }

    /// The jet `F(x)` (derivative convention).
    pub fn jet_at(&self, x: &[f64]) -> Result<PointJet<f64>> {
        let shape = JetShape::get(self.n, self.p);
        let coeffs = shape
            .indices()
            .iter()
            .map(|a| self.coeffs.get(a).map_or(Ok(0.0), |f| f.evaluate(x)))
            .collect::<Result<Vec<_>>>()?;
        PointJet::new(shape, x.to_vec(), coeffs)
    }

    pub fn add(&self, other: &StratumField) -> Result<StratumField> {
        if self.n != other.n || self.p != other.p {
            return Err(Error::ShapeMismatch("fields of different shapes".into()));
        }
        let mut coeffs = self.coeffs.clone();
        for (a, f) in &other.coeffs {
            let sum = match coeffs.get(a) {
                Some(g) => ExprFn::new(self.n, Expr::add(g.root().clone(), f.root().clone()))?,
                None => f.clone(),
            };
            coeffs.insert(a.clone(), sum);
        }
        Ok(StratumField { n: self.n, p: self.p, coeffs })
    }
}

/// Ambient expressions of `(u, phi(u))` in the parameter variables.
fn embed_exprs(cell: &GraphCellDesc) -> Vec<Expr> {
    let m = cell.dim();
    let mut y: Vec<Expr> = (0..m).map(Expr::var).collect();
    for f in cell.graph_map() {
        y.push(f.root().clone());
    }
    cell.from_frame(&y)
}

/// `G = F o T Phi` with `Phi(u, w) = (u, w + phi(u))`, in frame coordinates:
/// `G^gamma(u)` is a symbolic function of the parameters `u`.
pub fn shift_field(field: &StratumField, cell: &GraphCellDesc) -> Result<PointJet<Expr>> {
    let n = cell.n();
    let m = cell.dim();
    let p = field.order();
    if field.n() != n {
        return Err(Error::ArityMismatch { expected: n, got: field.n() });
    }
    let x_of_u = embed_exprs(cell);
    let base: Vec<Expr> = (0..m).map(Expr::var).chain((m..n).map(|_| Expr::zero())).collect();
    // Taylor field of Phi at (u, 0), frame variables
    let phis: Vec<PointJet<Expr>> = (0..n)
        .map(|i| {
            let e = if i < m {
                Expr::var(i)
            } else {
                Expr::add(Expr::var(i), cell.graph_map()[i - m].root().clone())
            };
            let j = taylor_field_symbolic(&e, n, p, base.clone());
            j.map(|c| c.substitute(&base))
        })
        .collect();
    let h_base: Vec<Expr> = phis.iter().map(|j| j.value().clone()).collect();
    let shape = JetShape::get(n, p);
    let h_coeffs: Vec<Expr> = shape
        .indices()
        .iter()
        .map(|g| {
            let alpha = g.unpermuted(cell.perm());
            field.coeff(&alpha).map_or(Expr::zero(), |f| f.root().substitute(&x_of_u))
        })
        .collect();
    let h = PointJet::new(shape, h_base, h_coeffs)?;
    let g = jet_compose(&h, &phis)?;
    Ok(g.rebased(base))
}

/// `u -> F^(0, beta)(u, phi(u))` on the parameter domain, `beta` in the
/// `n - m` normal variables of the frame.
pub fn glaeser_lift(field: &StratumField, cell: &GraphCellDesc, beta: &MultiIndex) -> Result<ExprFn> {
    let m = cell.dim();
    if beta.dim() != cell.n() - m {
        return Err(Error::ShapeMismatch(format!("beta {beta} must have {} entries", cell.n() - m)));
    }
    if beta.degree() > field.order() {
        return Err(Error::ShapeMismatch(format!("|beta| = {} exceeds p = {}", beta.degree(), field.order())));
    }
    let gamma = MultiIndex::zero(m).concat(beta);
    let alpha = gamma.unpermuted(cell.perm());
    let e = field.coeff(&alpha).map_or(Expr::zero(), |f| f.root().substitute(&embed_exprs(cell)));
    ExprFn::new(m, e)
}

/// Largest sampled residual of `D^alpha G^(0, beta) = G^(alpha, beta)`.
#[derive(Clone, Debug, Serialize)]
pub struct GlaeserReport {
    pub samples: usize,
    pub max_residual: f64,
    pub worst: Option<(Vec<u32>, Vec<u32>, Vec<f64>)>,
}

/// Samples the identification on the shifted field and fails with
/// `ConsistencyViolation` above `tol` (relative to `1 + |G^(alpha, beta)|`).
pub fn check_glaeser(field: &StratumField, cell: &GraphCellDesc, level: usize, tol: f64) -> Result<GlaeserReport> {
    let n = cell.n();
    let m = cell.dim();
    let p = field.order();
    let g = shift_field(field, cell)?;
    let params = graded_params(m, level);
    let us: Vec<Vec<f64>> = params.iter().map(|t| cell.base().param_point(t, DEFAULT_BBOX)).collect();
    let mut report = GlaeserReport { samples: 0, max_residual: 0.0, worst: None };
    for beta in MultiIndex::all_up_to(n - m, p) {
        let g0 = ExprFn::new(m, g.coeff(&MultiIndex::zero(m).concat(&beta)).cloned().unwrap_or_else(Expr::zero))?;
        for alpha in MultiIndex::all_up_to(m, p - beta.degree()) {
            if alpha.degree() == 0 {
                continue;
            }
            let lhs = g0.differentiate(alpha.exponents())?;
            let rhs = ExprFn::new(m, g.coeff(&alpha.concat(&beta)).cloned().unwrap_or_else(Expr::zero))?;
            for u in &us {
                let (Ok(a), Ok(b)) = (lhs.evaluate(u), rhs.evaluate(u)) else { continue };
                report.samples += 1;
                let r = (a - b).abs() / (1.0 + b.abs());
                if r > report.max_residual {
                    report.max_residual = r;
                    report.worst = Some((alpha.exponents().to_vec(), beta.exponents().to_vec(), u.clone()));
                }
            }
        }
    }
    if report.max_residual > tol {
        let (a, b, u) = report.worst.clone().unwrap_or_default();
        return Err(Error::ConsistencyViolation(format!(
            "D^{a:?} G^(0,{b:?}) differs from G^({a:?},{b:?}) by {:.3e} at u = {u:?}",
            report.max_residual
        )));
    }
    Ok(report)
}

/// Keeps the fields of the strata in `ids`.
pub fn restrict_field(fields: &BTreeMap<String, StratumField>, ids: &[String]) -> Result<BTreeMap<String, StratumField>> {
    ids.iter()
        .map(|id| {
            fields
                .get(id)
                .map(|f| (id.clone(), f.clone()))
                .ok_or_else(|| Error::UnknownStratum(id.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OpenCellDesc;
    use std::sync::Arc;

    fn v(i: usize) -> Expr {
        Expr::var(i)
    }

    fn graph(phi: Expr) -> Arc<GraphCellDesc> {
        Arc::new(GraphCellDesc::new(2, OpenCellDesc::interval(0.0, 1.0), vec![ExprFn::new(1, phi).unwrap()], vec![0, 1]).unwrap())
    }

    fn coeff(g: &PointJet<Expr>, a: &[u32]) -> Expr {
        g.coeff(&MultiIndex::new(a.to_vec())).cloned().unwrap()
    }

    #[test]
    fn identity_shift_keeps_the_field() {
        let g = ExprFn::new(2, v(0) * v(0) * v(1) + Expr::int(3) * v(1)).unwrap();
        let f = StratumField::taylor_of(&g, 2).unwrap();
        let cell = graph(Expr::zero());
        let shifted = shift_field(&f, &cell).unwrap();
        for a in MultiIndex::all_up_to(2, 2) {
            let want = f.coeff(&a).map_or(Expr::zero(), |c| c.root().substitute(&[v(0), Expr::zero()]));
            let got = shifted.coeff(&a).unwrap();
            for u in [0.1, 0.4, 0.9] {
                assert!((got.eval_f64(&[u]).unwrap() - want.eval_f64(&[u]).unwrap()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shift_picks_up_the_chain_rule() {
        let f = StratumField::taylor_of(&ExprFn::new(2, v(1)).unwrap(), 1).unwrap();
        let g = shift_field(&f, &graph(v(0))).unwrap();
        assert_eq!(coeff(&g, &[0, 0]), v(0));
        assert_eq!(coeff(&g, &[0, 1]).as_constant().map(crate::expr::rational_to_f64), Some(1.0));
        assert_eq!(coeff(&g, &[1, 0]).as_constant().map(crate::expr::rational_to_f64), Some(1.0));
    }

    #[test]
    fn shift_of_taylor_field_is_taylor_of_composition() {
        // oracle: T(g o Phi) computed symbolically
        let g = ExprFn::new(2, v(0) * v(1) * v(1) - Expr::int(2) * v(0) * v(0) * v(0) + v(1)).unwrap();
        let phi = Expr::ratio(1, 2) * v(0) * v(0) - v(0);
        let cell = graph(phi.clone());
        let f = StratumField::taylor_of(&g, 3).unwrap();
        let shifted = shift_field(&f, &cell).unwrap();
        let composed = g.root().substitute(&[v(0), Expr::add(v(1), phi)]);
        for a in MultiIndex::all_up_to(2, 3) {
            let want = composed.derivative(a.exponents()).substitute(&[v(0), Expr::zero()]);
            let got = shifted.coeff(&a).unwrap();
            for u in [0.0, 0.25, 0.5, 1.0] {
                let (w, gv) = (want.eval_f64(&[u]).unwrap(), got.eval_f64(&[u]).unwrap());
                assert!((w - gv).abs() < 1e-12, "{a:?} at {u}: {gv} vs {w}");
            }
        }
    }

    #[test]
    fn glaeser_lift_examples() {
        let f = StratumField::taylor_of(&ExprFn::new(2, v(0) + v(1)).unwrap(), 1).unwrap();
        let lifted = glaeser_lift(&f, &graph(Expr::zero()), &MultiIndex::zero(1)).unwrap();
        assert_eq!(lifted.root(), &v(0));
        assert!(check_glaeser(&f, &graph(v(0) * v(0)), 0, 1e-9).is_ok());
    }

    #[test]
    fn planted_inconsistency_is_caught() {
        let f = StratumField::from_coeffs(
            2,
            1,
            vec![
                (MultiIndex::new(vec![0, 0]), ExprFn::new(2, v(0)).unwrap()),
                (MultiIndex::new(vec![1, 0]), ExprFn::new(2, Expr::int(2)).unwrap()),
            ],
        )
        .unwrap();
        assert!(matches!(check_glaeser(&f, &graph(Expr::zero()), 0, 1e-9), Err(Error::ConsistencyViolation(_))));
    }

    #[test]
    fn glaeser_residuals_vanish_for_polynomial_fields() {
        let g = ExprFn::new(2, Expr::pow(v(0), 3) * v(1) + v(1) * v(1) - v(0)).unwrap();
        let f = StratumField::taylor_of(&g, 2).unwrap();
        let rep = check_glaeser(&f, &graph(Expr::int(2) * v(0) - v(0) * v(0)), 1, 1e-9).unwrap();
        assert!(rep.samples >= 50);
        assert!(rep.max_residual < 1e-9);
    }

    #[test]
    fn restriction() {
        let mut fields = BTreeMap::new();
        fields.insert("a".to_string(), StratumField::zero(1, 1));
        fields.insert("b".to_string(), StratumField::zero(1, 1));
        let all: Vec<String> = fields.keys().cloned().collect();
        assert_eq!(restrict_field(&fields, &all).unwrap(), fields);
        assert!(restrict_field(&fields, &[]).unwrap().is_empty());
        assert!(matches!(restrict_field(&fields, &["c".to_string()]), Err(Error::UnknownStratum(_))));
    }
}
