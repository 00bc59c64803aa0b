//! Truncated Taylor polynomials ("jets") and their algebra.
//!
//! A [`PointJet`] of order `p` in `n` variables stores the derivative values
//! `F^alpha` for every `|alpha| <= p`; the polynomial it represents is
//! `sum (1/alpha!) F^alpha X^alpha`, where `X` is the offset from the base point.
//! Products truncate to total degree `p`, which makes jets a commutative ring.
//! Composition substitutes jets into jets and truncates again.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Arc, LazyLock, Mutex};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::expr::{rational_to_f64, Expr, ExprFn, Numeric};

/// Base-point tolerance for floating-point jets.
pub const TAU_BASE: f64 = 1e-12;

/// Exponent vector `alpha` in `N^n`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        MultiIndex(exponents)
    }

    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn unit(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.0
    }

    pub fn factorial(&self) -> BigInt {
        self.0.iter().fold(BigInt::one(), |acc, &k| acc * factorial(k))
    }

    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| a.checked_sub(*b))
            .collect::<Option<Vec<_>>>()
            .map(MultiIndex)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// `x^alpha`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.0.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product()
    }

    /// Concatenate two indices, `(alpha, beta)`.
    pub fn concat(&self, other: &MultiIndex) -> MultiIndex {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        MultiIndex(v)
    }

    /// Reorder exponents: result[i] = self[perm[i]].
    pub fn permuted(&self, perm: &[usize]) -> MultiIndex {
        MultiIndex(perm.iter().map(|&p| self.0[p]).collect())
    }

    /// Inverse of [`MultiIndex::permuted`].
    pub fn unpermuted(&self, perm: &[usize]) -> MultiIndex {
        let mut v = vec![0; self.0.len()];
        for (i, &p) in perm.iter().enumerate() {
            v[p] = self.0[i];
        }
        MultiIndex(v)
    }

    /// All indices in `n` variables with `|alpha| <= p`, graded-lex order.
    pub fn all_up_to(n: usize, p: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for d in 0..=p {
            let mut cur = vec![0u32; n];
            fill_degree(&mut out, &mut cur, 0, d);
        }
        out
    }
}

fn fill_degree(out: &mut Vec<MultiIndex>, cur: &mut Vec<u32>, pos: usize, remaining: u32) {
    let n = cur.len();
    if n == 0 {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    if pos == n - 1 {
        cur[pos] = remaining;
        out.push(MultiIndex(cur.clone()));
        cur[pos] = 0;
        return;
    }
    for k in (0..=remaining).rev() {
        cur[pos] = k;
        fill_degree(out, cur, pos + 1, remaining - k);
    }
    cur[pos] = 0;
}

fn factorial(k: u32) -> BigInt {
    (1..=k).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

impl Ord for MultiIndex {
    /// Graded order: total degree first, then larger leading exponents first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| other.0.cmp(&self.0))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|k| k.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Index tables for jets with a fixed `(n, p)`.
pub struct JetShape {
    n: usize,
    order: u32,
    indices: Vec<MultiIndex>,
    position: HashMap<MultiIndex, usize>,
    /// `sum[i * len + j]` is the position of `indices[i] + indices[j]`, or `NONE`.
    sum: Vec<u32>,
    fact: Vec<BigRational>,
    inv_fact: Vec<BigRational>,
    fact_f64: Vec<f64>,
    inv_fact_f64: Vec<f64>,
}

const NONE: u32 = u32::MAX;

static SHAPES: LazyLock<Mutex<HashMap<(usize, u32), Arc<JetShape>>>> =
    LazyLock::new(|| Mutex::new(HashMap::new()));

impl JetShape {
    /// Shared shape for `(n, p)`.
    pub fn get(n: usize, order: u32) -> Arc<JetShape> {
        let mut cache = SHAPES.lock().expect("shape cache poisoned");
        cache
            .entry((n, order))
            .or_insert_with(|| Arc::new(JetShape::build(n, order)))
            .clone()
    }

    fn build(n: usize, order: u32) -> JetShape {
        let indices = MultiIndex::all_up_to(n, order);
        let position: HashMap<_, _> = indices.iter().cloned().enumerate().map(|(i, a)| (a, i)).collect();
        let len = indices.len();
        let mut sum = vec![NONE; len * len];
        for i in 0..len {
            for j in 0..len {
                if indices[i].degree() + indices[j].degree() <= order {
                    sum[i * len + j] = position[&indices[i].add(&indices[j])] as u32;
                }
            }
        }
        let fact: Vec<BigRational> =
            indices.iter().map(|a| BigRational::from_integer(a.factorial())).collect();
        let inv_fact: Vec<BigRational> = fact.iter().map(|f| f.recip()).collect();
        let fact_f64 = fact.iter().map(rational_to_f64).collect();
        let inv_fact_f64 = inv_fact.iter().map(rational_to_f64).collect();
        JetShape { n, order, indices, position, sum, fact, inv_fact, fact_f64, inv_fact_f64 }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.position.get(alpha).copied()
    }

    /// `1 / indices()[i]!` as a float.
    pub fn inv_factorial_f64(&self, i: usize) -> f64 {
        self.inv_fact_f64[i]
    }
}

impl PartialEq for JetShape {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.order == other.order
    }
}

impl fmt::Debug for JetShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "JetShape(n={}, p={})", self.n, self.order)
    }
}

/// Coefficient ring for jets.
pub trait Scalar: Clone + PartialEq + fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    /// Multiply by a rational; `approx` is its `f64` value.
    fn scale(&self, r: &BigRational, approx: f64) -> Self;
    /// Base-point equality (exact for rationals, `TAU_BASE` for floats).
    fn base_close(&self, o: &Self) -> bool;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, _r: &BigRational, approx: f64) -> Self {
        self * approx
    }
    fn base_close(&self, o: &Self) -> bool {
        (self - o).abs() <= TAU_BASE * (1.0 + self.abs().max(o.abs()))
    }
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn neg(&self) -> Self {
        -self
    }
    fn scale(&self, r: &BigRational, _approx: f64) -> Self {
        self * r
    }
    fn base_close(&self, o: &Self) -> bool {
        self == o
    }
}

/// Symbolic jets: coefficients are expressions in the stratum parameters.
impl Scalar for Expr {
    fn zero() -> Self {
        Expr::zero()
    }
    fn one() -> Self {
        Expr::one()
    }
    fn is_zero(&self) -> bool {
        Expr::is_zero(self)
    }
    fn add(&self, o: &Self) -> Self {
        Expr::add(self.clone(), o.clone())
    }
    fn sub(&self, o: &Self) -> Self {
        Expr::sub(self.clone(), o.clone())
    }
    fn mul(&self, o: &Self) -> Self {
        Expr::mul(self.clone(), o.clone())
    }
    fn neg(&self) -> Self {
        Expr::neg(self.clone())
    }
    fn scale(&self, r: &BigRational, _approx: f64) -> Self {
        Expr::mul(Expr::Const(r.clone()), self.clone())
    }
    fn base_close(&self, o: &Self) -> bool {
        self == o
    }
}

/// One value `F(a, X)` of a Whitney field: derivative data at a base point.
#[derive(Clone, PartialEq)]
pub struct PointJet<T> {
    shape: Arc<JetShape>,
    base: Vec<T>,
    coeffs: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for PointJet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (a, c) in self.shape.indices.iter().zip(&self.coeffs) {
            m.entry(a, c);
        }
        m.finish()?;
        write!(f, " @ {:?}", self.base)
    }
}

impl<T: Scalar> PointJet<T> {
    pub fn new(shape: Arc<JetShape>, base: Vec<T>, coeffs: Vec<T>) -> Result<Self> {
        if base.len() != shape.n {
            return Err(Error::ShapeMismatch(format!("base has {} coordinates, jet has n = {}", base.len(), shape.n)));
        }
        if coeffs.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coefficients, got {}",
                shape.len(),
                coeffs.len()
            )));
        }
        Ok(PointJet { shape, base, coeffs })
    }

    pub fn zero(n: usize, p: u32, base: Vec<T>) -> Self {
        let shape = JetShape::get(n, p);
        let coeffs = vec![T::zero(); shape.len()];
        PointJet { shape, base, coeffs }
    }

    pub fn constant(n: usize, p: u32, base: Vec<T>, c: T) -> Self {
        let mut j = Self::zero(n, p, base);
        j.coeffs[0] = c;
        j
    }

    /// Jet of the coordinate function `x_i` at `base`.
    pub fn variable(n: usize, p: u32, base: Vec<T>, i: usize) -> Self {
        let mut j = Self::zero(n, p, base.clone());
        j.coeffs[0] = base[i].clone();
        if p >= 1 {
            let pos = j.shape.position(&MultiIndex::unit(n, i)).expect("unit index");
            j.coeffs[pos] = T::one();
        }
        j
    }

    /// Build from `(alpha, F^alpha)` pairs; missing entries are zero.
    pub fn from_entries(n: usize, p: u32, base: Vec<T>, entries: impl IntoIterator<Item = (MultiIndex, T)>) -> Result<Self> {
        let mut j = Self::zero(n, p, base);
        for (a, c) in entries {
            let pos = j
                .shape
                .position(&a)
                .ok_or_else(|| Error::ShapeMismatch(format!("index {a} outside n = {n}, p = {p}")))?;
            j.coeffs[pos] = c;
        }
        Ok(j)
    }

    pub fn shape(&self) -> &Arc<JetShape> {
        &self.shape
    }

    pub fn n(&self) -> usize {
        self.shape.n
    }

    pub fn order(&self) -> u32 {
        self.shape.order
    }

    pub fn base(&self) -> &[T] {
        &self.base
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }

    pub fn value(&self) -> &T {
        &self.coeffs[0]
    }

    pub fn coeff(&self, alpha: &MultiIndex) -> Option<&T> {
        self.shape.position(alpha).map(|i| &self.coeffs[i])
    }

    pub fn entries(&self) -> impl Iterator<Item = (&MultiIndex, &T)> {
        self.shape.indices.iter().zip(&self.coeffs)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if !Arc::ptr_eq(&self.shape, &other.shape) {
            return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        if !self.base.iter().zip(&other.base).all(|(a, b)| a.base_close(b)) {
            return Err(Error::BaseMismatch);
        }
        Ok(())
    }

    fn with_coeffs(&self, coeffs: Vec<T>) -> Self {
        PointJet { shape: self.shape.clone(), base: self.base.clone(), coeffs }
    }

    pub fn try_add(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.add_unchecked(other))
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.sub_unchecked(other))
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(self.mul_unchecked(other))
    }

    pub(crate) fn add_unchecked(&self, other: &Self) -> Self {
        self.with_coeffs(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.add(b)).collect())
    }

    pub(crate) fn sub_unchecked(&self, other: &Self) -> Self {
        self.with_coeffs(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.sub(b)).collect())
    }

    pub fn negate(&self) -> Self {
        self.with_coeffs(self.coeffs.iter().map(|a| a.neg()).collect())
    }

    pub fn scale(&self, c: &T) -> Self {
        self.with_coeffs(self.coeffs.iter().map(|a| a.mul(c)).collect())
    }

    fn to_monomial(&self) -> Vec<T> {
        let s = &self.shape;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| if c.is_zero() { T::zero() } else { c.scale(&s.inv_fact[i], s.inv_fact_f64[i]) })
            .collect()
    }

    fn from_monomial(&self, mono: Vec<T>) -> Self {
        let s = &self.shape;
        let coeffs = mono
            .into_iter()
            .enumerate()
            .map(|(i, c)| if c.is_zero() { c } else { c.scale(&s.fact[i], s.fact_f64[i]) })
            .collect();
        self.with_coeffs(coeffs)
    }

    /// Truncated product `pi_p(a * b)`.
    pub(crate) fn mul_unchecked(&self, other: &Self) -> Self {
        let s = &self.shape;
        let len = s.len();
        let a = self.to_monomial();
        let b = other.to_monomial();
        let mut out = vec![T::zero(); len];
        for i in 0..len {
            if a[i].is_zero() {
                continue;
            }
            let row = &s.sum[i * len..(i + 1) * len];
            for j in 0..len {
                let k = row[j];
                if k == NONE || b[j].is_zero() {
                    continue;
                }
                let k = k as usize;
                out[k] = out[k].add(&a[i].mul(&b[j]));
            }
        }
        self.from_monomial(out)
    }

    /// Evaluate the polynomial at offset `x` (not an absolute point).
    pub fn eval(&self, x: &[T]) -> Result<T> {
        if x.len() != self.shape.n {
            return Err(Error::ShapeMismatch(format!("offset has {} coordinates, jet has n = {}", x.len(), self.shape.n)));
        }
        let mono = self.to_monomial();
        let mut acc = T::zero();
        for (alpha, c) in self.shape.indices.iter().zip(mono) {
            if c.is_zero() {
                continue;
            }
            let mut term = c;
            for (xi, &k) in x.iter().zip(alpha.exponents()) {
                for _ in 0..k {
                    term = term.mul(xi);
                }
            }
            acc = acc.add(&term);
        }
        Ok(acc)
    }

    /// Full (untruncated) polynomial in the monomial convention.
    pub fn to_poly(&self) -> Poly<T> {
        let mut terms = BTreeMap::new();
        for (alpha, c) in self.shape.indices.iter().zip(self.to_monomial()) {
            if !c.is_zero() {
                terms.insert(alpha.clone(), c);
            }
        }
        Poly { n: self.shape.n, terms }
    }

    /// Lower the order to `q <= p` (drops higher coefficients).
    pub fn truncate(&self, q: u32) -> Self {
        let shape = JetShape::get(self.shape.n, q);
        let coeffs = shape.indices.iter().map(|a| self.coeff(a).cloned().unwrap_or_else(T::zero)).collect();
        PointJet { shape, base: self.base.clone(), coeffs }
    }

    /// Jet of `D^beta F`, of order `p - |beta|`: `(D^beta F)^gamma = F^(gamma + beta)`.
    pub fn derivative(&self, beta: &MultiIndex) -> Result<Self> {
        let d = beta.degree();
        if d > self.shape.order || beta.dim() != self.shape.n {
            return Err(Error::ShapeMismatch(format!("cannot differentiate order-{} jet by {beta}", self.shape.order)));
        }
        let shape = JetShape::get(self.shape.n, self.shape.order - d);
        let coeffs = shape
            .indices
            .iter()
            .map(|g| self.coeff(&g.add(beta)).cloned().expect("index in range"))
            .collect();
        Ok(PointJet { shape, base: self.base.clone(), coeffs })
    }

    /// Replace the base point (coefficients are kept as they are).
    pub fn rebased(&self, base: Vec<T>) -> Self {
        PointJet { shape: self.shape.clone(), base, coeffs: self.coeffs.clone() }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> PointJet<U> {
        PointJet {
            shape: self.shape.clone(),
            base: self.base.iter().map(&f).collect(),
            coeffs: self.coeffs.iter().map(&f).collect(),
        }
    }
}

/// Sparse polynomial in the monomial convention.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly<T> {
    n: usize,
    terms: BTreeMap<MultiIndex, T>,
}

impl<T: Scalar> Poly<T> {
    pub fn new(n: usize) -> Self {
        Poly { n, terms: BTreeMap::new() }
    }

    pub fn from_terms(n: usize, terms: impl IntoIterator<Item = (MultiIndex, T)>) -> Self {
        let mut p = Poly::new(n);
        for (a, c) in terms {
            p.add_term(a, c);
        }
        p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &BTreeMap<MultiIndex, T> {
        &self.terms
    }

    pub fn add_term(&mut self, alpha: MultiIndex, c: T) {
        assert_eq!(alpha.dim(), self.n, "monomial dimension");
        let e = self.terms.entry(alpha).or_insert_with(T::zero);
        *e = e.add(&c);
        self.terms.retain(|_, v| !v.is_zero());
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(MultiIndex::degree).max()
    }

    pub fn add(&self, other: &Poly<T>) -> Poly<T> {
        let mut out = self.clone();
        for (a, c) in &other.terms {
            out.add_term(a.clone(), c.clone());
        }
        out
    }

    /// Full product, no truncation.
    pub fn mul(&self, other: &Poly<T>) -> Poly<T> {
        let mut terms: BTreeMap<MultiIndex, T> = BTreeMap::new();
        for (a, ca) in &self.terms {
            for (b, cb) in &other.terms {
                let e = terms.entry(a.add(b)).or_insert_with(T::zero);
                *e = e.add(&ca.mul(cb));
            }
        }
        terms.retain(|_, v| !v.is_zero());
        Poly { n: self.n, terms }
    }

    /// Drop monomials of total degree `> p`.
    pub fn truncate(&self, p: u32) -> Poly<T> {
        Poly {
            n: self.n,
            terms: self.terms.iter().filter(|(a, _)| a.degree() <= p).map(|(a, c)| (a.clone(), c.clone())).collect(),
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        let mut acc = T::zero();
        for (a, c) in &self.terms {
            let mut t = c.clone();
            for (xi, &k) in x.iter().zip(a.exponents()) {
                for _ in 0..k {
                    t = t.mul(xi);
                }
            }
            acc = acc.add(&t);
        }
        acc
    }
}

/// `pi_p`: the jet of order `p` at `base` holding the low-degree part of `poly`.
pub fn pi_p<T: Scalar>(poly: &Poly<T>, p: u32, base: Vec<T>) -> Result<PointJet<T>> {
    let shape = JetShape::get(poly.n, p);
    let mut coeffs = vec![T::zero(); shape.len()];
    for (alpha, c) in &poly.terms {
        if let Some(i) = shape.position(alpha) {
            coeffs[i] = c.scale(&shape.fact[i], shape.fact_f64[i]);
        }
    }
    PointJet::new(shape, base, coeffs)
}

pub fn jet_add<T: Scalar>(a: &PointJet<T>, b: &PointJet<T>) -> Result<PointJet<T>> {
    a.try_add(b)
}

pub fn jet_mul<T: Scalar>(a: &PointJet<T>, b: &PointJet<T>) -> Result<PointJet<T>> {
    a.try_mul(b)
}

pub fn jet_eval<T: Scalar>(a: &PointJet<T>, x: &[T]) -> Result<T> {
    a.eval(x)
}

/// `H o F`: substitute `Y_i := F_i(u, X) - F_i^0(u)` into `H` and truncate.
///
/// `h` is a jet in `m = f.len()` variables based at the constant terms of `f`.
/// Powers `Y^kappa` are accumulated in graded order, each from a lower power
/// times a single `Y_i`, truncating at every step.
pub fn jet_compose<T: Scalar>(h: &PointJet<T>, f: &[PointJet<T>]) -> Result<PointJet<T>> {
    let m = h.n();
    if f.len() != m {
        return Err(Error::ShapeMismatch(format!("outer jet has {m} variables, {} inner jets given", f.len())));
    }
    let Some(first) = f.first() else {
        return Err(Error::ShapeMismatch("composition needs at least one inner jet".into()));
    };
    for fi in f {
        first.check_compatible(fi)?;
    }
    if h.order() != first.order() {
        return Err(Error::ShapeMismatch(format!("orders differ: {} vs {}", h.order(), first.order())));
    }
    for (hb, fi) in h.base.iter().zip(f) {
        if !hb.base_close(fi.value()) {
            return Err(Error::BaseMismatch);
        }
    }
    let ys: Vec<PointJet<T>> = f
        .iter()
        .map(|fi| {
            let mut y = fi.clone();
            y.coeffs[0] = T::zero();
            y
        })
        .collect();
    let one = PointJet::constant(first.n(), first.order(), first.base.clone(), T::one());
    let hs = &h.shape;
    let mut powers: Vec<PointJet<T>> = Vec::with_capacity(hs.len());
    let mut acc = PointJet::zero(first.n(), first.order(), first.base.clone());
    for (idx, kappa) in hs.indices.iter().enumerate() {
        let pw = if idx == 0 {
            one.clone()
        } else {
            let i = kappa.exponents().iter().position(|&k| k > 0).expect("nonzero index");
            let prev = kappa.checked_sub(&MultiIndex::unit(m, i)).expect("predecessor");
            powers[hs.position(&prev).expect("predecessor in shape")].mul_unchecked(&ys[i])
        };
        let c = &h.coeffs[idx];
        if !c.is_zero() {
            let w = c.scale(&hs.inv_fact[idx], hs.inv_fact_f64[idx]);
            acc = acc.add_unchecked(&pw.scale(&w));
        }
        powers.push(pw);
    }
    Ok(acc)
}

/// Taylor field `T_u^p f`: `coeffs[alpha] = D^alpha f(u)` via symbolic derivatives.
pub fn taylor_field(f: &ExprFn, p: u32, u: &[f64]) -> Result<PointJet<f64>> {
    let shape = JetShape::get(f.arity(), p);
    let coeffs = shape
        .indices()
        .iter()
        .map(|a| f.differentiate(a.exponents())?.evaluate(u))
        .collect::<Result<Vec<_>>>()?;
    PointJet::new(shape, u.to_vec(), coeffs)
}

/// Exact-arithmetic Taylor field.
pub fn taylor_field_exact(f: &ExprFn, p: u32, u: &[BigRational]) -> Result<PointJet<BigRational>> {
    let shape = JetShape::get(f.arity(), p);
    let coeffs = shape
        .indices()
        .iter()
        .map(|a| f.differentiate(a.exponents())?.evaluate_exact(u))
        .collect::<Result<Vec<_>>>()?;
    PointJet::new(shape, u.to_vec(), coeffs)
}

/// Symbolic Taylor field: coefficients are the derivative expressions themselves.
pub fn taylor_field_symbolic(f: &Expr, n: usize, p: u32, base: Vec<Expr>) -> PointJet<Expr> {
    let shape = JetShape::get(n, p);
    let coeffs = shape.indices().iter().map(|a| f.derivative(a.exponents())).collect();
    PointJet { shape, base, coeffs }
}

impl PointJet<f64> {
    /// `g o self` for a univariate `g` with derivatives `derivs[k] = g^(k)(self^0)`.
    pub fn apply_univariate(&self, derivs: &[f64]) -> Self {
        let p = self.order() as usize;
        debug_assert!(derivs.len() > p);
        let mut y = self.clone();
        y.coeffs[0] = 0.0;
        let mut fact = vec![1.0; p + 1];
        for k in 1..=p {
            fact[k] = fact[k - 1] * k as f64;
        }
        let mut acc = PointJet::constant(self.n(), self.order(), self.base.clone(), derivs[p] / fact[p]);
        for k in (0..p).rev() {
            acc = acc.mul_unchecked(&y);
            acc.coeffs[0] += derivs[k] / fact[k];
        }
        acc
    }

    /// `self^s` for real `s`; requires a positive constant term.
    pub fn powf(&self, s: f64) -> Self {
        let c = self.coeffs[0];
        let p = self.order() as usize;
        let mut derivs = Vec::with_capacity(p + 1);
        let mut falling = 1.0;
        for k in 0..=p {
            derivs.push(falling * c.powf(s - k as f64));
            falling *= s - k as f64;
        }
        self.apply_univariate(&derivs)
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

impl Numeric for PointJet<f64> {
    fn constant_like(&self, c: &BigRational) -> Self {
        PointJet::constant(self.n(), self.order(), self.base.clone(), rational_to_f64(c))
    }
    fn from_f64_like(&self, v: f64) -> Self {
        PointJet::constant(self.n(), self.order(), self.base.clone(), v)
    }
    fn powf_like(&self, s: f64) -> Result<Self> {
        Ok(self.powf(s))
    }
    fn add(&self, o: &Self) -> Self {
        self.add_unchecked(o)
    }
    fn sub(&self, o: &Self) -> Self {
        self.sub_unchecked(o)
    }
    fn mul(&self, o: &Self) -> Self {
        self.mul_unchecked(o)
    }
    fn neg(&self) -> Self {
        self.negate()
    }
    fn recip(&self) -> Result<Self> {
        Ok(self.powf(-1.0))
    }
    fn sqrt(&self) -> Result<Self> {
        Ok(self.powf(0.5))
    }
    fn point_value(&self) -> f64 {
        self.coeffs[0]
    }
    fn is_positive(&self) -> bool {
        self.coeffs[0] > 0.0
    }
    fn is_singular_zero(&self, tau: f64) -> bool {
        self.coeffs[0].abs() <= tau
    }
}
