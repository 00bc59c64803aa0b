//! Closed-form scalar expressions with exact symbolic differentiation.
//!
//! Constants are exact rationals. Evaluation is generic over [`Numeric`], so the
//! same tree evaluates in `f64`, in exact rational arithmetic, or on truncated
//! Taylor jets (which is how the extension engine differentiates composite
//! functions exactly).
//!
//! Division, square root, absolute value, min/max and piecewise guards carry an
//! implicit singular locus: evaluating within `tau` of it is an error rather
//! than a silent choice of branch.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::Value;

use crate::error::{Error, Result};

/// Default singular-locus tolerance.
pub const DEFAULT_TAU_SING: f64 = 1e-9;

/// Arithmetic needed to evaluate an [`Expr`].
pub trait Numeric: Clone + fmt::Debug {
    /// A constant of the same kind (and, for jets, the same shape) as `self`.
    fn constant_like(&self, c: &BigRational) -> Self;
    /// A constant from a float; exact binary conversion for rationals.
    fn from_f64_like(&self, v: f64) -> Self;
    /// Real power; rationals only support it where exact.
    fn powf_like(&self, s: f64) -> Result<Self>;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn neg(&self) -> Self;
    fn recip(&self) -> Result<Self>;
    fn sqrt(&self) -> Result<Self>;
    /// Point value, used for reporting.
    fn point_value(&self) -> f64;
    /// Strict positivity of the point value.
    fn is_positive(&self) -> bool;
    /// Whether the point value lies on a singular locus.
    fn is_singular_zero(&self, tau: f64) -> bool;

    fn powi(&self, k: u32) -> Self {
        let mut acc = self.constant_like(&BigRational::one());
        let mut base = self.clone();
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        acc
    }
}

impl Numeric for f64 {
    fn constant_like(&self, c: &BigRational) -> Self {
        rational_to_f64(c)
    }
    fn from_f64_like(&self, v: f64) -> Self {
        v
    }
    fn powf_like(&self, s: f64) -> Result<Self> {
        Ok(self.powf(s))
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
    fn recip(&self) -> Result<Self> {
        Ok(1.0 / self)
    }
    fn sqrt(&self) -> Result<Self> {
        Ok(f64::sqrt(*self))
    }
    fn point_value(&self) -> f64 {
        *self
    }
    fn is_positive(&self) -> bool {
        *self > 0.0
    }
    fn is_singular_zero(&self, tau: f64) -> bool {
        self.abs() <= tau
    }
}

impl Numeric for BigRational {
    fn constant_like(&self, c: &BigRational) -> Self {
        c.clone()
    }
    fn from_f64_like(&self, v: f64) -> Self {
        f64_to_rational(v)
    }
    fn powf_like(&self, s: f64) -> Result<Self> {
        if s.fract() == 0.0 && s.abs() < 64.0 {
            let k = s.abs() as u32;
            let v = Numeric::powi(self, k);
            return if s < 0.0 { Numeric::recip(&v) } else { Ok(v) };
        }
        if s == 0.5 {
            return Numeric::sqrt(self);
        }
        Err(Error::Inexact(format!("({self})^{s}")))
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
    fn recip(&self) -> Result<Self> {
        if self.is_zero() {
            return Err(Error::SingularPoint("division by exact zero".into()));
        }
        Ok(self.recip())
    }
    fn sqrt(&self) -> Result<Self> {
        if self.is_negative() {
            return Err(Error::SingularPoint("square root of a negative number".into()));
        }
        let (n, d) = (self.numer(), self.denom());
        let (rn, rd) = (n.sqrt(), d.sqrt());
        if &(&rn * &rn) == n && &(&rd * &rd) == d {
            Ok(BigRational::new(rn, rd))
        } else {
            Err(Error::Inexact(format!("sqrt({self})")))
        }
    }
    fn point_value(&self) -> f64 {
        rational_to_f64(self)
    }
    fn is_positive(&self) -> bool {
        Signed::is_positive(self)
    }
    fn is_singular_zero(&self, _tau: f64) -> bool {
        self.is_zero()
    }
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or_else(|| {
        let n = r.numer().to_f64().unwrap_or(f64::NAN);
        let d = r.denom().to_f64().unwrap_or(f64::NAN);
        n / d
    })
}

/// Exact rational from a float (every finite `f64` is a dyadic rational).
pub fn f64_to_rational(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap_or_else(BigRational::zero)
}

pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Parse(format!("not a rational number: `{s}`"));
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(n, d));
    }
    if let Ok(n) = s.parse::<BigInt>() {
        return Ok(BigRational::from_integer(n));
    }
    let x: f64 = s.parse().map_err(|_| bad())?;
    if !x.is_finite() {
        return Err(bad());
    }
    Ok(f64_to_rational(x))
}

pub fn format_rational(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Sign condition of a piecewise guard.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sign {
    Positive,
    Negative,
}

/// `expr > 0` or `expr < 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub expr: Expr,
    pub sign: Sign,
}

/// One branch of a piecewise expression: active when every condition holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub guard: Vec<Condition>,
    pub body: Expr,
}

/// Expression node.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(BigRational),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
    Sqrt(Box<Expr>),
    Abs(Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Piecewise(Vec<Branch>),
}

impl Expr {
    pub fn zero() -> Expr {
        Expr::Const(BigRational::zero())
    }

    pub fn one() -> Expr {
        Expr::Const(BigRational::one())
    }

    pub fn int(v: i64) -> Expr {
        Expr::Const(BigRational::from_integer(v.into()))
    }

    pub fn ratio(n: i64, d: i64) -> Expr {
        Expr::Const(BigRational::new(n.into(), d.into()))
    }

    pub fn constant(c: BigRational) -> Expr {
        Expr::Const(c)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn as_constant(&self) -> Option<&BigRational> {
        match self {
            Expr::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if c.is_zero())
    }

    pub fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if c.is_one())
    }

    // Smart constructors fold constants and drop neutral elements so that
    // repeated differentiation stays small.

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            _ if a.is_zero() => b,
            _ if b.is_zero() => a,
            _ => Expr::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            _ if b.is_zero() => a,
            _ if a.is_zero() => Expr::neg(b),
            _ => Expr::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            _ if a.is_zero() || b.is_zero() => Expr::zero(),
            _ if a.is_one() => b,
            _ if b.is_one() => a,
            _ => Expr::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (_, Expr::Const(y)) if !y.is_zero() => Expr::mul(Expr::Const(y.recip()), a),
            _ if a.is_zero() => Expr::zero(),
            _ => Expr::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(x) => Expr::Const(-x),
            Expr::Neg(inner) => *inner,
            other => Expr::Neg(Box::new(other)),
        }
    }

    pub fn pow(a: Expr, k: i32) -> Expr {
        match (&a, k) {
            (_, 0) => Expr::one(),
            (_, 1) => a,
            (Expr::Const(x), k) if k > 0 => Expr::Const(num_traits::pow(x.clone(), k as usize)),
            _ => Expr::Pow(Box::new(a), k),
        }
    }

    pub fn sqrt(a: Expr) -> Expr {
        Expr::Sqrt(Box::new(a))
    }

    pub fn abs(a: Expr) -> Expr {
        Expr::Abs(Box::new(a))
    }

    pub fn min(a: Expr, b: Expr) -> Expr {
        Expr::Min(Box::new(a), Box::new(b))
    }

    pub fn max(a: Expr, b: Expr) -> Expr {
        Expr::Max(Box::new(a), Box::new(b))
    }

    pub fn piecewise(branches: Vec<Branch>) -> Expr {
        Expr::Piecewise(branches)
    }

    /// Largest variable index used, if any.
    pub fn max_var(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        self.visit(&mut |e| {
            if let Expr::Var(i) = e {
                best = Some(best.map_or(*i, |b| b.max(*i)));
            }
        });
        best
    }

    fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Const(_) | Expr::Var(_) => {}
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Sqrt(a) | Expr::Abs(a) => a.visit(f),
            Expr::Piecewise(bs) => {
                for b in bs {
                    for c in &b.guard {
                        c.expr.visit(f);
                    }
                    b.body.visit(f);
                }
            }
        }
    }

    /// Replace every `Var(i)` with `args[i]`.
    pub fn substitute(&self, args: &[Expr]) -> Expr {
        match self {
            Expr::Const(_) => self.clone(),
            Expr::Var(i) => args[*i].clone(),
            Expr::Add(a, b) => Expr::add(a.substitute(args), b.substitute(args)),
            Expr::Sub(a, b) => Expr::sub(a.substitute(args), b.substitute(args)),
            Expr::Mul(a, b) => Expr::mul(a.substitute(args), b.substitute(args)),
            Expr::Div(a, b) => Expr::div(a.substitute(args), b.substitute(args)),
            Expr::Neg(a) => Expr::neg(a.substitute(args)),
            Expr::Pow(a, k) => Expr::pow(a.substitute(args), *k),
            Expr::Sqrt(a) => Expr::sqrt(a.substitute(args)),
            Expr::Abs(a) => Expr::abs(a.substitute(args)),
            Expr::Min(a, b) => Expr::min(a.substitute(args), b.substitute(args)),
            Expr::Max(a, b) => Expr::max(a.substitute(args), b.substitute(args)),
            Expr::Piecewise(bs) => Expr::Piecewise(
                bs.iter()
                    .map(|b| Branch {
                        guard: b
                            .guard
                            .iter()
                            .map(|c| Condition { expr: c.expr.substitute(args), sign: c.sign })
                            .collect(),
                        body: b.body.substitute(args),
                    })
                    .collect(),
            ),
        }
    }

    /// Partial derivative with respect to variable `v`.
    pub fn partial(&self, v: usize) -> Expr {
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(i) => {
                if *i == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Expr::Add(a, b) => Expr::add(a.partial(v), b.partial(v)),
            Expr::Sub(a, b) => Expr::sub(a.partial(v), b.partial(v)),
            Expr::Mul(a, b) => Expr::add(
                Expr::mul(a.partial(v), (**b).clone()),
                Expr::mul((**a).clone(), b.partial(v)),
            ),
            Expr::Div(a, b) => {
                let num = Expr::sub(
                    Expr::mul(a.partial(v), (**b).clone()),
                    Expr::mul((**a).clone(), b.partial(v)),
                );
                if num.is_zero() {
                    Expr::zero()
                } else {
                    Expr::div(num, Expr::pow((**b).clone(), 2))
                }
            }
            Expr::Neg(a) => Expr::neg(a.partial(v)),
            Expr::Pow(a, k) => {
                let da = a.partial(v);
                if da.is_zero() {
                    return Expr::zero();
                }
                Expr::mul(
                    Expr::mul(Expr::int(*k as i64), Expr::pow((**a).clone(), k - 1)),
                    da,
                )
            }
            Expr::Sqrt(a) => {
                let da = a.partial(v);
                if da.is_zero() {
                    return Expr::zero();
                }
                Expr::div(da, Expr::mul(Expr::int(2), self.clone()))
            }
            Expr::Abs(a) => {
                let da = a.partial(v);
                if da.is_zero() {
                    return Expr::zero();
                }
                let sign = Expr::Piecewise(vec![
                    Branch { guard: vec![Condition { expr: (**a).clone(), sign: Sign::Positive }], body: Expr::one() },
                    Branch { guard: vec![Condition { expr: (**a).clone(), sign: Sign::Negative }], body: Expr::int(-1) },
                ]);
                Expr::mul(sign, da)
            }
            Expr::Min(a, b) | Expr::Max(a, b) => {
                let (da, db) = (a.partial(v), b.partial(v));
                if da.is_zero() && db.is_zero() {
                    return Expr::zero();
                }
                let diff = Expr::sub((**a).clone(), (**b).clone());
                let a_wins = if matches!(self, Expr::Min(..)) { Sign::Negative } else { Sign::Positive };
                let b_wins = if a_wins == Sign::Negative { Sign::Positive } else { Sign::Negative };
                Expr::Piecewise(vec![
                    Branch { guard: vec![Condition { expr: diff.clone(), sign: a_wins }], body: da },
                    Branch { guard: vec![Condition { expr: diff, sign: b_wins }], body: db },
                ])
            }
            Expr::Piecewise(bs) => {
                let branches: Vec<Branch> = bs
                    .iter()
                    .map(|b| Branch { guard: b.guard.clone(), body: b.body.partial(v) })
                    .collect();
                if branches.iter().all(|b| b.body.is_zero()) {
                    Expr::zero()
                } else {
                    Expr::Piecewise(branches)
                }
            }
        }
    }

    /// Mixed partial derivative `D^alpha`.
    pub fn derivative(&self, alpha: &[u32]) -> Expr {
        let mut out = self.clone();
        for (v, &k) in alpha.iter().enumerate() {
            for _ in 0..k {
                if out.is_zero() {
                    return out;
                }
                out = out.partial(v);
            }
        }
        out
    }

    /// Evaluate on any [`Numeric`]; `template` supplies the shape of constants.
    pub fn eval_generic<T: Numeric>(&self, x: &[T], template: &T, tau: f64) -> Result<T> {
        Ok(match self {
            Expr::Const(c) => template.constant_like(c),
            Expr::Var(i) => x
                .get(*i)
                .cloned()
                .ok_or(Error::ArityMismatch { expected: i + 1, got: x.len() })?,
            Expr::Add(a, b) => a.eval_generic(x, template, tau)?.add(&b.eval_generic(x, template, tau)?),
            Expr::Sub(a, b) => a.eval_generic(x, template, tau)?.sub(&b.eval_generic(x, template, tau)?),
            Expr::Mul(a, b) => a.eval_generic(x, template, tau)?.mul(&b.eval_generic(x, template, tau)?),
            Expr::Div(a, b) => {
                let d = b.eval_generic(x, template, tau)?;
                if d.is_singular_zero(tau) {
                    return Err(Error::SingularPoint(format!("denominator {} vanishes", d.point_value())));
                }
                a.eval_generic(x, template, tau)?.mul(&d.recip()?)
            }
            Expr::Neg(a) => a.eval_generic(x, template, tau)?.neg(),
            Expr::Pow(a, k) => {
                let base = a.eval_generic(x, template, tau)?;
                if *k >= 0 {
                    base.powi(*k as u32)
                } else {
                    if base.is_singular_zero(tau) {
                        return Err(Error::SingularPoint("negative power of zero".into()));
                    }
                    base.recip()?.powi(k.unsigned_abs())
                }
            }
            Expr::Sqrt(a) => {
                let v = a.eval_generic(x, template, tau)?;
                if v.is_singular_zero(tau) || !v.is_positive() {
                    return Err(Error::SingularPoint(format!("sqrt at {}", v.point_value())));
                }
                v.sqrt()?
            }
            Expr::Abs(a) => {
                let v = a.eval_generic(x, template, tau)?;
                if v.is_singular_zero(tau) {
                    return Err(Error::SingularPoint("abs at its kink".into()));
                }
                if v.is_positive() {
                    v
                } else {
                    v.neg()
                }
            }
            Expr::Min(a, b) | Expr::Max(a, b) => {
                let va = a.eval_generic(x, template, tau)?;
                let vb = b.eval_generic(x, template, tau)?;
                let diff = va.sub(&vb);
                if diff.is_singular_zero(tau) {
                    return Err(Error::SingularPoint("min/max tie".into()));
                }
                let a_larger = diff.is_positive();
                let want_a = if matches!(self, Expr::Max(..)) { a_larger } else { !a_larger };
                if want_a {
                    va
                } else {
                    vb
                }
            }
            Expr::Piecewise(bs) => {
                let mut active = None;
                for (idx, b) in bs.iter().enumerate() {
                    let mut on = true;
                    for c in &b.guard {
                        let g = c.expr.eval_generic(x, template, tau)?;
                        if g.is_singular_zero(tau) {
                            return Err(Error::SingularPoint("on a piecewise guard boundary".into()));
                        }
                        let pos = g.is_positive();
                        if pos != (c.sign == Sign::Positive) {
                            on = false;
                        }
                    }
                    if on {
                        if active.is_some() {
                            return Err(Error::SingularPoint("piecewise guards overlap".into()));
                        }
                        active = Some(idx);
                    }
                }
                let idx = active
                    .ok_or_else(|| Error::SingularPoint("no piecewise branch is active".into()))?;
                bs[idx].body.eval_generic(x, template, tau)?
            }
        })
    }

    pub fn eval_f64(&self, x: &[f64]) -> Result<f64> {
        self.eval_generic(x, &0.0, DEFAULT_TAU_SING)
    }

    pub fn eval_exact(&self, x: &[BigRational]) -> Result<BigRational> {
        self.eval_generic(x, &BigRational::zero(), 0.0)
    }

    /// Nested-array JSON form, e.g. `["add", ["var", 0], ["const", "3/2"]]`.
    pub fn to_json(&self) -> Value {
        use serde_json::json;
        match self {
            Expr::Const(c) => json!(["const", format_rational(c)]),
            Expr::Var(i) => json!(["var", i]),
            Expr::Add(a, b) => json!(["add", a.to_json(), b.to_json()]),
            Expr::Sub(a, b) => json!(["sub", a.to_json(), b.to_json()]),
            Expr::Mul(a, b) => json!(["mul", a.to_json(), b.to_json()]),
            Expr::Div(a, b) => json!(["div", a.to_json(), b.to_json()]),
            Expr::Neg(a) => json!(["neg", a.to_json()]),
            Expr::Pow(a, k) => json!(["pow", a.to_json(), k]),
            Expr::Sqrt(a) => json!(["sqrt", a.to_json()]),
            Expr::Abs(a) => json!(["abs", a.to_json()]),
            Expr::Min(a, b) => json!(["min", a.to_json(), b.to_json()]),
            Expr::Max(a, b) => json!(["max", a.to_json(), b.to_json()]),
            Expr::Piecewise(bs) => {
                let mut out = vec![json!("piecewise")];
                for b in bs {
                    let mut guard = vec![json!("and")];
                    for c in &b.guard {
                        let tag = if c.sign == Sign::Positive { "gt" } else { "lt" };
                        guard.push(json!([tag, c.expr.to_json()]));
                    }
                    out.push(json!([Value::Array(guard), b.body.to_json()]));
                }
                Value::Array(out)
            }
        }
    }

    pub fn from_json(v: &Value) -> Result<Expr> {
        if let Some(x) = v.as_f64() {
            if let Some(i) = v.as_i64() {
                return Ok(Expr::int(i));
            }
            return Ok(Expr::Const(f64_to_rational(x)));
        }
        if let Some(s) = v.as_str() {
            return Ok(Expr::Const(parse_rational(s)?));
        }
        let arr = v
            .as_array()
            .ok_or_else(|| Error::Parse(format!("expected a node array, got {v}")))?;
        let tag = arr
            .first()
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Parse(format!("node without a tag: {v}")))?;
        let args = &arr[1..];
        let want = |k: usize| -> Result<()> {
            if args.len() == k {
                Ok(())
            } else {
                Err(Error::Parse(format!("`{tag}` takes {k} argument(s), got {}", args.len())))
            }
        };
        let sub = |i: usize| Expr::from_json(&args[i]);
        Ok(match tag {
            "const" => {
                want(1)?;
                Expr::from_json(&args[0])?
            }
            "var" => {
                want(1)?;
                let i = args[0]
                    .as_u64()
                    .ok_or_else(|| Error::Parse("variable index must be a natural number".into()))?;
                Expr::Var(i as usize)
            }
            "add" | "mul" => {
                if args.len() < 2 {
                    return Err(Error::Parse(format!("`{tag}` needs at least two operands")));
                }
                let mut acc = sub(0)?;
                for i in 1..args.len() {
                    let e = sub(i)?;
                    acc = if tag == "add" { Expr::Add(Box::new(acc), Box::new(e)) } else { Expr::Mul(Box::new(acc), Box::new(e)) };
                }
                acc
            }
            "sub" | "div" | "min" | "max" => {
                want(2)?;
                let (a, b) = (Box::new(sub(0)?), Box::new(sub(1)?));
                match tag {
                    "sub" => Expr::Sub(a, b),
                    "div" => Expr::Div(a, b),
                    "min" => Expr::Min(a, b),
                    _ => Expr::Max(a, b),
                }
            }
            "neg" | "sqrt" | "abs" => {
                want(1)?;
                let a = Box::new(sub(0)?);
                match tag {
                    "neg" => Expr::Neg(a),
                    "sqrt" => Expr::Sqrt(a),
                    _ => Expr::Abs(a),
                }
            }
            "pow" => {
                want(2)?;
                let k = args[1]
                    .as_i64()
                    .ok_or_else(|| Error::Parse("exponent must be an integer".into()))?;
                Expr::Pow(Box::new(sub(0)?), k as i32)
            }
            "piecewise" => {
                if args.is_empty() {
                    return Err(Error::Parse("piecewise needs at least one branch".into()));
                }
                let mut branches = Vec::new();
                for b in args {
                    let pair = b
                        .as_array()
                        .filter(|p| p.len() == 2)
                        .ok_or_else(|| Error::Parse("piecewise branch must be [guard, expr]".into()))?;
                    branches.push(Branch { guard: parse_guard(&pair[0])?, body: Expr::from_json(&pair[1])? });
                }
                Expr::Piecewise(branches)
            }
            other => return Err(Error::Parse(format!("unknown node `{other}`"))),
        })
    }
}

fn parse_guard(v: &Value) -> Result<Vec<Condition>> {
    let arr = v
        .as_array()
        .ok_or_else(|| Error::Parse(format!("guard must be an array, got {v}")))?;
    match arr.first().and_then(Value::as_str) {
        Some("and") => {
            let mut out = Vec::new();
            for g in &arr[1..] {
                out.extend(parse_guard(g)?);
            }
            Ok(out)
        }
        Some(tag @ ("gt" | "lt")) if arr.len() == 2 => Ok(vec![Condition {
            expr: Expr::from_json(&arr[1])?,
            sign: if tag == "gt" { Sign::Positive } else { Sign::Negative },
        }]),
        _ => Err(Error::Parse(format!("bad guard {v}"))),
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{}", format_rational(c)),
            Expr::Var(i) => write!(f, "x{i}"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "{a}*{b}"),
            Expr::Div(a, b) => write!(f, "({a})/({b})"),
            Expr::Neg(a) => write!(f, "-{a}"),
            Expr::Pow(a, k) => write!(f, "{a}^{k}"),
            Expr::Sqrt(a) => write!(f, "sqrt({a})"),
            Expr::Abs(a) => write!(f, "|{a}|"),
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Piecewise(bs) => {
                write!(f, "piecewise{{")?;
                for (i, b) in bs.iter().enumerate() {
                    if i > 0 {
                        write!(f, "; ")?;
                    }
                    for c in &b.guard {
                        let op = if c.sign == Sign::Positive { ">" } else { "<" };
                        write!(f, "{} {op} 0 ", c.expr)?;
                    }
                    write!(f, "=> {}", b.body)?;
                }
                write!(f, "}}")
            }
        }
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $ctor:path) => {
        impl std::ops::$tr for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                $ctor(self, rhs)
            }
        }
    };
}
binop!(Add, add, Expr::add);
binop!(Sub, sub, Expr::sub);
binop!(Mul, mul, Expr::mul);
binop!(Div, div, Expr::div);

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

/// A scalar function of `arity` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprFn {
    arity: usize,
    root: Expr,
    tau_sing: f64,
}

impl ExprFn {
    pub fn new(arity: usize, root: Expr) -> Result<Self> {
        if arity == 0 {
            return Err(Error::Parse("arity must be at least 1".into()));
        }
        if let Some(v) = root.max_var() {
            if v >= arity {
                return Err(Error::ArityMismatch { expected: arity, got: v + 1 });
            }
        }
        Ok(ExprFn { arity, root, tau_sing: DEFAULT_TAU_SING })
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau_sing = tau;
        self
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn root(&self) -> &Expr {
        &self.root
    }

    pub fn tau(&self) -> f64 {
        self.tau_sing
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.arity {
            return Err(Error::ArityMismatch { expected: self.arity, got });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x.len())?;
        self.root.eval_generic(x, &0.0, self.tau_sing)
    }

    pub fn evaluate_exact(&self, x: &[BigRational]) -> Result<BigRational> {
        self.check_len(x.len())?;
        self.root.eval_exact(x)
    }

    pub fn evaluate_generic<T: Numeric>(&self, x: &[T]) -> Result<T> {
        self.check_len(x.len())?;
        self.root.eval_generic(x, &x[0], self.tau_sing)
    }

    pub fn differentiate(&self, alpha: &[u32]) -> Result<ExprFn> {
        self.check_len(alpha.len())?;
        Ok(ExprFn { arity: self.arity, root: self.root.derivative(alpha), tau_sing: self.tau_sing })
    }
}

impl fmt::Display for ExprFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.root.fmt(f)
    }
}
