//! Whitney-condition residuals, rate fits for little-o claims, Richardson
//! finite differences, and the agreement check for assembled extensions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extension::ExtensionFn;
use crate::field::StratumField;
use crate::geometry::{dist, norm, SetPiece};
use crate::jet::{MultiIndex, PointJet, Scalar};
use crate::scene::{stratum_samples, Scene, StratumKind};

/// Slope margin above the required exponent.
pub const SLOPE_MARGIN: f64 = 0.25;
/// Threshold for the normalized-decay reading of little-o.
pub const DECAY_THETA: f64 = 1e-2;

/// A finite-difference estimate with its Richardson error estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FdEstimate {
    pub value: f64,
    pub error: f64,
    pub h: f64,
}

fn binomial_f64(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn central_stencil(order: u32) -> Vec<(f64, f64)> {
    // (offset in units of h, weight)
    (0..=order)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            (order as f64 / 2.0 - j as f64, sign * binomial_f64(order, j))
        })
        .collect()
}

fn tensor_difference(f: &dyn Fn(&[f64]) -> Result<f64>, alpha: &[u32], x: &[f64], h: f64) -> Result<f64> {
    let stencils: Vec<Vec<(f64, f64)>> = alpha.iter().map(|&k| central_stencil(k)).collect();
    let mut idx = vec![0usize; alpha.len()];
    let mut acc = 0.0;
    let mut y = x.to_vec();
    loop {
        let mut w = 1.0;
        for (i, s) in stencils.iter().enumerate() {
            let (off, wt) = s[idx[i]];
            y[i] = x[i] + off * h;
            w *= wt;
        }
        let v = f(&y).map_err(|e| Error::StencilOutOfDomain(format!("at {y:?}: {e}")))?;
        acc += w * v;
        // odometer
        let mut i = 0;
        loop {
            if i == alpha.len() {
                let deg: u32 = alpha.iter().sum();
                return Ok(acc / h.powi(deg as i32));
            }
            idx[i] += 1;
            if idx[i] < stencils[i].len() {
                break;
            }
            idx[i] = 0;
            i += 1;
        }
    }
}

/// Central tensor-stencil estimate of `D^alpha f(x)` with Richardson
/// extrapolation over steps `h` and `h / 2`.
pub fn finite_difference(f: &dyn Fn(&[f64]) -> Result<f64>, alpha: &[u32], x: &[f64], h: f64) -> Result<FdEstimate> {
    if alpha.len() != x.len() {
        return Err(Error::ArityMismatch { expected: x.len(), got: alpha.len() });
    }
    if alpha.iter().all(|&a| a == 0) {
        let v = f(x).map_err(|e| Error::StencilOutOfDomain(e.to_string()))?;
        return Ok(FdEstimate { value: v, error: 0.0, h });
    }
    let d1 = tensor_difference(f, alpha, x, h)?;
    let d2 = tensor_difference(f, alpha, x, h / 2.0)?;
    Ok(FdEstimate { value: d2 + (d2 - d1) / 3.0, error: (d2 - d1).abs() / 3.0, h })
}

/// One residual of the Whitney condition at the pair `(a, b)`.
#[derive(Clone, Debug, Serialize)]
pub struct ResidualSample {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub beta: Vec<u32>,
    pub r: f64,
    pub s: f64,
}

/// `F^beta(a) - sum_{|alpha| <= p - |beta|} F^{alpha + beta}(b) (a - b)^alpha / alpha!`
/// from the jets at `a` and `b`.
pub fn residual_from_jets<T: Scalar>(ja: &PointJet<T>, jb: &PointJet<T>, beta: &MultiIndex, offset: &[T]) -> Result<T> {
    let fa = ja
        .coeff(beta)
        .cloned()
        .ok_or_else(|| Error::ShapeMismatch(format!("{beta:?} exceeds the jet order")))?;
    let shifted = jb.derivative(beta)?;
    Ok(fa.sub(&shifted.eval(offset)?))
}

/// Residual samples of the Whitney condition for the pairs given, with
/// `field(x)` returning the jet at `x`.
pub fn whitney_residual(
    field: &dyn Fn(&[f64]) -> Result<PointJet<f64>>,
    beta: &MultiIndex,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<ResidualSample>> {
    let mut out = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let s = crate::geometry::dist(a, b);
        if s == 0.0 {
            continue;
        }
        let ja = field(a)?;
        let jb = field(b)?;
        let offset: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let r = residual_from_jets(&ja, &jb, beta, &offset)?;
        out.push(ResidualSample { a: a.clone(), b: b.clone(), beta: beta.exponents().to_vec(), r, s });
    }
    Ok(out)
}

/// Geometric scales `start, start * ratio, ...` (`count` of them).
pub fn geometric_scales(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start * ratio.powi(i as i32)).collect()
}

/// Radial pairs: `a = c + s u`, `b = c + s t v` for each scale `s`.
pub fn radial_pairs(c: &[f64], u: &[f64], v: &[f64], t: f64, scales: &[f64]) -> Vec<(Vec<f64>, Vec<f64>)> {
    scales
        .iter()
        .map(|&s| {
            let a = c.iter().zip(u).map(|(ci, ui)| ci + s * ui).collect();
            let b = c.iter().zip(v).map(|(ci, vi)| ci + s * t * vi).collect();
            (a, b)
        })
        .collect()
}

/// Random pairs in the balls `B(c, s)` (in the coordinates given), kept when
/// `keep` accepts both points; `per_scale` attempts per scale.
pub fn ball_pairs(
    c: &[f64],
    scales: &[f64],
    per_scale: usize,
    seed: u64,
    keep: &dyn Fn(&[f64]) -> bool,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = c.len();
    let mut out = Vec::new();
    for &s in scales {
        for _ in 0..per_scale {
            let mut draw = || -> Vec<f64> {
                loop {
                    let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    if crate::geometry::norm(&d) <= 1.0 {
                        return c.iter().zip(&d).map(|(ci, di)| ci + s * di).collect();
                    }
                }
            };
            let (a, b) = (draw(), draw());
            if keep(&a) && keep(&b) {
                out.push((a, b));
            }
        }
    }
    out
}

/// Log-log fit of a little-o claim.
#[derive(Clone, Debug, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    pub required: f64,
    /// `value / scale^required`, ordered by decreasing scale.
    pub normalized: Vec<f64>,
    pub slope_pass: bool,
    pub decay_pass: bool,
    pub pass: bool,
}

/// Fits `log value = slope log scale + intercept` and reads `o(scale^e)` as
/// `slope >= e + margin` or normalized values decreasing below `theta`.
pub fn rate_fit(samples: &[(f64, f64)], e: f64) -> Result<RateFit> {
    rate_fit_with(samples, e, SLOPE_MARGIN, DECAY_THETA)
}

pub fn rate_fit_with(samples: &[(f64, f64)], e: f64, margin: f64, theta: f64) -> Result<RateFit> {
    if samples.len() < 6 {
        return Err(Error::DegenerateScales(format!("{} samples, need at least 6", samples.len())));
    }
    let mut pts: Vec<(f64, f64)> = samples.to_vec();
    if pts.iter().any(|(s, v)| !(*s > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateScales("scales must be positive and values finite".into()));
    }
    pts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (smax, smin) = (pts[0].0, pts[pts.len() - 1].0);
    if smax / smin < 100.0 * (1.0 - 1e-9) {
        return Err(Error::DegenerateScales(format!("scales span {smin}..{smax}, need two decades")));
    }
    let normalized: Vec<f64> = pts.iter().map(|(s, v)| v.abs() / s.powf(e)).collect();
    let logs: Vec<(f64, f64)> = pts.iter().filter(|(_, v)| v.abs() > 1e-300).map(|(s, v)| (s.ln(), v.abs().ln())).collect();
    let (slope, intercept, residual) = if logs.len() < 2 {
        (f64::INFINITY, f64::NEG_INFINITY, 0.0)
    } else {
        let k = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
        let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let intercept = my - slope * mx;
        let res = (logs.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum::<f64>() / k).sqrt();
        if logs.len() < pts.len() {
            // zero values at some scales only strengthen the claim
            (slope.max(e + margin), intercept, res)
        } else {
            (slope, intercept, res)
        }
    };
    let slope_pass = slope >= e + margin;
    let tail_start = normalized.len() / 2;
    let monotone = normalized[tail_start..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9) + 1e-300);
    let decay_pass = monotone && normalized.last().copied().unwrap_or(0.0) < theta;
    Ok(RateFit { slope, intercept, residual, required: e, normalized, slope_pass, decay_pass, pass: slope_pass || decay_pass })
}

/// Max `|R|` per scale bucket (factor-2 buckets), as `(scale, value)` pairs.
pub fn bucket_residuals(samples: &[ResidualSample]) -> Vec<(f64, f64)> {
    let mut buckets: std::collections::BTreeMap<i64, (f64, f64)> = std::collections::BTreeMap::new();
    for r in samples {
        let key = r.s.log2().floor() as i64;
        let e = buckets.entry(key).or_insert((r.s, 0.0));
        e.0 = e.0.max(r.s);
        e.1 = e.1.max(r.r.abs());
    }
    buckets.into_values().collect()
}

/// Largest relative deviation `|D^alpha f - F^alpha| / (1 + |F^alpha|)` for one index.
#[derive(Clone, Debug, Serialize)]
pub struct AgreementEntry {
    pub alpha: Vec<u32>,
    pub max_rel: f64,
    pub worst: Vec<f64>,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct StratumAgreement {
    pub stratum: String,
    pub samples: usize,
    pub entries: Vec<AgreementEntry>,
    pub max_rel: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AgreementReport {
    pub tol: f64,
    pub strata: Vec<StratumAgreement>,
    pub max_rel: f64,
    pub pass: bool,
}

/// Sampling knobs for [`check_extension`].
#[derive(Clone, Copy, Debug)]
pub struct AgreementOpts {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

impl Default for AgreementOpts {
    fn default() -> Self {
        AgreementOpts { samples: 100, seed: 0, tol: 1e-4 }
    }
}

/// Step at point strata, where the glued extension is only `C^p`.
pub const POINT_STEP: f64 = 1e-5;

/// Compares Richardson finite differences of `f` with the field on every
/// stratum; step `min(1e-3, d(x, frontier) / 10)` on cells.
pub fn check_extension(f: &ExtensionFn, scene: &Scene, opts: &AgreementOpts) -> Result<AgreementReport> {
    let value = |y: &[f64]| f.value(y);
    let mut strata = Vec::new();
    for (id, pts) in stratum_samples(scene, opts.samples, opts.seed) {
        let st = scene.stratum(&id)?;
        let frontier = scene.closure_of(&st.boundary)?;
        let field = &scene.fields[&id];
        let alphas = MultiIndex::all_up_to(scene.n, scene.p);
        let mut entries: Vec<AgreementEntry> = alphas
            .iter()
            .map(|a| AgreementEntry { alpha: a.exponents().to_vec(), max_rel: 0.0, worst: Vec::new(), pass: true })
            .collect();
        for x in &pts {
            let h = match &st.kind {
                StratumKind::Point(_) => POINT_STEP,
                StratumKind::Cell(_) if frontier.is_empty() => 1e-3,
                StratumKind::Cell(_) => (frontier.distance(x).lower / 10.0).min(1e-3),
            };
            let jet = field.jet_at(x)?;
            for (e, a) in entries.iter_mut().zip(&alphas) {
                let want = *jet.coeff(a).expect("index in range");
                let rel = match finite_difference(&value, a.exponents(), x, h) {
                    Ok(d) => (d.value - want).abs() / (1.0 + want.abs()),
                    Err(_) => f64::INFINITY,
                };
                if !(rel <= e.max_rel) {
                    e.max_rel = rel;
                    e.worst = x.clone();
                }
            }
        }
        for e in &mut entries {
            e.pass = e.max_rel < opts.tol;
        }
        let max_rel = entries.iter().map(|e| e.max_rel).fold(0.0, f64::max);
        let pass = entries.iter().all(|e| e.pass);
        strata.push(StratumAgreement { stratum: id, samples: pts.len(), entries, max_rel, pass });
    }
    let max_rel = strata.iter().map(|s| s.max_rel).fold(0.0, f64::max);
    let pass = strata.iter().all(|s| s.pass);
    Ok(AgreementReport { tol: opts.tol, strata, max_rel, pass })
}

/// One rate fit of the Whitney condition on the scene data.
#[derive(Clone, Debug, Serialize)]
pub struct WhitneyEntry {
    pub stratum: String,
    pub target: Vec<f64>,
    pub generator: &'static str,
    pub beta: Vec<u32>,
    pub fit: RateFit,
}

#[derive(Clone, Debug, Serialize)]
pub struct WhitneyReport {
    pub entries: Vec<WhitneyEntry>,
    pub pass: bool,
}

/// Residuals below `NOISE_FLOOR * (1 + |jets|)` count as exact zeros.
pub const NOISE_FLOOR: f64 = 1e-13;

fn floor_residuals(samples: &mut [ResidualSample], scale: f64) {
    for r in samples {
        if r.r.abs() <= NOISE_FLOOR * (1.0 + scale) {
            r.r = 0.0;
        }
    }
}

/// The Whitney condition on the scene field: for each cell, pairs approaching a
/// frontier point or the parameter midpoint, from three generators: collinear
/// pairs in the cell, random pairs in shrinking parameter balls, and pairs
/// anchored at the target's own jet.
pub fn check_whitney_scene(scene: &Scene, seed: u64) -> Result<WhitneyReport> {
    let scales = geometric_scales(0.1, 10f64.powf(-0.5), 7);
    let mut entries = Vec::new();
    for st in &scene.strata {
        let StratumKind::Cell(cell) = &st.kind else { continue };
        let m = cell.dim();
        let field = &scene.fields[&st.id];
        let mid_t = vec![0.5; m];
        let u_mid = cell.base().param_point(&mid_t, scene.plan.sample_box);
        let mut targets: Vec<(Vec<f64>, Option<&StratumField>)> = vec![(cell.embed(&u_mid)?, None)];
        for piece in cell.boundary_pieces(scene.bbox)? {
            if let SetPiece::Point(c) = piece {
                let owner = scene
                    .strata
                    .iter()
                    .find(|o| matches!(&o.kind, StratumKind::Point(a) if dist(a, &c) < 1e-12))
                    .map(|o| &scene.fields[&o.id]);
                targets.push((c, owner));
            }
        }
        for (c, owner) in targets {
            let uc: Vec<f64> = cell.to_frame(&c)[..m].to_vec();
            let dir: Vec<f64> = {
                let d: Vec<f64> = u_mid.iter().zip(&uc).map(|(a, b)| a - b).collect();
                let nd = norm(&d);
                if nd < 1e-12 {
                    let mut e = vec![0.0; m];
                    e[0] = 1.0;
                    e
                } else {
                    d.iter().map(|v| v / nd).collect()
                }
            };
            let in_base = |u: &[f64]| cell.base().contains(u, 0.0) == crate::geometry::Membership::Inside;
            let lift = |pairs: Vec<(Vec<f64>, Vec<f64>)>| -> Vec<(Vec<f64>, Vec<f64>)> {
                pairs
                    .into_iter()
                    .filter(|(a, b)| in_base(a) && in_base(b))
                    .filter_map(|(a, b)| Some((cell.embed(&a).ok()?, cell.embed(&b).ok()?)))
                    .collect()
            };
            let mut gens: Vec<(&'static str, Vec<(Vec<f64>, Vec<f64>)>)> = vec![
                ("radial", lift(radial_pairs(&uc, &dir, &dir, 0.5, &scales))),
                ("ball", lift(ball_pairs(&uc, &scales, 8, seed, &in_base))),
            ];
            if owner.is_some() {
                let anchored = radial_pairs(&uc, &dir, &dir, 0.0, &scales)
                    .into_iter()
                    .filter(|(a, _)| in_base(a))
                    .filter_map(|(a, _)| Some((cell.embed(&a).ok()?, c.clone())))
                    .collect();
                gens.push(("anchored", anchored));
            }
            let jet_of = |x: &[f64]| -> Result<PointJet<f64>> {
                match owner {
                    Some(of) if dist(x, &c) < 1e-12 => of.jet_at(x),
                    _ => field.jet_at(x),
                }
            };
            for (name, pairs) in gens {
                let size = pairs
                    .iter()
                    .flat_map(|(a, b)| [a, b])
                    .filter_map(|x| jet_of(x).ok())
                    .map(|j| j.max_abs())
                    .fold(0.0, f64::max);
                for beta in MultiIndex::all_up_to(scene.n, scene.p) {
                    let mut res = whitney_residual(&jet_of, &beta, &pairs)?;
                    floor_residuals(&mut res, size);
                    let buckets = if name == "ball" { bucket_residuals(&res) } else { res.iter().map(|r| (r.s, r.r.abs())).collect() };
                    let fit = rate_fit(&buckets, (scene.p - beta.degree()) as f64)?;
                    entries.push(WhitneyEntry {
                        stratum: st.id.clone(),
                        target: c.clone(),
                        generator: name,
                        beta: beta.exponents().to_vec(),
                        fit,
                    });
                }
            }
        }
    }
    let pass = entries.iter().all(|e| e.fit.pass);
    Ok(WhitneyReport { entries, pass })
}
