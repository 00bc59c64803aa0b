//! Acceptance suite: one PASS/FAIL line per criterion. Runs without the
//! test harness so the lines always reach the output.
//!
//! Criterion 6 asks for a sequence that cannot satisfy its own cone
//! condition, so its literal form is expected to FAIL; see `criterion_6`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use whitney::cutoff::{verify_cutoff, CutoffVerifyOpts};
use whitney::expr::{Expr, ExprFn};
use whitney::extension::{approach_sequence, extend_field, extend_on_cell, flatness_rate_probe, ExtendOptions};
use whitney::geometry::{distance_sandwich_check, lipschitz_estimate, DistanceOpts, GraphCellDesc, SetDesc};
use whitney::jet::{jet_compose, jet_mul, taylor_field, taylor_field_exact, JetShape, MultiIndex, PointJet};
use whitney::scene::{Scene, StratumKind};
use whitney::verify::{check_extension, geometric_scales, radial_pairs, rate_fit, whitney_residual, AgreementOpts, DECAY_THETA};
use whitney::Error;

type Q = BigRational;

fn scenes_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenes")
}

fn scene(name: &str) -> Scene {
    Scene::from_path(&scenes_dir().join(name)).unwrap()
}

fn rat(rng: &mut ChaCha8Rng) -> Q {
    Q::new(BigInt::from(rng.gen_range(-9i64..=9)), BigInt::from(rng.gen_range(1i64..=6)))
}

fn fact(k: u32) -> BigInt {
    (1..=k).fold(BigInt::one(), |a, i| a * BigInt::from(i))
}

fn multi_fact(alpha: &[u32]) -> Q {
    Q::from_integer(alpha.iter().map(|&k| fact(k)).product())
}

// Plain polynomial arithmetic over exponent vectors, used as the oracle.
type Poly = BTreeMap<Vec<u32>, Q>;

fn poly_of_jet(j: &PointJet<Q>) -> Poly {
    j.entries()
        .filter(|(_, c)| !c.is_zero())
        .map(|(a, c)| (a.exponents().to_vec(), c / multi_fact(a.exponents())))
        .collect()
}

fn poly_mul(a: &Poly, b: &Poly, p: u32) -> Poly {
    let mut out = Poly::new();
    for (ea, ca) in a {
        for (eb, cb) in b {
            let e: Vec<u32> = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
            if e.iter().sum::<u32>() <= p {
                *out.entry(e).or_insert_with(Q::zero) += ca * cb;
            }
        }
    }
    out.retain(|_, c| !c.is_zero());
    out
}

fn poly_add(a: &mut Poly, b: &Poly) {
    for (e, c) in b {
        *a.entry(e.clone()).or_insert_with(Q::zero) += c;
    }
    a.retain(|_, c| !c.is_zero());
}

/// Does `j` hold exactly the derivatives of the truncated polynomial `poly`?
fn jet_matches(j: &PointJet<Q>, poly: &Poly) -> bool {
    let all_listed = poly.keys().all(|e| j.coeff(&MultiIndex::new(e.clone())).is_some());
    all_listed
        && j.entries().all(|(a, c)| {
            let want = poly.get(a.exponents()).cloned().unwrap_or_else(Q::zero) * multi_fact(a.exponents());
            *c == want
        })
}

fn random_jet(rng: &mut ChaCha8Rng, n: usize, p: u32, base: Vec<Q>) -> PointJet<Q> {
    let shape = JetShape::get(n, p);
    let coeffs = (0..shape.len()).map(|_| if rng.gen_bool(0.8) { rat(rng) } else { Q::zero() }).collect();
    PointJet::new(shape, base, coeffs).unwrap()
}

fn criterion_1() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mul_bad = 0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=3);
        let p = rng.gen_range(0..=4);
        let base: Vec<Q> = (0..n).map(|_| rat(&mut rng)).collect();
        let a = random_jet(&mut rng, n, p, base.clone());
        let b = random_jet(&mut rng, n, p, base);
        let want = poly_mul(&poly_of_jet(&a), &poly_of_jet(&b), p);
        if !jet_matches(&jet_mul(&a, &b).unwrap(), &want) {
            mul_bad += 1;
        }
    }
    let mut comp_bad = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let p = rng.gen_range(0..=4);
        let base: Vec<Q> = (0..n).map(|_| rat(&mut rng)).collect();
        let inner: Vec<PointJet<Q>> = (0..m).map(|_| random_jet(&mut rng, n, p, base.clone())).collect();
        let outer_base: Vec<Q> = inner.iter().map(|f| f.value().clone()).collect();
        let outer = random_jet(&mut rng, m, p, outer_base);
        // substitute Y_i = f_i - f_i(base) into the Taylor polynomial of h
        let ys: Vec<Poly> = inner
            .iter()
            .map(|f| {
                let mut y = poly_of_jet(f);
                y.remove(&vec![0; n]);
                y
            })
            .collect();
        let mut want = Poly::new();
        for (kappa, c) in poly_of_jet(&outer) {
            let mut term: Poly = [(vec![0; n], c)].into_iter().collect();
            for (i, &k) in kappa.iter().enumerate() {
                for _ in 0..k {
                    term = poly_mul(&term, &ys[i], p);
                }
            }
            poly_add(&mut want, &term);
        }
        if !jet_matches(&jet_compose(&outer, &inner).unwrap(), &want) {
            comp_bad += 1;
        }
    }
    (mul_bad == 0 && comp_bad == 0, format!("jet_mul mismatches {mul_bad}/500, jet_compose mismatches {comp_bad}/200 (exact rationals)"))
}

fn random_poly_expr(rng: &mut ChaCha8Rng, n: usize, deg: u32) -> Expr {
    let mut e = Expr::zero();
    for _ in 0..rng.gen_range(1..=4) {
        let mut term = Expr::constant(rat(rng));
        for v in 0..n {
            let k = rng.gen_range(0..=deg);
            if k > 0 {
                term = Expr::mul(term, Expr::pow(Expr::var(v), k as i32));
            }
        }
        e = Expr::add(e, term);
    }
    e
}

fn criterion_2() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=2);
        let m = rng.gen_range(1..=2);
        let p = rng.gen_range(1..=3);
        let g: Vec<ExprFn> = (0..m).map(|_| ExprFn::new(n, random_poly_expr(&mut rng, n, 2)).unwrap()).collect();
        let h = ExprFn::new(m, random_poly_expr(&mut rng, m, 2)).unwrap();
        let a: Vec<Q> = (0..n).map(|_| rat(&mut rng)).collect();
        let tg: Vec<PointJet<Q>> = g.iter().map(|gi| taylor_field_exact(gi, p, &a).unwrap()).collect();
        let ga: Vec<Q> = tg.iter().map(|j| j.value().clone()).collect();
        let th = taylor_field_exact(&h, p, &ga).unwrap();
        let roots: Vec<Expr> = g.iter().map(|gi| gi.root().clone()).collect();
        let hg = ExprFn::new(n, h.root().substitute(&roots)).unwrap();
        if jet_compose(&th, &tg).unwrap() != taylor_field_exact(&hg, p, &a).unwrap() {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad}/200 chain-rule mismatches (exact rationals)"))
}

/// Residual samples `(|a - b|, |R|)` over radial pairs straddling `c`.
fn radial_residuals(field: &dyn Fn(&[f64]) -> whitney::Result<PointJet<f64>>, beta: u32, c: f64) -> Vec<(f64, f64)> {
    let scales = geometric_scales(0.1, 10f64.powf(-0.5), 7);
    let pairs = radial_pairs(&[c], &[1.0], &[-1.0], 0.5, &scales);
    whitney_residual(field, &MultiIndex::new(vec![beta]), &pairs)
        .unwrap()
        .into_iter()
        .map(|r| (r.s, r.r.abs()))
        .collect()
}

fn criterion_3() -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    for p in 1..=3u32 {
        let g = ExprFn::new(1, Expr::pow(Expr::var(0), p as i32 + 1)).unwrap();
        let field = |x: &[f64]| taylor_field(&g, p, x);
        let fit = rate_fit(&radial_residuals(&field, 0, 0.0), p as f64).unwrap();
        ok &= fit.pass && fit.slope >= p as f64 + 0.75;
        detail.push(format!("p={p} slope {:.3}", fit.slope));
    }
    let kink = |x: &[f64]| PointJet::new(JetShape::get(1, 1), x.to_vec(), vec![x[0].abs(), x[0].signum()]);
    let mut kink_flagged = true;
    for beta in 0..=1u32 {
        let fit = rate_fit(&radial_residuals(&kink, beta, 0.0), (1 - beta) as f64).unwrap();
        kink_flagged &= !fit.pass;
        detail.push(format!("|x| beta={beta} slope {:.3} {}", fit.slope, if fit.pass { "pass" } else { "flagged" }));
    }
    (ok && kink_flagged, detail.join(", "))
}

const GOOD: [&str; 5] = ["finite-set.json", "half-line.json", "parabola.json", "square.json", "full-space.json"];

fn criterion_4() -> (bool, String) {
    let mut ok = true;
    let mut detail = Vec::new();
    for name in GOOD {
        let s = scene(name);
        let f = extend_field(&s, &ExtendOptions::default()).unwrap();
        let r = check_extension(&f, &s, &AgreementOpts::default()).unwrap();
        let cells_sampled = r.strata.iter().all(|st| match &s.stratum(&st.stratum).unwrap().kind {
            StratumKind::Cell(_) => st.samples >= 100,
            StratumKind::Point(_) => st.samples >= 1,
        });
        ok &= r.pass && r.max_rel < 1e-4 && cells_sampled;
        detail.push(format!("{} {:.1e}", name.trim_end_matches(".json"), r.max_rel));
    }
    (ok, format!("max relative deviation: {}", detail.join(", ")))
}

fn criterion_5() -> (bool, String) {
    let picks = [("half-line.json", "ray"), ("parabola.json", "arc"), ("square.json", "bottom")];
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, id) in picks {
        let s = scene(name);
        let f = extend_field(&s, &ExtendOptions::default()).unwrap();
        let (_, spec, omega) = f.cutoffs().into_iter().find(|(sid, _, _)| sid == id).unwrap();
        let r = verify_cutoff(&omega, &spec, &CutoffVerifyOpts::default()).unwrap();
        let orders = MultiIndex::all_up_to(spec.n, spec.q).len();
        let bounds_ok = r.bounds.len() == orders && r.bounds.iter().all(|b| b.c_hat.is_finite() && b.ratio < 2.0);
        let full = r.plateau.checked + r.support.checked > 0;
        ok &= r.plateau.pass() && r.support.pass() && bounds_ok && full;
        let worst = r.bounds.iter().map(|b| b.ratio).fold(0.0, f64::max);
        detail.push(format!(
            "{id}: plateau {}/{} support {}/{} worst ratio {worst:.3}",
            r.plateau.checked - r.plateau.failed,
            r.plateau.checked,
            r.support.checked - r.support.failed,
            r.support.checked
        ));
    }
    (ok, detail.join("; "))
}

fn criterion_6() -> (bool, String) {
    let s = scene("half-line.json");
    let h = extend_on_cell(&s, "ray", &ExtendOptions::default()).unwrap();
    let eval = |x: &[f64]| h.value(x);
    let z = SetDesc::points(vec![vec![0.0]]);
    let lambda = s.stratum("ray").unwrap().closure(s.bbox);
    let left = approach_sequence(&[0.0], &[-1.0], 3..=14);
    let literal = flatness_rate_probe(&eval, &z, &lambda, 0.5, s.p, &left, DECAY_THETA);
    let verdict = match &literal {
        Ok(r) => format!("left sequence accepted, flat={}", r.flat),
        Err(Error::SequenceLeavesCone { index, d_cell, bound }) => {
            format!("left sequence leaves the cone at j={} (d(x,cell)={d_cell:.3e} > {bound:.3e})", index + 3)
        }
        Err(e) => format!("error {e}"),
    };
    // Companions: the same probe from inside the cell, and the left sequence with C = 1.
    let right = approach_sequence(&[0.0], &[1.0], 3..=14);
    let inside = flatness_rate_probe(&eval, &z, &lambda, 0.5, s.p, &right, DECAY_THETA).unwrap();
    let wide = flatness_rate_probe(&eval, &z, &lambda, 1.0, s.p, &left, DECAY_THETA).unwrap();
    let pass = matches!(&literal, Ok(r) if r.flat);
    (pass, format!("{verdict}; companions: x_j=+2^-j flat={}, C=1 flat={}", inside.flat, wide.flat))
}

fn in_graph_cells() -> Vec<(String, Arc<GraphCellDesc>, f64)> {
    let mut out = Vec::new();
    for name in GOOD {
        let s = scene(name);
        for st in &s.strata {
            if let StratumKind::Cell(c) = &st.kind {
                if c.dim() < c.n() && c.dim() > 0 {
                    out.push((format!("{}:{}", name.trim_end_matches(".json"), st.id), c.clone(), s.bbox));
                }
            }
        }
    }
    out
}

fn criterion_7() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut violations = 0;
    let mut detail = Vec::new();
    let mut constant_gap: f64 = 0.0;
    for (name, cell, bbox) in in_graph_cells() {
        let samples: Vec<Vec<f64>> = (0..1000).map(|_| (0..cell.n()).map(|_| rng.gen_range(-0.5..1.5)).collect()).collect();
        let lip = lipschitz_estimate(cell.graph_map(), cell.base(), 4, bbox).unwrap();
        let r = distance_sandwich_check(&cell, &samples, &lip, 1e-6, bbox).unwrap();
        violations += r.violations.len();
        let constant = cell.graph_map().iter().all(|g| g.root().as_constant().is_some());
        if constant {
            let closure = SetDesc::cell_closure(cell.clone(), bbox);
            let opts = DistanceOpts { tol: 1e-12, ..DistanceOpts::default() };
            for x in &samples {
                if let Some(gap) = cell.vertical_gap(x, 0.0) {
                    let d = closure.distance_bracket(x, &opts, None);
                    constant_gap = constant_gap.max((d.lower - gap).abs()).max((d.upper - gap).abs());
                }
            }
        }
        detail.push(format!("{name} {}", r.violations.len()));
    }
    (
        violations == 0 && constant_gap < 1e-9,
        format!("violations per cell: {}; constant-graph max |d - |w-phi(u)|| = {constant_gap:.1e}", detail.join(", ")),
    )
}

fn criterion_8() -> (bool, String) {
    let s = scene("square.json");
    let dims: Vec<usize> = s.strata.iter().map(|st| st.dim()).collect();
    let layered = dims.contains(&0) && dims.contains(&1);
    let with = extend_field(&s, &ExtendOptions::default()).unwrap();
    let without = extend_field(&s, &ExtendOptions { subtract_skeleton: false, ..ExtendOptions::default() }).unwrap();
    let a = check_extension(&with, &s, &AgreementOpts::default()).unwrap();
    let b = check_extension(&without, &s, &AgreementOpts::default()).unwrap();
    (
        layered && a.pass && !b.pass,
        format!("with subtraction max rel {:.1e} ({}); without {:.1e} ({})", a.max_rel, verdict(a.pass), b.max_rel, verdict(b.pass)),
    )
}

fn run_once(dir: &Path, name: &str) -> BTreeMap<String, Vec<u8>> {
    let sc = scenes_dir().join(name);
    whitney::cli::cmd_extend(&sc, dir, &["-1:2:0.25".into()], Some(11), true).unwrap();
    whitney::cli::cmd_verify(&sc, dir, &[], None).unwrap();
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_9() -> (bool, String) {
    let mut ok = true;
    let mut files = 0;
    for name in ["parabola.json", "square.json"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ra = run_once(a.path(), name);
        let rb = run_once(b.path(), name);
        ok &= ra == rb && ra.contains_key("report.json") && ra.contains_key("verify.json");
        files += ra.len();
    }
    (ok, format!("{files} output files compared byte for byte across two runs per scene"))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Criteria whose literal form cannot hold; the suite still reports them.
const KNOWN_FAILURES: [u32; 1] = [6];

fn main() {
    let criteria: [(u32, &str, fn() -> (bool, String)); 9] = [
        (1, "jet algebra oracle", criterion_1),
        (2, "chain rule", criterion_2),
        (3, "Whitney rate fit", criterion_3),
        (4, "extension agreement", criterion_4),
        (5, "cutoff contract", criterion_5),
        (6, "flatness rate", criterion_6),
        (7, "distance sandwich", criterion_7),
        (8, "skeleton subtraction", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let mut unexpected = Vec::new();
    for (k, title, check) in criteria {
        let t = Instant::now();
        let (pass, detail) = check();
        let took: Duration = t.elapsed();
        println!("criterion {k} {}: {title}: {detail} [{:.2}s]", verdict(pass), took.as_secs_f64());
        if !pass && !KNOWN_FAILURES.contains(&k) {
            unexpected.push(k);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
