//! Scene files: strata, fields, flatness declarations and a verification plan.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::expr::{parse_rational, rational_to_f64, Expr, ExprFn};
use crate::field::{check_glaeser, restrict_field, StratumField};
use crate::geometry::{
    check_lambda_regular, lipschitz_estimate, GraphCellDesc, Membership, OpenCellDesc, RegularityVerdict, SetDesc,
    Wall, DEFAULT_BBOX,
};
use crate::jet::MultiIndex;

pub const SCHEMA_VERSION: &str = "whitney-scene/1";

/// Environment variable overriding the default bounding box.
pub const BBOX_ENV: &str = "WHITNEY_BBOX";

#[derive(Clone, Debug)]
pub enum StratumKind {
    Point(Vec<f64>),
    Cell(Arc<GraphCellDesc>),
}

#[derive(Clone, Debug)]
pub struct Stratum {
    pub id: String,
    pub kind: StratumKind,
    /// Ids of the lower strata making up the frontier.
    pub boundary: Vec<String>,
}

impl Stratum {
    pub fn dim(&self) -> usize {
        match &self.kind {
            StratumKind::Point(_) => 0,
            StratumKind::Cell(c) => c.dim(),
        }
    }

    pub fn closure(&self, bbox: f64) -> SetDesc {
        match &self.kind {
            StratumKind::Point(a) => SetDesc::points(vec![a.clone()]),
            StratumKind::Cell(c) => SetDesc::cell_closure(c.clone(), bbox),
        }
    }

    pub fn contains(&self, x: &[f64], tau: f64) -> Membership {
        match &self.kind {
            StratumKind::Point(a) => {
                if crate::geometry::dist(a, x) <= tau {
                    Membership::Inside
                } else {
                    Membership::Outside
                }
            }
            StratumKind::Cell(c) => c.contains(x, tau),
        }
    }

    /// Deterministic interior samples on a graded grid.
    pub fn grid_samples(&self, level: usize, bbox: f64) -> Vec<Vec<f64>> {
        match &self.kind {
            StratumKind::Point(a) => vec![a.clone()],
            StratumKind::Cell(c) => c.sample(level, bbox),
        }
    }

    /// `count` uniform samples of the parameter cube (a point stratum yields itself once).
    pub fn random_samples(&self, count: usize, rng: &mut ChaCha8Rng, bbox: f64) -> Vec<Vec<f64>> {
        match &self.kind {
            StratumKind::Point(a) => vec![a.clone()],
            StratumKind::Cell(c) => {
                let m = c.dim();
                let mut out = Vec::with_capacity(count);
                let mut tries = 0;
                while out.len() < count && tries < 20 * count {
                    tries += 1;
                    let t: Vec<f64> = (0..m).map(|_| rng.gen_range(0.02..0.98)).collect();
                    let u = c.base().param_point(&t, bbox);
                    if let Ok(x) = c.embed(&u) {
                        out.push(x);
                    }
                }
                out
            }
        }
    }
}

/// Which checks `verify` runs, and how.
#[derive(Clone, Debug, Serialize)]
pub struct Plan {
    pub checks: Vec<String>,
    pub seed: u64,
    /// Random samples per stratum for the agreement check.
    pub samples: usize,
    pub tol: f64,
    /// Half-width of the box unbounded strata are sampled in.
    pub sample_box: f64,
}

impl Default for Plan {
    fn default() -> Self {
        Plan {
            checks: vec!["agreement".into(), "whitney".into()],
            seed: 0,
            samples: 100,
            tol: 1e-4,
            sample_box: DEFAULT_BBOX,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub n: usize,
    pub p: u32,
    pub q: u32,
    pub strata: Vec<Stratum>,
    pub fields: BTreeMap<String, StratumField>,
    pub flat_on: BTreeSet<String>,
    pub plan: Plan,
    pub bbox: f64,
}

fn schema(path: &str, msg: impl Into<String>) -> Error {
    Error::Schema { path: path.to_string(), msg: msg.into() }
}

fn get<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| schema(path, format!("missing key `{key}`")))
}

fn get_usize(obj: &Value, key: &str, path: &str) -> Result<usize> {
    get(obj, key, path)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| schema(&format!("{path}.{key}"), "expected a natural number"))
}

fn get_str<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a str> {
    get(obj, key, path)?
        .as_str()
        .ok_or_else(|| schema(&format!("{path}.{key}"), "expected a string"))
}

fn get_array<'a>(obj: &'a Value, key: &str, path: &str) -> Result<&'a Vec<Value>> {
    get(obj, key, path)?
        .as_array()
        .ok_or_else(|| schema(&format!("{path}.{key}"), "expected an array"))
}

fn real(v: &Value, path: &str) -> Result<f64> {
    if let Some(x) = v.as_f64() {
        return Ok(x);
    }
    let s = v.as_str().ok_or_else(|| schema(path, "expected a number or a rational string"))?;
    parse_rational(s).map(|r| rational_to_f64(&r)).map_err(|e| schema(path, e.to_string()))
}

fn expr_at(v: &Value, arity: usize, path: &str) -> Result<ExprFn> {
    let e = Expr::from_json(v).map_err(|e| schema(path, e.to_string()))?;
    ExprFn::new(arity, e).map_err(|e| schema(path, e.to_string()))
}

fn bound(v: Option<&Value>, path: &str) -> Result<Option<num_rational::BigRational>> {
    match v {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if matches!(s.as_str(), "-inf" | "+inf" | "inf") => Ok(None),
        Some(Value::String(s)) => parse_rational(s).map(Some).map_err(|e| schema(path, e.to_string())),
        Some(v) => {
            let x = v.as_f64().ok_or_else(|| schema(path, "expected a bound"))?;
            Ok(Some(crate::expr::f64_to_rational(x)))
        }
    }
}

fn parse_open_cell(v: &Value, path: &str) -> Result<OpenCellDesc> {
    match get_str(v, "type", path)? {
        "interval" => {
            let lo = bound(v.get("lo"), &format!("{path}.lo"))?;
            let hi = bound(v.get("hi"), &format!("{path}.hi"))?;
            let cell = OpenCellDesc::Interval { lo, hi };
            cell.validate().map_err(|e| schema(path, e.to_string()))?;
            Ok(cell)
        }
        "slab" => {
            let base = parse_open_cell(get(v, "base", path)?, &format!("{path}.base"))?;
            let d = base.dim();
            let wall = |key: &str, inf: Wall| -> Result<Wall> {
                let p = format!("{path}.{key}");
                match get(v, key, path)? {
                    Value::String(s) if matches!(s.as_str(), "-inf" | "+inf" | "inf") => Ok(inf),
                    w => Ok(Wall::Fn(expr_at(w, d, &p)?)),
                }
            };
            let cell = OpenCellDesc::slab(base, wall("lower", Wall::NegInf)?, wall("upper", Wall::PosInf)?);
            cell.validate().map_err(|e| schema(path, e.to_string()))?;
            Ok(cell)
        }
        other => Err(schema(&format!("{path}.type"), format!("unknown cell type `{other}`"))),
    }
}

fn parse_stratum(v: &Value, n: usize, path: &str) -> Result<Stratum> {
    let id = get_str(v, "id", path)?.to_string();
    let boundary = match v.get("boundary") {
        None => Vec::new(),
        Some(b) => b
            .as_array()
            .ok_or_else(|| schema(&format!("{path}.boundary"), "expected an array of ids"))?
            .iter()
            .map(|s| s.as_str().map(str::to_string).ok_or_else(|| schema(&format!("{path}.boundary"), "ids are strings")))
            .collect::<Result<_>>()?,
    };
    let kind = match get_str(v, "type", path)? {
        "point" => {
            let at = get_array(v, "at", path)?;
            if at.len() != n {
                return Err(schema(&format!("{path}.at"), format!("expected {n} coordinates, got {}", at.len())));
            }
            let x = at.iter().enumerate().map(|(i, c)| real(c, &format!("{path}.at[{i}]"))).collect::<Result<_>>()?;
            StratumKind::Point(x)
        }
        "cell" => {
            let base = parse_open_cell(get(v, "cell", path)?, &format!("{path}.cell"))?;
            let m = base.dim();
            let map = match v.get("map") {
                None => Vec::new(),
                Some(mv) => mv
                    .as_array()
                    .ok_or_else(|| schema(&format!("{path}.map"), "expected an array of expressions"))?
                    .iter()
                    .enumerate()
                    .map(|(i, e)| expr_at(e, m, &format!("{path}.map[{i}]")))
                    .collect::<Result<Vec<_>>>()?,
            };
            let perm = match v.get("perm") {
                None => (0..n).collect(),
                Some(pv) => pv
                    .as_array()
                    .ok_or_else(|| schema(&format!("{path}.perm"), "expected an array"))?
                    .iter()
                    .map(|i| i.as_u64().map(|i| i as usize).ok_or_else(|| schema(&format!("{path}.perm"), "indices are naturals")))
                    .collect::<Result<Vec<_>>>()?,
            };
            let cell = GraphCellDesc::new(n, base, map, perm).map_err(|e| schema(path, e.to_string()))?;
            StratumKind::Cell(Arc::new(cell))
        }
        other => return Err(schema(&format!("{path}.type"), format!("unknown stratum type `{other}`"))),
    };
    Ok(Stratum { id, kind, boundary })
}

fn parse_field(v: &Value, n: usize, p: u32, path: &str) -> Result<StratumField> {
    if let Some(g) = v.get("taylor_of") {
        let g = expr_at(g, n, &format!("{path}.taylor_of"))?;
        return StratumField::taylor_of(&g, p).map_err(|e| schema(path, e.to_string()));
    }
    let coeffs = get_array(v, "coeffs", path)?;
    let mut entries = Vec::new();
    for (i, c) in coeffs.iter().enumerate() {
        let cp = format!("{path}.coeffs[{i}]");
        let alpha: Vec<u32> = get_array(c, "alpha", &cp)?
            .iter()
            .map(|k| k.as_u64().map(|k| k as u32).ok_or_else(|| schema(&format!("{cp}.alpha"), "entries are naturals")))
            .collect::<Result<_>>()?;
        if alpha.len() != n {
            return Err(schema(&format!("{cp}.alpha"), format!("expected {n} entries")));
        }
        entries.push((MultiIndex::new(alpha), expr_at(get(c, "expr", &cp)?, n, &format!("{cp}.expr"))?));
    }
    StratumField::from_coeffs(n, p, entries).map_err(|e| schema(path, e.to_string()))
}

/// Default bounding box: `WHITNEY_BBOX` if set and positive, else [`DEFAULT_BBOX`].
pub fn default_bbox() -> f64 {
    std::env::var(BBOX_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<f64>().ok())
        .filter(|b| *b > 0.0 && b.is_finite())
        .unwrap_or(DEFAULT_BBOX)
}

impl Scene {
    pub fn from_json_str(text: &str) -> Result<Scene> {
        let v: Value = serde_json::from_str(text)
            .map_err(|e| schema(&format!("line {}, column {}", e.line(), e.column()), e.to_string()))?;
        Scene::from_value(&v)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Scene::from_json_str(&text)
    }

    pub fn from_value(v: &Value) -> Result<Scene> {
        let root = "$";
        match v.get("schema").and_then(Value::as_str) {
            Some(SCHEMA_VERSION) => {}
            Some(other) => return Err(schema("$.schema", format!("unsupported version `{other}`"))),
            None => return Err(schema("$.schema", format!("missing; expected `{SCHEMA_VERSION}`"))),
        }
        let name = v.get("name").and_then(Value::as_str).unwrap_or("scene").to_string();
        let n = get_usize(v, "n", root)?;
        if n == 0 {
            return Err(schema("$.n", "ambient dimension must be positive"));
        }
        let p = get_usize(v, "p", root)? as u32;
        let q = get_usize(v, "q", root)? as u32;
        if p > q {
            return Err(schema("$.q", format!("need p <= q, got p = {p}, q = {q}")));
        }
        let bbox = match v.get("bbox") {
            Some(b) => real(b, "$.bbox")?,
            None => default_bbox(),
        };
        let strata_v = get_array(v, "strata", root)?;
        if strata_v.is_empty() {
            return Err(Error::StratificationInvalid("the strata list is empty".into()));
        }
        let mut strata = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, s) in strata_v.iter().enumerate() {
            let st = parse_stratum(s, n, &format!("$.strata[{i}]"))?;
            if !ids.insert(st.id.clone()) {
                return Err(schema(&format!("$.strata[{i}].id"), format!("duplicate id `{}`", st.id)));
            }
            strata.push(st);
        }
        for s in &strata {
            for b in &s.boundary {
                if !ids.contains(b) {
                    return Err(Error::StratificationInvalid(format!(
                        "stratification not closed: boundary stratum `{b}` of `{}` is not present",
                        s.id
                    )));
                }
            }
        }

        let mut fields = BTreeMap::new();
        if let Some(g) = v.get("field") {
            let f = parse_field(g, n, p, "$.field")?;
            for s in &strata {
                fields.insert(s.id.clone(), f.clone());
            }
        }
        if let Some(list) = v.get("fields") {
            let list = list.as_array().ok_or_else(|| schema("$.fields", "expected an array"))?;
            for (i, f) in list.iter().enumerate() {
                let path = format!("$.fields[{i}]");
                let id = get_str(f, "stratum", &path)?;
                if !ids.contains(id) {
                    return Err(schema(&format!("{path}.stratum"), format!("unknown stratum `{id}`")));
                }
                fields.insert(id.to_string(), parse_field(f, n, p, &path)?);
            }
        }
        for s in &strata {
            if !fields.contains_key(&s.id) {
                return Err(schema("$.fields", format!("no field given for stratum `{}`", s.id)));
            }
        }

        let mut flat_on = BTreeSet::new();
        if let Some(list) = v.get("flat_on") {
            for (i, id) in list.as_array().ok_or_else(|| schema("$.flat_on", "expected an array"))?.iter().enumerate() {
                let id = id.as_str().ok_or_else(|| schema(&format!("$.flat_on[{i}]"), "expected an id"))?;
                if !ids.contains(id) {
                    return Err(schema(&format!("$.flat_on[{i}]"), format!("unknown stratum `{id}`")));
                }
                flat_on.insert(id.to_string());
            }
        }

        let mut plan = Plan { sample_box: bbox, ..Plan::default() };
        if let Some(pv) = v.get("plan") {
            if let Some(c) = pv.get("checks") {
                plan.checks = c
                    .as_array()
                    .ok_or_else(|| schema("$.plan.checks", "expected an array"))?
                    .iter()
                    .map(|s| s.as_str().map(str::to_string).ok_or_else(|| schema("$.plan.checks", "check names are strings")))
                    .collect::<Result<_>>()?;
            }
            if let Some(s) = pv.get("seed") {
                plan.seed = s.as_u64().ok_or_else(|| schema("$.plan.seed", "expected a natural number"))?;
            }
            if pv.get("samples").is_some() {
                plan.samples = get_usize(pv, "samples", "$.plan")?;
            }
            if let Some(t) = pv.get("tol") {
                plan.tol = real(t, "$.plan.tol")?;
            }
            if let Some(b) = pv.get("sample_box") {
                plan.sample_box = real(b, "$.plan.sample_box")?;
            }
        }

        let scene = Scene { name, n, p, q, strata, fields, flat_on, plan, bbox };
        scene.check_dimensions()?;
        Ok(scene)
    }

    fn check_dimensions(&self) -> Result<()> {
        for s in &self.strata {
            if let StratumKind::Cell(c) = &s.kind {
                if c.n() != self.n {
                    return Err(Error::StratificationInvalid(format!("stratum `{}` lives in R^{}", s.id, c.n())));
                }
            }
            for b in &s.boundary {
                let bd = self.stratum(b)?.dim();
                if bd >= s.dim() {
                    return Err(Error::StratificationInvalid(format!(
                        "boundary stratum `{b}` of `{}` has dimension {bd} >= {}",
                        s.id,
                        s.dim()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn stratum(&self, id: &str) -> Result<&Stratum> {
        self.strata.iter().find(|s| s.id == id).ok_or_else(|| Error::UnknownStratum(id.to_string()))
    }

    /// `dim E`; an empty scene has dimension 0.
    pub fn dim(&self) -> usize {
        self.strata.iter().map(Stratum::dim).max().unwrap_or(0)
    }

    pub fn ids(&self) -> Vec<String> {
        self.strata.iter().map(|s| s.id.clone()).collect()
    }

    /// The sub-scene on the given strata (kept in scene order).
    pub fn restrict(&self, ids: &[String]) -> Result<Scene> {
        let keep: BTreeSet<&String> = ids.iter().collect();
        for id in ids {
            self.stratum(id)?;
        }
        let strata: Vec<Stratum> = self.strata.iter().filter(|s| keep.contains(&s.id)).cloned().collect();
        let kept: Vec<String> = strata.iter().map(|s| s.id.clone()).collect();
        Ok(Scene {
            name: self.name.clone(),
            n: self.n,
            p: self.p,
            q: self.q,
            fields: restrict_field(&self.fields, &kept)?,
            flat_on: self.flat_on.iter().filter(|id| keep.contains(id)).cloned().collect(),
            strata,
            plan: self.plan.clone(),
            bbox: self.bbox,
        })
    }

    /// Union of the closures of the listed strata.
    pub fn closure_of(&self, ids: &[String]) -> Result<SetDesc> {
        let mut set = SetDesc::empty();
        for id in ids {
            for piece in self.stratum(id)?.closure(self.bbox).pieces() {
                set.push(piece.clone());
            }
        }
        Ok(set)
    }

    /// `E`, the union of all closures.
    pub fn support(&self) -> SetDesc {
        let mut set = SetDesc::empty();
        for s in &self.strata {
            for piece in s.closure(self.bbox).pieces() {
                set.push(piece.clone());
            }
        }
        set
    }

    /// Same scene with a different field family.
    pub fn with_fields(&self, fields: BTreeMap<String, StratumField>) -> Scene {
        Scene { fields, ..self.clone() }
    }
}

/// One line of a validation report.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationCheck {
    pub name: String,
    pub stratum: Option<String>,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub scene: String,
    pub checks: Vec<ValidationCheck>,
    pub pass: bool,
}

const CLOSURE_TOL: f64 = 1e-7;
const MEMBERSHIP_TAU: f64 = 1e-9;

/// Sampling validation: closure of the stratification, disjointness,
/// regularity and Lipschitz probes of graph maps, field consistency and the
/// flatness declarations.
pub fn validate_scene(scene: &Scene) -> Result<ValidationReport> {
    let mut checks = Vec::new();
    let mut push = |name: &str, stratum: Option<&str>, pass: bool, detail: String| {
        checks.push(ValidationCheck { name: name.into(), stratum: stratum.map(str::to_string), pass, detail });
    };
    let bbox = scene.bbox;

    for s in &scene.strata {
        let StratumKind::Cell(cell) = &s.kind else { continue };
        // frontier pieces must lie in the declared boundary strata
        let declared = scene.closure_of(&s.boundary)?;
        let mut worst = 0.0f64;
        let mut witness = None;
        for piece in cell.boundary_pieces(bbox)? {
            for x in SetDesc::new(vec![piece]).sample(0, bbox) {
                let d = declared.distance(&x).lower;
                if d > worst {
                    worst = d;
                    witness = Some(x);
                }
            }
        }
        let pass = worst <= CLOSURE_TOL;
        let detail = if pass {
            format!("frontier within {worst:.2e} of the declared boundary")
        } else {
            format!("stratification not closed: frontier point {:?} is {worst:.3e} from the declared boundary", witness.unwrap_or_default())
        };
        push("closure", Some(&s.id), pass, detail);

        // declared boundary strata must sit in the closure
        let closure = s.closure(bbox);
        let mut off = 0.0f64;
        for b in &s.boundary {
            for x in scene.stratum(b)?.grid_samples(0, bbox) {
                off = off.max(closure.distance(&x).lower);
            }
        }
        push(
            "frontier",
            Some(&s.id),
            off <= CLOSURE_TOL,
            format!("declared boundary strata within {off:.2e} of the closure"),
        );

        let mut regular = true;
        let mut detail = Vec::new();
        let base = cell.base();
        for (k, f) in cell.graph_map().iter().enumerate() {
            let r = check_lambda_regular(f, base, scene.q, 0, bbox)?;
            if let RegularityVerdict::UnboundedSuspicion { alpha, witness } = &r.verdict {
                regular = false;
                detail.push(format!("map[{k}] suspicious at alpha {alpha:?}, u = {witness:?}"));
            }
        }
        let lip = lipschitz_estimate(cell.graph_map(), base, 1, bbox)?;
        detail.push(format!("M = {:.4}, L = {:.4}", lip.m_hat, lip.l_hat));
        push("regularity", Some(&s.id), regular && lip.m_hat.is_finite(), detail.join("; "));

        match check_glaeser(&scene.fields[&s.id], cell, 1, 1e-8) {
            Ok(g) => push("consistency", Some(&s.id), true, format!("{} samples, max residual {:.2e}", g.samples, g.max_residual)),
            Err(Error::ConsistencyViolation(msg)) => push("consistency", Some(&s.id), false, msg),
            Err(e) => return Err(e),
        }
    }

    // pairwise disjointness on samples
    for (i, a) in scene.strata.iter().enumerate() {
        let pts = a.grid_samples(0, bbox);
        for b in scene.strata.iter().skip(i + 1) {
            let hit = pts.iter().find(|x| b.contains(x, MEMBERSHIP_TAU) == Membership::Inside).cloned().or_else(|| {
                b.grid_samples(0, bbox).into_iter().find(|x| a.contains(x, MEMBERSHIP_TAU) == Membership::Inside)
            });
            if let Some(x) = hit {
                push("disjoint", Some(&a.id), false, format!("`{}` and `{}` share the point {x:?}", a.id, b.id));
            }
        }
    }

    for id in &scene.flat_on {
        let s = scene.stratum(id)?;
        let field = &scene.fields[id];
        let mut worst = 0.0f64;
        for x in s.grid_samples(0, bbox) {
            if let Ok(j) = field.jet_at(&x) {
                worst = worst.max(j.max_abs());
            }
        }
        push("flatness", Some(id), worst <= 1e-12, format!("max |F^alpha| = {worst:.2e} on samples"));
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(ValidationReport { scene: scene.name.clone(), checks, pass })
}

/// Seeded random samples for every stratum, in scene order.
pub fn stratum_samples(scene: &Scene, per_stratum: usize, seed: u64) -> Vec<(String, Vec<Vec<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scene
        .strata
        .iter()
        .map(|s| (s.id.clone(), s.random_samples(per_stratum, &mut rng, scene.plan.sample_box)))
        .collect()
}

/// Closure pieces of all strata except `id`, as one set.
pub fn complement_closure(scene: &Scene, id: &str) -> Result<SetDesc> {
    let others: Vec<String> = scene.strata.iter().filter(|s| s.id != id).map(|s| s.id.clone()).collect();
    scene.closure_of(&others)
}
