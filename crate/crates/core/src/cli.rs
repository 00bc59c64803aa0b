//! Command-line front end: `validate`, `extend`, `verify`, `plotdata`.
//!
//! Exit codes: 0 all checks pass, 1 a verification check failed, 2 input
//! error, 3 engine error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::cutoff::{verify_cutoff, CutoffVerifyOpts};
use crate::error::{Error, Result};
use crate::extension::{approach_sequence, extend_field, flatness_rate_probe, AssemblyTrace, ExtendOptions, ExtensionFn};
use crate::geometry::{norm, SetPiece};
use crate::scene::{complement_closure, validate_scene, Scene, StratumKind, ValidationReport};
use crate::verify::{check_extension, check_whitney_scene, finite_difference, AgreementOpts, AgreementReport, DECAY_THETA};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_ENGINE: i32 = 3;

const VERSION: &str = env!("CARGO_PKG_VERSION");
const SCENE_COPY: &str = "scene.json";
const ARTIFACT: &str = "extension.json";
const REPORT: &str = "report.json";
const VALUES: &str = "values.csv";
const VERIFY: &str = "verify.json";
const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "whitney", version, about = "Extend C^p Whitney fields from stratified closed sets and verify the result")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Schema, geometry and field-consistency checks on a scene file.
    Validate { scene: PathBuf },
    /// Build the extension and sample it on a grid.
    Extend {
        scene: PathBuf,
        /// Run directory.
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// `a:b:step`, once per axis (a single flag applies to every axis).
        #[arg(long = "grid", allow_hyphen_values = true)]
        grid: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Skip the skeleton subtraction (ablation).
        #[arg(long, hide = true)]
        no_skeleton_subtraction: bool,
    },
    /// Re-run the checks of the plan against an extension artifact.
    Verify {
        scene: PathBuf,
        /// Run directory written by `extend`, or its `extension.json`.
        artifact: PathBuf,
        /// Comma-separated subset of agreement, whitney, cutoff (`<name>-only` also accepted).
        #[arg(long, value_delimiter = ',')]
        checks: Vec<String>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Emit CSV columns for plotting from a run.
    Plotdata {
        /// Run directory or its `report.json`.
        report: PathBuf,
        /// `extension`, `derivative:alpha=i,j,..` or `flatness:kappa=k`.
        #[arg(long)]
        select: String,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
}

/// Exit code for an error: malformed input versus a failure inside the engine.
pub fn exit_code_for(e: &Error) -> i32 {
    match e {
        Error::Schema { .. }
        | Error::Parse(_)
        | Error::Io(_)
        | Error::StratificationInvalid(_)
        | Error::UnknownStratum(_)
        | Error::ArityMismatch { .. }
        | Error::NotAGraphCell(_)
        | Error::FlatnessDeclarationMissing(_) => EXIT_INPUT,
        _ => EXIT_ENGINE,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_PASS };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.cmd {
        Command::Validate { scene } => cmd_validate(&scene).map(|r| {
            println!("{}", to_json(&r));
            if r.pass { EXIT_PASS } else { EXIT_FAIL }
        }),
        Command::Extend { scene, out, grid, seed, no_skeleton_subtraction } => {
            cmd_extend(&scene, &out, &grid, seed, !no_skeleton_subtraction).map(|r| {
                println!("wrote {} samples to {}", r.values.len(), out.display());
                EXIT_PASS
            })
        }
        Command::Verify { scene, artifact, checks, tol } => cmd_verify(&scene, &artifact, &checks, tol).map(|r| {
            for c in &r.checks {
                println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.summary);
            }
            if r.pass { EXIT_PASS } else { EXIT_FAIL }
        }),
        Command::Plotdata { report, select, out } => cmd_plotdata(&report, &select).and_then(|csv| match out {
            Some(p) => std::fs::write(&p, csv).map(|_| EXIT_PASS).map_err(|e| Error::Io(format!("{}: {e}", p.display()))),
            None => {
                print!("{csv}");
                Ok(EXIT_PASS)
            }
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, contents).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
}

fn read_file(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
}

pub fn cmd_validate(scene: &Path) -> Result<ValidationReport> {
    validate_scene(&Scene::from_path(scene)?)
}

/// One axis of the sampling grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Axis {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Axis> {
        let bad = |msg: &str| Error::Schema { path: format!("--grid {s}"), msg: msg.into() };
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected a:b:step"));
        }
        let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad("not a number"));
        let (from, to, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !from.is_finite() || !to.is_finite() {
            return Err(bad("need finite ends and a positive step"));
        }
        Ok(Axis { from, to, step })
    }

    /// `from + i step` up to `to` (inclusive within rounding); empty when `to < from`.
    pub fn points(&self) -> Vec<f64> {
        if self.to < self.from {
            return Vec::new();
        }
        let count = ((self.to - self.from) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.from + i as f64 * self.step).collect()
    }
}

fn grid_points(axes: &[Axis]) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for a in axes {
        let pts = a.points();
        out = out.into_iter().flat_map(|p| pts.iter().map(move |&v| [p.clone(), vec![v]].concat())).collect();
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct ExtendSettings {
    pub subtract_skeleton: bool,
    pub eta0: f64,
    pub max_halvings: u32,
    pub leak_samples: usize,
}

/// The artifact `verify` reloads.
#[derive(Clone, Debug, Serialize)]
pub struct Artifact {
    pub schema: &'static str,
    pub version: &'static str,
    pub scene_sha256: String,
    pub seed: u64,
    pub settings: ExtendSettings,
    pub trace: AssemblyTrace,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub version: &'static str,
    pub scene: String,
    pub scene_sha256: String,
    pub seed: u64,
    pub n: usize,
    pub p: u32,
    pub q: u32,
    pub validation: ValidationReport,
    pub trace: AssemblyTrace,
    pub grid: Vec<Axis>,
    /// Rows `(x..., f(x), d(x, E))`.
    pub values: Vec<Vec<f64>>,
}

fn options_for(seed: u64, subtract: bool) -> ExtendOptions {
    ExtendOptions { subtract_skeleton: subtract, seed, ..ExtendOptions::default() }
}

fn settings_of(o: &ExtendOptions) -> ExtendSettings {
    ExtendSettings {
        subtract_skeleton: o.subtract_skeleton,
        eta0: o.eta0,
        max_halvings: o.max_halvings,
        leak_samples: o.leak_samples,
    }
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    sha256: String,
}

fn write_manifest(dir: &Path) -> Result<()> {
    let mut entries = Vec::new();
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != MANIFEST)
        .collect();
    names.sort();
    for name in names {
        let bytes = std::fs::read(dir.join(&name))?;
        entries.push(ManifestEntry { file: name, sha256: sha256_hex(&bytes) });
    }
    write_file(dir, MANIFEST, &to_json(&serde_json::json!({ "version": VERSION, "files": entries })))
}

pub fn cmd_extend(scene_path: &Path, out: &Path, grid: &[String], seed: Option<u64>, subtract: bool) -> Result<RunReport> {
    let text = read_file(scene_path)?;
    let scene = Scene::from_json_str(&text)?;
    let mut axes: Vec<Axis> = grid.iter().map(|g| Axis::parse(g)).collect::<Result<_>>()?;
    match axes.len() {
        0 => axes = vec![Axis { from: -1.0, to: 1.0, step: 0.1 }; scene.n],
        1 => axes = vec![axes[0]; scene.n],
        k if k != scene.n => {
            return Err(Error::Schema { path: "--grid".into(), msg: format!("{k} axes given for R^{}", scene.n) });
        }
        _ => {}
    }
    let seed = seed.unwrap_or(scene.plan.seed);
    let opts = options_for(seed, subtract);
    let validation = validate_scene(&scene)?;
    let f = extend_field(&scene, &opts)?;
    let support = scene.support();
    let mut values = Vec::new();
    for x in grid_points(&axes) {
        let v = f.value(&x)?;
        let d = support.distance(&x).mid();
        values.push([x, vec![v, d]].concat());
    }
    let scene_sha256 = sha256_hex(text.as_bytes());
    let trace = f.trace();
    let artifact = Artifact {
        schema: "whitney-extension/1",
        version: VERSION,
        scene_sha256: scene_sha256.clone(),
        seed,
        settings: settings_of(&opts),
        trace: trace.clone(),
    };
    let report = RunReport {
        schema: "whitney-run/1",
        version: VERSION,
        scene: scene.name.clone(),
        scene_sha256,
        seed,
        n: scene.n,
        p: scene.p,
        q: scene.q,
        validation,
        trace,
        grid: axes,
        values,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    write_file(out, SCENE_COPY, &text)?;
    write_file(out, ARTIFACT, &to_json(&artifact))?;
    write_file(out, REPORT, &to_json(&report))?;
    write_file(out, VALUES, &values_csv(scene.n, &report.values))?;
    write_manifest(out)?;
    Ok(report)
}

fn values_csv(n: usize, rows: &[Vec<f64>]) -> String {
    let mut s = String::new();
    let head: Vec<String> = (0..n).map(|i| format!("x{i}")).chain(["f".into(), "d_E".into()]).collect();
    s.push_str(&head.join(","));
    s.push('\n');
    for r in rows {
        s.push_str(&r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(","));
        s.push('\n');
    }
    s
}

/// Rebuilds the extension recorded in an artifact, checking scene hash,
/// version and the assembly trace.
fn load_artifact(scene_text: &str, artifact: &Path) -> Result<(Scene, ExtensionFn, ExtendOptions, PathBuf)> {
    let (dir, file) = if artifact.is_dir() {
        (artifact.to_path_buf(), artifact.join(ARTIFACT))
    } else {
        (artifact.parent().map_or_else(PathBuf::new, Path::to_path_buf), artifact.to_path_buf())
    };
    let mismatch = |msg: String| Error::Schema { path: file.display().to_string(), msg: format!("artifact/version mismatch: {msg}") };
    let v: Value = serde_json::from_str(&read_file(&file)?)
        .map_err(|e| Error::Schema { path: file.display().to_string(), msg: e.to_string() })?;
    if v.get("schema").and_then(Value::as_str) != Some("whitney-extension/1") {
        return Err(mismatch("not an extension artifact".into()));
    }
    if v.get("version").and_then(Value::as_str) != Some(VERSION) {
        return Err(mismatch(format!("written by version {}", v.get("version").unwrap_or(&Value::Null))));
    }
    if v.get("scene_sha256").and_then(Value::as_str) != Some(sha256_hex(scene_text.as_bytes()).as_str()) {
        return Err(mismatch("scene file differs from the one extended".into()));
    }
    let seed = v.get("seed").and_then(Value::as_u64).ok_or_else(|| mismatch("missing seed".into()))?;
    let subtract = v
        .pointer("/settings/subtract_skeleton")
        .and_then(Value::as_bool)
        .ok_or_else(|| mismatch("missing settings".into()))?;
    let scene = Scene::from_json_str(scene_text)?;
    let opts = options_for(seed, subtract);
    let f = extend_field(&scene, &opts)?;
    // Same text round trip as the stored copy, so floats compare bit for bit.
    let rebuilt: Value = serde_json::from_str(&to_json(&f.trace())).expect("trace round-trips");
    if v.get("trace") != Some(&rebuilt) {
        return Err(mismatch("assembly trace does not reproduce".into()));
    }
    Ok((scene, f, opts, dir))
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub name: String,
    pub pass: bool,
    pub summary: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct CutoffSummary {
    pub stratum: String,
    pub pass: bool,
    pub plateau_failed: usize,
    pub support_failed: usize,
    pub max_ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub schema: &'static str,
    pub version: &'static str,
    pub scene: String,
    pub scene_sha256: String,
    pub seed: u64,
    pub tol: f64,
    pub checks: Vec<CheckSummary>,
    pub agreement: Option<AgreementReport>,
    pub whitney_failures: Vec<Value>,
    pub cutoffs: Vec<CutoffSummary>,
    pub pass: bool,
}

fn normalize_checks(requested: &[String], plan: &[String]) -> Result<Vec<String>> {
    let list: Vec<String> = if requested.is_empty() { plan.to_vec() } else { requested.to_vec() };
    let mut out = Vec::new();
    for c in list {
        let name = c.trim().trim_end_matches("-only").to_string();
        if !matches!(name.as_str(), "agreement" | "whitney" | "cutoff") {
            return Err(Error::Schema { path: "--checks".into(), msg: format!("unknown check `{c}`") });
        }
        if !out.contains(&name) {
            out.push(name);
        }
    }
    Ok(out)
}

pub fn cmd_verify(scene_path: &Path, artifact: &Path, checks: &[String], tol: Option<f64>) -> Result<VerifyReport> {
    let text = read_file(scene_path)?;
    let (scene, f, opts, dir) = load_artifact(&text, artifact)?;
    let checks = normalize_checks(checks, &scene.plan.checks)?;
    let tol = tol.unwrap_or(scene.plan.tol);
    let mut summaries = Vec::new();
    let mut agreement = None;
    let mut whitney_failures = Vec::new();
    let mut cutoffs = Vec::new();
    for c in &checks {
        match c.as_str() {
            "agreement" => {
                let r = check_extension(&f, &scene, &AgreementOpts { samples: scene.plan.samples, seed: opts.seed, tol })?;
                summaries.push(CheckSummary {
                    name: c.clone(),
                    pass: r.pass,
                    summary: format!("max relative deviation {:.3e} (tol {tol:e}) over {} strata", r.max_rel, r.strata.len()),
                });
                agreement = Some(r);
            }
            "whitney" => {
                let r = check_whitney_scene(&scene, opts.seed)?;
                let failed: Vec<_> = r.entries.iter().filter(|e| !e.fit.pass).collect();
                summaries.push(CheckSummary {
                    name: c.clone(),
                    pass: r.pass,
                    summary: format!("{} rate fits, {} failed", r.entries.len(), failed.len()),
                });
                whitney_failures = failed.into_iter().map(|e| serde_json::to_value(e).expect("entry serializes")).collect();
            }
            _ => {
                let vopts = CutoffVerifyOpts { samples: 2000, bound_samples: 200, seed: opts.seed, scale: 1.0 };
                for (id, spec, omega) in f.cutoffs() {
                    let r = verify_cutoff(&omega, &spec, &vopts)?;
                    cutoffs.push(CutoffSummary {
                        stratum: id,
                        pass: r.plateau.pass() && r.support.pass(),
                        plateau_failed: r.plateau.failed,
                        support_failed: r.support.failed,
                        max_ratio: r.bounds.iter().map(|b| b.ratio).fold(0.0, f64::max),
                    });
                }
                let pass = cutoffs.iter().all(|c| c.pass);
                summaries.push(CheckSummary { name: c.clone(), pass, summary: format!("{} cutoffs checked", cutoffs.len()) });
            }
        }
    }
    let pass = summaries.iter().all(|c| c.pass);
    let report = VerifyReport {
        schema: "whitney-verify/1",
        version: VERSION,
        scene: scene.name.clone(),
        scene_sha256: sha256_hex(text.as_bytes()),
        seed: opts.seed,
        tol,
        checks: summaries,
        agreement,
        whitney_failures,
        cutoffs,
        pass,
    };
    if dir.is_dir() {
        write_file(&dir, VERIFY, &to_json(&report))?;
        write_manifest(&dir)?;
    }
    Ok(report)
}

fn selector_error(select: &str, msg: &str) -> Error {
    Error::Schema { path: format!("--select {select}"), msg: msg.into() }
}

/// CSV for the selector from a run directory (or its `report.json`).
pub fn cmd_plotdata(report: &Path, select: &str) -> Result<String> {
    let dir = if report.is_dir() { report.to_path_buf() } else { report.parent().map_or_else(PathBuf::new, Path::to_path_buf) };
    let file = if report.is_dir() { report.join(REPORT) } else { report.to_path_buf() };
    let v: Value = serde_json::from_str(&read_file(&file)?)
        .map_err(|e| Error::Schema { path: file.display().to_string(), msg: e.to_string() })?;
    let n = v.get("n").and_then(Value::as_u64).ok_or_else(|| selector_error(select, "report has no dimension"))? as usize;
    let rows: Vec<Vec<f64>> = v
        .get("values")
        .and_then(Value::as_array)
        .map(|rows| {
            rows.iter()
                .map(|r| r.as_array().map(|c| c.iter().filter_map(Value::as_f64).collect()).unwrap_or_default())
                .collect()
        })
        .unwrap_or_default();
    let (kind, arg) = select.split_once(':').unwrap_or((select, ""));
    match kind {
        "extension" => Ok(values_csv(n, &rows)),
        "derivative" => {
            let alpha = parse_list(arg.strip_prefix("alpha=").ok_or_else(|| selector_error(select, "expected alpha=i,j,.."))?)
                .ok_or_else(|| selector_error(select, "alpha entries are naturals"))?;
            if alpha.len() != n {
                return Err(selector_error(select, "alpha has the wrong length"));
            }
            let (_, f) = rebuild(&dir)?;
            let name = format!("D{}f", alpha.iter().map(u32::to_string).collect::<Vec<_>>().join(""));
            let head: Vec<String> = (0..n).map(|i| format!("x{i}")).chain(["f".into(), name, "d_E".into()]).collect();
            let mut s = head.join(",") + "\n";
            for r in &rows {
                let x = &r[..n];
                let d = finite_difference(&|y: &[f64]| f.value(y), &alpha, x, 1e-3)?;
                let cols = [x.to_vec(), vec![r[n], d.value, r[n + 1]]].concat();
                s.push_str(&cols.iter().map(|c| format!("{c:e}")).collect::<Vec<_>>().join(","));
                s.push('\n');
            }
            Ok(s)
        }
        "flatness" => {
            let kappa: u32 = arg
                .strip_prefix("kappa=")
                .and_then(|k| k.trim().parse().ok())
                .ok_or_else(|| selector_error(select, "expected kappa=k"))?;
            let (scene, f) = rebuild(&dir)?;
            flatness_csv(&scene, &f, kappa, select)
        }
        _ => Err(selector_error(select, "unknown selector")),
    }
}

fn parse_list(s: &str) -> Option<Vec<u32>> {
    s.split(',').map(|t| t.trim().parse().ok()).collect()
}

fn rebuild(dir: &Path) -> Result<(Scene, ExtensionFn)> {
    let text = read_file(&dir.join(SCENE_COPY))?;
    let (scene, f, _, _) = load_artifact(&text, &dir.join(ARTIFACT))?;
    Ok((scene, f))
}

/// `(s, value)` rows of the normalized flatness sequence toward the first
/// frontier point of the first top-dimensional cell, approached from inside.
fn flatness_csv(scene: &Scene, f: &ExtensionFn, kappa: u32, select: &str) -> Result<String> {
    let header = "s,normalized\n".to_string();
    let k = scene.dim();
    let Some((id, cell)) = scene.strata.iter().find_map(|s| match &s.kind {
        StratumKind::Cell(c) if c.dim() == k => Some((s.id.clone(), c.clone())),
        _ => None,
    }) else {
        return Ok(header);
    };
    let Some(target) = cell.boundary_pieces(scene.bbox)?.into_iter().find_map(|p| match p {
        SetPiece::Point(c) => Some(c),
        _ => None,
    }) else {
        return Ok(header);
    };
    if kappa > scene.p {
        return Err(selector_error(select, "kappa exceeds p"));
    }
    let m = cell.dim();
    let u_mid = cell.base().param_point(&vec![0.5; m], scene.plan.sample_box);
    let mid = cell.embed(&u_mid)?;
    let d: Vec<f64> = mid.iter().zip(&target).map(|(a, b)| a - b).collect();
    let nd = norm(&d);
    let dir: Vec<f64> = d.iter().map(|v| v / nd).collect();
    let seq = approach_sequence(&target, &dir, 3..=14);
    let z = complement_closure(scene, &id)?;
    let lambda = scene.stratum(&id)?.closure(scene.bbox);
    let report = flatness_rate_probe(&|y: &[f64]| f.value(y), &z, &lambda, 1.0, scene.p, &seq, DECAY_THETA)?;
    let mut s = header;
    for series in report.series.iter().filter(|s| s.kappa.iter().sum::<u32>() == kappa) {
        for (sc, val) in series.scales.iter().zip(&series.values) {
            s.push_str(&format!("{sc:e},{val:e}\n"));
        }
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_axis_counts() {
        let a = Axis::parse("-1:1:0.01").unwrap();
        assert_eq!(a.points().len(), 201);
        assert!(Axis::parse("0:1").is_err());
        assert!(Axis::parse("0:1:0").is_err());
        assert!(Axis::parse("1:0:0.5").unwrap().points().is_empty());
    }

    #[test]
    fn checks_accept_only_suffix() {
        let plan = vec!["agreement".to_string(), "whitney".to_string()];
        assert_eq!(normalize_checks(&["whitney-only".into()], &plan).unwrap(), vec!["whitney"]);
        assert_eq!(normalize_checks(&[], &plan).unwrap(), plan);
        assert!(normalize_checks(&["bogus".into()], &plan).is_err());
    }

    #[test]
    fn error_codes() {
        assert_eq!(exit_code_for(&Error::Schema { path: "$".into(), msg: String::new() }), EXIT_INPUT);
        assert_eq!(exit_code_for(&Error::SupportLeak { stratum: "a".into(), eta: 0.1 }), EXIT_ENGINE);
    }
}
