use std::path::{Path, PathBuf};

use whitney::cli::{run, EXIT_FAIL, EXIT_INPUT, EXIT_PASS};

fn scene(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenes").join(name).display().to_string()
}

fn whitney(args: &[&str]) -> i32 {
    run(std::iter::once("whitney").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_exit_codes() {
    assert_eq!(whitney(&["validate", &scene("half-line.json")]), EXIT_PASS);
    assert_eq!(whitney(&["validate", &scene("defect-wrong-coefficient.json")]), EXIT_FAIL);
    assert_eq!(whitney(&["validate", &scene("defect-missing-boundary.json")]), EXIT_INPUT);
    assert_eq!(whitney(&["validate", &scene("defect-empty.json")]), EXIT_INPUT);
    assert_eq!(whitney(&["validate", "/nonexistent/scene.json"]), EXIT_INPUT);
}

#[test]
fn malformed_json_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, "{\n  \"name\": \"x\",\n  \"n\": }\n").unwrap();
    match whitney::cli::cmd_validate(&p) {
        Err(whitney::Error::Schema { path, .. }) => assert!(path.contains("line 3"), "{path}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn half_line_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = whitney::cli::cmd_extend(Path::new(&scene("half-line.json")), &out, &["-1:1:0.01".into()], None, true).unwrap();
    assert_eq!(r.values.len(), 201);
    let row = r.values.iter().find(|v| (v[0] - 0.5).abs() < 1e-12).unwrap();
    assert!((row[1] - 0.125).abs() < 1e-15);
    for f in ["scene.json", "extension.json", "report.json", "values.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
}

#[test]
fn extend_then_verify() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let sc = scene("parabola.json");
    assert_eq!(whitney(&["extend", &sc, "-o", s(&out)]), EXIT_PASS);
    assert_eq!(whitney(&["verify", &sc, s(&out)]), EXIT_PASS);
    assert!(out.join("verify.json").is_file());
    // Whitney-only run must not carry agreement results.
    let r = whitney::cli::cmd_verify(Path::new(&sc), &out, &["whitney-only".into()], None).unwrap();
    assert_eq!(r.checks.len(), 1);
    assert_eq!(r.checks[0].name, "whitney");
    assert!(r.agreement.is_none());
    // A different scene against this artifact is a mismatch.
    assert_eq!(whitney(&["verify", &scene("square.json"), s(&out)]), EXIT_INPUT);
}

#[test]
fn planted_defect_verifies_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let sc = scene("defect-wrong-coefficient.json");
    assert_eq!(whitney(&["extend", &sc, "-o", s(&out)]), EXIT_PASS);
    assert_eq!(whitney(&["verify", &sc, s(&out)]), EXIT_FAIL);
}

#[test]
fn plotdata_selectors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    whitney::cli::cmd_extend(Path::new(&scene("half-line.json")), &out, &["-1:1:0.5".into()], None, true).unwrap();
    let ext = whitney::cli::cmd_plotdata(&out, "extension").unwrap();
    assert_eq!(ext.lines().next(), Some("x0,f,d_E"));
    assert_eq!(ext.lines().count(), 6);
    let d = whitney::cli::cmd_plotdata(&out, "derivative:alpha=1").unwrap();
    assert_eq!(d.lines().next(), Some("x0,f,D1f,d_E"));
    let fl = whitney::cli::cmd_plotdata(&out, "flatness:kappa=1").unwrap();
    assert_eq!(fl.lines().next(), Some("s,normalized"));
    assert!(fl.lines().count() > 6);
    assert!(whitney::cli::cmd_plotdata(&out, "nope").is_err());
    assert_eq!(whitney(&["plotdata", s(&out), "--select", "nope"]), EXIT_INPUT);

    let empty = dir.path().join("empty");
    whitney::cli::cmd_extend(Path::new(&scene("half-line.json")), &empty, &["1:0:0.5".into()], None, true).unwrap();
    assert_eq!(whitney::cli::cmd_plotdata(&empty, "extension").unwrap(), "x0,f,d_E\n");
}
