use std::path::PathBuf;

use whitney::extension::{extend_field, ExtendOptions};
use whitney::scene::{validate_scene, Scene};
use whitney::verify::{check_extension, check_whitney_scene, AgreementOpts};
use whitney::Error;

const GOOD: [&str; 5] = ["finite-set.json", "half-line.json", "parabola.json", "square.json", "full-space.json"];

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenes").join(name)
}

fn scene(name: &str) -> Scene {
    Scene::from_path(&path(name)).unwrap()
}

#[test]
fn good_scenes_validate_extend_and_agree() {
    for name in GOOD {
        let s = scene(name);
        let v = validate_scene(&s).unwrap();
        let failed: Vec<_> = v.checks.iter().filter(|c| !c.pass).map(|c| &c.detail).collect();
        assert!(v.pass, "{name}: {failed:?}");
        let f = extend_field(&s, &ExtendOptions::default()).unwrap();
        let a = check_extension(&f, &s, &AgreementOpts::default()).unwrap();
        assert!(a.pass, "{name}: max rel {:e}", a.max_rel);
        assert!(a.max_rel < 1e-4);
        assert!(check_whitney_scene(&s, 0).unwrap().pass, "{name}");
    }
}

#[test]
fn agreement_verdict_is_stable_under_reseeding() {
    for name in ["parabola.json", "square.json"] {
        let s = scene(name);
        let f = extend_field(&s, &ExtendOptions::default()).unwrap();
        for seed in [1, 7] {
            let a = check_extension(&f, &s, &AgreementOpts { seed, ..AgreementOpts::default() }).unwrap();
            assert!(a.pass, "{name} seed {seed}");
        }
    }
}

#[test]
fn wrong_coefficient_is_caught() {
    let s = scene("defect-wrong-coefficient.json");
    let v = validate_scene(&s).unwrap();
    assert!(!v.pass);
    assert!(v.checks.iter().any(|c| c.name == "consistency" && !c.pass));
    let f = extend_field(&s, &ExtendOptions::default()).unwrap();
    assert!(!check_extension(&f, &s, &AgreementOpts::default()).unwrap().pass);
}

#[test]
fn structural_defects_are_rejected_at_load() {
    match Scene::from_path(&path("defect-missing-boundary.json")) {
        Err(Error::StratificationInvalid(m)) => assert!(m.contains("stratification not closed"), "{m}"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(Scene::from_path(&path("defect-empty.json")), Err(Error::StratificationInvalid(_))));
}

#[test]
fn skeleton_subtraction_is_load_bearing() {
    let s = scene("square.json");
    let opts = ExtendOptions { subtract_skeleton: false, ..ExtendOptions::default() };
    let f = extend_field(&s, &opts).unwrap();
    assert!(!check_extension(&f, &s, &AgreementOpts::default()).unwrap().pass);
}

#[test]
fn full_space_extension_is_the_field_itself() {
    let s = scene("full-space.json");
    let f = extend_field(&s, &ExtendOptions::default()).unwrap();
    for i in 0..21 {
        for j in 0..21 {
            let (x, y) = (-1.0 + 0.1 * i as f64, -1.0 + 0.1 * j as f64);
            let want = x * x * y + 1.0 / (1.0 + y * y);
            assert!((f.value(&[x, y]).unwrap() - want).abs() < 1e-12);
        }
    }
}
