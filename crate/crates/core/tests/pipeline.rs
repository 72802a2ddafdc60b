use std::fs;
use std::path::Path;

use nodal_lab::error::Error;
use nodal_lab::field_core::Grid;
use nodal_lab::pipeline::*;
use nodal_lab::singular_integrals::TransformPlan;
use num_complex::Complex64;

fn quick(out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.n = 128;
    c.quick = true;
    c.out = out.to_path_buf();
    c
}

/// report.toml without the wall-clock field.
fn stable_report(dir: &Path) -> String {
    fs::read_to_string(dir.join("report.toml")).unwrap().lines().filter(|l| !l.starts_with("seconds")).collect::<Vec<_>>().join("\n")
}

#[test]
fn same_seed_same_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (quick(&tmp.path().join("a")), quick(&tmp.path().join("b")));
    let ra = run_pipeline(&a).unwrap();
    let rb = run_pipeline(&b).unwrap();
    assert!(ra.failure.is_none());
    assert_eq!(ra.fitted_order, rb.fitted_order);
    assert_eq!(stable_report(&a.out), stable_report(&b.out));
    for f in ["carleman/report.csv", "gauge/report.toml", "perforate/report.toml", "solve/u.llf", "qcmap/l_inv.llf", "constants.toml"] {
        assert_eq!(fs::read(a.out.join(f)).unwrap(), fs::read(b.out.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn stages_resume_from_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let c = quick(&tmp.path().join("run"));
    let mut partial = c.clone();
    partial.out = tmp.path().join("staged");
    run_pipeline(&c).unwrap();
    for s in STAGES {
        run_stage(&partial, s).unwrap();
    }
    assert_eq!(fs::read(c.out.join("carleman/report.csv")).unwrap(), fs::read(partial.out.join("carleman/report.csv")).unwrap());
    // rerunning the last stage alone reproduces its report
    fs::remove_dir_all(partial.out.join("carleman")).unwrap();
    let csv = run_stage(&partial, "carleman").unwrap();
    assert_eq!(csv.as_bytes(), fs::read(c.out.join("carleman/report.csv")).unwrap());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let c = RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        c.validate().unwrap();
        count += 1;
    }
    assert!(count >= 3);
}

#[test]
fn missing_upstream_artifacts_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let c = quick(&tmp.path().join("empty"));
    assert!(run_stage(&c, "gauge").is_err());
    assert!(matches!(run_stage(&c, "nothing"), Err(Error::Config(_))));
}

#[test]
fn random_instance_chain_passes_quick_tolerances() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = quick(&tmp.path().join("random"));
    c.instance = InstanceConfig { source: "random".into(), w1: 0.3, w2: 0.3, v: 0.0, dir: None };
    c.perforation.eps = EpsSetting::Value(0.06);
    let rep = run_pipeline(&c).unwrap();
    for name in ["gauge: divergence form", "gauge: transport", "gauge: gamma equation", "gauge: zeta equation", "qcmap: distortion violations"] {
        let ch = rep.check(name).unwrap();
        assert!(ch.passed, "{name}: {} > {}", ch.measured, ch.threshold);
    }
}

#[test]
fn corrupted_kernel_breaks_only_cauchy_checks() {
    let g = Grid::new(128).unwrap();
    let good = TransformPlan::new(g);
    let bad = TransformPlan::with_kernel_origin(g, Complex64::new(50.0, 0.0));
    assert!(cauchy_kernel_origin_ratio(&good).unwrap() < 1e-12);
    assert!(cauchy_kernel_origin_ratio(&bad).unwrap() > 1.0);
    let (e_good, e_bad) = (cauchy_identity_error(&good, 4).unwrap(), cauchy_identity_error(&bad, 4).unwrap());
    assert!(e_bad > e_good, "{e_good} vs {e_bad}");
    // an unrelated invariant does not see the fault
    let t = torsion_maxima(128, &[0.1]).unwrap();
    assert!((t[0] - 0.0025).abs() < 1e-4);
}
