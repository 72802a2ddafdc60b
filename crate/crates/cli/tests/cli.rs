use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nodal-lab"))
}

#[test]
fn bad_config_exits_with_two_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let st = bin().args(["pipeline", "--n", "100", "--out"]).arg(&out).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&st.stderr).contains("error"));
    assert!(!out.exists());

    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "n = 128\ncolour = \"blue\"\n").unwrap();
    let st = bin().arg("solve").arg("--config").arg(&cfg).output().unwrap();
    assert_eq!(st.status.code(), Some(2));
}

#[test]
fn quick_pipeline_then_single_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let st = bin().args(["pipeline", "--quick", "--out"]).arg(&out).output().unwrap();
    // 0 or 1 depending on the checks; 2 would be a stage error
    assert!(matches!(st.status.code(), Some(0 | 1)), "{}", String::from_utf8_lossy(&st.stderr));
    let report = fs::read_to_string(out.join("report.toml")).unwrap();
    assert!(!report.contains("failure"));
    let csv = fs::read_to_string(out.join("carleman/report.csv")).unwrap();
    assert!(csv.starts_with("s,ratio,margin_local,margin_nonlocal,boundary_B,fitted_order"));

    let st = bin().args(["carleman", "--quick", "--out"]).arg(&out).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&st.stdout), csv);
}

#[test]
fn verify_flags_an_injected_kernel_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify");
    let st = bin().args(["verify", "--quick", "--kernel-origin", "50", "--out"]).arg(&out).output().unwrap();
    assert_eq!(st.status.code(), Some(1));
    let csv = fs::read_to_string(out.join("verify.csv")).unwrap();
    let kernel = csv.lines().find(|l| l.starts_with("cauchy: kernel vanishes")).unwrap();
    assert!(kernel.contains(",false,"), "{kernel}");
    let torsion = csv.lines().find(|l| l.starts_with("max principle: torsion")).unwrap();
    assert!(torsion.contains(",true,"), "{torsion}");
}
