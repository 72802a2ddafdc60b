//! Desk-scale acceptance criteria, one line each. Runs without the libtest
//! harness so the lines always reach stdout; exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nodal_lab::carleman::{dominance_crossover, small_poincare_ladder};
use nodal_lab::elliptic::Manufactured;
use nodal_lab::field_core::Grid;
use nodal_lab::perforation::{check_p_eps, extract_nodal_set};
use nodal_lab::pipeline::*;
use nodal_lab::singular_integrals::TransformPlan;

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn report(lines: &mut Vec<Line>, id: usize, name: &'static str, r: Result<(bool, String), String>) {
    let (passed, detail) = r.unwrap_or_else(|e| (false, format!("error: {e}")));
    println!("criterion {id:>2} {:<4} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    lines.push(Line { id, name, passed, detail });
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn run(cfg: &RunConfig) -> Result<MasterReport, String> {
    run_pipeline(cfg).map_err(err)
}

fn check(rep: &MasterReport, name: &str) -> Result<(bool, f64, f64), String> {
    rep.check(name).map(|c| (c.passed, c.measured, c.threshold)).ok_or_else(|| format!("check {name:?} missing"))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let base = RunConfig::default();
    let seed = base.seed;
    let s_list = base.carleman.s.clone();
    let mut lines = Vec::new();

    report(&mut lines, 1, "transform identity", (|| {
        let t = Instant::now();
        let mut errs = Vec::new();
        for n in [128, 256, 512] {
            errs.push(cauchy_identity_error(&TransformPlan::new(Grid::new(n).map_err(err)?), 10).map_err(err)?);
        }
        let secs = t.elapsed().as_secs_f64();
        let ok = errs[2] <= 5e-2 && errs[0] > errs[1] && errs[1] > errs[2] && secs <= 30.0;
        Ok((ok, format!("errors {:.3e} {:.3e} {:.3e} over n=128/256/512, {secs:.1}s", errs[0], errs[1], errs[2])))
    })());

    report(&mut lines, 2, "beltrami closed form", (|| {
        let t = Instant::now();
        let (e, r) = beltrami_disk_errors(&TransformPlan::new(Grid::new(512).map_err(err)?), 0.2).map_err(err)?;
        let secs = t.elapsed().as_secs_f64();
        Ok((e <= 5e-2 && r <= 5e-2 && secs <= 60.0, format!("map error {e:.3e}, residual {r:.3e}, {secs:.1}s")))
    })());

    // pipeline runs shared by criteria 3, 8 and 10
    let mut harmonic = base.clone();
    harmonic.out = tmp.path().join("harmonic3");
    let mut bessel = base.clone();
    bessel.out = tmp.path().join("bessel2k5");
    bessel.instance.source = "bessel2k5".into();
    bessel.perforation.big_c0 = 2.0;
    bessel.perforation.eps = EpsSetting::Value(0.04);
    let mut random = base.clone();
    random.out = tmp.path().join("random");
    random.instance = InstanceConfig { source: "random".into(), w1: 0.3, w2: 0.3, v: 0.0, dir: None };
    let runs: Vec<(&str, Result<MasterReport, String>)> = vec![("harmonic3", run(&harmonic)), ("bessel2k5", run(&bessel)), ("random", run(&random))];

    report(&mut lines, 3, "distortion and lipschitz bounds", (|| {
        let mut detail = Vec::new();
        let mut ok = true;
        for (name, rep) in &runs {
            let rep = rep.as_ref().map_err(|e| format!("{name}: {e}"))?;
            let (a, m, _) = check(rep, "qcmap: distortion violations")?;
            let (b, l, _) = check(rep, "qcmap: lipschitz violations")?;
            ok &= a && b;
            detail.push(format!("{name} {m}/{l}"));
        }
        Ok((ok, format!("violations (distortion/lipschitz) over 1e4 pairs: {}", detail.join(", "))))
    })());

    report(&mut lines, 4, "torsion scaling", (|| {
        let eps = [0.05, 0.1, 0.2];
        let m = torsion_maxima(512, &eps).map_err(err)?;
        let e = eps.iter().zip(&m).map(|(e, v)| (v - e * e / 4.0).abs()).fold(0.0, f64::max);
        let slope = loglog_slope(&eps, &m);
        Ok((e <= 1e-5 && (slope - 2.0).abs() <= 0.05, format!("max error {e:.3e}, slope {slope:.4}")))
    })());

    report(&mut lines, 5, "sobolev scaling", (|| {
        let eps = [0.05, 0.1, 0.2];
        let mut ok = true;
        let mut detail = Vec::new();
        for p in [2.0, 4.0] {
            let c = sobolev_constants(512, &eps, p, seed).map_err(err)?;
            let slope = loglog_slope(&eps, &c);
            ok &= (slope - 2.0 / p).abs() <= 0.05;
            detail.push(format!("p={p}: slope {slope:.4} (target {:.2})", 2.0 / p));
        }
        Ok((ok, detail.join(", ")))
    })());

    report(&mut lines, 6, "multiplier bound", (|| {
        let led = base.ledger();
        let samples = multiplier_samples(512, 0.05, led.big_c0, 10, seed).map_err(err)?;
        let worst = samples.iter().map(|s| if s.bound_shape > 0.0 { s.phi_tilde_sup / s.bound_shape } else { 0.0 }).fold(0.0, f64::max);
        let contraction = samples.iter().map(|s| s.contraction).fold(0.0, f64::max);
        let ok = samples.len() == 10 && worst <= led.multiplier_cap && contraction < 0.5;
        Ok((ok, format!("max sup/bound {worst:.4} against calibrated {}, max contraction {contraction:.4}", led.multiplier_cap)))
    })());

    report(&mut lines, 7, "carleman ratio", (|| {
        let (growth, doubling, constant) = carleman_stability(256, 512, 12, &s_list, seed).map_err(err)?;
        let ok = growth <= 1.2 && doubling <= 0.1;
        Ok((ok, format!("sup ratio {constant:.4e}, spread over s {growth:.4}, grid change {doubling:.4}")))
    })());

    report(&mut lines, 8, "vanishing order", (|| {
        let mut ok = true;
        let mut detail = Vec::new();
        for ((name, rep), target) in runs.iter().take(2).zip([3.0, 2.0]) {
            let rep = rep.as_ref().map_err(|e| format!("{name}: {e}"))?;
            let (order, env) = (rep.fitted_order.ok_or("no order")?, rep.envelope.ok_or("no envelope")?);
            ok &= (order - target).abs() <= 0.05 && order <= env && rep.seconds <= 600.0;
            detail.push(format!("{name} {order:.4} (envelope {env:.3}, {:.0}s)", rep.seconds));
        }
        Ok((ok, detail.join(", ")))
    })());

    report(&mut lines, 9, "nodal property", (|| {
        let g = Grid::new(512).map_err(err)?;
        let mut fails = 0;
        for m in [Manufactured::Harmonic3, Manufactured::Bessel2k5, Manufactured::Bessel0k2] {
            let z = extract_nodal_set(&m.field(g)).map_err(err)?;
            if !z.is_empty() && !check_p_eps(&z, 0.2).passed() {
                fails += 1;
            }
        }
        let mut iso = g.empty_mask();
        iso.cells[g.index(256, 256)] = true;
        let flagged = !check_p_eps(&iso, 0.5).passed();
        Ok((fails == 0 && flagged, format!("{fails} manufactured failures, isolated zero flagged: {flagged}")))
    })());

    report(&mut lines, 10, "gauge residual chain", (|| {
        let rep = runs[2].1.as_ref().map_err(|e| format!("random: {e}"))?;
        let mut ok = true;
        let mut detail = Vec::new();
        for name in ["gauge: divergence form", "gauge: transport", "gauge: gamma equation", "gauge: zeta equation"] {
            let (p, m, t) = check(rep, name)?;
            ok &= p;
            detail.push(format!("{} {m:.2e}/{t:.0e}", name.trim_start_matches("gauge: ")));
        }
        Ok((ok, detail.join(", ")))
    })());

    // side check kept out of the numbered list: the small-disk Carleman
    // inequality is dominated by its ε⁻⁴ term down to the smallest ε tried
    if let Ok(rows) = small_poincare_ladder(1.0, &[0.025, 0.05, 0.1, 0.2, 0.4, 0.8], 48) {
        match dominance_crossover(&rows) {
            Some(e) => println!("note: eps^-4 dominance holds up to eps {e}"),
            None => println!("note: eps^-4 dominance fails at the smallest eps"),
        }
    }

    let failed: Vec<_> = lines.iter().filter(|l| !l.passed).collect();
    println!("{} of {} criteria passed", lines.len() - failed.len(), lines.len());
    for l in &failed {
        eprintln!("failed: criterion {} ({}): {}", l.id, l.name, l.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
