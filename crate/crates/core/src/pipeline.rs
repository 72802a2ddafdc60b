//! Run configuration, the staged end-to-end pipeline and the verification
//! matrix.
//!
//! Stages communicate only through the output directory: each one reads the
//! LLF1 fields and TOML headers of its predecessors, so a run can resume
//! from any stage.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::carleman::{
    assemble_observability, carleman_setup, carleman_suite, carleman_sweep, dominance_crossover, fit_vanishing_order, order_envelope, radius_ladder,
    small_poincare_ladder, sweep_growth, CarlemanFields, CarlemanReport, Observation,
};
use crate::elliptic::{doubling_exponent, random_instance, solve_with_stats, ConstantsLedger, Manufactured, ProblemInstance};
use crate::error::{Error, Result};
use crate::field_core::{dbar, gradient, load_mask, save_mask, AnyField, ComplexField, Grid, ScalarField, VectorField};
use crate::gauge_stream::{
    assemble_gauge_unchecked, build_cutoff, gauge_zeta_unchecked, stream_function, to_divergence_form, transport_h, DivergenceForm, GaugeBundle,
    GaugeManifest,
};
use crate::max_principle::{build_multiplier, dirichlet_disk, sobolev_constant, solve_div_source, solve_linfty_source, Multiplier, MultiplierReport};
use crate::perforation::{check_p_eps, extract_nodal_set, perforate, PEpsReport, PerforatedDomain, PerforatedHeader};
use crate::quasiconformal::{beltrami_coefficient, beltrami_residual, build_qc_map, inverse_gradient_growth, mori_check, principal_solution_with, r_prime, MoriInput, MoriReport, QCMap, QcHeader};
use crate::singular_integrals::TransformPlan;

/// ε given explicitly or chosen from the dyadic ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EpsSetting {
    Value(f64),
    Word(String),
}

impl Default for EpsSetting {
    fn default() -> Self {
        EpsSetting::Word("auto".into())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstanceConfig {
    /// A manufactured id (harmonic3, bessel2k5, bessel0k2, exp), "random"
    /// or "files".
    pub source: String,
    /// Sup norms of smooth random coefficients added to the instance.
    pub w1: f64,
    pub w2: f64,
    pub v: f64,
    /// Directory with w1.llf, w2.llf, v.llf and dirichlet.llf for "files".
    pub dir: Option<PathBuf>,
}

impl Default for InstanceConfig {
    fn default() -> Self {
        Self { source: "harmonic3".into(), w1: 0.0, w2: 0.0, v: 0.0, dir: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerforationConfig {
    pub eps: EpsSetting,
    pub big_c0: f64,
    /// Right-hand side c of the smallness condition used by the ε ladder.
    pub smallness: f64,
}

impl Default for PerforationConfig {
    fn default() -> Self {
        Self { eps: EpsSetting::default(), big_c0: 4.0, smallness: 1.0 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaugeConfig {
    pub small_c0: f64,
    pub eps_prime_factor: f64,
}

impl Default for GaugeConfig {
    fn default() -> Self {
        Self { small_c0: 1.0 / 32.0, eps_prime_factor: 0.5 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanConfig {
    pub s: Vec<f64>,
    /// Observation radius r.
    pub r: f64,
    pub r_prime_c: f64,
    /// Radii of the vanishing-order fit: [lo, hi] and their count.
    pub fit_radii: [f64; 2],
    pub fit_count: usize,
}

impl Default for CarlemanConfig {
    fn default() -> Self {
        Self { s: vec![1.0, 5.0, 10.0, 20.0, 40.0], r: 0.5, r_prime_c: 0.125, fit_radii: [0.03, 0.08], fit_count: 6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Coarse grid and the looser tolerance ladder.
    pub quick: bool,
    pub instance: InstanceConfig,
    pub perforation: PerforationConfig,
    pub gauge: GaugeConfig,
    pub carleman: CarlemanConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 512,
            delta: 0.5,
            seed: 7,
            out: PathBuf::from("run"),
            quick: false,
            instance: InstanceConfig::default(),
            perforation: PerforationConfig::default(),
            gauge: GaugeConfig::default(),
            carleman: CarlemanConfig::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 64 || self.n % 2 != 0 {
            return Err(config_err(format!("n = {} must be even and at least 64", self.n)));
        }
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 {
            return Err(config_err(format!("seed = {} does not fit a TOML integer", self.seed)));
        }
        let positive = [
            ("delta", self.delta),
            ("perforation.big_c0", self.perforation.big_c0),
            ("perforation.smallness", self.perforation.smallness),
            ("gauge.small_c0", self.gauge.small_c0),
            ("gauge.eps_prime_factor", self.gauge.eps_prime_factor),
            ("carleman.r", self.carleman.r),
            ("carleman.r_prime_c", self.carleman.r_prime_c),
            ("carleman.fit_radii[0]", self.carleman.fit_radii[0]),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} = {v} must be positive")));
            }
        }
        for (name, v) in [("instance.w1", self.instance.w1), ("instance.w2", self.instance.w2), ("instance.v", self.instance.v)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(format!("{name} = {v} must be nonnegative")));
            }
        }
        match &self.perforation.eps {
            EpsSetting::Value(e) => {
                if !(*e > 0.0) {
                    return Err(config_err(format!("eps = {e} must be positive")));
                }
                if e * self.perforation.big_c0 >= 0.25 {
                    return Err(config_err(format!("eps*C0 = {} must be below 1/4", e * self.perforation.big_c0)));
                }
            }
            EpsSetting::Word(w) if w == "auto" => {
                let h = Grid::new(self.n)?.h();
                let top = auto_top(self.perforation.big_c0);
                if top < AUTO_FLOOR_CELLS * h {
                    return Err(config_err(format!("eps = \"auto\" has no rung above {AUTO_FLOOR_CELLS}h at n = {}; the ladder starts at {top:.4}", self.n)));
                }
            }
            EpsSetting::Word(w) => return Err(config_err(format!("eps = {w:?} is neither a number nor \"auto\""))),
        }
        if self.carleman.s.is_empty() || self.carleman.s.iter().any(|&s| !(s >= 1.0)) {
            return Err(config_err("carleman.s must be a nonempty list of values >= 1"));
        }
        if self.carleman.fit_radii[1] <= self.carleman.fit_radii[0] || self.carleman.fit_count < 5 {
            return Err(config_err("carleman.fit_radii must be increasing with fit_count >= 5"));
        }
        let src = self.instance.source.as_str();
        if src == "files" {
            if self.instance.dir.is_none() {
                return Err(config_err("instance.source = \"files\" needs instance.dir"));
            }
        } else if src != "random" && Manufactured::from_id(src).is_none() {
            return Err(config_err(format!("unknown instance source {src:?}")));
        }
        Ok(())
    }

    pub fn ledger(&self) -> ConstantsLedger {
        let mut l = ConstantsLedger::desk(self.delta, self.perforation.big_c0);
        l.small_c0 = self.gauge.small_c0;
        l.eps_prime_factor = self.gauge.eps_prime_factor;
        l.r_prime_c = self.carleman.r_prime_c;
        l
    }

    pub fn tolerances(&self) -> Tolerances {
        if self.quick {
            Tolerances::quick()
        } else {
            Tolerances::full()
        }
    }

    fn grid(&self) -> Result<Grid> {
        Grid::new(self.n)
    }
}

/// Residual thresholds of the gauge chain.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    pub divergence: f64,
    pub transport: f64,
    pub gamma: f64,
    pub zeta: f64,
}

impl Tolerances {
    pub fn full() -> Self {
        Self { divergence: 1e-6, transport: 5e-2, gamma: 5e-2, zeta: 1e-1 }
    }

    /// At n = 128 the cutoff transitions span about two cells.
    pub fn quick() -> Self {
        Self { divergence: 1e-6, transport: 1e-1, gamma: 3e-1, zeta: 5e-1 }
    }
}

/// One invariant outcome of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub measured: f64,
    pub threshold: f64,
}

impl Check {
    fn at_most(name: &str, measured: f64, threshold: f64) -> Self {
        Check { name: name.into(), passed: measured <= threshold, measured, threshold }
    }

    fn below(name: &str, measured: f64, threshold: f64) -> Self {
        Check { name: name.into(), passed: measured < threshold, measured, threshold }
    }

    fn flag(name: &str, passed: bool) -> Self {
        Check { name: name.into(), passed, measured: passed as u8 as f64, threshold: 1.0 }
    }
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = toml::to_string(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn save(dir: &Path, name: &str, f: impl Into<AnyField>) -> Result<()> {
    f.into().save(dir.join(format!("{name}.llf")))
}

fn load(dir: &Path, name: &str) -> Result<AnyField> {
    AnyField::load(dir.join(format!("{name}.llf")))
}

fn stage_dir(cfg: &RunConfig, stage: &str) -> Result<PathBuf> {
    let d = cfg.out.join(stage);
    fs::create_dir_all(&d)?;
    Ok(d)
}

/// Builds the configured instance before solving.
pub fn build_instance(cfg: &RunConfig) -> Result<ProblemInstance> {
    let g = cfg.grid()?;
    let ic = &cfg.instance;
    let mut inst = match ic.source.as_str() {
        "random" => random_instance(g, cfg.seed, ic.w1, ic.w2, ic.v),
        "files" => {
            let dir = ic.dir.as_ref().ok_or_else(|| config_err("instance.dir missing"))?;
            let w1 = load(dir, "w1")?.into_vector()?;
            let w2 = load(dir, "w2")?.into_vector()?;
            let v = load(dir, "v")?.into_scalar()?;
            let ext = load(dir, "dirichlet")?.into_scalar()?;
            for f in [&w1.grid, &w2.grid, &v.grid, &ext.grid] {
                g.check_same(f)?;
            }
            let mut inst = ProblemInstance::homogeneous(g, Vec::new());
            inst.w1 = w1;
            inst.w2 = w2;
            inst.v = v;
            inst.exterior = Some(ext);
            inst
        }
        id => {
            let m = Manufactured::from_id(id).ok_or_else(|| config_err(format!("unknown instance {id:?}")))?;
            let mut inst = m.instance(g, 4 * cfg.n);
            if ic.w1 > 0.0 || ic.w2 > 0.0 || ic.v > 0.0 {
                let r = random_instance(g, cfg.seed, ic.w1, ic.w2, ic.v);
                inst.w1 = r.w1;
                inst.w2 = r.w2;
                inst.v = inst.v.zip_map(&r.v, |a, b| a + b);
            }
            inst
        }
    };
    inst.delta = cfg.delta;
    Ok(inst)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub source: String,
    pub norms: [f64; 3],
    pub iterations: usize,
    pub residual: f64,
    pub u_sup: f64,
    pub doubling: f64,
}

pub fn stage_solve(cfg: &RunConfig) -> Result<SolveReport> {
    let inst = build_instance(cfg)?;
    let (u, stats) = solve_with_stats(&inst, 1e-10)?;
    let d = stage_dir(cfg, "solve")?;
    save(&d, "u", u.clone())?;
    save(&d, "w1", inst.w1.clone())?;
    save(&d, "w2", inst.w2.clone())?;
    save(&d, "v", inst.v.clone())?;
    save(&d, "dirichlet", ScalarField { grid: inst.grid, values: inst.dirichlet_values(), mask: inst.grid.full_mask() })?;
    let (a, b, c) = inst.norms();
    let rep = SolveReport {
        source: cfg.instance.source.clone(),
        norms: [a, b, c],
        iterations: stats.iterations,
        residual: stats.residual,
        u_sup: u.sup_norm_on(&inst.grid.domain_mask()),
        doubling: doubling_exponent(&u).unwrap_or(f64::INFINITY),
    };
    write_toml(&d.join("report.toml"), &rep)?;
    Ok(rep)
}

/// The instance and solution as written by the solve stage.
pub fn load_solved(cfg: &RunConfig) -> Result<(ProblemInstance, ScalarField)> {
    let d = cfg.out.join("solve");
    let u = load(&d, "u")?.into_scalar()?;
    let mut inst = ProblemInstance::homogeneous(u.grid, Vec::new());
    inst.w1 = load(&d, "w1")?.into_vector()?;
    inst.w2 = load(&d, "w2")?.into_vector()?;
    inst.v = load(&d, "v")?.into_scalar()?;
    inst.exterior = Some(load(&d, "dirichlet")?.into_scalar()?);
    inst.delta = cfg.delta;
    inst.u = Some(u.clone());
    Ok((inst, u))
}

/// One rung of the ε ladder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsAttempt {
    pub eps: f64,
    pub smallness: f64,
    pub accepted: bool,
    pub reason: String,
}

/// ε + ε^{2/(2+δ)}‖W₁‖ + ε^{2/(2+δ)} log(2/ε)‖W₂‖ + ε² log(2/ε)‖V‖.
pub fn smallness_expression(eps: f64, delta: f64, norms: (f64, f64, f64)) -> f64 {
    let a = eps.powf(2.0 / (2.0 + delta));
    let l = (2.0 / eps).ln();
    eps + a * norms.0 + a * l * norms.1 + eps * eps * l * norms.2
}

/// Smallest ε of the auto ladder, in cells.
const AUTO_FLOOR_CELLS: f64 = 1.5;

/// First rung of the auto ladder: just inside εC₀ < 1/4.
fn auto_top(big_c0: f64) -> f64 {
    0.95 / (4.0 * big_c0)
}

/// Largest ε of the ladder 0.95/(4C₀)·2^{-k} whose smallness expression is
/// at most c and whose perforation and multiplier series both succeed with
/// contraction below 1/2.
pub fn choose_eps(cfg: &RunConfig, inst: &ProblemInstance, u: &ScalarField, z: &crate::field_core::Mask) -> Result<(f64, Vec<EpsAttempt>)> {
    let led = cfg.ledger();
    let h = inst.grid.h();
    let top = auto_top(led.big_c0);
    let mut attempts = Vec::new();
    for k in 0.. {
        let eps = top * 0.5f64.powi(k);
        if eps < AUTO_FLOOR_CELLS * h {
            break;
        }
        let sm = smallness_expression(eps, cfg.delta, inst.norms());
        let mut att = EpsAttempt { eps, smallness: sm, accepted: false, reason: String::new() };
        if sm > cfg.perforation.smallness {
            att.reason = format!("smallness {sm:.4} > {}", cfg.perforation.smallness);
        } else {
            match perforate(z, u, eps, led.big_c0).and_then(|dom| build_multiplier(&dom, inst, led.multiplier_cap)) {
                Ok(m) if m.measured_ratio < 0.5 => att.accepted = true,
                Ok(m) => att.reason = format!("contraction {:.4}", m.measured_ratio),
                Err(e) => att.reason = e.to_string(),
            }
        }
        let ok = att.accepted;
        attempts.push(att);
        if ok {
            return Ok((eps, attempts));
        }
    }
    Err(Error::Precondition(format!("no ε on the ladder above {AUTO_FLOOR_CELLS}h passes; tried {}", attempts.len())))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerforateReport {
    pub domain: PerforatedHeader,
    pub nodal_cells: usize,
    pub p_eps: PEpsReport,
    pub ladder: Vec<EpsAttempt>,
}

pub fn stage_perforate(cfg: &RunConfig) -> Result<PerforateReport> {
    let (inst, u) = load_solved(cfg)?;
    let z = extract_nodal_set(&u)?;
    let (eps, ladder) = match cfg.perforation.eps {
        EpsSetting::Value(e) => (e, Vec::new()),
        EpsSetting::Word(_) => choose_eps(cfg, &inst, &u, &z)?,
    };
    let dom = perforate(&z, &u, eps, cfg.perforation.big_c0)?;
    let d = stage_dir(cfg, "perforate")?;
    save_mask(&dom.nodal, d.join("nodal.llf"))?;
    save_mask(&dom.holes, d.join("holes.llf"))?;
    save_mask(&dom.omega, d.join("omega.llf"))?;
    save_mask(&dom.omega_prime, d.join("omega_prime.llf"))?;
    let rep = PerforateReport { domain: dom.header(), nodal_cells: z.count(), p_eps: check_p_eps(&z, eps), ladder };
    write_toml(&d.join("report.toml"), &rep)?;
    Ok(rep)
}

pub fn load_domain(cfg: &RunConfig) -> Result<PerforatedDomain> {
    let d = cfg.out.join("perforate");
    let rep: PerforateReport = read_toml(&d.join("report.toml"))?;
    let h = rep.domain;
    Ok(PerforatedDomain {
        eps: h.eps,
        c0: h.c0,
        nodal: load_mask(d.join("nodal.llf"))?,
        centers: h.centers.iter().map(|c| (c[0], c[1])).collect(),
        x_max: (h.x_max[0], h.x_max[1]),
        holes: load_mask(d.join("holes.llf"))?,
        omega: load_mask(d.join("omega.llf"))?,
        omega_prime: load_mask(d.join("omega_prime.llf"))?,
        poincare_sq: h.poincare_sq,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiplierStage {
    pub report: MultiplierReport,
    pub bound_shape: f64,
    pub term_norms: Vec<f64>,
    pub phi_min: f64,
}

pub fn stage_multiplier(cfg: &RunConfig) -> Result<MultiplierStage> {
    let (inst, _) = load_solved(cfg)?;
    let dom = load_domain(cfg)?;
    let m = build_multiplier(&dom, &inst, cfg.ledger().multiplier_cap)?;
    let d = stage_dir(cfg, "multiplier")?;
    save(&d, "phi", m.phi.clone())?;
    save(&d, "phi_tilde", m.phi_tilde.clone())?;
    let rep = MultiplierStage {
        report: m.report(),
        bound_shape: m.bound_shape,
        term_norms: m.term_norms.clone(),
        phi_min: m.phi.values.iter().cloned().fold(f64::INFINITY, f64::min),
    };
    write_toml(&d.join("report.toml"), &rep)?;
    Ok(rep)
}

pub fn load_multiplier(cfg: &RunConfig) -> Result<Multiplier> {
    let d = cfg.out.join("multiplier");
    let rep: MultiplierStage = read_toml(&d.join("report.toml"))?;
    Ok(Multiplier {
        phi: load(&d, "phi")?.into_scalar()?,
        phi_tilde: load(&d, "phi_tilde")?.into_scalar()?,
        bound_rhs: rep.report.bound_rhs,
        bound_shape: rep.bound_shape,
        series_terms: rep.report.series_terms,
        residual: rep.report.residual,
        measured_ratio: rep.report.measured_ratio,
        predicted_q: rep.report.predicted_q,
        term_norms: rep.term_norms,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QcStage {
    pub divergence_residual: f64,
    pub divergence_residual_nodal: f64,
    pub header: QcHeader,
    pub inversion_failures: usize,
    pub mori: MoriReport,
    /// (p, ‖DL⁻¹‖_{L^p(B_{2-c0})}); p = 0 stands for p = ∞.
    pub inverse_gradient: Vec<[f64; 2]>,
}

pub fn stage_qcmap(cfg: &RunConfig) -> Result<QcStage> {
    let (inst, u) = load_solved(cfg)?;
    let dom = load_domain(cfg)?;
    let m = load_multiplier(cfg)?;
    let div = to_divergence_form(&inst, &u, &m, &dom)?;
    let mu = beltrami_coefficient(&m.phi, &div.v, &dom.omega_prime)?;
    let map = build_qc_map(&mu, 1e-10)?;
    let led = cfg.ledger();
    let mori = mori_check(
        &map,
        &MoriInput { eps: dom.eps, c0: dom.c0, centers: &dom.centers, r: cfg.carleman.r, r_prime_c: led.r_prime_c, pairs: 10_000, seed: cfg.seed },
    );
    let inverse_gradient = inverse_gradient_growth(&map.l_inv, &[2.0, 4.0, 8.0, 16.0, f64::INFINITY], led.small_c0)?
        .into_iter()
        .map(|(p, v)| [if p.is_finite() { p } else { 0.0 }, v])
        .collect();
    let d = stage_dir(cfg, "qcmap")?;
    save(&d, "v", div.v.clone())?;
    save(&d, "w_hat", div.w_hat.clone())?;
    save(&d, "mu", map.mu.clone())?;
    save(&d, "l_fwd", map.l_fwd.clone())?;
    save(&d, "l_inv", map.l_inv.clone())?;
    let rep = QcStage {
        divergence_residual: div.residual,
        divergence_residual_nodal: div.residual_nodal,
        header: map.header(),
        inversion_failures: map.inversion_failures,
        mori,
        inverse_gradient,
    };
    write_toml(&d.join("report.toml"), &rep)?;
    Ok(rep)
}

pub fn load_qc(cfg: &RunConfig) -> Result<(DivergenceForm, QCMap)> {
    let d = cfg.out.join("qcmap");
    let rep: QcStage = read_toml(&d.join("report.toml"))?;
    let div = DivergenceForm {
        v: load(&d, "v")?.into_scalar()?,
        w_hat: load(&d, "w_hat")?.into_vector()?,
        residual: rep.divergence_residual,
        residual_nodal: rep.divergence_residual_nodal,
    };
    let mu = load(&d, "mu")?.into_complex()?;
    let dom = mu.grid.domain_mask();
    let map = QCMap {
        mu_sup: mu.sup_norm_on(&dom),
        mu,
        k: rep.header.k,
        l_fwd: load(&d, "l_fwd")?.into_complex()?,
        l_inv: load(&d, "l_inv")?.into_complex()?,
        residual_beltrami: rep.header.residual_beltrami,
        r_prime: rep.header.r_prime,
        rotation: rep.header.rotation,
        round_trip: rep.header.round_trip,
        inversion_failures: rep.inversion_failures,
    };
    Ok((div, map))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaugeStage {
    pub manifest: GaugeManifest,
    pub eps_prime: f64,
    pub c0: f64,
    /// Image centers x′_j = L(x_j).
    pub centers: Vec<[f64; 2]>,
    pub tolerances: Tolerances,
}

fn image_centers(map: &QCMap, dom: &PerforatedDomain) -> Vec<(f64, f64)> {
    dom.centers
        .iter()
        .map(|&(x, y)| {
            let w = map.apply(Complex64::new(x, y));
            (w.re, w.im)
        })
        .collect()
}

/// Polar resolution of the stream function: radial 4n, angular 8n.
pub fn stream_resolution(n: usize) -> (usize, usize) {
    (4 * n, 8 * n)
}

pub fn stage_gauge(cfg: &RunConfig) -> Result<(GaugeStage, GaugeBundle)> {
    let dom = load_domain(cfg)?;
    let m = load_multiplier(cfg)?;
    let (div, map) = load_qc(cfg)?;
    let g = m.phi.grid;
    let led = cfg.ledger();
    let transport = transport_h(&div, &m.phi, &map, &dom.omega_prime, cfg.seed)?;
    let ep = led.eps_prime_factor * dom.eps;
    let centers = image_centers(&map, &dom);
    let cutoff = build_cutoff(g, &centers, ep, led.small_c0)?;
    let (nr, nt) = stream_resolution(cfg.n);
    let stream = stream_function(&transport.h, &transport.w_tilde, &cutoff, nr, nt)?;
    let gamma = assemble_gauge_unchecked(&transport.h, &stream, &cutoff, &transport.w_tilde)?;
    let zeta = gauge_zeta_unchecked(&TransformPlan::new(g), &gamma.gamma, &gamma.alpha, &gamma.source)?;
    let bundle = GaugeBundle { div, transport, cutoff, stream, gamma, zeta, kappa: led.kappa };
    let d = stage_dir(cfg, "gauge")?;
    bundle.save(&d, led.small_c0)?;
    let rep = GaugeStage {
        manifest: bundle.manifest(led.small_c0),
        eps_prime: ep,
        c0: led.small_c0,
        centers: centers.iter().map(|&(x, y)| [x, y]).collect(),
        tolerances: cfg.tolerances(),
    };
    write_toml(&d.join("report.toml"), &rep)?;
    Ok((rep, bundle))
}

/// The Carleman inputs as written by the gauge stage.
pub fn load_carleman_fields(cfg: &RunConfig) -> Result<(GaugeStage, CarlemanFields)> {
    let d = cfg.out.join("gauge");
    let rep: GaugeStage = read_toml(&d.join("report.toml"))?;
    let h = load(&d, "h")?.into_scalar()?;
    let centers: Vec<(f64, f64)> = rep.centers.iter().map(|c| (c[0], c[1])).collect();
    let cut = build_cutoff(h.grid, &centers, rep.eps_prime, rep.c0)?;
    let fields = CarlemanFields {
        h,
        chi_grad: cut.grad,
        e_h_tilde: load(&d, "e_h_tilde")?.into_complex()?,
        beta: load(&d, "beta")?.into_complex()?,
        zeta: load(&d, "zeta")?.into_complex()?,
        w_hat_sup: rep.manifest.w_hat_sup,
    };
    Ok((rep, fields))
}

pub fn stage_carleman(cfg: &RunConfig) -> Result<CarlemanReport> {
    let (inst, u) = load_solved(cfg)?;
    let dom = load_domain(cfg)?;
    let (_, map) = load_qc(cfg)?;
    let (gs, fields) = load_carleman_fields(cfg)?;
    let led = cfg.ledger();
    let g = u.grid;
    let rp = r_prime(cfg.carleman.r, dom.eps, led.r_prime_c);
    let centers: Vec<(f64, f64)> = gs.centers.iter().map(|c| (c[0], c[1])).collect();
    let u_sup = u.sup_norm_on(&g.domain_mask());
    let setup = carleman_setup(g, cfg.carleman.s[0], cfg.carleman.r, rp, dom.eps, gs.eps_prime, gs.c0, &centers, led.q, led.carleman_cap, u_sup)?;
    let lx = map.apply(Complex64::new(dom.x_max.0, dom.x_max.1));
    let [lo, hi] = cfg.carleman.fit_radii;
    let (w1, w2, v) = inst.norms();
    let obs = Observation {
        u: &u,
        x_max: dom.x_max,
        l_x_max: (lx.re, lx.im),
        radii: radius_ladder(lo, hi, cfg.carleman.fit_count),
        delta: cfg.delta,
        norms: (w1, w2, v),
        envelope_c: led.envelope_cap,
    };
    let rep = assemble_observability(&fields, &setup, &obs, &cfg.carleman.s, cfg.seed)?;
    let d = stage_dir(cfg, "carleman")?;
    fs::write(d.join("report.csv"), rep.to_csv())?;
    fs::write(d.join("report.toml"), rep.to_toml()?)?;
    Ok(rep)
}

/// Master report of one run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MasterReport {
    pub source: String,
    pub n: usize,
    pub seed: u64,
    pub quick: bool,
    pub eps: Option<f64>,
    pub passed: bool,
    pub failure: Option<String>,
    pub fitted_order: Option<f64>,
    pub envelope: Option<f64>,
    pub smallest_passing_s: Option<f64>,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

impl MasterReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const STAGES: [&str; 6] = ["solve", "perforate", "multiplier", "qcmap", "gauge", "carleman"];

fn staged<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage, source: Box::new(e) })
}

/// Runs every stage in order. A config error leaves no artifacts; a stage
/// error keeps the artifacts already written and records the failure in
/// `report.toml` before returning it.
pub fn run_pipeline(cfg: &RunConfig) -> Result<MasterReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let start = Instant::now();
    let mut rep = MasterReport { source: cfg.instance.source.clone(), n: cfg.n, seed: cfg.seed, quick: cfg.quick, ..Default::default() };
    let result = run_stages(cfg, &mut rep);
    rep.seconds = start.elapsed().as_secs_f64();
    if let Err(e) = &result {
        rep.failure = Some(e.to_string());
    }
    rep.passed = result.is_ok() && rep.checks.iter().all(|c| c.passed);
    write_toml(&cfg.out.join("report.toml"), &rep)?;
    result.map(|_| rep)
}

fn run_stages(cfg: &RunConfig, rep: &mut MasterReport) -> Result<()> {
    fs::write(cfg.out.join("config.toml"), cfg.to_toml()?)?;
    write_toml(&cfg.out.join("constants.toml"), &cfg.ledger())?;
    let tol = cfg.tolerances();
    let s = staged("solve", stage_solve(cfg))?;
    rep.checks.push(Check::at_most("solve: relative residual", s.residual, 1e-8));

    let p = staged("perforate", stage_perforate(cfg))?;
    rep.eps = Some(p.domain.eps);
    if p.nodal_cells > 0 {
        rep.checks.push(Check::flag("perforate: nodal property", p.p_eps.passed()));
    }

    let m = staged("multiplier", stage_multiplier(cfg))?;
    rep.checks.push(Check::below("multiplier: contraction", m.report.measured_ratio, 0.5));
    rep.checks.push(Check::at_most("multiplier: size bound", m.report.phi_tilde_sup, m.report.bound_rhs.max(1e-12)));
    rep.checks.push(Check::flag("multiplier: positivity", m.phi_min > 0.0));

    let q = staged("qcmap", stage_qcmap(cfg))?;
    rep.checks.push(Check::at_most("gauge: divergence form", q.divergence_residual, tol.divergence));
    rep.checks.push(Check::at_most("qcmap: distortion violations", q.mori.mori_violations as f64, 0.0));
    rep.checks.push(Check::at_most("qcmap: lipschitz violations", q.mori.lipschitz_violations as f64, 0.0));
    rep.checks.push(Check::flag("qcmap: image geometry", q.mori.passed()));

    let (gs, _) = staged("gauge", stage_gauge(cfg))?;
    rep.checks.push(Check::at_most("gauge: transport", gs.manifest.transport_residual, tol.transport));
    rep.checks.push(Check::at_most("gauge: gamma equation", gs.manifest.gamma_residual, tol.gamma));
    rep.checks.push(Check::at_most("gauge: zeta equation", gs.manifest.zeta_residual, tol.zeta));

    let c = staged("carleman", stage_carleman(cfg))?;
    rep.fitted_order = Some(c.fit.slope);
    rep.envelope = Some(c.envelope);
    rep.smallest_passing_s = c.smallest_passing_s;
    rep.checks.push(Check::flag("carleman: some s passes every margin", c.smallest_passing_s.is_some()));
    rep.checks.push(Check::at_most("carleman: fitted order within envelope", c.fit.slope, c.envelope));
    if let Some(s) = c.smallest_passing_s {
        let row = c.rows.iter().find(|r| r.s == s).unwrap();
        if !c.trivial {
            rep.checks.push(Check::at_most("carleman: implied lower bound", row.implied_log_sup, c.measured_log_sup));
        }
    }
    Ok(())
}

/// Runs a single named stage against the artifacts already in `cfg.out`.
pub fn run_stage(cfg: &RunConfig, stage: &str) -> Result<String> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out)?;
    let text = |r: Result<String>| r;
    match stage {
        "solve" => text(stage_solve(cfg).and_then(|r| toml::to_string(&r).map_err(|e| Error::Format(e.to_string())))),
        "perforate" => text(stage_perforate(cfg).and_then(|r| toml::to_string(&r).map_err(|e| Error::Format(e.to_string())))),
        "multiplier" => text(stage_multiplier(cfg).and_then(|r| toml::to_string(&r).map_err(|e| Error::Format(e.to_string())))),
        "qcmap" => text(stage_qcmap(cfg).and_then(|r| toml::to_string(&r).map_err(|e| Error::Format(e.to_string())))),
        "gauge" => text(stage_gauge(cfg).and_then(|(r, _)| toml::to_string(&r).map_err(|e| Error::Format(e.to_string())))),
        "carleman" => text(stage_carleman(cfg).and_then(|r| Ok(r.to_csv()))),
        other => Err(config_err(format!("unknown stage {other:?}"))),
    }
}

/// One row of the verification matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VerifyRow {
    pub label: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub note: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct VerifyMatrix {
    pub n: usize,
    pub quick: bool,
    pub rows: Vec<VerifyRow>,
}

impl VerifyMatrix {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passed)
    }

    pub fn row(&self, label: &str) -> Option<&VerifyRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("label,passed,measured,tolerance,note\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{:.6e},{:.6e},\"{}\"\n", r.label, r.passed, r.measured, r.tolerance, r.note.replace('"', "'")));
        }
        out
    }
}

/// Options of [`verify_suite`] beyond the run configuration.
#[derive(Clone, Copy, Debug, Default)]
pub struct VerifyOptions {
    /// Value the Cauchy kernel takes at d = 0; nonzero corrupts every plan.
    pub kernel_origin: f64,
}

type RowResult = Result<(f64, f64, bool, String)>;

fn row(matrix: &mut VerifyMatrix, label: &str, f: impl FnOnce() -> RowResult) {
    let t = Instant::now();
    let (measured, tolerance, passed, note) = match f() {
        Ok(v) => v,
        Err(e) => (f64::NAN, f64::NAN, false, e.to_string()),
    };
    matrix.rows.push(VerifyRow { label: label.into(), passed, measured, tolerance, note, seconds: t.elapsed().as_secs_f64() });
}

fn bump_suite(g: Grid, count: usize) -> Vec<ComplexField> {
    (0..count)
        .map(|k| {
            let t = k as f64 * 2.399963;
            let r = 0.8 * ((k as f64 + 0.5) / count as f64).sqrt();
            let (cx, cy) = (r * t.cos(), r * t.sin());
            let w = 0.2 + 0.03 * (k % 4) as f64;
            let a = Complex64::from_polar(1.0, t);
            ComplexField::from_fn(g, g.domain_mask(), |z| a * (-((z.re - cx).powi(2) + (z.im - cy).powi(2)) / (w * w)).exp())
        })
        .collect()
}

/// Largest relative sup error of ∂̄(Tω) against ω over the bump suite.
pub fn cauchy_identity_error(plan: &TransformPlan, count: usize) -> Result<f64> {
    let g = plan.grid;
    let inner = g.domain_mask().erode(2);
    let mut worst: f64 = 0.0;
    for w in bump_suite(g, count) {
        let t = plan.cauchy_t(&w)?.with_mask(inner.clone());
        let d = dbar(&t)?;
        let err = inner.indices().map(|i| (d.values[i] - w.values[i]).norm()).fold(0.0, f64::max);
        worst = worst.max(err / w.sup_norm());
    }
    Ok(worst)
}

/// T of a unit mass on one cell read at that same cell, relative to its
/// value on a neighbour; 0 for the principal-value kernel.
pub fn cauchy_kernel_origin_ratio(plan: &TransformPlan) -> Result<f64> {
    let g = plan.grid;
    let i = g.index(g.n / 2, g.n / 2);
    let mut w = ComplexField::zeros(g, g.domain_mask());
    w.values[i] = Complex64::new(1.0, 0.0);
    let t = plan.cauchy_t(&w)?;
    Ok(t.values[i].norm() / t.values[i + 1].norm())
}

/// Sup error of T(1_{B₁}) against z̄ inside and 1/z outside, 4h away from
/// the unit circle.
pub fn cauchy_disk_error(plan: &TransformPlan) -> Result<f64> {
    let g = plan.grid;
    let w = ComplexField { grid: g, values: vec![Complex64::new(1.0, 0.0); g.len()], mask: g.disk_mask(0.0, 0.0, 1.0) };
    let t = plan.cauchy_t(&w)?;
    let mut err: f64 = 0.0;
    for i in g.domain_mask().indices() {
        let z = g.center_z(i);
        if (z.norm() - 1.0).abs() < 4.0 * g.h() {
            continue;
        }
        let exact = if z.norm() < 1.0 { z.conj() } else { 1.0 / z };
        err = err.max((t.values[i] - exact).norm());
    }
    Ok(err)
}

/// Principal solution of μ = k·1_{B₁} against z + k z̄ (inside) and
/// z + k/z (outside), 4h away from |z| = 1, and its Beltrami residual.
pub fn beltrami_disk_errors(plan: &TransformPlan, k: f64) -> Result<(f64, f64)> {
    let g = plan.grid;
    let mut mu = ComplexField::zeros(g, g.full_mask());
    for i in g.disk_mask(0.0, 0.0, 1.0).indices() {
        mu.values[i] = Complex64::new(k, 0.0);
    }
    let ps = principal_solution_with(plan, &mu, 1e-10)?;
    let mut err: f64 = 0.0;
    for i in g.domain_mask().indices() {
        let z = g.center_z(i);
        if (z.norm() - 1.0).abs() < 4.0 * g.h() {
            continue;
        }
        let exact = if z.norm() < 1.0 { z + k * z.conj() } else { z + k / z };
        err = err.max((ps.psi.values[i] - exact).norm());
    }
    let away = g.domain_mask().erode(2).minus(&g.annulus_mask(0.0, 0.0, 1.0 - 4.0 * g.h(), 1.0 + 4.0 * g.h()));
    let res = beltrami_residual(&ps.psi, &mu, &away)?;
    Ok((err, res))
}

/// ‖Φ‖∞ for f ≡ 1 on B(0,ε) at each ε, on a grid of half-width 1.25·max ε.
pub fn torsion_maxima(n: usize, eps_list: &[f64]) -> Result<Vec<f64>> {
    let hw = 1.25 * eps_list.iter().cloned().fold(0.0, f64::max);
    let g = Grid::with_half_width(n, hw)?;
    eps_list
        .iter()
        .map(|&eps| {
            let mask = dirichlet_disk(g, 0.0, 0.0, eps);
            let w = VectorField::zeros(g, g.full_mask());
            let f = ScalarField::constant(g, g.full_mask(), 1.0);
            Ok(solve_linfty_source(&mask, eps, &w, &f)?.phi.sup_norm())
        })
        .collect()
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Measured Sobolev constants on B(0,ε) for each ε.
pub fn sobolev_constants(n: usize, eps_list: &[f64], p: f64, seed: u64) -> Result<Vec<f64>> {
    let hw = 1.25 * eps_list.iter().cloned().fold(0.0, f64::max);
    let g = Grid::with_half_width(n, hw)?;
    eps_list.iter().map(|&eps| Ok(sobolev_constant(&dirichlet_disk(g, 0.0, 0.0, eps), eps, p, seed)?.constant)).collect()
}

/// ‖Φ‖∞ of the divergence-source problem on B(0,ε) for the rescaled family
/// g(x) = G(x/ε) with a fixed oscillating G of unit size.
pub fn div_source_maxima(n: usize, eps_list: &[f64], p: f64) -> Result<Vec<f64>> {
    let hw = 1.25 * eps_list.iter().cloned().fold(0.0, f64::max);
    let g = Grid::with_half_width(n, hw)?;
    let w = VectorField::zeros(g, g.full_mask());
    eps_list
        .iter()
        .map(|&eps| {
            let src = VectorField::from_fn(g, g.full_mask(), |x, y| {
                let (a, b) = (x / eps, y / eps);
                ((3.0 * a).sin() * (2.0 * b).cos(), (a + b).cos())
            });
            Ok(solve_div_source(&dirichlet_disk(g, 0.0, 0.0, eps), eps, &w, &src, p)?.solve.phi.sup_norm())
        })
        .collect()
}

/// ‖φ̃‖∞ / bound shape and the contraction ratio for one random admissible
/// instance perforated at ε.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiplierSample {
    pub seed: u64,
    pub phi_tilde_sup: f64,
    pub bound_shape: f64,
    pub contraction: f64,
}

pub fn multiplier_samples(n: usize, eps: f64, big_c0: f64, count: usize, seed: u64) -> Result<Vec<MultiplierSample>> {
    let g = Grid::new(n)?;
    (0..count as u64)
        .map(|k| {
            let s = seed.wrapping_mul(1000).wrapping_add(k);
            let a = 0.2 + 0.1 * (k % 4) as f64;
            let mut inst = random_instance(g, s, a, a, 2.0 * a);
            inst.eps = eps;
            let u = crate::elliptic::solve(&inst, 1e-10)?;
            let z = extract_nodal_set(&u)?;
            let dom = perforate(&z, &u, eps, big_c0)?;
            let m = build_multiplier(&dom, &inst, 1.0)?;
            Ok(MultiplierSample { seed: s, phi_tilde_sup: m.phi_tilde.sup_norm(), bound_shape: m.bound_shape, contraction: m.measured_ratio })
        })
        .collect()
}

/// Relative change of sup ratios between two grids, and the growth across s.
pub fn carleman_stability(n_coarse: usize, n_fine: usize, count: usize, s_list: &[f64], seed: u64) -> Result<(f64, f64, f64)> {
    let coarse = carleman_sweep(&carleman_suite(Grid::new(n_coarse)?, count, seed), s_list)?;
    let fine = carleman_sweep(&carleman_suite(Grid::new(n_fine)?, count, seed), s_list)?;
    let doubling = coarse.iter().zip(&fine).map(|(a, b)| (a.sup_ratio - b.sup_ratio).abs() / b.sup_ratio).fold(0.0, f64::max);
    let constant = fine.iter().map(|r| r.sup_ratio).fold(0.0, f64::max);
    Ok((sweep_growth(&fine), doubling, constant))
}

/// Fitted order of a solved manufactured instance over [lo, hi].
pub fn manufactured_order(n: usize, m: Manufactured, lo: f64, hi: f64, count: usize) -> Result<(f64, f64, ProblemInstance)> {
    let g = Grid::new(n)?;
    let inst = m.instance(g, 4 * n);
    let u = crate::elliptic::solve(&inst, 1e-10)?;
    let fit = fit_vanishing_order(&u, (0.0, 0.0), &radius_ladder(lo, hi, count))?;
    Ok((fit.slope, doubling_exponent(&u)?, inst))
}

/// Runs every module's invariant checks. Failures are rows, never errors.
pub fn verify_suite(cfg: &RunConfig, opts: VerifyOptions) -> VerifyMatrix {
    let n = if cfg.quick { 128 } else { cfg.n };
    let quick = cfg.quick;
    let led = cfg.ledger();
    let mut mx = VerifyMatrix { n, quick, rows: Vec::new() };
    let plan = |g: Grid| TransformPlan::with_kernel_origin(g, Complex64::new(opts.kernel_origin, 0.0));

    row(&mut mx, "field: exact gradient of quadratics", || {
        let g = Grid::new(n)?;
        let f = ScalarField::from_fn(g, g.full_mask(), |x, y| x * x - 2.0 * x * y + 0.5 * y);
        let gr = gradient(&f)?;
        let err = (0..g.len())
            .map(|i| {
                let (x, y) = g.center(i);
                (gr.c1[i] - (2.0 * x - 2.0 * y)).abs().max((gr.c2[i] - (-2.0 * x + 0.5)).abs())
            })
            .fold(0.0, f64::max);
        Ok((err, 1e-9, err <= 1e-9, String::new()))
    });
    row(&mut mx, "field: LLF1 round trip", || {
        let g = Grid::new(64)?;
        let f = ComplexField::from_fn(g, g.domain_mask(), |z| z * z.conj() + z);
        let mut buf = Vec::new();
        AnyField::Complex(f.clone()).write_to(&mut buf)?;
        let back = AnyField::read_from(&mut buf.as_slice())?.into_complex()?;
        let same = back.values == f.values && back.mask == f.mask;
        Ok((!same as u8 as f64, 0.0, same, String::new()))
    });
    row(&mut mx, "cauchy: kernel vanishes at the origin", || {
        let r = cauchy_kernel_origin_ratio(&plan(Grid::new(n)?))?;
        Ok((r, 1e-12, r <= 1e-12, String::new()))
    });
    row(&mut mx, "cauchy: dbar inverts T on a bump suite", || {
        let tol = if quick { 1.5e-1 } else { 5e-2 };
        let e = cauchy_identity_error(&plan(Grid::new(n)?), 10)?;
        Ok((e, tol, e <= tol, if quick { "quick: 1.5e-1".into() } else { String::new() }))
    });
    row(&mut mx, "cauchy: transform of the unit disk", || {
        let tol = if quick { 6e-2 } else { 2e-2 };
        let e = cauchy_disk_error(&plan(Grid::new(n)?))?;
        Ok((e, tol, e <= tol, String::new()))
    });
    row(&mut mx, "beltrami: closed form for 0.2 on the unit disk", || {
        let tol = if quick { 1e-1 } else { 5e-2 };
        let (e, r) = beltrami_disk_errors(&plan(Grid::new(n)?), 0.2)?;
        Ok((e.max(r), tol, e <= tol && r <= tol, format!("map error {e:.3e}, residual {r:.3e}")))
    });
    row(&mut mx, "max principle: torsion on small disks", || {
        let eps = [0.05, 0.1, 0.2];
        let m = torsion_maxima(n.max(256), &eps)?;
        let err = eps.iter().zip(&m).map(|(e, v)| (v - e * e / 4.0).abs()).fold(0.0, f64::max);
        let slope = loglog_slope(&eps, &m);
        let tol = if n >= 512 { 1e-5 } else { 4e-5 };
        Ok((err, tol, err <= tol && (slope - 2.0).abs() <= 0.05, format!("slope {slope:.4}")))
    });
    row(&mut mx, "sobolev: constant scales like eps^(2/p)", || {
        let eps = [0.05, 0.1, 0.2];
        let mut worst: f64 = 0.0;
        let mut note = String::new();
        for p in [2.0, 4.0] {
            let c = sobolev_constants(n.max(256), &eps, p, cfg.seed)?;
            let slope = loglog_slope(&eps, &c);
            worst = worst.max((slope - 2.0 / p).abs());
            note.push_str(&format!("p={p}: slope {slope:.4}; "));
        }
        Ok((worst, 0.05, worst <= 0.05, note))
    });
    row(&mut mx, "max principle: divergence-source exponent (reported)", || {
        let eps = [0.05, 0.1, 0.2];
        let slope = loglog_slope(&eps, &div_source_maxima(n.max(256), &eps, 4.0)?);
        Ok((slope, 0.5, slope >= 0.45, format!("measured exponent {slope:.4}; the bound gives 2/p = 0.5")))
    });
    row(&mut mx, "multiplier: size bound and contraction", || {
        let nn = if quick { 128 } else { 256 };
        let samples = multiplier_samples(nn, 0.05, led.big_c0, if quick { 3 } else { 10 }, cfg.seed)?;
        let worst = samples.iter().map(|s| if s.bound_shape > 0.0 { s.phi_tilde_sup / s.bound_shape } else { 0.0 }).fold(0.0, f64::max);
        let contraction = samples.iter().map(|s| s.contraction).fold(0.0, f64::max);
        Ok((worst, led.multiplier_cap, worst <= led.multiplier_cap && contraction < 0.5, format!("max contraction {contraction:.4}")))
    });
    let chain = {
        let mut c = cfg.clone();
        c.n = n;
        c.out = cfg.out.join("verify-chain");
        c.instance = InstanceConfig { source: "harmonic3".into(), w1: 0.3, w2: 0.3, v: 0.0, dir: None };
        c.perforation.eps = EpsSetting::default();
        let t = Instant::now();
        (run_pipeline(&c), t.elapsed().as_secs_f64())
    };
    for name in [
        "qcmap: distortion violations",
        "qcmap: lipschitz violations",
        "gauge: divergence form",
        "gauge: transport",
        "gauge: gamma equation",
        "gauge: zeta equation",
        "multiplier: contraction",
        "carleman: fitted order within envelope",
    ] {
        let (rep, secs) = (&chain.0, chain.1);
        let r = match rep {
            Ok(rep) => match rep.check(name) {
                Some(c) => VerifyRow { label: name.into(), passed: c.passed, measured: c.measured, tolerance: c.threshold, note: String::new(), seconds: secs },
                None => VerifyRow { label: name.into(), passed: false, measured: f64::NAN, tolerance: f64::NAN, note: "check missing".into(), seconds: secs },
            },
            Err(e) => VerifyRow { label: name.into(), passed: false, measured: f64::NAN, tolerance: f64::NAN, note: e.to_string(), seconds: secs },
        };
        mx.rows.push(r);
    }
    row(&mut mx, "carleman: suite ratio stable in s and under refinement", || {
        // below n = 256 the suite bumps are under-resolved and the doubling
        // compares quadrature error, not the inequality
        let (growth, doubling, constant) = carleman_stability(256, 512, if quick { 6 } else { 12 }, &cfg.carleman.s, cfg.seed)?;
        let ok = growth <= 1.2 && doubling <= 0.1;
        Ok((growth.max(doubling + 1.0) - 1.0, 0.2, ok, format!("growth {growth:.4}, grid change {doubling:.4}, constant {constant:.4e}")))
    });
    row(&mut mx, "carleman: small-Poincare eps^-4 dominance", || {
        let rows = small_poincare_ladder(1.0, &[0.025, 0.05, 0.1, 0.2, 0.4, 0.8], 48)?;
        let c = dominance_crossover(&rows).unwrap_or(0.0);
        Ok((c, 0.025, c >= 0.025, format!("crossover eps {c}")))
    });
    for (m, target) in [(Manufactured::Harmonic3, 3.0), (Manufactured::Bessel2k5, 2.0)] {
        row(&mut mx, &format!("vanishing order: {}", m.id()), || {
            let tol = if quick { 0.1 } else { 0.05 };
            let (slope, k, inst) = manufactured_order(n, m, 0.03, 0.08, 6)?;
            let (a, b, c) = inst.norms();
            let env = order_envelope(led.envelope_cap, cfg.delta, a, b, c, k);
            Ok(((slope - target).abs(), tol, (slope - target).abs() <= tol && slope <= env, format!("slope {slope:.4}, envelope {env:.3}")))
        });
    }
    row(&mut mx, "nodal: P-eps on manufactured solutions", || {
        let g = Grid::new(n)?;
        let mut fails = 0;
        for m in [Manufactured::Harmonic3, Manufactured::Bessel2k5, Manufactured::Bessel0k2] {
            let z = extract_nodal_set(&m.field(g))?;
            if !z.is_empty() && !check_p_eps(&z, 0.2).passed() {
                fails += 1;
            }
        }
        let mut iso = g.empty_mask();
        iso.cells[g.index(n / 2, n / 2)] = true;
        let flagged = !check_p_eps(&iso, 0.5).passed();
        Ok((fails as f64, 0.0, fails == 0 && flagged, format!("isolated zero flagged: {flagged}")))
    });
    mx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c.n, 512);
        assert_eq!(c.perforation.eps, EpsSetting::Word("auto".into()));
        let c = RunConfig::from_toml("n = 128\n[perforation]\neps = 0.05\nbig_c0 = 4.0\n").unwrap();
        assert_eq!(c.perforation.eps, EpsSetting::Value(0.05));
        for bad in [
            "n = 100\n[perforation]\neps = 0.1\nbig_c0 = 4.0\n",
            "n = 65\n",
            "delta = -1.0\n",
            "[perforation]\neps = \"soon\"\n",
            "[instance]\nsource = \"nothing\"\n",
            "[carleman]\ns = []\n",
            "unknown = 3\n",
        ] {
            assert!(matches!(RunConfig::from_toml(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn config_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back.to_toml().unwrap(), c.to_toml().unwrap());
    }

    #[test]
    fn smallness_examples() {
        assert_eq!(smallness_expression(0.05, 0.5, (0.0, 0.0, 0.0)), 0.05);
        let with_v = smallness_expression(0.05, 0.5, (0.0, 0.0, 1.0));
        assert!((with_v - 0.05 - 0.0025 * 40f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn invalid_config_leaves_no_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.out = dir.path().join("run");
        c.perforation.eps = EpsSetting::Value(0.1);
        assert!(matches!(run_pipeline(&c), Err(Error::Config(_))));
        assert!(!c.out.exists());
    }

    #[test]
    fn loglog_slope_of_power() {
        let x = [0.1, 0.2, 0.4];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(2.5)).collect();
        assert!((loglog_slope(&x, &y) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn corrupted_kernel_is_detected() {
        let g = Grid::new(64).unwrap();
        assert!(cauchy_kernel_origin_ratio(&TransformPlan::new(g)).unwrap() < 1e-12);
        assert!(cauchy_kernel_origin_ratio(&TransformPlan::with_kernel_origin(g, Complex64::new(1.0, 0.0))).unwrap() > 1e-3);
    }
}
