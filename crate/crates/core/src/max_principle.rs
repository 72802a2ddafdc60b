//! Quantitative weak maximum principles on masks with small Poincaré
//! constant: L∞ and divergence sources, the level-set ladders that bound
//! them, the scaled Sobolev constant, and the Neumann-series multiplier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{apply_transpose, flux_divergence, interior_cells, Coefficients, LinearProblem, ProblemInstance};
use crate::sparse::solve_general;
use crate::error::{Error, Result};
use crate::field_core::{Grid, Mask, ScalarField, VectorField};
use crate::perforation::{dirichlet_ground_state, poincare_constant, strip_frame, PerforatedDomain};

pub const SOLVE_TOL: f64 = 1e-10;
/// Neumann series truncation ‖Φ_n‖∞ < SERIES_RTOL ‖Φ_0‖∞.
pub const SERIES_RTOL: f64 = 1e-10;
const MAX_SERIES_TERMS: usize = 200;

/// Admissibility thresholds for the small-domain solvers.
#[derive(Clone, Copy, Debug)]
pub struct Admissibility {
    /// C' in C_P(mask)^2 <= (C' ε)^2.
    pub poincare_factor: f64,
    /// c in ε (1 + ‖W‖∞) <= c.
    pub smallness: f64,
}

impl Default for Admissibility {
    fn default() -> Self {
        Self { poincare_factor: 4.0, smallness: 0.5 }
    }
}

/// Solution of a small-domain source problem and its normalized sizes.
#[derive(Clone, Debug)]
pub struct SourceSolve {
    pub phi: ScalarField,
    /// C_P(mask)^2 used by the admissibility check.
    pub poincare_sq: f64,
    /// ‖Φ‖∞ / (scale) with the expected scale (ε² ‖f‖∞ or
    /// |Ω|^{(p-2)/2p} ε^{2/p} ‖g‖∞).
    pub sup_ratio: f64,
    /// ‖∇Φ‖₂ / (ε ‖f‖₂) or ‖∇Φ‖₂ / ‖g‖₂.
    pub h1_ratio: f64,
    pub residual: f64,
}

/// ‖∇u‖₂ from the discrete Dirichlet form over all faces (values off the
/// mask are read as they are; callers pass fields that vanish there).
pub fn gradient_l2(u: &ScalarField) -> f64 {
    let g = u.grid;
    let n = g.n;
    let mut s = 0.0;
    for iy in 0..n {
        for ix in 0..n {
            let i = g.index(ix, iy);
            if ix + 1 < n {
                s += (u.values[i + 1] - u.values[i]).powi(2);
            }
            if iy + 1 < n {
                s += (u.values[i + n] - u.values[i]).powi(2);
            }
        }
    }
    s.sqrt()
}

fn check_admissible(mask: &Mask, eps: f64, w: &VectorField, adm: &Admissibility, cp2: Option<f64>) -> Result<f64> {
    let wn = w.sup_norm_on(mask);
    if eps * (1.0 + wn) > adm.smallness {
        return Err(Error::Precondition(format!(
            "eps (1 + |W|) = {:.4} exceeds {:.4}",
            eps * (1.0 + wn),
            adm.smallness
        )));
    }
    let cp2 = match cp2 {
        Some(v) => v,
        None => poincare_constant(mask)?,
    };
    let cap = (adm.poincare_factor * eps).powi(2);
    if cp2 > cap {
        return Err(Error::Precondition(format!("C_P^2 = {cp2:.4e} exceeds (C' eps)^2 = {cap:.4e}")));
    }
    Ok(cp2)
}

fn solve_on_mask(mask: &Mask, w: &VectorField, rhs_full: &[f64]) -> Result<(Vec<f64>, f64)> {
    let g = mask.grid;
    let active = strip_frame(mask);
    let coeffs = Coefficients { w_grad: Some(w), ..Default::default() };
    let lp = LinearProblem::assemble(g, &active, &coeffs)?;
    let b = lp.rhs(rhs_full, None);
    let mut x = vec![0.0; b.len()];
    let symmetric = w.c1.iter().chain(&w.c2).all(|&v| v == 0.0);
    let stats = if symmetric { lp.solve_symmetric(&b, &mut x, SOLVE_TOL)? } else { lp.solve(&b, &mut x, SOLVE_TOL)? };
    Ok((lp.scatter(&x, None), stats.residual))
}

/// Φ with -ΔΦ + W·∇Φ = f on the mask and Φ = 0 off it.
pub fn solve_linfty_source(mask: &Mask, eps: f64, w: &VectorField, f: &ScalarField) -> Result<SourceSolve> {
    solve_linfty_source_with(mask, eps, w, f, &Admissibility::default(), None)
}

pub fn solve_linfty_source_with(
    mask: &Mask,
    eps: f64,
    w: &VectorField,
    f: &ScalarField,
    adm: &Admissibility,
    poincare_sq: Option<f64>,
) -> Result<SourceSolve> {
    let g = mask.grid;
    let cp2 = check_admissible(mask, eps, w, adm, poincare_sq)?;
    let (values, residual) = solve_on_mask(mask, w, &f.values)?;
    let phi = ScalarField { grid: g, values, mask: mask.clone() };
    let fsup = f.sup_norm_on(mask);
    let f2 = f.lp_norm_on(mask, 2.0);
    let sup_ratio = if fsup > 0.0 { phi.sup_norm() / (eps * eps * fsup) } else { 0.0 };
    let h1_ratio = if f2 > 0.0 { gradient_l2(&phi) / (eps * f2) } else { 0.0 };
    Ok(SourceSolve { phi, poincare_sq: cp2, sup_ratio, h1_ratio, residual })
}

/// One rung of the De Giorgi ladder (rescaled to unit ε and unit ‖f‖∞).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Rung {
    pub t: f64,
    pub k: f64,
    pub area: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeGiorgiTrace {
    pub rungs: Vec<Rung>,
    /// Σ t_n over the ladder.
    pub level_sum: f64,
    /// max Φ⁺ in the same normalization.
    pub phi_max: f64,
    /// k_n strictly decreasing along the ladder.
    pub contracting: bool,
    /// Σ t_n ≥ max Φ⁺ (the ladder bounds Φ).
    pub bounds_phi: bool,
}

/// Replays t_n = √(C k_{n-1}), Ω_n = {Φ_{n-1} > t_n}, k_n² = C_P(Ω_n)²,
/// Φ_n = (Φ_{n-1} - t_n)⁺ on Φ rescaled by ε² ‖f‖∞ and lengths by ε.
/// Stops at the first empty level set or after `max_rungs`.
pub fn de_giorgi_bound(mask: &Mask, eps: f64, phi: &ScalarField, f: &ScalarField, c: f64, max_rungs: usize) -> Result<DeGiorgiTrace> {
    let g = mask.grid;
    let fsup = f.sup_norm_on(mask).max(f64::MIN_POSITIVE);
    let scale = eps * eps * fsup;
    let mut cur: Vec<f64> = phi.values.iter().zip(&mask.cells).map(|(&v, &m)| if m { (v / scale).max(0.0) } else { 0.0 }).collect();
    let phi_max = cur.iter().cloned().fold(0.0, f64::max);
    let mut k_prev = poincare_constant(mask)?.sqrt() / eps;
    let h2 = g.h() * g.h();
    let mut rungs = Vec::new();
    let mut contracting = true;
    for _ in 0..max_rungs {
        let t = (c * k_prev).sqrt();
        let level = Mask { grid: g, cells: cur.iter().map(|&v| v > t).collect() };
        let count = level.count();
        if count == 0 {
            rungs.push(Rung { t, k: 0.0, area: 0.0 });
            break;
        }
        let k = poincare_constant(&level)?.sqrt() / eps;
        if k >= k_prev {
            contracting = false;
        }
        rungs.push(Rung { t, k, area: count as f64 * h2 / (eps * eps) });
        cur.iter_mut().for_each(|v| *v = (*v - t).max(0.0));
        k_prev = k;
    }
    let level_sum = rungs.iter().map(|r| r.t).sum::<f64>();
    let closed = rungs.last().map_or(false, |r| r.area == 0.0);
    Ok(DeGiorgiTrace { bounds_phi: closed && level_sum >= phi_max, rungs, level_sum, phi_max, contracting })
}

/// Measured Sobolev ratio sup_u ‖u‖_p / ‖∇u‖₂ over a test family on the mask.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SobolevMeasurement {
    pub constant: f64,
    /// constant / ε^{2/p}
    pub normalized: f64,
    /// ratio of the ground state alone
    pub ground_state_ratio: f64,
    pub family_size: usize,
}

/// Family: the Dirichlet ground state φ₁, its powers, and φ₁ modulated by
/// random plane waves and Gaussian bumps (seeded).
pub fn sobolev_constant(mask: &Mask, eps: f64, p: f64, seed: u64) -> Result<SobolevMeasurement> {
    if p < 2.0 {
        return Err(Error::Precondition(format!("p = {p} < 2")));
    }
    let g = mask.grid;
    let (_, phi1) = dirichlet_ground_state(mask)?;
    let h2 = g.h() * g.h();
    let ratio = |vals: &[f64]| -> f64 {
        let f = ScalarField { grid: g, values: vals.to_vec(), mask: mask.clone() };
        let lp = (vals.iter().map(|v| v.abs().powf(p)).sum::<f64>() * h2).powf(1.0 / p);
        let gr = gradient_l2(&f);
        if gr > 0.0 {
            lp / gr
        } else {
            0.0
        }
    };
    let support: Vec<usize> = phi1.values.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
    let (mut cx, mut cy, mut mass) = (0.0, 0.0, 0.0);
    for &i in &support {
        let (x, y) = g.center(i);
        cx += x * phi1.values[i];
        cy += y * phi1.values[i];
        mass += phi1.values[i];
    }
    cx /= mass;
    cy /= mass;
    let ground = ratio(&phi1.values);
    let mut best = ground;
    let mut size = 1;
    for a in [0.5, 1.5, 2.0, 3.0] {
        let v: Vec<f64> = phi1.values.iter().map(|x| x.max(0.0).powf(a)).collect();
        best = best.max(ratio(&v));
        size += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..12 {
        let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let freq = rng.gen_range(0.5..3.0) / eps;
        let amp = rng.gen_range(0.1..0.9);
        let ph = rng.gen_range(0.0..std::f64::consts::TAU);
        let v: Vec<f64> = (0..g.len())
            .map(|i| {
                let (x, y) = g.center(i);
                phi1.values[i] * (1.0 + amp * (freq * (x * t.cos() + y * t.sin()) + ph).sin())
            })
            .collect();
        best = best.max(ratio(&v));
        let (bx, by) = (cx + rng.gen_range(-0.5..0.5) * eps, cy + rng.gen_range(-0.5..0.5) * eps);
        let w = eps * rng.gen_range(0.15..0.6);
        let v: Vec<f64> = (0..g.len())
            .map(|i| {
                let (x, y) = g.center(i);
                phi1.values[i] * (-((x - bx).powi(2) + (y - by).powi(2)) / (w * w)).exp()
            })
            .collect();
        best = best.max(ratio(&v));
        size += 2;
    }
    Ok(SobolevMeasurement { constant: best, normalized: best / eps.powf(2.0 / p), ground_state_ratio: ground, family_size: size })
}

/// Stampacchia replay: smallest C with
/// |A(h)| <= (C ε^{2/p} ‖g‖∞ / (h - k))^p |A(k)|^{p/2} over consecutive levels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StampacchiaTrace {
    pub levels: Vec<f64>,
    pub areas: Vec<f64>,
    pub required_constant: f64,
}

pub struct DivSourceSolve {
    pub solve: SourceSolve,
    pub stampacchia: StampacchiaTrace,
}

/// Φ with -ΔΦ + W·∇Φ = ∇·g on the mask and Φ = 0 off it. The divergence
/// is the face-averaged flux divergence of g as given on the whole grid.
pub fn solve_div_source(mask: &Mask, eps: f64, w: &VectorField, gsrc: &VectorField, p: f64) -> Result<DivSourceSolve> {
    solve_div_source_with(mask, eps, w, gsrc, p, &Admissibility::default(), None)
}

pub fn solve_div_source_with(
    mask: &Mask,
    eps: f64,
    w: &VectorField,
    gsrc: &VectorField,
    p: f64,
    adm: &Admissibility,
    poincare_sq: Option<f64>,
) -> Result<DivSourceSolve> {
    if p <= 2.0 {
        return Err(Error::Precondition(format!("p = {p} must exceed 2")));
    }
    let grid = mask.grid;
    let cp2 = check_admissible(mask, eps, w, adm, poincare_sq)?;
    let div = flux_divergence(gsrc, mask);
    let (values, residual) = solve_on_mask(mask, w, &div)?;
    let phi = ScalarField { grid, values, mask: mask.clone() };
    let gsup = gsrc.sup_norm_on(mask);
    let g2 = gsrc.lp_norm_on(mask, 2.0);
    let area = mask.area();
    let scale = area.powf((p - 2.0) / (2.0 * p)) * eps.powf(2.0 / p) * gsup;
    let sup_ratio = if gsup > 0.0 { phi.sup_norm() / scale } else { 0.0 };
    let h1_ratio = if g2 > 0.0 { gradient_l2(&phi) / g2 } else { 0.0 };
    let stampacchia = stampacchia_replay(&phi, eps, gsup, p);
    Ok(DivSourceSolve { solve: SourceSolve { phi, poincare_sq: cp2, sup_ratio, h1_ratio, residual }, stampacchia })
}

fn stampacchia_replay(phi: &ScalarField, eps: f64, gsup: f64, p: f64) -> StampacchiaTrace {
    let h2 = phi.grid.h() * phi.grid.h();
    let max = phi.mask.indices().map(|i| phi.values[i]).fold(0.0, f64::max);
    let levels: Vec<f64> = (0..8).map(|j| max * (1.0 - 0.5f64.powi(j))).collect();
    let areas: Vec<f64> =
        levels.iter().map(|&k| phi.mask.indices().filter(|&i| phi.values[i] > k).count() as f64 * h2).collect();
    let mut required: f64 = 0.0;
    if gsup > 0.0 {
        for j in 0..levels.len() - 1 {
            let (k, hl) = (levels[j], levels[j + 1]);
            if areas[j + 1] == 0.0 || hl <= k {
                continue;
            }
            let c = (hl - k) / (eps.powf(2.0 / p) * gsup) * (areas[j + 1] / areas[j].powf(p / 2.0)).powf(1.0 / p);
            required = required.max(c);
        }
    }
    StampacchiaTrace { levels, areas, required_constant: required }
}

/// Positive multiplier φ = 1 + Σ Φ_n on Ω_ε and its diagnostics.
#[derive(Clone, Debug)]
pub struct Multiplier {
    /// φ on the grid, equal to 1 off Ω_ε.
    pub phi: ScalarField,
    pub phi_tilde: ScalarField,
    pub bound_rhs: f64,
    /// The bracket ε^{2/(2+δ)}‖W₂‖∞ + ε²‖V‖∞ without the constant.
    pub bound_shape: f64,
    pub series_terms: usize,
    pub residual: f64,
    /// max_n ‖Φ_n‖∞ / ‖Φ_{n-1}‖∞ observed along the series.
    pub measured_ratio: f64,
    /// Predicted contraction C (ε^{2/p}|Ω|^{(p-2)/2p}‖W₂‖∞ + ε²‖V‖∞).
    pub predicted_q: f64,
    pub term_norms: Vec<f64>,
}

/// Structured-text report of a [`Multiplier`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiplierReport {
    pub bound_rhs: f64,
    pub phi_tilde_sup: f64,
    pub series_terms: usize,
    pub residual: f64,
    pub measured_ratio: f64,
    pub predicted_q: f64,
}

impl Multiplier {
    pub fn report(&self) -> MultiplierReport {
        MultiplierReport {
            bound_rhs: self.bound_rhs,
            phi_tilde_sup: self.phi_tilde.sup_norm(),
            series_terms: self.series_terms,
            residual: self.residual,
            measured_ratio: self.measured_ratio,
            predicted_q: self.predicted_q,
        }
    }
}

/// Solves -Δφ - ∇·(W₂φ) + W₁·∇φ + Vφ = 0 on Ω_ε with φ = 1 off Ω_ε by the
/// series Φ₀ = L⁻¹(-V + ∇·W₂), Φ_n = L⁻¹(-VΦ_{n-1} + ∇·(W₂Φ_{n-1})) with
/// L = -Δ + W₁·∇. Discretely the operator is the transpose of the one
/// [`crate::elliptic::solve`] uses for u. `cap` is the calibrated constant
/// in bound_rhs and in the predicted contraction.
pub fn build_multiplier(dom: &PerforatedDomain, inst: &ProblemInstance, cap: f64) -> Result<Multiplier> {
    let grid = inst.grid;
    let eps = dom.eps;
    let p = 2.0 + inst.delta;
    let mask = strip_frame(&dom.omega).and(&interior_cells(&grid));
    let domain = grid.domain_mask();
    let (_, w2n, vn) = inst.norms();
    let area = mask.area();
    let predicted_q = cap * (eps.powf(2.0 / p) * area.powf((p - 2.0) / (2.0 * p)) * w2n + eps * eps * vn);
    if predicted_q >= 0.5 {
        return Err(Error::SmallnessViolation { q: predicted_q });
    }
    let bound_shape = eps.powf(2.0 / (2.0 + inst.delta)) * w2n + eps * eps * vn;
    let bound_rhs = cap * bound_shape;

    // φ solves the transposed discrete equation of u, so that the discrete
    // Green identity behind the divergence form holds cell by cell
    let principal = Coefficients { w_div: Some(&inst.w1), ..Default::default() };
    let full = Coefficients { w_div: Some(&inst.w1), w_grad: Some(&inst.w2), v: Some(&inst.v) };
    let lp = LinearProblem::assemble(grid, &mask, &principal)?;
    let lt = lp.matrix.transpose();
    let ones = vec![1.0; grid.len()];
    let rhs0: Vec<f64> = apply_transpose(&grid, &full, &ones, &mask).iter().map(|v| -v).collect();
    let mut total = vec![0.0; grid.len()];
    let mut rhs = rhs0.clone();
    let mut norms = Vec::new();
    let mut terms = 0;
    let mut phi0_norm = 0.0;
    for n in 0..MAX_SERIES_TERMS {
        if rhs.iter().all(|&v| v == 0.0) {
            break;
        }
        let b = lp.gather(&rhs);
        let mut x = vec![0.0; b.len()];
        solve_general(&lt, &b, &mut x, SOLVE_TOL, 20_000)?;
        let term = lp.scatter(&x, None);
        let norm = term.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if n == 0 {
            phi0_norm = norm;
        }
        norms.push(norm);
        terms += 1;
        total.iter_mut().zip(&term).for_each(|(t, v)| *t += v);
        if norm < SERIES_RTOL * phi0_norm || norm == 0.0 {
            break;
        }
        // a series that keeps growing cannot converge; stop instead of
        // running out the term budget
        if n >= 8 && norms[n - 4..].windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::SmallnessViolation { q: norms[n] / norms[n - 1] });
        }
        // stencils always carry -Δ, so the lower-order part is full - principal
        let a_full = apply_transpose(&grid, &full, &term, &mask);
        let a_main = apply_transpose(&grid, &principal, &term, &mask);
        rhs = a_full.iter().zip(&a_main).map(|(a, b)| b - a).collect();
    }
    let measured_ratio = norms.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    let phi_tilde = ScalarField { grid, values: total.clone(), mask: dom.omega.clone() };
    let phi_vals: Vec<f64> = total.iter().map(|v| 1.0 + v).collect();
    let phi = ScalarField { grid, values: phi_vals, mask: domain };

    let applied = apply_transpose(&grid, &full, &phi.values, &mask);
    let r: f64 = mask.indices().map(|i| applied[i].powi(2)).sum::<f64>().sqrt();
    let b: f64 = mask.indices().map(|i| rhs0[i].powi(2)).sum::<f64>().sqrt();
    let residual = if b > 0.0 { r / b } else { r };

    let m = Multiplier {
        phi,
        phi_tilde,
        bound_rhs,
        bound_shape,
        series_terms: terms,
        residual,
        measured_ratio,
        predicted_q,
        term_norms: norms,
    };
    if m.bound_rhs < 1.0 && m.phi.values.iter().any(|&v| v <= 0.0) {
        return Err(Error::PositivityViolation("multiplier is not positive".into()));
    }
    Ok(m)
}

/// Discrete disk whose Dirichlet cells (outside cells with a neighbour
/// inside) sit at mean distance r from the center. `Grid::disk_mask(r)`
/// puts them at about r + h/2, which shifts ε²/4 by about εh/4.
pub fn dirichlet_disk(grid: Grid, cx: f64, cy: f64, r: f64) -> Mask {
    let h = grid.h();
    let mean_boundary = |m: &Mask| -> f64 {
        let n = grid.n;
        let (mut s, mut c) = (0.0, 0usize);
        for i in 0..grid.len() {
            if m.cells[i] {
                continue;
            }
            let (ix, iy) = grid.cell(i);
            let touches = (ix > 0 && m.cells[i - 1])
                || (ix + 1 < n && m.cells[i + 1])
                || (iy > 0 && m.cells[i - n])
                || (iy + 1 < n && m.cells[i + n]);
            if touches {
                let (x, y) = grid.center(i);
                s += ((x - cx).powi(2) + (y - cy).powi(2)).sqrt();
                c += 1;
            }
        }
        if c == 0 {
            r
        } else {
            s / c as f64
        }
    };
    let (mut lo, mut hi) = (r - 1.5 * h, r);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if mean_boundary(&grid.disk_mask(cx, cy, mid)) > r {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    grid.disk_mask(cx, cy, lo)
}

/// Rectangle mask [-a/2, a/2] x [-b/2, b/2] shifted by (cx, cy).
pub fn rectangle_mask(grid: Grid, cx: f64, cy: f64, a: f64, b: f64) -> Mask {
    grid.mask_from(|x, y| (x - cx).abs() <= 0.5 * a && (y - cy).abs() <= 0.5 * b)
}
