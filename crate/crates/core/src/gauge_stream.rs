//! The gauge chain from u to the ∂̄-equation for ζ: v = u/φ in divergence
//! form, transport h = v∘L⁻¹ with drift W̃, the cutoff χ, the approximate
//! stream function h̃ with its error E_h, then γ, α, β = Tα, ζ and F.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::elliptic::{interior_cells, stencil, Coefficients, ProblemInstance};
use crate::error::{Error, Result};
use crate::field_core::{dbar, dz, gradient, AnyField, ComplexField, Grid, Mask, PolarField, ScalarField, VectorField, DOMAIN_RADIUS};
use crate::max_principle::Multiplier;
use crate::perforation::{strip_frame, PerforatedDomain};
use crate::quasiconformal::QCMap;
use crate::singular_integrals::TransformPlan;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const DIVERGENCE_TOL: f64 = 1e-6;
pub const TRANSPORT_TOL: f64 = 5e-2;
pub const GAMMA_TOL: f64 = 5e-2;
pub const ZETA_TOL: f64 = 1e-1;
/// α = 0 where |γ| < GAMMA_ZERO ‖γ‖∞.
pub const GAMMA_ZERO: f64 = 1e-12;

/// v = u/φ, Ŵ = W₁ - W₂ and the residual of -∇·(φ²(∇v + Ŵv)) = 0.
#[derive(Clone, Debug)]
pub struct DivergenceForm {
    pub v: ScalarField,
    pub w_hat: VectorField,
    /// Relative residual over the cells of Ω_ε.
    pub residual: f64,
    /// Relative residual over the nodal band Z, where the discrete u is
    /// small but not zero.
    pub residual_nodal: f64,
}

/// Weight of cell `p` in the operator stencil at cell `n`.
fn weight(grid: &Grid, c: &Coefficients, n: usize, p: usize) -> f64 {
    stencil(grid, c, n).iter().filter(|e| e.0 == p).map(|e| e.1).sum()
}

/// Face fluxes G_PN = φ_P A_PN u_N - u_P A_NP φ_N are antisymmetric, and
/// Σ_N G_PN = φ_P (Au)_P - u_P (Aᵀφ)_P; on the discrete Laplacian part
/// G_PN = -φ_P φ_N (v_N - v_P)/h², the flux of φ²∇v.
fn flux_residual(grid: &Grid, c: &Coefficients, u: &[f64], phi: &[f64], f: &[f64], at: &Mask) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for p in at.indices() {
        let mut r = -phi[p] * f[p];
        for (nb, a_pn) in stencil(grid, c, p) {
            if nb == p {
                continue;
            }
            let g = phi[p] * a_pn * u[nb] - u[p] * weight(grid, c, nb, p) * phi[nb];
            r += g;
            den += g * g;
        }
        num += r * r;
    }
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

pub fn to_divergence_form(inst: &ProblemInstance, u: &ScalarField, mult: &Multiplier, dom: &PerforatedDomain) -> Result<DivergenceForm> {
    let grid = inst.grid;
    let phi = &mult.phi.values;
    if let Some(i) = (0..grid.len()).find(|&i| phi[i] <= 0.0) {
        let (x, y) = grid.center(i);
        return Err(Error::PositivityViolation(format!("φ = {} at ({x:.3}, {y:.3})", phi[i])));
    }
    let values: Vec<f64> = u.values.iter().zip(phi).map(|(a, b)| a / b).collect();
    let v = ScalarField { grid, values, mask: dom.omega_prime.clone() };
    let w_hat = inst.w1.sub(&inst.w2);
    let coeffs = Coefficients { w_div: Some(&inst.w1), w_grad: Some(&inst.w2), v: Some(&inst.v) };
    let interior = interior_cells(&grid);
    let omega = strip_frame(&dom.omega).and(&interior);
    let nodal = dom.omega_prime.minus(&dom.omega).and(&interior);
    let residual = flux_residual(&grid, &coeffs, &u.values, phi, &inst.f.values, &omega);
    let residual_nodal =
        if nodal.is_empty() { 0.0 } else { flux_residual(&grid, &coeffs, &u.values, phi, &inst.f.values, &nodal) };
    if !(residual <= DIVERGENCE_TOL) {
        return Err(Error::Gauge { stage: "divergence form", residual, threshold: DIVERGENCE_TOL });
    }
    Ok(DivergenceForm { v, w_hat, residual, residual_nodal })
}

/// h = v∘L⁻¹ with its drift W̃ = 2 conj(∂_z L⁻¹) (W⋄∘L⁻¹) (as complex numbers).
#[derive(Clone, Debug)]
pub struct Transport {
    pub h: ScalarField,
    pub w_diamond: ComplexField,
    pub w_tilde: VectorField,
    /// Cells w of B₂ with L⁻¹(w) in Ω′.
    pub image_mask: Mask,
    /// Weak residual of -Δh - ∇·(W̃h) = 0 against smooth bumps in L(Ω′).
    pub residual: f64,
    pub test_functions: usize,
}

/// W⋄ = φ²Ŵ₁(1+μ)/2 + iφ²Ŵ₂(1-μ)/2.
pub fn w_diamond(phi: &ScalarField, w_hat: &VectorField, mu: &ComplexField) -> ComplexField {
    let g = phi.grid;
    let values = (0..g.len())
        .map(|i| {
            let p2 = phi.values[i] * phi.values[i];
            let m = mu.values[i];
            0.5 * p2 * (w_hat.c1[i] * (1.0 + m) + Complex64::new(0.0, 1.0) * w_hat.c2[i] * (1.0 - m))
        })
        .collect();
    ComplexField { grid: g, values, mask: g.full_mask() }
}

pub fn transport_h(div: &DivergenceForm, phi: &ScalarField, map: &QCMap, omega_prime: &Mask, seed: u64) -> Result<Transport> {
    let g = phi.grid;
    let wd = w_diamond(phi, &div.w_hat, &map.mu);
    let dinv = dz(&map.l_inv.with_mask(g.full_mask()))?;
    let mut h = vec![0.0; g.len()];
    let mut c1 = vec![0.0; g.len()];
    let mut c2 = vec![0.0; g.len()];
    let mut image = g.empty_mask();
    let domain = g.domain_mask();
    for i in 0..g.len() {
        let z = map.l_inv.values[i];
        h[i] = div.v.sample_cubic(z.re, z.im);
        let wt = 2.0 * dinv.values[i].conj() * wd.sample_bilinear(z.re, z.im);
        c1[i] = wt.re;
        c2[i] = wt.im;
        if domain.cells[i] {
            if let Some(j) = g.locate(z.re, z.im) {
                image.cells[i] = omega_prime.cells[j];
            }
        }
    }
    let h = ScalarField { grid: g, values: h, mask: domain.clone() };
    let w_tilde = VectorField { grid: g, c1, c2, mask: domain };
    let (residual, count) = weak_residual(&h, &w_tilde, &image, seed)?;
    if !(residual <= TRANSPORT_TOL) {
        return Err(Error::Gauge { stage: "transport", residual, threshold: TRANSPORT_TOL });
    }
    Ok(Transport { h, w_diamond: wd, w_tilde, image_mask: image, residual, test_functions: count })
}

/// ‖(∫(∇h + W̃h)·∇ψ_k)_k‖ / ‖(∫|∇h + W̃h||∇ψ_k|)_k‖ over bumps
/// ψ_k = (1 - |x - c_k|²/ρ²)³ whose support lies in `region`.
pub fn weak_residual(h: &ScalarField, w: &VectorField, region: &Mask, seed: u64) -> Result<(f64, usize)> {
    let g = h.grid;
    let grad = gradient(&h.with_mask(g.full_mask()))?;
    let rho = 0.1f64.max(6.0 * g.h());
    let interior = region.erode((rho / g.h()).ceil() as usize + 1);
    let candidates: Vec<usize> = interior.indices().collect();
    if candidates.is_empty() {
        return Err(Error::Geometry("no room for weak-residual test functions".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h2 = g.h() * g.h();
    let reach = (rho / g.h()).ceil() as isize + 1;
    let n = g.n as isize;
    let (mut num, mut den) = (0.0, 0.0);
    let count = 48.min(candidates.len());
    for _ in 0..count {
        let c = candidates[rng.gen_range(0..candidates.len())];
        let (cx, cy) = g.center(c);
        let (ix, iy) = g.cell(c);
        let (mut r, mut d) = (0.0, 0.0);
        for jy in (iy as isize - reach).max(0)..(iy as isize + reach + 1).min(n) {
            for jx in (ix as isize - reach).max(0)..(ix as isize + reach + 1).min(n) {
                let k = g.index(jx as usize, jy as usize);
                let (x, y) = g.center(k);
                let q = 1.0 - ((x - cx).powi(2) + (y - cy).powi(2)) / (rho * rho);
                if q <= 0.0 {
                    continue;
                }
                // ∇ψ = -6 q² (x - c)/ρ²
                let (px, py) = (-6.0 * q * q * (x - cx) / (rho * rho), -6.0 * q * q * (y - cy) / (rho * rho));
                let fx = grad.c1[k] + w.c1[k] * h.values[k];
                let fy = grad.c2[k] + w.c2[k] * h.values[k];
                r += (fx * px + fy * py) * h2;
                d += fx.hypot(fy) * px.hypot(py) * h2;
            }
        }
        num += r * r;
        den += d * d;
    }
    Ok((if den > 0.0 { (num / den).sqrt() } else { 0.0 }, count))
}

/// s(t) = t³(10 - 15t + 6t²) on [0,1], clamped outside.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
}

pub fn smoothstep_derivative(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (1.0 - t) * (1.0 - t)
}

/// χ = ξ Π_j σ((x - x′_j)/ε′): σ = 0 on B(0,3), 1 off B(0,4); ξ = 1 on
/// B(0, 2 - 8c₀), 0 off B(0, 2 - 4c₀).
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub chi: ScalarField,
    pub grad: VectorField,
    pub centers: Vec<(f64, f64)>,
    pub eps_prime: f64,
    pub c0: f64,
    pub max_grad: f64,
}

impl Cutoff {
    /// (χ, ∂_xχ, ∂_yχ) at a point.
    pub fn eval(&self, x: f64, y: f64) -> (f64, f64, f64) {
        cutoff_at(&self.centers, self.eps_prime, self.c0, x, y)
    }

    /// (∂̄χ) = (χ_x + iχ_y)/2 on the grid.
    pub fn dbar(&self) -> ComplexField {
        let g = self.chi.grid;
        let values = (0..g.len()).map(|i| 0.5 * Complex64::new(self.grad.c1[i], self.grad.c2[i])).collect();
        ComplexField { grid: g, values, mask: g.full_mask() }
    }
}

/// Radial profile value and derivative in r.
fn radial(r: f64, r0: f64, width: f64, rising: bool) -> (f64, f64) {
    let t = (r - r0) / width;
    let (s, ds) = (smoothstep(t), smoothstep_derivative(t) / width);
    if rising {
        (s, ds)
    } else {
        (1.0 - s, -ds)
    }
}

fn cutoff_at(centers: &[(f64, f64)], eps_prime: f64, c0: f64, x: f64, y: f64) -> (f64, f64, f64) {
    let r = x.hypot(y);
    let (xi, dxi) = radial(r, DOMAIN_RADIUS - 8.0 * c0, 4.0 * c0, false);
    let mut val = xi;
    let (mut gx, mut gy) = if r > 0.0 { (dxi * x / r, dxi * y / r) } else { (0.0, 0.0) };
    for &(cx, cy) in centers {
        let (dx, dy) = (x - cx, y - cy);
        let d = dx.hypot(dy);
        if d >= 4.0 * eps_prime {
            continue;
        }
        let (s, ds) = radial(d, 3.0 * eps_prime, eps_prime, true);
        // product rule: ∇(val·s) = s∇val + val∇s
        let (sx, sy) = if d > 0.0 { (ds * dx / d, ds * dy / d) } else { (0.0, 0.0) };
        gx = gx * s + val * sx;
        gy = gy * s + val * sy;
        val *= s;
    }
    (val, gx, gy)
}

pub fn build_cutoff(grid: Grid, centers: &[(f64, f64)], eps_prime: f64, c0: f64) -> Result<Cutoff> {
    for a in 0..centers.len() {
        for b in a + 1..centers.len() {
            let d = (centers[a].0 - centers[b].0).hypot(centers[a].1 - centers[b].1);
            if d < 8.0 * eps_prime {
                return Err(Error::Separation(format!(
                    "transition annuli around ({:.4}, {:.4}) and ({:.4}, {:.4}) overlap",
                    centers[a].0, centers[a].1, centers[b].0, centers[b].1
                )));
            }
        }
    }
    let n = grid.len();
    let (mut chi, mut c1, mut c2) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut max_grad: f64 = 0.0;
    for i in 0..n {
        let (x, y) = grid.center(i);
        let (v, gx, gy) = cutoff_at(centers, eps_prime, c0, x, y);
        chi[i] = v;
        c1[i] = gx;
        c2[i] = gy;
        max_grad = max_grad.max(gx.hypot(gy));
    }
    Ok(Cutoff {
        chi: ScalarField { grid, values: chi, mask: grid.full_mask() },
        grad: VectorField { grid, c1, c2, mask: grid.full_mask() },
        centers: centers.to_vec(),
        eps_prime,
        c0,
        max_grad,
    })
}

/// Approximate stream function h̃ and its error E_h on the polar lattice.
#[derive(Clone, Debug)]
pub struct Stream {
    pub h_tilde: ScalarField,
    pub h_tilde_polar: PolarField,
    pub e_h: PolarField,
    /// max |∂_θh̃ - ρχ(∂_ρh + W̃h·e_ρ) - E_h| over polar nodes where χ = 1
    /// on the θ-stencil, relative to the largest of |ρχ(∂_ρh + W̃h·e_ρ)|
    /// and |E_h|.
    pub curl_residual: f64,
}

/// Polar field read back on the grid, linear in ρ between the origin
/// (where it vanishes) and the first ring.
pub fn polar_to_grid(p: &PolarField, grid: Grid) -> ScalarField {
    let mask = grid.disk_mask(0.0, 0.0, p.rho_max);
    let r0 = p.rho(0);
    let values = (0..grid.len())
        .map(|i| {
            if !mask.cells[i] {
                return 0.0;
            }
            let (x, y) = grid.center(i);
            let (r, t) = (x.hypot(y), y.atan2(x));
            if r < r0 {
                p.sample(r0, t) * r / r0
            } else {
                p.sample(r, t)
            }
        })
        .collect();
    ScalarField { grid, values, mask }
}

/// h̃(ρ,θ) = -∫₀^ρ χ (∇h + W̃h)·e_θ ds and
/// E_h(ρ,θ) = -∫₀^ρ s[(∇χ·e_θ)(∇h + W̃h)·e_θ + (∇χ·e_ρ)(∇h + W̃h)·e_ρ] ds by
/// the trapezoid rule on rays; (1/s)∂_θ = e_θ·∇ keeps the integrands bounded.
pub fn stream_function(h: &ScalarField, w_tilde: &VectorField, cut: &Cutoff, n_rho: usize, n_theta: usize) -> Result<Stream> {
    let g = h.grid;
    if n_rho < 4 * g.n || n_theta < 4 * g.n {
        return Err(Error::Precondition(format!("polar lattice {n_rho} x {n_theta} is coarser than 4n = {}", 4 * g.n)));
    }
    // the 1/s factor is harmless only where χ is locally constant near 0
    for &(cx, cy) in &cut.centers {
        let d = cx.hypot(cy);
        if d > 2.0 * cut.eps_prime && d < 5.0 * cut.eps_prime {
            return Err(Error::OriginSingularity(format!(
                "cutoff transition around ({cx:.4}, {cy:.4}) reaches within ε′ of the origin"
            )));
        }
    }
    let grad = gradient(&h.with_mask(g.full_mask()))?;
    let qx: Vec<f64> = (0..g.len()).map(|i| grad.c1[i] + w_tilde.c1[i] * h.values[i]).collect();
    let qy: Vec<f64> = (0..g.len()).map(|i| grad.c2[i] + w_tilde.c2[i] * h.values[i]).collect();
    let q = VectorField { grid: g, c1: qx, c2: qy, mask: g.full_mask() };
    let mut ht = PolarField::zeros(n_rho, n_theta, DOMAIN_RADIUS)?;
    let mut eh = PolarField::zeros(n_rho, n_theta, DOMAIN_RADIUS)?;
    let mut radial_flux = PolarField::zeros(n_rho, n_theta, DOMAIN_RADIUS)?;
    let mut plateau = vec![false; n_rho * n_theta];
    for m in 0..n_theta {
        let t = ht.theta(m);
        let (st, ct) = t.sin_cos();
        let (q0x, q0y) = q.sample_bilinear(0.0, 0.0);
        let (chi0, _, _) = cut.eval(0.0, 0.0);
        let mut prev_f = chi0 * (-q0x * st + q0y * ct);
        let mut prev_e = 0.0;
        let mut prev_s = 0.0;
        let (mut acc_h, mut acc_e) = (0.0, 0.0);
        for k in 0..n_rho {
            let s = ht.rho(k);
            let (x, y) = (s * ct, s * st);
            let (qx, qy) = q.sample_bilinear(x, y);
            let (chi, cx, cy) = cut.eval(x, y);
            let a = -qx * st + qy * ct;
            let b = qx * ct + qy * st;
            let f = chi * a;
            let e = s * ((-cx * st + cy * ct) * a + (cx * ct + cy * st) * b);
            let w = s - prev_s;
            acc_h += 0.5 * w * (prev_f + f);
            acc_e += 0.5 * w * (prev_e + e);
            ht.set(k, m, -acc_h);
            eh.set(k, m, -acc_e);
            radial_flux.set(k, m, s * chi * b);
            plateau[k * n_theta + m] = chi == 1.0;
            prev_f = f;
            prev_e = e;
            prev_s = s;
        }
    }
    // fourth-order centered θ-differences; the scale is the larger of the
    // two terms on the right, since E_h dominates in the shadows of holes
    let dt = ht.d_theta();
    let (mut num, mut den): (f64, f64) = (0.0, 0.0);
    let wrap = |m: usize, d: isize| (m as isize + d).rem_euclid(n_theta as isize) as usize;
    for k in 1..n_rho {
        for m in 0..n_theta {
            let rf = radial_flux.get(k, m);
            den = den.max(rf.abs()).max(eh.get(k, m).abs());
            if !(-2..=2).all(|d| plateau[k * n_theta + wrap(m, d)]) {
                continue;
            }
            let dth = (8.0 * (ht.get(k, wrap(m, 1)) - ht.get(k, wrap(m, -1))) - (ht.get(k, wrap(m, 2)) - ht.get(k, wrap(m, -2))))
                / (12.0 * dt);
            let e = (dth - rf - eh.get(k, m)).abs();
            num = num.max(e);
        }
    }
    let curl_residual = if den > 0.0 { num / den } else { num };
    Ok(Stream { h_tilde: polar_to_grid(&ht, g), h_tilde_polar: ht, e_h: eh, curl_residual })
}

/// γ = χh + ih̃, α, Ẽ_h = -e^{iθ}E_h/(2ρ) and the source (∂̄χ)h + Ẽ_h,
/// with ∂̄χ taken by centered differences.
#[derive(Clone, Debug)]
pub struct GammaFields {
    pub gamma: ComplexField,
    pub alpha: ComplexField,
    pub e_h_tilde: ComplexField,
    pub source: ComplexField,
    /// ‖∂̄γ - αγ - (∂̄χ)h - Ẽ_h‖₂ / ‖∂̄γ‖₂ on B(0, 2 - 3h).
    pub residual: f64,
}

fn residual_mask(g: Grid) -> Mask {
    g.disk_mask(0.0, 0.0, DOMAIN_RADIUS - 3.0 * g.h())
}

/// α = [χe^{iθ}(-W̃₁cosθ - W̃₂sinθ + iW̃₁sinθ - iW̃₂cosθ)/4](1 + γ̄/γ), 0 where γ = 0.
pub fn alpha_field(gamma: &ComplexField, chi: &ScalarField, w_tilde: &VectorField) -> ComplexField {
    let g = gamma.grid;
    let gmax = gamma.values.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let i1 = Complex64::new(0.0, 1.0);
    let values = (0..g.len())
        .map(|i| {
            let gm = gamma.values[i];
            if gm.norm() < GAMMA_ZERO * gmax || gm.norm() == 0.0 {
                return ZERO;
            }
            let (x, y) = g.center(i);
            let t = y.atan2(x);
            let (st, ct) = t.sin_cos();
            let (w1, w2) = (w_tilde.c1[i], w_tilde.c2[i]);
            let bracket = chi.values[i] * Complex64::from_polar(1.0, t) * (-w1 * ct - w2 * st + i1 * (w1 * st - w2 * ct)) / 4.0;
            bracket * (1.0 + gm.conj() / gm)
        })
        .collect();
    ComplexField { grid: g, values, mask: g.full_mask() }
}

pub fn assemble_gauge(h: &ScalarField, stream: &Stream, cut: &Cutoff, w_tilde: &VectorField) -> Result<GammaFields> {
    let gf = assemble_gauge_unchecked(h, stream, cut, w_tilde)?;
    if !(gf.residual <= GAMMA_TOL) {
        return Err(Error::Gauge { stage: "gamma equation", residual: gf.residual, threshold: GAMMA_TOL });
    }
    Ok(gf)
}

/// As [`assemble_gauge`] without the threshold.
pub fn assemble_gauge_unchecked(h: &ScalarField, stream: &Stream, cut: &Cutoff, w_tilde: &VectorField) -> Result<GammaFields> {
    let g = h.grid;
    let gamma_vals: Vec<Complex64> =
        (0..g.len()).map(|i| Complex64::new(cut.chi.values[i] * h.values[i], stream.h_tilde.values[i])).collect();
    let gamma = ComplexField { grid: g, values: gamma_vals, mask: g.full_mask() };
    let alpha = alpha_field(&gamma, &cut.chi, w_tilde);
    let r0 = stream.e_h.rho(0);
    let eht: Vec<Complex64> = (0..g.len())
        .map(|i| {
            let (x, y) = g.center(i);
            let (r, t) = (x.hypot(y), y.atan2(x));
            if r >= DOMAIN_RADIUS {
                return ZERO;
            }
            let e = if r < r0 { stream.e_h.sample(r0, t) * r / r0 } else { stream.e_h.sample(r, t) };
            -Complex64::from_polar(1.0, t) * e / (2.0 * r)
        })
        .collect();
    let e_h_tilde = ComplexField { grid: g, values: eht, mask: g.full_mask() };
    // ∂̄χ by the same centered differences that measure ∂̄γ: the transition
    // annuli are only a few cells wide and the analytic peak is not seen
    // by the difference quotient
    let dchi = dbar(&ComplexField::from_real(&cut.chi.with_mask(g.full_mask())))?;
    let source_vals: Vec<Complex64> = (0..g.len()).map(|i| dchi.values[i] * h.values[i] + e_h_tilde.values[i]).collect();
    let source = ComplexField { grid: g, values: source_vals, mask: g.full_mask() };
    let at = residual_mask(g);
    let db = dbar(&gamma.with_mask(at.clone()))?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in at.indices() {
        num += (db.values[i] - alpha.values[i] * gamma.values[i] - source.values[i]).norm_sqr();
        den += db.values[i].norm_sqr();
    }
    let residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(GammaFields { gamma, alpha, e_h_tilde, source, residual })
}

/// β = Tα, ζ = e^{-β}γ, F = e^{-β}[(∂̄χ)h + Ẽ_h].
#[derive(Clone, Debug)]
pub struct Zeta {
    pub beta: ComplexField,
    pub zeta: ComplexField,
    pub f: ComplexField,
    /// ‖∂̄ζ - F‖₂ / ‖F‖₂ on B(0, 2 - 3h).
    pub residual: f64,
}

pub fn gauge_zeta(plan: &TransformPlan, gf: &GammaFields) -> Result<Zeta> {
    let z = gauge_zeta_unchecked(plan, &gf.gamma, &gf.alpha, &gf.source)?;
    if !(z.residual <= ZETA_TOL) {
        return Err(Error::Gauge { stage: "zeta equation", residual: z.residual, threshold: ZETA_TOL });
    }
    Ok(z)
}

/// As [`gauge_zeta`] without the threshold, for inputs that are expected
/// to be inconsistent.
pub fn gauge_zeta_unchecked(plan: &TransformPlan, gamma: &ComplexField, alpha: &ComplexField, source: &ComplexField) -> Result<Zeta> {
    let g = gamma.grid;
    let beta = plan.cauchy_t(alpha)?;
    let e: Vec<Complex64> = beta.values.iter().map(|b| (-b).exp()).collect();
    let zeta = ComplexField { grid: g, values: (0..g.len()).map(|i| e[i] * gamma.values[i]).collect(), mask: g.full_mask() };
    let f = ComplexField { grid: g, values: (0..g.len()).map(|i| e[i] * source.values[i]).collect(), mask: g.full_mask() };
    let at = residual_mask(g);
    let db = dbar(&zeta.with_mask(at.clone()))?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in at.indices() {
        num += (db.values[i] - f.values[i]).norm_sqr();
        den += f.values[i].norm_sqr();
    }
    let residual = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(Zeta { beta, zeta, f, residual })
}

/// Every field of the chain with its residuals.
#[derive(Clone, Debug)]
pub struct GaugeBundle {
    pub div: DivergenceForm,
    pub transport: Transport,
    pub cutoff: Cutoff,
    pub stream: Stream,
    pub gamma: GammaFields,
    pub zeta: Zeta,
    pub kappa: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaugeManifest {
    pub divergence_residual: f64,
    pub divergence_residual_nodal: f64,
    pub transport_residual: f64,
    pub curl_residual: f64,
    pub gamma_residual: f64,
    pub zeta_residual: f64,
    pub w_hat_sup: f64,
    pub w_tilde_lkappa: f64,
    pub alpha_lkappa: f64,
    pub beta_sup: f64,
    pub chi_max_grad: f64,
    pub kappa: f64,
}

impl GaugeBundle {
    pub fn manifest(&self, c0: f64) -> GaugeManifest {
        let g = self.transport.h.grid;
        let inner = g.disk_mask(0.0, 0.0, DOMAIN_RADIUS - c0);
        let w = &self.transport.w_tilde;
        let h2 = g.h() * g.h();
        let wk = (inner.indices().map(|i| w.c1[i].hypot(w.c2[i]).powf(self.kappa)).sum::<f64>() * h2).powf(1.0 / self.kappa);
        GaugeManifest {
            divergence_residual: self.div.residual,
            divergence_residual_nodal: self.div.residual_nodal,
            transport_residual: self.transport.residual,
            curl_residual: self.stream.curl_residual,
            gamma_residual: self.gamma.residual,
            zeta_residual: self.zeta.residual,
            w_hat_sup: self.div.w_hat.sup_norm_on(&g.domain_mask()),
            w_tilde_lkappa: wk,
            alpha_lkappa: self.gamma.alpha.lp_norm_on(&g.domain_mask(), self.kappa),
            beta_sup: self.zeta.beta.sup_norm_on(&g.domain_mask()),
            chi_max_grad: self.cutoff.max_grad,
            kappa: self.kappa,
        }
    }

    /// Writes every field as an LLF1 file plus `manifest.toml`.
    pub fn save(&self, dir: &Path, c0: f64) -> Result<()> {
        fs::create_dir_all(dir)?;
        let fields: Vec<(&str, AnyField)> = vec![
            ("v", self.div.v.clone().into()),
            ("w_hat", self.div.w_hat.clone().into()),
            ("h", self.transport.h.clone().into()),
            ("w_diamond", self.transport.w_diamond.clone().into()),
            ("w_tilde", self.transport.w_tilde.clone().into()),
            ("chi", self.cutoff.chi.clone().into()),
            ("h_tilde", self.stream.h_tilde.clone().into()),
            ("gamma", self.gamma.gamma.clone().into()),
            ("alpha", self.gamma.alpha.clone().into()),
            ("e_h_tilde", self.gamma.e_h_tilde.clone().into()),
            ("beta", self.zeta.beta.clone().into()),
            ("zeta", self.zeta.zeta.clone().into()),
            ("f", self.zeta.f.clone().into()),
        ];
        for (name, f) in fields {
            f.save(dir.join(format!("{name}.llf")))?;
        }
        let text = toml::to_string(&self.manifest(c0)).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("manifest.toml"), text)?;
        Ok(())
    }
}

/// Direction angle helper for tests and reports.
pub fn angle(x: f64, y: f64) -> f64 {
    y.atan2(x).rem_euclid(2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::ProblemInstance;

    fn no_drift(g: Grid) -> VectorField {
        VectorField::zeros(g, g.full_mask())
    }

    fn trivial_setting(n: usize) -> (ProblemInstance, ScalarField, Multiplier, PerforatedDomain) {
        let g = Grid::new(n).unwrap();
        // φ ≡ 1 solves the adjoint equation exactly when W₂ = 0 and V = 0
        let mut inst = crate::elliptic::random_instance(g, 3, 0.5, 0.0, 0.0);
        let u = crate::elliptic::solve(&inst, 1e-11).unwrap();
        inst.u = Some(u.clone());
        let ones = ScalarField::constant(g, g.full_mask(), 1.0);
        let mult = Multiplier {
            phi: ones.clone(),
            phi_tilde: ScalarField::zeros(g, g.full_mask()),
            bound_rhs: 0.0,
            bound_shape: 0.0,
            series_terms: 0,
            residual: 0.0,
            measured_ratio: 0.0,
            predicted_q: 0.0,
            term_norms: vec![],
        };
        let dm = g.domain_mask();
        let dom = PerforatedDomain {
            eps: 0.05,
            c0: 4.0,
            nodal: g.empty_mask(),
            centers: vec![],
            x_max: (0.0, 0.0),
            holes: g.empty_mask(),
            omega: dm.clone(),
            omega_prime: dm,
            poincare_sq: 1.0,
        };
        (inst, u, mult, dom)
    }

    #[test]
    fn divergence_form_with_unit_multiplier() {
        let (inst, u, mult, dom) = trivial_setting(128);
        let d = to_divergence_form(&inst, &u, &mult, &dom).unwrap();
        assert_eq!(d.v.values, u.values);
        let expect = inst.w1.sub(&inst.w2);
        assert_eq!(d.w_hat.c1, expect.c1);
        assert_eq!(d.w_hat.c2, expect.c2);
        assert!(d.residual < 1e-8, "{}", d.residual);
        let mut bad = u.clone();
        bad.values[g_center(&u)] += 1e-2;
        assert!(matches!(to_divergence_form(&inst, &bad, &mult, &dom), Err(Error::Gauge { .. })));
    }

    fn g_center(u: &ScalarField) -> usize {
        let n = u.grid.n;
        u.grid.index(n / 2, n / 2)
    }

    #[test]
    fn transport_under_identity_map() {
        let (inst, u, mult, dom) = trivial_setting(128);
        let g = u.grid;
        let d = to_divergence_form(&inst, &u, &mult, &dom).unwrap();
        let mu = ComplexField::zeros(g, g.full_mask());
        let map = crate::quasiconformal::build_qc_map(&mu, 1e-12).unwrap();
        assert!(map.l_inv.values.iter().enumerate().all(|(i, z)| (z - g.center_z(i)).norm() < 1e-8));
        let t = transport_h(&d, &mult.phi, &map, &dom.omega_prime, 5).unwrap();
        let inner = g.disk_mask(0.0, 0.0, 1.9);
        for i in inner.indices() {
            assert!((t.h.values[i] - u.values[i]).abs() < 1e-6 * u.sup_norm());
            let wd = t.w_diamond.values[i];
            assert!((wd - 0.5 * Complex64::new(d.w_hat.c1[i], d.w_hat.c2[i])).norm() < 1e-14);
            assert!((t.w_tilde.c1[i] - d.w_hat.c1[i]).abs() < 1e-6);
            assert!((t.w_tilde.c2[i] - d.w_hat.c2[i]).abs() < 1e-6);
        }
        assert!(t.residual < 1e-2, "{}", t.residual);
        assert!(t.test_functions > 0);
    }

    #[test]
    fn smoothstep_profile() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        let max = (0..=1000).map(|k| smoothstep_derivative(k as f64 / 1000.0)).fold(0.0, f64::max);
        assert!((max - 15.0 / 8.0).abs() < 1e-12);
        // derivative against a difference quotient
        let t = 0.3;
        let fd = (smoothstep(t + 1e-6) - smoothstep(t - 1e-6)) / 2e-6;
        assert!((fd - smoothstep_derivative(t)).abs() < 1e-8);
    }

    #[test]
    fn cutoff_examples() {
        let g = Grid::new(256).unwrap();
        let ep = 0.1;
        let empty = build_cutoff(g, &[], ep, 1.0 / 32.0).unwrap();
        assert_eq!(empty.eval(0.3, -0.2).0, 1.0);
        assert_eq!(empty.eval(2.0 - 4.0 / 32.0 + 1e-9, 0.0).0, 0.0);
        let centers = [(0.8, 0.1), (-0.5, -0.9)];
        let cut = build_cutoff(g, &centers, ep, 1.0 / 32.0).unwrap();
        for &(x, y) in &centers {
            assert_eq!(cut.eval(x, y).0, 0.0);
            assert_eq!(cut.eval(x + 2.9 * ep, y).0, 0.0);
            assert_eq!(cut.eval(x + 4.01 * ep, y).0, 1.0);
        }
        assert!(cut.chi.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        // interior annuli alone: the collar has its own scale 4c₀
        let holes_only = build_cutoff(g, &centers, ep, 0.05).unwrap();
        let inner = g.disk_mask(0.0, 0.0, 2.0 - 8.0 * 0.05);
        let m = inner.indices().map(|i| holes_only.grad.c1[i].hypot(holes_only.grad.c2[i])).fold(0.0, f64::max);
        assert!((1.6..=15.0 / 8.0 + 1e-9).contains(&(m * ep)), "{}", m * ep);
        assert!(matches!(build_cutoff(g, &[(0.0, 0.5), (0.0, 0.9)], ep, 0.03), Err(Error::Separation(_))));
    }

    #[test]
    fn cutoff_gradient_matches_differences() {
        let centers = [(0.5, 0.2)];
        let (ep, c0) = (0.07, 0.05);
        for &(x, y) in &[(0.5 + 3.4 * ep, 0.2 + 0.3 * ep), (1.7, 0.3), (0.0, -1.75)] {
            let (_, gx, gy) = cutoff_at(&centers, ep, c0, x, y);
            let d = 1e-6;
            let fx = (cutoff_at(&centers, ep, c0, x + d, y).0 - cutoff_at(&centers, ep, c0, x - d, y).0) / (2.0 * d);
            let fy = (cutoff_at(&centers, ep, c0, x, y + d).0 - cutoff_at(&centers, ep, c0, x, y - d).0) / (2.0 * d);
            assert!((fx - gx).abs() < 1e-5 && (fy - gy).abs() < 1e-5, "{gx} {fx} {gy} {fy}");
        }
    }

    #[test]
    fn stream_of_re_z_is_y() {
        let g = Grid::new(64).unwrap();
        let h = ScalarField::from_fn(g, g.full_mask(), |x, _| x);
        let cut = build_cutoff(g, &[], 0.1, 1.0 / 32.0).unwrap();
        let s = stream_function(&h, &no_drift(g), &cut, 256, 256).unwrap();
        for k in 0..s.h_tilde_polar.n_rho {
            let r = s.h_tilde_polar.rho(k);
            if r > 2.0 - 8.0 / 32.0 {
                break;
            }
            for m in (0..256).step_by(17) {
                let t = s.h_tilde_polar.theta(m);
                assert!((s.h_tilde_polar.get(k, m) - r * t.sin()).abs() < 1e-10);
                assert!(s.e_h.get(k, m).abs() < 1e-12);
            }
        }
        // centered θ-differences of sin θ lose dθ²/6
        assert!(s.curl_residual < 1e-3, "{}", s.curl_residual);
    }

    #[test]
    fn stream_of_constant_vanishes() {
        let g = Grid::new(64).unwrap();
        let h = ScalarField::constant(g, g.full_mask(), 3.0);
        let cut = build_cutoff(g, &[(0.9, 0.0)], 0.08, 1.0 / 32.0).unwrap();
        let s = stream_function(&h, &no_drift(g), &cut, 256, 256).unwrap();
        assert_eq!(s.h_tilde_polar.sup_norm(), 0.0);
        assert_eq!(s.e_h.sup_norm(), 0.0);
        assert!(matches!(stream_function(&h, &no_drift(g), &cut, 64, 256), Err(Error::Precondition(_))));
        let near = build_cutoff(g, &[(0.2, 0.0)], 0.08, 1.0 / 32.0).unwrap();
        assert!(matches!(stream_function(&h, &no_drift(g), &near, 256, 256), Err(Error::OriginSingularity(_))));
        // a hole centered at the origin keeps χ ≡ 0 around it, which is harmless
        let at_origin = build_cutoff(g, &[(0.0, 0.0)], 0.08, 1.0 / 32.0).unwrap();
        let st = stream_function(&h, &no_drift(g), &at_origin, 256, 256).unwrap();
        assert!(st.curl_residual < 1e-3, "{}", st.curl_residual);
    }

    #[test]
    fn e_h_supported_on_shadow_of_hole() {
        let g = Grid::new(128).unwrap();
        let h = ScalarField::from_fn(g, g.full_mask(), |x, y| x * x - y * y + 0.3 * x);
        let ep = 0.08;
        let c = (0.9, 0.0);
        let cut = build_cutoff(g, &[c], ep, 1.0 / 32.0).unwrap();
        let s = stream_function(&h, &no_drift(g), &cut, 512, 512).unwrap();
        for k in 0..s.e_h.n_rho {
            let r = s.e_h.rho(k);
            if r > 2.0 - 8.0 / 32.0 {
                break;
            }
            for m in 0..512 {
                let t = s.e_h.theta(m);
                // the ray from 0 through (r, t) meets B(c, 4ε′) only if its
                // angular distance to the center is small and r is large enough
                let tc = c.1.atan2(c.0);
                let dth = ((t - tc + PI).rem_euclid(2.0 * PI) - PI).abs();
                let misses = dth > (4.0 * ep / 0.9).asin() + 1e-9 || r < 0.9 - 4.0 * ep;
                if misses {
                    assert_eq!(s.e_h.get(k, m), 0.0, "E_h at r={r} t={t}");
                }
            }
        }
        assert!(s.e_h.sup_norm() > 0.0);
    }

    #[test]
    fn gauge_without_drift_is_holomorphic() {
        let g = Grid::new(256).unwrap();
        let h = ScalarField::from_fn(g, g.full_mask(), |x, y| x * x - y * y + 0.5 * x * y);
        // a collar of 14 cells; at 7 cells the discrete ∂̄ misses by about 5%
        let cut = build_cutoff(g, &[], 0.1, 1.0 / 16.0).unwrap();
        let s = stream_function(&h, &no_drift(g), &cut, 1024, 1024).unwrap();
        let gf = assemble_gauge(&h, &s, &cut, &no_drift(g)).unwrap();
        assert!(gf.alpha.values.iter().all(|a| *a == ZERO));
        let inner = g.disk_mask(0.0, 0.0, 1.4);
        let db = dbar(&gf.gamma.with_mask(inner.clone())).unwrap();
        let dzg = dz(&gf.gamma.with_mask(inner.clone())).unwrap();
        let ratio = db.sup_norm_on(&inner.erode(1)) / dzg.sup_norm_on(&inner.erode(1));
        assert!(ratio < 1e-2, "{ratio}");
        assert!(inner.indices().all(|i| gf.e_h_tilde.values[i] == ZERO));
        assert!(gf.residual < GAMMA_TOL);
        let plan = TransformPlan::new(g);
        let z = gauge_zeta(&plan, &gf).unwrap();
        assert!(z.beta.sup_norm() == 0.0);
        assert!(z.zeta.values.iter().zip(&gf.gamma.values).all(|(a, b)| a == b));
        let zero = ComplexField::zeros(g, g.full_mask());
        let bad = gauge_zeta_unchecked(&plan, &zero, &zero, &gf.source).unwrap();
        assert!((bad.residual - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_real_positive_branch() {
        let g = Grid::new(64).unwrap();
        let gamma = ComplexField { grid: g, values: vec![Complex64::new(2.0, 0.0); g.len()], mask: g.full_mask() };
        let chi = ScalarField::constant(g, g.full_mask(), 1.0);
        let w = VectorField::constant(g, g.full_mask(), (0.3, -0.7));
        let a = alpha_field(&gamma, &chi, &w);
        for i in 0..g.len() {
            let (x, y) = g.center(i);
            let t = y.atan2(x);
            let (st, ct) = t.sin_cos();
            let b = Complex64::from_polar(1.0, t) * Complex64::new(-0.3 * ct + 0.7 * st, 0.3 * st + 0.7 * ct) / 4.0;
            assert!((a.values[i] - 2.0 * b).norm() < 1e-14);
        }
    }
}
