//! Beltrami coefficient, principal solution of the Beltrami equation, its
//! renormalization onto B(0,2), the inverse map and distortion checks.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_core::{dbar, dz, gradient, ComplexField, Grid, Mask, ScalarField, DOMAIN_RADIUS};
use crate::singular_integrals::TransformPlan;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
/// Boundary samples for the conformal renormalization.
const BOUNDARY_SAMPLES: usize = 1024;
/// Accepted boundary radius range relative to 2.
const RADIUS_BAND: f64 = 0.2;

pub fn distortion(mu_sup: f64) -> f64 {
    (1.0 + mu_sup) / (1.0 - mu_sup)
}

/// μ = (1-φ²)/(1+φ²) (v_x + i v_y)/(v_x - i v_y) on Ω′, zero where
/// |∇v| < 1e-12 ‖∇v‖∞ and off Ω′.
pub fn beltrami_coefficient(phi: &ScalarField, v: &ScalarField, omega_prime: &Mask) -> Result<ComplexField> {
    let g = phi.grid;
    g.check_same(&v.grid)?;
    let grad = gradient(&v.with_mask(g.full_mask()))?;
    let gmax = omega_prime.indices().map(|i| grad.c1[i].hypot(grad.c2[i])).fold(0.0, f64::max);
    let mut values = vec![ZERO; g.len()];
    for i in omega_prime.indices() {
        let d = Complex64::new(grad.c1[i], grad.c2[i]);
        if d.norm() < 1e-12 * gmax || d.norm() == 0.0 {
            continue;
        }
        let p2 = phi.values[i] * phi.values[i];
        values[i] = (1.0 - p2) / (1.0 + p2) * d / d.conj();
    }
    let mu = ComplexField { grid: g, values, mask: g.full_mask() };
    let sup = mu.sup_norm();
    if sup >= 1.0 {
        return Err(Error::InvalidMultiplier(sup));
    }
    Ok(mu)
}

/// ‖∂̄F - μ ∂_z F‖₂ / ‖∂_z F‖₂ over `at`, with centered differences.
pub fn beltrami_residual(map: &ComplexField, mu: &ComplexField, at: &Mask) -> Result<f64> {
    let f = map.with_mask(at.clone());
    let fb = dbar(&f)?;
    let fz = dz(&f)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in at.indices() {
        num += (fb.values[i] - mu.values[i] * fz.values[i]).norm_sqr();
        den += fz.values[i].norm_sqr();
    }
    Ok((num / den).sqrt())
}

/// Ψ = z + T(h) with h = μ S(h) + μ.
#[derive(Clone, Debug)]
pub struct PrincipalSolution {
    pub psi: ComplexField,
    pub h: ComplexField,
    pub iterations: usize,
    /// Largest observed ‖h_{k+1} - h_k‖ / ‖h_k - h_{k-1}‖.
    pub contraction: f64,
}

pub fn principal_solution(mu: &ComplexField, tol: f64) -> Result<PrincipalSolution> {
    principal_solution_with(&TransformPlan::new(mu.grid), mu, tol)
}

pub fn principal_solution_with(plan: &TransformPlan, mu: &ComplexField, tol: f64) -> Result<PrincipalSolution> {
    let g = mu.grid;
    let mu = mu.restricted();
    if mu.sup_norm() >= 1.0 {
        return Err(Error::InvalidMultiplier(mu.sup_norm()));
    }
    let l2 = |a: &[Complex64], b: &[Complex64]| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let mut h = mu.values.clone();
    let zeros = vec![ZERO; g.len()];
    let first = l2(&h, &zeros);
    let mut iterations = 0;
    let mut contraction: f64 = 0.0;
    let mut prev_diff = first;
    let mut increases = 0;
    if first > 0.0 {
        loop {
            iterations += 1;
            let s = plan.beurling_s(&ComplexField { grid: g, values: h.clone(), mask: g.full_mask() })?;
            let next: Vec<Complex64> = (0..g.len()).map(|i| mu.values[i] * s.values[i] + mu.values[i]).collect();
            let diff = l2(&next, &h);
            h = next;
            if diff <= tol * first {
                break;
            }
            let ratio = diff / prev_diff;
            contraction = contraction.max(ratio);
            if ratio >= 1.0 {
                increases += 1;
            }
            if (iterations >= 5 && increases >= 5) || iterations > 500 {
                return Err(Error::Divergence(format!("Beltrami Neumann series, ratio {ratio:.3} after {iterations} steps")));
            }
            prev_diff = diff;
        }
    }
    let hf = ComplexField { grid: g, values: h, mask: g.full_mask() };
    let th = plan.cauchy_t(&hf)?;
    let values = (0..g.len()).map(|i| g.center_z(i) + th.values[i]).collect();
    Ok(PrincipalSolution { psi: ComplexField { grid: g, values, mask: g.full_mask() }, h: hf, iterations, contraction })
}

/// Conformal map f(ζ) = w0 + ζ exp(g(ζ)) of B(0,2) onto a near-disk,
/// g(ζ) = Σ a_k (ζ/2)^k, followed by a rotation.
#[derive(Clone, Debug)]
struct NearDiskMap {
    w0: Complex64,
    coeffs: Vec<Complex64>,
    /// α(w) = rotation · f⁻¹(w).
    rotation: Complex64,
}

impl NearDiskMap {
    fn eval(&self, zeta: Complex64) -> (Complex64, Complex64) {
        let x = zeta / DOMAIN_RADIUS;
        let mut g = ZERO;
        let mut dg = ZERO;
        for (k, &a) in self.coeffs.iter().enumerate().rev() {
            g = g * x + a;
            if k > 0 {
                dg = dg * x + a * k as f64;
            }
        }
        // dg currently holds Σ k a_k x^{k-1}
        let dg = dg / DOMAIN_RADIUS;
        let e = g.exp();
        (self.w0 + zeta * e, e * (1.0 + zeta * dg))
    }

    fn invert(&self, w: Complex64) -> Option<Complex64> {
        let mut zeta = (w - self.w0) * (-self.coeffs[0]).exp();
        for _ in 0..60 {
            let (f, df) = self.eval(zeta);
            let step = (f - w) / df;
            zeta -= step;
            if step.norm() < 1e-14 * (1.0 + zeta.norm()) {
                return Some(self.rotation * zeta);
            }
        }
        None
    }
}

fn conformal_near_disk(psi: &ComplexField) -> Result<NearDiskMap> {
    let nb = BOUNDARY_SAMPLES;
    let w0 = psi.sample_bilinear(0.0, 0.0);
    let theta: Vec<f64> = (0..nb).map(|j| 2.0 * PI * j as f64 / nb as f64).collect();
    let mut ang = Vec::with_capacity(nb);
    let mut rad = Vec::with_capacity(nb);
    for &t in &theta {
        let p = psi.sample_bilinear(DOMAIN_RADIUS * t.cos(), DOMAIN_RADIUS * t.sin()) - w0;
        rad.push(p.norm());
        ang.push(p.arg());
    }
    let (rmin, rmax) = rad.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    if rmin < DOMAIN_RADIUS * (1.0 - RADIUS_BAND) || rmax > DOMAIN_RADIUS * (1.0 + RADIUS_BAND) {
        return Err(Error::Renormalization(format!("boundary radius range [{rmin:.4}, {rmax:.4}]")));
    }
    // unwrap and require a star-shaped boundary
    for j in 1..nb {
        while ang[j] < ang[j - 1] - PI {
            ang[j] += 2.0 * PI;
        }
        while ang[j] > ang[j - 1] + PI {
            ang[j] -= 2.0 * PI;
        }
        if ang[j] <= ang[j - 1] {
            return Err(Error::Renormalization("boundary image is not star-shaped about Ψ(0)".into()));
        }
    }
    if (ang[nb - 1] - ang[0] - 2.0 * PI).abs() > PI {
        return Err(Error::Renormalization("boundary image winds incorrectly".into()));
    }
    let base = ang[0];
    // periodic linear interpolation of log R in the angle
    let log_r = |phi: f64| -> f64 {
        let x = (phi - base).rem_euclid(2.0 * PI) + base;
        let k = ang.partition_point(|&a| a <= x);
        let (a0, r0, a1, r1) = if k == 0 {
            (ang[nb - 1] - 2.0 * PI, rad[nb - 1], ang[0], rad[0])
        } else if k == nb {
            (ang[nb - 1], rad[nb - 1], ang[0] + 2.0 * PI, rad[0])
        } else {
            (ang[k - 1], rad[k - 1], ang[k], rad[k])
        };
        let s = (x - a0) / (a1 - a0);
        ((1.0 - s) * r0 + s * r1).ln()
    };

    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nb);
    let inv = planner.plan_fft_inverse(nb);
    let ln2 = DOMAIN_RADIUS.ln();
    let mut phi = theta.clone();
    let mut spec = vec![ZERO; nb];
    let mut converged = false;
    for _ in 0..500 {
        for j in 0..nb {
            spec[j] = Complex64::new(log_r(phi[j]) - ln2, 0.0);
        }
        fwd.process(&mut spec);
        // conjugate function: multiplier -i sgn(k)
        let mut conj = spec.clone();
        for (k, c) in conj.iter_mut().enumerate() {
            let sgn = if k == 0 || 2 * k == nb {
                0.0
            } else if k < nb / 2 {
                1.0
            } else {
                -1.0
            };
            *c *= Complex64::new(0.0, -sgn) / nb as f64;
        }
        inv.process(&mut conj);
        let mut change: f64 = 0.0;
        for j in 0..nb {
            let next = theta[j] + conj[j].re;
            change = change.max((next - phi[j]).abs());
            phi[j] = next;
        }
        if change < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Renormalization("boundary correspondence iteration did not converge".into()));
    }
    for j in 0..nb {
        spec[j] = Complex64::new(log_r(phi[j]) - ln2, 0.0);
    }
    fwd.process(&mut spec);
    let mut coeffs: Vec<Complex64> = (0..nb / 2).map(|k| spec[k] * if k == 0 { 1.0 } else { 2.0 } / nb as f64).collect();
    let scale = coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    while coeffs.len() > 1 && coeffs.last().unwrap().norm() < 1e-16 * scale.max(1.0) {
        coeffs.pop();
    }

    // rotation: zero mean of t(θ) - θ where f(2e^{it}) = Ψ(2e^{iθ})
    let mut mean = 0.0;
    for j in 0..nb {
        let target = ang[j];
        // φ(t) is increasing with φ(t + 2π) = φ(t) + 2π
        let x = (target - phi[0]).rem_euclid(2.0 * PI) + phi[0];
        let k = phi.partition_point(|&a| a <= x);
        let (p0, t0, p1, t1) = if k == nb {
            (phi[nb - 1], theta[nb - 1], phi[0] + 2.0 * PI, 2.0 * PI)
        } else {
            (phi[k - 1], theta[k - 1], phi[k], theta[k])
        };
        let t = t0 + (x - p0) / (p1 - p0) * (t1 - t0);
        mean += (t - theta[j] + PI).rem_euclid(2.0 * PI) - PI;
    }
    mean /= nb as f64;
    Ok(NearDiskMap { w0, coeffs, rotation: Complex64::from_polar(1.0, -mean) })
}

/// Renormalized quasiconformal map L = α ∘ Ψ of B(0,2) onto itself.
#[derive(Clone, Debug)]
pub struct QCMap {
    pub mu: ComplexField,
    pub mu_sup: f64,
    pub k: f64,
    pub l_fwd: ComplexField,
    pub l_inv: ComplexField,
    pub residual_beltrami: f64,
    pub r_prime: f64,
    /// Angle of the normalizing rotation.
    pub rotation: f64,
    pub round_trip: f64,
    pub inversion_failures: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QcHeader {
    pub k: f64,
    pub mu_sup: f64,
    pub residual_beltrami: f64,
    pub r_prime: f64,
    pub rotation: f64,
    pub round_trip: f64,
    pub rotation_rule: String,
}

impl QCMap {
    pub fn header(&self) -> QcHeader {
        QcHeader {
            k: self.k,
            mu_sup: self.mu_sup,
            residual_beltrami: self.residual_beltrami,
            r_prime: self.r_prime,
            rotation: self.rotation,
            round_trip: self.round_trip,
            rotation_rule: "zero mean boundary argument displacement".into(),
        }
    }

    pub fn apply(&self, z: Complex64) -> Complex64 {
        self.l_fwd.sample_bilinear(z.re, z.im)
    }

    pub fn apply_inverse(&self, w: Complex64) -> Complex64 {
        self.l_inv.sample_bilinear(w.re, w.im)
    }
}

/// r′ = c r² if r/2 ≤ ε, else c r.
pub fn r_prime(r: f64, eps: f64, c: f64) -> f64 {
    if r / 2.0 <= eps {
        c * r * r
    } else {
        c * r
    }
}

/// Interior cells used for residuals: B(0, 2 - 3h).
fn residual_mask(g: Grid) -> Mask {
    g.disk_mask(0.0, 0.0, DOMAIN_RADIUS - 3.0 * g.h())
}

/// L = α ∘ Ψ with α conformal from Ψ(B₂) onto B₂, α(Ψ(0)) = 0, rotation
/// fixed by zero mean boundary argument displacement. Also builds L⁻¹.
pub fn renormalize_to_disk(psi: &ComplexField, mu: &ComplexField) -> Result<QCMap> {
    let g = psi.grid;
    let map = conformal_near_disk(psi)?;
    let mut values = vec![ZERO; g.len()];
    let mut failed = 0;
    let mut total = 0;
    for i in 0..g.len() {
        let z = g.center_z(i);
        let inside = z.norm() <= DOMAIN_RADIUS;
        // outside B₂ the map is continued radially from the boundary
        let (w, scale) = if inside {
            (psi.values[i], 1.0)
        } else {
            let b = z * (DOMAIN_RADIUS / z.norm());
            (psi.sample_bilinear(b.re, b.im), z.norm() / DOMAIN_RADIUS)
        };
        match map.invert(w) {
            Some(a) => values[i] = a * scale,
            None => {
                values[i] = z;
                if inside {
                    failed += 1;
                }
            }
        }
        if inside {
            total += 1;
        }
    }
    if failed * 1000 > total {
        return Err(Error::Renormalization(format!("conformal inversion failed on {failed} of {total} cells")));
    }
    let l_fwd = ComplexField { grid: g, values, mask: g.domain_mask() };
    let mu_sup = mu.sup_norm_on(&g.full_mask());
    let residual_beltrami = beltrami_residual(&l_fwd, mu, &residual_mask(g))?;
    let (l_inv, failures) = invert_map(&l_fwd)?;
    let round_trip = round_trip_error(&l_fwd, &l_inv, 4000, 7);
    Ok(QCMap {
        mu: mu.clone(),
        mu_sup,
        k: distortion(mu_sup),
        l_fwd,
        l_inv,
        residual_beltrami,
        r_prime: f64::NAN,
        rotation: map.rotation.arg(),
        round_trip,
        inversion_failures: failures,
    })
}

/// Fraction of interior cells with positive discrete Jacobian |F_z|² - |F_z̄|².
pub fn positive_jacobian_fraction(map: &ComplexField) -> Result<f64> {
    let at = residual_mask(map.grid);
    let f = map.with_mask(at.clone());
    let fz = dz(&f)?;
    let fb = dbar(&f)?;
    let good = at.indices().filter(|&i| fz.values[i].norm_sqr() > fb.values[i].norm_sqr()).count();
    Ok(good as f64 / at.count() as f64)
}

/// L⁻¹ on every cell by Newton iteration on the bilinear interpolant of L,
/// seeded by the nearest forward image. Returns the field and the number of
/// failed cells inside B₂.
pub fn invert_map(l_fwd: &ComplexField) -> Result<(ComplexField, usize)> {
    let g = l_fwd.grid;
    let frac = positive_jacobian_fraction(l_fwd)?;
    if frac < 0.999 {
        return Err(Error::Precondition(format!("map is not orientation preserving on {:.3}% of cells", 100.0 * (1.0 - frac))));
    }
    let h = g.h();
    let mut seed: Vec<Option<(f64, Complex64)>> = vec![None; g.len()];
    for i in 0..g.len() {
        let w = l_fwd.values[i];
        if let Some(j) = g.locate(w.re, w.im) {
            let d = (g.center_z(j) - w).norm();
            if seed[j].map_or(true, |(best, _)| d < best) {
                seed[j] = Some((d, g.center_z(i)));
            }
        }
    }
    let eval = |z: Complex64| l_fwd.sample_bilinear(z.re, z.im);
    let mut values = vec![ZERO; g.len()];
    let mut failed = 0;
    let total = g.domain_mask().count();
    for j in 0..g.len() {
        let w = g.center_z(j);
        let mut z = seed[j].map_or(w, |(_, z)| z);
        let mut r = eval(z) - w;
        let mut ok = r.norm() < 1e-12;
        for _ in 0..40 {
            if ok {
                break;
            }
            let d = 1e-3 * h;
            let fx = (eval(z + d) - eval(z - d)) / (2.0 * d);
            let fy = (eval(z + Complex64::new(0.0, d)) - eval(z - Complex64::new(0.0, d))) / (2.0 * d);
            let det = fx.re * fy.im - fx.im * fy.re;
            if det.abs() < 1e-300 {
                break;
            }
            let step = Complex64::new((fy.im * r.re - fy.re * r.im) / det, (-fx.im * r.re + fx.re * r.im) / det);
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..12 {
                let cand = z - step * t;
                let rc = eval(cand) - w;
                if rc.norm() < r.norm() {
                    z = cand;
                    r = rc;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            ok = r.norm() < 1e-12;
        }
        if !ok && r.norm() > 1e-9 {
            // Newton stalls on kinks between bilinear patches; invert the
            // patches near the last iterate directly
            if let Some(zp) = invert_near(l_fwd, z, w, 4) {
                z = zp;
                r = eval(z) - w;
            }
        }
        values[j] = z;
        if r.norm() > 1e-9 && w.norm() <= DOMAIN_RADIUS {
            failed += 1;
        }
    }
    if failed * 1000 > total {
        return Err(Error::Inversion { failed, total });
    }
    Ok((ComplexField { grid: g, values, mask: g.domain_mask() }, failed))
}

/// Preimage of w under the bilinear interpolant, searched over the patches
/// within `radius` cells of `near`.
fn invert_near(l_fwd: &ComplexField, near: Complex64, w: Complex64, radius: isize) -> Option<Complex64> {
    let g = l_fwd.grid;
    let n = g.n as isize;
    let cx = g.lattice(near.re).floor() as isize;
    let cy = g.lattice(near.im).floor() as isize;
    let mut best: Option<(f64, Complex64)> = None;
    for iy in (cy - radius).max(0)..=(cy + radius).min(n - 2) {
        for ix in (cx - radius).max(0)..=(cx + radius).min(n - 2) {
            let i00 = g.index(ix as usize, iy as usize);
            let v = |k: usize| l_fwd.values[k];
            let a = v(i00);
            let b = v(i00 + 1) - a;
            let c = v(i00 + g.n) - a;
            let d = v(i00 + g.n + 1) - v(i00 + 1) - v(i00 + g.n) + a;
            let (mut s, mut t) = (0.5, 0.5);
            for _ in 0..30 {
                let r = a + b * s + c * t + d * s * t - w;
                let ps = b + d * t;
                let pt = c + d * s;
                let det = ps.re * pt.im - ps.im * pt.re;
                if det.abs() < 1e-300 {
                    break;
                }
                s -= (pt.im * r.re - pt.re * r.im) / det;
                t -= (-ps.im * r.re + ps.re * r.im) / det;
                if !(s.is_finite() && t.is_finite()) || s.abs() > 4.0 || t.abs() > 4.0 {
                    break;
                }
            }
            let inside = (-1e-9..=1.0 + 1e-9).contains(&s) && (-1e-9..=1.0 + 1e-9).contains(&t);
            if !inside {
                continue;
            }
            let err = (a + b * s + c * t + d * s * t - w).norm();
            let z = Complex64::new(g.coord(ix as usize) + s * g.h(), g.coord(iy as usize) + t * g.h());
            if err < 1e-10 && best.map_or(true, |(e, _)| err < e) {
                best = Some((err, z));
            }
        }
    }
    best.map(|(_, z)| z)
}

/// max |L⁻¹(L(z)) - z| over random points of B(0, 1.9).
pub fn round_trip_error(l_fwd: &ComplexField, l_inv: &ComplexField, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let z = Complex64::from_polar(1.9 * rng.gen::<f64>().sqrt(), rng.gen_range(0.0..2.0 * PI));
        let w = l_fwd.sample_bilinear(z.re, z.im);
        let back = l_inv.sample_bilinear(w.re, w.im);
        worst = worst.max((back - z).norm());
    }
    worst
}

/// ‖L⁻¹‖_{L^κ} + ‖D L⁻¹‖_{L^κ} over B(0, 2 - c0) (Frobenius norm of the
/// Jacobian by centered differences).
pub fn inverse_sobolev_norm(l_inv: &ComplexField, kappa: f64, c0: f64) -> Result<f64> {
    let g = l_inv.grid;
    let at = g.disk_mask(0.0, 0.0, DOMAIN_RADIUS - c0);
    let f = l_inv.with_mask(at.clone());
    let re = gradient(&f.re())?;
    let im = gradient(&f.im())?;
    let h2 = g.h() * g.h();
    let mut a = 0.0;
    let mut b = 0.0;
    for i in at.indices() {
        a += l_inv.values[i].norm().powf(kappa);
        let fro = (re.c1[i].powi(2) + re.c2[i].powi(2) + im.c1[i].powi(2) + im.c2[i].powi(2)).sqrt();
        b += fro.powf(kappa);
    }
    Ok((a * h2).powf(1.0 / kappa) + (b * h2).powf(1.0 / kappa))
}

/// (p, ‖D L⁻¹‖_{L^p(B_{2-c0})}) for the given exponents (p = ∞ allowed).
pub fn inverse_gradient_growth(l_inv: &ComplexField, ps: &[f64], c0: f64) -> Result<Vec<(f64, f64)>> {
    let g = l_inv.grid;
    let at = g.disk_mask(0.0, 0.0, DOMAIN_RADIUS - c0);
    let f = l_inv.with_mask(at.clone());
    let re = gradient(&f.re())?;
    let im = gradient(&f.im())?;
    let fro: Vec<f64> = at
        .indices()
        .map(|i| (re.c1[i].powi(2) + re.c2[i].powi(2) + im.c1[i].powi(2) + im.c2[i].powi(2)).sqrt())
        .collect();
    let h2 = g.h() * g.h();
    Ok(ps
        .iter()
        .map(|&p| {
            let v = if p.is_infinite() {
                fro.iter().cloned().fold(0.0, f64::max)
            } else {
                (fro.iter().map(|x| x.powf(p)).sum::<f64>() * h2).powf(1.0 / p)
            };
            (p, v)
        })
        .collect())
}

/// Geometry the distortion checks are measured against.
#[derive(Clone, Debug)]
pub struct MoriInput<'a> {
    pub eps: f64,
    pub c0: f64,
    pub centers: &'a [(f64, f64)],
    /// Radius r of the observation ball and the constant c of r′.
    pub r: f64,
    pub r_prime_c: f64,
    pub pairs: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MoriReport {
    pub pairs: usize,
    pub k: f64,
    pub mori_violations: usize,
    /// min over pairs of |ΔL|/R divided by (1/16)|Δz/R|^K.
    pub lower_slack: f64,
    /// min over pairs of 16|Δz/R|^{1/K} divided by |ΔL|/R.
    pub upper_slack: f64,
    pub lipschitz_pairs: usize,
    pub lipschitz_violations: usize,
    pub disk_violations: usize,
    pub separation_violations: usize,
    pub min_center_separation: f64,
    pub r_prime: f64,
    pub r_prime_ok: bool,
    pub notes: Vec<String>,
}

impl MoriReport {
    pub fn passed(&self) -> bool {
        self.mori_violations == 0
            && self.lipschitz_violations == 0
            && self.disk_violations == 0
            && self.separation_violations == 0
            && self.r_prime_ok
    }
}

pub fn mori_check(map: &QCMap, input: &MoriInput) -> MoriReport {
    mori_check_fwd(&map.l_fwd, map.k, input)
}

/// Distortion checks on a forward map with distortion K, R = 2.
pub fn mori_check_fwd(l: &ComplexField, k: f64, input: &MoriInput) -> MoriReport {
    let g = l.grid;
    let r_big = DOMAIN_RADIUS;
    let reach = DOMAIN_RADIUS - g.h();
    let eval = |z: Complex64| l.sample_bilinear(z.re, z.im);
    let mut rng = ChaCha8Rng::seed_from_u64(input.seed);
    let mut rep = MoriReport {
        pairs: input.pairs,
        k,
        lower_slack: f64::INFINITY,
        upper_slack: f64::INFINITY,
        ..Default::default()
    };
    let point = |rng: &mut ChaCha8Rng| Complex64::from_polar(reach * rng.gen::<f64>().sqrt(), rng.gen_range(0.0..2.0 * PI));
    for _ in 0..input.pairs {
        let (z1, z2) = (point(&mut rng), point(&mut rng));
        let d = (z1 - z2).norm();
        if d == 0.0 {
            continue;
        }
        let dl = (eval(z1) - eval(z2)).norm();
        let lower = (d / r_big).powf(k) / 16.0;
        let upper = 16.0 * (d / r_big).powf(1.0 / k);
        let lo = (dl / r_big) / lower;
        let up = upper / (dl / r_big);
        rep.lower_slack = rep.lower_slack.min(lo);
        rep.upper_slack = rep.upper_slack.min(up);
        if lo < 1.0 || up < 1.0 {
            rep.mori_violations += 1;
            if rep.notes.len() < 8 {
                rep.notes.push(format!("Mori bound fails at {z1:.4} {z2:.4}"));
            }
        }
        if d >= input.eps {
            rep.lipschitz_pairs += 1;
            if dl < d / 32.0 || dl > 32.0 * d {
                rep.lipschitz_violations += 1;
            }
        }
    }
    let images: Vec<Complex64> = input.centers.iter().map(|&(x, y)| eval(Complex64::new(x, y))).collect();
    for (j, &(x, y)) in input.centers.iter().enumerate() {
        let c = Complex64::new(x, y);
        for m in 0..64 {
            let p = c + Complex64::from_polar(input.eps, 2.0 * PI * m as f64 / 64.0);
            if (eval(p) - images[j]).norm() > 32.0 * input.eps {
                rep.disk_violations += 1;
                break;
            }
        }
    }
    let mut min_sep = f64::INFINITY;
    for a in 0..images.len() {
        for b in a + 1..images.len() {
            let d = (images[a] - images[b]).norm();
            min_sep = min_sep.min(d);
            if d < input.c0 * input.eps / 32.0 {
                rep.separation_violations += 1;
            }
        }
    }
    rep.min_center_separation = min_sep;
    rep.r_prime = r_prime(input.r, input.eps, input.r_prime_c);
    let inner = (0..256)
        .map(|m| eval(Complex64::from_polar(input.r / 2.0, 2.0 * PI * m as f64 / 256.0)).norm())
        .fold(f64::INFINITY, f64::min);
    rep.r_prime_ok = inner >= 2.0 * rep.r_prime;
    if !rep.r_prime_ok {
        rep.notes.push(format!("min |L| on |z| = r/2 is {inner:.4e} < 2r' = {:.4e}", 2.0 * rep.r_prime));
    }
    rep
}

/// Beltrami coefficient through the principal solution to the renormalized map.
pub fn build_qc_map(mu: &ComplexField, tol: f64) -> Result<QCMap> {
    let ps = principal_solution(mu, tol)?;
    renormalize_to_disk(&ps.psi, mu)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn coefficient_examples() {
        let g = Grid::new(128).unwrap();
        let dom = g.domain_mask();
        let v = ScalarField::from_fn(g, dom.clone(), |x, y| x + 0.5 * y * y);
        let one = ScalarField::constant(g, dom.clone(), 1.0);
        let mu = beltrami_coefficient(&one, &v, &dom).unwrap();
        assert_eq!(mu.sup_norm(), 0.0);
        let c11 = ScalarField::constant(g, dom.clone(), 1.1);
        let mu = beltrami_coefficient(&c11, &v, &dom).unwrap();
        let expected = 0.21 / 2.21;
        for i in dom.indices() {
            assert!((mu.values[i].norm() - expected).abs() < 1e-12);
        }
        let far = ScalarField::constant(g, dom.clone(), 1e-9);
        assert!(matches!(beltrami_coefficient(&far, &v, &dom), Err(Error::InvalidMultiplier(_))));
        assert!((distortion(0.2) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn principal_solution_identity() {
        let g = Grid::new(64).unwrap();
        let mu = ComplexField::zeros(g, g.full_mask());
        let ps = principal_solution(&mu, 1e-10).unwrap();
        for i in 0..g.len() {
            assert_eq!(ps.psi.values[i], g.center_z(i));
        }
    }

    #[test]
    fn principal_solution_disk_coefficient() {
        let g = Grid::new(512).unwrap();
        let k = 0.2;
        let mut mu = ComplexField::zeros(g, g.full_mask());
        for i in g.disk_mask(0.0, 0.0, 1.0).indices() {
            mu.values[i] = c(k, 0.0);
        }
        let ps = principal_solution(&mu, 1e-10).unwrap();
        let mut err: f64 = 0.0;
        for i in g.domain_mask().indices() {
            let z = g.center_z(i);
            if (z.norm() - 1.0).abs() < 4.0 * g.h() {
                continue;
            }
            let exact = if z.norm() < 1.0 { z + k * z.conj() } else { z + k / z };
            err = err.max((ps.psi.values[i] - exact).norm());
        }
        assert!(err <= 5e-2, "error {err}");
    }

    fn smooth_mu(g: Grid, amp: f64, seed: u64) -> ComplexField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bumps: Vec<(Complex64, f64, Complex64)> = (0..5)
            .map(|_| {
                (
                    Complex64::from_polar(rng.gen_range(0.0..1.4), rng.gen_range(0.0..2.0 * PI)),
                    rng.gen_range(0.2..0.5),
                    Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI)),
                )
            })
            .collect();
        let mut mu = ComplexField::from_fn(g, g.full_mask(), |z| {
            bumps.iter().map(|&(c0, s, ph)| ph * (-(z - c0).norm_sqr() / (s * s)).exp()).sum::<Complex64>()
        });
        let cut = g.disk_mask(0.0, 0.0, 1.9);
        for i in 0..g.len() {
            if !cut.cells[i] {
                mu.values[i] = ZERO;
            }
        }
        let s = mu.sup_norm();
        mu.map(|m| m * (amp / s))
    }

    #[test]
    fn principal_solution_residual() {
        let g = Grid::new(256).unwrap();
        let mu = smooth_mu(g, 0.1, 3);
        let ps = principal_solution(&mu, 1e-10).unwrap();
        let r = beltrami_residual(&ps.psi, &mu, &residual_mask(g)).unwrap();
        assert!(r <= 5e-2, "residual {r}");
        assert!(ps.contraction < 0.2);
    }

    #[test]
    fn renormalize_identity_and_dilation() {
        let g = Grid::new(128).unwrap();
        let mu = ComplexField::zeros(g, g.full_mask());
        let id = ComplexField::from_fn(g, g.full_mask(), |z| z);
        let m = renormalize_to_disk(&id, &mu).unwrap();
        let dom = g.domain_mask();
        let err = dom.indices().map(|i| (m.l_fwd.values[i] - g.center_z(i)).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        assert!(m.rotation.abs() < 1e-12);
        let dil = ComplexField::from_fn(g, g.full_mask(), |z| 1.05 * z);
        let m = renormalize_to_disk(&dil, &mu).unwrap();
        let err = dom.indices().map(|i| (m.l_fwd.values[i] - g.center_z(i)).norm()).fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
        let big = ComplexField::from_fn(g, g.full_mask(), |z| 1.5 * z);
        assert!(matches!(renormalize_to_disk(&big, &mu), Err(Error::Renormalization(_))));
    }

    #[test]
    fn renormalization_is_conformal_and_fixes_origin() {
        let g = Grid::new(256).unwrap();
        let mu = smooth_mu(g, 0.1, 5);
        let ps = principal_solution(&mu, 1e-10).unwrap();
        let m = renormalize_to_disk(&ps.psi, &mu).unwrap();
        assert!(m.apply(c(0.0, 0.0)).norm() <= 2.0 * g.h());
        assert!(m.residual_beltrami <= 5e-2, "{}", m.residual_beltrami);
        assert!(m.round_trip <= 4.0 * g.h(), "{}", m.round_trip);
        // boundary goes to the boundary
        for t in [0.0, 1.0, 2.5, 4.0] {
            let w = m.apply(Complex64::from_polar(2.0, t));
            assert!((w.norm() - 2.0).abs() < 2.0 * g.h(), "{w}");
        }
    }

    #[test]
    fn inverse_of_linear_map() {
        let g = Grid::new(128).unwrap();
        let l = ComplexField::from_fn(g, g.domain_mask(), |z| z + 0.05 * z.conj());
        let (inv, failed) = invert_map(&l).unwrap();
        assert_eq!(failed, 0);
        for i in g.disk_mask(0.0, 0.0, 1.0).indices() {
            let w = g.center_z(i);
            let exact = (w - 0.05 * w.conj()) / (1.0 - 0.0025);
            assert!((inv.values[i] - exact).norm() < 1e-6);
        }
        let id = ComplexField::from_fn(g, g.domain_mask(), |z| z);
        let (inv, _) = invert_map(&id).unwrap();
        for i in g.domain_mask().indices() {
            assert!((inv.values[i] - g.center_z(i)).norm() < 1e-12);
        }
    }

    fn input(centers: &[(f64, f64)]) -> MoriInput<'_> {
        MoriInput { eps: 0.05, c0: 4.0, centers, r: 0.5, r_prime_c: 0.125, pairs: 10_000, seed: 11 }
    }

    #[test]
    fn mori_identity_and_affine() {
        let g = Grid::new(128).unwrap();
        let id = ComplexField::from_fn(g, g.full_mask(), |z| z);
        let rep = mori_check_fwd(&id, 1.0, &input(&[(0.5, 0.5), (-0.5, 0.2)]));
        assert!(rep.passed(), "{rep:?}");
        assert!((rep.lower_slack - 16.0).abs() < 1e-9 && (rep.upper_slack - 16.0).abs() < 1e-9);
        let aff = ComplexField::from_fn(g, g.full_mask(), |z| z + 0.1 * z.conj());
        let rep = mori_check_fwd(&aff, distortion(0.1), &input(&[(0.5, 0.5), (-0.5, 0.2)]));
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn r_prime_branches() {
        assert!((r_prime(0.05, 0.05, 0.125) - 0.125 * 0.0025).abs() < 1e-15);
        assert!((r_prime(0.5, 0.05, 0.125) - 0.125 * 0.5).abs() < 1e-15);
    }
}
