//! The weight ψ_s(z) = -s log|z| + |z|², measured Carleman ratios for ∂̄,
//! absorption of the local and non-local source terms, and the vanishing
//! order harness.
//!
//! Every weighted integral is accumulated in log space: e^{2ψ_s} overflows
//! near the origin long before s reaches the values of interest.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_core::{dbar, gradient, ComplexField, Grid, Mask, ScalarField, VectorField, DOMAIN_RADIUS};
use crate::gauge_stream::{smoothstep, smoothstep_derivative, GaugeBundle};

/// The fields of the gauge chain the checks below read.
#[derive(Clone, Debug)]
pub struct CarlemanFields {
    pub h: ScalarField,
    pub chi_grad: VectorField,
    pub e_h_tilde: ComplexField,
    pub beta: ComplexField,
    pub zeta: ComplexField,
    /// ‖Ŵ‖∞ on B(0,2).
    pub w_hat_sup: f64,
}

impl From<&GaugeBundle> for CarlemanFields {
    fn from(b: &GaugeBundle) -> Self {
        let g = b.transport.h.grid;
        CarlemanFields {
            h: b.transport.h.clone(),
            chi_grad: b.cutoff.grad.clone(),
            e_h_tilde: b.gamma.e_h_tilde.clone(),
            beta: b.zeta.beta.clone(),
            zeta: b.zeta.zeta.clone(),
            w_hat_sup: b.div.w_hat.sup_norm_on(&g.domain_mask()),
        }
    }
}

/// ψ_s at distance r from the origin.
pub fn psi(s: f64, r: f64) -> f64 {
    -s * r.ln() + r * r
}

/// ln Σ_i h² |g_i|^p e^{pψ_s(z_i)} over the cells where `include` holds.
/// Cells with g = 0 contribute nothing; returns -∞ for an empty sum.
pub fn log_weighted(grid: &Grid, s: f64, p: f64, abs_g: impl Fn(usize) -> f64, include: impl Fn(usize) -> bool) -> f64 {
    let lh2 = (grid.h() * grid.h()).ln();
    let mut terms = Vec::new();
    for i in 0..grid.len() {
        if !include(i) {
            continue;
        }
        let g = abs_g(i);
        if g == 0.0 || !g.is_finite() {
            continue;
        }
        let (x, y) = grid.center(i);
        terms.push(p * g.ln() + p * psi(s, x.hypot(y)) + lh2);
    }
    log_sum_exp(&terms)
}

pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// ln(e^a + e^b).
fn log_add(a: f64, b: f64) -> f64 {
    log_sum_exp(&[a, b])
}

/// Measured ∫|y|²e^{2ψ_s} / ∫|∂̄y|²e^{2ψ_s}.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CarlemanRatio {
    pub s: f64,
    pub log_lhs: f64,
    pub log_rhs: f64,
    pub ratio: f64,
}

pub fn carleman_inequality_check(y: &ComplexField, s: f64) -> Result<CarlemanRatio> {
    let g = y.grid;
    let h = g.h();
    for i in 0..g.len() {
        if y.values[i] == Complex64::new(0.0, 0.0) {
            continue;
        }
        let (a, b) = g.center(i);
        let r = a.hypot(b);
        if r < 2.0 * h {
            return Err(Error::Support(format!("y is nonzero at distance {r:.4} from the origin")));
        }
        if r > DOMAIN_RADIUS - 2.0 * h {
            return Err(Error::Support(format!("y is nonzero at radius {r:.4}, on the boundary layer of B(0,2)")));
        }
    }
    let dy = dbar(&y.with_mask(g.full_mask()))?;
    let log_lhs = log_weighted(&g, s, 2.0, |i| y.values[i].norm(), |_| true);
    let log_rhs = log_weighted(&g, s, 2.0, |i| dy.values[i].norm(), |_| true);
    Ok(CarlemanRatio { s, log_lhs, log_rhs, ratio: (log_lhs - log_rhs).exp() })
}

/// Randomized test functions: 3 to 7 Gaussian bumps with complex amplitudes
/// and plane-wave phases, times a smoothstep annulus cutoff that keeps the
/// support away from 0 and from ∂B(0,2).
pub fn carleman_suite(grid: Grid, count: usize, seed: u64) -> Vec<ComplexField> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r_in = rng.gen_range(0.5..0.9);
            let r_out = rng.gen_range(1.3..1.8);
            let d = 0.15;
            let m = rng.gen_range(3..=7);
            let bumps: Vec<(f64, f64, f64, Complex64, f64, f64)> = (0..m)
                .map(|_| {
                    let r = rng.gen_range(r_in..r_out);
                    let t = rng.gen_range(0.0..2.0 * PI);
                    let amp = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    (r * t.cos(), r * t.sin(), rng.gen_range(0.15..0.4), amp, rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0))
                })
                .collect();
            ComplexField::from_fn(grid, grid.full_mask(), |z| {
                let r = z.norm();
                let cut = smoothstep((r - r_in) / d) * (1.0 - smoothstep((r - r_out + d) / d));
                if cut == 0.0 {
                    return Complex64::new(0.0, 0.0);
                }
                let sum: Complex64 = bumps
                    .iter()
                    .map(|&(cx, cy, w, a, kx, ky)| {
                        let q = ((z.re - cx).powi(2) + (z.im - cy).powi(2)) / (w * w);
                        a * (-q).exp() * Complex64::from_polar(1.0, kx * z.re + ky * z.im)
                    })
                    .sum();
                cut * sum
            })
        })
        .collect()
}

/// Supremum of the suite's ratios at one s.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub s: f64,
    pub sup_ratio: f64,
    pub worst: usize,
}

pub fn carleman_sweep(suite: &[ComplexField], s_list: &[f64]) -> Result<Vec<SweepRow>> {
    s_list
        .iter()
        .map(|&s| {
            let mut row = SweepRow { s, sup_ratio: 0.0, worst: 0 };
            for (k, y) in suite.iter().enumerate() {
                let r = carleman_inequality_check(y, s)?.ratio;
                if r > row.sup_ratio {
                    row.sup_ratio = r;
                    row.worst = k;
                }
            }
            Ok(row)
        })
        .collect()
}

/// Largest ratio between consecutive rows of a sweep (s increasing); at
/// most 1.2 when the supremum does not grow with s beyond tolerance.
pub fn sweep_growth(rows: &[SweepRow]) -> f64 {
    rows.windows(2).map(|w| w[1].sup_ratio / w[0].sup_ratio).fold(0.0, f64::max)
}

/// Geometry and constants shared by the absorption checks.
#[derive(Clone, Debug)]
pub struct CarlemanSetup {
    pub s: f64,
    pub eta: ScalarField,
    pub r: f64,
    pub r_prime: f64,
    pub eps: f64,
    pub eps_prime: f64,
    pub c0: f64,
    /// Image centers x′_j.
    pub centers: Vec<(f64, f64)>,
    pub j1: Vec<usize>,
    pub j2: Vec<usize>,
    /// Outer radius of the observation annulus: r′, or 3r′/2 when J₂ ≠ ∅.
    pub obs_outer: f64,
    /// Hölder exponent Q = 2/(2+δ).
    pub q: f64,
    /// The constant C in the boundary quantity and in the absorption bounds.
    pub big_c: f64,
    pub u_sup: f64,
}

/// η = 1 on obs_outer ≤ |x| ≤ 2 - 8c₀, 0 on |x| ≤ r′/2 and |x| ≥ 2 - 4c₀.
pub fn eta_cutoff(grid: Grid, r_prime: f64, obs_outer: f64, c0: f64) -> ScalarField {
    let inner = r_prime / 2.0;
    ScalarField::from_fn(grid, grid.full_mask(), |x, y| {
        let r = x.hypot(y);
        smoothstep((r - inner) / (obs_outer - inner)) * (1.0 - smoothstep((r - (DOMAIN_RADIUS - 8.0 * c0)) / (4.0 * c0)))
    })
}

/// Largest |∇η| from the profile: 15/8 over each transition width.
pub fn eta_gradient_bound(r_prime: f64, obs_outer: f64, c0: f64) -> f64 {
    let d = smoothstep_derivative(0.5);
    (d / (obs_outer - r_prime / 2.0)).max(d / (4.0 * c0))
}

#[allow(clippy::too_many_arguments)]
pub fn carleman_setup(grid: Grid, s: f64, r: f64, r_prime: f64, eps: f64, eps_prime: f64, c0: f64, centers: &[(f64, f64)], q: f64, big_c: f64, u_sup: f64) -> Result<CarlemanSetup> {
    if !(s >= 1.0) {
        return Err(Error::Precondition(format!("s = {s} must be at least 1")));
    }
    // η must vanish on the two cells around the origin that the Carleman
    // check excludes; coarse grids get a larger observation disk
    let r_prime = r_prime.max(6.0 * grid.h());
    if !(r_prime > 0.0 && r_prime < DOMAIN_RADIUS - 8.0 * c0) {
        return Err(Error::Precondition(format!("r′ = {r_prime} leaves no room for η")));
    }
    let mut j1 = Vec::new();
    let mut j2 = Vec::new();
    for (j, &(x, y)) in centers.iter().enumerate() {
        let d = x.hypot(y);
        if d + 10.0 * eps_prime >= DOMAIN_RADIUS - 8.0 * c0 {
            continue;
        }
        if d - 10.0 * eps_prime > r_prime {
            j1.push(j);
        } else {
            j2.push(j);
        }
    }
    let obs_outer = if j2.is_empty() { r_prime } else { 1.5 * r_prime };
    Ok(CarlemanSetup {
        s,
        eta: eta_cutoff(grid, r_prime, obs_outer, c0),
        r,
        r_prime,
        eps,
        eps_prime,
        c0,
        centers: centers.to_vec(),
        j1,
        j2,
        obs_outer,
        q,
        big_c,
        u_sup,
    })
}

impl CarlemanSetup {
    /// ln 𝓑 = ln C + C/ε + 2ψ_s(2 - 16c₀) + 2 ln‖u‖∞.
    pub fn log_boundary(&self) -> f64 {
        self.big_c.ln() + self.big_c / self.eps + 2.0 * psi(self.s, DOMAIN_RADIUS - 16.0 * self.c0) + 2.0 * self.u_sup.ln()
    }

    pub fn with_s(&self, s: f64) -> CarlemanSetup {
        CarlemanSetup { s, ..self.clone() }
    }
}

/// ln ‖ηζe^{ψ_s}‖².
fn log_y_norm(b: &CarlemanFields, st: &CarlemanSetup) -> f64 {
    let g = st.eta.grid;
    log_weighted(&g, st.s, 2.0, |i| st.eta.values[i] * b.zeta.values[i].norm(), |_| true)
}

/// Local-term measurements.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalAbsorption {
    pub pairs: usize,
    /// max over pairs of max(|h(z′)|/|h(z)|, |h(z)|/|h(z′)|).
    pub harnack: f64,
    /// Same for |e^{-β}|.
    pub beta_ratio: f64,
    /// max over pairs of 2(ψ_s(z′) - ψ_s(z)) - 2(|z′|² - |z|²) + 2sε′; at
    /// most 0 when the logarithmic part decays like e^{-2sε′}.
    pub weight_excess: f64,
    /// ln ‖η e^{ψ_s} e^{-β} |∇χ| h‖².
    pub log_term: f64,
    pub log_y: f64,
    pub log_boundary: f64,
    /// ln(¼‖ye^{ψ_s}‖² + 𝓑) - ln(local term).
    pub margin: f64,
    /// ln(¼‖ye^{ψ_s}‖²) - ln(local term), without 𝓑.
    pub margin_without_boundary: f64,
}

fn draw_in_disk(rng: &mut ChaCha8Rng, c: (f64, f64), r_in: f64, r_out: f64) -> (f64, f64) {
    let r = (rng.gen_range(r_in * r_in..r_out * r_out) as f64).sqrt();
    let t = rng.gen_range(0.0..2.0 * PI);
    (c.0 + r * t.cos(), c.1 + r * t.sin())
}

pub fn local_absorption_check(b: &CarlemanFields, st: &CarlemanSetup, seed: u64) -> Result<LocalAbsorption> {
    let g = st.eta.grid;
    let h = &b.h;
    let beta = &b.beta;
    let ep = st.eps_prime;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pairs, mut harnack, mut beta_ratio, mut excess) = (0usize, 1.0f64, 1.0f64, f64::NEG_INFINITY);
    for &j in &st.j1 {
        let c = st.centers[j];
        for _ in 0..4000 {
            if pairs >= 200 * st.j1.len() {
                break;
            }
            let zp = draw_in_disk(&mut rng, c, 0.0, 4.0 * ep);
            let z = draw_in_disk(&mut rng, c, 6.0 * ep, 8.0 * ep);
            let (rp, r) = (zp.0.hypot(zp.1), z.0.hypot(z.1));
            if r > rp - 2.0 * ep || r >= DOMAIN_RADIUS || rp >= DOMAIN_RADIUS {
                continue;
            }
            pairs += 1;
            let (hp, hz) = (h.sample_bilinear(zp.0, zp.1).abs(), h.sample_bilinear(z.0, z.1).abs());
            harnack = harnack.max(hp / hz).max(hz / hp);
            let (bp, bz) = (beta.sample_bilinear(zp.0, zp.1), beta.sample_bilinear(z.0, z.1));
            let lr = (bz.re - bp.re).abs();
            beta_ratio = beta_ratio.max(lr.exp());
            let w = 2.0 * (psi(st.s, rp) - psi(st.s, r)) - 2.0 * (rp * rp - r * r) + 2.0 * st.s * ep;
            excess = excess.max(w);
        }
    }
    if !st.j1.is_empty() && pairs == 0 {
        return Err(Error::Geometry("no admissible (z, z′) pairs around the image disks".into()));
    }
    let grad_chi = &b.chi_grad;
    let log_term = log_weighted(
        &g,
        st.s,
        2.0,
        |i| {
            st.eta.values[i] * (-beta.values[i].re).exp() * grad_chi.c1[i].hypot(grad_chi.c2[i]) * h.values[i].abs()
        },
        |_| true,
    );
    let log_y = log_y_norm(b, st);
    let log_boundary = st.log_boundary();
    let quarter = log_y + 0.25f64.ln();
    Ok(LocalAbsorption {
        pairs,
        harnack,
        beta_ratio,
        weight_excess: excess,
        log_term,
        log_y,
        log_boundary,
        margin: log_add(quarter, log_boundary) - log_term,
        margin_without_boundary: quarter - log_term,
    })
}

/// Non-local-term measurements.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NonlocalAbsorption {
    pub samples: usize,
    /// max over translates of ln|e^{-β(z′)}/e^{-β(z)}| / (‖Ŵ‖∞ t^Q); the
    /// constant C of the exponential growth bound (0 when Ŵ = 0).
    pub beta_growth: f64,
    /// max over translates of ln|e^{-β(z′)}/e^{-β(z)}| + 2(ψ_s(z′) - ψ_s(z)):
    /// the logarithm of the competition that must stay bounded.
    pub competition: f64,
    /// max over translates of 2(ψ_s(z′) - ψ_s(z)) - 2(|z′|² - |z|²) + st;
    /// at most 0 when the weight decays like e^{-st}.
    pub weight_excess: f64,
    /// max_j ‖∇h‖_{L⁴(B(x′_j,4ε′))} ε / ‖h‖_{L∞(B(x′_j,8ε′))}.
    pub gradient_ratio: f64,
    /// ‖∇h‖_{L⁴(C(0,2-16c₀,2-4c₀))} / ‖h‖_{L∞(B(0,2-2c₀))}.
    pub collar_gradient_ratio: f64,
    /// ln ‖η e^{ψ_s} e^{-β} Ẽ_h‖².
    pub log_term: f64,
    pub log_y: f64,
    pub log_boundary: f64,
    pub margin: f64,
    pub margin_without_boundary: f64,
}

pub fn nonlocal_absorption_check(b: &CarlemanFields, st: &CarlemanSetup, seed: u64) -> Result<NonlocalAbsorption> {
    let g = st.eta.grid;
    let beta = &b.beta;
    let h = &b.h;
    let ep = st.eps_prime;
    let w_hat = b.w_hat_sup;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut samples, mut growth, mut competition, mut excess) = (0usize, 0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &j in &st.j1 {
        let c = st.centers[j];
        for _ in 0..64 {
            let z = draw_in_disk(&mut rng, c, 0.0, 4.0 * ep);
            let r = z.0.hypot(z.1);
            if r < ep {
                continue;
            }
            let (ux, uy) = (z.0 / r, z.1 / r);
            let bz = beta.sample_bilinear(z.0, z.1);
            for k in 0..32 {
                let t = ep + (DOMAIN_RADIUS - r - ep) * k as f64 / 32.0;
                let zp = (z.0 + t * ux, z.1 + t * uy);
                let rp = r + t;
                if rp >= DOMAIN_RADIUS - g.h() {
                    break;
                }
                samples += 1;
                let bp = beta.sample_bilinear(zp.0, zp.1);
                let lr = bz.re - bp.re;
                if w_hat > 0.0 {
                    growth = growth.max(lr / (w_hat * t.powf(st.q)));
                }
                let dw = 2.0 * (psi(st.s, rp) - psi(st.s, r));
                competition = competition.max(lr + dw);
                excess = excess.max(dw - 2.0 * (rp * rp - r * r) + st.s * t);
            }
        }
    }
    if !st.j1.is_empty() && samples == 0 {
        return Err(Error::Geometry("no radial translates available from the image disks".into()));
    }
    let grad = gradient(&h.with_mask(g.full_mask()))?;
    let h2 = g.h() * g.h();
    let mut gradient_ratio: f64 = 0.0;
    for &j in &st.j1 {
        let c = st.centers[j];
        let inner = g.disk_mask(c.0, c.1, 4.0 * ep);
        let outer = g.disk_mask(c.0, c.1, 8.0 * ep);
        let l4 = (inner.indices().map(|i| grad.c1[i].hypot(grad.c2[i]).powi(4)).sum::<f64>() * h2).powf(0.25);
        let sup = h.sup_norm_on(&outer);
        if sup > 0.0 {
            gradient_ratio = gradient_ratio.max(l4 * st.eps / sup);
        }
    }
    let collar = g.annulus_mask(0.0, 0.0, DOMAIN_RADIUS - 16.0 * st.c0, DOMAIN_RADIUS - 4.0 * st.c0);
    let l4 = (collar.indices().map(|i| grad.c1[i].hypot(grad.c2[i]).powi(4)).sum::<f64>() * h2).powf(0.25);
    let hs = h.sup_norm_on(&g.disk_mask(0.0, 0.0, DOMAIN_RADIUS - 2.0 * st.c0));
    let collar_gradient_ratio = if hs > 0.0 { l4 / hs } else { 0.0 };
    let eht = &b.e_h_tilde;
    let log_term = log_weighted(&g, st.s, 2.0, |i| st.eta.values[i] * (-beta.values[i].re).exp() * eht.values[i].norm(), |_| true);
    let log_y = log_y_norm(b, st);
    let log_boundary = st.log_boundary();
    let quarter = log_y + 0.25f64.ln();
    Ok(NonlocalAbsorption {
        samples,
        beta_growth: growth,
        competition,
        weight_excess: excess,
        gradient_ratio,
        collar_gradient_ratio,
        log_term,
        log_y,
        log_boundary,
        margin: log_add(quarter, log_boundary) - log_term,
        margin_without_boundary: quarter - log_term,
    })
}

/// sup_{B(c,r)} |u| from a polar lattice of cubic samples plus the grid
/// cells inside the disk.
pub fn disk_sup(u: &ScalarField, c: (f64, f64), r: f64) -> f64 {
    let g = u.grid;
    let n_rad = 24;
    let n_ang = (8.0 * PI * r / g.h()).ceil().max(64.0) as usize;
    let mut best = u.sample_cubic(c.0, c.1).abs();
    for k in 1..=n_rad {
        let rho = r * k as f64 / n_rad as f64;
        for m in 0..n_ang {
            let t = 2.0 * PI * m as f64 / n_ang as f64;
            best = best.max(u.sample_cubic(c.0 + rho * t.cos(), c.1 + rho * t.sin()).abs());
        }
    }
    let inside = g.disk_mask(c.0, c.1, r);
    best.max(u.sup_norm_on(&inside))
}

/// Least-squares slope of ln sup_{B_r}|u| against ln r.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderFit {
    pub radii: Vec<f64>,
    pub log_sup: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

pub fn fit_vanishing_order(u: &ScalarField, c: (f64, f64), radii: &[f64]) -> Result<OrderFit> {
    if radii.len() < 5 {
        return Err(Error::Precondition(format!("{} radii given, at least 5 needed", radii.len())));
    }
    let xs: Vec<f64> = radii.iter().map(|r| r.ln()).collect();
    let ys: Vec<f64> = radii.iter().map(|&r| disk_sup(u, c, r).ln()).collect();
    if ys.iter().any(|y| !y.is_finite()) {
        return Err(Error::Precondition("u vanishes identically on one of the fitting disks".into()));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    Ok(OrderFit { radii: radii.to_vec(), log_sup: ys, slope, intercept: my - slope * mx })
}

/// Geometric ladder of `count` radii from `lo` to `hi`.
pub fn radius_ladder(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| lo * (hi / lo).powf(k as f64 / (count - 1) as f64)).collect()
}

/// C(‖W₁‖^{1+δ} + ‖W₂‖^{1+δ} + ‖V‖^{1/2} log₊^{3/2}‖V‖) + CK + C.
pub fn order_envelope(c: f64, delta: f64, w1: f64, w2: f64, v: f64, k: f64) -> f64 {
    let logp = v.ln().max(0.0);
    c * (w1.powf(1.0 + delta) + w2.powf(1.0 + delta) + v.sqrt() * logp.powf(1.5)) + c * k + c
}

/// One row of the s sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CarlemanRow {
    pub s: f64,
    /// Carleman ratio of y = ηζ.
    pub ratio: f64,
    pub margin_local: f64,
    pub margin_nonlocal: f64,
    /// ln 𝓑.
    pub boundary_b: f64,
    pub fitted_order: f64,
    /// ln RHS - ln LHS of the assembled inequality for ηζ.
    pub assembled_margin: f64,
    /// ln(boundary-layer integral of |ζ|²e^{2ψ_s}) - ln 𝓑, at most 0 when
    /// the boundary term is dominated.
    pub boundary_excess: f64,
    /// Lower bound on ln sup_{B_r}|u| implied by the assembled inequality.
    pub implied_log_sup: f64,
}

impl CarlemanRow {
    pub fn passed(&self) -> bool {
        self.margin_local > 0.0 && self.margin_nonlocal > 0.0 && self.assembled_margin > 0.0 && self.boundary_excess <= 0.0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CarlemanReport {
    pub rows: Vec<CarlemanRow>,
    pub trivial: bool,
    pub r: f64,
    pub r_prime: f64,
    pub j1: usize,
    pub j2: usize,
    pub fit: OrderFit,
    /// ln(sup_{B₂}|u| / sup_{B₁}|u|).
    pub doubling: f64,
    pub envelope: f64,
    /// ln sup_{B_r}|u| measured directly.
    pub measured_log_sup: f64,
    /// Smallest s of the sweep with every margin positive.
    pub smallest_passing_s: Option<f64>,
    pub local: Vec<LocalAbsorption>,
    pub nonlocal: Vec<NonlocalAbsorption>,
}

impl CarlemanReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("s,ratio,margin_local,margin_nonlocal,boundary_B,fitted_order\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6}", r.s, r.ratio, r.margin_local, r.margin_nonlocal, r.boundary_b, r.fitted_order);
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Inputs of the observability harness beyond the gauge bundle.
pub struct Observation<'a> {
    pub u: &'a ScalarField,
    /// x_max and its image L(x_max).
    pub x_max: (f64, f64),
    pub l_x_max: (f64, f64),
    pub radii: Vec<f64>,
    pub delta: f64,
    pub norms: (f64, f64, f64),
    pub envelope_c: f64,
}

pub fn assemble_observability(b: &CarlemanFields, setup: &CarlemanSetup, obs: &Observation, s_list: &[f64], seed: u64) -> Result<CarlemanReport> {
    let g = setup.eta.grid;
    let u = obs.u;
    let fit = fit_vanishing_order(u, (0.0, 0.0), &obs.radii)?;
    let doubling = (disk_sup(u, (0.0, 0.0), 2.0 - g.h()) / disk_sup(u, (0.0, 0.0), 1.0)).ln();
    let (w1, w2, v) = obs.norms;
    let envelope = order_envelope(obs.envelope_c, obs.delta, w1, w2, v, doubling);
    let measured_log_sup = disk_sup(u, (0.0, 0.0), setup.r).ln();
    let rho_max = obs.l_x_max.0.hypot(obs.l_x_max.1);
    let trivial = rho_max < setup.r_prime;
    let u_xmax = u.sample_cubic(obs.x_max.0, obs.x_max.1).abs();
    let zeta = &b.zeta;
    let dz = dbar(&zeta.with_mask(g.full_mask()))?;
    let y = ComplexField { grid: g, values: (0..g.len()).map(|i| setup.eta.values[i] * zeta.values[i]).collect(), mask: g.full_mask() };
    let radius = |i: usize| {
        let (a, c) = g.center(i);
        a.hypot(c)
    };
    let mut rows = Vec::new();
    let mut local = Vec::new();
    let mut nonlocal = Vec::new();
    for &s in s_list {
        let st = setup.with_s(s);
        let ratio = carleman_inequality_check(&y, s)?.ratio;
        let loc = local_absorption_check(b, &st, seed)?;
        let nl = nonlocal_absorption_check(b, &st, seed.wrapping_add(1))?;
        let lb = st.log_boundary();
        let lhs = log_sum_exp(&[
            log_weighted(&g, s, 2.0, |i| st.eta.values[i] * zeta.values[i].norm(), |_| true),
            log_weighted(&g, s, 2.0, |i| st.eta.values[i] * dz.values[i].norm(), |_| true),
            0.5 * log_weighted(&g, s, 4.0, |i| st.eta.values[i] * dz.values[i].norm(), |_| true),
        ]);
        let obs_term = -2.0 * st.r_prime.ln()
            + log_weighted(&g, s, 2.0, |i| zeta.values[i].norm(), |i| {
                let r = radius(i);
                r > st.r_prime / 2.0 && r < st.obs_outer
            });
        let rhs = st.big_c.ln() + log_add(obs_term, lb);
        let layer = log_weighted(&g, s, 2.0, |i| zeta.values[i].norm(), |i| radius(i) >= DOMAIN_RADIUS - 8.0 * st.c0);
        // |ζ(L x_max)|² e^{2ψ(ρ_max)} ≤ C r′⁻² e^{2ψ(r′/2)} |annulus| sup|ζ|², with
        // |ζ| comparable to |u| up to e^{±‖β‖∞} and φ
        let area = PI * (st.obs_outer.powi(2) - (st.r_prime / 2.0).powi(2));
        let beta_sup = b.beta.sup_norm_on(&g.domain_mask());
        let implied_log_sup = if trivial {
            f64::NEG_INFINITY
        } else {
            u_xmax.ln() + psi(s, rho_max) - psi(s, st.r_prime / 2.0) + st.r_prime.ln() - 0.5 * area.ln() - 0.5 * st.big_c.ln() - 2.0 * beta_sup
        };
        rows.push(CarlemanRow {
            s,
            ratio,
            margin_local: loc.margin,
            margin_nonlocal: nl.margin,
            boundary_b: lb,
            fitted_order: fit.slope,
            assembled_margin: rhs - lhs,
            boundary_excess: layer - lb,
            implied_log_sup,
        });
        local.push(loc);
        nonlocal.push(nl);
    }
    let smallest_passing_s = rows.iter().find(|r| r.passed()).map(|r| r.s);
    Ok(CarlemanReport {
        rows,
        trivial,
        r: setup.r,
        r_prime: setup.r_prime,
        j1: setup.j1.len(),
        j2: setup.j2.len(),
        fit,
        doubling,
        envelope,
        measured_log_sup,
        smallest_passing_s,
        local,
        nonlocal,
    })
}

/// The four left-hand terms and the right-hand term of the small-Poincaré
/// Carleman estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SmallPoincareTerms {
    pub eps4_mass: f64,
    pub s2_mass: f64,
    pub eps2_gradient: f64,
    pub s_gradient: f64,
    pub rhs: f64,
    pub ratio: f64,
}

/// Measures ε⁻⁴∫e^{-φ}|u|² + s²∫e^{-φ}|u|² + ε⁻²∫e^{-φ}|∇u|² + s∫e^{-φ}|∇u|²
/// against ∫e^{-φ}|Δu|², all on `mask`.
pub fn small_poincare_carleman_check(mask: &Mask, eps: f64, weight: &ScalarField, s: f64, u: &ScalarField) -> Result<SmallPoincareTerms> {
    let g = u.grid;
    let n = g.n;
    let h = g.h();
    let inner = mask.interior();
    for i in 0..g.len() {
        if u.values[i] != 0.0 && !inner.cells[i] {
            let (x, y) = g.center(i);
            return Err(Error::Support(format!("test function is nonzero at ({x:.4}, {y:.4}), not strictly inside the mask")));
        }
    }
    let lap = |f: &[f64], i: usize| -> f64 {
        let (ix, iy) = g.cell(i);
        if ix == 0 || iy == 0 || ix == n - 1 || iy == n - 1 {
            return 0.0;
        }
        (f[i + 1] + f[i - 1] + f[i + n] + f[i - n] - 4.0 * f[i]) / (h * h)
    };
    for i in inner.indices() {
        if -lap(&weight.values, i) < s * (1.0 - 1e-9) {
            let (x, y) = g.center(i);
            return Err(Error::Weight(format!("-Δφ = {:.4} < s = {s} at ({x:.4}, {y:.4})", -lap(&weight.values, i))));
        }
    }
    let grad = gradient(&u.with_mask(g.full_mask()))?;
    let wmax = mask.indices().map(|i| -weight.values[i]).fold(f64::NEG_INFINITY, f64::max);
    let (mut mass, mut gsq, mut rhs) = (0.0, 0.0, 0.0);
    for i in mask.indices() {
        // e^{-φ} rescaled by its maximum over the mask; the ratio is unchanged
        let w = (-weight.values[i] - wmax).exp() * h * h;
        mass += w * u.values[i] * u.values[i];
        gsq += w * (grad.c1[i].powi(2) + grad.c2[i].powi(2));
        rhs += w * lap(&u.values, i).powi(2);
    }
    let t = SmallPoincareTerms {
        eps4_mass: mass / eps.powi(4),
        s2_mass: s * s * mass,
        eps2_gradient: gsq / (eps * eps),
        s_gradient: s * gsq,
        rhs,
        ratio: 0.0,
    };
    let lhs = t.eps4_mass + t.s2_mass + t.eps2_gradient + t.s_gradient;
    Ok(SmallPoincareTerms { ratio: if rhs > 0.0 { lhs / rhs } else if lhs == 0.0 { 0.0 } else { f64::INFINITY }, ..t })
}

/// Term-by-term small-Poincaré measurements on B(0,ε) with φ = -s|x|² and
/// a radial bump, over a ladder of ε.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DominanceRow {
    pub eps: f64,
    pub terms: SmallPoincareTerms,
    /// The ε⁻⁴ term exceeds both s-weighted terms.
    pub eps4_dominates: bool,
}

pub fn small_poincare_ladder(s: f64, eps_list: &[f64], cells_per_radius: usize) -> Result<Vec<DominanceRow>> {
    eps_list
        .iter()
        .map(|&eps| {
            let n = 2 * ((1.2 * cells_per_radius as f64).ceil() as usize);
            let n = n.max(64) + n.max(64) % 2;
            let g = Grid::with_half_width(n, 1.2 * eps)?;
            let mask = g.disk_mask(0.0, 0.0, eps);
            let weight = ScalarField::from_fn(g, g.full_mask(), |x, y| -s * (x * x + y * y));
            let u = ScalarField::from_fn(g, g.full_mask(), |x, y| {
                let q = 1.0 - (x * x + y * y) / (0.8 * eps).powi(2);
                if q > 0.0 {
                    q.powi(4)
                } else {
                    0.0
                }
            });
            let terms = small_poincare_carleman_check(&mask, eps, &weight, s, &u)?;
            let eps4_dominates = terms.eps4_mass >= terms.s2_mass.max(terms.s_gradient);
            Ok(DominanceRow { eps, terms, eps4_dominates })
        })
        .collect()
}

/// Largest ε of the ladder below which the ε⁻⁴ term dominates at every
/// smaller ε of the ladder.
pub fn dominance_crossover(rows: &[DominanceRow]) -> Option<f64> {
    let mut sorted: Vec<&DominanceRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.eps.partial_cmp(&b.eps).unwrap());
    let mut last = None;
    for r in sorted {
        if r.eps4_dominates {
            last = Some(r.eps);
        } else {
            break;
        }
    }
    last
}
