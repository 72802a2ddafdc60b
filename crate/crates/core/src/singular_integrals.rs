//! Cauchy transform T and Beurling transform S of compactly supported grid
//! fields by zero-padded FFT convolution.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field_core::{ComplexField, Grid, DOMAIN_RADIUS};

/// Precomputed spectra on the 2n x 2n padded lattice.
pub struct TransformPlan {
    pub grid: Grid,
    m: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// FFT of h² K(d), K(d) = 1/(π d) with d = z - ζ, K(0) = 0.
    t_hat: Vec<Complex64>,
    /// conj(ξ)/ξ on the padded frequencies, 0 at ξ = 0.
    s_hat: Vec<Complex64>,
}

impl TransformPlan {
    pub fn new(grid: Grid) -> Self {
        Self::with_kernel_origin(grid, Complex64::new(0.0, 0.0))
    }

    /// Plan whose discrete kernel takes `k0` (times h²) at d = 0 instead of 0;
    /// anything but 0 is a corrupted kernel, kept for fault-injection runs.
    pub fn with_kernel_origin(grid: Grid, k0: Complex64) -> Self {
        let n = grid.n;
        let m = 2 * n;
        let h = grid.h();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let wrap = |k: usize| if k < n { k as f64 } else { k as f64 - m as f64 };
        let mut kernel = vec![Complex64::new(0.0, 0.0); m * m];
        for ky in 0..m {
            for kx in 0..m {
                if kx == 0 && ky == 0 {
                    kernel[0] = h * h * k0;
                    continue;
                }
                let d = Complex64::new(wrap(kx) * h, wrap(ky) * h);
                kernel[ky * m + kx] = h * h / (PI * d);
            }
        }
        let mut plan = Self { grid, m, forward, inverse, t_hat: Vec::new(), s_hat: Vec::new() };
        plan.fft2(&mut kernel, false);
        plan.t_hat = kernel;
        plan.s_hat = (0..m * m)
            .map(|i| {
                let xi = Complex64::new(wrap(i % m), wrap(i / m));
                if xi.norm_sqr() == 0.0 {
                    Complex64::new(0.0, 0.0)
                } else {
                    xi.conj() / xi
                }
            })
            .collect();
        plan
    }

    fn fft2(&self, data: &mut [Complex64], inverse: bool) {
        let m = self.m;
        let f = if inverse { &self.inverse } else { &self.forward };
        for row in data.chunks_mut(m) {
            f.process(row);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); m];
        for x in 0..m {
            for y in 0..m {
                col[y] = data[y * m + x];
            }
            f.process(&mut col);
            for y in 0..m {
                data[y * m + x] = col[y];
            }
        }
        if inverse {
            let s = 1.0 / (m * m) as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
    }

    fn padded(&self, w: &ComplexField) -> Result<Vec<Complex64>> {
        self.grid.check_same(&w.grid)?;
        let m = self.m;
        let mut out = vec![Complex64::new(0.0, 0.0); m * m];
        for i in w.mask.indices() {
            let v = w.values[i];
            if v == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (x, y) = self.grid.center(i);
            if x * x + y * y > DOMAIN_RADIUS * DOMAIN_RADIUS {
                return Err(Error::Support(format!("nonzero value at ({x:.4}, {y:.4}) outside B(0,2)")));
            }
            let (ix, iy) = self.grid.cell(i);
            out[iy * m + ix] = v;
        }
        Ok(out)
    }

    fn apply(&self, w: &ComplexField, symbol: &[Complex64]) -> Result<ComplexField> {
        let n = self.grid.n;
        let m = self.m;
        let mut data = self.padded(w)?;
        self.fft2(&mut data, false);
        data.iter_mut().zip(symbol).for_each(|(d, s)| *d *= s);
        self.fft2(&mut data, true);
        let mut values = vec![Complex64::new(0.0, 0.0); n * n];
        for iy in 0..n {
            values[iy * n..(iy + 1) * n].copy_from_slice(&data[iy * m..iy * m + n]);
        }
        Ok(ComplexField { grid: self.grid, values, mask: self.grid.full_mask() })
    }

    /// Tω(z) = -(1/π) Σ ω(ζ)/(ζ - z) h² over the cells of ω's mask.
    pub fn cauchy_t(&self, w: &ComplexField) -> Result<ComplexField> {
        self.apply(w, &self.t_hat)
    }

    /// Sω = ∂_z Tω through the multiplier conj(ξ)/ξ.
    pub fn beurling_s(&self, w: &ComplexField) -> Result<ComplexField> {
        self.apply(w, &self.s_hat)
    }
}

pub fn cauchy_t(w: &ComplexField) -> Result<ComplexField> {
    TransformPlan::new(w.grid).cauchy_t(w)
}

pub fn beurling_s(w: &ComplexField) -> Result<ComplexField> {
    TransformPlan::new(w.grid).beurling_s(w)
}

/// sup over random pairs of cells in β's mask of |β(z₁) - β(z₂)| / |z₁ - z₂|^q.
pub fn holder_bound_check(beta: &ComplexField, q: f64, samples: usize, seed: u64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Precondition(format!("Hölder exponent {q} not in (0,1)")));
    }
    let cells: Vec<usize> = beta.mask.indices().collect();
    if cells.len() < 2 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sup: f64 = 0.0;
    for _ in 0..samples {
        let a = cells[rng.gen_range(0..cells.len())];
        let b = cells[rng.gen_range(0..cells.len())];
        if a == b {
            continue;
        }
        let d = (beta.grid.center_z(a) - beta.grid.center_z(b)).norm();
        sup = sup.max((beta.values[a] - beta.values[b]).norm() / d.powf(q));
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field_core::dbar;
    use crate::field_core::dz;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// -(1/π) ∫_{B(0,1)} dζ/(ζ - z) by Gauss-Legendre in r and a uniform
    /// rule in θ; radial panels split at r = |z| and graded towards it,
    /// where the angular integrand jumps.
    fn disk_transform_quadrature(z: Complex64) -> Complex64 {
        let nodes = [
            (-0.906179845938664, 0.236926885056189),
            (-0.538469310105683, 0.478628670499366),
            (0.0, 0.568888888888889),
            (0.538469310105683, 0.478628670499366),
            (0.906179845938664, 0.236926885056189),
        ];
        let r0 = z.norm().min(1.0);
        let mut pieces: Vec<(f64, f64)> = Vec::new();
        let panels = 40;
        for &(a, b) in &[(0.0, r0), (r0, 1.0)] {
            if b > a {
                for k in 0..panels {
                    // distance from r0 grows like (k/P)^2
                    let t0 = (k as f64 / panels as f64).powi(2);
                    let t1 = ((k + 1) as f64 / panels as f64).powi(2);
                    let (lo, hi) = if a == r0 { (a + (b - a) * t0, a + (b - a) * t1) } else { (b - (b - a) * t1, b - (b - a) * t0) };
                    pieces.push((lo.min(hi), lo.max(hi)));
                }
            }
        }
        let nt = 2000;
        let mut sum = c(0.0, 0.0);
        for (lo, hi) in pieces {
            for &(x, wt) in &nodes {
                let r = 0.5 * (hi + lo) + 0.5 * (hi - lo) * x;
                let mut ang = c(0.0, 0.0);
                for j in 0..nt {
                    let t = 2.0 * PI * (j as f64 + 0.5) / nt as f64;
                    ang += 1.0 / (Complex64::from_polar(r, t) - z);
                }
                sum += ang * (2.0 * PI / nt as f64) * r * wt * 0.5 * (hi - lo);
            }
        }
        -sum / PI
    }

    #[test]
    fn quadrature_oracle_matches_closed_form() {
        for z in [c(0.3, 0.2), c(-0.5, 0.1), c(1.5, -0.4), c(0.0, -1.7)] {
            let closed = if z.norm() < 1.0 { z.conj() } else { 1.0 / z };
            assert!((disk_transform_quadrature(z) - closed).norm() < 1e-3, "{z}");
        }
    }

    #[test]
    fn transform_of_unit_disk() {
        let g = Grid::new(512).unwrap();
        let disk = g.disk_mask(0.0, 0.0, 1.0);
        let w = ComplexField { grid: g, values: vec![c(1.0, 0.0); g.len()], mask: disk };
        let t = cauchy_t(&w).unwrap();
        let mut err: f64 = 0.0;
        for i in g.domain_mask().indices() {
            let z = g.center_z(i);
            if (z.norm() - 1.0).abs() < 4.0 * g.h() {
                continue;
            }
            let exact = if z.norm() < 1.0 { z.conj() } else { 1.0 / z };
            err = err.max((t.values[i] - exact).norm());
        }
        assert!(err <= 2e-2, "max error {err}");
    }

    #[test]
    fn zero_and_support() {
        let g = Grid::new(64).unwrap();
        let zero = ComplexField::zeros(g, g.full_mask());
        let plan = TransformPlan::new(g);
        assert!(plan.cauchy_t(&zero).unwrap().values.iter().all(|v| v.norm() == 0.0));
        assert!(plan.beurling_s(&zero).unwrap().values.iter().all(|v| v.norm() == 0.0));
        let one = ComplexField { grid: g, values: vec![c(1.0, 0.0); g.len()], mask: g.full_mask() };
        assert!(matches!(plan.cauchy_t(&one), Err(Error::Support(_))));
    }

    fn bump(g: Grid, x0: f64, y0: f64, s: f64) -> ComplexField {
        ComplexField::from_fn(g, g.domain_mask(), |z| {
            let d = z - c(x0, y0);
            c(1.0, 0.5) * (-d.norm_sqr() / (s * s)).exp()
        })
    }

    fn dbar_error(n: usize) -> f64 {
        let g = Grid::new(n).unwrap();
        let w = bump(g, 0.2, -0.1, 0.3);
        let t = cauchy_t(&w).unwrap().with_mask(g.domain_mask().erode(2));
        let d = dbar(&t).unwrap();
        let mut err: f64 = 0.0;
        for i in d.mask.indices() {
            err = err.max((d.values[i] - w.values[i]).norm());
        }
        err / w.sup_norm()
    }

    #[test]
    fn dbar_inverts_cauchy_transform() {
        let errs: Vec<f64> = [64, 128, 256, 512].iter().map(|&n| dbar_error(n)).collect();
        assert!(errs[3] <= 5e-2, "{errs:?}");
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "{errs:?}");
        }
    }

    #[test]
    fn beurling_matches_dz_of_cauchy() {
        let g = Grid::new(512).unwrap();
        let w = bump(g, -0.1, 0.3, 0.25);
        let plan = TransformPlan::new(g);
        let s = plan.beurling_s(&w).unwrap();
        let t = plan.cauchy_t(&w).unwrap().with_mask(g.domain_mask().erode(2));
        let fd = dz(&t).unwrap();
        let num: f64 = fd.mask.indices().map(|i| (fd.values[i] - s.values[i]).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = fd.mask.indices().map(|i| s.values[i].norm_sqr()).sum::<f64>().sqrt();
        assert!(num / den <= 5e-2, "relative {}", num / den);
    }

    #[test]
    fn beurling_is_unitary_on_mean_free_bumps() {
        let g = Grid::new(256).unwrap();
        // mean-free so that Sω decays fast and the box captures its energy
        let w = ComplexField::from_fn(g, g.domain_mask(), |z| {
            let d = z - c(0.1, 0.1);
            c(d.re, 0.0) * (-d.norm_sqr() / 0.04).exp()
        });
        let s = beurling_s(&w).unwrap();
        let a = s.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let b = w.values.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        assert!((a / b - 1.0).abs() <= 1e-2, "{}", a / b);
    }

    #[test]
    fn holder_examples() {
        let g = Grid::new(128).unwrap();
        let constant = ComplexField { grid: g, values: vec![c(2.0, -1.0); g.len()], mask: g.domain_mask() };
        assert_eq!(holder_bound_check(&constant, 0.5, 1000, 1).unwrap(), 0.0);
        let q = 0.2;
        let conj = ComplexField::from_fn(g, g.disk_mask(0.0, 0.0, 1.0), |z| z.conj());
        let r = holder_bound_check(&conj, q, 10_000, 2).unwrap();
        assert!(r <= 2f64.powf(1.0 - q) + 1e-12);
        assert!(holder_bound_check(&conj, 1.5, 10, 2).is_err());
    }

    #[test]
    fn linearity() {
        let g = Grid::new(64).unwrap();
        let plan = TransformPlan::new(g);
        let a = bump(g, 0.1, 0.0, 0.4);
        let b = bump(g, -0.5, 0.3, 0.2);
        let k = c(0.3, -1.2);
        let sum = a.zip_map(&b, |x, y| x + k * y);
        for op in [TransformPlan::cauchy_t, TransformPlan::beurling_s] {
            let (ta, tb, ts) = (op(&plan, &a).unwrap(), op(&plan, &b).unwrap(), op(&plan, &sum).unwrap());
            for i in 0..g.len() {
                assert!((ts.values[i] - ta.values[i] - k * tb.values[i]).norm() < 1e-12);
            }
        }
    }
}
