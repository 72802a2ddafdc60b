//! Uniform-grid fields over the square [-2.2, 2.2]^2 with cell masks,
//! finite-difference operators, polar resampling, quadrature and the
//! `LLF1` binary dump.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_HALF_WIDTH: f64 = 2.2;
/// Radius of the working disk B(0, 2).
pub const DOMAIN_RADIUS: f64 = 2.0;

/// Cell-centered square lattice. Cell `(ix, iy)` has center
/// `(-half_width + (ix + 1/2) h, -half_width + (iy + 1/2) h)` and lives at
/// index `iy * n + ix`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub half_width: f64,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_half_width(n, DEFAULT_HALF_WIDTH)
    }

    pub fn with_half_width(n: usize, half_width: f64) -> Result<Self> {
        if n < 64 || n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("n = {n} must be even and >= 64")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidGrid(format!("half_width = {half_width}")));
        }
        Ok(Self { n, half_width })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.h()
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n + ix
    }

    #[inline]
    pub fn cell(&self, idx: usize) -> (usize, usize) {
        (idx % self.n, idx / self.n)
    }

    #[inline]
    pub fn center(&self, idx: usize) -> (f64, f64) {
        let (ix, iy) = self.cell(idx);
        (self.coord(ix), self.coord(iy))
    }

    #[inline]
    pub fn center_z(&self, idx: usize) -> Complex64 {
        let (x, y) = self.center(idx);
        Complex64::new(x, y)
    }

    /// Continuous lattice coordinate of `x` (cell centers sit at integers).
    #[inline]
    pub fn lattice(&self, x: f64) -> f64 {
        (x + self.half_width) / self.h() - 0.5
    }

    /// Index of the cell containing `(x, y)`, if inside the square.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let fx = ((x + self.half_width) / self.h()).floor();
        let fy = ((y + self.half_width) / self.h()).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.n as f64 || fy >= self.n as f64 {
            return None;
        }
        Some(self.index(fx as usize, fy as usize))
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "n {} vs {}, half_width {} vs {}",
                self.n, other.n, self.half_width, other.half_width
            )));
        }
        Ok(())
    }

    pub fn full_mask(&self) -> Mask {
        Mask { grid: *self, cells: vec![true; self.len()] }
    }

    pub fn empty_mask(&self) -> Mask {
        Mask { grid: *self, cells: vec![false; self.len()] }
    }

    /// Cells whose center lies in the closed disk B(center, radius).
    pub fn disk_mask(&self, cx: f64, cy: f64, radius: f64) -> Mask {
        self.mask_from(|x, y| (x - cx).hypot(y - cy) <= radius)
    }

    /// Cells whose center lies in the annulus r_in <= |x - c| <= r_out.
    pub fn annulus_mask(&self, cx: f64, cy: f64, r_in: f64, r_out: f64) -> Mask {
        self.mask_from(|x, y| {
            let r = (x - cx).hypot(y - cy);
            r >= r_in && r <= r_out
        })
    }

    /// The working disk B(0, 2).
    pub fn domain_mask(&self) -> Mask {
        self.disk_mask(0.0, 0.0, DOMAIN_RADIUS)
    }

    pub fn mask_from(&self, pred: impl Fn(f64, f64) -> bool) -> Mask {
        let cells = (0..self.len())
            .map(|i| {
                let (x, y) = self.center(i);
                pred(x, y)
            })
            .collect();
        Mask { grid: *self, cells }
    }
}

/// Boolean cell set on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub grid: Grid,
    pub cells: Vec<bool>,
}

impl Mask {
    pub fn from_cells(grid: Grid, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid.len() {
            return Err(Error::GridMismatch(format!("mask has {} cells, grid {}", cells.len(), grid.len())));
        }
        Ok(Self { grid, cells })
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        self.cells[idx]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|&b| b)
    }

    pub fn area(&self) -> f64 {
        self.count() as f64 * self.grid.h() * self.grid.h()
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a || b)
    }

    pub fn minus(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && !b)
    }

    pub fn not(&self) -> Mask {
        Mask { grid: self.grid, cells: self.cells.iter().map(|&b| !b).collect() }
    }

    pub fn is_subset(&self, other: &Mask) -> bool {
        self.cells.iter().zip(&other.cells).all(|(&a, &b)| !a || b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.cells.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| f(a, b)).collect();
        Mask { grid: self.grid, cells }
    }

    /// Cells of the mask whose four face neighbours are all in the mask.
    pub fn interior(&self) -> Mask {
        let g = self.grid;
        let n = g.n;
        let mut cells = vec![false; g.len()];
        for iy in 1..n - 1 {
            for ix in 1..n - 1 {
                let i = g.index(ix, iy);
                cells[i] = self.cells[i]
                    && self.cells[i - 1]
                    && self.cells[i + 1]
                    && self.cells[i - n]
                    && self.cells[i + n];
            }
        }
        Mask { grid: g, cells }
    }

    /// Repeated [`Mask::interior`].
    pub fn erode(&self, layers: usize) -> Mask {
        let mut m = self.clone();
        for _ in 0..layers {
            m = m.interior();
        }
        m
    }
}

/// Real samples per cell.
#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub mask: Mask,
}

/// Complex samples per cell.
#[derive(Clone, Debug)]
pub struct ComplexField {
    pub grid: Grid,
    pub values: Vec<Complex64>,
    pub mask: Mask,
}

/// Two real components per cell.
#[derive(Clone, Debug)]
pub struct VectorField {
    pub grid: Grid,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
    pub mask: Mask,
}

/// Samples on the lattice rho_k = (k + 1/2) rho_max / n_rho,
/// theta_m = 2 pi m / n_theta, stored with k as the slow index.
#[derive(Clone, Debug)]
pub struct PolarField {
    pub n_rho: usize,
    pub n_theta: usize,
    pub rho_max: f64,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>, mask: Mask) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} cells", values.len(), grid.len())));
        }
        grid.check_same(&mask.grid)?;
        Ok(Self { grid, values, mask })
    }

    pub fn from_fn(grid: Grid, mask: Mask, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let (x, y) = grid.center(i);
                f(x, y)
            })
            .collect();
        Self { grid, values, mask }
    }

    pub fn constant(grid: Grid, mask: Mask, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()], mask }
    }

    pub fn zeros(grid: Grid, mask: Mask) -> Self {
        Self::constant(grid, mask, 0.0)
    }

    pub fn with_mask(&self, mask: Mask) -> Self {
        Self { grid: self.grid, values: self.values.clone(), mask }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect(), mask: self.mask.clone() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, values, mask: self.mask.clone() }
    }

    /// Values set to zero off the mask.
    pub fn restricted(&self) -> Self {
        let values = self.values.iter().zip(&self.mask.cells).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        Self { grid: self.grid, values, mask: self.mask.clone() }
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm_on(&self.mask)
    }

    pub fn sup_norm_on(&self, mask: &Mask) -> f64 {
        mask.indices().map(|i| self.values[i].abs()).fold(0.0, f64::max)
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.lp_norm_on(&self.mask, p)
    }

    pub fn lp_norm_on(&self, mask: &Mask, p: f64) -> f64 {
        let h2 = self.grid.h() * self.grid.h();
        let s: f64 = mask.indices().map(|i| self.values[i].abs().powf(p)).sum();
        (s * h2).powf(1.0 / p)
    }

    /// Bilinear interpolation between cell centers, clamped to the lattice.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.grid, x, y, |i| self.values[i])
    }

    /// Tensor cubic Lagrange interpolation (exact on bicubic polynomials).
    pub fn sample_cubic(&self, x: f64, y: f64) -> f64 {
        let g = &self.grid;
        let n = g.n as isize;
        let fx = g.lattice(x);
        let fy = g.lattice(y);
        let bx = (fx.floor() as isize - 1).clamp(0, n - 4);
        let by = (fy.floor() as isize - 1).clamp(0, n - 4);
        let wx = lagrange4(fx - bx as f64);
        let wy = lagrange4(fy - by as f64);
        let mut acc = 0.0;
        for (jy, wyj) in wy.iter().enumerate() {
            let row = (by as usize + jy) * g.n + bx as usize;
            let mut r = 0.0;
            for (jx, wxj) in wx.iter().enumerate() {
                r += wxj * self.values[row + jx];
            }
            acc += wyj * r;
        }
        acc
    }
}

impl ComplexField {
    pub fn new(grid: Grid, values: Vec<Complex64>, mask: Mask) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} values for {} cells", values.len(), grid.len())));
        }
        grid.check_same(&mask.grid)?;
        Ok(Self { grid, values, mask })
    }

    pub fn from_fn(grid: Grid, mask: Mask, f: impl Fn(Complex64) -> Complex64) -> Self {
        let values = (0..grid.len()).map(|i| f(grid.center_z(i))).collect();
        Self { grid, values, mask }
    }

    pub fn zeros(grid: Grid, mask: Mask) -> Self {
        Self { grid, values: vec![Complex64::new(0.0, 0.0); grid.len()], mask }
    }

    pub fn from_real(f: &ScalarField) -> Self {
        Self {
            grid: f.grid,
            values: f.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            mask: f.mask.clone(),
        }
    }

    pub fn with_mask(&self, mask: Mask) -> Self {
        Self { grid: self.grid, values: self.values.clone(), mask }
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect(), mask: self.mask.clone() }
    }

    pub fn zip_map(&self, other: &ComplexField, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self { grid: self.grid, values, mask: self.mask.clone() }
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn re(&self) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| v.re).collect(), mask: self.mask.clone() }
    }

    pub fn im(&self) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| v.im).collect(), mask: self.mask.clone() }
    }

    pub fn restricted(&self) -> Self {
        let zero = Complex64::new(0.0, 0.0);
        let values = self.values.iter().zip(&self.mask.cells).map(|(&v, &m)| if m { v } else { zero }).collect();
        Self { grid: self.grid, values, mask: self.mask.clone() }
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm_on(&self.mask)
    }

    pub fn sup_norm_on(&self, mask: &Mask) -> f64 {
        mask.indices().map(|i| self.values[i].norm()).fold(0.0, f64::max)
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        self.lp_norm_on(&self.mask, p)
    }

    pub fn lp_norm_on(&self, mask: &Mask, p: f64) -> f64 {
        let h2 = self.grid.h() * self.grid.h();
        let s: f64 = mask.indices().map(|i| self.values[i].norm().powf(p)).sum();
        (s * h2).powf(1.0 / p)
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> Complex64 {
        let re = bilinear(&self.grid, x, y, |i| self.values[i].re);
        let im = bilinear(&self.grid, x, y, |i| self.values[i].im);
        Complex64::new(re, im)
    }
}

impl VectorField {
    pub fn new(grid: Grid, c1: Vec<f64>, c2: Vec<f64>, mask: Mask) -> Result<Self> {
        if c1.len() != grid.len() || c2.len() != grid.len() {
            return Err(Error::GridMismatch("component length".into()));
        }
        grid.check_same(&mask.grid)?;
        Ok(Self { grid, c1, c2, mask })
    }

    pub fn from_fn(grid: Grid, mask: Mask, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let (c1, c2) = (0..grid.len())
            .map(|i| {
                let (x, y) = grid.center(i);
                f(x, y)
            })
            .unzip();
        Self { grid, c1, c2, mask }
    }

    pub fn zeros(grid: Grid, mask: Mask) -> Self {
        Self { grid, c1: vec![0.0; grid.len()], c2: vec![0.0; grid.len()], mask }
    }

    pub fn constant(grid: Grid, mask: Mask, a: (f64, f64)) -> Self {
        Self { grid, c1: vec![a.0; grid.len()], c2: vec![a.1; grid.len()], mask }
    }

    /// Pointwise sup of the Euclidean norm on the mask.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm_on(&self.mask)
    }

    pub fn sup_norm_on(&self, mask: &Mask) -> f64 {
        mask.indices().map(|i| self.c1[i].hypot(self.c2[i])).fold(0.0, f64::max)
    }

    pub fn lp_norm_on(&self, mask: &Mask, p: f64) -> f64 {
        let h2 = self.grid.h() * self.grid.h();
        let s: f64 = mask.indices().map(|i| self.c1[i].hypot(self.c2[i]).powf(p)).sum();
        (s * h2).powf(1.0 / p)
    }

    pub fn component(&self, k: usize) -> ScalarField {
        let v = if k == 1 { self.c1.clone() } else { self.c2.clone() };
        ScalarField { grid: self.grid, values: v, mask: self.mask.clone() }
    }

    pub fn scale(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            c1: self.c1.iter().map(|v| a * v).collect(),
            c2: self.c2.iter().map(|v| a * v).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> Self {
        Self {
            grid: self.grid,
            c1: self.c1.iter().zip(&other.c1).map(|(a, b)| a - b).collect(),
            c2: self.c2.iter().zip(&other.c2).map(|(a, b)| a - b).collect(),
            mask: self.mask.clone(),
        }
    }

    pub fn sample_bilinear(&self, x: f64, y: f64) -> (f64, f64) {
        (bilinear(&self.grid, x, y, |i| self.c1[i]), bilinear(&self.grid, x, y, |i| self.c2[i]))
    }
}

impl PolarField {
    pub fn new(n_rho: usize, n_theta: usize, rho_max: f64, values: Vec<f64>) -> Result<Self> {
        check_polar_dims(n_rho, n_theta)?;
        if values.len() != n_rho * n_theta {
            return Err(Error::GridMismatch("polar value count".into()));
        }
        Ok(Self { n_rho, n_theta, rho_max, values })
    }

    pub fn zeros(n_rho: usize, n_theta: usize, rho_max: f64) -> Result<Self> {
        Self::new(n_rho, n_theta, rho_max, vec![0.0; n_rho * n_theta])
    }

    #[inline]
    pub fn d_rho(&self) -> f64 {
        self.rho_max / self.n_rho as f64
    }

    #[inline]
    pub fn d_theta(&self) -> f64 {
        2.0 * PI / self.n_theta as f64
    }

    #[inline]
    pub fn rho(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.d_rho()
    }

    #[inline]
    pub fn theta(&self, m: usize) -> f64 {
        m as f64 * self.d_theta()
    }

    #[inline]
    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.values[k * self.n_theta + m]
    }

    #[inline]
    pub fn set(&mut self, k: usize, m: usize, v: f64) {
        self.values[k * self.n_theta + m] = v;
    }

    /// Bilinear in (rho, theta), periodic in theta, constant beyond the
    /// first and last radial samples.
    pub fn sample(&self, rho: f64, theta: f64) -> f64 {
        let fr = (rho / self.d_rho() - 0.5).clamp(0.0, (self.n_rho - 1) as f64);
        let k0 = (fr.floor() as usize).min(self.n_rho.saturating_sub(2));
        let tr = if self.n_rho > 1 { fr - k0 as f64 } else { 0.0 };
        let k1 = (k0 + 1).min(self.n_rho - 1);
        let ft = theta.rem_euclid(2.0 * PI) / self.d_theta();
        let m0 = (ft.floor() as usize) % self.n_theta;
        let tt = ft - ft.floor();
        let m1 = (m0 + 1) % self.n_theta;
        let a = self.get(k0, m0) * (1.0 - tt) + self.get(k0, m1) * tt;
        let b = self.get(k1, m0) * (1.0 - tt) + self.get(k1, m1) * tt;
        a * (1.0 - tr) + b * tr
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn check_polar_dims(n_rho: usize, n_theta: usize) -> Result<()> {
    if n_theta < 8 || n_theta % 2 != 0 {
        return Err(Error::Parity(format!("n_theta = {n_theta} must be even and >= 8")));
    }
    if n_rho < 2 {
        return Err(Error::InvalidGrid(format!("n_rho = {n_rho}")));
    }
    Ok(())
}

fn lagrange4(t: f64) -> [f64; 4] {
    // nodes 0, 1, 2, 3
    [
        -(t - 1.0) * (t - 2.0) * (t - 3.0) / 6.0,
        t * (t - 2.0) * (t - 3.0) / 2.0,
        -t * (t - 1.0) * (t - 3.0) / 2.0,
        t * (t - 1.0) * (t - 2.0) / 6.0,
    ]
}

#[inline]
fn bilinear(g: &Grid, x: f64, y: f64, v: impl Fn(usize) -> f64) -> f64 {
    let n = g.n;
    let fx = g.lattice(x).clamp(0.0, (n - 1) as f64);
    let fy = g.lattice(y).clamp(0.0, (n - 1) as f64);
    let ix = (fx.floor() as usize).min(n - 2);
    let iy = (fy.floor() as usize).min(n - 2);
    let tx = fx - ix as f64;
    let ty = fy - iy as f64;
    let i00 = g.index(ix, iy);
    let a = v(i00) * (1.0 - tx) + v(i00 + 1) * tx;
    let b = v(i00 + n) * (1.0 - tx) + v(i00 + n + 1) * tx;
    a * (1.0 - ty) + b * ty
}

/// One partial derivative along `axis` (0 = x, 1 = y). Centered where
/// both neighbours are in the mask, second-order one-sided otherwise.
fn partial(grid: &Grid, values: &[f64], mask: &Mask, axis: usize) -> Result<Vec<f64>> {
    let n = grid.n;
    let h = grid.h();
    let stride = if axis == 0 { 1 } else { n };
    let mut out = vec![0.0; grid.len()];
    for idx in mask.indices() {
        let (ix, iy) = grid.cell(idx);
        let pos = if axis == 0 { ix } else { iy };
        let has = |d: isize| -> bool {
            let p = pos as isize + d;
            if p < 0 || p >= n as isize {
                return false;
            }
            mask.cells[(idx as isize + d * stride as isize) as usize]
        };
        let at = |d: isize| values[(idx as isize + d * stride as isize) as usize];
        out[idx] = if has(-1) && has(1) {
            (at(1) - at(-1)) / (2.0 * h)
        } else if has(1) && has(2) {
            (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * h)
        } else if has(-1) && has(-2) {
            (3.0 * at(0) - 4.0 * at(-1) + at(-2)) / (2.0 * h)
        } else {
            return Err(Error::DegenerateStencil { ix, iy, axis });
        };
    }
    Ok(out)
}

fn check_nonempty(mask: &Mask) -> Result<()> {
    if mask.is_empty() {
        return Err(Error::EmptyMask("differential operator on empty mask".into()));
    }
    Ok(())
}

/// (d/dx f, d/dy f) on the mask of `f`.
pub fn gradient(f: &ScalarField) -> Result<VectorField> {
    check_nonempty(&f.mask)?;
    let c1 = partial(&f.grid, &f.values, &f.mask, 0)?;
    let c2 = partial(&f.grid, &f.values, &f.mask, 1)?;
    Ok(VectorField { grid: f.grid, c1, c2, mask: f.mask.clone() })
}

fn complex_partials(f: &ComplexField) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    check_nonempty(&f.mask)?;
    let re: Vec<f64> = f.values.iter().map(|v| v.re).collect();
    let im: Vec<f64> = f.values.iter().map(|v| v.im).collect();
    let rx = partial(&f.grid, &re, &f.mask, 0)?;
    let ry = partial(&f.grid, &re, &f.mask, 1)?;
    let ix = partial(&f.grid, &im, &f.mask, 0)?;
    let iy = partial(&f.grid, &im, &f.mask, 1)?;
    let dx = rx.iter().zip(&ix).map(|(&a, &b)| Complex64::new(a, b)).collect();
    let dy = ry.iter().zip(&iy).map(|(&a, &b)| Complex64::new(a, b)).collect();
    Ok((dx, dy))
}

/// The Cauchy-Riemann operator (1/2)(d/dx + i d/dy).
pub fn dbar(f: &ComplexField) -> Result<ComplexField> {
    let (dx, dy) = complex_partials(f)?;
    let i = Complex64::new(0.0, 1.0);
    let values = dx.iter().zip(&dy).map(|(&a, &b)| 0.5 * (a + i * b)).collect();
    Ok(ComplexField { grid: f.grid, values, mask: f.mask.clone() })
}

/// The conjugate operator (1/2)(d/dx - i d/dy).
pub fn dz(f: &ComplexField) -> Result<ComplexField> {
    let (dx, dy) = complex_partials(f)?;
    let i = Complex64::new(0.0, 1.0);
    let values = dx.iter().zip(&dy).map(|(&a, &b)| 0.5 * (a - i * b)).collect();
    Ok(ComplexField { grid: f.grid, values, mask: f.mask.clone() })
}

/// Bilinear resampling of `f` onto the polar lattice of radius 2.
pub fn to_polar(f: &ScalarField, n_rho: usize, n_theta: usize) -> Result<PolarField> {
    check_polar_dims(n_rho, n_theta)?;
    let mut p = PolarField::zeros(n_rho, n_theta, DOMAIN_RADIUS)?;
    let trig: Vec<(f64, f64)> = (0..n_theta).map(|m| p.theta(m).sin_cos()).collect();
    for k in 0..n_rho {
        let r = p.rho(k);
        for (m, &(s, c)) in trig.iter().enumerate() {
            p.values[k * n_theta + m] = f.sample_bilinear(r * c, r * s);
        }
    }
    Ok(p)
}

/// Bilinear resampling of a polar field back onto the cells of B(0, rho_max).
pub fn from_polar(p: &PolarField, grid: Grid) -> ScalarField {
    let mask = grid.disk_mask(0.0, 0.0, p.rho_max);
    let values = (0..grid.len())
        .map(|i| {
            if !mask.cells[i] {
                return 0.0;
            }
            let (x, y) = grid.center(i);
            p.sample(x.hypot(y), y.atan2(x))
        })
        .collect();
    ScalarField { grid, values, mask }
}

/// Midpoint rule: sum of values times h^2 over the mask.
pub fn integrate(f: &ScalarField) -> f64 {
    let h2 = f.grid.h() * f.grid.h();
    f.mask.indices().map(|i| f.values[i]).sum::<f64>() * h2
}

pub fn integrate_complex(f: &ComplexField) -> Complex64 {
    let h2 = f.grid.h() * f.grid.h();
    f.mask.indices().map(|i| f.values[i]).sum::<Complex64>() * h2
}

/// Any field kind stored in an `LLF1` file.
#[derive(Clone, Debug)]
pub enum AnyField {
    Scalar(ScalarField),
    Complex(ComplexField),
    Vector(VectorField),
}

const MAGIC: &[u8; 4] = b"LLF1";

impl AnyField {
    fn grid(&self) -> Grid {
        match self {
            AnyField::Scalar(f) => f.grid,
            AnyField::Complex(f) => f.grid,
            AnyField::Vector(f) => f.grid,
        }
    }

    fn mask(&self) -> &Mask {
        match self {
            AnyField::Scalar(f) => &f.mask,
            AnyField::Complex(f) => &f.mask,
            AnyField::Vector(f) => &f.mask,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let g = self.grid();
        let kind: u32 = match self {
            AnyField::Scalar(_) => 0,
            AnyField::Complex(_) => 1,
            AnyField::Vector(_) => 2,
        };
        let mut buf = Vec::with_capacity(24 + g.len() * 17);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&kind.to_le_bytes());
        buf.extend_from_slice(&(g.n as u32).to_le_bytes());
        buf.extend_from_slice(&g.half_width.to_le_bytes());
        let mut plane = |vals: &mut dyn Iterator<Item = f64>| {
            for v in vals {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        };
        match self {
            AnyField::Scalar(f) => plane(&mut f.values.iter().copied()),
            AnyField::Complex(f) => {
                plane(&mut f.values.iter().map(|v| v.re));
                plane(&mut f.values.iter().map(|v| v.im));
            }
            AnyField::Vector(f) => {
                plane(&mut f.c1.iter().copied());
                plane(&mut f.c2.iter().copied());
            }
        }
        buf.extend(self.mask().cells.iter().map(|&b| b as u8));
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[0..4] != MAGIC {
            return Err(Error::Format("missing LLF1 magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let kind = u32_at(4);
        let n = u32_at(8) as usize;
        let half_width = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let grid = Grid::with_half_width(n, half_width)?;
        let planes = match kind {
            0 => 1,
            1 | 2 => 2,
            k => return Err(Error::Format(format!("unknown field kind {k}"))),
        };
        let len = grid.len();
        let expected = 20 + planes * len * 8 + len;
        if bytes.len() != expected {
            return Err(Error::Format(format!("expected {expected} bytes, found {}", bytes.len())));
        }
        let plane = |p: usize| -> Vec<f64> {
            let base = 20 + p * len * 8;
            (0..len).map(|i| f64::from_le_bytes(bytes[base + 8 * i..base + 8 * i + 8].try_into().unwrap())).collect()
        };
        let mbase = 20 + planes * len * 8;
        let cells = bytes[mbase..].iter().map(|&b| b != 0).collect();
        let mask = Mask { grid, cells };
        Ok(match kind {
            0 => AnyField::Scalar(ScalarField { grid, values: plane(0), mask }),
            1 => {
                let (re, im) = (plane(0), plane(1));
                let values = re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect();
                AnyField::Complex(ComplexField { grid, values, mask })
            }
            _ => AnyField::Vector(VectorField { grid, c1: plane(0), c2: plane(1), mask }),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Self::read_from(&mut f)
    }
}

impl From<ScalarField> for AnyField {
    fn from(f: ScalarField) -> Self {
        AnyField::Scalar(f)
    }
}

impl From<ComplexField> for AnyField {
    fn from(f: ComplexField) -> Self {
        AnyField::Complex(f)
    }
}

impl From<VectorField> for AnyField {
    fn from(f: VectorField) -> Self {
        AnyField::Vector(f)
    }
}

impl AnyField {
    pub fn into_scalar(self) -> Result<ScalarField> {
        match self {
            AnyField::Scalar(f) => Ok(f),
            _ => Err(Error::Format("expected a scalar field".into())),
        }
    }

    pub fn into_complex(self) -> Result<ComplexField> {
        match self {
            AnyField::Complex(f) => Ok(f),
            _ => Err(Error::Format("expected a complex field".into())),
        }
    }

    pub fn into_vector(self) -> Result<VectorField> {
        match self {
            AnyField::Vector(f) => Ok(f),
            _ => Err(Error::Format("expected a vector field".into())),
        }
    }
}

/// Reads a mask written by [`save_mask`].
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let f = AnyField::load(path)?.into_scalar()?;
    Mask::from_cells(f.grid, f.values.iter().map(|&v| v > 0.5).collect())
}

pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let f = ScalarField { grid: mask.grid, values: mask.cells.iter().map(|&b| b as u8 as f64).collect(), mask: mask.clone() };
    AnyField::Scalar(f).save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_err(a: &[f64], b: &[f64], mask: &Mask) -> f64 {
        mask.indices().map(|i| (a[i] - b[i]).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn grid_rejects_odd_and_small() {
        assert!(Grid::new(63).is_err());
        assert!(Grid::new(65).is_err());
        assert!(Grid::new(32).is_err());
        let g = Grid::new(64).unwrap();
        for i in 0..g.n {
            assert!(g.coord(i).abs() > 1e-12, "origin must never be a cell center");
        }
    }

    #[test]
    fn gradient_of_linear_is_exact() {
        let g = Grid::new(256).unwrap();
        let f = ScalarField::from_fn(g, g.domain_mask(), |x, _| x);
        let d = gradient(&f).unwrap();
        let m = g.domain_mask().interior();
        let e1 = m.indices().map(|i| (d.c1[i] - 1.0).abs()).fold(0.0, f64::max);
        let e2 = m.indices().map(|i| d.c2[i].abs()).fold(0.0, f64::max);
        assert!(e1 < 1e-10 && e2 < 1e-10, "errors {e1} {e2}");
    }

    #[test]
    fn gradient_of_quadratic_is_exact_including_boundary() {
        let g = Grid::new(128).unwrap();
        let f = ScalarField::from_fn(g, g.domain_mask(), |x, y| x * x + y * y);
        let d = gradient(&f).unwrap();
        let ex = ScalarField::from_fn(g, g.domain_mask(), |x, _| 2.0 * x);
        let ey = ScalarField::from_fn(g, g.domain_mask(), |_, y| 2.0 * y);
        assert!(max_err(&d.c1, &ex.values, &f.mask) < 1e-10);
        assert!(max_err(&d.c2, &ey.values, &f.mask) < 1e-10);
    }

    #[test]
    fn gradient_second_order_slope() {
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for n in [128, 256, 512] {
            let g = Grid::new(n).unwrap();
            let mask = g.domain_mask();
            let f = ScalarField::from_fn(g, mask.clone(), |x, y| x.sin() * y.cos());
            let d = gradient(&f).unwrap();
            let inner = g.disk_mask(0.0, 0.0, 1.8);
            let e = inner
                .indices()
                .map(|i| {
                    let (x, y) = g.center(i);
                    (d.c1[i] - x.cos() * y.cos()).abs().max((d.c2[i] + x.sin() * y.sin()).abs())
                })
                .fold(0.0, f64::max);
            errs.push(e);
            hs.push(g.h());
        }
        let slope = (errs[0].ln() - errs[2].ln()) / (hs[0].ln() - hs[2].ln());
        assert!((1.8..=2.2).contains(&slope), "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn degenerate_stencil_is_reported() {
        let g = Grid::new(64).unwrap();
        let mut mask = g.empty_mask();
        mask.cells[g.index(10, 10)] = true;
        mask.cells[g.index(11, 10)] = true;
        let f = ScalarField::zeros(g, mask);
        assert!(matches!(gradient(&f), Err(Error::DegenerateStencil { .. })));
    }

    #[test]
    fn dbar_of_z_and_zbar() {
        let g = Grid::new(256).unwrap();
        let m = g.domain_mask();
        let z = ComplexField::from_fn(g, m.clone(), |z| z);
        let d = dbar(&z).unwrap();
        assert!(d.sup_norm() < 1e-10);
        let zb = ComplexField::from_fn(g, m.clone(), |z| z.conj());
        let d = dbar(&zb).unwrap();
        let e = m.indices().map(|i| (d.values[i] - 1.0).norm()).fold(0.0, f64::max);
        assert!(e < 1e-10);
    }

    #[test]
    fn dbar_of_zbar_squared() {
        let g = Grid::new(256).unwrap();
        let m = g.domain_mask();
        let f = ComplexField::from_fn(g, m.clone(), |z| z.conj() * z.conj());
        let d = dbar(&f).unwrap();
        let e = m.indices().map(|i| (d.values[i] - 2.0 * g.center_z(i).conj()).norm()).fold(0.0, f64::max);
        // quadratic: centered and one-sided differences are exact
        assert!(e < 1e-10, "error {e}");
    }

    #[test]
    fn real_dbar_matches_gradient() {
        let g = Grid::new(64).unwrap();
        let m = g.domain_mask();
        let f = ScalarField::from_fn(g, m.clone(), |x, y| (x * y).sin() + x.exp());
        let gr = gradient(&f).unwrap();
        let d = dbar(&ComplexField::from_real(&f)).unwrap();
        for i in m.indices() {
            assert!((2.0 * d.values[i].re - gr.c1[i]).abs() < 1e-12);
            assert!((2.0 * d.values[i].im - gr.c2[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn polar_of_constant_and_x() {
        let g = Grid::new(512).unwrap();
        let one = ScalarField::constant(g, g.domain_mask(), 1.0);
        let p = to_polar(&one, 64, 64).unwrap();
        assert!(p.values.iter().all(|&v| (v - 1.0).abs() < 1e-14));
        let back = from_polar(&p, g);
        assert!(back.mask.indices().all(|i| (back.values[i] - 1.0).abs() < 1e-14));

        let fx = ScalarField::from_fn(g, g.full_mask(), |x, _| x);
        let p = to_polar(&fx, 1024, 1024).unwrap();
        let mut e: f64 = 0.0;
        for k in 0..p.n_rho {
            for m in 0..p.n_theta {
                e = e.max((p.get(k, m) - p.rho(k) * p.theta(m).cos()).abs());
            }
        }
        assert!(e < 1e-3, "error {e}");
    }

    #[test]
    fn polar_of_radial_bump_is_theta_independent() {
        let g = Grid::new(256).unwrap();
        let f = ScalarField::from_fn(g, g.full_mask(), |x, y| (-(x * x + y * y)).exp());
        let p = to_polar(&f, 32, 64).unwrap();
        // bilinear interpolation of a radial function is not exactly radial;
        // compare with the interpolation error scale h^2.
        let mut var: f64 = 0.0;
        for k in 0..p.n_rho {
            let row = &p.values[k * p.n_theta..(k + 1) * p.n_theta];
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            var = var.max(hi - lo);
        }
        assert!(var < g.h() * g.h(), "theta variation {var}");
        assert!(to_polar(&f, 32, 63).is_err());
    }

    #[test]
    fn polar_round_trip_improves_with_resolution() {
        let mut errs = Vec::new();
        for (n, np) in [(64, 64), (128, 128), (256, 256), (512, 512)] {
            let g = Grid::new(n).unwrap();
            let f = ScalarField::from_fn(g, g.full_mask(), |x, y| (x + 0.5 * y).sin());
            let p = to_polar(&f, np, np).unwrap();
            let back = from_polar(&p, g);
            let inner = g.disk_mask(0.0, 0.0, 1.9);
            errs.push(max_err(&back.values, &f.values, &inner));
        }
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "round-trip errors not decreasing: {errs:?}");
        }
    }

    #[test]
    fn integrate_disks_and_odd_function() {
        let g = Grid::new(256).unwrap();
        let one = ScalarField::constant(g, g.disk_mask(0.0, 0.0, 1.0), 1.0);
        assert!((integrate(&one) / PI - 1.0).abs() < 1e-2);
        let one = ScalarField::constant(g, g.domain_mask(), 1.0);
        assert!((integrate(&one) / (4.0 * PI) - 1.0).abs() < 1e-2);
        let fx = ScalarField::from_fn(g, g.domain_mask(), |x, _| x);
        assert!(integrate(&fx).abs() < 1e-12 * 2.0);
    }

    #[test]
    fn cubic_sampling_reproduces_cubics() {
        let g = Grid::new(64).unwrap();
        let f = ScalarField::from_fn(g, g.full_mask(), |x, y| x * x * x - 3.0 * x * y * y + y);
        for &(x, y) in &[(0.013, -0.021), (1.234, 0.77), (-1.9, 1.1)] {
            let exact = x * x * x - 3.0 * x * y * y + y;
            assert!((f.sample_cubic(x, y) - exact).abs() < 1e-11);
        }
    }

    #[test]
    fn llf1_round_trip() {
        let g = Grid::new(64).unwrap();
        let f = ComplexField::from_fn(g, g.domain_mask(), |z| z * z);
        let mut buf = Vec::new();
        AnyField::Complex(f.clone()).write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"LLF1");
        assert_eq!(buf.len(), 20 + 2 * 8 * g.len() + g.len());
        match AnyField::read_from(&mut buf.as_slice()).unwrap() {
            AnyField::Complex(h) => {
                assert_eq!(h.values, f.values);
                assert_eq!(h.mask, f.mask);
            }
            _ => panic!("wrong kind"),
        }
        buf[0] = b'X';
        assert!(AnyField::read_from(&mut buf.as_slice()).is_err());
    }
}
