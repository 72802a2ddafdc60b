//! Nodal-set extraction, the small-circle property of nodal points, the
//! separated disk packing and Dirichlet-Poincaré constants of masks.

use serde::{Deserialize, Serialize};

use crate::elliptic::{Coefficients, LinearProblem};
use crate::error::{Error, Result};
use crate::field_core::{Grid, Mask, ScalarField, DOMAIN_RADIUS};

pub const NODAL_ATOL: f64 = 1e-12;

/// Perforated geometry built around the nodal set of u.
#[derive(Clone, Debug)]
pub struct PerforatedDomain {
    pub eps: f64,
    pub c0: f64,
    pub nodal: Mask,
    pub centers: Vec<(f64, f64)>,
    pub x_max: (f64, f64),
    /// Union of the closed disks B(x_j, ε).
    pub holes: Mask,
    /// B(0,2) minus (Z ∪ holes).
    pub omega: Mask,
    /// B(0,2) minus holes.
    pub omega_prime: Mask,
    pub poincare_sq: f64,
}

/// Structured-text header of a [`PerforatedDomain`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerforatedHeader {
    pub eps: f64,
    pub c0: f64,
    pub x_max: [f64; 2],
    pub poincare_sq: f64,
    pub centers: Vec<[f64; 2]>,
}

impl PerforatedDomain {
    pub fn header(&self) -> PerforatedHeader {
        PerforatedHeader {
            eps: self.eps,
            c0: self.c0,
            x_max: [self.x_max.0, self.x_max.1],
            poincare_sq: self.poincare_sq,
            centers: self.centers.iter().map(|&(x, y)| [x, y]).collect(),
        }
    }
}

/// Cells where u changes sign across a face (the cell of smaller |u| on
/// each such face, the lower index on ties) or |u| < atol ‖u‖∞.
pub fn extract_nodal_set(u: &ScalarField) -> Result<Mask> {
    extract_nodal_set_with(u, NODAL_ATOL)
}

pub fn extract_nodal_set_with(u: &ScalarField, atol: f64) -> Result<Mask> {
    let g = u.grid;
    let n = g.n;
    let sup = u.sup_norm();
    if sup == 0.0 {
        return Err(Error::DegenerateInstance("u vanishes identically".into()));
    }
    let mut z = g.empty_mask();
    for i in u.mask.indices() {
        let ui = u.values[i];
        if ui.abs() < atol * sup {
            z.cells[i] = true;
        }
        let (ix, iy) = g.cell(i);
        let mut face = |j: usize| {
            if !u.mask.cells[j] {
                return;
            }
            let uj = u.values[j];
            if ui * uj < 0.0 {
                let k = if ui.abs() < uj.abs() || (ui.abs() == uj.abs() && i < j) { i } else { j };
                z.cells[k] = true;
            }
        };
        if ix + 1 < n {
            face(i + 1);
        }
        if iy + 1 < n {
            face(i + n);
        }
    }
    Ok(z)
}

/// Outcome of the small-circle check around nodal points.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PEpsReport {
    pub samples: usize,
    pub radii: Vec<f64>,
    pub violations: usize,
    /// Violating (center, radius) with the smallest radius.
    pub worst: Option<([f64; 2], f64)>,
}

impl PEpsReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn ring_offsets(h: f64, rho: f64) -> Vec<(isize, isize)> {
    let m = (rho / h).ceil() as isize + 1;
    let mut out = Vec::new();
    for dy in -m..=m {
        for dx in -m..=m {
            let d = h * ((dx * dx + dy * dy) as f64).sqrt();
            if (d - rho).abs() <= h * std::f64::consts::FRAC_1_SQRT_2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// For nodal cells x0 (at most `max_samples`, evenly strided) and radii on
/// a log grid from 2h to ε, checks that the discrete circle of radius ρ
/// around x0 meets Z or reaches the circle |x| = 2.
pub fn check_p_eps(z: &Mask, eps: f64) -> PEpsReport {
    check_p_eps_with(z, eps, 4000, 8)
}

pub fn check_p_eps_with(z: &Mask, eps: f64, max_samples: usize, n_radii: usize) -> PEpsReport {
    let g = z.grid;
    let h = g.h();
    let lo = 2.0 * h;
    let hi = eps.max(lo * 1.0001);
    let radii: Vec<f64> = (0..n_radii)
        .map(|k| lo * (hi / lo).powf(k as f64 / (n_radii.max(2) - 1) as f64))
        .filter(|&r| r < eps || n_radii == 1)
        .collect();
    let rings: Vec<Vec<(isize, isize)>> = radii.iter().map(|&r| ring_offsets(h, r)).collect();
    let nodal: Vec<usize> = z.indices().collect();
    let stride = (nodal.len() / max_samples.max(1)).max(1);
    let n = g.n as isize;
    let mut report = PEpsReport { samples: 0, radii: radii.clone(), violations: 0, worst: None };
    for &i in nodal.iter().step_by(stride) {
        report.samples += 1;
        let (ix, iy) = g.cell(i);
        let (x0, y0) = g.center(i);
        let r0 = x0.hypot(y0);
        for (k, &rho) in radii.iter().enumerate() {
            if r0 + rho >= DOMAIN_RADIUS - 0.5 * h {
                continue;
            }
            let hit = rings[k].iter().any(|&(dx, dy)| {
                let (jx, jy) = (ix as isize + dx, iy as isize + dy);
                jx >= 0 && jy >= 0 && jx < n && jy < n && z.cells[g.index(jx as usize, jy as usize)]
            });
            if !hit {
                report.violations += 1;
                if report.worst.map_or(true, |(_, r)| rho < r) {
                    report.worst = Some(([x0, y0], rho));
                }
                break;
            }
        }
    }
    report
}

/// Squared Euclidean distance (in cells) from every cell center to the
/// nearest set cell; separable lower-envelope transform.
pub fn distance_transform(mask: &Mask) -> Vec<f64> {
    let g = mask.grid;
    let n = g.n;
    let inf = 1e20;
    let mut d: Vec<f64> = mask.cells.iter().map(|&b| if b { 0.0 } else { inf }).collect();
    let mut f = vec![0.0; n];
    let mut out = vec![0.0; n];
    for iy in 0..n {
        f.copy_from_slice(&d[iy * n..(iy + 1) * n]);
        edt_1d(&f, &mut out);
        d[iy * n..(iy + 1) * n].copy_from_slice(&out);
    }
    for ix in 0..n {
        for iy in 0..n {
            f[iy] = d[iy * n + ix];
        }
        edt_1d(&f, &mut out);
        for iy in 0..n {
            d[iy * n + ix] = out[iy];
        }
    }
    d
}

fn edt_1d(f: &[f64], d: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let meet = |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let mut s = meet(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = meet(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = (q as f64 - p as f64).powi(2) + f[p];
    }
}

/// Center of the cell maximizing |u| over the closed unit disk.
pub fn find_x_max(u: &ScalarField) -> (f64, f64) {
    let g = u.grid;
    let b1 = g.disk_mask(0.0, 0.0, 1.0);
    let best = b1.indices().max_by(|&a, &b| u.values[a].abs().total_cmp(&u.values[b].abs())).unwrap_or(0);
    g.center(best)
}

/// Hexagonal candidate lattice of the given pitch through the origin,
/// row-major from the bottom-left.
pub fn hexagonal_candidates(pitch: f64) -> Vec<(f64, f64)> {
    let dy = pitch * 3f64.sqrt() / 2.0;
    let rows = (DOMAIN_RADIUS / dy).ceil() as i64 + 1;
    let cols = (DOMAIN_RADIUS / pitch).ceil() as i64 + 1;
    let mut out = Vec::new();
    for j in -rows..=rows {
        let shift = if j.rem_euclid(2) == 1 { 0.5 * pitch } else { 0.0 };
        for i in -cols - 1..=cols {
            let x = i as f64 * pitch + shift;
            let y = j as f64 * dy;
            if x.hypot(y) < DOMAIN_RADIUS {
                out.push((x, y));
            }
        }
    }
    out
}

/// Greedy separated packing of disks of radius ε; see [`PerforatedDomain`].
pub fn perforate(z: &Mask, u: &ScalarField, eps: f64, c0: f64) -> Result<PerforatedDomain> {
    if !(eps > 0.0 && c0 > 0.0) || eps * c0 >= 0.25 {
        return Err(Error::Precondition(format!("eps*C0 = {} must lie in (0, 1/4)", eps * c0)));
    }
    let g = u.grid;
    let h = g.h();
    let sep = c0 * eps;
    let x_max = find_x_max(u);
    let dz2 = distance_transform(z);
    let has_z = !z.is_empty();
    let dist_z = |x: f64, y: f64| -> f64 {
        if !has_z {
            return f64::INFINITY;
        }
        // nearest lattice cell plus its own distance; exact up to h/√2
        match g.locate(x, y) {
            Some(i) => (dz2[i].sqrt() * h - h * std::f64::consts::FRAC_1_SQRT_2).max(0.0),
            None => 0.0,
        }
    };
    let mut centers: Vec<(f64, f64)> = Vec::new();
    for (x, y) in hexagonal_candidates(3.0 * sep) {
        let r = x.hypot(y);
        let ok = DOMAIN_RADIUS - r - eps >= sep
            && r - eps >= sep
            && (x - x_max.0).hypot(y - x_max.1) - eps >= sep
            && dist_z(x, y) - eps >= sep
            && centers.iter().all(|&(cx, cy)| (x - cx).hypot(y - cy) - 2.0 * eps >= sep);
        if ok {
            centers.push((x, y));
        }
    }
    let domain = g.domain_mask();
    let holes = disks_mask(&g, &centers, eps);
    let omega_prime = domain.minus(&holes);
    let omega = omega_prime.minus(z);
    // net property
    let net = 6.0 * sep;
    let mut worst = (0.0, 0.0, 0.0);
    for i in domain.indices() {
        let (x, y) = g.center(i);
        let mut d = (DOMAIN_RADIUS - x.hypot(y)).max(0.0);
        if has_z {
            d = d.min(dz2[i].sqrt() * h);
        }
        for &(cx, cy) in &centers {
            d = d.min(((x - cx).hypot(y - cy) - eps).max(0.0));
        }
        if d > worst.2 {
            worst = (x, y, d);
        }
    }
    if worst.2 > net {
        return Err(Error::PackingFailure { x: worst.0, y: worst.1, distance: worst.2, net });
    }
    let poincare_sq = poincare_constant(&omega)?;
    Ok(PerforatedDomain { eps, c0, nodal: z.clone(), centers, x_max, holes, omega, omega_prime, poincare_sq })
}

pub fn disks_mask(g: &Grid, centers: &[(f64, f64)], radius: f64) -> Mask {
    let mut m = g.empty_mask();
    for &(cx, cy) in centers {
        m = m.or(&g.disk_mask(cx, cy, radius));
    }
    m
}

/// Violations of the separation invariants of a packing (empty when valid).
pub fn separation_violations(dom: &PerforatedDomain) -> Vec<String> {
    let g = dom.nodal.grid;
    let h = g.h();
    let sep = dom.c0 * dom.eps;
    let tol = 1e-12;
    let mut out = Vec::new();
    let dz2 = distance_transform(&dom.nodal);
    for (k, &(x, y)) in dom.centers.iter().enumerate() {
        let r = x.hypot(y);
        if r - dom.eps < sep - tol {
            out.push(format!("disk {k} too close to 0"));
        }
        if DOMAIN_RADIUS - r - dom.eps < sep - tol {
            out.push(format!("disk {k} too close to the outer circle"));
        }
        if (x - dom.x_max.0).hypot(y - dom.x_max.1) - dom.eps < sep - tol {
            out.push(format!("disk {k} too close to x_max"));
        }
        if !dom.nodal.is_empty() {
            if let Some(i) = g.locate(x, y) {
                if dz2[i].sqrt() * h - h - dom.eps < sep - tol {
                    out.push(format!("disk {k} too close to Z"));
                }
            }
        }
        for (l, &(a, b)) in dom.centers.iter().enumerate().skip(k + 1) {
            if (x - a).hypot(y - b) - 2.0 * dom.eps < sep - tol {
                out.push(format!("disks {k} and {l} too close"));
            }
        }
    }
    out
}

const EIG_TOL: f64 = 1e-8;
const EIG_MAX_ITER: usize = 400;
// Rayleigh quotients stop improving near the inner CG tolerance; a run that
// ends inside this floor is accepted.
const EIG_NOISE_FLOOR: f64 = 1e-6;

/// 1/λ1 for the five-point Dirichlet Laplacian on the mask (cells off the
/// mask are zero). The operator decouples over 4-connected components, so
/// λ1 is the minimum over components; components whose Faber-Krahn bound
/// already exceeds the best λ found are skipped. Each component uses
/// inverse power iteration with CG inner solves.
pub fn poincare_constant(mask: &Mask) -> Result<f64> {
    dirichlet_ground_state(mask).map(|(lambda, _)| 1.0 / lambda)
}

/// Smallest Dirichlet eigenvalue of the mask and a unit-L2 (discrete sum)
/// nonnegative eigenvector supported on the minimizing component.
pub fn dirichlet_ground_state(mask: &Mask) -> Result<(f64, ScalarField)> {
    let g = mask.grid;
    let active = strip_frame(mask);
    if active.is_empty() {
        return Err(Error::EmptyMask("Poincaré constant of an empty mask".into()));
    }
    let mut comps = components(&active);
    comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let h2 = g.h() * g.h();
    let fk = std::f64::consts::PI * 2.404825557695773f64.powi(2);
    let mut best = f64::INFINITY;
    let mut best_vec = vec![0.0; g.len()];
    for comp in comps {
        // five-point eigenvalues sit slightly below the continuum ones;
        // keep a safety factor on the bound
        if 0.5 * fk / (comp.len() as f64 * h2) >= best {
            continue;
        }
        let mut m = g.empty_mask();
        for &i in &comp {
            m.cells[i] = true;
        }
        let (lambda, v) = lowest_eigenpair(&m)?;
        if lambda < best {
            best = lambda;
            best_vec = v;
        }
    }
    let sign = if best_vec.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    best_vec.iter_mut().for_each(|v| *v *= sign);
    Ok((best, ScalarField { grid: g, values: best_vec, mask: mask.clone() }))
}

/// 4-connected components of a mask, as cell lists.
pub fn components(mask: &Mask) -> Vec<Vec<usize>> {
    let g = mask.grid;
    let n = g.n;
    let mut seen = vec![false; g.len()];
    let mut out = Vec::new();
    for start in mask.indices() {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (ix, iy) = g.cell(i);
            let mut nb = Vec::with_capacity(4);
            if ix > 0 {
                nb.push(i - 1);
            }
            if ix + 1 < n {
                nb.push(i + 1);
            }
            if iy > 0 {
                nb.push(i - n);
            }
            if iy + 1 < n {
                nb.push(i + n);
            }
            for j in nb {
                if mask.cells[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

fn lowest_eigenpair(active: &Mask) -> Result<(f64, Vec<f64>)> {
    let g = active.grid;
    let lp = LinearProblem::assemble(g, active, &Coefficients::default())?;
    let a = &lp.matrix;
    let m = lp.cells.len();
    let mut x = vec![1.0; m];
    let mut y = vec![0.0; m];
    let mut lambda_old = f64::INFINITY;
    let mut change = f64::INFINITY;
    for it in 0..EIG_MAX_ITER {
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= nx);
        y.copy_from_slice(&x);
        lp.solve_symmetric(&x, &mut y, 1e-10)?;
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        y.iter_mut().for_each(|v| *v /= ny);
        let ay = a.mul(&y);
        let lambda = y.iter().zip(&ay).map(|(p, q)| p * q).sum::<f64>();
        change = (lambda - lambda_old).abs() / lambda;
        std::mem::swap(&mut x, &mut y);
        if change <= EIG_TOL && it > 1 {
            return Ok((lambda, lp.scatter(&x, None)));
        }
        lambda_old = lambda;
    }
    if change <= EIG_NOISE_FLOOR {
        let lambda = x.iter().zip(&a.mul(&x)).map(|(p, q)| p * q).sum::<f64>();
        return Ok((lambda, lp.scatter(&x, None)));
    }
    Err(Error::EigenStagnation { iterations: EIG_MAX_ITER, change })
}

pub fn strip_frame(mask: &Mask) -> Mask {
    let g = mask.grid;
    let n = g.n;
    let mut m = mask.clone();
    for i in 0..n {
        for &c in &[g.index(i, 0), g.index(i, n - 1), g.index(0, i), g.index(n - 1, i)] {
            m.cells[c] = false;
        }
    }
    m
}

/// Synthetic nodal-like mask from a level set of a smooth function, used by
/// thin-domain tests.
pub fn level_set_mask(grid: Grid, f: impl Fn(f64, f64) -> f64, thickness: f64) -> Mask {
    grid.mask_from(|x, y| f(x, y).abs() <= thickness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elliptic::{self, Manufactured};
    use std::f64::consts::PI;

    const J01: f64 = 2.404825557695773;

    #[test]
    fn nodal_set_of_re_z_is_one_column() {
        let g = Grid::new(128).unwrap();
        let u = ScalarField::from_fn(g, g.domain_mask(), |x, _| x);
        let z = extract_nodal_set(&u).unwrap();
        for i in z.indices() {
            let (x, _) = g.center(i);
            assert!((x + 0.5 * g.h()).abs() < 1e-12, "nodal cell at x = {x}");
        }
        // every row crossing B(0,2) has exactly one nodal cell
        let rows = (0..g.n).filter(|&iy| (0..g.n).any(|ix| z.cells[g.index(ix, iy)])).count();
        assert_eq!(z.count(), rows);
    }

    #[test]
    fn nodal_set_of_re_z2_is_diagonals() {
        let g = Grid::new(128).unwrap();
        let u = ScalarField::from_fn(g, g.domain_mask(), |x, y| x * x - y * y);
        let z = extract_nodal_set(&u).unwrap();
        assert!(!z.is_empty());
        for i in z.indices() {
            let (x, y) = g.center(i);
            assert!((x.abs() - y.abs()).abs() <= g.h() * 1.01, "({x},{y})");
        }
    }

    #[test]
    fn nodal_set_of_constant_is_empty_and_zero_is_degenerate() {
        let g = Grid::new(64).unwrap();
        let one = ScalarField::constant(g, g.domain_mask(), 1.0);
        assert!(extract_nodal_set(&one).unwrap().is_empty());
        let zero = ScalarField::zeros(g, g.domain_mask());
        assert!(matches!(extract_nodal_set(&zero), Err(Error::DegenerateInstance(_))));
    }

    #[test]
    fn p_eps_on_lines_and_isolated_point() {
        let g = Grid::new(256).unwrap();
        let u = ScalarField::from_fn(g, g.domain_mask(), |x, _| x);
        let z = extract_nodal_set(&u).unwrap();
        let rep = check_p_eps(&z, 0.3);
        assert!(rep.passed(), "{rep:?}");

        let mut iso = g.empty_mask();
        iso.cells[g.index(g.n / 2, g.n / 2)] = true;
        let rep = check_p_eps(&iso, 0.5);
        assert!(!rep.passed());
        let (_, rho) = rep.worst.unwrap();
        assert!((rho - 2.0 * g.h()).abs() < 1e-12, "violation radius {rho}");
    }

    #[test]
    fn p_eps_bessel_nodal_set() {
        let g = Grid::new(256).unwrap();
        let u = Manufactured::Bessel2k5.field(g);
        let z = extract_nodal_set(&u).unwrap();
        let rep = check_p_eps(&z, 0.2);
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let g = Grid::new(64).unwrap();
        let mut m = g.empty_mask();
        for &(ix, iy) in &[(3, 5), (40, 41), (60, 2), (20, 33)] {
            m.cells[g.index(ix, iy)] = true;
        }
        let d = distance_transform(&m);
        for i in 0..g.len() {
            let (ix, iy) = g.cell(i);
            let bf = m
                .indices()
                .map(|j| {
                    let (jx, jy) = g.cell(j);
                    ((ix as f64 - jx as f64).powi(2) + (iy as f64 - jy as f64).powi(2)) as f64
                })
                .fold(f64::INFINITY, f64::min);
            assert_eq!(d[i], bf);
        }
    }

    #[test]
    fn poincare_of_unit_disk() {
        let g = Grid::new(512).unwrap();
        let cp = poincare_constant(&g.disk_mask(0.0, 0.0, 1.0)).unwrap();
        let exact = 1.0 / (J01 * J01);
        assert!((cp / exact - 1.0).abs() < 0.02, "C_P^2 = {cp}, exact {exact}");
    }

    #[test]
    fn poincare_monotone_under_inclusion() {
        let g = Grid::new(128).unwrap();
        let big = g.disk_mask(0.0, 0.0, 1.5);
        let small = big.minus(&g.disk_mask(0.4, 0.0, 0.3));
        assert!(small.is_subset(&big));
        assert!(poincare_constant(&small).unwrap() <= poincare_constant(&big).unwrap());
    }

    #[test]
    fn packing_on_empty_nodal_set() {
        let g = Grid::new(256).unwrap();
        let u = ScalarField::constant(g, g.domain_mask(), 1.0);
        let z = extract_nodal_set(&u).unwrap();
        let eps = 0.05;
        let c0 = 0.2 / eps;
        let dom = perforate(&z, &u, eps, c0).unwrap();
        assert!(separation_violations(&dom).is_empty());
        for &(x, y) in &dom.centers {
            assert!(x.hypot(y) >= 0.2);
            assert!((x - dom.x_max.0).hypot(y - dom.x_max.1) >= 0.2);
        }
        let a = PI * (2.0 - 0.2f64).powi(2);
        let lo = a / (PI * 0.6f64.powi(2)) * 0.5;
        let hi = a / (PI * 0.2f64.powi(2));
        let count = dom.centers.len() as f64;
        assert!(count >= lo && count <= hi, "count {count} outside [{lo}, {hi}]");
        let full = poincare_constant(&g.domain_mask()).unwrap();
        assert!(dom.poincare_sq < full);
    }

    #[test]
    fn packing_respects_nodal_line() {
        let g = Grid::new(256).unwrap();
        let u = ScalarField::from_fn(g, g.domain_mask(), |x, _| x);
        let z = extract_nodal_set(&u).unwrap();
        let dom = perforate(&z, &u, 0.05, 4.0).unwrap();
        for &(x, _) in &dom.centers {
            assert!(x.abs() >= 0.2 + 0.05, "center at x = {x}");
        }
        assert!(separation_violations(&dom).is_empty());
    }

    #[test]
    fn packing_rejects_large_eps() {
        let g = Grid::new(64).unwrap();
        let u = ScalarField::constant(g, g.domain_mask(), 1.0);
        let z = g.empty_mask();
        assert!(matches!(perforate(&z, &u, 0.1, 2.5), Err(Error::Precondition(_))));
    }

    #[test]
    fn perforated_poincare_on_solution() {
        let g = Grid::new(128).unwrap();
        let u = elliptic::solve(&Manufactured::Harmonic3.instance(g, 512), 1e-10).unwrap();
        let z = extract_nodal_set(&u).unwrap();
        let dom = perforate(&z, &u, 0.05, 4.0).unwrap();
        assert!(dom.omega.is_subset(&dom.omega_prime));
        assert!(dom.poincare_sq > 0.0);
    }
}
