//! Real spherical harmonics with the y axis as the primary (polar) axis,
//! circular harmonics, quadrature grids on the sphere and the
//! coefficient <-> function transforms built on them.
//!
//! Conventions, fixed once for the whole crate:
//! * orthonormal real harmonics (the integral of `Y^2` over the sphere is 1),
//!   no Condon-Shortley phase;
//! * colatitude `theta` is measured from `(0, 1, 0)`, longitude `phi` is the
//!   rotation about y with `x = sin(theta) sin(phi)`, `z = sin(theta) cos(phi)`;
//! * `m > 0` carries the `sin(m phi)` branch, `m <= 0` the `cos(m phi)` branch;
//! * coefficients are stored degree-major with `m` ascending inside a degree,
//!   so `(l, m)` lives at flat index `l*l + l + m`.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const FOUR_PI: f64 = 4.0 * PI;

/// Flat index of the `(l, m)` coefficient in the degree-major layout.
#[inline]
pub fn lm_index(l: usize, m: i64) -> usize {
    debug_assert!(m.unsigned_abs() as usize <= l);
    l * l + (l as i64 + m) as usize
}

/// Number of coefficients for degrees `0..=lmax`.
#[inline]
pub fn num_coeffs(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1)
}

// ---------------------------------------------------------------------------
// Direction
// ---------------------------------------------------------------------------

/// A unit vector on the sphere, with angles relative to the +y polar axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    v: [f64; 3],
}

impl Direction {
    pub const Y: Direction = Direction { v: [0.0, 1.0, 0.0] };

    /// Builds a direction from a (not necessarily unit) vector.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n = (x * x + y * y + z * z).sqrt();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::domain(format!(
                "cannot normalize near-zero vector ({x}, {y}, {z})"
            )));
        }
        Ok(Direction {
            v: [x / n, y / n, z / n],
        })
    }

    pub fn from_angles(theta: f64, phi: f64) -> Self {
        let st = theta.sin();
        Direction {
            v: [st * phi.sin(), theta.cos(), st * phi.cos()],
        }
    }

    #[inline]
    pub fn as_array(&self) -> [f64; 3] {
        self.v
    }

    #[inline]
    pub fn x(&self) -> f64 {
        self.v[0]
    }
    #[inline]
    pub fn y(&self) -> f64 {
        self.v[1]
    }
    #[inline]
    pub fn z(&self) -> f64 {
        self.v[2]
    }

    /// Colatitude from +y, in `[0, pi]`.
    #[inline]
    pub fn theta(&self) -> f64 {
        self.v[1].clamp(-1.0, 1.0).acos()
    }

    /// Longitude about y, in `[0, 2*pi)`.
    #[inline]
    pub fn phi(&self) -> f64 {
        let p = self.v[0].atan2(self.v[2]);
        if p < 0.0 {
            p + 2.0 * PI
        } else {
            p
        }
    }

    pub fn dot(&self, other: &Direction) -> f64 {
        self.v[0] * other.v[0] + self.v[1] * other.v[1] + self.v[2] * other.v[2]
    }

    /// Uniformly distributed random direction.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        loop {
            let x: f64 = rng.gen_range(-1.0..1.0);
            let y: f64 = rng.gen_range(-1.0..1.0);
            let z: f64 = rng.gen_range(-1.0..1.0);
            let n2 = x * x + y * y + z * z;
            if n2 > 1e-4 && n2 < 1.0 {
                let n = n2.sqrt();
                return Direction {
                    v: [x / n, y / n, z / n],
                };
            }
        }
    }
}

// ---------------------------------------------------------------------------
// IrrepsCoeffs
// ---------------------------------------------------------------------------

/// A block of spherical-harmonic coefficients: `(lmax+1)^2` rows (degree-major,
/// m ascending) by `channels` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrrepsCoeffs {
    lmax: usize,
    channels: usize,
    data: Array2<f64>,
}

impl IrrepsCoeffs {
    pub fn zeros(lmax: usize, channels: usize) -> Self {
        IrrepsCoeffs {
            lmax,
            channels,
            data: Array2::zeros((num_coeffs(lmax), channels)),
        }
    }

    pub fn from_data(lmax: usize, channels: usize, data: Array2<f64>) -> Result<Self> {
        if data.shape() != [num_coeffs(lmax), channels] {
            return Err(Error::domain(format!(
                "coefficient array has shape {:?}, expected [{}, {}]",
                data.shape(),
                num_coeffs(lmax),
                channels
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("coefficient array contains non-finite entries"));
        }
        Ok(IrrepsCoeffs {
            lmax,
            channels,
            data,
        })
    }

    /// Standard-normal random coefficients, for tests and harnesses.
    pub fn random<R: Rng + ?Sized>(lmax: usize, channels: usize, rng: &mut R) -> Self {
        let mut out = Self::zeros(lmax, channels);
        for v in out.data.iter_mut() {
            *v = crate::rng_normal(rng);
        }
        out
    }

    #[inline]
    pub fn lmax(&self) -> usize {
        self.lmax
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut Array2<f64> {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, l: usize, m: i64, channel: usize) -> f64 {
        self.data[[lm_index(l, m), channel]]
    }

    #[inline]
    pub fn set(&mut self, l: usize, m: i64, channel: usize, value: f64) {
        self.data[[lm_index(l, m), channel]] = value;
    }

    /// Max absolute difference against another block of the same shape.
    pub fn max_abs_diff(&self, other: &IrrepsCoeffs) -> f64 {
        assert_eq!(self.data.shape(), other.data.shape());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Euclidean norm of the degree-`l` sub-block.
    pub fn degree_norm(&self, l: usize) -> f64 {
        let base = l * l;
        let mut acc = 0.0;
        for m in 0..(2 * l + 1) {
            for c in 0..self.channels {
                let v = self.data[[base + m, c]];
                acc += v * v;
            }
        }
        acc.sqrt()
    }
}

// ---------------------------------------------------------------------------
// Associated Legendre / harmonics
// ---------------------------------------------------------------------------

/// All normalized associated Legendre values `P_m^l(theta)` for
/// `0 <= m <= l <= lmax`, indexed by `lm_index(l, m as i64)` of the m >= 0
/// half (entries with m < 0 are unused and left at zero).
///
/// The normalization is the one that makes `Y` orthonormal: the value already
/// contains the sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) factor and the sqrt(2) for
/// m != 0. Stable upward recursion in l; no factorials are formed explicitly.
fn assoc_legendre_table(lmax: usize, theta: f64) -> Vec<f64> {
    let ct = theta.cos();
    let st = theta.sin();
    let mut p = vec![0.0; num_coeffs(lmax)];
    // Diagonal: fully normalized P_m^m.
    let mut pmm = (1.0 / FOUR_PI).sqrt();
    p[0] = pmm;
    for m in 1..=lmax {
        pmm *= ((2 * m + 1) as f64 / (2 * m) as f64).sqrt() * st;
        p[lm_index(m, m as i64)] = pmm;
    }
    // First off-diagonal and the three-term recursion upward in l.
    for m in 0..=lmax {
        if m + 1 <= lmax {
            p[lm_index(m + 1, m as i64)] =
                ((2 * m + 3) as f64).sqrt() * ct * p[lm_index(m, m as i64)];
        }
        for l in (m + 2)..=lmax {
            let lf = l as f64;
            let mf = m as f64;
            let a = ((4.0 * lf * lf - 1.0) / (lf * lf - mf * mf)).sqrt();
            let b = (((lf - 1.0) * (lf - 1.0) - mf * mf) / (4.0 * (lf - 1.0) * (lf - 1.0) - 1.0))
                .sqrt();
            p[lm_index(l, m as i64)] =
                a * (ct * p[lm_index(l - 1, m as i64)] - b * p[lm_index(l - 2, m as i64)]);
        }
    }
    // sqrt(2) for the sin/cos branches with m != 0.
    let sqrt2 = std::f64::consts::SQRT_2;
    for l in 1..=lmax {
        for m in 1..=l {
            p[lm_index(l, m as i64)] *= sqrt2;
        }
    }
    p
}

/// Normalized associated Legendre factor `P_m^l(theta)` of the real harmonics.
pub fn assoc_legendre(l: usize, m: i64, theta: f64) -> Result<f64> {
    if m < 0 || m as usize > l {
        return Err(Error::domain(format!(
            "associated Legendre order m={m} outside [0, l={l}]"
        )));
    }
    let table = assoc_legendre_table(l, theta);
    Ok(table[lm_index(l, m)])
}

/// Circular harmonic `B^(k)_j(phi)`: `sin(k phi)` for `j = 1`, `cos(k phi)`
/// for `j = -1`.
pub fn eval_circular_harmonic(k: usize, j: i32, phi: f64) -> Result<f64> {
    match j {
        1 => Ok((k as f64 * phi).sin()),
        -1 => Ok((k as f64 * phi).cos()),
        _ => Err(Error::domain(format!("circular harmonic branch j={j}, expected +1 or -1"))),
    }
}

/// All real spherical harmonics `Y_m^l(dir)` for `l <= lmax`, degree-major.
pub fn eval_real_sh(lmax: usize, dir: &Direction) -> Vec<f64> {
    let theta = dir.theta();
    let phi = dir.phi();
    let p = assoc_legendre_table(lmax, theta);
    let mut y = vec![0.0; num_coeffs(lmax)];
    // Precompute sin(m phi), cos(m phi) by the angle-addition recurrence.
    let (sp, cp) = (phi.sin(), phi.cos());
    let mut sins = vec![0.0; lmax + 1];
    let mut coss = vec![1.0; lmax + 1];
    for m in 1..=lmax {
        sins[m] = sins[m - 1] * cp + coss[m - 1] * sp;
        coss[m] = coss[m - 1] * cp - sins[m - 1] * sp;
    }
    for l in 0..=lmax {
        y[lm_index(l, 0)] = p[lm_index(l, 0)];
        for m in 1..=l {
            let plm = p[lm_index(l, m as i64)];
            y[lm_index(l, m as i64)] = plm * sins[m];
            y[lm_index(l, -(m as i64))] = plm * coss[m];
        }
    }
    y
}

/// Evaluates `F_x(dir)` per channel.
pub fn sphere_function_eval(x: &IrrepsCoeffs, dir: &Direction) -> Vec<f64> {
    let y = eval_real_sh(x.lmax(), dir);
    let mut out = vec![0.0; x.channels()];
    for (row, &yv) in y.iter().enumerate() {
        if yv == 0.0 {
            continue;
        }
        for c in 0..x.channels() {
            out[c] += x.data()[[row, c]] * yv;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Grids
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    Equiangular,
    GaussLegendre,
    Fibonacci,
}

/// A quadrature point set on the sphere; weights are in steradians and sum
/// to `4 pi`.
#[derive(Debug, Clone)]
pub struct SphereGrid {
    pub kind: GridKind,
    pub points: Vec<Direction>,
    pub weights: Vec<f64>,
}

impl SphereGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Gauss-Legendre nodes and weights on (-1, 1), by Newton iteration.
fn gauss_legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre P_n(x) and its derivative.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        // Recompute derivative at the converged node for the weight.
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Rectangular grid in `(theta, phi)`; `kind` must be `Equiangular` or
/// `GaussLegendre`.
pub fn make_grid_rect(kind: GridKind, n_theta: usize, n_phi: usize) -> Result<SphereGrid> {
    if n_theta == 0 || n_phi == 0 {
        return Err(Error::domain("grid resolution must be at least 1"));
    }
    let mut points = Vec::with_capacity(n_theta * n_phi);
    let mut weights = Vec::with_capacity(n_theta * n_phi);
    let dphi = 2.0 * PI / n_phi as f64;
    match kind {
        GridKind::Equiangular => {
            let dtheta = PI / n_theta as f64;
            for i in 0..n_theta {
                let theta = (i as f64 + 0.5) * dtheta;
                let w = theta.sin() * dtheta * dphi;
                for j in 0..n_phi {
                    points.push(Direction::from_angles(theta, j as f64 * dphi));
                    weights.push(w);
                }
            }
            // Normalize so the unit integrand is exact.
            let total: f64 = weights.iter().sum();
            let scale = FOUR_PI / total;
            for w in weights.iter_mut() {
                *w *= scale;
            }
        }
        GridKind::GaussLegendre => {
            let (nodes, gl_weights) = gauss_legendre_nodes(n_theta);
            for i in 0..n_theta {
                let theta = nodes[i].clamp(-1.0, 1.0).acos();
                let w = gl_weights[i] * dphi;
                for j in 0..n_phi {
                    points.push(Direction::from_angles(theta, j as f64 * dphi));
                    weights.push(w);
                }
            }
        }
        GridKind::Fibonacci => {
            return Err(Error::domain(
                "fibonacci grids take a point count, use make_grid(Fibonacci, n)",
            ));
        }
    }
    Ok(SphereGrid {
        kind,
        points,
        weights,
    })
}

/// Weighted spherical Fibonacci point set around the y axis.
///
/// For even `n` the set is antipodally symmetric (built from n/2 spiral points
/// plus their antipodes), which makes the first moment of the quadrature
/// vanish identically. Weights are discrete Voronoi areas: every node of a
/// dense Gauss-Legendre grid contributes its quadrature weight to the nearest
/// Fibonacci point.
fn fibonacci_grid(n: usize) -> Result<SphereGrid> {
    if n == 0 {
        return Err(Error::domain("fibonacci grid needs at least 1 point"));
    }
    let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut points = Vec::with_capacity(n);
    if n % 2 == 0 {
        let half = n / 2;
        for k in 0..half {
            let y = (2 * k + 1) as f64 / n as f64; // in (0, 1)
            let r = (1.0 - y * y).sqrt();
            let phi = 2.0 * PI * (k as f64 / golden).fract();
            let p = [r * phi.sin(), y, r * phi.cos()];
            points.push(Direction { v: p });
            points.push(Direction {
                v: [-p[0], -p[1], -p[2]],
            });
        }
    } else {
        for k in 0..n {
            let y = 1.0 - (2 * k + 1) as f64 / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = 2.0 * PI * (k as f64 / golden).fract();
            points.push(Direction {
                v: [r * phi.sin(), y, r * phi.cos()],
            });
        }
    }
    // Discrete Voronoi weights from a dense reference grid.
    let dense = make_grid_rect(GridKind::GaussLegendre, 64, 128)?;
    let mut weights = vec![0.0; n];
    for (p, &w) in dense.points.iter().zip(dense.weights.iter()) {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, q) in points.iter().enumerate() {
            let d = p.dot(q);
            if d > best_dot {
                best_dot = d;
                best = i;
            }
        }
        weights[best] += w;
    }
    if n % 2 == 0 {
        // Enforce exact antipodal weight symmetry.
        for k in (0..n).step_by(2) {
            let avg = 0.5 * (weights[k] + weights[k + 1]);
            weights[k] = avg;
            weights[k + 1] = avg;
        }
    }
    let total: f64 = weights.iter().sum();
    let scale = FOUR_PI / total;
    for w in weights.iter_mut() {
        *w *= scale;
    }
    if weights.iter().any(|&w| w <= 0.0) {
        return Err(Error::internal("fibonacci grid produced a non-positive weight"));
    }
    Ok(SphereGrid {
        kind: GridKind::Fibonacci,
        points,
        weights,
    })
}

/// Builds a grid from a single resolution parameter:
/// * equiangular: `resolution x resolution` in `(theta, phi)`;
/// * gauss-legendre: `resolution` polar nodes by `2*resolution - 1` in `phi`,
///   exact for band limits up to `resolution - 1`;
/// * fibonacci: `resolution` points total.
pub fn make_grid(kind: GridKind, resolution: usize) -> Result<SphereGrid> {
    if resolution == 0 {
        return Err(Error::domain("grid resolution must be at least 1"));
    }
    match kind {
        GridKind::Equiangular => make_grid_rect(kind, resolution, resolution),
        GridKind::GaussLegendre => make_grid_rect(kind, resolution, 2 * resolution - 1),
        GridKind::Fibonacci => fibonacci_grid(resolution),
    }
}

// ---------------------------------------------------------------------------
// Transforms
// ---------------------------------------------------------------------------

/// Samples `F_x` on every grid point; rows are points, columns channels.
pub fn sample_on_grid(x: &IrrepsCoeffs, grid: &SphereGrid) -> Array2<f64> {
    let mut out = Array2::zeros((grid.len(), x.channels()));
    for (i, p) in grid.points.iter().enumerate() {
        let vals = sphere_function_eval(x, p);
        for (c, v) in vals.into_iter().enumerate() {
            out[[i, c]] = v;
        }
    }
    out
}

/// Projects per-point samples back onto harmonics up to `lmax` by discrete
/// quadrature: `c_m^l = sum_p w_p Y_m^l(p) f(p)`.
pub fn project_to_coeffs(
    samples: &Array2<f64>,
    grid: &SphereGrid,
    lmax: usize,
) -> Result<IrrepsCoeffs> {
    if samples.nrows() != grid.len() {
        return Err(Error::domain(format!(
            "sample count {} does not match grid size {}",
            samples.nrows(),
            grid.len()
        )));
    }
    let channels = samples.ncols();
    let mut out = IrrepsCoeffs::zeros(lmax, channels);
    for (i, p) in grid.points.iter().enumerate() {
        let y = eval_real_sh(lmax, p);
        let w = grid.weights[i];
        for (row, &yv) in y.iter().enumerate() {
            let wy = w * yv;
            for c in 0..channels {
                out.data_mut()[[row, c]] += wy * samples[[i, c]];
            }
        }
    }
    Ok(out)
}

/// Basis matrix of the grid: entry `(p, lm)` is `Y_lm(point_p)`.
pub fn grid_harmonics(grid: &SphereGrid, lmax: usize) -> Array2<f64> {
    let mut out = Array2::zeros((grid.len(), num_coeffs(lmax)));
    for (i, p) in grid.points.iter().enumerate() {
        let y = eval_real_sh(lmax, p);
        out.row_mut(i).assign(&Array1::from(y));
    }
    out
}
