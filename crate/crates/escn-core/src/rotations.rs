//! 3D rotations and their action on spherical-harmonic coefficients
//! (real Wigner-D block matrices).
//!
//! Wigner blocks are assembled from the Euler factorization about the primary
//! axis, `R = Ry(alpha) Rx(beta) Ry(gamma)`. Rotations about y act on the
//! real basis by closed-form 2x2 rotations in each `(+m, -m)` pair, and the
//! x-axis factor is conjugated into a y-rotation by the fixed involution
//! `J : x <-> y, z -> -z`, whose Wigner blocks are computed once per degree
//! by quadrature and cached.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::sphere::{
    eval_real_sh, make_grid_rect, Direction, GridKind, IrrepsCoeffs,
};

// ---------------------------------------------------------------------------
// RotationMatrix3
// ---------------------------------------------------------------------------

/// A proper rotation of R^3, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotationMatrix3 {
    m: [[f64; 3]; 3],
}

impl RotationMatrix3 {
    pub const IDENTITY: RotationMatrix3 = RotationMatrix3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validates orthogonality and determinant +1 before accepting the matrix.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        let r = RotationMatrix3 { m };
        let rt = r.transpose();
        let prod = r.compose(&rt);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (prod.m[i][j] - expected).abs() > 1e-9 {
                    return Err(Error::domain("matrix is not orthogonal"));
                }
            }
        }
        if (r.det() - 1.0).abs() > 1e-9 {
            return Err(Error::domain("matrix is orthogonal but not a proper rotation"));
        }
        Ok(r)
    }

    /// Rotation about the y axis; maps longitude `phi` to `phi + angle`.
    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix3 {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    /// Rotation about the x axis.
    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        RotationMatrix3 {
            m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        }
    }

    /// Rodrigues formula for a unit axis and an angle.
    pub fn from_axis_angle(axis: &Direction, angle: f64) -> Self {
        let [x, y, z] = axis.as_array();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        RotationMatrix3 {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    /// Haar-uniform random rotation via a normalized quaternion.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let q: [f64; 4] = std::array::from_fn(|_| crate::rng_normal(rng));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        RotationMatrix3 {
            m: [
                [
                    1.0 - 2.0 * (y * y + z * z),
                    2.0 * (x * y - w * z),
                    2.0 * (x * z + w * y),
                ],
                [
                    2.0 * (x * y + w * z),
                    1.0 - 2.0 * (x * x + z * z),
                    2.0 * (y * z - w * x),
                ],
                [
                    2.0 * (x * z - w * y),
                    2.0 * (y * z + w * x),
                    1.0 - 2.0 * (x * x + y * y),
                ],
            ],
        }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.m[i][j]
    }

    pub fn transpose(&self) -> Self {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = self.m[j][i];
            }
        }
        RotationMatrix3 { m: out }
    }

    /// Inverse of a rotation is its transpose.
    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// `self * other` (apply `other` first).
    pub fn compose(&self, other: &RotationMatrix3) -> Self {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    out[i][j] += self.m[i][k] * other.m[k][j];
                }
            }
        }
        RotationMatrix3 { m: out }
    }

    pub fn apply_vec(&self, v: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| {
            self.m[i][0] * v[0] + self.m[i][1] * v[1] + self.m[i][2] * v[2]
        })
    }

    pub fn apply(&self, d: &Direction) -> Direction {
        let v = self.apply_vec(d.as_array());
        // A rotation preserves the norm, so this cannot fail.
        Direction::new(v[0], v[1], v[2]).expect("rotation preserves unit norm")
    }
}

/// The rotation taking `r` to `(0, 1, 0)`, continuous away from `r = -y`.
///
/// Uses the Rodrigues form of the minimal rotation; the antipodal pole falls
/// back to a half-turn about x.
pub fn align_to_y(r: &Direction) -> RotationMatrix3 {
    let [x, y, z] = r.as_array();
    let c = y; // r . yhat
    if (c + 1.0).abs() < 1e-9 {
        return RotationMatrix3::rot_x(std::f64::consts::PI);
    }
    // a = r x yhat = (-z, 0, x); R = I + [a]_x + [a]_x^2 / (1 + c)
    let (ax, az) = (-z, x);
    let k = 1.0 / (1.0 + c);
    RotationMatrix3 {
        m: [
            [1.0 - k * az * az, -az, k * ax * az],
            [az, 1.0 - k * (ax * ax + az * az), -ax],
            [k * ax * az, ax, 1.0 - k * ax * ax],
        ],
    }
}

// ---------------------------------------------------------------------------
// Wigner-D blocks
// ---------------------------------------------------------------------------

/// Real Wigner-D matrices for degrees `0..=lmax`; block `l` is
/// `(2l+1) x (2l+1)` and acts on the degree-`l` coefficients.
#[derive(Debug, Clone)]
pub struct WignerDBlocks {
    lmax: usize,
    blocks: Vec<Array2<f64>>,
}

impl WignerDBlocks {
    #[inline]
    pub fn lmax(&self) -> usize {
        self.lmax
    }

    #[inline]
    pub fn block(&self, l: usize) -> &Array2<f64> {
        &self.blocks[l]
    }

    /// Transpose every block; for orthogonal blocks this is `D(R^-1)`.
    pub fn transposed(&self) -> Self {
        WignerDBlocks {
            lmax: self.lmax,
            blocks: self.blocks.iter().map(|b| b.t().to_owned()).collect(),
        }
    }
}

/// Degree-`l` block of a pure y-rotation by `angle`: each `(+m, -m)` pair
/// mixes through the 2x2 rotation by `m * angle` and m = 0 is fixed.
fn rot_y_block(l: usize, angle: f64) -> Array2<f64> {
    let n = 2 * l + 1;
    let mut d = Array2::zeros((n, n));
    d[[l, l]] = 1.0; // m = 0
    for m in 1..=l {
        let (s, c) = (m as f64 * angle).sin_cos();
        let (ip, im) = (l + m, l - m); // rows of +m and -m
        d[[ip, ip]] = c;
        d[[ip, im]] = s;
        d[[im, ip]] = -s;
        d[[im, im]] = c;
    }
    d
}

/// Applies the sparse y-rotation block on the left: `out = dy_l(angle) * b`.
fn rot_y_block_apply(l: usize, angle: f64, b: &Array2<f64>) -> Array2<f64> {
    let n = 2 * l + 1;
    let mut out = Array2::zeros((n, n));
    for j in 0..n {
        out[[l, j]] = b[[l, j]];
    }
    for m in 1..=l {
        let (s, c) = (m as f64 * angle).sin_cos();
        let (ip, im) = (l + m, l - m);
        for j in 0..n {
            out[[ip, j]] = c * b[[ip, j]] + s * b[[im, j]];
            out[[im, j]] = -s * b[[ip, j]] + c * b[[im, j]];
        }
    }
    out
}

/// The fixed involution `J : x <-> y, z -> -z` used to turn x-rotations into
/// y-rotations. Proper (det +1) and equal to its own inverse.
fn j_rotation() -> RotationMatrix3 {
    RotationMatrix3 {
        m: [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]],
    }
}

/// Wigner block of an arbitrary rotation by direct quadrature:
/// `D[a][b] = sum_p w_p Y_a(R p) Y_b(p)`. Exact when the grid integrates
/// degree `2l`; used only to bootstrap the cached J blocks.
fn wigner_block_by_projection(l: usize, r: &RotationMatrix3) -> Result<Array2<f64>> {
    let grid = make_grid_rect(GridKind::GaussLegendre, l + 2, 4 * l + 5)?;
    let n = 2 * l + 1;
    let base = l * l;
    let mut d = Array2::zeros((n, n));
    for (p, &w) in grid.points.iter().zip(grid.weights.iter()) {
        let yb = eval_real_sh(l, p);
        let ya = eval_real_sh(l, &r.apply(p));
        for a in 0..n {
            let wy = w * ya[base + a];
            if wy == 0.0 {
                continue;
            }
            for b in 0..n {
                d[[a, b]] += wy * yb[base + b];
            }
        }
    }
    Ok(d)
}

fn j_block(l: usize) -> Result<Arc<Array2<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Array2<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(b) = cache.lock().unwrap().get(&l) {
        return Ok(b.clone());
    }
    let b = Arc::new(wigner_block_by_projection(l, &j_rotation())?);
    cache.lock().unwrap().insert(l, b.clone());
    Ok(b)
}

/// Euler angles of the Y-X-Y factorization `R = Ry(alpha) Rx(beta) Ry(gamma)`.
fn euler_yxy(r: &RotationMatrix3) -> (f64, f64, f64) {
    // R yhat = (sin a sin b, cos b, cos a sin b)
    let (nx, ny, nz) = (r.entry(0, 1), r.entry(1, 1), r.entry(2, 1));
    let beta = ny.clamp(-1.0, 1.0).acos();
    // atan2(0, 0) = 0 covers the gimbal cases beta = 0, pi.
    let alpha = nx.atan2(nz);
    let m = RotationMatrix3::rot_x(-beta)
        .compose(&RotationMatrix3::rot_y(-alpha))
        .compose(r);
    // m is a rotation about y: gamma from its first row.
    let gamma = m.entry(0, 2).atan2(m.entry(0, 0));
    (alpha, beta, gamma)
}

/// Real Wigner-D blocks of `r` for all degrees up to `lmax`.
///
/// Cost per degree is one dense `(2l+1)^3` multiply (the cached J block
/// against J) plus three sparse y-rotation applications.
pub fn wigner_d(lmax: usize, r: &RotationMatrix3) -> Result<WignerDBlocks> {
    let (alpha, beta, gamma) = euler_yxy(r);
    let mut out = Vec::with_capacity(lmax + 1);
    for l in 0..=lmax {
        // D_l = dy(alpha) J dy(beta) J dy(gamma)
        let j = j_block(l)?;
        let inner = j.dot(&rot_y_block(l, gamma));
        let mid = rot_y_block_apply(l, beta, &inner);
        let full = j.dot(&mid);
        out.push(rot_y_block_apply(l, alpha, &full));
    }
    Ok(WignerDBlocks { lmax, blocks: out })
}

/// Applies the block-diagonal Wigner matrix to a coefficient block.
pub fn rotate_irreps(x: &IrrepsCoeffs, d: &WignerDBlocks) -> Result<IrrepsCoeffs> {
    if x.lmax() > d.lmax() {
        return Err(Error::domain(format!(
            "coefficients go up to degree {} but Wigner blocks stop at {}",
            x.lmax(),
            d.lmax()
        )));
    }
    let mut out = IrrepsCoeffs::zeros(x.lmax(), x.channels());
    for l in 0..=x.lmax() {
        let n = 2 * l + 1;
        let base = l * l;
        let block = d.block(l);
        for a in 0..n {
            for c in 0..x.channels() {
                let mut acc = 0.0;
                for b in 0..n {
                    acc += block[[a, b]] * x.data()[[base + b, c]];
                }
                out.data_mut()[[base + a, c]] = acc;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{lm_index, num_coeffs, sphere_function_eval};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_mat_eq(a: &RotationMatrix3, b: &RotationMatrix3, eps: f64) {
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(a.entry(i, j), b.entry(i, j), epsilon = eps);
            }
        }
    }

    #[test]
    fn compose_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let r = RotationMatrix3::random(&mut rng);
            assert_mat_eq(&r.compose(&r.inverse()), &RotationMatrix3::IDENTITY, 1e-12);
            assert_abs_diff_eq!(r.det(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn from_matrix_rejects_junk() {
        assert!(RotationMatrix3::from_matrix([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]])
            .is_err());
        // Reflection: orthogonal but det -1.
        assert!(RotationMatrix3::from_matrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, -1.0]])
            .is_err());
        assert!(RotationMatrix3::from_matrix([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
            .is_ok());
    }

    #[test]
    fn rot_y_advances_phi() {
        let d = Direction::from_angles(1.0, 0.3);
        let r = RotationMatrix3::rot_y(0.5).apply(&d);
        assert_abs_diff_eq!(r.theta(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.phi(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn align_to_y_sends_r_to_pole() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let d = Direction::random(&mut rng);
            let r = align_to_y(&d);
            assert_abs_diff_eq!(r.det(), 1.0, epsilon = 1e-10);
            let up = r.apply(&d);
            assert_abs_diff_eq!(up.x(), 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(up.y(), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(up.z(), 0.0, epsilon = 1e-10);
        }
        // Antipodal branch.
        let down = Direction::new(0.0, -1.0, 0.0).unwrap();
        let r = align_to_y(&down);
        assert_abs_diff_eq!(r.apply(&down).y(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.det(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn euler_factorization_reconstructs_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = RotationMatrix3::random(&mut rng);
            let (a, b, g) = euler_yxy(&r);
            let rebuilt = RotationMatrix3::rot_y(a)
                .compose(&RotationMatrix3::rot_x(b))
                .compose(&RotationMatrix3::rot_y(g));
            assert_mat_eq(&r, &rebuilt, 1e-10);
        }
        // Gimbal case: pure y-rotation.
        let r = RotationMatrix3::rot_y(1.3);
        let (a, b, g) = euler_yxy(&r);
        let rebuilt = RotationMatrix3::rot_y(a)
            .compose(&RotationMatrix3::rot_x(b))
            .compose(&RotationMatrix3::rot_y(g));
        assert_mat_eq(&r, &rebuilt, 1e-12);
    }

    #[test]
    fn j_conjugation_identity() {
        // Rx(b) = J Ry(b) J on the 3D representation itself.
        let j = j_rotation();
        for b in [0.0, 0.4, 1.9, -2.6] {
            let lhs = RotationMatrix3::rot_x(b);
            let rhs = j.compose(&RotationMatrix3::rot_y(b)).compose(&j);
            assert_mat_eq(&lhs, &rhs, 1e-12);
        }
    }

    #[test]
    fn j_blocks_are_involutions() {
        for l in 0..=6usize {
            let j = j_block(l).unwrap();
            let sq = j.dot(j.as_ref() as &Array2<f64>);
            for a in 0..(2 * l + 1) {
                for b in 0..(2 * l + 1) {
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(sq[[a, b]], expected, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn wigner_of_y_rotation_matches_closed_form() {
        let lmax = 5;
        let g = 0.713;
        let d = wigner_d(lmax, &RotationMatrix3::rot_y(g)).unwrap();
        for l in 0..=lmax {
            let expected = rot_y_block(l, g);
            for a in 0..(2 * l + 1) {
                for b in 0..(2 * l + 1) {
                    assert_abs_diff_eq!(d.block(l)[[a, b]], expected[[a, b]], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn wigner_l1_is_rotation_in_zyx_order() {
        // Degree-1 harmonics are proportional to (z, y, x) in m = (-1, 0, 1)
        // order, so D_1 must equal R conjugated by that coordinate shuffle.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let perm = [2usize, 1, 0]; // harmonic slot -> cartesian coordinate
        for _ in 0..20 {
            let r = RotationMatrix3::random(&mut rng);
            let d = wigner_d(1, &r).unwrap();
            for a in 0..3 {
                for b in 0..3 {
                    assert_abs_diff_eq!(
                        d.block(1)[[a, b]],
                        r.entry(perm[a], perm[b]),
                        epsilon = 1e-10
                    );
                }
            }
        }
    }

    #[test]
    fn wigner_blocks_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = RotationMatrix3::random(&mut rng);
        let d = wigner_d(6, &r).unwrap();
        for l in 0..=6usize {
            let n = 2 * l + 1;
            let prod = d.block(l).dot(&d.block(l).t());
            for a in 0..n {
                for b in 0..n {
                    let expected = if a == b { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(prod[[a, b]], expected, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn wigner_is_a_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let r1 = RotationMatrix3::random(&mut rng);
            let r2 = RotationMatrix3::random(&mut rng);
            let d12 = wigner_d(4, &r1.compose(&r2)).unwrap();
            let d1 = wigner_d(4, &r1).unwrap();
            let d2 = wigner_d(4, &r2).unwrap();
            for l in 0..=4usize {
                let prod = d1.block(l).dot(d2.block(l));
                let n = 2 * l + 1;
                for a in 0..n {
                    for b in 0..n {
                        assert_abs_diff_eq!(d12.block(l)[[a, b]], prod[[a, b]], epsilon = 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn rotation_commutes_with_function_evaluation() {
        // The defining property: F_{D x}(R p) = F_x(p).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let x = IrrepsCoeffs::random(6, 2, &mut rng);
            let r = RotationMatrix3::random(&mut rng);
            let d = wigner_d(6, &r).unwrap();
            let xr = rotate_irreps(&x, &d).unwrap();
            let p = Direction::random(&mut rng);
            let lhs = sphere_function_eval(&xr, &r.apply(&p));
            let rhs = sphere_function_eval(&x, &p);
            for c in 0..2 {
                assert_abs_diff_eq!(lhs[c], rhs[c], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn rotate_irreps_checks_degree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = IrrepsCoeffs::random(5, 1, &mut rng);
        let d = wigner_d(3, &RotationMatrix3::random(&mut rng)).unwrap();
        assert!(rotate_irreps(&x, &d).is_err());
    }

    #[test]
    fn rotate_matches_projection_oracle() {
        // Independent oracle: rotate by quadrature projection instead of the
        // Euler/J assembly, and compare entrywise.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = RotationMatrix3::random(&mut rng);
        for l in 0..=4usize {
            let fast = wigner_d(l, &r).unwrap();
            let slow = wigner_block_by_projection(l, &r).unwrap();
            let n = 2 * l + 1;
            for a in 0..n {
                for b in 0..n {
                    assert_abs_diff_eq!(fast.block(l)[[a, b]], slow[[a, b]], epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn index_helpers_consistent() {
        assert_eq!(lm_index(2, -2), 4);
        assert_eq!(num_coeffs(3), 16);
    }
}
