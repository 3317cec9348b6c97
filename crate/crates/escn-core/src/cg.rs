//! Clebsch-Gordan machinery: exact SU(2) coefficients, their transport into
//! the real harmonic basis used by this crate, the compact (filter-aligned)
//! coefficient vectors, and the invertible reparametrization between the
//! per-triple weights `h` and the per-order SO(2) weights `h~`.
//!
//! The SU(2) coefficients are evaluated with exact big-rational arithmetic
//! (the Racah closed form splits into a rational sum times the square root of
//! a rational), so table entries carry no accumulated recursion error beyond
//! the final rounding to f64.

use ndarray::Array3;
use num_bigint::BigInt;
use num_complex::Complex64;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::sphere::FOUR_PI;

// ---------------------------------------------------------------------------
// Exact SU(2) Clebsch-Gordan
// ---------------------------------------------------------------------------

fn big_factorial(n: i64) -> BigInt {
    debug_assert!(n >= 0);
    let mut acc = BigInt::from(1);
    for k in 2..=n {
        acc *= k;
    }
    acc
}

/// `<l1 m1 l2 m2 | l3 m3>` for integer angular momenta, exact up to the final
/// f64 rounding. Selection-rule violations (triangle, |m| > l, m3 != m1 + m2)
/// yield 0 rather than an error, matching how the coefficient is summed over.
pub fn su2_cg(l1: u32, m1: i64, l2: u32, m2: i64, l3: u32, m3: i64) -> f64 {
    let (j1, j2, j3) = (l1 as i64, l2 as i64, l3 as i64);
    if m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    if m3 != m1 + m2 || j3 < (j1 - j2).abs() || j3 > j1 + j2 {
        return 0.0;
    }
    // Rational k-sum S.
    let k_min = 0.max(j2 - j3 - m1).max(j1 - j3 + m2);
    let k_max = (j1 + j2 - j3).min(j1 - m1).min(j2 + m2);
    let mut s = BigRational::zero();
    for k in k_min..=k_max {
        let denom = big_factorial(k)
            * big_factorial(j1 + j2 - j3 - k)
            * big_factorial(j1 - m1 - k)
            * big_factorial(j2 + m2 - k)
            * big_factorial(j3 - j2 + m1 + k)
            * big_factorial(j3 - j1 - m2 + k);
        let term = BigRational::new(BigInt::from(1), denom);
        if k % 2 == 0 {
            s += term;
        } else {
            s -= term;
        }
    }
    if s.is_zero() {
        return 0.0;
    }
    // Rational radicand Q = (2 j3 + 1) * triangle(j1,j2,j3) * m-factorials.
    let triangle = BigRational::new(
        big_factorial(j1 + j2 - j3) * big_factorial(j1 - j2 + j3) * big_factorial(-j1 + j2 + j3),
        big_factorial(j1 + j2 + j3 + 1),
    );
    let mfact = big_factorial(j3 + m3)
        * big_factorial(j3 - m3)
        * big_factorial(j1 - m1)
        * big_factorial(j1 + m1)
        * big_factorial(j2 - m2)
        * big_factorial(j2 + m2);
    let q = triangle * BigRational::from(BigInt::from(2 * j3 + 1) * mfact);
    let sf = s.to_f64().expect("rational fits in f64");
    let qf = q.to_f64().expect("rational fits in f64");
    sf * qf.sqrt()
}

// ---------------------------------------------------------------------------
// Real-basis tables
// ---------------------------------------------------------------------------

/// Coefficient-space change of basis `U[m, mu]`: real coefficients of this
/// crate's harmonics in terms of the coefficients over the standard complex
/// harmonics (Condon-Shortley, same polar axis), `r = U c`. Unitary,
/// block-sparse: nonzero only for `|m| == |mu|`.
fn u_entry(m: i64, mu: i64) -> Complex64 {
    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
    if m == 0 && mu == 0 {
        return Complex64::new(1.0, 0.0);
    }
    if m == 0 || mu == 0 || m.abs() != mu.abs() {
        return Complex64::new(0.0, 0.0);
    }
    let sign = if m.abs() % 2 == 0 { 1.0 } else { -1.0 }; // (-1)^|m|
    if m > 0 {
        // sin branch
        if mu == m {
            Complex64::new(0.0, sign * S)
        } else {
            Complex64::new(0.0, -S)
        }
    } else {
        // cos branch
        if mu == -m {
            Complex64::new(sign * S, 0.0)
        } else {
            Complex64::new(S, 0.0)
        }
    }
}

/// Full real-basis coupling tables for all triples `(l_i, l_f, l_o)` with
/// `l_i, l_o <= lmax` and `|l_i - l_o| <= l_f <= l_i + l_o`.
///
/// Entry layout: `table[(li, lf, lo)][[lo + m_o, li + m_i, lf + m_f]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CGTable {
    lmax: usize,
    tables: BTreeMap<(usize, usize, usize), Array3<f64>>,
}

/// Flat serialized form of one table block, row-major over
/// `(m_o, m_i, m_f)`; keeps the JSON stable and key-order deterministic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CGTableRecord {
    pub li: usize,
    pub lf: usize,
    pub lo: usize,
    pub values: Vec<f64>,
}

/// One real-basis coupling block, via the unitary change of basis from the
/// complex coefficients. The result must be real; a residual imaginary part
/// above 1e-10 means the basis bookkeeping is broken and is reported as an
/// internal error.
fn real_cg_block(li: usize, lf: usize, lo: usize) -> Result<Array3<f64>> {
    let (ni, nf, no) = (2 * li + 1, 2 * lf + 1, 2 * lo + 1);
    let mut acc = vec![Complex64::new(0.0, 0.0); no * ni * nf];
    let idx = |mo: i64, mi: i64, mf: i64| -> usize {
        ((lo as i64 + mo) as usize * ni + (li as i64 + mi) as usize) * nf + (lf as i64 + mf) as usize
    };
    // Scatter over complex orders; each (mu_i, mu_f) pair feeds at most
    // 2 x 2 x 2 real entries through the sparse basis matrices.
    for mu_i in -(li as i64)..=(li as i64) {
        for mu_f in -(lf as i64)..=(lf as i64) {
            let mu_o = mu_i + mu_f;
            if mu_o.abs() > lo as i64 {
                continue;
            }
            let c = su2_cg(li as u32, mu_i, lf as u32, mu_f, lo as u32, mu_o);
            if c == 0.0 {
                continue;
            }
            let mos: &[i64] = if mu_o == 0 { &[0] } else { &[mu_o, -mu_o] };
            let mis: &[i64] = if mu_i == 0 { &[0] } else { &[mu_i, -mu_i] };
            let mfs: &[i64] = if mu_f == 0 { &[0] } else { &[mu_f, -mu_f] };
            for &mo in mos {
                let bo = u_entry(mo, mu_o);
                for &mi in mis {
                    let bi = u_entry(mi, mu_i).conj();
                    for &mf in mfs {
                        let bf = u_entry(mf, mu_f).conj();
                        acc[idx(mo, mi, mf)] += bo * bi * bf * c;
                    }
                }
            }
        }
    }
    // Parity phase: for odd degree sums the coupled coefficients violate the
    // reality condition by a sign, leaving the sum purely imaginary; the real
    // coupling is defined with an extra -i there (a fixed basis convention).
    let odd = (li + lf + lo) % 2 == 1;
    let mut out = Array3::zeros((no, ni, nf));
    for (flat, v) in acc.into_iter().enumerate() {
        let (value, residue) = if odd { (v.im, v.re) } else { (v.re, v.im) };
        if residue.abs() > 1e-10 {
            return Err(Error::internal(format!(
                "real coupling table has residue {residue} at ({li},{lf},{lo})"
            )));
        }
        let mf = flat % nf;
        let rest = flat / nf;
        out[[rest / ni, rest % ni, mf]] = value;
    }
    Ok(out)
}

impl CGTable {
    pub fn lmax(&self) -> usize {
        self.lmax
    }

    /// The block for one degree triple, if it satisfies the triangle rule.
    pub fn block(&self, li: usize, lf: usize, lo: usize) -> Option<&Array3<f64>> {
        self.tables.get(&(li, lf, lo))
    }

    pub fn get(&self, li: usize, lf: usize, lo: usize, mo: i64, mi: i64, mf: i64) -> f64 {
        match self.tables.get(&(li, lf, lo)) {
            Some(t) => {
                t[[
                    (lo as i64 + mo) as usize,
                    (li as i64 + mi) as usize,
                    (lf as i64 + mf) as usize,
                ]]
            }
            None => 0.0,
        }
    }

    /// All stored degree triples, in sorted order.
    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.tables.keys().copied()
    }

    pub fn to_records(&self) -> Vec<CGTableRecord> {
        self.tables
            .iter()
            .map(|(&(li, lf, lo), t)| CGTableRecord {
                li,
                lf,
                lo,
                values: t.iter().copied().collect(),
            })
            .collect()
    }

    pub fn from_records(lmax: usize, records: &[CGTableRecord]) -> Result<Self> {
        let mut tables = BTreeMap::new();
        for r in records {
            let (ni, nf, no) = (2 * r.li + 1, 2 * r.lf + 1, 2 * r.lo + 1);
            if r.values.len() != ni * nf * no {
                return Err(Error::input(format!(
                    "table block ({}, {}, {}) has {} values, expected {}",
                    r.li,
                    r.lf,
                    r.lo,
                    r.values.len(),
                    ni * nf * no
                )));
            }
            let arr = Array3::from_shape_vec((no, ni, nf), r.values.clone())
                .expect("length checked above");
            tables.insert((r.li, r.lf, r.lo), arr);
        }
        Ok(CGTable { lmax, tables })
    }
}

/// Builds the full real-basis table for degrees up to `lmax`.
pub fn real_cg_table(lmax: usize) -> Result<CGTable> {
    let mut tables = BTreeMap::new();
    for li in 0..=lmax {
        for lo in 0..=lmax {
            for lf in li.abs_diff(lo)..=(li + lo) {
                tables.insert((li, lf, lo), real_cg_block(li, lf, lo)?);
            }
        }
    }
    Ok(CGTable { lmax, tables })
}

/// Process-wide cache of real-basis tables, keyed by `lmax`.
pub fn cached_cg_table(lmax: usize) -> Result<Arc<CGTable>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<CGTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(t) = cache.lock().unwrap().get(&lmax) {
        return Ok(t.clone());
    }
    let t = Arc::new(real_cg_table(lmax)?);
    cache.lock().unwrap().insert(lmax, t.clone());
    Ok(t)
}

// ---------------------------------------------------------------------------
// Compact coefficients
// ---------------------------------------------------------------------------

/// The aligned-filter slice of the coupling tables: after rotating the filter
/// onto the polar axis only `m_f = 0` survives, and the slice collapses to
/// one value per order. For each triple the vector is indexed by
/// `m in -min(l_i, l_o) ..= min(l_i, l_o)`:
/// the non-negative side holds the diagonal entries `T[m][m][0]`, the
/// negative side the antidiagonal entries `T[-m][m][0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactCG {
    lmax: usize,
    tables: BTreeMap<(usize, usize, usize), Vec<f64>>,
}

impl CompactCG {
    pub fn lmax(&self) -> usize {
        self.lmax
    }

    /// Compact value for order `m` of a triple; 0 outside the stored range.
    pub fn get(&self, li: usize, lf: usize, lo: usize, m: i64) -> f64 {
        match self.tables.get(&(li, lf, lo)) {
            Some(v) => {
                let mmax = (v.len() / 2) as i64;
                if m.abs() > mmax {
                    0.0
                } else {
                    v[(mmax + m) as usize]
                }
            }
            None => 0.0,
        }
    }

    pub fn triples(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        self.tables.keys().copied()
    }
}

/// Extracts the compact coefficients from a full table.
pub fn compact_cg(table: &CGTable) -> CompactCG {
    let mut tables = BTreeMap::new();
    for (li, lf, lo) in table.triples() {
        let mmax = li.min(lo) as i64;
        let mut v = vec![0.0; (2 * mmax + 1) as usize];
        for m in -mmax..=mmax {
            let value = if m >= 0 {
                table.get(li, lf, lo, m, m, 0)
            } else {
                table.get(li, lf, lo, m, -m, 0)
            };
            v[(mmax + m) as usize] = value;
        }
        tables.insert((li, lf, lo), v);
    }
    CompactCG {
        lmax: table.lmax(),
        tables,
    }
}

// ---------------------------------------------------------------------------
// h <-> h~ reparametrization
// ---------------------------------------------------------------------------

/// Per-triple scalar weights `h_{l_i, l_f, l_o}` of a spherical filter
/// expansion. Triples absent from the map are zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HTensor {
    lmax: usize,
    coeffs: BTreeMap<(usize, usize, usize), f64>,
}

impl HTensor {
    pub fn new(lmax: usize) -> Self {
        HTensor {
            lmax,
            coeffs: BTreeMap::new(),
        }
    }

    /// Standard-normal weights on every admissible triple.
    pub fn random<R: Rng + ?Sized>(lmax: usize, rng: &mut R) -> Self {
        let mut h = HTensor::new(lmax);
        for li in 0..=lmax {
            for lo in 0..=lmax {
                for lf in li.abs_diff(lo)..=(li + lo) {
                    h.set(li, lf, lo, crate::rng_normal(rng)).unwrap();
                }
            }
        }
        h
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn set(&mut self, li: usize, lf: usize, lo: usize, value: f64) -> Result<()> {
        if li > self.lmax || lo > self.lmax {
            return Err(Error::domain(format!(
                "triple ({li},{lf},{lo}) outside lmax {}",
                self.lmax
            )));
        }
        if lf < li.abs_diff(lo) || lf > li + lo {
            return Err(Error::domain(format!(
                "triple ({li},{lf},{lo}) violates the triangle rule"
            )));
        }
        self.coeffs.insert((li, lf, lo), value);
        Ok(())
    }

    pub fn get(&self, li: usize, lf: usize, lo: usize) -> f64 {
        self.coeffs.get(&(li, lf, lo)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize, usize), f64)> + '_ {
        self.coeffs.iter().map(|(&k, &v)| (k, v))
    }

    pub fn max_abs_diff(&self, other: &HTensor) -> f64 {
        let mut keys: Vec<_> = self.coeffs.keys().chain(other.coeffs.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .map(|&(li, lf, lo)| (self.get(li, lf, lo) - other.get(li, lf, lo)).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-(input degree, output degree, order) weights of the SO(2)-reduced
/// convolution. For each degree pair the vector runs over
/// `m in -min(l_i, l_o) ..= min(l_i, l_o)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HTildeTensor {
    lmax: usize,
    coeffs: BTreeMap<(usize, usize), Vec<f64>>,
}

impl HTildeTensor {
    pub fn new(lmax: usize) -> Self {
        HTildeTensor {
            lmax,
            coeffs: BTreeMap::new(),
        }
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }

    pub fn get(&self, li: usize, lo: usize, m: i64) -> f64 {
        match self.coeffs.get(&(li, lo)) {
            Some(v) => {
                let mmax = (v.len() / 2) as i64;
                if m.abs() > mmax {
                    0.0
                } else {
                    v[(mmax + m) as usize]
                }
            }
            None => 0.0,
        }
    }

    pub fn set(&mut self, li: usize, lo: usize, m: i64, value: f64) -> Result<()> {
        if li > self.lmax || lo > self.lmax || m.unsigned_abs() as usize > li.min(lo) {
            return Err(Error::domain(format!(
                "order ({li},{lo},m={m}) out of range for lmax {}",
                self.lmax
            )));
        }
        let mmax = li.min(lo);
        let v = self
            .coeffs
            .entry((li, lo))
            .or_insert_with(|| vec![0.0; 2 * mmax + 1]);
        v[(mmax as i64 + m) as usize] = value;
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &HTildeTensor) -> f64 {
        let lmax = self.lmax.max(other.lmax);
        let mut worst: f64 = 0.0;
        for li in 0..=lmax {
            for lo in 0..=lmax {
                let mmax = li.min(lo) as i64;
                for m in -mmax..=mmax {
                    worst = worst.max((self.get(li, lo, m) - other.get(li, lo, m)).abs());
                }
            }
        }
        worst
    }
}

/// Amplitude of the degree-`l_f` zonal harmonic at the pole; folding it into
/// the reparametrization is what makes the reduced convolution exactly equal
/// to the dense one instead of proportional to it.
#[inline]
pub(crate) fn pole_amplitude(lf: usize) -> f64 {
    ((2 * lf + 1) as f64 / FOUR_PI).sqrt()
}

/// Forward reparametrization:
/// `h~^(l_i, l_o)_m = sum_{l_f} h_{l_i, l_f, l_o} c^(l_i, l_f, l_o)_m Y_0^(l_f)(pole)`.
pub fn h_to_htilde(h: &HTensor, compact: &CompactCG) -> Result<HTildeTensor> {
    if compact.lmax() < h.lmax() {
        return Err(Error::domain(format!(
            "compact table lmax {} below filter lmax {}",
            compact.lmax(),
            h.lmax()
        )));
    }
    let lmax = h.lmax();
    let mut out = HTildeTensor::new(lmax);
    for li in 0..=lmax {
        for lo in 0..=lmax {
            let mmax = li.min(lo) as i64;
            for m in -mmax..=mmax {
                let mut acc = 0.0;
                for lf in li.abs_diff(lo)..=(li + lo) {
                    acc += h.get(li, lf, lo) * compact.get(li, lf, lo, m) * pole_amplitude(lf);
                }
                out.set(li, lo, m, acc)?;
            }
        }
    }
    Ok(out)
}

/// Dense linear solve by Gaussian elimination with partial pivoting; the
/// systems here are at most `(2 lmax + 1)` square.
pub(crate) fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(Error::internal("reparametrization matrix is singular"));
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in (row + 1)..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Inverse reparametrization: recovers the per-triple weights from the
/// per-order ones. For each degree pair the forward map is a square linear
/// system (both sides have `2 min(l_i, l_o) + 1` coefficients) and the
/// compact-coefficient matrix is invertible, so the map is a bijection.
pub fn htilde_to_h(ht: &HTildeTensor, compact: &CompactCG) -> Result<HTensor> {
    if compact.lmax() < ht.lmax() {
        return Err(Error::domain(format!(
            "compact table lmax {} below filter lmax {}",
            compact.lmax(),
            ht.lmax()
        )));
    }
    let lmax = ht.lmax();
    let mut out = HTensor::new(lmax);
    for li in 0..=lmax {
        for lo in 0..=lmax {
            let mmax = li.min(lo) as i64;
            let n = (2 * mmax + 1) as usize;
            let lf_lo = li.abs_diff(lo);
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            for (row, m) in (-mmax..=mmax).enumerate() {
                for (col, lf) in (lf_lo..=(li + lo)).enumerate() {
                    a[row][col] = compact.get(li, lf, lo, m) * pole_amplitude(lf);
                }
                b[row] = ht.get(li, lo, m);
            }
            let x = solve_dense(a, b)?;
            for (col, lf) in (lf_lo..=(li + lo)).enumerate() {
                out.set(li, lf, lo, x[col])?;
            }
        }
    }
    Ok(out)
}
