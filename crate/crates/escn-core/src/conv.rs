//! The three equivalent convolution paths: the dense tensor-product oracle,
//! the edge-aligned contraction, and the SO(2) spectral path, together with
//! the order-grouping projection and analytic cost counters.
//!
//! The oracle and the fast paths deliberately share no contraction code —
//! only the coupling tables and the harmonics — so the equivalence tests
//! compare genuinely independent computations.

use ndarray::{Array2, Array3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::cg::{cached_cg_table, compact_cg, pole_amplitude, HTensor, HTildeTensor};
use crate::error::{Error, Result};
use crate::rotations::{align_to_y, rotate_irreps, wigner_d, RotationMatrix3};
use crate::sphere::{eval_real_sh, lm_index, Direction, IrrepsCoeffs};

// ---------------------------------------------------------------------------
// ConvSpec
// ---------------------------------------------------------------------------

/// Static description of a convolution: band limit, order cutoff, channel
/// count and the admissible degree triples.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    lmax: usize,
    mmax: usize,
    channels: usize,
    triples: Vec<(usize, usize, usize)>,
}

impl ConvSpec {
    /// All triangle-admissible triples with `l_i, l_o <= lmax`.
    pub fn new(lmax: usize, mmax: usize, channels: usize) -> Result<Self> {
        let mut triples = Vec::new();
        for li in 0..=lmax {
            for lo in 0..=lmax {
                for lf in li.abs_diff(lo)..=(li + lo) {
                    triples.push((li, lf, lo));
                }
            }
        }
        Self::with_triples(lmax, mmax, channels, triples)
    }

    /// A restricted triple list; every entry must satisfy the triangle rule.
    pub fn with_triples(
        lmax: usize,
        mmax: usize,
        channels: usize,
        triples: Vec<(usize, usize, usize)>,
    ) -> Result<Self> {
        if mmax > lmax {
            return Err(Error::domain(format!("mmax {mmax} exceeds lmax {lmax}")));
        }
        if channels == 0 {
            return Err(Error::domain("channels must be at least 1"));
        }
        for &(li, lf, lo) in &triples {
            if li > lmax || lo > lmax {
                return Err(Error::domain(format!(
                    "triple ({li},{lf},{lo}) exceeds lmax {lmax}"
                )));
            }
            if lf < li.abs_diff(lo) || lf > li + lo {
                return Err(Error::domain(format!(
                    "triple ({li},{lf},{lo}) violates the triangle rule"
                )));
            }
        }
        Ok(ConvSpec {
            lmax,
            mmax,
            channels,
            triples,
        })
    }

    pub fn lmax(&self) -> usize {
        self.lmax
    }
    pub fn mmax(&self) -> usize {
        self.mmax
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn triples(&self) -> &[(usize, usize, usize)] {
        &self.triples
    }

    fn check_input(&self, x: &IrrepsCoeffs) -> Result<()> {
        if x.lmax() != self.lmax || x.channels() != self.channels {
            return Err(Error::domain(format!(
                "input has lmax {} / {} channels, spec wants {} / {}",
                x.lmax(),
                x.channels(),
                self.lmax,
                self.channels
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Convolution paths
// ---------------------------------------------------------------------------

/// Dense tensor-product reference: the literal triple sum over
/// `(m_o, m_i, m_f)` against the full coupling table and the filter
/// harmonics at the edge direction. This is the oracle the fast paths are
/// checked against; per-channel filter, no channel mixing.
pub fn naive_conv(
    x: &IrrepsCoeffs,
    r: &Direction,
    h: &HTensor,
    spec: &ConvSpec,
) -> Result<IrrepsCoeffs> {
    spec.check_input(x)?;
    if h.lmax() < spec.lmax {
        return Err(Error::domain(format!(
            "filter lmax {} below spec lmax {}",
            h.lmax(),
            spec.lmax
        )));
    }
    let table = cached_cg_table(spec.lmax)?;
    let y = eval_real_sh(2 * spec.lmax, r);
    let mut out = IrrepsCoeffs::zeros(spec.lmax, spec.channels);
    for c in 0..spec.channels {
        for &(li, lf, lo) in &spec.triples {
            let hv = h.get(li, lf, lo);
            if hv == 0.0 {
                continue;
            }
            let block = table
                .block(li, lf, lo)
                .ok_or_else(|| Error::internal("missing coupling block"))?;
            let (ni, nf, no) = (2 * li + 1, 2 * lf + 1, 2 * lo + 1);
            let (ibase, fbase, obase) = (li * li, lf * lf, lo * lo);
            for io in 0..no {
                let mut acc = 0.0;
                for ii in 0..ni {
                    let xv = x.data()[[ibase + ii, c]];
                    for jf in 0..nf {
                        acc += hv * block[[io, ii, jf]] * xv * y[fbase + jf];
                    }
                }
                out.data_mut()[[obase + io, c]] += acc;
            }
        }
    }
    Ok(out)
}

/// Edge-aligned contraction: rotate the input so the edge lies on the pole,
/// contract against the `m_f = 0` slice only (scaled by the zonal pole
/// amplitude), rotate back. Independent of `naive_conv`'s loop structure.
pub fn aligned_conv(
    x: &IrrepsCoeffs,
    r: &Direction,
    h: &HTensor,
    spec: &ConvSpec,
) -> Result<IrrepsCoeffs> {
    spec.check_input(x)?;
    let table = cached_cg_table(spec.lmax)?;
    let align = align_to_y(r);
    let d = wigner_d(spec.lmax, &align)?;
    let xr = rotate_irreps(x, &d)?;
    let mut out = IrrepsCoeffs::zeros(spec.lmax, spec.channels);
    for &(li, lf, lo) in &spec.triples {
        let hv = h.get(li, lf, lo) * pole_amplitude(lf);
        if hv == 0.0 {
            continue;
        }
        let block = table
            .block(li, lf, lo)
            .ok_or_else(|| Error::internal("missing coupling block"))?;
        let mmax = li.min(lo) as i64;
        for mo in -mmax..=mmax {
            // Slice structure: only |m_i| = |m_o| survives at m_f = 0.
            for mi in [mo, -mo] {
                let t = block[[
                    (lo as i64 + mo) as usize,
                    (li as i64 + mi) as usize,
                    lf,
                ]];
                if t == 0.0 {
                    continue;
                }
                for c in 0..spec.channels {
                    out.data_mut()[[lm_index(lo, mo), c]] +=
                        hv * t * xr.data()[[lm_index(li, mi), c]];
                }
                if mo == 0 {
                    break; // mi list would repeat 0
                }
            }
        }
    }
    rotate_irreps(&out, &d.transposed())
}

/// Coefficients of an aligned frame regrouped by order: block `m` stacks the
/// degrees `l >= m`, with the cos component (order `-m`) in slot 0 and the
/// sin component (order `+m`) in slot 1. Slot 1 of the `m = 0` block is
/// unused and stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SO2Projection {
    lmax: usize,
    channels: usize,
    orders: Vec<Array3<f64>>, // orders[m]: (lmax + 1 - m, channels, 2)
}

impl SO2Projection {
    pub fn lmax(&self) -> usize {
        self.lmax
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn order(&self, m: usize) -> &Array3<f64> {
        &self.orders[m]
    }
}

/// Regroups coefficients (interpreted in the aligned frame) by order.
pub fn so2_project(x: &IrrepsCoeffs) -> SO2Projection {
    let (lmax, channels) = (x.lmax(), x.channels());
    let mut orders = Vec::with_capacity(lmax + 1);
    for m in 0..=lmax {
        let mut block = Array3::zeros((lmax + 1 - m, channels, 2));
        for (row, l) in (m..=lmax).enumerate() {
            for c in 0..channels {
                block[[row, c, 0]] = x.get(l, -(m as i64), c);
                if m > 0 {
                    block[[row, c, 1]] = x.get(l, m as i64, c);
                }
            }
        }
        orders.push(block);
    }
    SO2Projection {
        lmax,
        channels,
        orders,
    }
}

/// Inverse of [`so2_project`]; the round trip is exact.
pub fn so2_unproject(p: &SO2Projection) -> IrrepsCoeffs {
    let mut out = IrrepsCoeffs::zeros(p.lmax, p.channels);
    for m in 0..=p.lmax {
        let block = &p.orders[m];
        for (row, l) in (m..=p.lmax).enumerate() {
            for c in 0..p.channels {
                out.set(l, -(m as i64), c, block[[row, c, 0]]);
                if m > 0 {
                    out.set(l, m as i64, c, block[[row, c, 1]]);
                }
            }
        }
    }
    out
}

/// SO(2) path with an explicit alignment rotation; exposed so roll-invariance
/// (two alignments differing by a rotation about y) can be tested directly.
pub fn so2_conv_in_frame(
    x: &IrrepsCoeffs,
    align: &RotationMatrix3,
    ht: &HTildeTensor,
    spec: &ConvSpec,
) -> Result<IrrepsCoeffs> {
    spec.check_input(x)?;
    if ht.lmax() < spec.lmax {
        return Err(Error::domain(format!(
            "SO(2) weights lmax {} below spec lmax {}",
            ht.lmax(),
            spec.lmax
        )));
    }
    let d = wigner_d(spec.lmax, align)?;
    let xr = rotate_irreps(x, &d)?;
    let proj = so2_project(&xr);
    let lmax = spec.lmax;
    let mut out_orders = Vec::with_capacity(lmax + 1);
    for m in 0..=lmax {
        let n = lmax + 1 - m;
        let mut outb = Array3::zeros((n, spec.channels, 2));
        if m <= spec.mmax {
            // Dense degree-mixing matrices for this order.
            let mut a = Array2::zeros((n, n));
            let mut b = Array2::zeros((n, n));
            for (row, lo) in (m..=lmax).enumerate() {
                for (col, li) in (m..=lmax).enumerate() {
                    a[[row, col]] = ht.get(li, lo, m as i64);
                    b[[row, col]] = ht.get(li, lo, -(m as i64));
                }
            }
            let inb = proj.order(m);
            for row in 0..n {
                for c in 0..spec.channels {
                    let mut cos_acc = 0.0;
                    let mut sin_acc = 0.0;
                    for col in 0..n {
                        let (xc, xs) = (inb[[col, c, 0]], inb[[col, c, 1]]);
                        if m == 0 {
                            cos_acc += a[[row, col]] * xc;
                        } else {
                            // [[h~_m, -h~_{-m}], [h~_{-m}, h~_m]] on (x_m, x_{-m})
                            sin_acc += a[[row, col]] * xs - b[[row, col]] * xc;
                            cos_acc += b[[row, col]] * xs + a[[row, col]] * xc;
                        }
                    }
                    outb[[row, c, 0]] = cos_acc;
                    outb[[row, c, 1]] = sin_acc;
                }
            }
        }
        out_orders.push(outb);
    }
    let aligned_out = so2_unproject(&SO2Projection {
        lmax,
        channels: spec.channels,
        orders: out_orders,
    });
    rotate_irreps(&aligned_out, &d.transposed())
}

/// SO(2) spectral convolution: align to the edge, mix each order through its
/// 2x2 weight block (scalar for m = 0), rotate back. With
/// `h~ = h_to_htilde(h)` and `M = L` this equals `naive_conv` exactly.
pub fn so2_conv(
    x: &IrrepsCoeffs,
    r: &Direction,
    ht: &HTildeTensor,
    spec: &ConvSpec,
) -> Result<IrrepsCoeffs> {
    so2_conv_in_frame(x, &align_to_y(r), ht, spec)
}

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostPath {
    Naive,
    So2,
}

/// Analytic per-edge operation counts plus (optionally) a measured wall time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub multiplies: u64,
    pub adds: u64,
    pub peak_live_scalars: u64,
    pub wall_time_seconds: f64,
}

/// Sum of degree-block sizes, `sum_{l <= L} (2l+1)^2`.
fn block_size_sum(lmax: usize) -> u64 {
    (0..=lmax as u64).map(|l| (2 * l + 1) * (2 * l + 1)).sum()
}

/// Exact multiply/add counts from the loop structure of each path.
/// `wall_time_seconds` is zero here; [`measure_batch`] fills it.
pub fn count_cost(path: CostPath, lmax: usize, mmax: usize, channels: usize) -> CostReport {
    let (l, c) = (lmax as u64, channels as u64);
    let s = block_size_sum(lmax);
    match path {
        CostPath::Naive => {
            // Triple sum: 3 multiplies and 1 add per (c, triple, m_o, m_i, m_f);
            // the triangle-closed m-volume telescopes to s^2.
            let inner = s * s;
            CostReport {
                multiplies: 3 * c * inner,
                adds: c * inner,
                // input + output + filter harmonics + largest coupling block
                peak_live_scalars: 2 * (l + 1) * (l + 1) * c
                    + (2 * l + 1) * (2 * l + 1)
                    + (2 * l + 1) * (2 * l + 1) * (4 * l + 1),
                wall_time_seconds: 0.0,
            }
        }
        CostPath::So2 => {
            // Wigner assembly: two dense (2l+1)^3 products plus two sparse
            // y-rotation applications per degree.
            let assembly: u64 = (0..=l)
                .map(|d| {
                    let n = 2 * d + 1;
                    2 * n * n * n + 8 * n * d
                })
                .sum();
            // Align and un-align rotations over all channels.
            let rotations = 2 * s * c;
            // Order mixing: scalar for m = 0, 2x2 blocks for m >= 1.
            let m_cut = mmax.min(lmax) as u64;
            let mixing: u64 = (l + 1) * (l + 1) * c
                + (1..=m_cut).map(|m| 4 * (l + 1 - m) * (l + 1 - m) * c).sum::<u64>();
            CostReport {
                multiplies: assembly + rotations + mixing,
                adds: assembly / 2 + rotations + mixing / 2,
                // input + aligned copy + output + Wigner blocks
                peak_live_scalars: 3 * (l + 1) * (l + 1) * c + s,
                wall_time_seconds: 0.0,
            }
        }
    }
}

/// Least-squares slope of `ln(count)` against `ln(L + 1)` — the scaling
/// exponent of a path in the number of retained degrees.
pub fn fitted_cost_slope(path: CostPath, ls: &[usize], channels: usize) -> f64 {
    let pts: Vec<(f64, f64)> = ls
        .iter()
        .map(|&l| {
            let c = count_cost(path, l, l, channels);
            (((l + 1) as f64).ln(), (c.multiplies as f64).ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}

/// Runs one path over a seeded random batch of edges and returns the analytic
/// counts scaled to the batch together with the measured wall time.
pub fn measure_batch<R: Rng + ?Sized>(
    path: CostPath,
    spec: &ConvSpec,
    edges: usize,
    rng: &mut R,
) -> Result<CostReport> {
    let x = IrrepsCoeffs::random(spec.lmax(), spec.channels(), rng);
    let h = HTensor::random(spec.lmax(), rng);
    let table = cached_cg_table(spec.lmax())?;
    let ht = crate::cg::h_to_htilde(&h, &compact_cg(&table))?;
    let dirs: Vec<Direction> = (0..edges).map(|_| Direction::random(rng)).collect();
    let start = Instant::now();
    let mut sink = 0.0;
    for r in &dirs {
        let out = match path {
            CostPath::Naive => naive_conv(&x, r, &h, spec)?,
            CostPath::So2 => so2_conv(&x, r, &ht, spec)?,
        };
        sink += out.data()[[0, 0]];
    }
    let elapsed = start.elapsed().as_secs_f64();
    // Keep the outputs observable so the loop cannot be optimized away.
    if !sink.is_finite() {
        return Err(Error::internal("non-finite convolution output in benchmark"));
    }
    let per_edge = count_cost(path, spec.lmax(), spec.mmax(), spec.channels());
    Ok(CostReport {
        multiplies: per_edge.multiplies * edges as u64,
        adds: per_edge.adds * edges as u64,
        peak_live_scalars: per_edge.peak_live_scalars,
        wall_time_seconds: elapsed,
    })
}
