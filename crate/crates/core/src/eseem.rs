//! Single-nucleus ESEEM decomposition, cancellation-condition analysis and
//! frequency extraction.
//!
//! Frequencies are reported in MHz on the echo-time axis t = 2τ, so a level
//! splitting ν appears as a line at ν/2.

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bathgen::{Bath, BathSpin, Sublattice, Tensor3};
use crate::cce::{CoherenceCurve, TauGrid};
use crate::error::{Error, Result};
use crate::hamiltonian::{nuclear_manifold_hamiltonian, CentralSpin};
use crate::spinops::{eig_hermitian, spin_matrices, CMat, Eigen, C64, ZERO};
use crate::units::{larmor_rad_per_us, TWO_PI};

/// Fields closer than this to the GSLAC (G) invalidate the secular manifolds.
pub const GSLAC_EXCLUSION_G: f64 = 50.0;

/// Δ below this (MHz) counts as an exact degeneracy.
pub const DEGENERATE_DELTA_MHZ: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct EseemTerms {
    pub nucleus_id: usize,
    pub tau: Vec<f64>,
    pub v0: f64,
    pub v_alpha: Vec<f64>,
    pub v_beta: Vec<f64>,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    /// R_α† R_β
    pub m: CMat,
    /// MHz, t axis; level differences within the first qubit manifold.
    pub frequencies_alpha: Vec<f64>,
    pub frequencies_beta: Vec<f64>,
}

impl EseemTerms {
    pub fn total(&self) -> Vec<f64> {
        (0..self.tau.len()).map(|k| self.v0 + self.v_alpha[k] + self.v_beta[k] + self.v_plus[k] + self.v_minus[k]).collect()
    }
}

pub fn check_secular(cs: &CentralSpin, b_gauss: f64) -> Result<()> {
    let g = cs.gslac_field();
    if (b_gauss - g).abs() <= GSLAC_EXCLUSION_G {
        return Err(Error::SecularInvalid(format!("{b_gauss} G is within {GSLAC_EXCLUSION_G} G of the level anticrossing at {g:.1} G")));
    }
    Ok(())
}

/// Eigenpairs of the two qubit-manifold Hamiltonians of one nucleus.
fn manifold_pair(cs: &CentralSpin, n: &BathSpin, b_gauss: f64) -> Result<(Eigen, Eigen, CMat)> {
    let (la, lb) = cs.qubit_levels;
    let ea = eig_hermitian(&nuclear_manifold_hamiltonian(n, la, b_gauss)?.h)?;
    let eb = eig_hermitian(&nuclear_manifold_hamiltonian(n, lb, b_gauss)?.h)?;
    let m = &ea.vectors.adjoint() * &eb.vectors;
    Ok((ea, eb, m))
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Class {
    V0,
    Alpha,
    Beta,
    Plus,
    Minus,
}

fn splittings(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            out.push((values[i] - values[j]).abs() / TWO_PI / 2.0);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Splits the quadruple eigen-sum
/// L = (1/d) Σ e^{−i(α_i−α_j)τ} e^{−i(β_k−β_l)τ} M_ik M*_jk M_jl M*_il
/// into V0, V_α, V_β, V₊ and V₋ (real parts).
///
/// Terms with |ω| below 1/span are placed in V0 with their τ = 0 value;
/// their small residual time dependence stays with the structural class so
/// the sum remains exact.
pub fn eseem_decompose(cs: &CentralSpin, nucleus: &BathSpin, nucleus_id: usize, b_gauss: f64, tau: &TauGrid) -> Result<EseemTerms> {
    check_secular(cs, b_gauss)?;
    let (ea, eb, m) = manifold_pair(cs, nucleus, b_gauss)?;
    let d = m.nrows();
    let thr = if tau.span() > 0.0 { 1.0 / tau.span() } else { f64::INFINITY };
    let nt = tau.len();
    let mut v0 = 0.0;
    let mut series = [vec![0.0; nt], vec![0.0; nt], vec![0.0; nt], vec![0.0; nt]];
    let inv_d = 1.0 / d as f64;
    for i in 0..d {
        for j in 0..d {
            let wa = ea.values[i] - ea.values[j];
            for k in 0..d {
                let mik = m[(i, k)];
                let mjk = m[(j, k)].conj();
                for l in 0..d {
                    let c = mik * mjk * m[(j, l)] * m[(i, l)].conj() * inv_d;
                    if c == ZERO {
                        continue;
                    }
                    let wb = eb.values[k] - eb.values[l];
                    let w = wa + wb;
                    let class = match (wa.abs() < thr, wb.abs() < thr) {
                        (true, true) => Class::V0,
                        (false, true) => Class::Alpha,
                        (true, false) => Class::Beta,
                        (false, false) if wa * wb > 0.0 => Class::Plus,
                        _ => Class::Minus,
                    };
                    let slow = w.abs() < thr;
                    if slow {
                        v0 += c.re;
                    }
                    let slot = match class {
                        Class::V0 | Class::Alpha => 0,
                        Class::Beta => 1,
                        Class::Plus => 2,
                        Class::Minus => 3,
                    };
                    let sink = &mut series[slot];
                    for (s, &t) in sink.iter_mut().zip(&tau.taus) {
                        let z = c * C64::from_polar(1.0, -w * t);
                        *s += if slow { z.re - c.re } else { z.re };
                    }
                }
            }
        }
    }
    let [v_alpha, v_beta, v_plus, v_minus] = series;
    Ok(EseemTerms {
        nucleus_id,
        tau: tau.taus.clone(),
        v0,
        v_alpha,
        v_beta,
        v_plus,
        v_minus,
        m,
        frequencies_alpha: splittings(&ea.values),
        frequencies_beta: splittings(&eb.values),
    })
}

/// Unmodulated part V0 only (no time series).
pub fn v0_of(cs: &CentralSpin, nucleus: &BathSpin, b_gauss: f64, span_tau_us: f64) -> Result<f64> {
    check_secular(cs, b_gauss)?;
    let (ea, eb, m) = manifold_pair(cs, nucleus, b_gauss)?;
    let d = m.nrows();
    let thr = 1.0 / span_tau_us;
    let mut v0 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let wa = ea.values[i] - ea.values[j];
            for k in 0..d {
                for l in 0..d {
                    let wb = eb.values[k] - eb.values[l];
                    if (wa + wb).abs() < thr {
                        v0 += (m[(i, k)] * m[(j, k)].conj() * m[(j, l)] * m[(i, l)].conj()).re;
                    }
                }
            }
        }
    }
    Ok(v0 / d as f64)
}

/// Analytic 1st-shell ¹⁴N lines (MHz, t axis).
#[derive(Clone, Debug, PartialEq)]
pub struct NnFrequencies {
    /// √((A_zz − ω)² + q²) with q = |(Q_xx − Q_yy)/2 − i Q_xy|
    pub dominant: f64,
    /// Largest m_s = 0 splitting.
    pub nu_alpha: f64,
    /// ν_α/2, s − ν_α/2, s, s + ν_α/2
    pub lines: Vec<f64>,
}

/// Closed-form modulation lines of an I = 1 nucleus with the qubit in
/// (0, +1). With `central` given, the second-order hyperfine shift through
/// the m_s = 0 level is folded into A_zz and Q.
pub fn nn_modulation_frequencies(a: &Tensor3, q: &Tensor3, gamma_n: f64, b_gauss: f64, central: Option<&CentralSpin>) -> Result<NnFrequencies> {
    let w = larmor_rad_per_us(gamma_n, b_gauss) / TWO_PI;
    let mut azz = a[2][2];
    let mut qe = *q;
    if let Some(cs) = central {
        let gap = cs.d + cs.gamma_e * 1e-3 * b_gauss / TWO_PI;
        if gap.abs() < 1e-6 {
            return Err(Error::Degenerate("m_s = +1 and 0 levels coincide".into()));
        }
        // K K† / 2Δ with K = A_x·I − i A_y·I
        let ax = a[0];
        let ay = a[1];
        let cross_z = ax[0] * ay[1] - ax[1] * ay[0];
        azz -= cross_z / (2.0 * gap);
        for r in 0..3 {
            for c in 0..3 {
                qe[r][c] += (ax[r] * ax[c] + ay[r] * ay[c]) / (2.0 * gap);
            }
        }
    }
    let qre = (qe[0][0] - qe[1][1]) / 2.0;
    let qim = qe[0][1];
    let s = ((azz - w).powi(2) + qre * qre + qim * qim).sqrt();
    // m_s = 0 manifold: −ω Iz + I·Q·I
    let sm = spin_matrices(1.0)?;
    let ops = [&sm.x, &sm.y, &sm.z];
    let mut h = CMat::zeros(3, 3);
    for r in 0..3 {
        for c in 0..3 {
            let mut v = -sm.z[(r, c)] * w;
            for x in 0..3 {
                for y in 0..3 {
                    v += (ops[x] * ops[y])[(r, c)] * q[x][y];
                }
            }
            h[(r, c)] = v;
        }
    }
    let e = eig_hermitian(&h)?;
    let nu_alpha = e.values[2] - e.values[0];
    let half = nu_alpha / 2.0;
    Ok(NnFrequencies { dominant: s, nu_alpha, lines: vec![half, s - half, s, s + half] })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixingKind {
    SingleQuantum,
    DoubleQuantum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingChannel {
    pub nucleus_id: usize,
    pub m_s: i8,
    /// Iz labels (m_i, m_j)
    pub levels: (f64, f64),
    pub kind: MixingKind,
    /// MHz
    pub delta: f64,
    /// MHz
    pub omega: f64,
}

impl MixingChannel {
    /// Ω/Δ, +∞ when Δ vanishes with Ω > 0.
    pub fn ratio(&self) -> f64 {
        channel_ratio(self.omega, self.delta)
    }
}

fn channel_ratio(omega: f64, delta: f64) -> f64 {
    if omega == 0.0 {
        0.0
    } else if delta < DEGENERATE_DELTA_MHZ {
        f64::INFINITY
    } else {
        omega / delta
    }
}

/// Δ and Ω for every |Δm_I| = 1, 2 channel of one nucleus.
pub fn nucleus_channels(n: &BathSpin, nucleus_id: usize, b_gauss: f64, m_s: i8) -> Result<Vec<MixingChannel>> {
    let h = nuclear_manifold_hamiltonian(n, m_s, b_gauss)?.h;
    let d = h.nrows();
    let spin = n.species.spin();
    let el = |i: usize, j: usize| h[(i, j)] / TWO_PI;
    let mut out = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let kind = match j - i {
                1 => MixingKind::SingleQuantum,
                2 => MixingKind::DoubleQuantum,
                _ => continue,
            };
            let (hii, hjj) = (el(i, i).re, el(j, j).re);
            let mut coupling = el(i, j);
            if kind == MixingKind::DoubleQuantum {
                let mean = 0.5 * (hii + hjj);
                for k in 0..d {
                    if k != i && k != j {
                        let gap = mean - el(k, k).re;
                        if gap.abs() > DEGENERATE_DELTA_MHZ {
                            coupling += el(i, k) * el(k, j) / gap;
                        }
                    }
                }
            }
            out.push(MixingChannel {
                nucleus_id,
                m_s,
                levels: (spin - i as f64, spin - j as f64),
                kind,
                delta: (hii - hjj).abs(),
                omega: coupling.norm(),
            });
        }
    }
    Ok(out)
}

pub fn cancellation_ratios(bath: &Bath, b_gauss: f64, m_s: i8) -> Result<Vec<MixingChannel>> {
    let mut out = Vec::new();
    for (k, n) in bath.spins.iter().enumerate() {
        out.extend(nucleus_channels(n, k, b_gauss, m_s)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TbReport {
    pub composition: String,
    pub b_grid: Vec<f64>,
    pub max_ratio: Vec<f64>,
    pub tb: Option<f64>,
    /// Fields used for Π V0 (the grid minus the GSLAC window).
    pub v0_b_grid: Vec<f64>,
    pub v0_product: Vec<f64>,
    pub v0_intercept: Option<f64>,
}

/// Largest Ω/Δ over all channels of the selected nuclei at each field.
pub fn max_ratio_series(bath: &Bath, b_grid: &[f64], m_s: i8, select: impl Fn(&BathSpin) -> bool + Sync) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let chosen: Vec<usize> = (0..bath.len()).filter(|&i| select(&bath.spins[i])).collect();
    b_grid
        .par_iter()
        .map(|&b| {
            let mut best: f64 = 0.0;
            for &i in &chosen {
                for c in nucleus_channels(&bath.spins[i], i, b, m_s)? {
                    best = best.max(c.ratio());
                }
            }
            Ok(best)
        })
        .collect()
}

/// Field above which the max ratio stays below 1, interpolated linearly
/// on the grid. Infinite ratios count as ≥ 1.
pub fn boundary_from_series(b_grid: &[f64], ratio: &[f64]) -> Result<f64> {
    let last = ratio.iter().rposition(|&r| r >= 1.0).ok_or(Error::NoCrossing)?;
    if last + 1 == ratio.len() {
        return Err(Error::NoCrossing);
    }
    let (r0, r1) = (ratio[last], ratio[last + 1]);
    let (b0, b1) = (b_grid[last], b_grid[last + 1]);
    if !r0.is_finite() {
        return Ok(b0);
    }
    Ok(b0 + (r0 - 1.0) / (r0 - r1) * (b1 - b0))
}

/// TB from the boron-sublattice channels.
pub fn transition_boundary(bath: &Bath, b_grid: &[f64], m_s: i8) -> Result<(Vec<f64>, f64)> {
    validate_grid(b_grid)?;
    let series = max_ratio_series(bath, b_grid, m_s, |s| s.site.sublattice == Sublattice::B)?;
    let tb = boundary_from_series(b_grid, &series)?;
    Ok((series, tb))
}

fn validate_grid(b_grid: &[f64]) -> Result<()> {
    if b_grid.len() < 2 || b_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("field grid needs >= 2 strictly increasing values".into()));
    }
    Ok(())
}

/// Π_i V0,i over the bath at each field.
pub fn v0_product(cs: &CentralSpin, bath: &Bath, b_grid: &[f64], span_tau_us: f64) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    validate_grid(b_grid)?;
    b_grid
        .par_iter()
        .map(|&b| {
            let mut p = 1.0;
            for n in &bath.spins {
                p *= v0_of(cs, n, b, span_tau_us)?;
            }
            Ok(p)
        })
        .collect()
}

/// Points in the sliding window used to find the steepest rising segment.
pub const EDGE_WINDOW: usize = 5;

/// Zero crossing of the tangent to the rising edge of the product: the
/// least-squares line through the `EDGE_WINDOW` consecutive points, after
/// the global minimum, with the largest fitted slope.
pub fn rising_edge_intercept(b_grid: &[f64], p: &[f64]) -> Result<f64> {
    let imin = (0..p.len()).min_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).ok_or(Error::NoCrossing)?;
    if p.len() - imin < EDGE_WINDOW {
        return Err(Error::FitFailed("too few points after the minimum".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for start in imin..=p.len() - EDGE_WINDOW {
        let (slope, icpt) = line_fit(&b_grid[start..start + EDGE_WINDOW], &p[start..start + EDGE_WINDOW]);
        if best.map_or(true, |(s, _)| slope > s) {
            best = Some((slope, icpt));
        }
    }
    let (slope, icpt) = best.unwrap();
    if !(slope > 0.0) {
        return Err(Error::FitFailed("rising edge has non-positive slope".into()));
    }
    Ok(-icpt / slope)
}

/// (slope, intercept) of the least-squares line y = a + b x.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// TB and Π V0 analysis on one grid. Fields inside the GSLAC window are
/// left out of the product.
pub fn tb_report(cs: &CentralSpin, bath: &Bath, b_grid: &[f64], m_s: i8, span_tau_us: f64) -> Result<TbReport> {
    validate_grid(b_grid)?;
    let series = max_ratio_series(bath, b_grid, m_s, |s| s.site.sublattice == Sublattice::B)?;
    let tb = boundary_from_series(b_grid, &series).ok();
    let v0_grid: Vec<f64> = b_grid.iter().copied().filter(|&b| check_secular(cs, b).is_ok()).collect();
    let prod = v0_product(cs, bath, &v0_grid, span_tau_us)?;
    let intercept = rising_edge_intercept(&v0_grid, &prod).ok();
    Ok(TbReport {
        composition: bath.composition.clone(),
        b_grid: b_grid.to_vec(),
        max_ratio: series,
        tb,
        v0_b_grid: v0_grid,
        v0_product: prod,
        v0_intercept: intercept,
    })
}

fn uniform_step(t: &[f64]) -> Result<f64> {
    if t.len() < 4 {
        return Err(Error::InvalidArgument("need at least 4 samples".into()));
    }
    let dt = t[1] - t[0];
    if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::InvalidArgument("frequency analysis needs a uniform time grid".into()));
    }
    Ok(dt)
}

/// Magnitude spectrum of (x − mean) on a grid of step dt: (frequencies, |X|).
pub fn spectrum(x: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2 + 1;
    let f = (0..half).map(|k| k as f64 / (n as f64 * dt)).collect();
    let a = buf[..half].iter().map(|z| z.norm()).collect();
    (f, a)
}

fn peak_in(f: &[f64], a: &[f64], lo: f64, hi: f64) -> Option<f64> {
    let cand = (1..a.len()).filter(|&k| f[k] >= lo && f[k] <= hi);
    let k = cand.max_by(|&x, &y| a[x].partial_cmp(&a[y]).unwrap())?;
    let df = f[1] - f[0];
    if k == 0 || k + 1 >= a.len() {
        return Some(f[k]);
    }
    let (y0, y1, y2) = (a[k - 1], a[k], a[k + 1]);
    let den = y0 - 2.0 * y1 + y2;
    let shift = if den.abs() > 0.0 { 0.5 * (y0 - y2) / den } else { 0.0 };
    Some(f[k] + shift.clamp(-0.5, 0.5) * df)
}

/// Peak of the Fourier magnitude of |L| − mean on the t = 2τ axis (MHz),
/// refined by a parabola through the three bins around the maximum.
/// `None` for a flat signal.
pub fn dominant_frequency(curve: &CoherenceCurve) -> Result<Option<f64>> {
    dominant_frequency_in_band(curve, 0.0, f64::INFINITY)
}

pub fn dominant_frequency_in_band(curve: &CoherenceCurve, lo_mhz: f64, hi_mhz: f64) -> Result<Option<f64>> {
    let x = curve.abs();
    dominant_frequency_of(&curve.t(), &x, lo_mhz, hi_mhz)
}

pub fn dominant_frequency_of(t: &[f64], x: &[f64], lo_mhz: f64, hi_mhz: f64) -> Result<Option<f64>> {
    let dt = uniform_step(t)?;
    let (mn, mx) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    if mx - mn < 1e-6 {
        return Ok(None);
    }
    let (f, a) = spectrum(x, dt);
    Ok(peak_in(&f, &a, lo_mhz, hi_mhz))
}

/// Amplitude of the strongest Fourier component in a band, in units of the
/// signal (a pure c·cos gives c).
pub fn modulation_amplitude(t: &[f64], x: &[f64], lo_mhz: f64, hi_mhz: f64) -> Result<f64> {
    let dt = uniform_step(t)?;
    let (f, a) = spectrum(x, dt);
    let n = x.len() as f64;
    Ok((1..a.len()).filter(|&k| f[k] >= lo_mhz && f[k] <= hi_mhz).map(|k| 2.0 * a[k] / n).fold(0.0, f64::max))
}

/// Strongest line in [lo, hi] after removing a cubic trend and applying a
/// Hann window: (frequency MHz, amplitude in units of x), or `None` if the
/// band holds no bin. Used where a slow decay would otherwise leak into a
/// low-frequency band.
pub fn windowed_line(t: &[f64], x: &[f64], lo_mhz: f64, hi_mhz: f64) -> Result<Option<(f64, f64)>> {
    let dt = uniform_step(t)?;
    let n = x.len();
    if n < 8 {
        return Err(Error::InvalidArgument("need at least 8 samples".into()));
    }
    let res = detrend_cubic(t, x);
    let w: Vec<f64> = (0..n).map(|k| 0.5 - 0.5 * (TWO_PI * k as f64 / (n - 1) as f64).cos()).collect();
    let wsum: f64 = w.iter().sum();
    let mut buf: Vec<C64> = res.iter().zip(&w).map(|(r, w)| C64::new(r * w, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let best = (1..n / 2 + 1)
        .map(|k| (k as f64 / (n as f64 * dt), 2.0 * buf[k].norm() / wsum))
        .filter(|(f, _)| *f >= lo_mhz && *f <= hi_mhz)
        .max_by(|a, b| a.1.total_cmp(&b.1));
    Ok(best)
}

/// x minus its least-squares cubic in t (Legendre basis on the scaled axis).
fn detrend_cubic(t: &[f64], x: &[f64]) -> Vec<f64> {
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let s = |ti: f64| if t1 > t0 { 2.0 * (ti - t0) / (t1 - t0) - 1.0 } else { 0.0 };
    let basis = |u: f64| [1.0, u, 0.5 * (3.0 * u * u - 1.0), 0.5 * (5.0 * u * u * u - 3.0 * u)];
    let mut ata = [[0.0; 4]; 4];
    let mut atb = [0.0; 4];
    for (&ti, &xi) in t.iter().zip(x) {
        let p = basis(s(ti));
        for a in 0..4 {
            atb[a] += p[a] * xi;
            for b in 0..4 {
                ata[a][b] += p[a] * p[b];
            }
        }
    }
    let c = solve4(ata, atb);
    t.iter().zip(x).map(|(&ti, &xi)| xi - basis(s(ti)).iter().zip(&c).map(|(p, c)| p * c).sum::<f64>()).collect()
}

/// Gaussian elimination with partial pivoting.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> [f64; 4] {
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        if a[col][col].abs() < 1e-300 {
            continue;
        }
        for r in col + 1..4 {
            let f = a[r][col] / a[col][col];
            for c in col..4 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for r in (0..4).rev() {
        let s: f64 = (r + 1..4).map(|c| a[r][c] * x[c]).sum();
        x[r] = if a[r][r].abs() < 1e-300 { 0.0 } else { (b[r] - s) / a[r][r] };
    }
    x
}

/// max_τ (1 − |L|)
pub fn decay_depth(l: &[C64]) -> f64 {
    l.iter().map(|z| 1.0 - z.norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bathgen::{build_bath, BathConfig, Composition, LatticeSite, Species, TensorSource};
    use crate::cce::{hahn_echo_cluster, EchoKind, Method};
    use crate::spinops::{identity, max_abs};

    const Z: Tensor3 = [[0.0; 3]; 3];

    fn bare(sp: Species, a: Tensor3, q: Tensor3) -> BathSpin {
        BathSpin {
            site: LatticeSite { position: [2.0, 1.0, 3.33], sublattice: sp.sublattice(), layer_index: 1, shell_index: 0, cell: (0, 0) },
            species: sp,
            a,
            q,
            a_source: TensorSource::DftTable,
        }
    }

    fn shipped(radius: f64) -> Bath {
        let mut cfg = BathConfig::new(Composition::from_label("11B14N").unwrap(), radius);
        cfg.r_dipole = radius;
        build_bath(&cfg).unwrap()
    }

    #[test]
    fn uncoupled_nucleus_is_unmodulated() {
        let cs = CentralSpin::default();
        let tau = TauGrid::uniform(2.0, 64).unwrap();
        let t = eseem_decompose(&cs, &bare(Species::B11, Z, Z), 0, 700.0, &tau).unwrap();
        let mut mabs = t.m.clone();
        for k in 0..mabs.nrows() {
            for l in 0..mabs.ncols() {
                mabs[(k, l)] = C64::new(mabs[(k, l)].norm(), 0.0);
            }
        }
        assert!(max_abs((&mabs - &identity(4)).as_ref()) < 1e-12);
        assert!((t.v0 - 1.0).abs() < 1e-12);
        for v in [&t.v_alpha, &t.v_beta, &t.v_plus, &t.v_minus] {
            assert!(v.iter().all(|x| x.abs() < 1e-12));
        }
    }

    #[test]
    fn decomposition_sums_to_direct_echo() {
        let cs = CentralSpin::default();
        let tau = TauGrid::uniform(3.0, 200).unwrap();
        let bath = shipped(4.0);
        for (k, n) in bath.spins.iter().enumerate() {
            for b in [500.0, 5000.0] {
                let t = eseem_decompose(&cs, n, k, b, &tau).unwrap();
                let direct = hahn_echo_cluster(&cs, &[n], &[], b, &tau.taus, EchoKind::Secular { mediated: false }).unwrap();
                for (x, y) in t.total().iter().zip(&direct) {
                    assert!((x - y.re).abs() < 1e-8);
                }
                assert!((0.0..=1.0 + 1e-12).contains(&t.v0));
            }
        }
    }

    #[test]
    fn gslac_window_rejected() {
        let cs = CentralSpin::default();
        let tau = TauGrid::uniform(1.0, 8).unwrap();
        let err = eseem_decompose(&cs, &bare(Species::N14, Z, Z), 0, 1250.0, &tau).unwrap_err();
        assert!(matches!(err, Error::SecularInvalid(_)));
        assert!(eseem_decompose(&cs, &bare(Species::N14, Z, Z), 0, 1300.0, &tau).is_ok());
    }

    #[test]
    fn closed_form_reduces_to_larmor() {
        let f = nn_modulation_frequencies(&Z, &Z, Species::N14.gamma(), 800.0, None).unwrap();
        let w = Species::N14.gamma() * 1e-3 * 800.0 / TWO_PI;
        assert!((f.dominant - w).abs() < 1e-12);
    }

    fn first_shell_nitrogen() -> BathSpin {
        let bath = shipped(2.0);
        bath.spins.into_iter().find(|s| s.site.shell_index == 1).unwrap()
    }

    #[test]
    fn closed_form_first_shell_line() {
        let n = first_shell_nitrogen();
        assert!((n.a[2][2] - 47.6).abs() < 1e-6);
        let cs = CentralSpin::default();
        for b in [0.0, 100.0, 500.0, 1000.0] {
            let f = nn_modulation_frequencies(&n.a, &n.q, n.species.gamma(), b, Some(&cs)).unwrap();
            assert!((f.dominant - 46.7).abs() < 0.2, "{b} G: {}", f.dominant);
        }
    }

    #[test]
    fn closed_form_in_eigen_frequencies() {
        let n = first_shell_nitrogen();
        let cs = CentralSpin::default();
        let tau = TauGrid::uniform(2.0, 16).unwrap();
        for b in [100.0, 500.0, 1000.0] {
            let f = nn_modulation_frequencies(&n.a, &n.q, n.species.gamma(), b, None).unwrap();
            let t = eseem_decompose(&cs, &n, 0, b, &tau).unwrap();
            assert!(t.frequencies_beta.iter().any(|x| (x - f.dominant).abs() < 0.1), "{b}: {} vs {:?}", f.dominant, t.frequencies_beta);
        }
    }

    #[test]
    fn v0_rises_toward_one_with_field() {
        let cs = CentralSpin::default();
        let bath = shipped(4.0);
        let tau = TauGrid::uniform(200.0, 16).unwrap();
        for n in bath.spins.iter().filter(|s| s.site.shell_index == 5) {
            let lo = eseem_decompose(&cs, n, 0, 500.0, &tau).unwrap().v0;
            let hi = eseem_decompose(&cs, n, 0, 30000.0, &tau).unwrap().v0;
            assert!(lo < 0.8, "{lo}");
            assert!(hi > 0.9 && hi > lo, "{hi}");
        }
    }

    #[test]
    fn diagonal_manifold_has_no_mixing() {
        let mut a = Z;
        a[2][2] = 3.0;
        let ch = nucleus_channels(&bare(Species::B10, a, Z), 0, 900.0, 1).unwrap();
        assert_eq!(ch.iter().filter(|c| c.kind == MixingKind::SingleQuantum).count(), 6);
        assert_eq!(ch.iter().filter(|c| c.kind == MixingKind::DoubleQuantum).count(), 5);
        assert!(ch.iter().all(|c| c.omega == 0.0 && c.ratio() == 0.0));
    }

    #[test]
    fn degenerate_channel_is_infinite() {
        let c = MixingChannel { nucleus_id: 0, m_s: 1, levels: (1.0, -1.0), kind: MixingKind::DoubleQuantum, delta: 0.0, omega: 0.1 };
        assert!(c.ratio().is_infinite());
    }

    #[test]
    fn boundary_interpolates() {
        let b = [1000.0, 2000.0, 3000.0];
        assert!((boundary_from_series(&b, &[3.0, 2.0, 0.0]).unwrap() - 2500.0).abs() < 1e-9);
        assert!(matches!(boundary_from_series(&b, &[0.5, 0.2, 0.1]), Err(Error::NoCrossing)));
        assert!(matches!(boundary_from_series(&b, &[0.5, 0.2, 1.1]), Err(Error::NoCrossing)));
        assert_eq!(boundary_from_series(&b, &[0.5, f64::INFINITY, 0.1]).unwrap(), 2000.0);
    }

    #[test]
    fn edge_intercept_of_ramp() {
        let b: Vec<f64> = (0..40).map(|k| 250.0 * k as f64).collect();
        let p: Vec<f64> = b.iter().map(|&x: &f64| ((x - 2000.0) / 4000.0).clamp(0.0, 1.0)).collect();
        assert!((rising_edge_intercept(&b, &p).unwrap() - 2000.0).abs() < 1e-6);
    }

    #[test]
    fn product_of_uncoupled_bath_is_one() {
        let cs = CentralSpin::default();
        let bath = Bath::from_spins(vec![bare(Species::N14, Z, Z)], 5.0);
        let p = v0_product(&cs, &bath, &[500.0, 2000.0, 5000.0], 100.0).unwrap();
        assert!(p.iter().all(|x| (x - 1.0).abs() < 1e-12));
    }

    fn synthetic(f: f64, n: usize, dt: f64) -> CoherenceCurve {
        let tau: Vec<f64> = (0..n).map(|k| k as f64 * dt / 2.0).collect();
        let l = tau.iter().map(|&t| C64::new(0.7 + 0.2 * (TWO_PI * f * 2.0 * t).cos(), 0.0)).collect();
        CoherenceCurve { b_gauss: 0.0, method: Method::Gcce(1), tau, l, seed: 0, composition: String::new(), clamped_points: 0 }
    }

    #[test]
    fn dominant_frequency_of_cosine() {
        let c = synthetic(47.0, 512, 0.004);
        let res = 1.0 / (512.0 * 0.004);
        let f = dominant_frequency(&c).unwrap().unwrap();
        assert!((f - 47.0).abs() <= res / 2.0, "{f}");
        let amp = modulation_amplitude(&c.t(), &c.abs(), 40.0, 55.0).unwrap();
        assert!((amp - 0.2).abs() < 0.05);
    }

    #[test]
    fn flat_signal_has_no_peak() {
        let mut c = synthetic(1.0, 64, 0.01);
        c.l.iter_mut().for_each(|z| *z = C64::new(0.5, 0.0));
        assert_eq!(dominant_frequency(&c).unwrap(), None);
        c.tau[3] += 1e-3;
        assert!(dominant_frequency(&c).is_err());
    }

    #[test]
    fn windowed_line_ignores_trend() {
        let t: Vec<f64> = (0..1024).map(|k| k as f64 * 0.02).collect();
        let x: Vec<f64> = t.iter().map(|&t| (-t / 15.0).exp() + 0.01 * (TWO_PI * 0.7 * t).cos()).collect();
        let (f, a) = windowed_line(&t, &x, 0.5, 1.0).unwrap().unwrap();
        assert!((f - 0.7).abs() < 0.05, "{f}");
        assert!((a - 0.01).abs() < 0.002, "{a}");
        let y: Vec<f64> = t.iter().map(|&t| (-t / 15.0).exp()).collect();
        assert!(windowed_line(&t, &y, 0.5, 1.0).unwrap().unwrap().1 < 1e-4);
    }
}
