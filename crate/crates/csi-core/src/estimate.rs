//! Joint AoA-ToF spectral estimation on a 2D (angle, delay) grid.
//!
//! The default estimator is the Bartlett matched filter
//! `P(θ, τ) = Σ_t |Σ_{m,k} H_t[m][k] · conj(a_m(θ) · g_k(τ))|²`,
//! normalized to a unit maximum. MUSIC with subband smoothing is available as
//! an alternative. Grid evaluation parallelizes over delay columns; each
//! column is reduced sequentially in packet order, so results are identical
//! for any thread count.

use std::io::{self, Write};
use std::ops::Range;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{subcarrier_frequency, ArrayGeometry, CaptureConfig, CsiSession};
use crate::SPEED_OF_LIGHT;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("estimation window {start}..{end} outside session of {n} packets")]
    WindowOutOfRange { start: usize, end: usize, n: usize },
    #[error("estimation window is empty")]
    EmptyWindow,
    #[error("session has {0} free-space chains, need at least 2")]
    TooFewChains(usize),
    #[error("geometry has {geometry} antennas but session has {chains} free-space chains")]
    GeometryMismatch { geometry: usize, chains: usize },
    #[error("covariance is degenerate for music ({snapshots} snapshots < {dim} dimensions); use bartlett")]
    DegenerateCovariance { snapshots: usize, dim: usize },
    #[error("estimate/truth length mismatch: {estimates} vs {truths}")]
    LengthMismatch { estimates: usize, truths: usize },
}

/// Rectangular search grid over angle (degrees) and delay (seconds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub angle_lo_deg: f64,
    pub angle_hi_deg: f64,
    pub angle_step_deg: f64,
    pub delay_lo: f64,
    pub delay_hi: f64,
    pub delay_step: f64,
}

impl Default for GridSpec {
    /// -90°..90° in 1° steps, 0..200 ns in 0.5 ns steps.
    fn default() -> Self {
        Self {
            angle_lo_deg: -90.0,
            angle_hi_deg: 90.0,
            angle_step_deg: 1.0,
            delay_lo: 0.0,
            delay_hi: 200e-9,
            delay_step: 0.5e-9,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.angle_lo_deg < self.angle_hi_deg) || !(self.delay_lo < self.delay_hi) {
            return Err(EstimateError::InvalidGrid("range lo must be < hi".into()));
        }
        if !(self.angle_step_deg > 0.0) || !(self.delay_step > 0.0) {
            return Err(EstimateError::InvalidGrid("steps must be > 0".into()));
        }
        if self.n_angles() < 2 || self.n_delays() < 2 {
            return Err(EstimateError::InvalidGrid("grid must have at least 2 cells per axis".into()));
        }
        Ok(())
    }

    pub fn n_angles(&self) -> usize {
        ((self.angle_hi_deg - self.angle_lo_deg) / self.angle_step_deg).floor() as usize + 1
    }

    pub fn n_delays(&self) -> usize {
        ((self.delay_hi - self.delay_lo) / self.delay_step).floor() as usize + 1
    }

    pub fn angle_at(&self, i: usize) -> f64 {
        self.angle_lo_deg + i as f64 * self.angle_step_deg
    }

    pub fn delay_at(&self, j: usize) -> f64 {
        self.delay_lo + j as f64 * self.delay_step
    }
}

/// Power surface over (angle, delay), row-major by angle, normalized so the
/// maximum cell is 1. Ties at the maximum resolve to the smallest
/// (angle index, delay index) in row-major scan order.
#[derive(Debug, Clone)]
pub struct SpectrumGrid {
    pub grid: GridSpec,
    power: Vec<f64>,
}

impl SpectrumGrid {
    fn from_raw(grid: GridSpec, mut power: Vec<f64>) -> Self {
        let max = power.iter().fold(0.0f64, |a, &b| if b > a { b } else { a });
        if max > 0.0 {
            for p in &mut power {
                *p /= max;
            }
        }
        Self { grid, power }
    }

    pub fn at(&self, angle_idx: usize, delay_idx: usize) -> f64 {
        self.power[angle_idx * self.grid.n_delays() + delay_idx]
    }

    /// Cell of the global maximum; ties break to the smallest indices.
    pub fn argmax_cell(&self) -> (usize, usize) {
        let nd = self.grid.n_delays();
        let mut best = (0usize, 0.0f64);
        for (idx, &p) in self.power.iter().enumerate() {
            if p > best.1 {
                best = (idx, p);
            }
        }
        (best.0 / nd, best.0 % nd)
    }

    /// Export as CSV: header row of delays in ns, first column angles in
    /// degrees, cells are normalized power.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "angle_deg")?;
        for j in 0..self.grid.n_delays() {
            write!(w, ",{:?}", self.grid.delay_at(j) * 1e9)?;
        }
        writeln!(w)?;
        for i in 0..self.grid.n_angles() {
            write!(w, "{:?}", self.grid.angle_at(i))?;
            for j in 0..self.grid.n_delays() {
                write!(w, ",{:?}", self.at(i, j))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// One extracted propagation path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    pub aoa_deg: f64,
    /// Relative to the session's delay origin; absolute only after
    /// reference-cable compensation.
    pub tof: f64,
    /// Normalized spectrum power at the peak.
    pub power: f64,
}

/// Spectral estimator selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bartlett,
    /// Subspace estimator on antenna ⊗ subcarrier-subband snapshots.
    Music { n_sources: usize, smoothing: usize },
}

impl Default for Method {
    fn default() -> Self {
        Method::Bartlett
    }
}

/// Steering vector of a uniform linear array toward `theta` degrees:
/// element m is `exp(-j 2π m spacing sin(θ) f_c / c)`.
pub fn steering_aoa(theta_deg: f64, geometry: &ArrayGeometry, config: &CaptureConfig) -> Vec<Complex64> {
    let theta = (theta_deg - geometry.orientation_deg).to_radians();
    let phase_step = -2.0 * std::f64::consts::PI * geometry.spacing * theta.sin() * config.center_freq
        / SPEED_OF_LIGHT;
    (0..geometry.n_antennas).map(|m| Complex64::cis(m as f64 * phase_step)).collect()
}

/// Delay steering across subcarriers: element k is
/// `exp(-j 2π (f_k - f_0) τ)` with `f_0` the lowest subcarrier frequency.
pub fn steering_tof(tau: f64, config: &CaptureConfig) -> Vec<Complex64> {
    let f0 = subcarrier_frequency(0, config).expect("subcarrier 0 exists");
    (0..config.n_subcarriers)
        .map(|k| {
            let fk = subcarrier_frequency(k, config).expect("in range");
            Complex64::cis(-2.0 * std::f64::consts::PI * (fk - f0) * tau)
        })
        .collect()
}

/// Free-space chain indices of a session (all chains minus the reference).
fn free_chains(session: &CsiSession) -> Vec<usize> {
    (0..session.config.n_chains)
        .filter(|&c| session.config.ref_chain != Some(c))
        .collect()
}

/// Joint AoA-ToF power spectrum over a packet window.
pub fn aoa_tof_spectrum(
    session: &CsiSession,
    window: Range<usize>,
    grid: &GridSpec,
    method: Method,
) -> Result<SpectrumGrid, EstimateError> {
    if window.end > session.n_packets() || window.start >= window.end {
        if window.start >= window.end {
            return Err(EstimateError::EmptyWindow);
        }
        return Err(EstimateError::WindowOutOfRange {
            start: window.start,
            end: window.end,
            n: session.n_packets(),
        });
    }
    let packets: Vec<usize> = window.collect();
    spectrum_for_packets(session, &packets, grid, method)
}

/// Spectrum over an explicit packet selection (e.g. a strided window).
pub fn spectrum_for_packets(
    session: &CsiSession,
    packets: &[usize],
    grid: &GridSpec,
    method: Method,
) -> Result<SpectrumGrid, EstimateError> {
    grid.validate()?;
    if packets.is_empty() {
        return Err(EstimateError::EmptyWindow);
    }
    let chains = free_chains(session);
    if chains.len() < 2 {
        return Err(EstimateError::TooFewChains(chains.len()));
    }
    if session.geometry.n_antennas != chains.len() {
        return Err(EstimateError::GeometryMismatch {
            geometry: session.geometry.n_antennas,
            chains: chains.len(),
        });
    }
    match method {
        Method::Bartlett => Ok(bartlett(session, packets, &chains, grid)),
        Method::Music { n_sources, smoothing } => music(session, packets, &chains, grid, n_sources, smoothing),
    }
}

/// Planar (structure-of-arrays) copy of the selected packets, packet-major
/// then chain: `re[(p * n_ant + m) * n_sub + k]`.
struct Planes {
    re: Vec<f64>,
    im: Vec<f64>,
    n_ant: usize,
    n_sub: usize,
    n_pkt: usize,
}

impl Planes {
    fn gather(session: &CsiSession, packets: &[usize], chains: &[usize]) -> Self {
        let n_sub = session.config.n_subcarriers;
        let n_ant = chains.len();
        let mut re = Vec::with_capacity(packets.len() * n_ant * n_sub);
        let mut im = Vec::with_capacity(packets.len() * n_ant * n_sub);
        for &t in packets {
            for &c in chains {
                for s in session.chain_row(t, c) {
                    re.push(s.re);
                    im.push(s.im);
                }
            }
        }
        Self { re, im, n_ant, n_sub, n_pkt: packets.len() }
    }
}

fn delay_kernel(session: &CsiSession, tau: f64) -> (Vec<f64>, Vec<f64>) {
    // conj(g_k(τ)) split into planes.
    let g = steering_tof(tau, &session.config);
    (g.iter().map(|z| z.re).collect(), g.iter().map(|z| -z.im).collect())
}

fn bartlett(session: &CsiSession, packets: &[usize], chains: &[usize], grid: &GridSpec) -> SpectrumGrid {
    let planes = Planes::gather(session, packets, chains);
    let n_ant = planes.n_ant;
    let n_sub = planes.n_sub;
    let n_angles = grid.n_angles();
    let n_delays = grid.n_delays();

    // conj(a_m(θ)) per angle, split into planes.
    let steers: Vec<(Vec<f64>, Vec<f64>)> = (0..n_angles)
        .map(|i| {
            let a = steering_aoa(grid.angle_at(i), &session.geometry, &session.config);
            (a.iter().map(|z| z.re).collect(), a.iter().map(|z| -z.im).collect())
        })
        .collect();

    // One column of angle powers per delay; columns are independent.
    let columns: Vec<Vec<f64>> = (0..n_delays)
        .into_par_iter()
        .map(|di| {
            let (g_re, g_im) = delay_kernel(session, grid.delay_at(di));
            // M = Σ_t v v^H with v_m = Σ_k H[t][m][k] conj(g_k).
            let mut m_re = vec![0.0f64; n_ant * n_ant];
            let mut m_im = vec![0.0f64; n_ant * n_ant];
            let mut v_re = vec![0.0f64; n_ant];
            let mut v_im = vec![0.0f64; n_ant];
            for t in 0..planes.n_pkt {
                for m in 0..n_ant {
                    let base = (t * n_ant + m) * n_sub;
                    let hr = &planes.re[base..base + n_sub];
                    let hi = &planes.im[base..base + n_sub];
                    let (mut ar, mut ai) = (0.0f64, 0.0f64);
                    for k in 0..n_sub {
                        ar += hr[k] * g_re[k] - hi[k] * g_im[k];
                        ai += hr[k] * g_im[k] + hi[k] * g_re[k];
                    }
                    v_re[m] = ar;
                    v_im[m] = ai;
                }
                for i in 0..n_ant {
                    for j in 0..n_ant {
                        m_re[i * n_ant + j] += v_re[i] * v_re[j] + v_im[i] * v_im[j];
                        m_im[i * n_ant + j] += v_im[i] * v_re[j] - v_re[i] * v_im[j];
                    }
                }
            }
            // P(θ) = Re(a^H M a), using the conjugated steering planes.
            steers
                .iter()
                .map(|(c_re, c_im)| {
                    let mut p = 0.0f64;
                    for i in 0..n_ant {
                        for j in 0..n_ant {
                            // conj(a_i) a_j, with stored planes already conjugated:
                            // stored_i = conj(a_i) => conj(a_i) a_j = stored_i * conj(stored_j)
                            let cre = c_re[i] * c_re[j] + c_im[i] * c_im[j];
                            let cim = c_im[i] * c_re[j] - c_re[i] * c_im[j];
                            p += cre * m_re[i * n_ant + j] - cim * m_im[i * n_ant + j];
                        }
                    }
                    p
                })
                .collect()
        })
        .collect();

    let mut power = vec![0.0f64; n_angles * n_delays];
    for (di, col) in columns.iter().enumerate() {
        for (ai, &p) in col.iter().enumerate() {
            power[ai * n_delays + di] = p;
        }
    }
    SpectrumGrid::from_raw(grid.clone(), power)
}

fn music(
    session: &CsiSession,
    packets: &[usize],
    chains: &[usize],
    grid: &GridSpec,
    n_sources: usize,
    smoothing: usize,
) -> Result<SpectrumGrid, EstimateError> {
    use nalgebra::DMatrix;

    let n_sub = session.config.n_subcarriers;
    let n_ant = chains.len();
    let smoothing = smoothing.max(1);
    let sub_len = (n_sub / smoothing).max(2);
    let stride = (sub_len / 2).max(1);
    let starts: Vec<usize> = (0..=(n_sub - sub_len)).step_by(stride).collect();
    let dim = n_ant * sub_len;
    let n_snap = packets.len() * starts.len();
    if n_snap < dim {
        return Err(EstimateError::DegenerateCovariance { snapshots: n_snap, dim });
    }

    let mut cov = DMatrix::<Complex64>::zeros(dim, dim);
    let mut snap = vec![Complex64::new(0.0, 0.0); dim];
    for &t in packets {
        for &b in &starts {
            for (mi, &c) in chains.iter().enumerate() {
                let row = session.chain_row(t, c);
                snap[mi * sub_len..(mi + 1) * sub_len].copy_from_slice(&row[b..b + sub_len]);
            }
            for i in 0..dim {
                for j in 0..dim {
                    cov[(i, j)] += snap[i] * snap[j].conj();
                }
            }
        }
    }
    let scale = Complex64::new(1.0 / n_snap as f64, 0.0);
    cov *= scale;

    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let n_sig = n_sources.min(dim - 1);
    // Signal-subspace complement: s^H Π_n s = |s|² - |E_s^H s|².
    let sig: Vec<Vec<Complex64>> = order[..n_sig]
        .iter()
        .map(|&c| eig.eigenvectors.column(c).iter().cloned().collect())
        .collect();

    let n_angles = grid.n_angles();
    let n_delays = grid.n_delays();
    let spacing = session.config.subcarrier_spacing();

    let steers: Vec<Vec<Complex64>> = (0..n_angles)
        .map(|i| steering_aoa(grid.angle_at(i), &session.geometry, &session.config))
        .collect();

    let columns: Vec<Vec<f64>> = (0..n_delays)
        .into_par_iter()
        .map(|di| {
            let tau = grid.delay_at(di);
            // Delay steering within one subband (relative frequencies).
            let g: Vec<Complex64> = (0..sub_len)
                .map(|l| Complex64::cis(-2.0 * std::f64::consts::PI * l as f64 * spacing * tau))
                .collect();
            steers
                .iter()
                .map(|a| {
                    let norm2 = (n_ant * sub_len) as f64;
                    let mut proj2 = 0.0f64;
                    for e in &sig {
                        let mut acc = Complex64::new(0.0, 0.0);
                        for m in 0..n_ant {
                            let am = a[m];
                            let e_row = &e[m * sub_len..(m + 1) * sub_len];
                            let mut inner = Complex64::new(0.0, 0.0);
                            for l in 0..sub_len {
                                inner += e_row[l].conj() * g[l];
                            }
                            acc += inner * am;
                        }
                        proj2 += acc.norm_sqr();
                    }
                    let denom = (norm2 - proj2).max(1e-12 * norm2);
                    1.0 / denom
                })
                .collect()
        })
        .collect();

    let mut power = vec![0.0f64; n_angles * n_delays];
    for (di, col) in columns.iter().enumerate() {
        for (ai, &p) in col.iter().enumerate() {
            power[ai * n_delays + di] = p;
        }
    }
    Ok(SpectrumGrid::from_raw(grid.clone(), power))
}

fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom == 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

fn interpolate_at(spectrum: &SpectrumGrid, ai: usize, di: usize) -> PathEstimate {
    let grid = &spectrum.grid;
    let da = if ai > 0 && ai + 1 < grid.n_angles() {
        parabolic_offset(spectrum.at(ai - 1, di), spectrum.at(ai, di), spectrum.at(ai + 1, di))
    } else {
        0.0
    };
    let dd = if di > 0 && di + 1 < grid.n_delays() {
        parabolic_offset(spectrum.at(ai, di - 1), spectrum.at(ai, di), spectrum.at(ai, di + 1))
    } else {
        0.0
    };
    PathEstimate {
        aoa_deg: grid.angle_lo_deg + (ai as f64 + da) * grid.angle_step_deg,
        tof: grid.delay_lo + (di as f64 + dd) * grid.delay_step,
        power: spectrum.at(ai, di),
    }
}

/// Global peak refined by separable quadratic interpolation over the 3x3
/// neighborhood. Ties at the maximum break to the smallest indices.
pub fn peak(spectrum: &SpectrumGrid) -> PathEstimate {
    let (ai, di) = spectrum.argmax_cell();
    interpolate_at(spectrum, ai, di)
}

/// Strongest 3x3-local maximum outside a delay stripe around `exclude`
/// (used in passive mode to skip the direct path). Falls back to the
/// strongest non-excluded cell when no interior local maximum exists.
pub fn peak_excluding_delay(
    spectrum: &SpectrumGrid,
    exclude: (usize, usize),
    delay_halfwidth_cells: usize,
) -> PathEstimate {
    let grid = &spectrum.grid;
    let (na, nd) = (grid.n_angles(), grid.n_delays());
    let excluded = |di: usize| (di as isize - exclude.1 as isize).unsigned_abs() <= delay_halfwidth_cells;
    let mut best: Option<(f64, usize, usize)> = None;
    for ai in 1..na.saturating_sub(1) {
        for di in 1..nd.saturating_sub(1) {
            if excluded(di) {
                continue;
            }
            let p = spectrum.at(ai, di);
            let mut is_max = true;
            'nb: for ii in ai - 1..=ai + 1 {
                for jj in di - 1..=di + 1 {
                    if (ii, jj) != (ai, di) && spectrum.at(ii, jj) > p {
                        is_max = false;
                        break 'nb;
                    }
                }
            }
            if is_max && best.map_or(true, |(bp, _, _)| p > bp) {
                best = Some((p, ai, di));
            }
        }
    }
    if best.is_none() {
        for ai in 0..na {
            for di in 0..nd {
                if excluded(di) {
                    continue;
                }
                let p = spectrum.at(ai, di);
                if best.map_or(true, |(bp, _, _)| p > bp) {
                    best = Some((p, ai, di));
                }
            }
        }
    }
    let (_, ai, di) = best.expect("grid has non-excluded cells");
    interpolate_at(spectrum, ai, di)
}

/// Per-estimate absolute errors against ground truth. A single truth is
/// broadcast over all estimates.
pub fn estimate_errors(
    estimates: &[PathEstimate],
    truths: &[(f64, f64)],
) -> Result<(Vec<f64>, Vec<f64>), EstimateError> {
    if truths.len() != estimates.len() && truths.len() != 1 {
        return Err(EstimateError::LengthMismatch { estimates: estimates.len(), truths: truths.len() });
    }
    let aoa = estimates
        .iter()
        .enumerate()
        .map(|(i, e)| (e.aoa_deg - truths[if truths.len() == 1 { 0 } else { i }].0).abs())
        .collect();
    let tof = estimates
        .iter()
        .enumerate()
        .map(|(i, e)| (e.tof - truths[if truths.len() == 1 { 0 } else { i }].1).abs())
        .collect();
    Ok((aoa, tof))
}
