//! Phase sanitization: reference-chain conjugate multiplication, inter-antenna
//! phase-difference series, sliding-window shift detection, case
//! classification, frequency-linear shift-profile fitting, and boundary-based
//! correction.
//!
//! The anomaly being repaired: the phase difference between receive antennas
//! toggles between two levels at random packet indices. Per subcarrier the
//! shift is constant in time, its magnitude grows linearly with the frequency
//! offset from the center subcarrier, and mirrored subcarriers shift by equal
//! magnitudes. When the center subcarrier itself is shifted (Case 2) the data
//! is chaotic and flagged unusable; otherwise (Case 1) the shift is measured
//! from the toggle-level gap and subtracted.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{mirror_subcarrier, subcarrier_frequency, CsiSession};

#[derive(Debug, Error)]
pub enum SanitizeError {
    #[error("session has no reference chain configured")]
    RefChainAbsent,
    #[error("chain pair must be two distinct chains")]
    SamePair,
    #[error("chain or subcarrier index out of range")]
    IndexOutOfRange,
    #[error("series contains non-finite values")]
    NonFiniteSeries,
    #[error("detect_shift requires an unwrapped series")]
    NotUnwrapped,
    #[error("window must be odd and >= 5, got {0}")]
    InvalidWindow(usize),
    #[error("series of length {len} shorter than window {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("events on {0} distinct subcarriers, need at least 2")]
    InsufficientEvents(usize),
    #[error("segment resolution failed: {0}")]
    SegmentResolution(String),
    #[error("shift profile is unreliable (symmetry rms {0:.4} rad)")]
    UnreliableProfile(f64),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Rotate a complex sample by `delta` radians, preserving its magnitude
/// bit-exactly: the corrected value's `norm()` equals the input's `norm()`
/// down to the last bit. Zero and non-finite samples pass through unchanged.
pub fn rotate_preserving_norm(z: Complex64, delta: f64) -> Complex64 {
    if delta == 0.0 {
        return z;
    }
    let r = z.norm();
    if r == 0.0 || !r.is_finite() {
        return z;
    }
    let phi = z.im.atan2(z.re) + delta;
    let (s, c) = phi.sin_cos();
    let mut out = Complex64::new(r * c, r * s);
    for _ in 0..3 {
        let h = out.norm();
        if h == r {
            return out;
        }
        let k = r / h;
        out = Complex64::new(out.re * k, out.im * k);
    }
    // Rounding can leave the magnitude one ulp off; step the dominant
    // component until the norms match.
    let mut h = out.norm();
    let mut guard = 0;
    while h != r && guard < 16 {
        let up = h < r;
        if out.re.abs() >= out.im.abs() {
            out.re = step_magnitude(out.re, up);
        } else {
            out.im = step_magnitude(out.im, up);
        }
        h = out.norm();
        guard += 1;
    }
    out
}

fn step_magnitude(x: f64, up: bool) -> f64 {
    if x == 0.0 {
        return if up { f64::from_bits(1) } else { 0.0 };
    }
    let bits = x.to_bits();
    f64::from_bits(if up { bits + 1 } else { bits - 1 })
}

fn median_of(mut xs: Vec<f64>) -> f64 {
    xs.sort_unstable_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Inter-antenna phase difference of one subcarrier over packet index.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSeries {
    /// Radians per packet index. Non-finite entries mark packets where the
    /// sample product had zero magnitude; they are excluded downstream.
    pub values: Vec<f64>,
    pub subcarrier: usize,
    pub chain_pair: (usize, usize),
    pub unwrapped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftDirection {
    Up,
    Down,
}

/// One detected level transition of a phase-difference series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftEvent {
    pub packet: usize,
    pub subcarrier: usize,
    pub chain_pair: (usize, usize),
    /// Signed level gap (median of post-transition segment minus median of
    /// pre-transition segment); always exceeds the detection threshold.
    pub magnitude: f64,
    pub direction: ShiftDirection,
}

/// Which toggle level correction aligns segments to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Subtract the shift from shifted segments.
    #[default]
    Lower,
    /// Add the shift to unshifted segments.
    Upper,
}

/// Fitted per-subcarrier shift magnitudes with the frequency-linear model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftProfile {
    /// Fitted slope (radians per Hz of |f_k - f_c|), non-negative.
    pub alpha: f64,
    /// Modeled shift magnitude per subcarrier: `alpha * |f_k - f_c|`.
    /// Zero at the center subcarrier, equal at mirrored subcarriers.
    pub per_subcarrier: Vec<f64>,
    pub boundary_standard: Boundary,
    /// RMS of measured magnitudes against the fitted line (radians).
    pub fit_residual: f64,
    /// Sign of the shift on the (upper, lower) sideband.
    pub sideband_signs: (i8, i8),
    /// Chain identified as carrying the shift.
    pub affected_chain: usize,
    /// RMS magnitude mismatch across mirrored subcarrier pairs (radians).
    pub symmetry_rms: f64,
    /// False when the measurements violate the symmetric magnitude model.
    pub reliable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftCase {
    Clean,
    Case1,
    Case2Chaotic,
}

/// Detection and correction parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizeOptions {
    /// Sliding window length in packets; odd, >= 5.
    pub window: usize,
    /// Detection threshold (radians).
    pub threshold: f64,
    /// Number of highest-index non-guard subcarriers probed for shifts.
    pub probe_count: usize,
    pub boundary: Boundary,
    /// Profiles with a larger mirrored-magnitude RMS are flagged unreliable.
    pub symmetry_tol: f64,
}

impl Default for SanitizeOptions {
    fn default() -> Self {
        Self { window: 51, threshold: 0.3, probe_count: 8, boundary: Boundary::Lower, symmetry_tol: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanitizeReport {
    pub case: ShiftCase,
    pub events: Vec<ShiftEvent>,
    pub profile: Option<ShiftProfile>,
    /// Fraction of packets whose samples were adjusted.
    pub corrected_fraction: f64,
    pub usable: bool,
    pub params: SanitizeOptions,
}

/// Multiply every free-space chain by the conjugate of the reference chain,
/// cancelling the per-packet synchronization phase exactly. The reference
/// chain is removed from the output. Packets whose reference samples contain
/// a zero magnitude are dropped; the count is returned.
pub fn conj_reference(session: &CsiSession) -> Result<(CsiSession, usize), SanitizeError> {
    let ref_chain = session.config.ref_chain.ok_or(SanitizeError::RefChainAbsent)?;
    let mut config = session.config.clone();
    config.n_chains -= 1;
    config.ref_chain = None;
    let mut out = CsiSession::new(config, session.geometry.clone())?;

    let n_sub = session.config.n_subcarriers;
    let mut dropped = 0usize;
    let mut samples = Vec::with_capacity(out.config.n_chains * n_sub);
    for t in 0..session.n_packets() {
        let ref_row = session.chain_row(t, ref_chain);
        if ref_row.iter().any(|z| z.norm_sqr() == 0.0) {
            dropped += 1;
            continue;
        }
        samples.clear();
        for chain in 0..session.config.n_chains {
            if chain == ref_chain {
                continue;
            }
            let row = session.chain_row(t, chain);
            for k in 0..n_sub {
                samples.push(row[k] * ref_row[k].conj());
            }
        }
        out.push_packet(session.seqs[t], session.timestamps[t], samples.clone())?;
    }
    Ok((out, dropped))
}

/// Phase difference `arg(H[t][i][k] * conj(H[t][j][k]))` per packet,
/// wrapped to (-π, π]. Zero-magnitude products yield NaN entries.
pub fn antenna_phase_diff(
    session: &CsiSession,
    i: usize,
    j: usize,
    k: usize,
) -> Result<PhaseSeries, SanitizeError> {
    if i == j {
        return Err(SanitizeError::SamePair);
    }
    let n_chains = session.config.n_chains;
    if i >= n_chains || j >= n_chains || k >= session.config.n_subcarriers {
        return Err(SanitizeError::IndexOutOfRange);
    }
    let values = (0..session.n_packets())
        .map(|t| {
            let p = session.sample(t, i, k) * session.sample(t, j, k).conj();
            if p.norm_sqr() == 0.0 {
                f64::NAN
            } else {
                let mut a = p.arg();
                if a == -std::f64::consts::PI {
                    a = std::f64::consts::PI;
                }
                a
            }
        })
        .collect();
    Ok(PhaseSeries { values, subcarrier: k, chain_pair: (i, j), unwrapped: false })
}

/// Cumulative unwrap: the first value is kept and every delta is mapped into
/// (-π, π] before accumulating.
pub fn unwrap(series: &PhaseSeries) -> Result<PhaseSeries, SanitizeError> {
    if series.values.iter().any(|v| !v.is_finite()) {
        return Err(SanitizeError::NonFiniteSeries);
    }
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(series.values.len());
    let mut prev_in = f64::NAN;
    let mut prev_out = 0.0f64;
    for (idx, &v) in series.values.iter().enumerate() {
        if idx == 0 {
            out.push(v);
            prev_in = v;
            prev_out = v;
            continue;
        }
        let mut d = (v - prev_in).rem_euclid(tau);
        if d > std::f64::consts::PI {
            d -= tau;
        }
        prev_out += d;
        out.push(prev_out);
        prev_in = v;
    }
    Ok(PhaseSeries { values: out, unwrapped: true, ..*series })
}

/// Slide a window over an unwrapped series and emit one event per level
/// transition.
///
/// The statistic is `s(t) = φ(t) - median(window excluding center)`.
/// Candidates where `|s| > threshold` are clustered (a gap larger than half
/// the window starts a new cluster) and each cluster contributes one
/// candidate transition (maximum |s|, later index on ties, which lands on
/// the first shifted packet for a clean step). A candidate becomes an event
/// only if the level gap between its neighboring segments — median of the
/// post-transition segment minus median of the pre-transition segment —
/// still exceeds the threshold, which discards threshold crossings caused by
/// noise alone.
pub fn detect_shift(
    series: &PhaseSeries,
    window: usize,
    threshold: f64,
) -> Result<Vec<ShiftEvent>, SanitizeError> {
    if window < 5 || window % 2 == 0 {
        return Err(SanitizeError::InvalidWindow(window));
    }
    if !series.unwrapped {
        return Err(SanitizeError::NotUnwrapped);
    }
    let n = series.values.len();
    if n < window {
        return Err(SanitizeError::SeriesTooShort { len: n, window });
    }
    if series.values.iter().any(|v| !v.is_finite()) {
        return Err(SanitizeError::NonFiniteSeries);
    }
    let half = window / 2;
    let vals = &series.values;

    let mut stat = vec![0.0f64; n];
    let mut buf = Vec::with_capacity(window - 1);
    for t in half..n - half {
        buf.clear();
        buf.extend_from_slice(&vals[t - half..t]);
        buf.extend_from_slice(&vals[t + 1..t + half + 1]);
        buf.sort_unstable_by(f64::total_cmp);
        let m = 0.5 * (buf[half - 1] + buf[half]);
        stat[t] = vals[t] - m;
    }

    // Cluster threshold crossings; one candidate per cluster.
    let mut picks: Vec<usize> = Vec::new();
    let mut cluster: Vec<usize> = Vec::new();
    let flush = |cluster: &mut Vec<usize>, picks: &mut Vec<usize>| {
        if cluster.is_empty() {
            return;
        }
        let mut best = cluster[0];
        for &t in cluster.iter() {
            if stat[t].abs() >= stat[best].abs() {
                best = t;
            }
        }
        picks.push(best);
        cluster.clear();
    };
    for t in half..n - half {
        if stat[t].abs() > threshold {
            if let Some(&last) = cluster.last() {
                if t - last > half {
                    flush(&mut cluster, &mut picks);
                }
            }
            cluster.push(t);
        }
    }
    flush(&mut cluster, &mut picks);

    // Validate each candidate against the segment-level gap.
    let mut events = Vec::new();
    for (idx, &t) in picks.iter().enumerate() {
        let lo = if idx == 0 { 0 } else { picks[idx - 1] };
        let hi = if idx + 1 < picks.len() { picks[idx + 1] } else { n };
        if t == lo || t == hi {
            continue;
        }
        let pre = median_of(vals[lo..t].to_vec());
        let post = median_of(vals[t..hi].to_vec());
        let magnitude = post - pre;
        if magnitude.abs() > threshold {
            events.push(ShiftEvent {
                packet: t,
                subcarrier: series.subcarrier,
                chain_pair: series.chain_pair,
                magnitude,
                direction: if magnitude > 0.0 { ShiftDirection::Up } else { ShiftDirection::Down },
            });
        }
    }
    Ok(events)
}

/// Phase-difference series prepared for detection: non-finite entries are
/// replaced by the last finite value (or the first finite one at the start),
/// then the series is unwrapped. Returns None when no finite value exists.
fn prepared_series(session: &CsiSession, i: usize, j: usize, k: usize) -> Option<PhaseSeries> {
    let mut series = antenna_phase_diff(session, i, j, k).ok()?;
    let first_finite = series.values.iter().copied().find(|v| v.is_finite())?;
    let mut last = first_finite;
    for v in &mut series.values {
        if v.is_finite() {
            last = *v;
        } else {
            *v = last;
        }
    }
    unwrap(&series).ok()
}

fn chain_pairs(n_chains: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..n_chains {
        for j in i + 1..n_chains {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Highest-index non-guard subcarriers, ascending.
fn probe_subcarriers(guard: &[bool], count: usize) -> Vec<usize> {
    let mut probes: Vec<usize> =
        (0..guard.len()).rev().filter(|&k| !guard[k]).take(count).collect();
    probes.reverse();
    probes
}

/// Run shift detection on the center subcarrier and a probe set of
/// high-index subcarriers for every chain pair, and classify the session.
///
/// Clean: no events anywhere. Case 1: the center subcarrier is steady but
/// probe subcarriers toggle (correctable). Case 2: the center subcarrier
/// itself toggles; the session is flagged unusable.
pub fn classify(session: &CsiSession, opts: &SanitizeOptions) -> Result<SanitizeReport, SanitizeError> {
    let guard = session.guard_subcarriers();
    let center = session.config.center_index;
    let probes = probe_subcarriers(&guard, opts.probe_count);

    let mut center_events: Vec<ShiftEvent> = Vec::new();
    let mut probe_events: Vec<ShiftEvent> = Vec::new();
    for (i, j) in chain_pairs(session.config.n_chains) {
        let mut subcarriers = vec![center];
        subcarriers.extend(probes.iter().copied().filter(|&k| k != center));
        for k in subcarriers {
            if guard[k] {
                continue;
            }
            let Some(series) = prepared_series(session, i, j, k) else { continue };
            let events = detect_shift(&series, opts.window, opts.threshold)?;
            if k == center {
                center_events.extend(events);
            } else {
                probe_events.extend(events);
            }
        }
    }

    let case = if !center_events.is_empty() {
        ShiftCase::Case2Chaotic
    } else if probe_events.is_empty() {
        ShiftCase::Clean
    } else {
        ShiftCase::Case1
    };
    let usable = case != ShiftCase::Case2Chaotic;

    let mut events = center_events;
    events.extend(probe_events);
    events.sort_by(|a, b| {
        (a.chain_pair, a.subcarrier, a.packet).cmp(&(b.chain_pair, b.subcarrier, b.packet))
    });

    Ok(SanitizeReport {
        case,
        events,
        profile: None,
        corrected_fraction: 0.0,
        usable,
        params: opts.clone(),
    })
}

/// Consensus toggle timeline relative to an affected chain: event times from
/// all series are clustered and each cluster becomes one toggle with a
/// majority direction. Returns (toggle packet indices, initial shifted state).
fn consensus_toggles(
    events: &[ShiftEvent],
    affected: usize,
    window: usize,
) -> Result<(Vec<usize>, bool), SanitizeError> {
    let mut oriented: Vec<(usize, f64)> = events
        .iter()
        .filter_map(|e| {
            if e.chain_pair.0 == affected {
                Some((e.packet, e.magnitude))
            } else if e.chain_pair.1 == affected {
                Some((e.packet, -e.magnitude))
            } else {
                None
            }
        })
        .collect();
    if oriented.is_empty() {
        return Err(SanitizeError::SegmentResolution(
            "no events involve the affected chain".into(),
        ));
    }
    oriented.sort_by_key(|&(t, _)| t);

    let gap = window / 2;
    let mut toggles: Vec<(usize, bool)> = Vec::new(); // (time, is_up)
    let mut cluster: Vec<(usize, f64)> = Vec::new();
    let flush = |cluster: &mut Vec<(usize, f64)>, toggles: &mut Vec<(usize, bool)>| {
        if cluster.is_empty() {
            return;
        }
        let times: Vec<usize> = cluster.iter().map(|&(t, _)| t).collect();
        let time = times[times.len() / 2];
        let sum: f64 = cluster.iter().map(|&(_, m)| m).sum();
        toggles.push((time, sum > 0.0));
        cluster.clear();
    };
    for &(t, m) in &oriented {
        if let Some(&(last, _)) = cluster.last() {
            if t - last > gap {
                flush(&mut cluster, &mut toggles);
            }
        }
        cluster.push((t, m));
    }
    flush(&mut cluster, &mut toggles);

    // Directions must alternate; the initial state is shifted when the first
    // consensus toggle steps down.
    let initial_shifted = !toggles[0].1;
    let mut expect_up = !initial_shifted;
    for &(t, up) in &toggles {
        if up != expect_up {
            return Err(SanitizeError::SegmentResolution(format!(
                "toggle at packet {t} does not alternate (overlapping or unpaired events)"
            )));
        }
        expect_up = !expect_up;
    }
    Ok((toggles.into_iter().map(|(t, _)| t).collect(), initial_shifted))
}

fn states_from_toggles(toggles: &[usize], initial: bool, n_packets: usize) -> Vec<bool> {
    let mut states = vec![false; n_packets];
    let mut on = initial;
    let mut next = 0usize;
    for (t, slot) in states.iter_mut().enumerate() {
        while next < toggles.len() && toggles[next] == t {
            on = !on;
            next += 1;
        }
        *slot = on;
    }
    states
}

/// The chain most events point at: each event votes for both chains of its
/// pair; the chain with the most votes (smallest index on ties) is the one
/// whose rotation explains the shifted pairs.
fn vote_affected_chain(events: &[ShiftEvent], n_chains: usize) -> usize {
    let mut votes = vec![0usize; n_chains];
    for e in events {
        votes[e.chain_pair.0] += 1;
        votes[e.chain_pair.1] += 1;
    }
    let mut best = 0usize;
    for (c, &v) in votes.iter().enumerate() {
        if v > votes[best] {
            best = c;
        }
    }
    best
}

/// Measure the per-subcarrier level gap (median of shifted packets minus
/// median of unshifted packets), oriented to the affected chain and averaged
/// over the pairs containing it.
fn measured_gaps(
    session: &CsiSession,
    affected: usize,
    states: &[bool],
    guard: &[bool],
) -> Result<Vec<Option<f64>>, SanitizeError> {
    let n_sub = session.config.n_subcarriers;
    let shifted_idx: Vec<usize> = (0..states.len()).filter(|&t| states[t]).collect();
    let clean_idx: Vec<usize> = (0..states.len()).filter(|&t| !states[t]).collect();
    if shifted_idx.is_empty() || clean_idx.is_empty() {
        return Err(SanitizeError::SegmentResolution(
            "need both shifted and unshifted packets to measure the gap".into(),
        ));
    }
    let pairs: Vec<(usize, usize)> = chain_pairs(session.config.n_chains)
        .into_iter()
        .filter(|&(i, j)| i == affected || j == affected)
        .collect();

    let mut gaps: Vec<Option<f64>> = vec![None; n_sub];
    for k in 0..n_sub {
        if guard[k] {
            continue;
        }
        let mut acc = 0.0f64;
        let mut cnt = 0usize;
        for &(i, j) in &pairs {
            let Some(series) = prepared_series(session, i, j, k) else { continue };
            let shifted: Vec<f64> = shifted_idx.iter().map(|&t| series.values[t]).collect();
            let clean: Vec<f64> = clean_idx.iter().map(|&t| series.values[t]).collect();
            let gap = median_of(shifted) - median_of(clean);
            acc += if i == affected { gap } else { -gap };
            cnt += 1;
        }
        if cnt > 0 {
            gaps[k] = Some(acc / cnt as f64);
        }
    }
    Ok(gaps)
}

/// Fit the frequency-linear shift profile from detected events.
///
/// The toggle timeline is resolved by consensus over all event times, the
/// level gap is measured at every non-guard subcarrier from the segment
/// medians, sideband signs are taken by weighted majority per sideband, and
/// `alpha` is the least-squares slope of the magnitudes against |f_k - f_c|.
/// The returned `per_subcarrier` is the fitted model, which is exactly
/// symmetric and zero at the center; `symmetry_rms` reports how well the
/// measured magnitudes obey the mirror symmetry, and profiles violating it
/// beyond `symmetry_tol` are flagged unreliable.
pub fn fit_shift_profile(
    session: &CsiSession,
    events: &[ShiftEvent],
    opts: &SanitizeOptions,
) -> Result<ShiftProfile, SanitizeError> {
    let distinct: std::collections::BTreeSet<usize> = events.iter().map(|e| e.subcarrier).collect();
    if distinct.len() < 2 {
        return Err(SanitizeError::InsufficientEvents(distinct.len()));
    }
    let affected = vote_affected_chain(events, session.config.n_chains);
    let (toggles, initial) = consensus_toggles(events, affected, opts.window)?;
    let states = states_from_toggles(&toggles, initial, session.n_packets());
    let guard = session.guard_subcarriers();
    let gaps = measured_gaps(session, affected, &states, &guard)?;

    let config = &session.config;
    let center = config.center_index;
    let offset = |k: usize| subcarrier_frequency(k, config).unwrap() - config.center_freq;

    // Sideband signs by |gap|-weighted majority.
    let mut upper_sum = 0.0f64;
    let mut lower_sum = 0.0f64;
    for (k, gap) in gaps.iter().enumerate() {
        if let Some(g) = gap {
            if k > center {
                upper_sum += *g;
            } else if k < center {
                lower_sum += *g;
            }
        }
    }
    let sign_of = |s: f64| if s < 0.0 { -1i8 } else { 1i8 };
    let sideband_signs = (sign_of(upper_sum), sign_of(lower_sum));

    // Least-squares slope through the origin on magnitudes.
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for (k, gap) in gaps.iter().enumerate() {
        if let Some(g) = gap {
            if k == center {
                continue;
            }
            let x = offset(k).abs();
            num += g.abs() * x;
            den += x * x;
        }
    }
    if den == 0.0 {
        return Err(SanitizeError::SegmentResolution("no usable subcarriers for the fit".into()));
    }
    let alpha = num / den;

    let per_subcarrier: Vec<f64> = (0..config.n_subcarriers).map(|k| alpha * offset(k).abs()).collect();

    let mut res_sq = 0.0f64;
    let mut res_n = 0usize;
    for (k, gap) in gaps.iter().enumerate() {
        if let Some(g) = gap {
            let r = g.abs() - per_subcarrier[k];
            res_sq += r * r;
            res_n += 1;
        }
    }
    let fit_residual = if res_n > 0 { (res_sq / res_n as f64).sqrt() } else { 0.0 };

    let mut sym_sq = 0.0f64;
    let mut sym_n = 0usize;
    for k in 0..config.n_subcarriers {
        let Ok(m) = mirror_subcarrier(k, config) else { continue };
        if m <= k {
            continue;
        }
        if let (Some(a), Some(b)) = (gaps[k], gaps[m]) {
            let d = a.abs() - b.abs();
            sym_sq += d * d;
            sym_n += 1;
        }
    }
    let symmetry_rms = if sym_n > 0 { (sym_sq / sym_n as f64).sqrt() } else { 0.0 };

    Ok(ShiftProfile {
        alpha,
        per_subcarrier,
        boundary_standard: opts.boundary,
        fit_residual,
        sideband_signs,
        affected_chain: affected,
        symmetry_rms,
        reliable: symmetry_rms <= opts.symmetry_tol,
    })
}

/// Remove the shift from a Case-1 session.
///
/// With the lower boundary as the standard, packets inside shifted segments
/// have the affected chain rotated by minus the (signed) profile; with the
/// upper boundary, unshifted packets are rotated by plus the profile instead.
/// Magnitudes are preserved bit-exactly. Re-running `classify` on the output
/// yields Clean.
pub fn correct(
    session: &CsiSession,
    profile: &ShiftProfile,
    events: &[ShiftEvent],
) -> Result<(CsiSession, SanitizeReport), SanitizeError> {
    let params = SanitizeOptions { boundary: profile.boundary_standard, ..Default::default() };
    if events.is_empty() {
        return Ok((
            session.clone(),
            SanitizeReport {
                case: ShiftCase::Clean,
                events: Vec::new(),
                profile: Some(profile.clone()),
                corrected_fraction: 0.0,
                usable: true,
                params,
            },
        ));
    }
    if !profile.reliable {
        return Err(SanitizeError::UnreliableProfile(profile.symmetry_rms));
    }
    let (toggles, initial) = consensus_toggles(events, profile.affected_chain, params.window)?;
    let states = states_from_toggles(&toggles, initial, session.n_packets());

    let center = session.config.center_index;
    let signed: Vec<f64> = profile
        .per_subcarrier
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let sign = match k.cmp(&center) {
                std::cmp::Ordering::Greater => profile.sideband_signs.0 as f64,
                std::cmp::Ordering::Less => profile.sideband_signs.1 as f64,
                std::cmp::Ordering::Equal => 0.0,
            };
            sign * m
        })
        .collect();

    let mut out = session.clone();
    let mut touched = 0usize;
    for t in 0..out.n_packets() {
        let adjust = match profile.boundary_standard {
            Boundary::Lower => states[t],
            Boundary::Upper => !states[t],
        };
        if !adjust {
            continue;
        }
        touched += 1;
        let row = out.chain_row_mut(t, profile.affected_chain);
        for (k, z) in row.iter_mut().enumerate() {
            let delta = match profile.boundary_standard {
                Boundary::Lower => -signed[k],
                Boundary::Upper => signed[k],
            };
            *z = rotate_preserving_norm(*z, delta);
        }
    }

    let corrected_fraction = touched as f64 / session.n_packets().max(1) as f64;
    Ok((
        out,
        SanitizeReport {
            case: ShiftCase::Case1,
            events: events.to_vec(),
            profile: Some(profile.clone()),
            corrected_fraction,
            usable: true,
            params,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArrayGeometry, CaptureConfig, CsiSession};
    use crate::synth::{
        gen_session, inject_fault, ChainFault, FaultCase, FaultSpec, PathSpec, ScenarioSpec,
        SensingMode, SidebandParity,
    };
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn cfg() -> CaptureConfig {
        CaptureConfig::default()
    }

    fn geo() -> ArrayGeometry {
        ArrayGeometry::default()
    }

    fn scenario(n_packets: usize, snr_db: Option<f64>) -> ScenarioSpec {
        ScenarioSpec {
            mode: SensingMode::Active,
            paths: vec![PathSpec { aoa_deg: 20.0, tof: 45e-9, gain: 1.0, doppler_hz: 0.0 }],
            snr_db,
            n_packets,
            ref_cable_delay: 0.0,
            sync_offset: true,
        }
    }

    fn case1_fault(alpha: f64, chain: usize, parity: SidebandParity, toggles: Vec<usize>) -> FaultSpec {
        FaultSpec {
            case: FaultCase::Case1,
            alpha,
            toggle_times: toggles,
            affected: vec![ChainFault { chain, parity }],
            case2_center_offset: 0.0,
            case2_applied_offsets: None,
        }
    }

    // --- rotate_preserving_norm -------------------------------------------

    #[test]
    fn rotation_preserves_norm_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200_000 {
            let z = Complex64::new(rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0);
            let delta = rng.gen::<f64>() * 6.0 - 3.0;
            let out = rotate_preserving_norm(z, delta);
            assert_eq!(z.norm().to_bits(), out.norm().to_bits(), "z={z} delta={delta}");
            if z.norm() > 0.0 {
                let got = (out * z.conj()).arg();
                let want = (delta + PI).rem_euclid(2.0 * PI) - PI;
                assert!((got - want).abs() < 1e-9 || (got - want).abs() > 2.0 * PI - 1e-9);
            }
        }
    }

    // --- unwrap -------------------------------------------------------------

    fn series(values: Vec<f64>) -> PhaseSeries {
        PhaseSeries { values, subcarrier: 0, chain_pair: (0, 1), unwrapped: false }
    }

    #[test]
    fn unwrap_wrapped_ramp() {
        // 6 rad wraps to 6 - 2π = -0.2832...
        let s = series(vec![0.0, 3.0, 6.0 - 2.0 * PI]);
        let u = unwrap(&s).unwrap();
        assert!(u.unwrapped);
        assert_relative_eq!(u.values[0], 0.0);
        assert_relative_eq!(u.values[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(u.values[2], 6.0, epsilon = 1e-12);
    }

    #[test]
    fn unwrap_smooth_unchanged() {
        let s = series(vec![0.0, 0.5, 1.0, 0.8, 0.2, -0.4]);
        let u = unwrap(&s).unwrap();
        for (a, b) in u.values.iter().zip(&s.values) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn unwrap_inverts_wrapping() {
        // For any series with |Δ| < π, wrapping then unwrapping recovers it.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut vals = vec![0.0f64];
        for _ in 0..500 {
            vals.push(vals.last().unwrap() + rng.gen::<f64>() * 5.0 - 2.5);
        }
        let wrapped: Vec<f64> =
            vals.iter().map(|v| {
                let r = v.rem_euclid(2.0 * PI);
                if r > PI { r - 2.0 * PI } else { r }
            }).collect();
        let u = unwrap(&series(wrapped)).unwrap();
        for (a, b) in u.values.iter().zip(&vals) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn unwrap_rejects_non_finite() {
        assert!(matches!(
            unwrap(&series(vec![0.0, f64::NAN])),
            Err(SanitizeError::NonFiniteSeries)
        ));
    }

    // --- detect_shift --------------------------------------------------------

    fn unwrapped(values: Vec<f64>) -> PhaseSeries {
        PhaseSeries { values, subcarrier: 250, chain_pair: (0, 1), unwrapped: true }
    }

    #[test]
    fn detect_rejects_bad_inputs() {
        let s = unwrapped(vec![0.0; 100]);
        assert!(matches!(detect_shift(&s, 4, 0.3), Err(SanitizeError::InvalidWindow(4))));
        assert!(matches!(detect_shift(&s, 7, 0.3), Ok(_)));
        let wrapped = series(vec![0.0; 100]);
        assert!(matches!(detect_shift(&wrapped, 51, 0.3), Err(SanitizeError::NotUnwrapped)));
        let short = unwrapped(vec![0.0; 50]);
        assert!(matches!(detect_shift(&short, 51, 0.3), Err(SanitizeError::SeriesTooShort { .. })));
    }

    #[test]
    fn detect_clean_gaussian_noise_zero_events() {
        // Frozen seed; sigma = threshold / 4, 10 000 samples.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut vals = Vec::with_capacity(10_000);
        for _ in 0..10_000 {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            vals.push((-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos() * 0.075);
        }
        let events = detect_shift(&unwrapped(vals), 51, 0.3).unwrap();
        assert_eq!(events.len(), 0);
    }

    #[test]
    fn detect_noiseless_step_exact() {
        let mut vals = vec![0.0; 500];
        vals.extend(vec![0.8; 500]);
        let events = detect_shift(&unwrapped(vals), 51, 0.3).unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].packet, 500);
        assert_eq!(events[0].magnitude, 0.8);
        assert_eq!(events[0].direction, ShiftDirection::Up);
    }

    #[test]
    fn detect_noisy_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut vals = Vec::with_capacity(1000);
        for t in 0..1000 {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            let noise = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos() * 0.075;
            vals.push(if t >= 500 { 0.8 } else { 0.0 } + noise);
        }
        let events = detect_shift(&unwrapped(vals), 51, 0.3).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].packet as i64 - 500).unsigned_abs() <= 25);
        assert!((events[0].magnitude - 0.8).abs() <= 0.05);
    }

    #[test]
    fn detect_five_transitions_alternate() {
        let mut vals = Vec::new();
        for seg in 0..6 {
            let level = if seg % 2 == 1 { 0.8 } else { 0.0 };
            vals.extend(vec![level; 300]);
        }
        let events = detect_shift(&unwrapped(vals), 51, 0.3).unwrap();
        assert_eq!(events.len(), 5);
        for (i, e) in events.iter().enumerate() {
            assert_eq!(e.packet, 300 * (i + 1));
            let want = if i % 2 == 0 { ShiftDirection::Up } else { ShiftDirection::Down };
            assert_eq!(e.direction, want);
            assert_relative_eq!(e.magnitude.abs(), 0.8, epsilon = 1e-12);
        }
    }

    #[test]
    fn detect_translation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vals = Vec::with_capacity(800);
        for t in 0..800 {
            let u1: f64 = 1.0 - rng.gen::<f64>();
            let u2: f64 = rng.gen();
            let noise = (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos() * 0.05;
            vals.push(if (250..600).contains(&t) { 0.9 } else { 0.0 } + noise);
        }
        let base = detect_shift(&unwrapped(vals.clone()), 51, 0.3).unwrap();
        let shifted: Vec<f64> = vals.iter().map(|v| v + 123.456).collect();
        let moved = detect_shift(&unwrapped(shifted), 51, 0.3).unwrap();
        assert_eq!(base.len(), moved.len());
        for (a, b) in base.iter().zip(&moved) {
            assert_eq!(a.packet, b.packet);
            assert_relative_eq!(a.magnitude, b.magnitude, epsilon = 1e-9);
        }
    }

    // --- conj_reference ------------------------------------------------------

    #[test]
    fn conj_cancels_common_phase() {
        let (with_sync, _) = gen_session(&scenario(50, Some(20.0)), &cfg(), &geo(), 3).unwrap();
        let no_sync = ScenarioSpec { sync_offset: false, ..scenario(50, Some(20.0)) };
        let (without, _) = gen_session(&no_sync, &cfg(), &geo(), 3).unwrap();
        let (a, d1) = conj_reference(&with_sync).unwrap();
        let (b, d2) = conj_reference(&without).unwrap();
        assert_eq!((d1, d2), (0, 0));
        assert_eq!(a.config.n_chains, 3);
        assert_eq!(a.config.ref_chain, None);
        for t in 0..50 {
            for c in 0..3 {
                let (ra, rb) = (a.chain_row(t, c), b.chain_row(t, c));
                for k in 0..256 {
                    let err = (ra[k] - rb[k]).norm() / rb[k].norm().max(1e-300);
                    assert!(err <= 1e-9, "relative error {err} at t={t} c={c} k={k}");
                }
            }
        }
    }

    #[test]
    fn conj_of_ref_like_chain_gives_real_output() {
        // A chain identical to the reference: phases cancel, magnitudes multiply.
        let config = CaptureConfig { n_chains: 2, ref_chain: Some(0), ..cfg() };
        let mut s = CsiSession::new(config, ArrayGeometry { n_antennas: 2, ..geo() }).unwrap();
        let mut samples = Vec::new();
        for k in 0..256 {
            samples.push(Complex64::cis(0.01 * k as f64) * 2.0);
        }
        let both: Vec<Complex64> = samples.iter().chain(samples.iter()).cloned().collect();
        s.push_packet(0, 0.0, both).unwrap();
        let (out, _) = conj_reference(&s).unwrap();
        for k in 0..256 {
            let z = out.sample(0, 0, k);
            assert_relative_eq!(z.im, 0.0, epsilon = 1e-12);
            assert_relative_eq!(z.re, 4.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn conj_cable_delay_slope() {
        let sc = ScenarioSpec { ref_cable_delay: 10e-9, sync_offset: true, ..scenario(3, None) };
        let (s, _) = gen_session(&sc, &cfg(), &geo(), 1).unwrap();
        let (out, _) = conj_reference(&s).unwrap();
        // Output slope per subcarrier step: -2πΔf(τ_path - τ_ref).
        let expected = -2.0 * PI * cfg().subcarrier_spacing() * (45e-9 - 10e-9);
        let row = out.chain_row(0, 0);
        for k in 100..110 {
            let step = (row[k + 1] * row[k].conj()).arg();
            assert_relative_eq!(step, expected, epsilon = 1e-9);
        }
    }

    #[test]
    fn conj_requires_ref_chain() {
        let config = CaptureConfig { ref_chain: None, n_chains: 3, ..cfg() };
        let s = CsiSession::new(config, geo()).unwrap();
        assert!(matches!(conj_reference(&s), Err(SanitizeError::RefChainAbsent)));
    }

    #[test]
    fn conj_drops_zero_magnitude_ref_packets() {
        let (mut s, _) = gen_session(&scenario(5, None), &cfg(), &geo(), 1).unwrap();
        s.chain_row_mut(2, 0)[7] = Complex64::new(0.0, 0.0);
        let (out, dropped) = conj_reference(&s).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(out.n_packets(), 4);
    }

    // --- antenna_phase_diff ---------------------------------------------------

    #[test]
    fn phase_diff_same_chain_rejected() {
        let (s, _) = gen_session(&scenario(3, None), &cfg(), &geo(), 1).unwrap();
        assert!(matches!(antenna_phase_diff(&s, 1, 1, 0), Err(SanitizeError::SamePair)));
    }

    #[test]
    fn phase_diff_constant_offset() {
        // Chains differing by a constant e^{jπ/3} give a constant series π/3.
        let config = CaptureConfig { n_chains: 2, ref_chain: None, n_subcarriers: 8, center_index: 4, ..cfg() };
        let mut s = CsiSession::new(config, ArrayGeometry { n_antennas: 2, ..geo() }).unwrap();
        for t in 0..10u64 {
            let base: Vec<Complex64> = (0..8).map(|k| Complex64::cis(0.3 * k as f64)).collect();
            let mut samples: Vec<Complex64> = base.iter().map(|z| z * Complex64::cis(PI / 3.0)).collect();
            samples.extend(base);
            s.push_packet(t, t as f64 * 0.0025, samples).unwrap();
        }
        let d = antenna_phase_diff(&s, 0, 1, 3).unwrap();
        for v in &d.values {
            assert_relative_eq!(*v, PI / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn phase_diff_steering_30deg() {
        // Adjacent half-wavelength antennas at θ = 30°: difference π·sin 30° = π/2.
        let sc = scenario(5, None);
        let sc = ScenarioSpec {
            paths: vec![PathSpec { aoa_deg: 30.0, tof: 0.0, gain: 1.0, doppler_hz: 0.0 }],
            sync_offset: false,
            ..sc
        };
        let (s, _) = gen_session(&sc, &cfg(), &geo(), 1).unwrap();
        // Chains 1 and 2 are the first two free-space antennas.
        let d = antenna_phase_diff(&s, 1, 2, 100).unwrap();
        for v in &d.values {
            assert_relative_eq!(*v, PI * 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn phase_diff_zero_sample_is_nan() {
        let (mut s, _) = gen_session(&scenario(4, None), &cfg(), &geo(), 1).unwrap();
        s.chain_row_mut(1, 1)[9] = Complex64::new(0.0, 0.0);
        let d = antenna_phase_diff(&s, 1, 2, 9).unwrap();
        assert!(d.values[1].is_nan());
        assert!(d.values[0].is_finite());
    }

    // --- classify / fit / correct ----------------------------------------------

    fn conj_synth(
        n_packets: usize,
        snr_db: Option<f64>,
        fault: Option<&FaultSpec>,
        seed: u64,
    ) -> (CsiSession, CsiSession) {
        let (raw, _) = gen_session(&scenario(n_packets, snr_db), &cfg(), &geo(), seed).unwrap();
        let faulted = match fault {
            Some(f) => inject_fault(&raw, f, seed).unwrap().0,
            None => raw.clone(),
        };
        let (clean, _) = conj_reference(&raw).unwrap();
        let (out, _) = conj_reference(&faulted).unwrap();
        (clean, out)
    }

    #[test]
    fn classify_clean_session() {
        let (_, s) = conj_synth(400, Some(20.0), None, 21);
        let report = classify(&s, &SanitizeOptions::default()).unwrap();
        assert_eq!(report.case, ShiftCase::Clean);
        assert!(report.usable);
        assert!(report.events.is_empty());
    }

    #[test]
    fn classify_case1() {
        // Fault on raw chain 2 = free-space chain index 1 after conj.
        let fault = case1_fault(2e-8, 2, SidebandParity::Even, vec![150, 350]);
        let (_, s) = conj_synth(600, Some(20.0), Some(&fault), 8);
        let report = classify(&s, &SanitizeOptions::default()).unwrap();
        assert_eq!(report.case, ShiftCase::Case1);
        assert!(report.usable);
        assert!(report.events.iter().all(|e| e.subcarrier != 128));
        assert!(!report.events.is_empty());
    }

    #[test]
    fn classify_case2_unusable() {
        let fault = FaultSpec {
            case: FaultCase::Case2,
            alpha: 1e-8,
            toggle_times: vec![150, 350],
            affected: vec![ChainFault { chain: 2, parity: SidebandParity::Even }],
            case2_center_offset: 1.8,
            case2_applied_offsets: None,
        };
        let (_, s) = conj_synth(600, Some(20.0), Some(&fault), 9);
        let report = classify(&s, &SanitizeOptions::default()).unwrap();
        assert_eq!(report.case, ShiftCase::Case2Chaotic);
        assert!(!report.usable);
    }

    #[test]
    fn fit_recovers_alpha_noiseless_within_1pct() {
        let alpha = 2.0e-8;
        let fault = case1_fault(alpha, 2, SidebandParity::Even, vec![150, 350]);
        let (_, s) = conj_synth(600, None, Some(&fault), 10);
        let opts = SanitizeOptions::default();
        let report = classify(&s, &opts).unwrap();
        assert_eq!(report.case, ShiftCase::Case1);
        let profile = fit_shift_profile(&s, &report.events, &opts).unwrap();
        assert!((profile.alpha - alpha).abs() / alpha < 0.01, "alpha = {}", profile.alpha);
        assert!(profile.reliable);
        assert_eq!(profile.affected_chain, 1);
        assert_eq!(profile.sideband_signs, (1, 1));
        assert_eq!(profile.per_subcarrier[128], 0.0);
    }

    #[test]
    fn fit_profile_symmetric_center_129() {
        // With center 129 the paper's pair (7, 251) must carry equal magnitudes.
        let config = CaptureConfig { center_index: 129, ..cfg() };
        let sc = scenario(600, None);
        let (raw, _) = gen_session(&sc, &config, &geo(), 11).unwrap();
        let fault = case1_fault(2e-8, 2, SidebandParity::Odd, vec![150, 350]);
        let (faulted, _) = inject_fault(&raw, &fault, 11).unwrap();
        let (s, _) = conj_reference(&faulted).unwrap();
        let opts = SanitizeOptions::default();
        let report = classify(&s, &opts).unwrap();
        let profile = fit_shift_profile(&s, &report.events, &opts).unwrap();
        assert_eq!(profile.per_subcarrier[7], profile.per_subcarrier[251]);
        assert!(profile.symmetry_rms < 0.02);
        // Odd parity is detected on the sideband signs.
        assert_eq!(profile.sideband_signs, (1, -1));
    }

    #[test]
    fn fit_requires_two_subcarriers() {
        let (_, s) = conj_synth(300, None, None, 1);
        let ev = vec![ShiftEvent {
            packet: 100,
            subcarrier: 250,
            chain_pair: (0, 1),
            magnitude: 0.5,
            direction: ShiftDirection::Up,
        }];
        assert!(matches!(
            fit_shift_profile(&s, &ev, &SanitizeOptions::default()),
            Err(SanitizeError::InsufficientEvents(1))
        ));
    }

    #[test]
    fn correct_roundtrip_classifies_clean() {
        let fault = case1_fault(2.5e-8, 2, SidebandParity::Even, vec![150, 350]);
        let (clean, faulty) = conj_synth(600, Some(20.0), Some(&fault), 12);
        let opts = SanitizeOptions::default();
        let report = classify(&faulty, &opts).unwrap();
        assert_eq!(report.case, ShiftCase::Case1);
        let profile = fit_shift_profile(&faulty, &report.events, &opts).unwrap();
        let (fixed, fix_report) = correct(&faulty, &profile, &report.events).unwrap();
        assert!(fix_report.corrected_fraction > 0.2 && fix_report.corrected_fraction < 0.5);

        let recheck = classify(&fixed, &opts).unwrap();
        assert_eq!(recheck.case, ShiftCase::Clean);

        // Corrected phase differences sit close to the fault-free twin.
        let mut err_sq = 0.0f64;
        let mut n = 0usize;
        for k in [200usize, 250] {
            let a = prepared_series(&fixed, 0, 1, k).unwrap();
            let b = prepared_series(&clean, 0, 1, k).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                let mut d: f64 = x - y;
                d = (d + PI).rem_euclid(2.0 * PI) - PI;
                err_sq += d * d;
                n += 1;
            }
        }
        let rms = (err_sq / n as f64).sqrt();
        // Phase-difference noise sigma at SNR 20 with gain ~1 is ~0.1 rad.
        assert!(rms <= 0.2, "rms = {rms}");
    }

    #[test]
    fn correct_preserves_magnitudes_bit_exactly() {
        let fault = case1_fault(2e-8, 2, SidebandParity::Odd, vec![150, 350]);
        let (_, faulty) = conj_synth(600, Some(20.0), Some(&fault), 13);
        let opts = SanitizeOptions::default();
        let report = classify(&faulty, &opts).unwrap();
        let profile = fit_shift_profile(&faulty, &report.events, &opts).unwrap();
        let (fixed, _) = correct(&faulty, &profile, &report.events).unwrap();
        for t in 0..faulty.n_packets() {
            for c in 0..3 {
                let (a, b) = (faulty.chain_row(t, c), fixed.chain_row(t, c));
                for k in 0..256 {
                    assert_eq!(a[k].norm().to_bits(), b[k].norm().to_bits());
                }
            }
        }
    }

    #[test]
    fn correct_empty_events_is_identity() {
        let (_, s) = conj_synth(300, Some(20.0), None, 14);
        let profile = ShiftProfile {
            alpha: 0.0,
            per_subcarrier: vec![0.0; 256],
            boundary_standard: Boundary::Lower,
            fit_residual: 0.0,
            sideband_signs: (1, 1),
            affected_chain: 0,
            symmetry_rms: 0.0,
            reliable: true,
        };
        let (out, report) = correct(&s, &profile, &[]).unwrap();
        assert_eq!(out, s);
        assert_eq!(report.corrected_fraction, 0.0);
    }

    #[test]
    fn correct_upper_boundary_aligns_to_shifted_level() {
        let fault = case1_fault(2.5e-8, 2, SidebandParity::Even, vec![150, 350]);
        let (_, faulty) = conj_synth(600, None, Some(&fault), 15);
        let opts = SanitizeOptions { boundary: Boundary::Upper, ..Default::default() };
        let report = classify(&faulty, &opts).unwrap();
        let profile = fit_shift_profile(&faulty, &report.events, &opts).unwrap();
        assert_eq!(profile.boundary_standard, Boundary::Upper);
        let (fixed, rep) = correct(&faulty, &profile, &report.events).unwrap();
        // Unshifted packets were adjusted instead of shifted ones.
        assert!(rep.corrected_fraction > 0.5);
        let recheck = classify(&fixed, &opts).unwrap();
        assert_eq!(recheck.case, ShiftCase::Clean);
    }

    #[test]
    fn correct_unreliable_profile_rejected() {
        let (_, s) = conj_synth(300, None, None, 16);
        let profile = ShiftProfile {
            alpha: 1e-8,
            per_subcarrier: vec![0.1; 256],
            boundary_standard: Boundary::Lower,
            fit_residual: 0.5,
            sideband_signs: (1, 1),
            affected_chain: 0,
            symmetry_rms: 0.5,
            reliable: false,
        };
        let ev = vec![ShiftEvent {
            packet: 100,
            subcarrier: 250,
            chain_pair: (0, 1),
            magnitude: 0.5,
            direction: ShiftDirection::Up,
        }];
        assert!(matches!(
            correct(&s, &profile, &ev),
            Err(SanitizeError::UnreliableProfile(_))
        ));
    }
}
