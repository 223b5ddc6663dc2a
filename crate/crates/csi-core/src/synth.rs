//! Synthetic multipath CSI generator and fault injector: the ground-truth
//! oracle for the sanitization and estimation pipeline.
//!
//! All randomness flows from one u64 session seed through ChaCha8 substreams:
//! stream `(1 << 32) | t` drives packet t's noise (chains ascending, then
//! subcarriers ascending, real before imaginary, via Box-Muller from uniform
//! pairs), stream `(2 << 32) | t` the packet's synchronization offset, and
//! stream `(3 << 32) | j` the j-th toggle's Case-2 perturbation. Identical
//! (spec, seed) inputs reproduce bit-identical sessions.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimate::steering_aoa;
use crate::model::{subcarrier_frequency, ArrayGeometry, CaptureConfig, CsiSession};
use crate::sanitize::rotate_preserving_norm;

const NOISE_STREAM: u64 = 1 << 32;
const SYNC_STREAM: u64 = 2 << 32;
const FAULT_STREAM: u64 = 3 << 32;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invalid fault: {0}")]
    InvalidFault(String),
    #[error("toggle time {t} out of range (n_packets = {n})")]
    ToggleOutOfRange { t: usize, n: usize },
    #[error("unknown preset '{0}' (expected active-default or passive-default)")]
    UnknownPreset(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// One propagation path of the simulated channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathSpec {
    pub aoa_deg: f64,
    /// Propagation delay (s).
    pub tof: f64,
    /// Linear amplitude.
    pub gain: f64,
    /// Unused by the estimators; kept at 0.
    #[serde(default)]
    pub doppler_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingMode {
    /// Target information rides the direct Tx-Rx path (paths[0]).
    Active,
    /// Target is a reflection (paths[1]); paths[0] is the direct path.
    Passive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub mode: SensingMode,
    pub paths: Vec<PathSpec>,
    /// None means noiseless. SNR is defined against the strongest path's
    /// per-sample power.
    pub snr_db: Option<f64>,
    pub n_packets: usize,
    /// Delay of the cable feeding the reference chain (s).
    pub ref_cable_delay: f64,
    /// Apply a per-packet random common phase to every chain.
    pub sync_offset: bool,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_packets == 0 {
            return Err(SynthError::InvalidScenario("n_packets must be > 0".into()));
        }
        for p in &self.paths {
            if !(p.gain > 0.0) {
                return Err(SynthError::InvalidScenario("path gain must be > 0".into()));
            }
            if p.tof < 0.0 {
                return Err(SynthError::InvalidScenario("path tof must be >= 0".into()));
            }
        }
        if self.mode == SensingMode::Passive {
            if self.paths.len() < 2 {
                return Err(SynthError::InvalidScenario(
                    "passive mode needs a direct path and a reflected target path".into(),
                ));
            }
            if self.paths[1].gain > 0.3 * self.paths[0].gain {
                return Err(SynthError::InvalidScenario(
                    "passive target gain must be <= 0.3x the direct path".into(),
                ));
            }
        }
        if self.ref_cable_delay < 0.0 {
            return Err(SynthError::InvalidScenario("ref_cable_delay must be >= 0".into()));
        }
        Ok(())
    }

    /// The path whose parameters the pipeline estimates.
    pub fn target_path(&self) -> &PathSpec {
        match self.mode {
            SensingMode::Active => &self.paths[0],
            SensingMode::Passive => &self.paths[1],
        }
    }
}

/// Sign pattern of the Case-1 rotation across the two sidebands.
///
/// `Even` is the magnitude-linear model (same sign on both sides of the
/// center subcarrier); `Odd` flips the lower sideband, which makes the
/// rotation a pure time skew of the affected chain. Shift magnitudes are
/// `alpha * |f_k - f_c|` either way, equal at mirrored subcarriers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SidebandParity {
    #[default]
    Even,
    Odd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainFault {
    pub chain: usize,
    #[serde(default)]
    pub parity: SidebandParity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultCase {
    Case1,
    Case2,
}

/// Injectable phase-shift fault. A toggle state s(t) in {0, 1} flips at each
/// toggle time; while s = 1 the affected chains' samples are rotated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub case: FaultCase,
    /// Shift slope (radians per Hz of offset from the center frequency).
    pub alpha: f64,
    /// Packet indices at which the toggle state flips; strictly increasing.
    pub toggle_times: Vec<usize>,
    pub affected: Vec<ChainFault>,
    /// Case-2 only: rotation added at every subcarrier including the center.
    #[serde(default)]
    pub case2_center_offset: f64,
    /// Filled by `inject_fault`: the materialized Case-2 offset (center offset
    /// plus seeded perturbation) per shifted segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case2_applied_offsets: Option<Vec<f64>>,
}

impl FaultSpec {
    pub fn validate(&self, n_packets: usize, n_chains: usize) -> Result<(), SynthError> {
        if self.toggle_times.is_empty() {
            return Err(SynthError::InvalidFault("at least one toggle time required".into()));
        }
        for w in self.toggle_times.windows(2) {
            if w[1] <= w[0] {
                return Err(SynthError::InvalidFault("toggle times must be strictly increasing".into()));
            }
        }
        for &t in &self.toggle_times {
            if t >= n_packets {
                return Err(SynthError::ToggleOutOfRange { t, n: n_packets });
            }
        }
        if self.affected.is_empty() {
            return Err(SynthError::InvalidFault("at least one affected chain required".into()));
        }
        for cf in &self.affected {
            if cf.chain >= n_chains {
                return Err(SynthError::InvalidFault(format!(
                    "affected chain {} out of range (n_chains = {n_chains})",
                    cf.chain
                )));
            }
        }
        Ok(())
    }
}

/// Ground truth attached to a generated session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub target_aoa_deg: f64,
    pub target_tof: f64,
    pub fault: Option<FaultSpec>,
    pub seed: u64,
}

fn packet_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard-normal pairs via Box-Muller, so the noise stream is fully
/// specified by this crate rather than an external distribution crate.
struct Gaussian<'a> {
    rng: &'a mut ChaCha8Rng,
    spare: Option<f64>,
}

impl<'a> Gaussian<'a> {
    fn new(rng: &'a mut ChaCha8Rng) -> Self {
        Self { rng, spare: None }
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>(); // (0, 1]
        let u2: f64 = self.rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Synthesize a session: `H_t[m][k] = Σ_p gain_p · exp(-j2π f_k τ_p) · a_m(θ_p)`
/// plus circularly-symmetric Gaussian noise, an optional wired reference chain
/// carrying only the cable delay, and an optional per-packet common sync
/// phase applied after the noise (so conjugate referencing cancels it exactly).
pub fn gen_session(
    scenario: &ScenarioSpec,
    config: &CaptureConfig,
    geometry: &ArrayGeometry,
    seed: u64,
) -> Result<(CsiSession, GroundTruth), SynthError> {
    scenario.validate()?;
    config.validate()?;
    geometry.validate()?;
    if geometry.n_antennas != config.n_free_chains() {
        return Err(SynthError::InvalidScenario(format!(
            "geometry has {} antennas but config has {} free-space chains",
            geometry.n_antennas,
            config.n_free_chains()
        )));
    }

    let n_sub = config.n_subcarriers;
    let n_chains = config.n_chains;

    // Static channel: precompute the noiseless base once.
    let mut base = vec![Complex64::new(0.0, 0.0); n_chains * n_sub];
    let freqs: Vec<f64> = (0..n_sub).map(|k| subcarrier_frequency(k, config).unwrap()).collect();
    let mut antenna_rank = 0usize;
    for chain in 0..n_chains {
        let row = &mut base[chain * n_sub..(chain + 1) * n_sub];
        if config.ref_chain == Some(chain) {
            for (k, r) in row.iter_mut().enumerate() {
                *r = Complex64::cis(-2.0 * std::f64::consts::PI * freqs[k] * scenario.ref_cable_delay);
            }
        } else {
            for path in &scenario.paths {
                let a = steering_aoa(path.aoa_deg, geometry, config);
                let am = a[antenna_rank];
                for (k, r) in row.iter_mut().enumerate() {
                    let g = Complex64::cis(-2.0 * std::f64::consts::PI * freqs[k] * path.tof);
                    *r += path.gain * am * g;
                }
            }
            antenna_rank += 1;
        }
    }

    let p_ref = scenario.paths.iter().map(|p| p.gain * p.gain).fold(0.0f64, f64::max);
    let sigma_component = match scenario.snr_db {
        Some(snr) if p_ref > 0.0 => (p_ref / 10f64.powf(snr / 10.0) / 2.0).sqrt(),
        _ => 0.0,
    };

    let mut session = CsiSession::new(config.clone(), geometry.clone())?;
    let mut samples = vec![Complex64::new(0.0, 0.0); n_chains * n_sub];
    for t in 0..scenario.n_packets {
        samples.copy_from_slice(&base);
        if sigma_component > 0.0 {
            let mut rng = packet_rng(seed, NOISE_STREAM | t as u64);
            let mut gauss = Gaussian::new(&mut rng);
            for s in &mut samples {
                let re = gauss.next() * sigma_component;
                let im = gauss.next() * sigma_component;
                *s += Complex64::new(re, im);
            }
        }
        if scenario.sync_offset {
            let mut rng = packet_rng(seed, SYNC_STREAM | t as u64);
            let u: f64 = rng.gen();
            let psi = Complex64::cis(std::f64::consts::PI - u * 2.0 * std::f64::consts::PI);
            for s in &mut samples {
                *s *= psi;
            }
        }
        session.push_packet(t as u64, t as f64 / config.packet_rate, samples.clone())?;
    }

    let target = scenario.target_path();
    let truth = GroundTruth {
        target_aoa_deg: target.aoa_deg,
        target_tof: target.tof,
        fault: None,
        seed,
    };
    Ok((session, truth))
}

/// Case-1 rotation applied at subcarrier `k` while the toggle state is on:
/// `alpha * |f_k - f_c|`, sign-flipped on the lower sideband for `Odd` parity.
/// Zero at the center subcarrier.
pub fn fault_rotation(alpha: f64, parity: SidebandParity, k: usize, config: &CaptureConfig) -> f64 {
    let offset = subcarrier_frequency(k, config).expect("subcarrier in range") - config.center_freq;
    let magnitude = alpha * offset.abs();
    match parity {
        SidebandParity::Even => magnitude,
        SidebandParity::Odd => {
            if offset < 0.0 {
                -magnitude
            } else {
                magnitude
            }
        }
    }
}

/// Toggle state per packet: starts unshifted, flips at each toggle time.
pub fn toggle_states(toggle_times: &[usize], n_packets: usize) -> Vec<bool> {
    let mut states = vec![false; n_packets];
    let mut on = false;
    let mut next = 0usize;
    for (t, slot) in states.iter_mut().enumerate() {
        while next < toggle_times.len() && toggle_times[next] == t {
            on = !on;
            next += 1;
        }
        *slot = on;
    }
    states
}

/// Rotate the affected chains' samples while the toggle state is on.
/// Magnitudes are preserved bit-exactly; only phases change.
pub fn inject_fault(
    session: &CsiSession,
    fault: &FaultSpec,
    seed: u64,
) -> Result<(CsiSession, FaultSpec), SynthError> {
    fault.validate(session.n_packets(), session.config.n_chains)?;
    let config = session.config.clone();
    let n_sub = config.n_subcarriers;

    // Per-chain rotation profile at toggle-on state.
    let profiles: Vec<(usize, Vec<f64>)> = fault
        .affected
        .iter()
        .map(|cf| {
            let deltas = (0..n_sub).map(|k| fault_rotation(fault.alpha, cf.parity, k, &config)).collect();
            (cf.chain, deltas)
        })
        .collect();

    // Case 2 adds a center offset plus a seeded per-toggle perturbation at
    // every subcarrier; segment j (opened by toggle 2j) uses perturbation j.
    let n_on_segments = (fault.toggle_times.len() + 1) / 2;
    let case2_offsets: Vec<f64> = match fault.case {
        FaultCase::Case1 => Vec::new(),
        FaultCase::Case2 => (0..n_on_segments)
            .map(|j| {
                let mut rng = packet_rng(seed, FAULT_STREAM | j as u64);
                let u: f64 = rng.gen();
                fault.case2_center_offset + (u - 0.5)
            })
            .collect(),
    };

    let states = toggle_states(&fault.toggle_times, session.n_packets());
    // Which on-segment a packet belongs to, for Case-2 offset lookup.
    let mut segment_of = vec![usize::MAX; session.n_packets()];
    {
        let mut seg = 0usize;
        let mut prev = false;
        for (t, &on) in states.iter().enumerate() {
            if on && !prev {
                // entering a shifted segment
                segment_of[t] = seg;
            } else if on {
                segment_of[t] = seg;
            } else if prev {
                seg += 1;
            }
            prev = on;
        }
    }

    let mut out = session.clone();
    for t in 0..out.n_packets() {
        if !states[t] {
            continue;
        }
        let extra = match fault.case {
            FaultCase::Case1 => 0.0,
            FaultCase::Case2 => case2_offsets[segment_of[t]],
        };
        for (chain, deltas) in &profiles {
            let row = out.chain_row_mut(t, *chain);
            for k in 0..n_sub {
                let delta = deltas[k] + extra;
                row[k] = rotate_preserving_norm(row[k], delta);
            }
        }
    }

    let mut applied = fault.clone();
    applied.case2_applied_offsets =
        if case2_offsets.is_empty() { None } else { Some(case2_offsets) };
    Ok((out, applied))
}

/// Fixed scenario presets used by the acceptance pipeline.
pub fn scenario_presets(name: &str) -> Result<ScenarioSpec, SynthError> {
    match name {
        "active-default" => Ok(ScenarioSpec {
            mode: SensingMode::Active,
            paths: vec![
                PathSpec { aoa_deg: 20.0, tof: 45e-9, gain: 1.0, doppler_hz: 0.0 },
                PathSpec { aoa_deg: -40.0, tof: 80e-9, gain: 0.2, doppler_hz: 0.0 },
                PathSpec { aoa_deg: 55.0, tof: 120e-9, gain: 0.15, doppler_hz: 0.0 },
            ],
            snr_db: Some(20.0),
            n_packets: 2000,
            ref_cable_delay: 0.0,
            sync_offset: true,
        }),
        "passive-default" => Ok(ScenarioSpec {
            mode: SensingMode::Passive,
            paths: vec![
                PathSpec { aoa_deg: 0.0, tof: 32.5e-9, gain: 1.0, doppler_hz: 0.0 },
                PathSpec { aoa_deg: -35.0, tof: 70e-9, gain: 0.25, doppler_hz: 0.0 },
                PathSpec { aoa_deg: 50.0, tof: 107.5e-9, gain: 0.10, doppler_hz: 0.0 },
            ],
            snr_db: Some(20.0),
            n_packets: 2000,
            ref_cable_delay: 0.0,
            sync_offset: true,
        }),
        other => Err(SynthError::UnknownPreset(other.to_string())),
    }
}
