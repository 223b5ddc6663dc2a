//! Domain types shared by every pipeline stage: capture profile, array
//! geometry, per-packet CSI frames, and the session tensor they assemble into.
//!
//! Subcarrier storage order is frequency-ascending: index 0 is the lowest
//! frequency. Ingest reorders FFT-ordered wire data before anything else sees
//! it, so "linear in frequency" statements are statements about index distance
//! from `center_index`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One complex channel gain. Finiteness is enforced by ingest validation,
/// not by the type itself.
pub type ComplexSample = Complex64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("subcarrier index {index} out of range (n_subcarriers = {n})")]
    SubcarrierOutOfRange { index: usize, n: usize },
    #[error("mirror of subcarrier {index} is {mirror}, outside 0..{n} (asymmetric index)")]
    AsymmetricIndex { index: usize, mirror: isize, n: usize },
    #[error("invalid capture config: {0}")]
    InvalidConfig(String),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("packet has {got} samples, expected n_chains * n_subcarriers = {want}")]
    BadPacketLength { got: usize, want: usize },
    #[error("chain index {chain} out of range (n_chains = {n})")]
    ChainOutOfRange { chain: usize, n: usize },
    #[error("session file corrupt: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Layout of the on-wire CSI datagram header.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeaderVariant {
    /// 18-byte header: magic, rssi, frame_ctl, mac, seq, core/stream, chanspec.
    #[default]
    Standard18,
    /// 20-byte header with a trailing u16 chip version.
    Extended20,
}

/// Capture profile of one collection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    /// Channel center frequency (Hz).
    pub center_freq: f64,
    /// Occupied bandwidth (Hz).
    pub bandwidth: f64,
    /// Number of OFDM subcarriers spanning the bandwidth.
    pub n_subcarriers: usize,
    /// Receive chains present on the wire, including any wired reference.
    pub n_chains: usize,
    /// Chain wired to the transmitter, if any.
    pub ref_chain: Option<usize>,
    /// Nominal packet rate (Hz).
    pub packet_rate: f64,
    /// Subcarrier index at the channel center frequency.
    pub center_index: usize,
    /// On-wire datagram header layout.
    #[serde(default)]
    pub header_variant: HeaderVariant,
}

impl Default for CaptureConfig {
    /// The 802.11ac 80 MHz profile: 5.8 GHz center, 256 subcarriers,
    /// 4 chains with chain 0 wired as reference, 400 packets/s.
    fn default() -> Self {
        Self {
            center_freq: 5.8e9,
            bandwidth: 80e6,
            n_subcarriers: 256,
            n_chains: 4,
            ref_chain: Some(0),
            packet_rate: 400.0,
            center_index: 128,
            header_variant: HeaderVariant::Standard18,
        }
    }
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_subcarriers < 2 {
            return Err(ModelError::InvalidConfig("n_subcarriers must be >= 2".into()));
        }
        if self.bandwidth <= 0.0 || !self.bandwidth.is_finite() {
            return Err(ModelError::InvalidConfig("bandwidth must be positive".into()));
        }
        if !self.center_freq.is_finite() || self.center_freq <= 0.0 {
            return Err(ModelError::InvalidConfig("center_freq must be positive".into()));
        }
        if self.n_chains == 0 {
            return Err(ModelError::InvalidConfig("n_chains must be >= 1".into()));
        }
        if let Some(r) = self.ref_chain {
            if r >= self.n_chains {
                return Err(ModelError::InvalidConfig(format!(
                    "ref_chain {r} out of range (n_chains = {})",
                    self.n_chains
                )));
            }
        }
        if self.center_index >= self.n_subcarriers {
            return Err(ModelError::InvalidConfig(format!(
                "center_index {} out of range (n_subcarriers = {})",
                self.center_index, self.n_subcarriers
            )));
        }
        if self.packet_rate < 0.0 || !self.packet_rate.is_finite() {
            return Err(ModelError::InvalidConfig("packet_rate must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Frequency spacing between adjacent subcarriers (Hz).
    pub fn subcarrier_spacing(&self) -> f64 {
        self.bandwidth / self.n_subcarriers as f64
    }

    /// Number of free-space chains (chains minus the wired reference).
    pub fn n_free_chains(&self) -> usize {
        self.n_chains - usize::from(self.ref_chain.is_some())
    }
}

/// Uniform linear array of the free-space receive antennas.
///
/// The wired reference chain is not part of the array; `n_antennas` counts
/// free-space elements only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub n_antennas: usize,
    /// Element spacing (m).
    pub spacing: f64,
    /// Broadside direction in the angle convention (degrees). 0 means angles
    /// are measured from the array broadside.
    pub orientation_deg: f64,
}

impl Default for ArrayGeometry {
    /// Three free-space antennas at half-wavelength spacing for 5.8 GHz.
    fn default() -> Self {
        Self {
            n_antennas: 3,
            spacing: crate::SPEED_OF_LIGHT / (2.0 * 5.8e9),
            orientation_deg: 0.0,
        }
    }
}

impl ArrayGeometry {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_antennas < 2 {
            return Err(ModelError::InvalidGeometry("n_antennas must be >= 2".into()));
        }
        if !(self.spacing > 0.0) {
            return Err(ModelError::InvalidGeometry("spacing must be > 0".into()));
        }
        Ok(())
    }
}

/// One decoded datagram worth of CSI: a single chain's channel response.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    /// Seconds relative to capture start.
    pub timestamp: f64,
    /// Packet sequence number (unrolled past u16 wraparound).
    pub seq: u64,
    pub chain: usize,
    /// Frequency-ascending channel response, length `n_subcarriers`.
    pub csi: Vec<ComplexSample>,
}

/// Time-ordered CSI tensor `[packet][chain][subcarrier]` plus its capture
/// profile. Every retained packet carries all chains; packets with missing
/// chains are dropped (and counted) by ingest.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSession {
    pub config: CaptureConfig,
    pub geometry: ArrayGeometry,
    /// Seconds relative to session start, one per packet, strictly increasing.
    pub timestamps: Vec<f64>,
    /// Unrolled sequence number per packet.
    pub seqs: Vec<u64>,
    /// Chain-major samples: `data[((t * n_chains) + chain) * n_sub + k]`.
    data: Vec<ComplexSample>,
}

impl CsiSession {
    pub fn new(config: CaptureConfig, geometry: ArrayGeometry) -> Result<Self, ModelError> {
        config.validate()?;
        geometry.validate()?;
        Ok(Self { config, geometry, timestamps: Vec::new(), seqs: Vec::new(), data: Vec::new() })
    }

    pub fn n_packets(&self) -> usize {
        self.timestamps.len()
    }

    fn stride(&self) -> usize {
        self.config.n_chains * self.config.n_subcarriers
    }

    /// Append one complete packet. `samples` is chain-major, length
    /// `n_chains * n_subcarriers`.
    pub fn push_packet(
        &mut self,
        seq: u64,
        timestamp: f64,
        samples: Vec<ComplexSample>,
    ) -> Result<(), ModelError> {
        let want = self.stride();
        if samples.len() != want {
            return Err(ModelError::BadPacketLength { got: samples.len(), want });
        }
        self.timestamps.push(timestamp);
        self.seqs.push(seq);
        self.data.extend_from_slice(&samples);
        Ok(())
    }

    pub fn sample(&self, packet: usize, chain: usize, subcarrier: usize) -> ComplexSample {
        let n_sub = self.config.n_subcarriers;
        self.data[(packet * self.config.n_chains + chain) * n_sub + subcarrier]
    }

    /// All samples of one chain in one packet, frequency-ascending.
    pub fn chain_row(&self, packet: usize, chain: usize) -> &[ComplexSample] {
        let n_sub = self.config.n_subcarriers;
        let base = (packet * self.config.n_chains + chain) * n_sub;
        &self.data[base..base + n_sub]
    }

    pub fn chain_row_mut(&mut self, packet: usize, chain: usize) -> &mut [ComplexSample] {
        let n_sub = self.config.n_subcarriers;
        let base = (packet * self.config.n_chains + chain) * n_sub;
        &mut self.data[base..base + n_sub]
    }

    /// Raw chain-major sample block of one packet.
    pub fn packet_samples(&self, packet: usize) -> &[ComplexSample] {
        let s = self.stride();
        &self.data[packet * s..(packet + 1) * s]
    }

    /// Subcarriers whose magnitude is zero across all packets and chains
    /// (guard/null bins). Excluded from shift detection and profile fitting.
    pub fn guard_subcarriers(&self) -> Vec<bool> {
        let n_sub = self.config.n_subcarriers;
        let mut guard = vec![true; n_sub];
        for t in 0..self.n_packets() {
            for c in 0..self.config.n_chains {
                let row = self.chain_row(t, c);
                for (k, g) in guard.iter_mut().enumerate() {
                    if *g && row[k].norm_sqr() > 0.0 {
                        *g = false;
                    }
                }
            }
        }
        guard
    }
}

/// Frequency of subcarrier `k`: affine in `k` with slope
/// `bandwidth / n_subcarriers`, anchored at `center_index`.
pub fn subcarrier_frequency(k: usize, config: &CaptureConfig) -> Result<f64, ModelError> {
    if k >= config.n_subcarriers {
        return Err(ModelError::SubcarrierOutOfRange { index: k, n: config.n_subcarriers });
    }
    let offset = k as isize - config.center_index as isize;
    Ok(config.center_freq + offset as f64 * config.subcarrier_spacing())
}

/// Index mirrored about `center_index`: `2 * center_index - k`.
pub fn mirror_subcarrier(k: usize, config: &CaptureConfig) -> Result<usize, ModelError> {
    if k >= config.n_subcarriers {
        return Err(ModelError::SubcarrierOutOfRange { index: k, n: config.n_subcarriers });
    }
    let mirror = 2 * config.center_index as isize - k as isize;
    if mirror < 0 || mirror >= config.n_subcarriers as isize {
        return Err(ModelError::AsymmetricIndex { index: k, mirror, n: config.n_subcarriers });
    }
    Ok(mirror as usize)
}

/// Report-only session health check.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Samples that are NaN or infinite.
    pub non_finite_samples: usize,
    /// Packets implied missing by sequence gaps.
    pub dropped_packets: usize,
    /// Number of distinct sequence gaps.
    pub seq_gaps: usize,
    /// Adjacent timestamp pairs that are not strictly increasing.
    pub timestamp_violations: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }
}

/// Scan a session for non-finite samples, sequence gaps, and timestamp
/// monotonicity violations. Never fails; a clean report certifies the
/// `CsiSession` invariants.
pub fn validate_session(session: &CsiSession) -> ValidationReport {
    let mut report = ValidationReport::default();
    for t in 0..session.n_packets() {
        for s in session.packet_samples(t) {
            if !s.re.is_finite() || !s.im.is_finite() {
                report.non_finite_samples += 1;
            }
        }
    }
    for w in session.seqs.windows(2) {
        if w[1] > w[0] + 1 {
            report.seq_gaps += 1;
            report.dropped_packets += (w[1] - w[0] - 1) as usize;
        }
    }
    for w in session.timestamps.windows(2) {
        if !(w[1] > w[0]) {
            report.timestamp_violations += 1;
        }
    }
    report
}

// --- session directory persistence -----------------------------------------
//
// A session is a directory holding `config.json` (CaptureConfig and
// ArrayGeometry fields, snake_case, SI units) and `csi.bin`. The binary file
// is little-endian; per packet: u64 seq, f64 timestamp, then
// n_chains * n_subcarriers * 2 f32 values, real before imaginary, chain-major
// then subcarrier.

#[derive(Serialize, Deserialize)]
struct SessionConfigFile {
    #[serde(flatten)]
    config: CaptureConfig,
    geometry: ArrayGeometry,
}

pub const SESSION_CONFIG_FILE: &str = "config.json";
pub const SESSION_DATA_FILE: &str = "csi.bin";

impl CsiSession {
    pub fn save_dir(&self, dir: &Path) -> Result<(), ModelError> {
        fs::create_dir_all(dir)?;
        let cfg = SessionConfigFile { config: self.config.clone(), geometry: self.geometry.clone() };
        let json = serde_json::to_vec_pretty(&cfg)?;
        fs::write(dir.join(SESSION_CONFIG_FILE), json)?;

        let mut buf = Vec::with_capacity(self.n_packets() * (16 + self.stride() * 8));
        for t in 0..self.n_packets() {
            buf.extend_from_slice(&self.seqs[t].to_le_bytes());
            buf.extend_from_slice(&self.timestamps[t].to_le_bytes());
            for s in self.packet_samples(t) {
                buf.extend_from_slice(&(s.re as f32).to_le_bytes());
                buf.extend_from_slice(&(s.im as f32).to_le_bytes());
            }
        }
        let mut f = fs::File::create(dir.join(SESSION_DATA_FILE))?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self, ModelError> {
        let cfg_bytes = fs::read(dir.join(SESSION_CONFIG_FILE))?;
        let cfg: SessionConfigFile = serde_json::from_slice(&cfg_bytes)?;
        let mut session = CsiSession::new(cfg.config, cfg.geometry)?;

        let mut bytes = Vec::new();
        fs::File::open(dir.join(SESSION_DATA_FILE))?.read_to_end(&mut bytes)?;
        let stride = session.stride();
        let rec_len = 16 + stride * 8;
        if bytes.len() % rec_len != 0 {
            return Err(ModelError::Corrupt(format!(
                "csi.bin length {} is not a multiple of the {}-byte packet record",
                bytes.len(),
                rec_len
            )));
        }
        for rec in bytes.chunks_exact(rec_len) {
            let seq = u64::from_le_bytes(rec[0..8].try_into().unwrap());
            let ts = f64::from_le_bytes(rec[8..16].try_into().unwrap());
            let mut samples = Vec::with_capacity(stride);
            for pair in rec[16..].chunks_exact(8) {
                let re = f32::from_le_bytes(pair[0..4].try_into().unwrap());
                let im = f32::from_le_bytes(pair[4..8].try_into().unwrap());
                samples.push(ComplexSample::new(re as f64, im as f64));
            }
            session.push_packet(seq, ts, samples)?;
        }
        Ok(session)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> CaptureConfig {
        CaptureConfig::default()
    }

    #[test]
    fn center_subcarrier_is_center_freq() {
        let c = cfg();
        assert_eq!(subcarrier_frequency(c.center_index, &c).unwrap(), 5.8e9);
    }

    #[test]
    fn spacing_is_312_5_khz() {
        let c = cfg();
        assert_eq!(c.subcarrier_spacing(), 80e6 / 256.0);
        assert_eq!(c.subcarrier_spacing(), 312_500.0);
    }

    #[test]
    fn one_step_offset() {
        let c = cfg();
        let f = subcarrier_frequency(c.center_index + 1, &c).unwrap();
        assert_eq!(f, 5.8e9 + 312_500.0);
    }

    #[test]
    fn frequency_out_of_range() {
        let c = cfg();
        assert!(subcarrier_frequency(256, &c).is_err());
    }

    #[test]
    fn frequency_offset_is_exactly_antisymmetric() {
        let c = cfg();
        for k in 1..c.n_subcarriers {
            let m = match mirror_subcarrier(k, &c) {
                Ok(m) => m,
                Err(_) => continue,
            };
            let fk = subcarrier_frequency(k, &c).unwrap() - c.center_freq;
            let fm = subcarrier_frequency(m, &c).unwrap() - c.center_freq;
            assert_eq!(fm, -fk, "k = {k}");
        }
    }

    #[test]
    fn mirror_self_at_center() {
        let c = cfg();
        assert_eq!(mirror_subcarrier(c.center_index, &c).unwrap(), c.center_index);
    }

    #[test]
    fn mirror_paper_pair_center_129() {
        // Subcarriers 7 and 251 are symmetric about subcarrier 129.
        let c = CaptureConfig { center_index: 129, ..cfg() };
        assert_eq!(mirror_subcarrier(7, &c).unwrap(), 251);
        assert_eq!(mirror_subcarrier(251, &c).unwrap(), 7);
    }

    #[test]
    fn mirror_center_128() {
        let c = cfg();
        assert_eq!(mirror_subcarrier(7, &c).unwrap(), 249);
    }

    #[test]
    fn mirror_involution() {
        let c = cfg();
        for k in 0..c.n_subcarriers {
            if let Ok(m) = mirror_subcarrier(k, &c) {
                assert_eq!(mirror_subcarrier(m, &c).unwrap(), k);
            }
        }
    }

    #[test]
    fn mirror_out_of_range_is_asymmetric_error() {
        let c = cfg();
        // mirror(0) = 256 with center 128.
        assert!(matches!(mirror_subcarrier(0, &c), Err(ModelError::AsymmetricIndex { .. })));
    }

    fn tiny_session() -> CsiSession {
        let config = CaptureConfig { n_subcarriers: 4, n_chains: 2, ref_chain: None, center_index: 2, ..cfg() };
        let geometry = ArrayGeometry { n_antennas: 2, ..Default::default() };
        let mut s = CsiSession::new(config, geometry).unwrap();
        for t in 0..5u64 {
            let samples = vec![ComplexSample::new(1.0, t as f64); 8];
            s.push_packet(100 + t, t as f64 * 0.0025, samples).unwrap();
        }
        s
    }

    #[test]
    fn validate_clean() {
        assert!(validate_session(&tiny_session()).is_clean());
    }

    #[test]
    fn validate_counts_nan() {
        let mut s = tiny_session();
        s.chain_row_mut(2, 1)[0] = ComplexSample::new(f64::NAN, 0.0);
        let r = validate_session(&s);
        assert_eq!(r.non_finite_samples, 1);
        assert!(!r.is_clean());
    }

    #[test]
    fn validate_counts_seq_gap() {
        let mut s = tiny_session();
        // 100..=104 -> jump the last packet to 106: one gap of size 1.
        *s.seqs.last_mut().unwrap() = 106;
        let r = validate_session(&s);
        assert_eq!(r.seq_gaps, 1);
        assert_eq!(r.dropped_packets, 1);
    }

    #[test]
    fn validate_counts_timestamp_violation() {
        let mut s = tiny_session();
        s.timestamps[3] = s.timestamps[2];
        assert_eq!(validate_session(&s).timestamp_violations, 1);
    }

    #[test]
    fn session_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = tiny_session();
        s.save_dir(dir.path()).unwrap();
        let loaded = CsiSession::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.config, s.config);
        assert_eq!(loaded.geometry, s.geometry);
        assert_eq!(loaded.seqs, s.seqs);
        assert_eq!(loaded.timestamps, s.timestamps);
        // Values survive the f32 storage exactly (they are small integers here).
        for t in 0..s.n_packets() {
            assert_eq!(loaded.packet_samples(t), s.packet_samples(t));
        }
    }

    #[test]
    fn bad_packet_length_rejected() {
        let mut s = tiny_session();
        assert!(matches!(
            s.push_packet(200, 9.9, vec![ComplexSample::new(0.0, 0.0); 7]),
            Err(ModelError::BadPacketLength { got: 7, want: 8 })
        ));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.center_index = 256;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.ref_chain = Some(4);
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.n_subcarriers = 1;
        assert!(c.validate().is_err());
    }
}
