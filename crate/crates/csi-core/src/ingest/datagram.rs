//! Bit-exact codec for the CSI UDP datagram payload.
//!
//! Little-endian layout: bytes 0-3 magic `11 11 11 11`; byte 4 rssi (i8);
//! byte 5 frame control; bytes 6-11 source MAC; bytes 12-13 seq (u16);
//! bytes 14-15 core/stream (bits 0-2 core, bits 3-5 spatial stream);
//! bytes 16-17 chanspec; then, only in the extended 20-byte variant,
//! bytes 18-19 chip version. The remainder is `n_subcarriers` pairs of
//! (i16 real, i16 imag) in FFT order: DC first, then positive frequency
//! offsets, then negative. Decoding reorders to frequency-ascending storage.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::{CaptureConfig, CsiFrame, HeaderVariant};

/// Magic bytes opening every CSI datagram.
pub const CSI_MAGIC: [u8; 4] = [0x11, 0x11, 0x11, 0x11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsiDatagramHeader {
    pub magic: [u8; 4],
    /// Received signal strength (dB).
    pub rssi: i8,
    pub frame_ctl: u8,
    pub source_mac: [u8; 6],
    /// On-wire 16-bit sequence counter.
    pub seq: u16,
    /// Bits 0-2: core (receive chain); bits 3-5: spatial stream.
    pub core_stream: u16,
    pub chanspec: u16,
    /// Zero unless the extended 20-byte header variant is in use.
    pub chip_version: u16,
}

impl CsiDatagramHeader {
    pub fn core(&self) -> usize {
        (self.core_stream & 0x7) as usize
    }

    pub fn spatial_stream(&self) -> usize {
        ((self.core_stream >> 3) & 0x7) as usize
    }
}

fn header_len(variant: HeaderVariant) -> usize {
    match variant {
        HeaderVariant::Standard18 => 18,
        HeaderVariant::Extended20 => 20,
    }
}

/// Wire position of frequency-ascending subcarrier `k` in FFT order.
fn fft_position(k: usize, config: &CaptureConfig) -> usize {
    let n = config.n_subcarriers as isize;
    (k as isize - config.center_index as isize).rem_euclid(n) as usize
}

/// Decode one datagram into its header and a frequency-ascending CSI frame.
/// The frame's timestamp is left at zero for the caller to fill from the
/// capture record or arrival clock.
pub fn decode_datagram(
    bytes: &[u8],
    config: &CaptureConfig,
) -> Result<(CsiDatagramHeader, CsiFrame), IngestError> {
    let hlen = header_len(config.header_variant);
    let want = hlen + config.n_subcarriers * 4;
    if bytes.len() != want {
        return Err(IngestError::ShortPayload { got: bytes.len(), want });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != CSI_MAGIC {
        return Err(IngestError::BadMagic(magic));
    }
    let header = CsiDatagramHeader {
        magic,
        rssi: bytes[4] as i8,
        frame_ctl: bytes[5],
        source_mac: bytes[6..12].try_into().unwrap(),
        seq: u16::from_le_bytes(bytes[12..14].try_into().unwrap()),
        core_stream: u16::from_le_bytes(bytes[14..16].try_into().unwrap()),
        chanspec: u16::from_le_bytes(bytes[16..18].try_into().unwrap()),
        chip_version: match config.header_variant {
            HeaderVariant::Standard18 => 0,
            HeaderVariant::Extended20 => u16::from_le_bytes(bytes[18..20].try_into().unwrap()),
        },
    };
    let chain = header.core();
    if chain >= config.n_chains {
        return Err(IngestError::ChainOutOfRange { chain, n: config.n_chains });
    }

    let payload = &bytes[hlen..];
    let mut csi = Vec::with_capacity(config.n_subcarriers);
    for k in 0..config.n_subcarriers {
        let p = fft_position(k, config) * 4;
        let re = i16::from_le_bytes(payload[p..p + 2].try_into().unwrap());
        let im = i16::from_le_bytes(payload[p + 2..p + 4].try_into().unwrap());
        csi.push(Complex64::new(re as f64, im as f64));
    }
    Ok((header, CsiFrame { timestamp: 0.0, seq: header.seq as u64, chain, csi }))
}

/// Encode a frame back onto the wire; the exact inverse of `decode_datagram`.
/// Sample components are rounded to the nearest integer and must fit in i16.
pub fn encode_datagram(
    header: &CsiDatagramHeader,
    frame: &CsiFrame,
    config: &CaptureConfig,
) -> Result<Vec<u8>, IngestError> {
    if frame.csi.len() != config.n_subcarriers {
        return Err(IngestError::BadFrameLength { got: frame.csi.len(), want: config.n_subcarriers });
    }
    let hlen = header_len(config.header_variant);
    let mut bytes = Vec::with_capacity(hlen + config.n_subcarriers * 4);
    bytes.extend_from_slice(&CSI_MAGIC);
    bytes.push(header.rssi as u8);
    bytes.push(header.frame_ctl);
    bytes.extend_from_slice(&header.source_mac);
    bytes.extend_from_slice(&header.seq.to_le_bytes());
    bytes.extend_from_slice(&header.core_stream.to_le_bytes());
    bytes.extend_from_slice(&header.chanspec.to_le_bytes());
    if config.header_variant == HeaderVariant::Extended20 {
        bytes.extend_from_slice(&header.chip_version.to_le_bytes());
    }

    let mut payload = vec![0u8; config.n_subcarriers * 4];
    for (k, z) in frame.csi.iter().enumerate() {
        let quantize = |v: f64| -> Result<i16, IngestError> {
            let r = v.round();
            if !r.is_finite() || r < i16::MIN as f64 || r > i16::MAX as f64 {
                return Err(IngestError::SampleOverflow { subcarrier: k, value: v });
            }
            Ok(r as i16)
        };
        let p = fft_position(k, config) * 4;
        payload[p..p + 2].copy_from_slice(&quantize(z.re)?.to_le_bytes());
        payload[p + 2..p + 4].copy_from_slice(&quantize(z.im)?.to_le_bytes());
    }
    bytes.extend_from_slice(&payload);
    Ok(bytes)
}
