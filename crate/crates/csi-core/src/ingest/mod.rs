//! Nexmon-style CSI ingest: the UDP datagram wire codec, pcap reading and
//! writing, multi-chain packet reassembly, and live listen/replay.

mod datagram;
mod pcap;
mod reassembly;
mod udp;

pub use datagram::{decode_datagram, encode_datagram, CsiDatagramHeader, CSI_MAGIC};
pub use pcap::{read_pcap, write_pcap, PcapWriteOptions};
pub use reassembly::{ReassemblyReport, ReassemblyState};
pub use udp::{replay_pcap_udp, replay_session_udp, ListenOptions, SendReport, UdpListener};

use thiserror::Error;

/// Default UDP port carrying CSI datagrams.
pub const DEFAULT_PORT: u16 = 5500;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("short payload: {got} bytes, expected {want}")]
    ShortPayload { got: usize, want: usize },
    #[error("chain index {chain} out of range (n_chains = {n})")]
    ChainOutOfRange { chain: usize, n: usize },
    #[error("sample {value} at subcarrier {subcarrier} exceeds the signed 16-bit range")]
    SampleOverflow { subcarrier: usize, value: f64 },
    #[error("frame has {got} samples, expected {want}")]
    BadFrameLength { got: usize, want: usize },
    #[error("duplicate chain {chain} for sequence {seq}")]
    DuplicateChain { seq: u64, chain: usize },
    #[error("not a pcap file (magic {0:08x})")]
    BadPcapMagic(u32),
    #[error("truncated pcap record")]
    TruncatedPcap,
    #[error("no matching CSI datagrams found (empty session)")]
    EmptySession,
    #[error("socket error: {0}")]
    Socket(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Counters reported by `read_pcap` and the UDP listener.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct IngestReport {
    /// Complete multi-chain packets delivered into the session.
    pub packets: usize,
    /// Packets dropped because a chain never arrived.
    pub dropped_incomplete: usize,
    /// Datagrams rejected by the decoder (bad magic, short, bad chain).
    pub rejected_datagrams: usize,
    /// Capture records skipped as non-CSI traffic.
    pub ignored_records: usize,
    /// Datagrams repeating an already-seen (seq, chain).
    pub duplicate_datagrams: usize,
}
