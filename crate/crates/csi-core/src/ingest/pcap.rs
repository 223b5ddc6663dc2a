//! Classic pcap read/write for CSI captures.
//!
//! Reading accepts little- and big-endian microsecond captures plus
//! little-endian nanosecond captures, Ethernet link type, and filters
//! IPv4/UDP datagrams on the configured port. Writing always produces a
//! little-endian microsecond capture so fixtures are byte-stable.

use std::fs;
use std::path::Path;

use super::datagram::{decode_datagram, encode_datagram, CsiDatagramHeader, CSI_MAGIC};
use super::reassembly::ReassemblyState;
use super::{IngestError, IngestReport, DEFAULT_PORT};
use crate::model::{ArrayGeometry, CaptureConfig, CsiFrame, CsiSession};

const PCAP_MAGIC_US: u32 = 0xa1b2_c3d4;
const PCAP_MAGIC_NS: u32 = 0xa1b2_3c4d;
const LINKTYPE_ETHERNET: u32 = 1;

const ETH_HEADER: usize = 14;
const IP_PROTO_UDP: u8 = 17;

#[derive(Debug, Clone)]
pub struct PcapWriteOptions {
    pub port: u16,
    /// Samples are multiplied by this before integer quantization.
    pub scale: f64,
    pub rssi: i8,
    pub source_mac: [u8; 6],
    pub chanspec: u16,
}

impl Default for PcapWriteOptions {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            scale: 1.0,
            rssi: -42,
            source_mac: [0x02, 0xc5, 0x17, 0x00, 0x00, 0x01],
            chanspec: 0xe32a,
        }
    }
}

fn ipv4_checksum(header: &[u8]) -> u16 {
    let mut sum = 0u32;
    for pair in header.chunks(2) {
        let word = u16::from_be_bytes([pair[0], *pair.get(1).unwrap_or(&0)]);
        sum += word as u32;
    }
    while sum >> 16 != 0 {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Wrap one CSI payload into Ethernet + IPv4 + UDP.
fn encapsulate(payload: &[u8], port: u16) -> Vec<u8> {
    let udp_len = 8 + payload.len();
    let ip_len = 20 + udp_len;
    let mut frame = Vec::with_capacity(ETH_HEADER + ip_len);
    // Ethernet II: dst, src, ethertype 0x0800.
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x02]);
    frame.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01]);
    frame.extend_from_slice(&[0x08, 0x00]);
    // IPv4 header.
    let mut ip = vec![
        0x45, 0x00, // version/IHL, DSCP
        (ip_len >> 8) as u8,
        ip_len as u8,
        0x00, 0x00, // identification
        0x40, 0x00, // don't fragment
        0x40, // TTL
        IP_PROTO_UDP,
        0x00, 0x00, // checksum placeholder
        10, 0, 0, 1, // source
        10, 0, 0, 2, // destination
    ];
    let csum = ipv4_checksum(&ip);
    ip[10..12].copy_from_slice(&csum.to_be_bytes());
    frame.extend_from_slice(&ip);
    // UDP header, checksum disabled.
    frame.extend_from_slice(&port.to_be_bytes());
    frame.extend_from_slice(&port.to_be_bytes());
    frame.extend_from_slice(&(udp_len as u16).to_be_bytes());
    frame.extend_from_slice(&[0x00, 0x00]);
    frame.extend_from_slice(payload);
    frame
}

/// UDP payload of an Ethernet frame if it matches IPv4/UDP on `port`.
fn extract_udp_payload(frame: &[u8], port: u16) -> Option<&[u8]> {
    if frame.len() < ETH_HEADER + 20 + 8 {
        return None;
    }
    if frame[12] != 0x08 || frame[13] != 0x00 {
        return None;
    }
    let ip = &frame[ETH_HEADER..];
    if ip[0] >> 4 != 4 {
        return None;
    }
    let ihl = ((ip[0] & 0x0f) as usize) * 4;
    if ihl < 20 || ip.len() < ihl + 8 || ip[9] != IP_PROTO_UDP {
        return None;
    }
    let udp = &ip[ihl..];
    let dst_port = u16::from_be_bytes([udp[2], udp[3]]);
    if dst_port != port {
        return None;
    }
    let udp_len = u16::from_be_bytes([udp[4], udp[5]]) as usize;
    if udp_len < 8 || udp.len() < udp_len {
        return None;
    }
    Some(&udp[8..udp_len])
}

/// Serialize a session as a pcap of CSI datagrams, one datagram per chain per
/// packet, all chains sharing the packet's capture timestamp.
pub fn write_pcap(session: &CsiSession, path: &Path, opts: &PcapWriteOptions) -> Result<(), IngestError> {
    let mut out = Vec::new();
    out.extend_from_slice(&PCAP_MAGIC_US.to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes()); // version major
    out.extend_from_slice(&4u16.to_le_bytes()); // version minor
    out.extend_from_slice(&0i32.to_le_bytes()); // thiszone
    out.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
    out.extend_from_slice(&65535u32.to_le_bytes()); // snaplen
    out.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());

    let config = &session.config;
    for t in 0..session.n_packets() {
        let ts = session.timestamps[t];
        let sec = ts.floor() as u32;
        let usec = ((ts - ts.floor()) * 1e6).round() as u32;
        for chain in 0..config.n_chains {
            let header = CsiDatagramHeader {
                magic: CSI_MAGIC,
                rssi: opts.rssi,
                frame_ctl: 0x88,
                source_mac: opts.source_mac,
                seq: (session.seqs[t] & 0xffff) as u16,
                core_stream: chain as u16,
                chanspec: opts.chanspec,
                chip_version: 0,
            };
            let csi = session
                .chain_row(t, chain)
                .iter()
                .map(|z| z * opts.scale)
                .collect();
            let frame = CsiFrame { timestamp: ts, seq: session.seqs[t], chain, csi };
            let payload = encode_datagram(&header, &frame, config)?;
            let wire = encapsulate(&payload, opts.port);
            out.extend_from_slice(&sec.to_le_bytes());
            out.extend_from_slice(&usec.to_le_bytes());
            out.extend_from_slice(&(wire.len() as u32).to_le_bytes());
            out.extend_from_slice(&(wire.len() as u32).to_le_bytes());
            out.extend_from_slice(&wire);
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a pcap, decode CSI datagrams on `port`, and reassemble complete
/// multi-chain packets into a session. Timestamps come from the capture
/// record headers, rebased to the first record.
pub fn read_pcap(
    path: &Path,
    config: &CaptureConfig,
    geometry: &ArrayGeometry,
    port: u16,
) -> Result<(CsiSession, IngestReport), IngestError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 24 {
        return Err(IngestError::TruncatedPcap);
    }
    let magic_le = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let magic_be = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let (big_endian, ns_fraction) = if magic_le == PCAP_MAGIC_US {
        (false, false)
    } else if magic_le == PCAP_MAGIC_NS {
        (false, true)
    } else if magic_be == PCAP_MAGIC_US {
        (true, false)
    } else {
        return Err(IngestError::BadPcapMagic(magic_le));
    };
    let read_u32 = |b: &[u8]| -> u32 {
        let arr: [u8; 4] = b.try_into().unwrap();
        if big_endian {
            u32::from_be_bytes(arr)
        } else {
            u32::from_le_bytes(arr)
        }
    };

    let mut report = IngestReport::default();
    let mut reassembly = ReassemblyState::with_default_deadline(config.clone());
    let mut session = CsiSession::new(config.clone(), geometry.clone())?;
    let mut base_ts: Option<f64> = None;
    let mut ready = Vec::new();

    let mut off = 24usize;
    while off + 16 <= bytes.len() {
        let sec = read_u32(&bytes[off..off + 4]) as f64;
        let frac = read_u32(&bytes[off + 4..off + 8]) as f64;
        let incl = read_u32(&bytes[off + 8..off + 12]) as usize;
        off += 16;
        if off + incl > bytes.len() {
            return Err(IngestError::TruncatedPcap);
        }
        let record = &bytes[off..off + incl];
        off += incl;

        let ts_abs = sec + frac * if ns_fraction { 1e-9 } else { 1e-6 };
        let ts = match base_ts {
            Some(base) => ts_abs - base,
            None => {
                base_ts = Some(ts_abs);
                0.0
            }
        };
        let Some(payload) = extract_udp_payload(record, port) else {
            report.ignored_records += 1;
            continue;
        };
        match decode_datagram(payload, config) {
            Ok((_, mut frame)) => {
                frame.timestamp = ts;
                ready.extend(reassembly.offer(frame)?);
            }
            Err(_) => report.rejected_datagrams += 1,
        }
    }
    let (tail, rreport) = reassembly.finish();
    ready.extend(tail);
    report.dropped_incomplete = rreport.dropped_incomplete;
    report.duplicate_datagrams = rreport.duplicates;

    for packet in ready {
        session.push_packet(packet.seq, packet.timestamp, packet.samples)?;
        report.packets += 1;
    }
    if session.n_packets() == 0 {
        return Err(IngestError::EmptySession);
    }
    Ok((session, report))
}

/// Iterate the UDP payloads of a pcap (for verbatim replay).
pub(crate) fn pcap_udp_payloads(path: &Path, port: u16) -> Result<Vec<Vec<u8>>, IngestError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 24 {
        return Err(IngestError::TruncatedPcap);
    }
    let magic_le = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    if magic_le != PCAP_MAGIC_US && magic_le != PCAP_MAGIC_NS {
        return Err(IngestError::BadPcapMagic(magic_le));
    }
    let mut payloads = Vec::new();
    let mut off = 24usize;
    while off + 16 <= bytes.len() {
        let incl = u32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap()) as usize;
        off += 16;
        if off + incl > bytes.len() {
            return Err(IngestError::TruncatedPcap);
        }
        if let Some(p) = extract_udp_payload(&bytes[off..off + incl], port) {
            payloads.push(p.to_vec());
        }
        off += incl;
    }
    Ok(payloads)
}
