//! Live UDP listen and paced replay.

use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::datagram::{decode_datagram, encode_datagram, CsiDatagramHeader, CSI_MAGIC};
use super::pcap::pcap_udp_payloads;
use super::{IngestError, IngestReport};
use crate::model::{CaptureConfig, CsiFrame, CsiSession};

#[derive(Debug, Clone)]
pub struct ListenOptions {
    /// Stop after this long without any datagram.
    pub idle_timeout: Option<Duration>,
    /// Stop after delivering this many frames.
    pub max_frames: Option<usize>,
    /// External stop flag (checked between reads).
    pub stop: Option<Arc<AtomicBool>>,
}

impl Default for ListenOptions {
    fn default() -> Self {
        Self { idle_timeout: Some(Duration::from_secs(5)), max_frames: None, stop: None }
    }
}

/// Single-producer UDP listener delivering decoded frames to a sink.
pub struct UdpListener {
    socket: UdpSocket,
    local_port: u16,
}

impl UdpListener {
    pub fn bind(addr: &str, port: u16) -> Result<Self, IngestError> {
        let socket = UdpSocket::bind((addr, port)).map_err(|e| IngestError::Socket(e.to_string()))?;
        let local_port = socket.local_addr().map_err(|e| IngestError::Socket(e.to_string()))?.port();
        Ok(Self { socket, local_port })
    }

    pub fn local_port(&self) -> u16 {
        self.local_port
    }

    /// Receive datagrams until the idle timeout, frame budget, or stop flag
    /// fires. Each valid datagram is decoded, stamped with the arrival time
    /// relative to the first frame, and handed to `sink` in arrival order.
    /// Invalid datagrams are counted, never fatal.
    pub fn run<F>(
        &self,
        config: &CaptureConfig,
        opts: &ListenOptions,
        mut sink: F,
    ) -> Result<IngestReport, IngestError>
    where
        F: FnMut(CsiDatagramHeader, CsiFrame),
    {
        self.socket
            .set_read_timeout(Some(Duration::from_millis(50)))
            .map_err(|e| IngestError::Socket(e.to_string()))?;
        let mut buf = vec![0u8; 65536];
        let mut report = IngestReport::default();
        let mut frames = 0usize;
        let mut last_rx = Instant::now();
        let mut first_rx: Option<Instant> = None;
        loop {
            if let Some(stop) = &opts.stop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
            }
            if let Some(max) = opts.max_frames {
                if frames >= max {
                    break;
                }
            }
            if let Some(idle) = opts.idle_timeout {
                if last_rx.elapsed() > idle {
                    break;
                }
            }
            match self.socket.recv_from(&mut buf) {
                Ok((len, _)) => {
                    last_rx = Instant::now();
                    match decode_datagram(&buf[..len], config) {
                        Ok((header, mut frame)) => {
                            let t0 = *first_rx.get_or_insert_with(Instant::now);
                            frame.timestamp = t0.elapsed().as_secs_f64();
                            frames += 1;
                            sink(header, frame);
                        }
                        Err(_) => report.rejected_datagrams += 1,
                    }
                }
                Err(e)
                    if e.kind() == std::io::ErrorKind::WouldBlock
                        || e.kind() == std::io::ErrorKind::TimedOut =>
                {
                    continue;
                }
                Err(e) => return Err(IngestError::Socket(e.to_string())),
            }
        }
        report.packets = frames;
        Ok(report)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SendReport {
    pub datagrams_sent: usize,
    pub packets_sent: usize,
    pub elapsed_secs: f64,
    /// Packets per second actually achieved.
    pub achieved_rate: f64,
}

fn resolve(dest: &str) -> Result<SocketAddr, IngestError> {
    dest.to_socket_addrs()
        .map_err(|e| IngestError::Socket(format!("cannot resolve {dest}: {e}")))?
        .next()
        .ok_or_else(|| IngestError::Socket(format!("no address for {dest}")))
}

fn pace(start: Instant, packet_index: usize, rate: f64) {
    if rate <= 0.0 {
        return;
    }
    let target = Duration::from_secs_f64(packet_index as f64 / rate);
    loop {
        let elapsed = start.elapsed();
        if elapsed >= target {
            break;
        }
        let remain = target - elapsed;
        if remain > Duration::from_micros(500) {
            std::thread::sleep(remain - Duration::from_micros(300));
        } else {
            std::hint::spin_loop();
        }
    }
}

/// Re-encode a session and send it as UDP datagrams paced at `rate` packets
/// per second (all chains of one packet go back-to-back; rate 0 sends as
/// fast as possible). Samples are scaled by `scale` before quantization.
pub fn replay_session_udp(
    session: &CsiSession,
    dest: &str,
    rate: f64,
    scale: f64,
) -> Result<SendReport, IngestError> {
    let addr = resolve(dest)?;
    let socket = UdpSocket::bind(("0.0.0.0", 0)).map_err(|e| IngestError::Socket(e.to_string()))?;
    let config = &session.config;

    // Encode everything first so pacing is not skewed by encode time.
    let mut packets: Vec<Vec<Vec<u8>>> = Vec::with_capacity(session.n_packets());
    for t in 0..session.n_packets() {
        let mut chains = Vec::with_capacity(config.n_chains);
        for chain in 0..config.n_chains {
            let header = CsiDatagramHeader {
                magic: CSI_MAGIC,
                rssi: -42,
                frame_ctl: 0x88,
                source_mac: [0x02, 0xc5, 0x17, 0x00, 0x00, 0x01],
                seq: (session.seqs[t] & 0xffff) as u16,
                core_stream: chain as u16,
                chanspec: 0xe32a,
                chip_version: 0,
            };
            let csi = session.chain_row(t, chain).iter().map(|z| z * scale).collect();
            let frame = CsiFrame { timestamp: 0.0, seq: session.seqs[t], chain, csi };
            chains.push(encode_datagram(&header, &frame, config)?);
        }
        packets.push(chains);
    }

    let start = Instant::now();
    let mut datagrams = 0usize;
    for (i, chains) in packets.iter().enumerate() {
        pace(start, i, rate);
        for bytes in chains {
            socket.send_to(bytes, addr).map_err(|e| IngestError::Socket(e.to_string()))?;
            datagrams += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    Ok(SendReport {
        datagrams_sent: datagrams,
        packets_sent: packets.len(),
        elapsed_secs: elapsed,
        achieved_rate: if elapsed > 0.0 { packets.len() as f64 / elapsed } else { f64::INFINITY },
    })
}

/// Replay the CSI datagrams of a pcap verbatim, pacing every `chains_per_packet`
/// datagrams as one packet.
pub fn replay_pcap_udp(
    path: &Path,
    port_filter: u16,
    dest: &str,
    rate: f64,
    chains_per_packet: usize,
) -> Result<SendReport, IngestError> {
    let payloads = pcap_udp_payloads(path, port_filter)?;
    let addr = resolve(dest)?;
    let socket = UdpSocket::bind(("0.0.0.0", 0)).map_err(|e| IngestError::Socket(e.to_string()))?;
    let group = chains_per_packet.max(1);
    let start = Instant::now();
    for (i, payload) in payloads.iter().enumerate() {
        pace(start, i / group, rate);
        socket.send_to(payload, addr).map_err(|e| IngestError::Socket(e.to_string()))?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let packets = payloads.len() / group;
    Ok(SendReport {
        datagrams_sent: payloads.len(),
        packets_sent: packets,
        elapsed_secs: elapsed,
        achieved_rate: if elapsed > 0.0 { packets as f64 / elapsed } else { f64::INFINITY },
    })
}
