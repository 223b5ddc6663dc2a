//! Group single-chain datagrams into complete multi-chain packets.
//!
//! Frames are keyed by their unrolled sequence number (a backward u16 jump
//! greater than 32768 counts as wraparound). A packet is released only when
//! all chains have arrived, in sequence order; pending packets whose first
//! frame is older than the eviction deadline are dropped and counted.

use std::collections::BTreeMap;

use super::IngestError;
use crate::model::{CaptureConfig, ComplexSample, CsiFrame};

/// Reassembled packet ready for a session.
#[derive(Debug, Clone)]
pub struct ReadyPacket {
    pub seq: u64,
    pub timestamp: f64,
    /// Chain-major samples, length n_chains * n_subcarriers.
    pub samples: Vec<ComplexSample>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReassemblyReport {
    pub completed: usize,
    pub dropped_incomplete: usize,
    pub duplicates: usize,
}

struct Pending {
    chains: Vec<Option<CsiFrame>>,
    first_timestamp: f64,
    seen: usize,
}

pub struct ReassemblyState {
    config: CaptureConfig,
    /// Capture-time seconds an incomplete packet may linger.
    eviction_deadline: f64,
    pending: BTreeMap<u64, Pending>,
    last_raw_seq: Option<u16>,
    epoch: u64,
    report: ReassemblyReport,
}

impl ReassemblyState {
    pub fn new(config: CaptureConfig, eviction_deadline: f64) -> Self {
        Self {
            config,
            eviction_deadline,
            pending: BTreeMap::new(),
            last_raw_seq: None,
            epoch: 0,
            report: ReassemblyReport::default(),
        }
    }

    /// Default deadline: 0.1 s of capture time (about 40 packet periods at
    /// the 400 Hz profile).
    pub fn with_default_deadline(config: CaptureConfig) -> Self {
        Self::new(config, 0.1)
    }

    fn unroll(&mut self, raw: u16) -> u64 {
        if let Some(last) = self.last_raw_seq {
            // Backward jump of more than half the counter space is a wrap.
            if (raw as i32) < (last as i32) - 32768 {
                self.epoch += 1;
            }
        }
        self.last_raw_seq = Some(raw);
        (self.epoch << 16) | raw as u64
    }

    /// Offer one decoded frame (with its raw 16-bit sequence in `seq`).
    /// Returns any packets that became deliverable, in sequence order.
    pub fn offer(&mut self, frame: CsiFrame) -> Result<Vec<ReadyPacket>, IngestError> {
        let n_chains = self.config.n_chains;
        if frame.chain >= n_chains {
            return Err(IngestError::ChainOutOfRange { chain: frame.chain, n: n_chains });
        }
        let seq = self.unroll(frame.seq as u16);
        let now = frame.timestamp;
        let entry = self.pending.entry(seq).or_insert_with(|| Pending {
            chains: vec![None; n_chains],
            first_timestamp: frame.timestamp,
            seen: 0,
        });
        let chain = frame.chain;
        if entry.chains[chain].is_some() {
            self.report.duplicates += 1;
        } else {
            entry.seen += 1;
            entry.chains[chain] = Some(frame);
        }
        self.evict_stale(now);
        Ok(self.drain_ready())
    }

    fn evict_stale(&mut self, now: f64) {
        let deadline = self.eviction_deadline;
        let stale: Vec<u64> = self
            .pending
            .iter()
            .filter(|(_, p)| p.seen < self.config.n_chains && now - p.first_timestamp > deadline)
            .map(|(&s, _)| s)
            .collect();
        for s in stale {
            self.pending.remove(&s);
            self.report.dropped_incomplete += 1;
        }
    }

    /// Release complete packets from the head of the sequence order. A
    /// complete packet behind an incomplete one waits until the gap resolves
    /// or the stale entry is evicted.
    fn drain_ready(&mut self) -> Vec<ReadyPacket> {
        let mut ready = Vec::new();
        while let Some((&seq, head)) = self.pending.iter().next() {
            if head.seen < self.config.n_chains {
                break;
            }
            let head = self.pending.remove(&seq).unwrap();
            ready.push(self.assemble(seq, head));
        }
        ready
    }

    fn assemble(&mut self, seq: u64, pending: Pending) -> ReadyPacket {
        let n_sub = self.config.n_subcarriers;
        let mut samples = Vec::with_capacity(self.config.n_chains * n_sub);
        for chain in pending.chains.iter() {
            samples.extend_from_slice(&chain.as_ref().expect("complete packet").csi);
        }
        self.report.completed += 1;
        ReadyPacket { seq, timestamp: pending.first_timestamp, samples }
    }

    /// Flush at end of input: completed packets drain, stragglers drop.
    pub fn finish(mut self) -> (Vec<ReadyPacket>, ReassemblyReport) {
        let mut ready = Vec::new();
        let seqs: Vec<u64> = self.pending.keys().copied().collect();
        for seq in seqs {
            let p = self.pending.remove(&seq).unwrap();
            if p.seen == self.config.n_chains {
                ready.push(self.assemble(seq, p));
            } else {
                self.report.dropped_incomplete += 1;
            }
        }
        (ready, self.report)
    }

    pub fn report(&self) -> &ReassemblyReport {
        &self.report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn cfg() -> CaptureConfig {
        CaptureConfig { n_subcarriers: 4, center_index: 2, ..CaptureConfig::default() }
    }

    fn frame(seq: u16, chain: usize, t: f64) -> CsiFrame {
        CsiFrame {
            timestamp: t,
            seq: seq as u64,
            chain,
            csi: vec![Complex64::new(seq as f64, chain as f64); 4],
        }
    }

    #[test]
    fn complete_packets_release_in_order() {
        let mut r = ReassemblyState::with_default_deadline(cfg());
        let mut out = Vec::new();
        for seq in 0..3u16 {
            for chain in 0..4 {
                out.extend(r.offer(frame(seq, chain, seq as f64 * 0.0025)).unwrap());
            }
        }
        let (tail, report) = r.finish();
        out.extend(tail);
        assert_eq!(out.len(), 3);
        assert_eq!(out.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(report.completed, 3);
        assert_eq!(report.dropped_incomplete, 0);
        // Chain-major assembly.
        assert_eq!(out[1].samples[0], Complex64::new(1.0, 0.0));
        assert_eq!(out[1].samples[4], Complex64::new(1.0, 1.0));
    }

    #[test]
    fn missing_chain_drops_packet() {
        let mut r = ReassemblyState::with_default_deadline(cfg());
        let mut out = Vec::new();
        for seq in 0..3u16 {
            for chain in 0..4 {
                if seq == 1 && chain == 2 {
                    continue;
                }
                out.extend(r.offer(frame(seq, chain, seq as f64 * 0.0025)).unwrap());
            }
        }
        let (tail, report) = r.finish();
        out.extend(tail);
        // seq 1 never completes: 0 releases immediately, 2 waits behind the
        // gap until the flush drops the straggler.
        assert_eq!(out.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(report.dropped_incomplete, 1);
        assert_eq!(report.completed, 2);
    }

    #[test]
    fn interleaved_chains_still_assemble() {
        let mut r = ReassemblyState::with_default_deadline(cfg());
        let mut out = Vec::new();
        // Chains of packets 0 and 1 interleaved.
        for chain in 0..4 {
            out.extend(r.offer(frame(0, chain, 0.0)).unwrap());
            out.extend(r.offer(frame(1, chain, 0.0025)).unwrap());
        }
        assert_eq!(out.len(), 2);
        assert!(out[0].seq < out[1].seq);
    }

    #[test]
    fn duplicate_chain_counted_once() {
        let mut r = ReassemblyState::with_default_deadline(cfg());
        let mut out = Vec::new();
        out.extend(r.offer(frame(0, 0, 0.0)).unwrap());
        out.extend(r.offer(frame(0, 0, 0.0)).unwrap());
        for chain in 1..4 {
            out.extend(r.offer(frame(0, chain, 0.0)).unwrap());
        }
        assert_eq!(out.len(), 1);
        let (_, report) = r.finish();
        assert_eq!(report.duplicates, 1);
    }

    #[test]
    fn eviction_unblocks_later_packets() {
        let mut r = ReassemblyState::new(cfg(), 0.1);
        let mut out = Vec::new();
        // Packet 0 never completes; packet 1 completes immediately but waits.
        out.extend(r.offer(frame(0, 0, 0.0)).unwrap());
        for chain in 0..4 {
            out.extend(r.offer(frame(1, chain, 0.0025)).unwrap());
        }
        assert!(out.is_empty(), "held behind the incomplete head");
        // A frame far in the future evicts the stale head.
        for chain in 0..4 {
            out.extend(r.offer(frame(2, chain, 0.5)).unwrap());
        }
        assert_eq!(out.iter().map(|p| p.seq).collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(r.report().dropped_incomplete, 1);
    }

    #[test]
    fn sequence_wraparound_unrolls() {
        let mut r = ReassemblyState::with_default_deadline(cfg());
        let mut out = Vec::new();
        for (i, seq) in [65534u16, 65535, 0, 1].iter().enumerate() {
            for chain in 0..4 {
                out.extend(r.offer(frame(*seq, chain, i as f64 * 0.0025)).unwrap());
            }
        }
        assert_eq!(out.len(), 4);
        let seqs: Vec<u64> = out.iter().map(|p| p.seq).collect();
        assert_eq!(seqs, vec![65534, 65535, 65536, 65537]);
    }
}
