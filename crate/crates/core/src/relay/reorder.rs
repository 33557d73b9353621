//! Per-stream reorder buffer: restores sequence order over 16-bit wrapping
//! sequence numbers, discards duplicates and late packets, and skips gaps
//! older than the configured window.

use std::collections::BTreeMap;

use super::packet::MediaPacket;

/// Extends 16-bit wrapping sequence numbers to a monotone u64 domain using
/// the standard half-range (2^15) comparison heuristic.
#[derive(Debug, Clone, Default)]
struct SeqUnwrapper {
    last_ext: Option<u64>,
}

impl SeqUnwrapper {
    fn extend(&mut self, seq: u16) -> u64 {
        let ext = match self.last_ext {
            // offset keeps small backward steps from underflowing
            None => (1u64 << 16) + u64::from(seq),
            Some(last) => {
                let last_seq = (last & 0xffff) as u16;
                let raw = i32::from(seq) - i32::from(last_seq);
                let delta = i64::from(((raw + 0x8000) & 0xffff) - 0x8000);
                last.wrapping_add_signed(delta)
            }
        };
        if self.last_ext.map_or(true, |last| ext > last) {
            self.last_ext = Some(ext);
        }
        ext
    }
}

/// Restores per-ssrc order. Emitted sequence numbers are strictly
/// increasing in the extended domain; the buffer never holds more than
/// `window` packets.
#[derive(Debug, Clone)]
pub struct ReorderBuffer {
    window: usize,
    next_ext: Option<u64>,
    pending: BTreeMap<u64, MediaPacket>,
    unwrapper: SeqUnwrapper,
    /// Sequence numbers skipped because their gap aged out of the window.
    pub lost_gaps: u64,
    /// Duplicate or late packets discarded.
    pub discarded: u64,
}

pub const DEFAULT_REORDER_WINDOW: usize = 64;

impl Default for ReorderBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_REORDER_WINDOW)
    }
}

impl ReorderBuffer {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            next_ext: None,
            pending: BTreeMap::new(),
            unwrapper: SeqUnwrapper::default(),
            lost_gaps: 0,
            discarded: 0,
        }
    }

    /// Accepts one packet and returns the maximal in-order run now
    /// releasable. Duplicates and packets older than the emission point
    /// are discarded.
    pub fn deliver(&mut self, packet: MediaPacket) -> Vec<MediaPacket> {
        let ext = self.unwrapper.extend(packet.seq);
        if let Some(next) = self.next_ext {
            if ext < next {
                self.discarded += 1;
                return Vec::new();
            }
        }
        if self.pending.contains_key(&ext) {
            self.discarded += 1;
            return Vec::new();
        }
        self.pending.insert(ext, packet);
        if self.next_ext.is_none() {
            // first packet anchors the stream; no history replay
            self.next_ext = Some(ext);
        }

        let mut released = Vec::new();
        self.drain_run(&mut released);
        // skip gaps that have aged past the window
        while let (Some(&min_key), Some(&max_key)) =
            (self.pending.keys().next(), self.pending.keys().next_back())
        {
            let next = self.next_ext.expect("anchored above");
            if max_key - next < self.window as u64 {
                break;
            }
            self.lost_gaps += min_key - next;
            self.next_ext = Some(min_key);
            self.drain_run(&mut released);
        }
        released
    }

    fn drain_run(&mut self, out: &mut Vec<MediaPacket>) {
        while let Some(next) = self.next_ext {
            match self.pending.remove(&next) {
                Some(p) => {
                    out.push(p);
                    self.next_ext = Some(next + 1);
                }
                None => break,
            }
        }
    }

    /// Drains everything still pending in order, regardless of gaps.
    /// Gap sequence numbers are not counted as loss here: they were never
    /// handed to the buffer.
    pub fn flush(&mut self) -> Vec<MediaPacket> {
        let mut out = Vec::new();
        let keys: Vec<u64> = self.pending.keys().copied().collect();
        for k in keys {
            out.push(self.pending.remove(&k).expect("key present"));
            self.next_ext = Some(k + 1);
        }
        out
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }
}
