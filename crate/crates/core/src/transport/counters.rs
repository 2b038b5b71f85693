use std::sync::atomic::{AtomicU64, Ordering};

use super::MsgType;

/// Per-tag frame and byte counts for both directions. Monotone for the
/// lifetime of the session.
pub struct SessionCounters {
    sent_frames: [AtomicU64; 256],
    sent_bytes: [AtomicU64; 256],
    recv_frames: [AtomicU64; 256],
    recv_bytes: [AtomicU64; 256],
    rounds: AtomicU64,
}

impl Default for SessionCounters {
    fn default() -> Self {
        SessionCounters {
            sent_frames: std::array::from_fn(|_| AtomicU64::new(0)),
            sent_bytes: std::array::from_fn(|_| AtomicU64::new(0)),
            recv_frames: std::array::from_fn(|_| AtomicU64::new(0)),
            recv_bytes: std::array::from_fn(|_| AtomicU64::new(0)),
            rounds: AtomicU64::new(0),
        }
    }
}

impl SessionCounters {
    pub(super) fn on_send(&self, tag: MsgType, bytes: usize) {
        self.sent_frames[tag as usize].fetch_add(1, Ordering::Relaxed);
        self.sent_bytes[tag as usize].fetch_add(bytes as u64, Ordering::Relaxed);
    }

    pub(super) fn on_recv(&self, tag: MsgType, bytes: usize) {
        self.recv_frames[tag as usize].fetch_add(1, Ordering::Relaxed);
        self.recv_bytes[tag as usize].fetch_add(bytes as u64, Ordering::Relaxed);
    }

    pub(super) fn note_round(&self) {
        self.rounds.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let load = |a: &[AtomicU64; 256], tag: MsgType| a[tag as usize].load(Ordering::Relaxed);
        let mut snap = CounterSnapshot::default();
        for (i, tag) in MsgType::ALL.iter().enumerate() {
            snap.sent[i] = TagCount {
                frames: load(&self.sent_frames, *tag),
                bytes: load(&self.sent_bytes, *tag),
            };
            snap.received[i] = TagCount {
                frames: load(&self.recv_frames, *tag),
                bytes: load(&self.recv_bytes, *tag),
            };
        }
        snap.rounds = self.rounds.load(Ordering::Relaxed);
        snap
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TagCount {
    pub frames: u64,
    pub bytes: u64,
}

/// A point-in-time copy of [`SessionCounters`]; differences of two
/// snapshots give per-layer or per-query costs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    sent: [TagCount; MsgType::ALL.len()],
    received: [TagCount; MsgType::ALL.len()],
    pub rounds: u64,
}

fn slot(tag: MsgType) -> usize {
    MsgType::ALL.iter().position(|t| *t == tag).unwrap()
}

impl CounterSnapshot {
    pub fn sent(&self, tag: MsgType) -> TagCount {
        self.sent[slot(tag)]
    }

    pub fn received(&self, tag: MsgType) -> TagCount {
        self.received[slot(tag)]
    }

    pub fn total_sent(&self) -> u64 {
        self.sent.iter().map(|c| c.bytes).sum()
    }

    pub fn total_received(&self) -> u64 {
        self.received.iter().map(|c| c.bytes).sum()
    }

    pub fn total_frames(&self) -> u64 {
        self.sent.iter().chain(&self.received).map(|c| c.frames).sum()
    }

    /// Frames of `tag` seen in either direction.
    pub fn frames(&self, tag: MsgType) -> u64 {
        self.sent(tag).frames + self.received(tag).frames
    }

    pub fn delta(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        let mut out = CounterSnapshot::default();
        for i in 0..MsgType::ALL.len() {
            out.sent[i] = TagCount {
                frames: self.sent[i].frames - earlier.sent[i].frames,
                bytes: self.sent[i].bytes - earlier.sent[i].bytes,
            };
            out.received[i] = TagCount {
                frames: self.received[i].frames - earlier.received[i].frames,
                bytes: self.received[i].bytes - earlier.received[i].bytes,
            };
        }
        out.rounds = self.rounds - earlier.rounds;
        out
    }
}
