//! In-process channel pair with an injectable one-way latency. Frames are
//! serialized to their wire bytes and parsed again on delivery, so the
//! loopback exercises the same codec as a socket. Latency delays delivery
//! without blocking the sender, so several frames can be in flight at once.

use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{Channel, Frame, FrameSink, FrameSource, DEFAULT_MAX_FRAME};
use crate::error::{Error, Result};

struct LoopSink {
    tx: Sender<(Instant, Vec<u8>)>,
    latency: Duration,
}

struct LoopSource {
    rx: Receiver<(Instant, Vec<u8>)>,
}

impl FrameSink for LoopSink {
    fn send_frame(&mut self, frame: Frame) -> Result<()> {
        self.tx
            .send((Instant::now() + self.latency, frame.encode()))
            .map_err(|_| Error::ChannelClosed)
    }
}

impl FrameSource for LoopSource {
    fn recv_frame(&mut self) -> Result<Frame> {
        let (due, bytes) = self.rx.recv().map_err(|_| Error::ChannelClosed)?;
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
        Frame::decode(&bytes, DEFAULT_MAX_FRAME)
    }
}

pub fn loopback_pair(latency: Duration) -> (Channel, Channel) {
    let (tx_ab, rx_ab) = unbounded();
    let (tx_ba, rx_ba) = unbounded();
    let a = Channel::from_parts(
        Box::new(LoopSink { tx: tx_ab, latency }),
        Box::new(LoopSource { rx: rx_ba }),
    );
    let b = Channel::from_parts(
        Box::new(LoopSink { tx: tx_ba, latency }),
        Box::new(LoopSource { rx: rx_ab }),
    );
    (a, b)
}
