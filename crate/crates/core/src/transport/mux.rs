//! Session multiplexing: many logical channels over one frame stream,
//! routed by the session id in each frame header. Used to pipeline several
//! queries concurrently over a single server-to-server link.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::thread;

use crossbeam_channel::{unbounded, Receiver, Sender};

use super::{Channel, Frame, FrameSink, FrameSource, SessionCounters};
use crate::error::{Error, Result};

#[derive(Default)]
struct Routes {
    queues: HashMap<u64, (Sender<Frame>, Option<Receiver<Frame>>)>,
    closed: bool,
}

impl Routes {
    fn entry(&mut self, session: u64) -> &mut (Sender<Frame>, Option<Receiver<Frame>>) {
        self.queues.entry(session).or_insert_with(|| {
            let (tx, rx) = unbounded();
            (tx, Some(rx))
        })
    }
}

pub struct Mux {
    sink: Arc<Mutex<Box<dyn FrameSink>>>,
    routes: Arc<Mutex<Routes>>,
    counters: Arc<SessionCounters>,
}

struct MuxSink {
    sink: Arc<Mutex<Box<dyn FrameSink>>>,
    parent: Arc<SessionCounters>,
}

impl FrameSink for MuxSink {
    fn send_frame(&mut self, frame: Frame) -> Result<()> {
        self.parent.on_send(frame.tag, frame.wire_len());
        self.sink.lock().unwrap().send_frame(frame)
    }
}

struct MuxSource {
    rx: Option<Receiver<Frame>>,
}

impl FrameSource for MuxSource {
    fn recv_frame(&mut self) -> Result<Frame> {
        match &self.rx {
            Some(rx) => rx.recv().map_err(|_| Error::ChannelClosed),
            None => Err(Error::ChannelClosed),
        }
    }
}

impl Mux {
    pub fn new(chan: Channel) -> Self {
        let (send, recv) = chan.split();
        let counters = send.counters.clone();
        let sink = Arc::new(Mutex::new(send.inner));
        let routes = Arc::new(Mutex::new(Routes::default()));
        let r2 = routes.clone();
        let c2 = counters.clone();
        let mut source = recv.inner;
        thread::Builder::new()
            .name("oinf-mux-reader".into())
            .spawn(move || {
                while let Ok(frame) = source.recv_frame() {
                    c2.on_recv(frame.tag, frame.wire_len());
                    let mut routes = r2.lock().unwrap();
                    let _ = routes.entry(frame.session).0.send(frame);
                }
                let mut routes = r2.lock().unwrap();
                routes.closed = true;
                routes.queues.clear();
            })
            .expect("spawning mux reader");
        Mux {
            sink,
            routes,
            counters,
        }
    }

    /// Aggregate counters for the underlying link.
    pub fn counters(&self) -> &Arc<SessionCounters> {
        &self.counters
    }

    /// Opens the logical channel for `session`. Each session may be opened
    /// once; frames that arrived earlier are buffered for it.
    pub fn open(&self, session: u64) -> Result<Channel> {
        let mut routes = self.routes.lock().unwrap();
        let rx = if routes.closed {
            None
        } else {
            let rx = routes.entry(session).1.take();
            if rx.is_none() {
                return Err(Error::Protocol(format!(
                    "session {session:#x} already opened"
                )));
            }
            rx
        };
        let mut chan = Channel::from_parts(
            Box::new(MuxSink {
                sink: self.sink.clone(),
                parent: self.counters.clone(),
            }),
            Box::new(MuxSource { rx }),
        );
        chan.set_session(session);
        Ok(chan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{loopback_pair, MsgType};
    use std::time::Duration;

    #[test]
    fn routes_by_session() {
        let (a, b) = loopback_pair(Duration::ZERO);
        let ma = Mux::new(a);
        let mb = Mux::new(b);
        let mut a1 = ma.open(1).unwrap();
        let mut a2 = ma.open(2).unwrap();
        a2.send(MsgType::MaskedUv, vec![2]).unwrap();
        a1.send(MsgType::MaskedUv, vec![1]).unwrap();
        let mut b1 = mb.open(1).unwrap();
        let mut b2 = mb.open(2).unwrap();
        assert_eq!(b1.recv_expect(MsgType::MaskedUv).unwrap(), vec![1]);
        assert_eq!(b2.recv_expect(MsgType::MaskedUv).unwrap(), vec![2]);
        assert!(ma.open(1).is_err());
        let total = ma.counters().snapshot().total_sent();
        assert_eq!(
            total,
            a1.counters().snapshot().total_sent() + a2.counters().snapshot().total_sent()
        );
    }

    #[test]
    fn closes_when_link_drops() {
        let (a, b) = loopback_pair(Duration::ZERO);
        let mb = Mux::new(b);
        let mut s = mb.open(3).unwrap();
        drop(a);
        assert!(matches!(s.recv(), Err(Error::ChannelClosed)));
    }
}
