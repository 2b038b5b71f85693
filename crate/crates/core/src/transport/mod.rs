//! Framed, typed, byte-accounted message transport between the servers and
//! between the client and each server.
//!
//! Wire format of one frame:
//!
//! ```text
//! +------------+--------+----------------+-----------------+
//! | length u32 | tag u8 | session id u64 | payload         |
//! | big-endian |        | big-endian     | `length` bytes  |
//! +------------+--------+----------------+-----------------+
//! ```

mod counters;
mod handshake;
mod loopback;
mod mux;
mod tcp;

use std::io::{self, Read, Write};
use std::sync::Arc;

pub use counters::{CounterSnapshot, SessionCounters, TagCount};
pub use handshake::{
    handshake_accept, handshake_initiate, HandshakeConfig, PartyKind, SessionRegistry,
    PROTOCOL_VERSION,
};
pub use loopback::loopback_pair;
pub use mux::Mux;
pub use tcp::tcp_channel;

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 13;
pub const DEFAULT_MAX_FRAME: usize = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Handshake = 0x01,
    TripCt = 0x02,
    TripResp = 0x03,
    MaskedUv = 0x10,
    GcTables = 0x20,
    GcLabels = 0x21,
    OtRound = 0x22,
    GcDecode = 0x23,
    QueryShare = 0x30,
    ResultShare = 0x31,
    Ping = 0x7D,
    Pong = 0x7E,
    Abort = 0x7F,
}

impl MsgType {
    pub const ALL: [MsgType; 13] = [
        MsgType::Handshake,
        MsgType::TripCt,
        MsgType::TripResp,
        MsgType::MaskedUv,
        MsgType::GcTables,
        MsgType::GcLabels,
        MsgType::OtRound,
        MsgType::GcDecode,
        MsgType::QueryShare,
        MsgType::ResultShare,
        MsgType::Ping,
        MsgType::Pong,
        MsgType::Abort,
    ];

    pub fn from_u8(tag: u8) -> Option<Self> {
        MsgType::ALL.iter().copied().find(|m| *m as u8 == tag)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub tag: MsgType,
    pub session: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(tag: MsgType, session: u64, payload: Vec<u8>) -> Self {
        Frame {
            tag,
            session,
            payload,
        }
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        self.write_header(&mut out);
        out.extend_from_slice(&self.payload);
        out
    }

    fn write_header(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.push(self.tag as u8);
        out.extend_from_slice(&self.session.to_be_bytes());
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let mut head = Vec::with_capacity(HEADER_LEN);
        self.write_header(&mut head);
        w.write_all(&head)?;
        w.write_all(&self.payload)
    }

    /// Reads one frame. A clean end of stream before the header maps to
    /// [`Error::ChannelClosed`]; a stream cut inside a frame is an I/O error.
    pub fn read_from<R: Read>(r: &mut R, max_payload: usize) -> Result<Frame> {
        let mut head = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut head[got..]) {
                Ok(0) if got == 0 => return Err(Error::ChannelClosed),
                Ok(0) => {
                    return Err(Error::Io(io::Error::new(
                        io::ErrorKind::UnexpectedEof,
                        "stream truncated inside frame header",
                    )))
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let len = u32::from_be_bytes(head[..4].try_into().unwrap()) as usize;
        let tag = MsgType::from_u8(head[4])
            .ok_or_else(|| Error::format("frame", format!("unknown tag {:#04x}", head[4])))?;
        let session = u64::from_be_bytes(head[5..].try_into().unwrap());
        if len > max_payload {
            return Err(Error::format(
                "frame",
                format!("payload of {len} bytes exceeds cap of {max_payload}"),
            ));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)?;
        Ok(Frame {
            tag,
            session,
            payload,
        })
    }

    pub fn decode(bytes: &[u8], max_payload: usize) -> Result<Frame> {
        let mut r = bytes;
        let f = Frame::read_from(&mut r, max_payload)?;
        if !r.is_empty() {
            return Err(Error::format("frame", "trailing bytes after payload"));
        }
        Ok(f)
    }
}

pub trait FrameSink: Send {
    fn send_frame(&mut self, frame: Frame) -> Result<()>;
}

pub trait FrameSource: Send {
    fn recv_frame(&mut self) -> Result<Frame>;
}

/// A bidirectional, in-order, loss-free frame stream bound to one session.
pub struct Channel {
    sink: SendHalf,
    source: RecvHalf,
}

pub struct SendHalf {
    inner: Box<dyn FrameSink>,
    counters: Arc<SessionCounters>,
    session: u64,
    max_frame: usize,
}

pub struct RecvHalf {
    inner: Box<dyn FrameSource>,
    counters: Arc<SessionCounters>,
    session: u64,
}

impl Channel {
    pub fn from_parts(sink: Box<dyn FrameSink>, source: Box<dyn FrameSource>) -> Self {
        let counters = Arc::new(SessionCounters::default());
        Channel {
            sink: SendHalf {
                inner: sink,
                counters: counters.clone(),
                session: 0,
                max_frame: DEFAULT_MAX_FRAME,
            },
            source: RecvHalf {
                inner: source,
                counters,
                session: 0,
            },
        }
    }

    pub fn session(&self) -> u64 {
        self.sink.session
    }

    pub fn set_session(&mut self, id: u64) {
        self.sink.session = id;
        self.source.session = id;
    }

    pub fn set_max_frame(&mut self, bytes: usize) {
        self.sink.max_frame = bytes;
    }

    pub fn counters(&self) -> &Arc<SessionCounters> {
        &self.sink.counters
    }

    pub fn send(&mut self, tag: MsgType, payload: Vec<u8>) -> Result<()> {
        self.sink.send(tag, payload)
    }

    pub fn recv(&mut self) -> Result<Frame> {
        self.source.recv()
    }

    pub fn recv_expect(&mut self, tag: MsgType) -> Result<Vec<u8>> {
        self.source.recv_expect(tag)
    }

    /// Best-effort notice to the peer that this session is being torn down.
    pub fn abort(&mut self, reason: &str) {
        let _ = self.sink.send(MsgType::Abort, reason.as_bytes().to_vec());
    }

    /// Counts one protocol exchange round (used by the round census).
    pub fn note_round(&self) {
        self.sink.counters.note_round();
    }

    pub fn split(self) -> (SendHalf, RecvHalf) {
        (self.sink, self.source)
    }

    pub fn join(sink: SendHalf, source: RecvHalf) -> Self {
        Channel { sink, source }
    }

    /// Borrows both directions at once, e.g. for a sender thread and a
    /// receiver thread inside one scope.
    pub fn halves(&mut self) -> (&mut SendHalf, &mut RecvHalf) {
        (&mut self.sink, &mut self.source)
    }
}

impl SendHalf {
    pub fn send(&mut self, tag: MsgType, payload: Vec<u8>) -> Result<()> {
        if payload.len() > self.max_frame {
            return Err(Error::format(
                "frame",
                format!(
                    "payload of {} bytes exceeds cap of {}",
                    payload.len(),
                    self.max_frame
                ),
            ));
        }
        let frame = Frame::new(tag, self.session, payload);
        self.counters.on_send(tag, frame.wire_len());
        self.inner.send_frame(frame)
    }
}

impl RecvHalf {
    pub fn recv(&mut self) -> Result<Frame> {
        let frame = self.inner.recv_frame()?;
        self.counters.on_recv(frame.tag, frame.wire_len());
        if frame.tag == MsgType::Abort {
            return Err(Error::Aborted(
                String::from_utf8_lossy(&frame.payload).into_owned(),
            ));
        }
        if frame.tag != MsgType::Handshake && frame.session != self.session {
            return Err(Error::Protocol(format!(
                "frame for session {:#x} on session {:#x}",
                frame.session, self.session
            )));
        }
        Ok(frame)
    }

    pub fn recv_expect(&mut self, tag: MsgType) -> Result<Vec<u8>> {
        let f = self.recv()?;
        if f.tag != tag {
            return Err(Error::UnexpectedFrame {
                expected: tag,
                got: f.tag,
            });
        }
        Ok(f.payload)
    }
}

pub fn ping(chan: &mut Channel) -> Result<()> {
    chan.send(MsgType::Ping, Vec::new())?;
    let payload = chan.recv_expect(MsgType::Pong)?;
    if !payload.is_empty() {
        return Err(Error::Protocol("PONG must echo an empty PING".into()));
    }
    Ok(())
}

/// Answers one PING with a PONG echoing its payload.
pub fn answer_ping(chan: &mut Channel) -> Result<()> {
    let payload = chan.recv_expect(MsgType::Ping)?;
    chan.send(MsgType::Pong, payload)
}

// Little helpers for building and parsing payloads.

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, what }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(self.what, "payload truncated"));
        }
        let (h, t) = self.buf.split_at(n);
        self.buf = t;
        Ok(h)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn rest(self) -> &'a [u8] {
        self.buf
    }

    pub fn finish(self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(Error::format(self.what, "trailing bytes"))
        }
    }
}
