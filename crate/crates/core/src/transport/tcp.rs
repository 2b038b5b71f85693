//! Socket-backed channel. Writes go through a dedicated writer thread so
//! that both parties can send a large masked opening before reading the
//! other's without deadlocking on full socket buffers.

use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpStream};
use std::thread;

use crossbeam_channel::{unbounded, Sender};

use super::{Channel, Frame, FrameSink, FrameSource, DEFAULT_MAX_FRAME};
use crate::error::{Error, Result};

struct TcpSink {
    tx: Option<Sender<Frame>>,
    writer: Option<thread::JoinHandle<std::io::Result<()>>>,
}

impl FrameSink for TcpSink {
    fn send_frame(&mut self, frame: Frame) -> Result<()> {
        match &self.tx {
            Some(tx) => tx.send(frame).map_err(|_| Error::ChannelClosed),
            None => Err(Error::ChannelClosed),
        }
    }
}

impl Drop for TcpSink {
    fn drop(&mut self) {
        // Closing the queue lets the writer drain and flush.
        self.tx.take();
        if let Some(h) = self.writer.take() {
            let _ = h.join();
        }
    }
}

struct TcpSource {
    reader: BufReader<TcpStream>,
    max_frame: usize,
}

impl FrameSource for TcpSource {
    fn recv_frame(&mut self) -> Result<Frame> {
        Frame::read_from(&mut self.reader, self.max_frame)
    }
}

pub fn tcp_channel(stream: TcpStream) -> Result<Channel> {
    stream.set_nodelay(true)?;
    let read_half = stream.try_clone()?;
    let (tx, rx) = unbounded::<Frame>();
    let writer = thread::Builder::new()
        .name("oinf-tcp-writer".into())
        .spawn(move || {
            let mut w = BufWriter::with_capacity(1 << 16, stream);
            while let Ok(frame) = rx.recv() {
                frame.write_to(&mut w)?;
                if rx.is_empty() {
                    w.flush()?;
                }
            }
            w.flush()?;
            // The reader holds a clone of the socket, so dropping ours alone
            // would not signal end of stream to the peer.
            w.get_ref().shutdown(Shutdown::Write)
        })?;
    Ok(Channel::from_parts(
        Box::new(TcpSink {
            tx: Some(tx),
            writer: Some(writer),
        }),
        Box::new(TcpSource {
            reader: BufReader::with_capacity(1 << 16, read_half),
            max_frame: DEFAULT_MAX_FRAME,
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::MsgType;
    use std::net::TcpListener;

    #[test]
    fn simultaneous_large_sends_do_not_deadlock() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let payload = vec![7u8; 8 << 20];
        let p2 = payload.clone();
        let h = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut c = tcp_channel(s).unwrap();
            c.send(MsgType::MaskedUv, p2.clone()).unwrap();
            assert_eq!(c.recv_expect(MsgType::MaskedUv).unwrap(), p2);
        });
        let mut c = tcp_channel(TcpStream::connect(addr).unwrap()).unwrap();
        c.send(MsgType::MaskedUv, payload.clone()).unwrap();
        assert_eq!(c.recv_expect(MsgType::MaskedUv).unwrap(), payload);
        h.join().unwrap();
    }
}
