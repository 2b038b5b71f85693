//! Session establishment: both ends must agree on the protocol version, the
//! ring, the HE parameter set and the model before any protocol frame flows.

use std::collections::HashSet;

use super::{Channel, MsgType, Reader};
use crate::error::{Error, Result};
use crate::ring::RingParams;

pub const PROTOCOL_VERSION: u16 = 1;

const HELLO: u8 = 0;
const ACCEPT: u8 = 1;
const REJECT: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartyKind {
    Server1,
    Server2,
    Client,
}

impl PartyKind {
    fn code(self) -> u8 {
        match self {
            PartyKind::Server1 => 1,
            PartyKind::Server2 => 2,
            PartyKind::Client => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(PartyKind::Server1),
            2 => Ok(PartyKind::Server2),
            3 => Ok(PartyKind::Client),
            _ => Err(Error::format("handshake", format!("unknown party {c}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HandshakeConfig {
    pub party: PartyKind,
    pub ring: RingParams,
    /// `None` when this end does not take part in triplet generation
    /// (clients), in which case the field is not compared.
    pub he_params_hash: Option<u64>,
    pub model_hash: u64,
}

/// Session ids an acceptor has already admitted; a repeated id is a replay.
#[derive(Default, Debug)]
pub struct SessionRegistry {
    seen: HashSet<u64>,
}

impl SessionRegistry {
    pub fn contains(&self, id: u64) -> bool {
        self.seen.contains(&id)
    }
}

struct Hello {
    version: u16,
    session: u64,
    party: PartyKind,
    t: u8,
    f: u8,
    he_hash: Option<u64>,
    model_hash: u64,
}

fn encode_hello(cfg: &HandshakeConfig, session: u64) -> Vec<u8> {
    let mut p = vec![HELLO];
    p.extend_from_slice(&PROTOCOL_VERSION.to_le_bytes());
    p.extend_from_slice(&session.to_le_bytes());
    p.push(cfg.party.code());
    p.push(cfg.ring.t as u8);
    p.push(cfg.ring.f as u8);
    match cfg.he_params_hash {
        Some(h) => {
            p.push(1);
            p.extend_from_slice(&h.to_le_bytes());
        }
        None => {
            p.push(0);
            p.extend_from_slice(&0u64.to_le_bytes());
        }
    }
    p.extend_from_slice(&cfg.model_hash.to_le_bytes());
    p
}

fn decode_hello(mut r: Reader<'_>) -> Result<Hello> {
    let version = r.u16()?;
    let session = r.u64()?;
    let party = PartyKind::from_code(r.u8()?)?;
    let t = r.u8()?;
    let f = r.u8()?;
    let has_he = r.u8()? != 0;
    let he = r.u64()?;
    let model_hash = r.u64()?;
    r.finish()?;
    Ok(Hello {
        version,
        session,
        party,
        t,
        f,
        he_hash: has_he.then_some(he),
        model_hash,
    })
}

fn reject(chan: &mut Channel, field: &str) -> Error {
    let mut p = vec![REJECT];
    p.extend_from_slice(field.as_bytes());
    let _ = chan.send(MsgType::Handshake, p);
    Error::HandshakeRejected(field.to_string())
}

/// Proposes `session` to the peer and waits for its verdict.
pub fn handshake_initiate(chan: &mut Channel, cfg: &HandshakeConfig, session: u64) -> Result<()> {
    chan.send(MsgType::Handshake, encode_hello(cfg, session))?;
    let reply = chan.recv_expect(MsgType::Handshake)?;
    let mut r = Reader::new(&reply, "handshake");
    match r.u8()? {
        ACCEPT => {
            let echoed = r.u64()?;
            r.finish()?;
            if echoed != session {
                return Err(Error::Protocol("peer accepted a different session".into()));
            }
            chan.set_session(session);
            Ok(())
        }
        REJECT => Err(Error::HandshakeRejected(
            String::from_utf8_lossy(r.rest()).into_owned(),
        )),
        k => Err(Error::format("handshake", format!("unexpected kind {k}"))),
    }
}

/// Validates the peer's proposal against the local configuration. Returns
/// the peer's role and binds the channel to the agreed session.
pub fn handshake_accept(
    chan: &mut Channel,
    cfg: &HandshakeConfig,
    registry: &mut SessionRegistry,
) -> Result<PartyKind> {
    let msg = chan.recv_expect(MsgType::Handshake)?;
    let mut r = Reader::new(&msg, "handshake");
    if r.u8()? != HELLO {
        return Err(reject(chan, "kind"));
    }
    let hello = decode_hello(r)?;
    if hello.version != PROTOCOL_VERSION {
        return Err(reject(chan, "version"));
    }
    if hello.session == 0 || registry.seen.contains(&hello.session) {
        return Err(reject(chan, "session_id"));
    }
    if hello.party == cfg.party {
        return Err(reject(chan, "party"));
    }
    if hello.t as u32 != cfg.ring.t {
        return Err(reject(chan, "t"));
    }
    if hello.f as u32 != cfg.ring.f {
        return Err(reject(chan, "f"));
    }
    if let (Some(a), Some(b)) = (hello.he_hash, cfg.he_params_hash) {
        if a != b {
            return Err(reject(chan, "he_params"));
        }
    }
    if hello.model_hash != cfg.model_hash {
        return Err(reject(chan, "model"));
    }
    registry.seen.insert(hello.session);
    let mut p = vec![ACCEPT];
    p.extend_from_slice(&hello.session.to_le_bytes());
    chan.send(MsgType::Handshake, p)?;
    chan.set_session(hello.session);
    Ok(hello.party)
}
