//! Socket deployment. Server 2 listens for server 1 on the peer address;
//! both servers accept clients on their own listen address. The server
//! link carries one control session for query tickets plus one session per
//! query, so queries can overlap.
//!
//! Client session: handshake (session id = query id), `QUERY_SHARE` with an
//! OISH share, `RESULT_SHARE` with the output share or `ABORT`.

use std::collections::{HashMap, HashSet};
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::LayerTrace;
use crate::ring::Role;
use crate::sharing::{share_from_bytes, share_to_bytes};
use crate::transport::{
    handshake_accept, handshake_initiate, tcp_channel, Channel, HandshakeConfig, MsgType, Mux, PartyKind,
    SendHalf, SessionRegistry,
};

use super::local::Schedule;
use super::server::{QueryTicket, ServerCore};

/// Session carrying tickets from server 1 to server 2.
pub const CONTROL_SESSION: u64 = u64::MAX;

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub schedule: Schedule,
    /// Stop after this many client queries (tests and scripted runs).
    pub max_queries: Option<u64>,
    pub connect_retries: u32,
    pub max_frame: usize,
    pub he_params_hash: Option<u64>,
    /// How long server 2 waits for the ticket matching a client share.
    pub ticket_timeout: Duration,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            schedule: Schedule::Async,
            max_queries: None,
            connect_retries: 50,
            max_frame: crate::transport::DEFAULT_MAX_FRAME,
            he_params_hash: None,
            ticket_timeout: Duration::from_secs(60),
        }
    }
}

/// How a server reaches its peer.
pub enum PeerLink {
    /// Server 1 dials server 2.
    Dial(String),
    /// Server 2 waits for server 1.
    Listen(TcpListener),
}

#[derive(Clone, Debug, Default)]
pub struct ServeReport {
    pub completed: u64,
    pub failed: u64,
}

pub fn party(role: Role) -> PartyKind {
    match role {
        Role::Server1 => PartyKind::Server1,
        Role::Server2 => PartyKind::Server2,
    }
}

pub fn dial(addr: &str, retries: u32) -> Result<TcpStream> {
    let mut last = None;
    for attempt in 0..=retries {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                log::debug!("connect {addr} attempt {attempt}: {e}");
                last = Some(e);
                thread::sleep(Duration::from_millis(100));
            }
        }
    }
    Err(last.map(Error::Io).unwrap_or(Error::ChannelClosed))
}

struct Tickets {
    map: Mutex<HashMap<u64, QueryTicket>>,
    ready: Condvar,
}

impl Tickets {
    fn wait(&self, query: u64, timeout: Duration, down: &AtomicBool) -> Result<QueryTicket> {
        let deadline = Instant::now() + timeout;
        let mut map = self.map.lock().unwrap();
        loop {
            if let Some(t) = map.remove(&query) {
                return Ok(t);
            }
            if down.load(Ordering::SeqCst) {
                return Err(Error::ChannelClosed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(Error::Protocol(format!("no ticket from server 1 for query {query}")));
            }
            map = self.ready.wait_timeout(map, (deadline - now).min(Duration::from_millis(200))).unwrap().0;
        }
    }
}

struct Shared<'a> {
    core: &'a ServerCore,
    opts: &'a ServeOptions,
    mux: Mux,
    control: Mutex<SendHalf>,
    tickets: Arc<Tickets>,
    link_down: Arc<AtomicBool>,
    registry: Mutex<SessionRegistry>,
    in_flight: Mutex<HashSet<u64>>,
    sync_lock: Mutex<()>,
    completed: AtomicU64,
    failed: AtomicU64,
}

/// Connects the two servers and checks they agree on ring, HE parameters
/// and model.
pub fn open_peer_link(role: Role, hs: &HandshakeConfig, link: PeerLink, retries: u32, max_frame: usize) -> Result<Channel> {
    let mut chan = match link {
        PeerLink::Dial(addr) => {
            let mut chan = tcp_channel(dial(&addr, retries)?)?;
            let session = rand::rngs::OsRng.next_u64().max(1);
            handshake_initiate(&mut chan, hs, session)?;
            chan
        }
        PeerLink::Listen(l) => {
            let (stream, from) = l.accept()?;
            log::info!("peer connected from {from}");
            let mut chan = tcp_channel(stream)?;
            let kind = handshake_accept(&mut chan, hs, &mut SessionRegistry::default())?;
            if kind != PartyKind::Server1 {
                return Err(Error::Protocol(format!("expected server 1 on the peer link, got {kind:?}")));
            }
            chan
        }
    };
    if matches!(role, Role::Server1) != matches!(hs.party, PartyKind::Server1) {
        return Err(Error::Params("handshake party does not match the role".into()));
    }
    chan.set_max_frame(max_frame);
    Ok(chan)
}

pub fn server_handshake(core: &ServerCore, he_params_hash: Option<u64>) -> HandshakeConfig {
    HandshakeConfig {
        party: party(core.role()),
        ring: core.model().desc.ring,
        he_params_hash,
        model_hash: core.model().desc.hash(),
    }
}

/// Runs one server until `max_queries` client queries have finished or the
/// peer link drops. `clients` must already be bound.
pub fn serve(core: ServerCore, link: PeerLink, clients: TcpListener, opts: &ServeOptions) -> Result<ServeReport> {
    if core.remaining_queries() == Some(0) {
        return Err(Error::TripletExhausted {
            needed: core.demand(),
            available: 0,
        });
    }
    let hs = server_handshake(&core, opts.he_params_hash);
    let link = open_peer_link(core.role(), &hs, link, opts.connect_retries, opts.max_frame)?;
    let mux = Mux::new(link);
    let (control_tx, mut control_rx) = mux.open(CONTROL_SESSION)?.split();
    let shared = Shared {
        core: &core,
        opts,
        mux,
        control: Mutex::new(control_tx),
        tickets: Arc::new(Tickets {
            map: Mutex::new(HashMap::new()),
            ready: Condvar::new(),
        }),
        link_down: Arc::new(AtomicBool::new(false)),
        registry: Mutex::new(SessionRegistry::default()),
        in_flight: Mutex::new(HashSet::new()),
        sync_lock: Mutex::new(()),
        completed: AtomicU64::new(0),
        failed: AtomicU64::new(0),
    };
    // Server 2 reads tickets here; server 1 only learns that the link
    // dropped. Detached: it ends when the peer closes the link.
    let (tickets, down) = (shared.tickets.clone(), shared.link_down.clone());
    thread::spawn(move || {
        loop {
            match control_rx.recv() {
                Ok(f) if f.tag == MsgType::QueryShare => match QueryTicket::decode(&f.payload) {
                    Ok(t) => {
                        tickets.map.lock().unwrap().insert(t.query, t);
                        tickets.ready.notify_all();
                    }
                    Err(e) => log::warn!("bad ticket: {e}"),
                },
                Ok(f) => log::warn!("unexpected {:?} on the control session", f.tag),
                Err(_) => break,
            }
        }
        down.store(true, Ordering::SeqCst);
        tickets.ready.notify_all();
    });
    clients.set_nonblocking(true)?;
    log::info!(
        "{} serving on {}",
        core.role(),
        clients.local_addr().map(|a| a.to_string()).unwrap_or_default()
    );
    thread::scope(|sc| -> Result<()> {
        let sh = &shared;
        let mut accepted = 0u64;
        loop {
            if opts.max_queries.is_some_and(|m| accepted >= m) || sh.link_down.load(Ordering::SeqCst) {
                break;
            }
            match clients.accept() {
                Ok((stream, from)) => {
                    accepted += 1;
                    stream.set_nonblocking(false)?;
                    log::debug!("client connected from {from}");
                    sc.spawn(move || {
                        match handle_client(sh, stream) {
                            Ok(q) => {
                                log::info!("query {q} done");
                                sh.completed.fetch_add(1, Ordering::SeqCst);
                            }
                            Err(e) => {
                                log::warn!("query failed: {e}");
                                sh.failed.fetch_add(1, Ordering::SeqCst);
                            }
                        }
                    });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    })?;
    Ok(ServeReport {
        completed: shared.completed.load(Ordering::SeqCst),
        failed: shared.failed.load(Ordering::SeqCst),
    })
}

fn handle_client(sh: &Shared<'_>, stream: TcpStream) -> Result<u64> {
    let core = sh.core;
    let mut chan = tcp_channel(stream)?;
    chan.set_max_frame(sh.opts.max_frame);
    let hs = server_handshake(core, sh.opts.he_params_hash);
    let kind = {
        // The handshake is short; holding the registry lock across it keeps
        // concurrent replays of one id from both passing.
        let mut reg = sh.registry.lock().unwrap();
        handshake_accept(&mut chan, &hs, &mut reg)?
    };
    if kind != PartyKind::Client {
        chan.abort("only clients connect here");
        return Err(Error::Protocol(format!("{kind:?} on the client port")));
    }
    let query = chan.session();
    if query == CONTROL_SESSION {
        chan.abort("reserved query id");
        return Err(Error::Protocol("reserved query id".into()));
    }
    let res = serve_query(sh, query, &mut chan);
    match &res {
        Ok(()) => Ok(query),
        Err(e) => {
            chan.abort(&e.to_string());
            Err(Error::Protocol(format!("query {query}: {e}")))
        }
    }
}

fn serve_query(sh: &Shared<'_>, query: u64, client: &mut Channel) -> Result<()> {
    let core = sh.core;
    let share = share_from_bytes(&client.recv_expect(MsgType::QueryShare)?)?;
    let desc = &core.model().desc;
    if share.role() != core.role() || share.shape != desc.input_shape || share.params != desc.ring {
        return Err(Error::Shape(format!(
            "input share {:?} for {} does not fit the model input {:?}",
            share.shape,
            share.role(),
            desc.input_shape
        )));
    }
    if !sh.in_flight.lock().unwrap().insert(query) {
        return Err(Error::Protocol(format!("query {query} already in flight")));
    }
    // Server 1 fixes the order; under the sync schedule it runs one query
    // at a time and server 2 simply follows the tickets.
    let _guard = (core.role() == Role::Server1 && sh.opts.schedule == Schedule::Sync)
        .then(|| sh.sync_lock.lock().unwrap());
    let ticket = match core.role() {
        Role::Server1 => {
            let ticket = core.issue_ticket(query);
            let sent = match &ticket {
                Ok(t) => *t,
                // A zero-length ticket tells server 2 to drop the query.
                Err(_) => QueryTicket {
                    query,
                    triplet_start: 0,
                    triplet_count: 0,
                },
            };
            sh.control.lock().unwrap().send(MsgType::QueryShare, sent.encode())?;
            ticket?
        }
        Role::Server2 => {
            let t = sh.tickets.wait(query, sh.opts.ticket_timeout, &sh.link_down)?;
            if t.triplet_count == 0 {
                return Err(Error::Aborted("server 1 refused the query".into()));
            }
            t
        }
    };
    let mut peer = sh.mux.open(query)?;
    let mut trace = LayerTrace::production();
    let t0 = Instant::now();
    let out = core.run_query(&ticket, &share, &mut peer, Some(&mut trace))?;
    for l in &trace.layers {
        log::debug!(
            "query {query} layer {} {} {}us sent={} recv={}",
            l.index,
            l.kind,
            l.micros,
            l.bytes_sent,
            l.bytes_received
        );
    }
    log::info!("query {query} evaluated in {:.3}s", t0.elapsed().as_secs_f64());
    client.send(MsgType::ResultShare, share_to_bytes(&out))?;
    Ok(())
}

/// Binds a listener, mapping the error to name the address.
pub fn bind(addr: &str) -> Result<TcpListener> {
    TcpListener::bind(addr).map_err(|e| Error::Params(format!("cannot listen on {addr}: {e}")))
}

pub fn local_addr(l: &TcpListener) -> Result<SocketAddr> {
    Ok(l.local_addr()?)
}
