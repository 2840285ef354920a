//! TCP backend.
//!
//! Ranks find each other through a coordinator: each rank opens a listener,
//! connects to the coordinator, announces its listen address and optionally
//! the rank it wants, and receives the full address table once all `nprocs`
//! ranks have joined. Explicit ranks are kept; anonymous joiners fill the
//! remaining ranks in arrival order.
//!
//! Data connections are opened lazily on the first send to a peer. Each rank
//! writes to a peer over its own outgoing connection and reads everything the
//! peer sends over the peer's outgoing connection, so a pair of ranks uses at
//! most two sockets. Frames follow [`super::frame`].
//!
//! Rendezvous messages (little-endian):
//!
//! ```text
//! join:  "IGGR" | u8 version=1 | u32 wanted rank (u32::MAX = any) | u16 len | listen addr
//! reply: u8 0 | u32 rank | u32 nprocs | nprocs × (u16 len | addr)
//!     or u8 1 | u16 len | error message
//! ```

use std::io::{self, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::frame::{read_frame, write_frame};
use super::{timeout_from_env, Backend, Comm, Mailbox, Tag};
use crate::error::{Error, Result};

const JOIN_MAGIC: [u8; 4] = *b"IGGR";
const JOIN_VERSION: u8 = 1;
const ANY_RANK: u32 = u32::MAX;
const POLL: Duration = Duration::from_millis(5);

/// How one process joins a TCP world.
#[derive(Debug, Clone)]
pub struct TcpConfig {
    /// Coordinator address, `host:port`.
    pub coordinator: String,
    pub nprocs: usize,
    /// Requested rank; `None` takes the next free one in arrival order.
    pub rank: Option<usize>,
    pub timeout: Duration,
    /// Whether this process runs the coordinator itself. Defaults to true
    /// for explicit rank 0.
    pub host_coordinator: bool,
}

impl TcpConfig {
    /// Reads `IGRID_COORDINATOR`, `IGRID_NPROCS`, `IGRID_RANK` and
    /// `IGRID_TIMEOUT_SECS`. Returns `None` if no coordinator is set.
    /// `IGRID_COORDINATOR_EXTERNAL=1` stops rank 0 from hosting the
    /// coordinator (used when a launcher runs it).
    pub fn from_env() -> Result<Option<Self>> {
        let Ok(coordinator) = std::env::var("IGRID_COORDINATOR") else {
            return Ok(None);
        };
        let parse = |name: &str| -> Result<Option<usize>> {
            match std::env::var(name) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("{name}={v:?} is not a non-negative integer"))),
                Err(_) => Ok(None),
            }
        };
        let nprocs = parse("IGRID_NPROCS")?
            .ok_or_else(|| Error::Config("IGRID_NPROCS must be set with IGRID_COORDINATOR".into()))?;
        let rank = parse("IGRID_RANK")?;
        let external = std::env::var("IGRID_COORDINATOR_EXTERNAL").is_ok_and(|v| v == "1");
        Ok(Some(Self {
            coordinator,
            nprocs,
            rank,
            timeout: timeout_from_env()?,
            host_coordinator: rank == Some(0) && !external,
        }))
    }
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| Error::Config(format!("address {addr:?} does not resolve")))
}

fn read_u16<R: Read>(r: &mut R) -> io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R) -> io::Result<String> {
    let len = read_u16(r)? as usize;
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

fn put_string(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}

struct Joiner {
    stream: TcpStream,
    wanted: Option<usize>,
    addr: String,
}

/// Rendezvous server assigning ranks and distributing the address table.
pub struct Coordinator {
    listener: TcpListener,
}

impl Coordinator {
    pub fn bind(addr: &str) -> Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves one rendezvous of `nprocs` ranks in a background thread.
    pub fn spawn(self, nprocs: usize, timeout: Duration) -> JoinHandle<Result<()>> {
        thread::Builder::new()
            .name("igrid-coordinator".into())
            .spawn(move || self.serve(nprocs, timeout))
            .expect("spawn coordinator thread")
    }

    pub fn serve(self, nprocs: usize, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        self.listener.set_nonblocking(true)?;
        let mut joiners: Vec<Joiner> = Vec::with_capacity(nprocs);
        while joiners.len() < nprocs {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_read_timeout(Some(timeout))?;
                    match Self::read_join(stream, nprocs, &joiners) {
                        Ok(j) => joiners.push(j),
                        Err((mut stream, msg)) => {
                            let _ = stream.write_all(&error_reply(&msg));
                        }
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        let msg = format!(
                            "timeout: {} of {nprocs} ranks joined",
                            joiners.len()
                        );
                        for j in &mut joiners {
                            let _ = j.stream.write_all(&error_reply(&msg));
                        }
                        return Err(Error::Timeout {
                            what: format!("rendezvous of {nprocs} ranks ({} joined)", joiners.len()),
                            elapsed: timeout,
                        });
                    }
                    thread::sleep(POLL);
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut table: Vec<Option<usize>> = vec![None; nprocs];
        for (i, j) in joiners.iter().enumerate() {
            if let Some(r) = j.wanted {
                table[r] = Some(i);
            }
        }
        let free_ranks: Vec<usize> = (0..nprocs).filter(|&r| table[r].is_none()).collect();
        let mut free = free_ranks.into_iter();
        for (i, j) in joiners.iter().enumerate() {
            if j.wanted.is_none() {
                let r = free.next().expect("a free rank per anonymous joiner");
                table[r] = Some(i);
            }
        }
        let order: Vec<usize> = table.into_iter().map(|i| i.expect("all ranks assigned")).collect();
        let mut addrs = Vec::new();
        for &i in &order {
            put_string(&mut addrs, &joiners[i].addr);
        }
        for (rank, &i) in order.iter().enumerate() {
            let mut reply = vec![0u8];
            reply.extend_from_slice(&(rank as u32).to_le_bytes());
            reply.extend_from_slice(&(nprocs as u32).to_le_bytes());
            reply.extend_from_slice(&addrs);
            joiners[i].stream.write_all(&reply)?;
        }
        Ok(())
    }

    fn read_join(
        mut stream: TcpStream,
        nprocs: usize,
        joined: &[Joiner],
    ) -> std::result::Result<Joiner, (TcpStream, String)> {
        let mut head = [0u8; 5];
        let parsed = (|| -> io::Result<(u32, String)> {
            stream.read_exact(&mut head)?;
            let wanted = read_u32(&mut stream)?;
            let addr = read_string(&mut stream)?;
            Ok((wanted, addr))
        })();
        let (wanted, addr) = match parsed {
            Ok(v) => v,
            Err(e) => return Err((stream, format!("malformed join request: {e}"))),
        };
        if head[..4] != JOIN_MAGIC || head[4] != JOIN_VERSION {
            return Err((stream, "bad join magic or version".into()));
        }
        let wanted = (wanted != ANY_RANK).then_some(wanted as usize);
        if let Some(r) = wanted {
            if r >= nprocs {
                return Err((stream, format!("rank {r} outside 0..{nprocs}")));
            }
            if joined.iter().any(|j| j.wanted == Some(r)) {
                return Err((stream, format!("duplicate rank {r}")));
            }
        }
        let explicit = joined.iter().filter(|j| j.wanted.is_some()).count() + usize::from(wanted.is_some());
        let anonymous = joined.len() + 1 - explicit;
        if explicit + anonymous > nprocs {
            return Err((stream, "world already full".into()));
        }
        Ok(Joiner { stream, wanted, addr })
    }
}

fn error_reply(msg: &str) -> Vec<u8> {
    let mut out = vec![1u8];
    put_string(&mut out, msg);
    out
}

struct Tcp {
    rank: usize,
    addrs: Vec<SocketAddr>,
    outgoing: Vec<Mutex<Option<TcpStream>>>,
    mailbox: Arc<Mailbox>,
    timeout: Duration,
    shutdown: Arc<AtomicBool>,
    listen_addr: SocketAddr,
}

impl Tcp {
    fn connect_peer(&self, dst: usize) -> Result<TcpStream> {
        let deadline = Instant::now() + self.timeout;
        loop {
            match TcpStream::connect_timeout(&self.addrs[dst], self.timeout) {
                Ok(s) => {
                    s.set_nodelay(true)?;
                    return Ok(s);
                }
                Err(e) if Instant::now() < deadline => {
                    let _ = e;
                    thread::sleep(POLL);
                }
                Err(e) => {
                    return Err(Error::Transport {
                        peer: dst,
                        message: format!("connect to {}: {e}", self.addrs[dst]),
                    })
                }
            }
        }
    }
}

impl Backend for Tcp {
    fn rank(&self) -> usize {
        self.rank
    }

    fn nprocs(&self) -> usize {
        self.addrs.len()
    }

    fn deliver(&self, dst: usize, tag: Tag, payload: &[f64]) -> Result<()> {
        let mut slot = self.outgoing[dst].lock().unwrap_or_else(|e| e.into_inner());
        if slot.is_none() {
            *slot = Some(self.connect_peer(dst)?);
        }
        let stream = slot.as_mut().expect("connected above");
        write_frame(stream, self.rank, dst, tag, payload).map_err(|e| {
            *slot = None;
            Error::Transport {
                peer: dst,
                message: format!("send tag {tag}: {e}"),
            }
        })
    }

    fn mailbox(&self) -> &Mailbox {
        &self.mailbox
    }

    fn name(&self) -> &'static str {
        "tcp"
    }
}

impl Drop for Tcp {
    fn drop(&mut self) {
        for slot in &self.outgoing {
            if let Some(s) = slot.lock().unwrap_or_else(|e| e.into_inner()).take() {
                let _ = s.shutdown(Shutdown::Write);
            }
        }
        self.shutdown.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.listen_addr, Duration::from_millis(200));
    }
}

fn spawn_acceptor(listener: TcpListener, me: usize, mailbox: Arc<Mailbox>, shutdown: Arc<AtomicBool>) {
    thread::Builder::new()
        .name(format!("igrid-accept-{me}"))
        .spawn(move || {
            for conn in listener.incoming() {
                if shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let mailbox = Arc::clone(&mailbox);
                let _ = thread::Builder::new()
                    .name(format!("igrid-reader-{me}"))
                    .spawn(move || read_loop(stream, me, &mailbox));
            }
        })
        .expect("spawn acceptor thread");
}

fn read_loop(stream: TcpStream, me: usize, mailbox: &Mailbox) {
    let mut reader = BufReader::with_capacity(1 << 16, stream);
    let mut peer: Option<usize> = None;
    loop {
        match read_frame(&mut reader) {
            Ok(Some(f)) => {
                if f.dst != me {
                    mailbox.close_peer(
                        f.src,
                        format!("frame addressed to rank {} arrived at rank {me}", f.dst),
                    );
                    return;
                }
                peer = Some(f.src);
                mailbox.deposit(f.src, f.tag, f.payload);
            }
            Ok(None) => {
                if let Some(p) = peer {
                    mailbox.close_peer(p, "connection closed");
                }
                return;
            }
            Err(e) => {
                if let Some(p) = peer {
                    mailbox.close_peer(p, format!("connection failed: {e}"));
                }
                return;
            }
        }
    }
}

/// Joins a TCP world and returns this rank's [`Comm`].
pub fn connect(cfg: &TcpConfig) -> Result<Comm> {
    if cfg.nprocs == 0 {
        return Err(Error::Config("a world needs at least one rank".into()));
    }
    if let Some(r) = cfg.rank {
        if r >= cfg.nprocs {
            return Err(Error::Config(format!("rank {r} outside 0..{}", cfg.nprocs)));
        }
    }
    let coordinator = if cfg.host_coordinator {
        let c = Coordinator::bind(&cfg.coordinator)?;
        Some(c.spawn(cfg.nprocs, cfg.timeout))
    } else {
        None
    };
    let comm = join(cfg);
    if let Some(handle) = coordinator {
        let served = handle.join().unwrap_or_else(|p| std::panic::resume_unwind(p));
        if comm.is_ok() {
            served?;
        }
    }
    comm
}

fn join(cfg: &TcpConfig) -> Result<Comm> {
    let deadline = Instant::now() + cfg.timeout;
    let coord = resolve(&cfg.coordinator)?;
    let mut stream = loop {
        match TcpStream::connect_timeout(&coord, cfg.timeout) {
            Ok(s) => break s,
            Err(e) if Instant::now() >= deadline => {
                return Err(Error::Rendezvous(format!("cannot reach coordinator {coord}: {e}")))
            }
            Err(_) => thread::sleep(POLL),
        }
    };
    let local_ip = stream.local_addr()?.ip();
    let listener = TcpListener::bind((local_ip, 0))?;
    let listen_addr = listener.local_addr()?;

    let mut req = Vec::new();
    req.extend_from_slice(&JOIN_MAGIC);
    req.push(JOIN_VERSION);
    let wanted = cfg.rank.map_or(ANY_RANK, |r| r as u32);
    req.extend_from_slice(&wanted.to_le_bytes());
    put_string(&mut req, &listen_addr.to_string());
    stream.write_all(&req)?;

    let remaining = deadline.saturating_duration_since(Instant::now()) + Duration::from_secs(1);
    stream.set_read_timeout(Some(remaining))?;
    let reply = (|| -> io::Result<std::result::Result<(usize, Vec<String>), String>> {
        let mut status = [0u8; 1];
        stream.read_exact(&mut status)?;
        if status[0] != 0 {
            return Ok(Err(read_string(&mut stream)?));
        }
        let rank = read_u32(&mut stream)? as usize;
        let n = read_u32(&mut stream)? as usize;
        let addrs = (0..n).map(|_| read_string(&mut stream)).collect::<io::Result<_>>()?;
        Ok(Ok((rank, addrs)))
    })();
    let (rank, addrs) = match reply {
        Ok(Ok(v)) => v,
        Ok(Err(msg)) if msg.starts_with("timeout") => {
            return Err(Error::Timeout {
                what: format!("rendezvous: {msg}"),
                elapsed: cfg.timeout,
            })
        }
        Ok(Err(msg)) => return Err(Error::Rendezvous(msg)),
        Err(e) if is_timeout(&e) => {
            return Err(Error::Timeout {
                what: "rendezvous reply from coordinator".into(),
                elapsed: cfg.timeout,
            })
        }
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            return Err(Error::Rendezvous("coordinator closed the connection".into()))
        }
        Err(e) => return Err(e.into()),
    };
    if addrs.len() != cfg.nprocs {
        return Err(Error::Rendezvous(format!(
            "coordinator reports {} ranks, expected {}",
            addrs.len(),
            cfg.nprocs
        )));
    }
    let addrs = addrs.iter().map(|a| resolve(a)).collect::<Result<Vec<_>>>()?;

    let mailbox = Arc::new(Mailbox::default());
    let shutdown = Arc::new(AtomicBool::new(false));
    spawn_acceptor(listener, rank, Arc::clone(&mailbox), Arc::clone(&shutdown));
    let backend = Tcp {
        rank,
        outgoing: (0..addrs.len()).map(|_| Mutex::new(None)).collect(),
        addrs,
        mailbox,
        timeout: cfg.timeout,
        shutdown,
        listen_addr,
    };
    Ok(Comm::new(Arc::new(backend), cfg.timeout))
}

/// Builds a complete TCP world on 127.0.0.1 inside this process, one comm
/// per rank in rank order. Mostly useful for tests and examples.
pub fn localhost_world(nprocs: usize, timeout: Duration) -> Result<Vec<Comm>> {
    let coordinator = Coordinator::bind("127.0.0.1:0")?;
    let addr = coordinator.local_addr()?.to_string();
    let server = coordinator.spawn(nprocs, timeout);
    let comms: Vec<Result<Comm>> = thread::scope(|s| {
        let joins: Vec<_> = (0..nprocs)
            .map(|rank| {
                let cfg = TcpConfig {
                    coordinator: addr.clone(),
                    nprocs,
                    rank: Some(rank),
                    timeout,
                    host_coordinator: false,
                };
                s.spawn(move || connect(&cfg))
            })
            .collect();
        joins.into_iter().map(|j| j.join().expect("join thread")).collect()
    });
    server.join().expect("coordinator thread")?;
    comms.into_iter().collect()
}
