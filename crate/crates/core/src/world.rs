//! Collective communication for SPMD clients.
//!
//! A world is a star: rank 0 is the central node and every other rank talks
//! only to it. Collectives are blocking and must be called by every rank in
//! the same order.
//!
//! Frames share the collector protocol's preamble:
//!
//! ```text
//! magic u32 | version u8 | msg_type u8 | rank u16 | count u32 | payload
//! ```
//!
//! * `3` snapshot gather: `count` records of
//!   `{global_index u64, weight f64, logical_seq u64, node_id u16}` (26 bytes)
//! * `4` result broadcast: `count` × `u64`; `count = u32::MAX` signals that
//!   the central node failed and carries no payload
//! * `5` arrive (rendezvous hello and barrier entry), no payload
//! * `6` release (rendezvous and barrier exit), no payload

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::{Duration, Instant};

use crate::collection::wire::{MAGIC, PROTOCOL_VERSION};
use crate::error::{GearError, Result};

pub const FRAME_HEADER_BYTES: usize = 12;
pub const GATHER_RECORD_BYTES: usize = 26;
pub const MSG_GATHER: u8 = 3;
pub const MSG_BROADCAST: u8 = 4;
pub const MSG_ARRIVE: u8 = 5;
pub const MSG_RELEASE: u8 = 6;
pub const BROADCAST_FAILED: u32 = u32::MAX;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

/// Decoded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: u8,
    pub rank: u16,
    pub count: u32,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: u8, rank: u16, count: u32, payload: Vec<u8>) -> Frame {
        Frame {
            msg_type,
            rank,
            count,
            payload,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + self.payload.len());
        out.extend_from_slice(&MAGIC.to_le_bytes());
        out.push(PROTOCOL_VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&self.rank.to_le_bytes());
        out.extend_from_slice(&self.count.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    fn payload_len(msg_type: u8, count: u32) -> Result<usize> {
        match msg_type {
            MSG_GATHER => Ok(count as usize * GATHER_RECORD_BYTES),
            MSG_BROADCAST if count == BROADCAST_FAILED => Ok(0),
            MSG_BROADCAST => Ok(count as usize * 8),
            MSG_ARRIVE | MSG_RELEASE => Ok(0),
            other => Err(GearError::protocol(format!("unexpected msg_type {other}"))),
        }
    }

    fn parse_header(h: &[u8; FRAME_HEADER_BYTES]) -> Result<(u8, u16, u32)> {
        let magic = u32::from_le_bytes(h[0..4].try_into().unwrap());
        if magic != MAGIC {
            return Err(GearError::protocol(format!("bad magic {magic:#010x}")));
        }
        if h[4] != PROTOCOL_VERSION {
            return Err(GearError::protocol(format!("bad version {}", h[4])));
        }
        Ok((
            h[5],
            u16::from_le_bytes([h[6], h[7]]),
            u32::from_le_bytes(h[8..12].try_into().unwrap()),
        ))
    }

    pub fn decode(bytes: &[u8]) -> Result<Frame> {
        let header: &[u8; FRAME_HEADER_BYTES] = bytes
            .get(..FRAME_HEADER_BYTES)
            .and_then(|h| h.try_into().ok())
            .ok_or_else(|| GearError::protocol("short frame"))?;
        let (msg_type, rank, count) = Self::parse_header(header)?;
        let len = Self::payload_len(msg_type, count)?;
        if bytes.len() != FRAME_HEADER_BYTES + len {
            return Err(GearError::protocol("frame length mismatch"));
        }
        Ok(Frame::new(msg_type, rank, count, bytes[FRAME_HEADER_BYTES..].to_vec()))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Frame> {
        let mut header = [0u8; FRAME_HEADER_BYTES];
        r.read_exact(&mut header)?;
        let (msg_type, rank, count) = Self::parse_header(&header)?;
        let mut payload = vec![0u8; Self::payload_len(msg_type, count)?];
        r.read_exact(&mut payload)?;
        Ok(Frame::new(msg_type, rank, count, payload))
    }

    fn expect(self, msg_type: u8) -> Result<Frame> {
        if self.msg_type != msg_type {
            return Err(GearError::protocol(format!(
                "expected msg_type {msg_type}, got {}",
                self.msg_type
            )));
        }
        Ok(self)
    }
}

/// Point-to-point links of one rank in a star.
pub trait Transport: Send {
    fn rank(&self) -> usize;
    fn size(&self) -> usize;
    /// Send an encoded frame to `peer` (rank 0 from non-root ranks).
    fn send(&mut self, peer: usize, frame: &[u8]) -> Result<()>;
    fn recv(&mut self, peer: usize) -> Result<Frame>;
}

struct SoloTransport;

impl Transport for SoloTransport {
    fn rank(&self) -> usize {
        0
    }
    fn size(&self) -> usize {
        1
    }
    fn send(&mut self, peer: usize, _: &[u8]) -> Result<()> {
        Err(GearError::protocol(format!("no peer {peer} in a world of one")))
    }
    fn recv(&mut self, peer: usize) -> Result<Frame> {
        Err(GearError::protocol(format!("no peer {peer} in a world of one")))
    }
}

struct ChannelTransport {
    rank: usize,
    size: usize,
    // indexed by peer rank; non-root ranks only use slot 0
    tx: Vec<Option<Sender<Vec<u8>>>>,
    rx: Vec<Option<Receiver<Vec<u8>>>>,
    timeout: Duration,
}

impl Transport for ChannelTransport {
    fn rank(&self) -> usize {
        self.rank
    }
    fn size(&self) -> usize {
        self.size
    }
    fn send(&mut self, peer: usize, frame: &[u8]) -> Result<()> {
        let tx = self
            .tx
            .get(peer)
            .and_then(Option::as_ref)
            .ok_or_else(|| GearError::protocol(format!("no link to rank {peer}")))?;
        tx.send(frame.to_vec())
            .map_err(|_| GearError::protocol(format!("rank {peer} hung up")))
    }
    fn recv(&mut self, peer: usize) -> Result<Frame> {
        let rx = self
            .rx
            .get(peer)
            .and_then(Option::as_ref)
            .ok_or_else(|| GearError::protocol(format!("no link to rank {peer}")))?;
        match rx.recv_timeout(self.timeout) {
            Ok(bytes) => Frame::decode(&bytes),
            Err(RecvTimeoutError::Timeout) => {
                Err(GearError::protocol(format!("timed out waiting for rank {peer}")))
            }
            Err(RecvTimeoutError::Disconnected) => {
                Err(GearError::protocol(format!("rank {peer} hung up")))
            }
        }
    }
}

struct TcpTransport {
    rank: usize,
    size: usize,
    streams: Vec<Option<TcpStream>>,
}

impl Transport for TcpTransport {
    fn rank(&self) -> usize {
        self.rank
    }
    fn size(&self) -> usize {
        self.size
    }
    fn send(&mut self, peer: usize, frame: &[u8]) -> Result<()> {
        let stream = self
            .streams
            .get_mut(peer)
            .and_then(Option::as_mut)
            .ok_or_else(|| GearError::protocol(format!("no link to rank {peer}")))?;
        stream.write_all(frame)?;
        Ok(())
    }
    fn recv(&mut self, peer: usize) -> Result<Frame> {
        let stream = self
            .streams
            .get_mut(peer)
            .and_then(Option::as_mut)
            .ok_or_else(|| GearError::protocol(format!("no link to rank {peer}")))?;
        Frame::read_from(stream)
    }
}

/// One rank's handle on a world.
pub struct World {
    transport: Box<dyn Transport>,
    bytes_sent: u64,
    frames_sent: u64,
}

impl std::fmt::Debug for World {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("World")
            .field("rank", &self.rank())
            .field("size", &self.size())
            .finish()
    }
}

impl World {
    pub fn from_transport(transport: Box<dyn Transport>) -> World {
        World {
            transport,
            bytes_sent: 0,
            frames_sent: 0,
        }
    }

    /// Degenerate world of one rank; every collective is local.
    pub fn solo() -> World {
        World::from_transport(Box::new(SoloTransport))
    }

    /// In-process world over channels; element `r` is rank `r`.
    pub fn local_group(size: usize) -> Vec<World> {
        assert!(size >= 1);
        if size == 1 {
            return vec![World::solo()];
        }
        let mut root = ChannelTransport {
            rank: 0,
            size,
            tx: vec![None; size],
            rx: (0..size).map(|_| None).collect(),
            timeout: DEFAULT_TIMEOUT,
        };
        let mut others = Vec::with_capacity(size - 1);
        for r in 1..size {
            let (to_root, from_r) = mpsc::channel();
            let (to_r, from_root) = mpsc::channel();
            root.tx[r] = Some(to_r);
            root.rx[r] = Some(from_r);
            others.push(ChannelTransport {
                rank: r,
                size,
                tx: vec![Some(to_root)],
                rx: vec![Some(from_root)],
                timeout: DEFAULT_TIMEOUT,
            });
        }
        std::iter::once(World::from_transport(Box::new(root)))
            .chain(others.into_iter().map(|t| World::from_transport(Box::new(t))))
            .collect()
    }

    /// Central rank: wait for `size - 1` peers on `listener`.
    pub fn tcp_root(listener: TcpListener, size: usize, timeout: Duration) -> Result<World> {
        if size <= 1 {
            return Ok(World::solo());
        }
        listener.set_nonblocking(true)?;
        let deadline = Instant::now() + timeout;
        let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
        let mut joined = 0;
        while joined < size - 1 {
            match listener.accept() {
                Ok((mut stream, _)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    stream.set_read_timeout(Some(timeout))?;
                    let hello = Frame::read_from(&mut stream)?.expect(MSG_ARRIVE)?;
                    let rank = hello.rank as usize;
                    if rank == 0 || rank >= size || streams[rank].is_some() {
                        return Err(GearError::protocol(format!("bad rendezvous rank {rank}")));
                    }
                    streams[rank] = Some(stream);
                    joined += 1;
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() > deadline {
                        return Err(GearError::protocol(format!(
                            "rendezvous timed out with {joined} of {} peers",
                            size - 1
                        )));
                    }
                    std::thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
        let mut world = World::from_transport(Box::new(TcpTransport {
            rank: 0,
            size,
            streams,
        }));
        let release = Frame::new(MSG_RELEASE, 0, 0, Vec::new()).encode();
        for r in 1..size {
            world.send(r, &release)?;
        }
        Ok(world)
    }

    /// Non-central rank: connect to the central node and wait for release.
    pub fn tcp_join(root: SocketAddr, rank: usize, size: usize, timeout: Duration) -> Result<World> {
        if rank == 0 || rank >= size {
            return Err(GearError::InvalidArgument(format!(
                "rank {rank} cannot join a world of {size} as a peer"
            )));
        }
        let deadline = Instant::now() + timeout;
        let mut stream = loop {
            match TcpStream::connect(root) {
                Ok(s) => break s,
                Err(e) if Instant::now() < deadline => {
                    let _ = e;
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
        };
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(timeout))?;
        let mut streams: Vec<Option<TcpStream>> = (0..size).map(|_| None).collect();
        stream.write_all(&Frame::new(MSG_ARRIVE, rank as u16, 0, Vec::new()).encode())?;
        Frame::read_from(&mut stream)?.expect(MSG_RELEASE)?;
        streams[0] = Some(stream);
        Ok(World::from_transport(Box::new(TcpTransport {
            rank,
            size,
            streams,
        })))
    }

    pub fn rank(&self) -> usize {
        self.transport.rank()
    }

    pub fn size(&self) -> usize {
        self.transport.size()
    }

    pub fn is_root(&self) -> bool {
        self.rank() == 0
    }

    /// Bytes this rank has put on the wire.
    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn reset_counters(&mut self) {
        self.bytes_sent = 0;
        self.frames_sent = 0;
    }

    fn send(&mut self, peer: usize, frame: &[u8]) -> Result<()> {
        self.transport.send(peer, frame)?;
        self.bytes_sent += frame.len() as u64;
        self.frames_sent += 1;
        Ok(())
    }

    /// Every rank contributes one frame; the central rank receives all of them
    /// in rank order (its own included, without touching the wire).
    pub fn gather(&mut self, own: Frame) -> Result<Option<Vec<Frame>>> {
        if self.is_root() {
            let mut frames = Vec::with_capacity(self.size());
            frames.push(own);
            for r in 1..self.size() {
                frames.push(self.transport.recv(r)?);
            }
            Ok(Some(frames))
        } else {
            let bytes = own.encode();
            self.send(0, &bytes)?;
            Ok(None)
        }
    }

    /// The central rank passes `Some(frame)`; every rank returns it.
    pub fn broadcast(&mut self, frame: Option<Frame>) -> Result<Frame> {
        if self.is_root() {
            let frame = frame
                .ok_or_else(|| GearError::InvalidArgument("central rank must supply the frame".into()))?;
            let bytes = frame.encode();
            for r in 1..self.size() {
                self.send(r, &bytes)?;
            }
            Ok(frame)
        } else {
            self.transport.recv(0)
        }
    }

    pub fn barrier(&mut self) -> Result<()> {
        let rank = self.rank() as u16;
        let arrive = Frame::new(MSG_ARRIVE, rank, 0, Vec::new());
        if let Some(frames) = self.gather(arrive)? {
            for f in frames {
                f.expect(MSG_ARRIVE)?;
            }
        }
        let release = self.is_root().then(|| Frame::new(MSG_RELEASE, 0, 0, Vec::new()));
        self.broadcast(release)?.expect(MSG_RELEASE)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let f = Frame::new(MSG_BROADCAST, 3, 2, vec![0; 16]);
        let bytes = f.encode();
        assert_eq!(&bytes[0..4], &MAGIC.to_le_bytes());
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 4);
        assert_eq!(&bytes[6..8], &3u16.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(Frame::decode(&bytes).unwrap(), f);
        assert!(Frame::decode(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = 0;
        assert!(Frame::decode(&bad).is_err());
    }

    fn run_collectives(worlds: Vec<World>) {
        let handles: Vec<_> = worlds
            .into_iter()
            .map(|mut w| {
                std::thread::spawn(move || {
                    let r = w.rank() as u16;
                    let payload = vec![r as u8; GATHER_RECORD_BYTES];
                    let gathered = w.gather(Frame::new(MSG_GATHER, r, 1, payload)).unwrap();
                    if let Some(frames) = &gathered {
                        for (i, f) in frames.iter().enumerate() {
                            assert_eq!(f.rank as usize, i);
                            assert_eq!(f.payload[0] as usize, i);
                        }
                    }
                    let out = w
                        .broadcast(w.is_root().then(|| Frame::new(MSG_BROADCAST, 0, 1, 42u64.to_le_bytes().to_vec())))
                        .unwrap();
                    assert_eq!(out.payload, 42u64.to_le_bytes());
                    w.barrier().unwrap();
                    w.bytes_sent()
                })
            })
            .collect();
        let sent: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let size = sent.len() as u64;
        if size > 1 {
            // peers: gather frame + barrier arrive; root: broadcast + release per peer
            assert_eq!(sent[1], (12 + 26) + 12);
            assert_eq!(sent[0], (size - 1) * ((12 + 8) + 12));
        }
    }

    #[test]
    fn channel_collectives() {
        for size in 1..5 {
            run_collectives(World::local_group(size));
        }
    }

    #[test]
    fn tcp_collectives() {
        let size = 3;
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let joiners: Vec<_> = (1..size)
            .map(|r| std::thread::spawn(move || World::tcp_join(addr, r, size, DEFAULT_TIMEOUT).unwrap()))
            .collect();
        let root = World::tcp_root(listener, size, DEFAULT_TIMEOUT).unwrap();
        let mut worlds = vec![root];
        worlds.extend(joiners.into_iter().map(|h| h.join().unwrap()));
        for w in &mut worlds {
            w.reset_counters();
        }
        run_collectives(worlds);
    }
}
