use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::gather::CopyCounter;
use super::wire::{self, CollectRequest, Status};
use crate::error::Result;
use crate::shard::Shard;
use crate::status::IndexState;

/// Serves collect requests for one shard until shut down.
pub struct CollectorServer {
    addr: SocketAddr,
    shard_id: u64,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
    copies: Arc<CopyCounter>,
}

impl std::fmt::Debug for CollectorServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CollectorServer")
            .field("addr", &self.addr)
            .field("shard_id", &self.shard_id)
            .finish()
    }
}

impl CollectorServer {
    pub fn start(shard: Arc<Shard>, addr: impl ToSocketAddrs) -> Result<CollectorServer> {
        Self::start_with_counter(shard, addr, Arc::new(CopyCounter::default()))
    }

    pub fn start_with_counter(
        shard: Arc<Shard>,
        addr: impl ToSocketAddrs,
        copies: Arc<CopyCounter>,
    ) -> Result<CollectorServer> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        let shard_id = shard.shard_id();
        let acceptor = {
            let stop = Arc::clone(&stop);
            let connections = Arc::clone(&connections);
            let copies = Arc::clone(&copies);
            std::thread::Builder::new()
                .name(format!("collector-{shard_id}"))
                .spawn(move || accept_loop(listener, shard, stop, connections, copies))?
        };
        Ok(CollectorServer {
            addr,
            shard_id,
            stop,
            connections,
            acceptor: Some(acceptor),
            copies,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shard_id(&self) -> u64 {
        self.shard_id
    }

    pub fn copies(&self) -> &Arc<CopyCounter> {
        &self.copies
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for conn in self.connections.lock().unwrap().drain(..) {
            let _ = conn.shutdown(Shutdown::Both);
        }
        if let Some(handle) = self.acceptor.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for CollectorServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(
    listener: TcpListener,
    shard: Arc<Shard>,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    copies: Arc<CopyCounter>,
) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                if let Ok(clone) = stream.try_clone() {
                    connections.lock().unwrap().push(clone);
                }
                let shard = Arc::clone(&shard);
                let copies = Arc::clone(&copies);
                workers.push(std::thread::spawn(move || {
                    let _ = serve_connection(stream, &shard, &copies);
                }));
                workers.retain(|w| !w.is_finished());
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(2));
            }
            Err(_) => std::thread::sleep(Duration::from_millis(2)),
        }
    }
    for conn in connections.lock().unwrap().drain(..) {
        let _ = conn.shutdown(Shutdown::Both);
    }
    for w in workers {
        let _ = w.join();
    }
}

fn serve_connection(mut stream: TcpStream, shard: &Shard, copies: &CopyCounter) -> Result<()> {
    while let Some(request) = CollectRequest::read_from(&mut stream)? {
        answer(&mut stream, shard, &request, copies)?;
    }
    Ok(())
}

/// Write the response to one request straight from the shard region.
pub(crate) fn answer(
    stream: &mut TcpStream,
    shard: &Shard,
    request: &CollectRequest,
    copies: &CopyCounter,
) -> Result<()> {
    use std::io::Write;

    if request.shard_id as u64 != shard.shard_id() {
        stream.write_all(&wire::response_header(Status::BadShard, 0))?;
        return Ok(());
    }
    let num_columns = shard.schema().len();
    if request.column_ids.is_empty()
        || request.column_ids.iter().any(|&c| c as usize >= num_columns)
    {
        stream.write_all(&wire::response_header(Status::BadColumn, 0))?;
        return Ok(());
    }
    let stale: Vec<u64> = request
        .indices
        .iter()
        .filter(|&&local| {
            local >= shard.capacity()
                || shard.status_cell(local).read().map(|s| s.state) != Some(IndexState::Committed)
        })
        .map(|&local| shard.global_index(local))
        .collect();
    if !stale.is_empty() {
        let mut out = wire::response_header(Status::StaleIndex, 0).to_vec();
        out.extend_from_slice(&wire::stale_trailer(&stale));
        stream.write_all(&out)?;
        return Ok(());
    }

    stream.write_all(&wire::response_header(Status::Ok, request.column_ids.len() as u16))?;
    for &column_id in &request.column_ids {
        let table = *shard.table(column_id as usize)?;
        let payload_len = (request.indices.len() * table.block_bytes) as u64;
        let blocks: Vec<&[u8]> = request
            .indices
            .iter()
            .map(|&local| shard.block_by_id(column_id as usize, local))
            .collect::<Result<_>>()?;
        stream.write_all(&wire::column_header(column_id, payload_len))?;
        wire::write_all_slices(stream, &blocks)?;
        copies.add_server(blocks.len() as u64);
    }
    Ok(())
}
