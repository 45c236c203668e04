//! Trajectory collection.
//!
//! [`Collector::collect`] translates global indices into per-shard local
//! indices, gathers the local shard's rows straight from shared memory, asks
//! collector servers for the rest (one request per remote shard, all issued
//! concurrently) and writes every row directly into its final position of the
//! output batch.
//!
//! Copies per block: one on the local path (region to batch), two on the
//! remote path (region to socket on the server, socket to batch on the
//! client). Payloads are never re-encoded.

mod gather;
mod server;
pub mod wire;

use std::collections::HashMap;
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub use gather::{gather_local, gather_local_with_epochs, ColumnBuffer, CopyCounter, CopyStats};
pub use server::CollectorServer;

use gather::{gather_into, RowSink};
use wire::{CollectRequest, Status};

use crate::error::{GearError, Result};
use crate::placement::{translate, ShardRoute};
use crate::schema::TrajectorySchema;
use crate::shard::Shard;

/// Rows of the requested columns, row `r` holding `global_indices[r]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryBatch {
    pub global_indices: Vec<u64>,
    pub columns: Vec<ColumnBuffer>,
}

impl TrajectoryBatch {
    pub fn rows(&self) -> usize {
        self.global_indices.len()
    }

    pub fn column(&self, name: &str) -> Option<&ColumnBuffer> {
        self.columns.iter().find(|c| c.spec.name == name)
    }

    pub fn total_bytes(&self) -> usize {
        self.columns.iter().map(|c| c.data.len()).sum()
    }
}

/// How often a remote request is attempted and the first backoff.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_millis(10),
        }
    }
}

#[derive(Debug, Default)]
struct NetCounters {
    requests: AtomicU64,
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NetStats {
    pub requests: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Collector client of one process.
pub struct Collector {
    schema: TrajectorySchema,
    capacity: u64,
    local: Option<Arc<Shard>>,
    endpoints: HashMap<u64, SocketAddr>,
    pool: Mutex<HashMap<u64, Vec<TcpStream>>>,
    retry: RetryPolicy,
    copies: Arc<CopyCounter>,
    net: NetCounters,
}

impl std::fmt::Debug for Collector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Collector")
            .field("capacity", &self.capacity)
            .field("local", &self.local.as_ref().map(|s| s.shard_id()))
            .field("endpoints", &self.endpoints)
            .finish()
    }
}

impl Collector {
    /// Collector for a process that hosts `local` and reaches other shards
    /// through `endpoints` (shard id to collector server address).
    pub fn new(local: Arc<Shard>, endpoints: HashMap<u64, SocketAddr>) -> Collector {
        Collector {
            schema: local.schema().clone(),
            capacity: local.capacity(),
            local: Some(local),
            endpoints,
            pool: Mutex::new(HashMap::new()),
            retry: RetryPolicy::default(),
            copies: Arc::new(CopyCounter::default()),
            net: NetCounters::default(),
        }
    }

    /// Collector without a local shard; everything is fetched remotely.
    pub fn remote_only(
        schema: TrajectorySchema,
        capacity: u64,
        endpoints: HashMap<u64, SocketAddr>,
    ) -> Collector {
        Collector {
            schema,
            capacity,
            local: None,
            endpoints,
            pool: Mutex::new(HashMap::new()),
            retry: RetryPolicy::default(),
            copies: Arc::new(CopyCounter::default()),
            net: NetCounters::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_copy_counter(mut self, copies: Arc<CopyCounter>) -> Self {
        self.copies = copies;
        self
    }

    pub fn copies(&self) -> CopyStats {
        self.copies.snapshot()
    }

    pub fn net_stats(&self) -> NetStats {
        NetStats {
            requests: self.net.requests.load(Ordering::Relaxed),
            bytes_sent: self.net.bytes_sent.load(Ordering::Relaxed),
            bytes_received: self.net.bytes_received.load(Ordering::Relaxed),
        }
    }

    pub fn schema(&self) -> &TrajectorySchema {
        &self.schema
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Collect `columns` of `global_indices`, rows in request order.
    pub fn collect<S: AsRef<str>>(&self, global_indices: &[u64], columns: &[S]) -> Result<TrajectoryBatch> {
        if global_indices.is_empty() {
            return Err(GearError::InvalidArgument("no indices requested".into()));
        }
        if columns.is_empty() {
            return Err(GearError::InvalidArgument("no columns requested".into()));
        }
        let column_ids = self.schema.column_ids(columns)?;
        let routes = translate(global_indices, self.capacity)?;
        let local_id = self.local.as_ref().map(|s| s.shard_id());
        for shard_id in routes.keys() {
            if Some(*shard_id) != local_id && !self.endpoints.contains_key(shard_id) {
                return Err(GearError::NoRoute(*shard_id));
            }
        }

        let rows = global_indices.len();
        let mut columns_out: Vec<ColumnBuffer> = column_ids
            .iter()
            .map(|&c| {
                let spec = self.schema.columns()[c].clone();
                let data = vec![0u8; rows * spec.block_bytes()];
                ColumnBuffer { spec, data }
            })
            .collect();
        let sinks: Vec<RowSink> = columns_out
            .iter_mut()
            .map(|b| {
                let bb = b.block_bytes();
                RowSink::new(&mut b.data, bb)
            })
            .collect();

        let outcomes: Vec<Result<()>> = std::thread::scope(|s| {
            let mut handles = Vec::new();
            let mut local_route = None;
            for (&shard_id, route) in &routes {
                if Some(shard_id) == local_id {
                    local_route = Some(route);
                    continue;
                }
                let sinks = &sinks;
                let column_ids = &column_ids;
                handles.push(s.spawn(move || self.fetch_remote(shard_id, route, column_ids, sinks)));
            }
            let mut outcomes = Vec::with_capacity(routes.len());
            if let (Some(route), Some(shard)) = (local_route, &self.local) {
                outcomes.push(self.gather_own(shard, route, &column_ids, &sinks));
            }
            outcomes.extend(handles.into_iter().map(|h| h.join().expect("collect worker panicked")));
            outcomes
        });

        let mut stale = Vec::new();
        for outcome in outcomes {
            match outcome {
                Ok(()) => {}
                Err(GearError::StaleIndices(v)) => stale.extend(v),
                Err(e) => return Err(e),
            }
        }
        if !stale.is_empty() {
            stale.sort_unstable();
            stale.dedup();
            return Err(GearError::StaleIndices(stale));
        }
        Ok(TrajectoryBatch {
            global_indices: global_indices.to_vec(),
            columns: columns_out,
        })
    }

    fn gather_own(&self, shard: &Shard, route: &ShardRoute, column_ids: &[usize], sinks: &[RowSink]) -> Result<()> {
        match gather_into(shard, &route.local_indices, &route.positions, column_ids, sinks, &self.copies)? {
            Ok(_) => Ok(()),
            Err(stale) => Err(GearError::StaleIndices(
                stale.into_iter().map(|l| shard.global_index(l)).collect(),
            )),
        }
    }

    fn checkout(&self, shard_id: u64) -> Result<TcpStream> {
        if let Some(stream) = self.pool.lock().unwrap().get_mut(&shard_id).and_then(Vec::pop) {
            return Ok(stream);
        }
        let addr = self.endpoints.get(&shard_id).ok_or(GearError::NoRoute(shard_id))?;
        let stream = TcpStream::connect_timeout(addr, Duration::from_secs(5))?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(60)))?;
        Ok(stream)
    }

    fn checkin(&self, shard_id: u64, stream: TcpStream) {
        self.pool.lock().unwrap().entry(shard_id).or_default().push(stream);
    }

    fn fetch_remote(&self, shard_id: u64, route: &ShardRoute, column_ids: &[usize], sinks: &[RowSink]) -> Result<()> {
        let request = CollectRequest {
            shard_id: u16::try_from(shard_id).map_err(|_| GearError::NoRoute(shard_id))?,
            indices: route.local_indices.clone(),
            column_ids: column_ids.iter().map(|&c| c as u16).collect(),
        };
        let encoded = request.encode();
        let mut backoff = self.retry.initial_backoff;
        let mut last_err = None;
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(backoff);
                backoff *= 2;
            }
            let mut stream = match self.checkout(shard_id) {
                Ok(s) => s,
                Err(e) => {
                    last_err = Some(e);
                    continue;
                }
            };
            match self.exchange(&mut stream, shard_id, &encoded, route, column_ids, sinks) {
                Ok(()) => {
                    self.checkin(shard_id, stream);
                    return Ok(());
                }
                Err(e @ (GearError::Io(_) | GearError::Protocol(_))) => last_err = Some(e),
                Err(e) => {
                    // the response was read completely, so the connection is reusable
                    self.checkin(shard_id, stream);
                    return Err(e);
                }
            }
        }
        Err(last_err.unwrap_or(GearError::NoRoute(shard_id)))
    }

    fn exchange(
        &self,
        stream: &mut TcpStream,
        shard_id: u64,
        encoded: &[u8],
        route: &ShardRoute,
        column_ids: &[usize],
        sinks: &[RowSink],
    ) -> Result<()> {
        stream.write_all(encoded)?;
        self.net.requests.fetch_add(1, Ordering::Relaxed);
        self.net.bytes_sent.fetch_add(encoded.len() as u64, Ordering::Relaxed);
        let (status, num_columns) = wire::read_response_header(stream)?;
        let mut received = wire::RESPONSE_HEADER_BYTES as u64;
        match status {
            Status::Ok => {}
            Status::StaleIndex => {
                let stale = wire::read_stale_trailer(stream)?;
                received += 4 + 8 * stale.len() as u64;
                self.net.bytes_received.fetch_add(received, Ordering::Relaxed);
                return Err(GearError::StaleIndices(stale));
            }
            other => {
                self.net.bytes_received.fetch_add(received, Ordering::Relaxed);
                return Err(GearError::RemoteStatus {
                    shard_id,
                    status: other as u8,
                });
            }
        }
        if num_columns as usize != column_ids.len() {
            return Err(GearError::protocol(format!(
                "asked for {} columns, got {num_columns}",
                column_ids.len()
            )));
        }
        for (&expected, sink) in column_ids.iter().zip(sinks) {
            let (column_id, payload_len) = wire::read_column_header(stream)?;
            let block_bytes = self.schema.columns()[expected].block_bytes();
            if column_id as usize != expected
                || payload_len != (route.local_indices.len() * block_bytes) as u64
            {
                return Err(GearError::protocol(format!(
                    "unexpected column {column_id} with {payload_len} bytes"
                )));
            }
            for &pos in &route.positions {
                // each position belongs to exactly one route
                let row = unsafe { sink.row_mut(pos) };
                stream.read_exact(row)?;
            }
            self.copies.add_client(route.positions.len() as u64);
            received += wire::COLUMN_HEADER_BYTES as u64 + payload_len;
        }
        self.net.bytes_received.fetch_add(received, Ordering::Relaxed);
        Ok(())
    }
}
