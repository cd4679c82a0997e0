//! Parallel execution of IA plans: one worker per site, message passing for
//! broadcasts and shuffles, a barrier after every plan node.
//!
//! Sites are threads by default. In process mode every site is a child
//! process talking to a coordinator over a local TCP socket; tuple batches on
//! the wire use the relation file encoding. Both modes reuse the per-site
//! routing and reduction functions of [`crate::ia`], so their output is
//! bit-identical to the sequential reference executor.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Barrier, Mutex};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use serde_json::{json, Value};

use crate::compiler::prepare;
use crate::error::{Error, Result};
use crate::format::{decode_tuples, encode_tuples};
use crate::ia::{assemble, dense_source, local_step, route_bcast, route_shuf, PhysicalRelation};
use crate::kernels::KernelRegistry;
use crate::model::{frontier_of, DenseArray, Key};
use crate::plan::{ExecNode, ExecPlan, IaOp, IaPlan};
use crate::tra::Catalog;

type Tuples = Vec<(Key, DenseArray)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Threads,
    Processes,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "threads" => Ok(Mode::Threads),
            "processes" => Ok(Mode::Processes),
            _ => Err(Error::Format(format!("unknown mode `{s}` (expected threads or processes)"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RuntimeConfig {
    pub sites: usize,
    pub mode: Mode,
    /// Coordinator port in process mode; 0 picks a free one.
    pub port_base: u16,
    /// Tuples per message.
    pub batch: usize,
    /// Messages buffered per destination channel.
    pub channel_capacity: usize,
    /// Check uniqueness and continuity of every root.
    pub validate: bool,
    /// Executable started for each site in process mode, invoked as
    /// `<exe> worker --coordinator <addr> --site <n>`. Defaults to the current executable.
    pub worker_exe: Option<PathBuf>,
}

impl RuntimeConfig {
    pub fn threads(sites: usize) -> Self {
        RuntimeConfig {
            sites,
            mode: Mode::Threads,
            port_base: 0,
            batch: 256,
            channel_capacity: 64,
            validate: false,
            worker_exe: None,
        }
    }

    pub fn processes(sites: usize, worker_exe: Option<PathBuf>) -> Self {
        RuntimeConfig { mode: Mode::Processes, worker_exe, ..Self::threads(sites) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceNode {
    pub id: usize,
    pub op: String,
    pub frontier: Key,
    pub tuples: u64,
    /// Floats sent by all sites for this node, self-sends included.
    pub transfer: u64,
}

#[derive(Debug, Clone)]
pub struct ExecutionTrace {
    pub sites: usize,
    pub nodes: Vec<TraceNode>,
    pub elapsed: Duration,
}

impl ExecutionTrace {
    /// Wall time is left out so repeated runs produce identical files.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,operator,frontier,tuples,transfer\n");
        for n in &self.nodes {
            let f: Vec<String> = n.frontier.iter().map(u64::to_string).collect();
            s.push_str(&format!("{},\"{}\",{},{},{}\n", n.id, n.op.replace('"', "'"), f.join("x"), n.tuples, n.transfer));
        }
        s
    }
}

/// Per-node transfers and their total.
pub fn measure_transfers(trace: &ExecutionTrace) -> (Vec<u64>, u64) {
    let per: Vec<u64> = trace.nodes.iter().map(|n| n.transfer).collect();
    let total = per.iter().sum();
    (per, total)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// One physical relation per plan root.
    pub roots: Vec<PhysicalRelation<DenseArray>>,
    pub trace: ExecutionTrace,
}

/// Validates and runs `plan` over the catalog's data. Process mode always
/// uses the built-in kernel registry on the workers.
pub fn execute(plan: &IaPlan, catalog: &Catalog, reg: &KernelRegistry, config: &RuntimeConfig) -> Result<RunResult> {
    if config.sites == 0 {
        return Err(Error::validation("runtime", "site count must be at least 1"));
    }
    if config.batch == 0 || config.channel_capacity == 0 {
        return Err(Error::validation("runtime", "batch size and channel capacity must be positive"));
    }
    let exec = prepare(plan, catalog, reg, config.sites)?;
    let place = dense_source(catalog, config.sites);
    let mut sources: Vec<Option<PhysicalRelation<DenseArray>>> = Vec::with_capacity(exec.nodes.len());
    for n in &exec.nodes {
        sources.push(match &n.op {
            IaOp::Source { name } => Some(place(name)?),
            _ => None,
        });
    }
    let start = Instant::now();
    let (roots, summaries) = match config.mode {
        Mode::Threads => run_threads(&exec, reg, config, sources)?,
        Mode::Processes => run_processes(&exec, config, sources)?,
    };
    if config.validate {
        for (r, rel) in exec.roots.iter().zip(&roots) {
            rel.to_logical()?.check_constraints().map_err(|v| Error::Execution {
                node: *r,
                site: 0,
                msg: format!("{} constraint violated at key {:?}", v.kind, v.witness),
            })?;
        }
    }
    let nodes = exec
        .nodes
        .iter()
        .zip(summaries)
        .enumerate()
        .map(|(id, (n, s))| TraceNode { id, op: n.op.label(), frontier: s.frontier, tuples: s.tuples, transfer: s.sent })
        .collect();
    Ok(RunResult { roots, trace: ExecutionTrace { sites: config.sites, nodes, elapsed: start.elapsed() } })
}

/// What one site knows about one node after running it.
#[derive(Debug, Clone, Default)]
struct Summary {
    frontier: Key,
    tuples: u64,
    sent: u64,
}

impl Summary {
    fn of(key_arity: usize, tuples: &Tuples, sent: u64) -> Self {
        Summary { frontier: frontier_of(key_arity, tuples.iter().map(|(k, _)| k)), tuples: tuples.len() as u64, sent }
    }

    fn merge(&mut self, other: &Summary) {
        if self.frontier.len() < other.frontier.len() {
            self.frontier.resize(other.frontier.len(), 0);
        }
        for (a, b) in self.frontier.iter_mut().zip(&other.frontier) {
            *a = (*a).max(*b);
        }
        self.tuples += other.tuples;
        self.sent += other.sent;
    }

    fn to_json(&self) -> Value {
        json!({"frontier": self.frontier, "tuples": self.tuples, "sent": self.sent})
    }

    fn from_json(v: &Value) -> Result<Self> {
        let bad = || Error::Format(format!("bad node summary {v}"));
        Ok(Summary {
            frontier: v["frontier"].as_array().ok_or_else(bad)?.iter().map(|x| x.as_u64().ok_or_else(bad)).collect::<Result<_>>()?,
            tuples: v["tuples"].as_u64().ok_or_else(bad)?,
            sent: v["sent"].as_u64().ok_or_else(bad)?,
        })
    }
}

fn merge_summaries(per_site: Vec<Vec<Summary>>, node_count: usize) -> Vec<Summary> {
    let mut out = vec![Summary::default(); node_count];
    for site in per_site {
        for (acc, s) in out.iter_mut().zip(&site) {
            acc.merge(s);
        }
    }
    out
}

/// Outgoing batches of `site` for a movement node, by destination.
fn route(node: &ExecNode, site: usize, input: &Tuples, sites: usize) -> Vec<Tuples> {
    match &node.op {
        IaOp::Bcast => route_bcast(site, input, sites, node.replicated_input),
        IaOp::Shuf { dims } => route_shuf(dims, input, sites),
        _ => unreachable!("route called on a local operator"),
    }
}

/// Shuffles collapse replicated copies; broadcasts never see duplicates.
fn dedupes(node: &ExecNode) -> bool {
    matches!(node.op, IaOp::Shuf { .. }) && node.replicated_input
}

fn floats(t: &Tuples) -> u64 {
    t.iter().map(|(_, a)| a.array_type().floats()).sum()
}

fn roots_from(exec: &ExecPlan, per_site: Vec<Vec<Tuples>>) -> Vec<PhysicalRelation<DenseArray>> {
    exec.roots
        .iter()
        .map(|&r| PhysicalRelation {
            key_arity: exec.nodes[r].key_arity,
            array_type: exec.nodes[r].array_type.clone(),
            sites: per_site.iter().map(|site| site[r].clone()).collect(),
        })
        .collect()
}

// Thread mode.

struct Batch {
    node: usize,
    origin: usize,
    tuples: Tuples,
    last: bool,
}

type SiteOutcome = (Vec<Tuples>, Vec<Summary>);

fn run_threads(
    exec: &ExecPlan,
    reg: &KernelRegistry,
    config: &RuntimeConfig,
    mut sources: Vec<Option<PhysicalRelation<DenseArray>>>,
) -> Result<(Vec<PhysicalRelation<DenseArray>>, Vec<Summary>)> {
    let s = config.sites;
    let (txs, rxs): (Vec<Sender<Batch>>, Vec<Receiver<Batch>>) = (0..s).map(|_| bounded(config.channel_capacity)).unzip();
    let barrier = Barrier::new(s);
    let failed = AtomicBool::new(false);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    // Each site takes its slice of every source up front.
    let mut local_sources: Vec<Vec<Option<Tuples>>> = vec![vec![None; exec.nodes.len()]; s];
    for (id, src) in sources.iter_mut().enumerate() {
        if let Some(rel) = src.take() {
            for (site, t) in rel.sites.into_iter().enumerate() {
                local_sources[site][id] = Some(t);
            }
        }
    }

    let outcomes: Vec<Option<SiteOutcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = local_sources
            .into_iter()
            .zip(rxs)
            .enumerate()
            .map(|(site, (srcs, rx))| {
                let txs = txs.clone();
                let (barrier, failed, first_error) = (&barrier, &failed, &first_error);
                scope.spawn(move || {
                    let mut w = ThreadWorker { exec, reg, site, sites: s, batch: config.batch, txs, rx, store: Vec::new() };
                    w.run(srcs, barrier, failed, first_error)
                })
            })
            .collect();
        drop(txs);
        handles.into_iter().map(|h| h.join().unwrap_or(None)).collect()
    });

    if let Some(e) = first_error.into_inner().unwrap_or_else(|p| p.into_inner()) {
        return Err(e);
    }
    let mut stores = Vec::with_capacity(s);
    let mut sums = Vec::with_capacity(s);
    for (site, o) in outcomes.into_iter().enumerate() {
        let (st, su) = o.ok_or_else(|| Error::Execution { node: 0, site, msg: "worker thread panicked".into() })?;
        stores.push(st);
        sums.push(su);
    }
    Ok((roots_from(exec, stores), merge_summaries(sums, exec.nodes.len())))
}

struct ThreadWorker<'a> {
    exec: &'a ExecPlan,
    reg: &'a KernelRegistry,
    site: usize,
    sites: usize,
    batch: usize,
    txs: Vec<Sender<Batch>>,
    rx: Receiver<Batch>,
    store: Vec<Tuples>,
}

impl ThreadWorker<'_> {
    fn run(
        &mut self,
        mut srcs: Vec<Option<Tuples>>,
        barrier: &Barrier,
        failed: &AtomicBool,
        first_error: &Mutex<Option<Error>>,
    ) -> Option<SiteOutcome> {
        let mut sums = Vec::with_capacity(self.exec.nodes.len());
        for (id, node) in self.exec.nodes.iter().enumerate() {
            let step = match &node.op {
                IaOp::Source { .. } => Ok((srcs[id].take().unwrap_or_default(), 0)),
                IaOp::Bcast | IaOp::Shuf { .. } => self.exchange(id, node),
                op => {
                    let ins: Vec<&[(Key, DenseArray)]> = node.inputs.iter().map(|&i| self.store[i].as_slice()).collect();
                    local_step(self.reg, op, &ins).map(|t| (t, 0))
                }
            };
            let ok = match step {
                Ok((tuples, sent)) => {
                    sums.push(Summary::of(node.key_arity, &tuples, sent));
                    self.store.push(tuples);
                    true
                }
                Err(e) => {
                    let mut slot = first_error.lock().unwrap_or_else(|p| p.into_inner());
                    slot.get_or_insert(Error::Execution { node: id, site: self.site, msg: e.to_string() });
                    failed.store(true, Ordering::SeqCst);
                    false
                }
            };
            barrier.wait();
            if !ok || failed.load(Ordering::SeqCst) {
                return None;
            }
        }
        Some((std::mem::take(&mut self.store), sums))
    }

    /// Sends this site's share on a helper thread while receiving here, so
    /// bounded channels never deadlock.
    fn exchange(&self, id: usize, node: &ExecNode) -> Result<(Tuples, u64)> {
        let outgoing = route(node, self.site, &self.store[node.inputs[0]], self.sites);
        let sent: u64 = outgoing.iter().map(floats).sum();
        let mut by_origin: Vec<Tuples> = vec![Vec::new(); self.sites];
        std::thread::scope(|scope| {
            scope.spawn(|| {
                for (dest, tuples) in outgoing.into_iter().enumerate() {
                    let mut chunks: Vec<Tuples> = tuples.chunks(self.batch).map(<[_]>::to_vec).collect();
                    if chunks.is_empty() {
                        chunks.push(Vec::new());
                    }
                    let n = chunks.len();
                    for (i, chunk) in chunks.into_iter().enumerate() {
                        let msg = Batch { node: id, origin: self.site, tuples: chunk, last: i + 1 == n };
                        // A closed channel means the peer already failed; the barrier reports it.
                        if self.txs[dest].send(msg).is_err() {
                            return;
                        }
                    }
                }
            });
            let mut ended = 0;
            while ended < self.sites {
                let Ok(b) = self.rx.recv() else { break };
                debug_assert_eq!(b.node, id, "batch from another stage");
                by_origin[b.origin].extend(b.tuples);
                ended += usize::from(b.last);
            }
        });
        Ok((assemble(by_origin, dedupes(node))?, sent))
    }
}

// Process mode.

mod wire {
    pub const HELLO: u8 = 1;
    pub const PLAN: u8 = 2;
    pub const SOURCE: u8 = 3;
    pub const DATA: u8 = 4;
    pub const END: u8 = 5;
    pub const DONE: u8 = 6;
    pub const GO: u8 = 7;
    pub const ABORT: u8 = 8;
    pub const RESULT: u8 = 9;
    pub const METRICS: u8 = 10;
    pub const FINISHED: u8 = 11;
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

fn write_frame(w: &mut impl Write, kind: u8, payload: &[u8]) -> Result<()> {
    w.write_all(&[kind]).map_err(io_err)?;
    w.write_all(&(payload.len() as u64).to_le_bytes()).map_err(io_err)?;
    w.write_all(payload).map_err(io_err)?;
    w.flush().map_err(io_err)
}

fn read_frame(r: &mut impl Read) -> Result<(u8, Vec<u8>)> {
    let mut head = [0u8; 9];
    r.read_exact(&mut head).map_err(io_err)?;
    let len = u64::from_le_bytes(head[1..].try_into().expect("8 bytes")) as usize;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload).map_err(io_err)?;
    Ok((head[0], payload))
}

fn with_ids(ids: &[u64], rest: &[u8]) -> Vec<u8> {
    let mut v: Vec<u8> = ids.iter().flat_map(|i| i.to_le_bytes()).collect();
    v.extend_from_slice(rest);
    v
}

fn split_ids<const N: usize>(payload: &[u8]) -> Result<([u64; N], &[u8])> {
    if payload.len() < 8 * N {
        return Err(Error::Format("short frame".into()));
    }
    let mut ids = [0u64; N];
    for (i, id) in ids.iter_mut().enumerate() {
        *id = u64::from_le_bytes(payload[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    }
    Ok((ids, &payload[8 * N..]))
}

fn decode_batch(node: &ExecNode, bytes: &[u8]) -> Result<Tuples> {
    let (arity, ty, tuples) = decode_tuples(bytes)?;
    if arity != node.key_arity || ty != node.array_type {
        return Err(Error::Format(format!("batch of arity {arity} and type {ty:?} does not match its node")));
    }
    Ok(tuples)
}

fn encode_batch(node: &ExecNode, tuples: &[(Key, DenseArray)]) -> Vec<u8> {
    encode_tuples(node.key_arity, &node.array_type, tuples)
}

struct Children(Vec<Child>);

impl Drop for Children {
    fn drop(&mut self) {
        for c in &mut self.0 {
            if matches!(c.try_wait(), Ok(None)) {
                let _ = c.kill();
            }
            let _ = c.wait();
        }
    }
}

const CONNECT_TIMEOUT: Duration = Duration::from_secs(30);

fn run_processes(
    exec: &ExecPlan,
    config: &RuntimeConfig,
    sources: Vec<Option<PhysicalRelation<DenseArray>>>,
) -> Result<(Vec<PhysicalRelation<DenseArray>>, Vec<Summary>)> {
    let s = config.sites;
    let exe = match &config.worker_exe {
        Some(p) => p.clone(),
        None => std::env::current_exe().map_err(io_err)?,
    };
    let listener = TcpListener::bind(("127.0.0.1", config.port_base)).map_err(io_err)?;
    let addr = listener.local_addr().map_err(io_err)?;
    let mut children = Children(Vec::with_capacity(s));
    for site in 0..s {
        let child = Command::new(&exe)
            .args(["worker", "--coordinator", &addr.to_string(), "--site", &site.to_string()])
            .args(["--batch", &config.batch.to_string()])
            .stdin(Stdio::null())
            .spawn()
            .map_err(|e| Error::Execution { node: 0, site, msg: format!("cannot start worker {}: {e}", exe.display()) })?;
        children.0.push(child);
    }

    // Accept every worker and learn its site from the hello frame.
    listener.set_nonblocking(true).map_err(io_err)?;
    let deadline = Instant::now() + CONNECT_TIMEOUT;
    let mut streams: Vec<Option<TcpStream>> = (0..s).map(|_| None).collect();
    let mut connected = 0;
    while connected < s {
        match listener.accept() {
            Ok((mut stream, _)) => {
                stream.set_nonblocking(false).map_err(io_err)?;
                let (kind, payload) = read_frame(&mut stream)?;
                let ([site], _) = split_ids::<1>(&payload)?;
                let site = site as usize;
                if kind != wire::HELLO || site >= s || streams[site].is_some() {
                    return Err(Error::Format(format!("unexpected hello from site {site}")));
                }
                stream.set_nodelay(true).map_err(io_err)?;
                streams[site] = Some(stream);
                connected += 1;
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                for (site, c) in children.0.iter_mut().enumerate() {
                    if let Ok(Some(status)) = c.try_wait() {
                        return Err(Error::Execution { node: 0, site, msg: format!("worker exited early with {status}") });
                    }
                }
                if Instant::now() > deadline {
                    return Err(Error::Execution { node: 0, site: 0, msg: "workers did not connect in time".into() });
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(io_err(e)),
        }
    }
    let streams: Vec<TcpStream> = streams.into_iter().map(|s| s.expect("all connected")).collect();

    // One reader thread per worker feeds a single inbox.
    let (inbox_tx, inbox) = unbounded::<(usize, Result<(u8, Vec<u8>)>)>();
    let mut writers = Vec::with_capacity(s);
    for (site, stream) in streams.iter().enumerate() {
        let mut reader = BufReader::new(stream.try_clone().map_err(io_err)?);
        let tx = inbox_tx.clone();
        std::thread::spawn(move || loop {
            let frame = read_frame(&mut reader);
            let stop = frame.is_err() || matches!(frame, Ok((wire::FINISHED, _)));
            if tx.send((site, frame)).is_err() || stop {
                break;
            }
        });
        writers.push(BufWriter::new(stream.try_clone().map_err(io_err)?));
    }
    drop(inbox_tx);

    let plan_json = serde_json::to_vec(&exec.to_json()).map_err(|e| Error::Format(e.to_string()))?;
    for w in writers.iter_mut() {
        write_frame(w, wire::PLAN, &plan_json)?;
    }
    for (id, src) in sources.iter().enumerate() {
        if let Some(rel) = src {
            for (site, w) in writers.iter_mut().enumerate() {
                write_frame(w, wire::SOURCE, &with_ids(&[id as u64], &encode_batch(&exec.nodes[id], &rel.sites[site])))?;
            }
        }
    }

    let abort = |writers: &mut Vec<BufWriter<TcpStream>>| {
        for w in writers.iter_mut() {
            let _ = write_frame(w, wire::ABORT, &[]);
        }
    };
    for id in 0..exec.nodes.len() {
        let mut done = 0;
        let mut failure: Option<Error> = None;
        while done < s {
            let (from, frame) = inbox.recv().map_err(|_| Error::Execution { node: id, site: 0, msg: "lost all workers".into() })?;
            let (kind, payload) = match frame {
                Ok(f) => f,
                Err(e) => {
                    abort(&mut writers);
                    return Err(Error::Execution { node: id, site: from, msg: format!("worker connection failed: {e}") });
                }
            };
            match kind {
                wire::DATA => {
                    let ([node, dest], rest) = split_ids::<2>(&payload)?;
                    let w = writers.get_mut(dest as usize).ok_or_else(|| Error::Format("bad destination".into()))?;
                    write_frame(w, wire::DATA, &with_ids(&[node, from as u64], rest))?;
                }
                wire::END => {
                    let ([node], _) = split_ids::<1>(&payload)?;
                    for w in writers.iter_mut() {
                        write_frame(w, wire::END, &with_ids(&[node, from as u64], &[]))?;
                    }
                }
                wire::DONE => {
                    let ([node], msg) = split_ids::<1>(&payload)?;
                    if node as usize != id {
                        return Err(Error::Format(format!("site {from} finished node {node} during node {id}")));
                    }
                    if !msg.is_empty() && failure.is_none() {
                        failure = Some(Error::Execution { node: id, site: from, msg: String::from_utf8_lossy(msg).into_owned() });
                    }
                    done += 1;
                }
                other => return Err(Error::Format(format!("unexpected frame {other} from site {from}"))),
            }
        }
        if let Some(e) = failure {
            abort(&mut writers);
            return Err(e);
        }
        for w in writers.iter_mut() {
            write_frame(w, wire::GO, &with_ids(&[id as u64], &[]))?;
        }
    }

    // Collect root slices and node summaries.
    let mut per_site_roots: Vec<Vec<Tuples>> = vec![vec![Vec::new(); exec.nodes.len()]; s];
    let mut sums: Vec<Vec<Summary>> = vec![Vec::new(); s];
    let mut finished = 0;
    while finished < s {
        let (from, frame) = inbox.recv().map_err(|_| Error::Execution { node: 0, site: 0, msg: "lost all workers".into() })?;
        let (kind, payload) = frame?;
        match kind {
            wire::RESULT => {
                let ([node], rest) = split_ids::<1>(&payload)?;
                let node = node as usize;
                let n = exec.nodes.get(node).ok_or_else(|| Error::Format("bad result node".into()))?;
                per_site_roots[from][node] = decode_batch(n, rest)?;
            }
            wire::METRICS => {
                let v: Value = serde_json::from_slice(&payload).map_err(|e| Error::Format(e.to_string()))?;
                let list = v.as_array().ok_or_else(|| Error::Format("metrics must be a list".into()))?;
                sums[from] = list.iter().map(Summary::from_json).collect::<Result<_>>()?;
            }
            wire::FINISHED => finished += 1,
            other => return Err(Error::Format(format!("unexpected frame {other} from site {from}"))),
        }
    }
    for (site, c) in children.0.iter_mut().enumerate() {
        let status = c.wait().map_err(io_err)?;
        if !status.success() {
            return Err(Error::Execution { node: 0, site, msg: format!("worker exited with {status}") });
        }
    }
    Ok((roots_from(exec, per_site_roots), merge_summaries(sums, exec.nodes.len())))
}

/// Entry point of a worker process: connects to the coordinator, runs every
/// stage for `site`, reports results and exits.
pub fn worker_main(coordinator: &str, site: usize, batch: usize) -> Result<()> {
    let stream = TcpStream::connect(coordinator).map_err(io_err)?;
    stream.set_nodelay(true).map_err(io_err)?;
    let mut reader = BufReader::new(stream.try_clone().map_err(io_err)?);
    let mut writer = BufWriter::new(stream);
    write_frame(&mut writer, wire::HELLO, &with_ids(&[site as u64], &[]))?;

    let (kind, payload) = read_frame(&mut reader)?;
    if kind != wire::PLAN {
        return Err(Error::Format(format!("expected a plan, got frame {kind}")));
    }
    let v: Value = serde_json::from_slice(&payload).map_err(|e| Error::Format(e.to_string()))?;
    let exec = ExecPlan::from_json(&v)?;
    let reg = KernelRegistry::global();
    let s = exec.sites;
    let batch = batch.max(1);

    let mut store: Vec<Tuples> = Vec::with_capacity(exec.nodes.len());
    let mut sources: Vec<Option<Tuples>> = vec![None; exec.nodes.len()];
    for (id, n) in exec.nodes.iter().enumerate() {
        if matches!(n.op, IaOp::Source { .. }) {
            let (kind, payload) = read_frame(&mut reader)?;
            let ([node], rest) = split_ids::<1>(&payload)?;
            if kind != wire::SOURCE || node as usize != id {
                return Err(Error::Format(format!("expected source for node {id}")));
            }
            sources[id] = Some(decode_batch(n, rest)?);
        }
    }

    let mut sums = Vec::with_capacity(exec.nodes.len());
    for (id, node) in exec.nodes.iter().enumerate() {
        let step: Result<(Tuples, u64)> = match &node.op {
            IaOp::Source { .. } => Ok((sources[id].take().unwrap_or_default(), 0)),
            IaOp::Bcast | IaOp::Shuf { .. } => {
                let outgoing = route(node, site, &store[node.inputs[0]], s);
                let sent: u64 = outgoing.iter().map(floats).sum();
                for (dest, tuples) in outgoing.iter().enumerate() {
                    for chunk in tuples.chunks(batch) {
                        write_frame(&mut writer, wire::DATA, &with_ids(&[id as u64, dest as u64], &encode_batch(node, chunk)))?;
                    }
                }
                write_frame(&mut writer, wire::END, &with_ids(&[id as u64], &[]))?;
                let mut by_origin: Vec<Tuples> = vec![Vec::new(); s];
                let mut ended = 0;
                let mut bad: Option<Error> = None;
                while ended < s {
                    let (kind, payload) = read_frame(&mut reader)?;
                    match kind {
                        wire::DATA => {
                            let ([_, origin], rest) = split_ids::<2>(&payload)?;
                            match decode_batch(node, rest) {
                                Ok(t) => by_origin[origin as usize].extend(t),
                                Err(e) => bad = bad.or(Some(e)),
                            }
                        }
                        wire::END => ended += 1,
                        wire::ABORT => return Ok(()),
                        other => return Err(Error::Format(format!("unexpected frame {other} during exchange"))),
                    }
                }
                match bad {
                    Some(e) => Err(e),
                    None => assemble(by_origin, dedupes(node)).map(|t| (t, sent)),
                }
            }
            op => {
                let ins: Vec<&[(Key, DenseArray)]> = node.inputs.iter().map(|&i| store[i].as_slice()).collect();
                local_step(reg, op, &ins).map(|t| (t, 0))
            }
        };
        let status = match step {
            Ok((tuples, sent)) => {
                sums.push(Summary::of(node.key_arity, &tuples, sent));
                store.push(tuples);
                String::new()
            }
            Err(e) => {
                store.push(Vec::new());
                e.to_string()
            }
        };
        write_frame(&mut writer, wire::DONE, &with_ids(&[id as u64], status.as_bytes()))?;
        let (kind, _) = read_frame(&mut reader)?;
        match kind {
            wire::GO => {}
            wire::ABORT => return Ok(()),
            other => return Err(Error::Format(format!("expected go, got frame {other}"))),
        }
    }

    for &r in &exec.roots {
        write_frame(&mut writer, wire::RESULT, &with_ids(&[r as u64], &encode_batch(&exec.nodes[r], &store[r])))?;
    }
    let metrics = Value::Array(sums.iter().map(Summary::to_json).collect());
    write_frame(&mut writer, wire::METRICS, &serde_json::to_vec(&metrics).map_err(|e| Error::Format(e.to_string()))?)?;
    write_frame(&mut writer, wire::FINISHED, &[])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ia::{execute_reference, PartitionSpec};
    use crate::keyexpr::{Expr, KeyFn, Pred};
    use crate::model::blockify;
    use crate::ops::{Aggregator, ArrayMap, Combine, KeyMap};
    use crate::plan;

    fn catalog(part: PartitionSpec) -> Catalog {
        let vals: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| (i * 6 + j) as f64 - 17.0).collect()).collect();
        let m = DenseArray::from_rows(&vals).unwrap();
        let mut c = Catalog::new();
        c.add_relation("X", blockify(&m, 2, 2).unwrap(), part.clone()).unwrap();
        c.add_relation("Y", blockify(&m, 2, 2).unwrap(), part).unwrap();
        c
    }

    fn bmm() -> IaPlan {
        IaPlan::new(plan::agg(
            &[0, 2],
            Aggregator::op("matAdd"),
            plan::shuf(&[0, 2], plan::join(&[1], &[0], Combine::op("matMul"), plan::bcast(plan::source("X")), plan::source("Y"))),
        ))
    }

    fn check_against_reference(p: &IaPlan, c: &Catalog, s: usize, batch: usize) {
        let reg = KernelRegistry::global();
        let mut cfg = RuntimeConfig::threads(s);
        cfg.batch = batch;
        cfg.channel_capacity = 1;
        let got = execute(p, c, reg, &cfg).unwrap();
        let exec = prepare(p, c, reg, s).unwrap();
        let want = execute_reference(&exec, reg, &dense_source(c, s)).unwrap();
        for (r, rel) in exec.roots.iter().zip(&got.roots) {
            let w = &want.outputs[*r];
            assert_eq!(rel.sites.len(), w.sites.len());
            for (a, b) in rel.sites.iter().zip(&w.sites) {
                assert_eq!(a.len(), b.len());
                for ((ka, va), (kb, vb)) in a.iter().zip(b) {
                    assert_eq!(ka, kb);
                    assert!(va.bit_eq(vb));
                }
            }
        }
        assert_eq!(measure_transfers(&got.trace).0, want.transfers);
    }

    #[test]
    fn threads_match_reference_bit_exactly() {
        for s in 1..=4 {
            for batch in [1, 3, 256] {
                check_against_reference(&bmm(), &catalog(PartitionSpec::None), s, batch);
                check_against_reference(&bmm(), &catalog(PartitionSpec::All), s, batch);
            }
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let reg = KernelRegistry::global();
        let c = catalog(PartitionSpec::Dims(vec![0]));
        let a = execute(&bmm(), &c, reg, &RuntimeConfig::threads(3)).unwrap();
        let b = execute(&bmm(), &c, reg, &RuntimeConfig::threads(3)).unwrap();
        assert_eq!(a.trace.to_csv(), b.trace.to_csv());
        assert_eq!(crate::format::write_physical(&a.roots[0]), crate::format::write_physical(&b.roots[0]));
    }

    #[test]
    fn local_plan_moves_nothing() {
        let reg = KernelRegistry::global();
        let p = IaPlan::new(plan::filter(Pred::is_eq(), plan::source("X")));
        let r = execute(&p, &catalog(PartitionSpec::None), reg, &RuntimeConfig::threads(2)).unwrap();
        assert_eq!(measure_transfers(&r.trace).1, 0);
        assert_eq!(r.trace.nodes[1].tuples, 3);
    }

    #[test]
    fn validate_mode_reports_broken_roots() {
        let reg = KernelRegistry::global();
        // Every tuple rekeyed to <0>: the root is not unique.
        let collapse = KeyMap::Func(KeyFn::new(vec![Expr::c(0)]));
        let p = IaPlan::new(plan::map(collapse, ArrayMap::identity(), plan::source("X")));
        let c = catalog(PartitionSpec::None);
        let mut cfg = RuntimeConfig::threads(2);
        assert!(execute(&p, &c, reg, &cfg).is_ok());
        cfg.validate = true;
        match execute(&p, &c, reg, &cfg) {
            Err(Error::Execution { node, msg, .. }) => {
                assert_eq!(node, 1);
                assert!(msg.contains("uniqueness"), "{msg}");
            }
            other => panic!("expected a constraint failure, got {other:?}"),
        }
    }

    #[test]
    fn trace_csv_shape() {
        let reg = KernelRegistry::global();
        let r = execute(&bmm(), &catalog(PartitionSpec::None), reg, &RuntimeConfig::threads(2)).unwrap();
        let csv = r.trace.to_csv();
        assert!(csv.starts_with("node,operator,frontier,tuples,transfer\n0,\"Source(X)\",3x3,9,0\n"));
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn zero_sites_is_rejected() {
        let reg = KernelRegistry::global();
        assert!(execute(&bmm(), &catalog(PartitionSpec::None), reg, &RuntimeConfig::threads(0)).is_err());
    }
}
