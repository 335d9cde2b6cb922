//! Packetized links, multi-segment paths and a simplified reliable
//! transport whose retransmission endpoint is configurable.
//!
//! The transport is deliberately free of congestion control and window
//! dynamics: packets are lost independently per lossy link, and a loss
//! anywhere on the path triggers a re-send from the session's
//! retransmission endpoint, re-traversing only the sub-path from that
//! endpoint to the destination. The endpoint is modeled as a buffer point
//! that holds the whole stream, so segments upstream of it never carry
//! retransmission bytes. Loss detection is modeled as a fixed timeout: a
//! packet lost at (would-be) arrival time `t` departs the endpoint again at
//! `t + rto`. Loss draws are keyed by `(flow, packet, link, attempt)`, so
//! outcomes are independent of event interleaving.
//!
//! Every node is store-and-forward: a packet is fully serialized on a link
//! (`payload_bytes * 8 / rate`), then propagates for the link latency. A
//! link with infinite rate serializes in zero time, which is how the
//! evolved-base-station variant removes the fronthaul.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::metrics::keys;
use crate::sim::{EventTag, SimTime, Simulation};
use crate::world::World;

pub const DEFAULT_MTU_PAYLOAD: u64 = 1500;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 16;

const LOSS_DOMAIN: u64 = 0x4c4f_5353; // "LOSS"

pub type Sim = Simulation<World>;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub enum NodeKind {
    Device,
    BaseStation,
    EdgeCloudSite,
    CentralCloud,
    InternetServer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
pub struct Node {
    pub label: String,
    pub kind: NodeKind,
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub enum Segment {
    AccessUp,
    AccessDown,
    Fronthaul,
    Backhaul,
    IntraCloud,
}

impl Segment {
    pub fn first_tx_key(self) -> &'static str {
        match self {
            Segment::AccessUp => keys::BYTES_ACCESS_UP_FIRST_TX,
            Segment::AccessDown => keys::BYTES_ACCESS_DOWN_FIRST_TX,
            Segment::Fronthaul => keys::BYTES_FRONTHAUL_FIRST_TX,
            Segment::Backhaul => keys::BYTES_BACKHAUL_FIRST_TX,
            Segment::IntraCloud => keys::BYTES_INTRA_CLOUD_FIRST_TX,
        }
    }

    pub fn retransmit_key(self) -> &'static str {
        match self {
            Segment::AccessUp => keys::BYTES_ACCESS_UP_RETRANSMIT,
            Segment::AccessDown => keys::BYTES_ACCESS_DOWN_RETRANSMIT,
            Segment::Fronthaul => keys::BYTES_FRONTHAUL_RETRANSMIT,
            Segment::Backhaul => keys::BYTES_BACKHAUL_RETRANSMIT,
            Segment::IntraCloud => keys::BYTES_INTRA_CLOUD_RETRANSMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LinkId(pub usize);

/// A directed link. `rate_bps` may be `f64::INFINITY` for zero
/// serialization time.
#[derive(Debug, Clone)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    pub rate_bps: f64,
    pub latency_s: f64,
    pub loss_prob: f64,
    pub segment: Segment,
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("duplicate node label `{0}`")]
    DuplicateLabel(String),
    #[error("link rate must be > 0, got {0}")]
    BadRate(f64),
    #[error("link latency must be >= 0 and finite, got {0}")]
    BadLatency(f64),
    #[error("loss_prob must be in [0, 1), got {0}")]
    BadLossProb(f64),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("path is empty or not contiguous")]
    BadPath,
    #[error("retransmission endpoint is not on the path before the destination")]
    BadRetransmitPoint,
    #[error("bytes_total must be > 0")]
    EmptySession,
    #[error("mtu_payload must be > 0")]
    BadMtu,
    #[error("pacing rate must be > 0, got {0}")]
    BadPacing(f64),
    #[error("packet {packet} of flow {flow} exceeded {max_attempts} retransmissions")]
    SessionFailed {
        flow: u64,
        packet: u64,
        max_attempts: u32,
    },
}

/// Nodes, directed links and per-link transmitter state.
#[derive(Debug, Clone, Default)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    next_free: Vec<SimTime>,
}

impl Topology {
    pub fn new() -> Self {
        Topology::default()
    }

    pub fn add_node(&mut self, label: &str, kind: NodeKind) -> Result<NodeId, NetError> {
        if self.nodes.iter().any(|n| n.label == label) {
            return Err(NetError::DuplicateLabel(label.to_string()));
        }
        self.nodes.push(Node {
            label: label.to_string(),
            kind,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn add_link(
        &mut self,
        from: NodeId,
        to: NodeId,
        rate_bps: f64,
        latency_s: f64,
        loss_prob: f64,
        segment: Segment,
    ) -> Result<LinkId, NetError> {
        if !(rate_bps > 0.0) {
            return Err(NetError::BadRate(rate_bps));
        }
        if !(latency_s >= 0.0) || !latency_s.is_finite() {
            return Err(NetError::BadLatency(latency_s));
        }
        if !(0.0..1.0).contains(&loss_prob) {
            return Err(NetError::BadLossProb(loss_prob));
        }
        self.links.push(Link {
            from,
            to,
            rate_bps,
            latency_s,
            loss_prob,
            segment,
        });
        self.next_free.push(SimTime::ZERO);
        Ok(LinkId(self.links.len() - 1))
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.0]
    }

    pub fn node_id(&self, label: &str) -> Result<NodeId, NetError> {
        self.nodes
            .iter()
            .position(|n| n.label == label)
            .map(NodeId)
            .ok_or_else(|| NetError::UnknownNode(label.to_string()))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &Node)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn set_link_rate(&mut self, id: LinkId, rate_bps: f64) -> Result<(), NetError> {
        if !(rate_bps > 0.0) {
            return Err(NetError::BadRate(rate_bps));
        }
        self.links[id.0].rate_bps = rate_bps;
        Ok(())
    }

    /// Zero out fronthaul delay and serialization (the evolved-BS variant:
    /// the edge cloud merges into the base station).
    pub fn zero_fronthaul(&mut self) {
        for link in &mut self.links {
            if link.segment == Segment::Fronthaul {
                link.latency_s = 0.0;
                link.rate_bps = f64::INFINITY;
            }
        }
    }

    /// Shortest path by hop count, exploring links in id order so the
    /// result is deterministic.
    pub fn shortest_path(&self, src: NodeId, dst: NodeId) -> Option<Vec<LinkId>> {
        if src == dst {
            return Some(Vec::new());
        }
        let mut prev: Vec<Option<LinkId>> = vec![None; self.nodes.len()];
        let mut visited = vec![false; self.nodes.len()];
        visited[src.0] = true;
        let mut frontier = vec![src];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &node in &frontier {
                for (i, link) in self.links.iter().enumerate() {
                    if link.from == node && !visited[link.to.0] && link.from != link.to {
                        visited[link.to.0] = true;
                        prev[link.to.0] = Some(LinkId(i));
                        if link.to == dst {
                            let mut path = Vec::new();
                            let mut cur = dst;
                            while cur != src {
                                let l = prev[cur.0].expect("path chain");
                                path.push(l);
                                cur = self.links[l.0].from;
                            }
                            path.reverse();
                            return Some(path);
                        }
                        next.push(link.to);
                    }
                }
            }
            frontier = next;
        }
        None
    }

    /// Validate that `path` is contiguous and return (src, dst).
    fn endpoints(&self, path: &[LinkId]) -> Result<(NodeId, NodeId), NetError> {
        if path.is_empty() {
            return Err(NetError::BadPath);
        }
        for pair in path.windows(2) {
            if self.links[pair[0].0].to != self.links[pair[1].0].from {
                return Err(NetError::BadPath);
            }
        }
        Ok((
            self.links[path[0].0].from,
            self.links[path[path.len() - 1].0].to,
        ))
    }
}

/// Round-trip time of a path: twice the sum of one-way link latencies.
pub fn path_rtt(topology: &Topology, path: &[LinkId]) -> f64 {
    2.0 * path
        .iter()
        .map(|l| topology.link(*l).latency_s)
        .sum::<f64>()
}

/// A reliable byte stream from the head of `path` to its tail.
/// `retransmit_from` must be a node on the path other than the destination.
#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub flow_id: u64,
    pub path: Vec<LinkId>,
    pub retransmit_from: NodeId,
    pub bytes_total: u64,
    pub mtu_payload: u64,
    /// Retransmission timeout; defaults to 2 x rtt(retransmit_from -> dst).
    pub rto_s: Option<f64>,
    pub max_attempts: u32,
    /// Source pacing for first transmissions, e.g. a stream's bitrate.
    pub pacing_bps: Option<f64>,
}

impl SessionSpec {
    pub fn bulk(
        flow_id: u64,
        path: Vec<LinkId>,
        retransmit_from: NodeId,
        bytes_total: u64,
    ) -> Self {
        SessionSpec {
            flow_id,
            path,
            retransmit_from,
            bytes_total,
            mtu_payload: DEFAULT_MTU_PAYLOAD,
            rto_s: None,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            pacing_bps: None,
        }
    }
}

/// Outcome of one finished session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransferStats {
    pub completion: f64,
    pub delivered_bytes: u64,
    pub segment_bytes: BTreeMap<Segment, u64>,
    pub segment_retransmit_bytes: BTreeMap<Segment, u64>,
}

impl TransferStats {
    pub fn first_tx(&self, segment: Segment) -> u64 {
        self.segment_bytes.get(&segment).copied().unwrap_or(0)
    }

    pub fn retransmit(&self, segment: Segment) -> u64 {
        self.segment_retransmit_bytes
            .get(&segment)
            .copied()
            .unwrap_or(0)
    }
}

type TransferCallback = Box<dyn FnOnce(&mut Sim, Result<TransferStats, NetError>)>;

pub(crate) struct TransferState {
    path: Vec<LinkId>,
    retransmit_hop: usize,
    bytes_total: u64,
    mtu: u64,
    rto_s: f64,
    max_attempts: u32,
    flow_id: u64,
    remaining: u64,
    failed: bool,
    stats: TransferStats,
    on_done: Option<TransferCallback>,
}

#[derive(Default)]
pub(crate) struct TransferTable {
    jobs: Vec<Option<TransferState>>,
}

impl TransferTable {
    fn insert(&mut self, state: TransferState) -> usize {
        self.jobs.push(Some(state));
        self.jobs.len() - 1
    }
}

fn payload_of(state: &TransferState, seq: u64) -> u64 {
    let offset = seq * state.mtu;
    state.mtu.min(state.bytes_total - offset)
}

/// Start a reliable transfer inside a running simulation. `on_done` fires at
/// the completion (or failure) instant.
pub fn start_transfer(
    sim: &mut Sim,
    spec: SessionSpec,
    on_done: impl FnOnce(&mut Sim, Result<TransferStats, NetError>) + 'static,
) -> Result<(), NetError> {
    sim.world.topology.endpoints(&spec.path)?;
    if spec.mtu_payload == 0 {
        return Err(NetError::BadMtu);
    }
    if let Some(rate) = spec.pacing_bps {
        if !(rate > 0.0) {
            return Err(NetError::BadPacing(rate));
        }
    }
    // The endpoint must transmit on some hop, which rules out the bare
    // destination (nothing departs from it).
    let retransmit_hop = spec
        .path
        .iter()
        .position(|l| sim.world.topology.link(*l).from == spec.retransmit_from)
        .ok_or(NetError::BadRetransmitPoint)?;
    let rto_s = spec
        .rto_s
        .unwrap_or_else(|| 2.0 * path_rtt(&sim.world.topology, &spec.path[retransmit_hop..]));

    // Zero-byte sessions (control signals, empty profiles) deliver after the
    // path latency with no serialization, loss or byte accounting.
    if spec.bytes_total == 0 {
        let latency: f64 = spec
            .path
            .iter()
            .map(|l| sim.world.topology.link(*l).latency_s)
            .sum();
        let at = sim.clock() + latency;
        let stats = TransferStats {
            completion: at.secs(),
            ..TransferStats::default()
        };
        sim.schedule(
            at,
            EventTag::with("xfer.empty", spec.flow_id, 0),
            move |s| on_done(s, Ok(stats)),
        )
        .expect("future event");
        return Ok(());
    }

    let n_packets = spec.bytes_total.div_ceil(spec.mtu_payload);
    let state = TransferState {
        path: spec.path.clone(),
        retransmit_hop,
        bytes_total: spec.bytes_total,
        mtu: spec.mtu_payload,
        rto_s,
        max_attempts: spec.max_attempts,
        flow_id: spec.flow_id,
        remaining: n_packets,
        failed: false,
        stats: TransferStats::default(),
        on_done: Some(Box::new(on_done)),
    };
    let tid = sim.world.transfers.insert(state);

    let now = sim.clock();
    for seq in 0..n_packets {
        let at = match spec.pacing_bps {
            // Packet seq departs once the bytes before it have been produced.
            Some(rate) => now + (seq * spec.mtu_payload * 8) as f64 / rate,
            None => now,
        };
        sim.schedule(
            at,
            EventTag::with("pkt.depart", spec.flow_id, seq),
            move |s| depart(s, tid, seq, 0, 0),
        )
        .expect("future event");
    }
    Ok(())
}

/// Packet `seq` of transfer `tid` enters `path[hop]` on its `attempt`-th try.
fn depart(sim: &mut Sim, tid: usize, seq: u64, hop: usize, attempt: u32) {
    let now = sim.clock();
    let (link_id, payload, is_last_hop, flow, max_attempts, retx_hop, rto) = {
        let Some(state) = sim.world.transfers.jobs[tid].as_ref() else {
            return;
        };
        if state.failed {
            return;
        }
        (
            state.path[hop],
            payload_of(state, seq),
            hop + 1 == state.path.len(),
            state.flow_id,
            state.max_attempts,
            state.retransmit_hop,
            state.rto_s,
        )
    };
    let link = sim.world.topology.link(link_id).clone();

    let start = sim.world.topology.next_free[link_id.0].max(now);
    let ser = if link.rate_bps.is_finite() {
        (payload * 8) as f64 / link.rate_bps
    } else {
        0.0
    };
    let done_tx = start + ser;
    sim.world.topology.next_free[link_id.0] = done_tx;
    let arrival = done_tx + link.latency_s;

    // The transmitter consumed the medium whether or not the packet survives.
    {
        let state = sim.world.transfers.jobs[tid].as_mut().expect("live job");
        let map = if attempt == 0 {
            &mut state.stats.segment_bytes
        } else {
            &mut state.stats.segment_retransmit_bytes
        };
        *map.entry(link.segment).or_insert(0) += payload;
    }
    let key = if attempt == 0 {
        link.segment.first_tx_key()
    } else {
        link.segment.retransmit_key()
    };
    sim.world.metrics.add_bytes(key, payload);

    let lost = link.loss_prob > 0.0
        && sim.indexed_uniform(LOSS_DOMAIN, &[flow, seq, link_id.0 as u64, attempt as u64])
            < link.loss_prob;

    if lost {
        if attempt >= max_attempts {
            let done = {
                let state = sim.world.transfers.jobs[tid].as_mut().expect("live job");
                state.failed = true;
                state.on_done.take()
            };
            if let Some(done) = done {
                let err = NetError::SessionFailed {
                    flow,
                    packet: seq,
                    max_attempts,
                };
                sim.schedule(arrival, EventTag::with("xfer.fail", flow, seq), move |s| {
                    done(s, Err(err))
                })
                .expect("future event");
            }
        } else {
            sim.schedule(
                arrival + rto,
                EventTag::with("pkt.retx", flow, seq),
                move |s| depart(s, tid, seq, retx_hop, attempt + 1),
            )
            .expect("future event");
        }
        return;
    }

    if is_last_hop {
        sim.schedule(
            arrival,
            EventTag::with("pkt.deliver", flow, seq),
            move |s| deliver(s, tid, seq),
        )
        .expect("future event");
    } else {
        sim.schedule(arrival, EventTag::with("pkt.fwd", flow, seq), move |s| {
            depart(s, tid, seq, hop + 1, attempt)
        })
        .expect("future event");
    }
}

fn deliver(sim: &mut Sim, tid: usize, seq: u64) {
    let now = sim.clock();
    let Some(state) = sim.world.transfers.jobs[tid].as_mut() else {
        return;
    };
    if state.failed {
        return;
    }
    let payload = payload_of(state, seq);
    state.stats.delivered_bytes += payload;
    state.remaining -= 1;
    if state.remaining == 0 {
        // Deliveries run in time order, so the one that zeroes the counter
        // carries the completion instant.
        let mut state = sim.world.transfers.jobs[tid].take().expect("live job");
        state.stats.completion = now.secs();
        if let Some(done) = state.on_done.take() {
            done(sim, Ok(state.stats));
        }
    }
}

/// Run one session to completion in a fresh single-purpose simulation.
/// This is the unit-level entry point; scenarios use [`start_transfer`]
/// inside their own runs.
pub fn transfer(
    topology: Topology,
    spec: SessionSpec,
    seed: u64,
) -> Result<TransferStats, NetError> {
    if spec.bytes_total == 0 {
        return Err(NetError::EmptySession);
    }
    let mut sim = Simulation::new(seed, World::bare(topology));
    let result: std::rc::Rc<std::cell::RefCell<Option<Result<TransferStats, NetError>>>> =
        std::rc::Rc::new(std::cell::RefCell::new(None));
    let slot = result.clone();
    start_transfer(&mut sim, spec, move |_s, outcome| {
        *slot.borrow_mut() = Some(outcome);
    })?;
    sim.run_to_completion();
    let outcome = result.borrow_mut().take();
    outcome.expect("transfer must resolve by queue exhaustion")
}
