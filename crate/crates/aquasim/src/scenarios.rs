//! Executable scenarios: clone-to-clone sharing against the D2D baseline,
//! clone-buffered streaming, MPTCP proxy aggregation, ABR decision
//! offloading, and the evolved-BS zero-fronthaul variant.
//!
//! Every scenario builds its own topology from per-segment link parameters,
//! runs one seeded simulation and leaves its observables in the run's
//! `MetricsReport`.

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use thiserror::Error;

use crate::clone::{
    cache_get, cache_put, spawn_clone, CloneError, ContentItem, SiteId, Tier, UserId,
};
use crate::controller::{
    allocate_from_snapshot, apply_plan, collect_snapshot, AllocError, Capacity, Objective,
};
use crate::metrics::{keys, MetricsReport};
use crate::net::{
    start_transfer, LinkId, NetError, NodeId, NodeKind, Segment, SessionSpec, Sim, Topology,
    DEFAULT_MTU_PAYLOAD,
};
use crate::offload::{decide, execute_offload, Choice, ComputeTask, OffloadError};
use crate::sim::{EventTag, Simulation};
use crate::world::World;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Clone(#[from] CloneError),
    #[error(transparent)]
    Offload(#[from] OffloadError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
}

/// One link's worth of parameters, applied per segment role.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentParams {
    #[serde(rename = "rate")]
    pub rate_bps: f64,
    #[serde(rename = "latency")]
    pub latency_s: f64,
    #[serde(rename = "loss", default)]
    pub loss_prob: f64,
}

/// Per-segment link parameters for the standard edge topology.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetParams {
    pub access_up: SegmentParams,
    pub access_down: SegmentParams,
    pub fronthaul: SegmentParams,
    pub backhaul: SegmentParams,
    pub intra_cloud: SegmentParams,
}

impl Default for NetParams {
    fn default() -> Self {
        let sp = |rate_bps, latency_s| SegmentParams {
            rate_bps,
            latency_s,
            loss_prob: 0.0,
        };
        NetParams {
            access_up: sp(2e7, 0.01),
            access_down: sp(2e7, 0.01),
            fronthaul: sp(1e9, 0.001),
            backhaul: sp(1e9, 0.005),
            intra_cloud: sp(1e10, 0.0005),
        }
    }
}

/// Clone sizing shared by all scenario spawns.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloneParams {
    pub cpu_capacity: f64,
    pub storage_capacity: u64,
    pub profile_size: u64,
    pub slot_capacity: usize,
    pub cpu_pool: f64,
}

impl Default for CloneParams {
    fn default() -> Self {
        CloneParams {
            cpu_capacity: 2e9,
            storage_capacity: 512_000_000,
            profile_size: 0,
            slot_capacity: 64,
            cpu_pool: 256e9,
        }
    }
}

/// The standard topology: devices behind one base station, an edge cloud
/// site (optionally two), the central cloud and an internet server.
pub struct EdgeNet {
    pub devices: Vec<NodeId>,
    pub access_up: Vec<LinkId>,
    pub access_down: Vec<LinkId>,
    pub bs: NodeId,
    pub edge: NodeId,
    pub fh_bs_edge: LinkId,
    pub fh_edge_bs: LinkId,
    pub central: NodeId,
    pub server: NodeId,
    pub intra: LinkId,
    pub site: SiteId,
    pub second_site: Option<SecondSite>,
}

pub struct SecondSite {
    pub edge2: NodeId,
    pub site2: SiteId,
    pub inter_site: LinkId,
    pub fh_edge2_bs: LinkId,
}

pub fn build_edge_world(
    n_devices: usize,
    net: &NetParams,
    clones: &CloneParams,
    distinct_sites: bool,
    scenario: &str,
    seed: u64,
) -> Result<(Sim, EdgeNet), ScenarioError> {
    let mut topo = Topology::new();
    let bs = topo.add_node("bs", NodeKind::BaseStation)?;
    let edge = topo.add_node("edge", NodeKind::EdgeCloudSite)?;
    let central = topo.add_node("central", NodeKind::CentralCloud)?;
    let server = topo.add_node("server", NodeKind::InternetServer)?;

    let mut devices = Vec::new();
    let mut access_up = Vec::new();
    let mut access_down = Vec::new();
    for i in 0..n_devices {
        let dev = topo.add_node(&format!("dev{i}"), NodeKind::Device)?;
        devices.push(dev);
        let au = &net.access_up;
        access_up.push(topo.add_link(
            dev,
            bs,
            au.rate_bps,
            au.latency_s,
            au.loss_prob,
            Segment::AccessUp,
        )?);
        let ad = &net.access_down;
        access_down.push(topo.add_link(
            bs,
            dev,
            ad.rate_bps,
            ad.latency_s,
            ad.loss_prob,
            Segment::AccessDown,
        )?);
    }

    let fh = &net.fronthaul;
    let fh_bs_edge = topo.add_link(
        bs,
        edge,
        fh.rate_bps,
        fh.latency_s,
        fh.loss_prob,
        Segment::Fronthaul,
    )?;
    let fh_edge_bs = topo.add_link(
        edge,
        bs,
        fh.rate_bps,
        fh.latency_s,
        fh.loss_prob,
        Segment::Fronthaul,
    )?;

    let bh = &net.backhaul;
    topo.add_link(
        central,
        edge,
        bh.rate_bps,
        bh.latency_s,
        bh.loss_prob,
        Segment::Backhaul,
    )?;
    topo.add_link(
        edge,
        central,
        bh.rate_bps,
        bh.latency_s,
        bh.loss_prob,
        Segment::Backhaul,
    )?;
    topo.add_link(
        server,
        edge,
        bh.rate_bps,
        bh.latency_s,
        bh.loss_prob,
        Segment::Backhaul,
    )?;

    let ic = &net.intra_cloud;
    let intra = topo.add_link(
        edge,
        edge,
        ic.rate_bps,
        ic.latency_s,
        ic.loss_prob,
        Segment::IntraCloud,
    )?;

    let second_site = if distinct_sites {
        let edge2 = topo.add_node("edge2", NodeKind::EdgeCloudSite)?;
        let inter_site = topo.add_link(
            edge,
            edge2,
            bh.rate_bps,
            bh.latency_s,
            bh.loss_prob,
            Segment::Backhaul,
        )?;
        let fh_edge2_bs = topo.add_link(
            edge2,
            bs,
            fh.rate_bps,
            fh.latency_s,
            fh.loss_prob,
            Segment::Fronthaul,
        )?;
        topo.add_link(
            central,
            edge2,
            bh.rate_bps,
            bh.latency_s,
            bh.loss_prob,
            Segment::Backhaul,
        )?;
        Some((edge2, inter_site, fh_edge2_bs))
    } else {
        None
    };

    let mut world = World::new(topo, scenario, seed);
    let site = world
        .clones
        .add_site(edge, clones.slot_capacity, clones.cpu_pool);
    let second_site = second_site.map(|(edge2, inter_site, fh_edge2_bs)| SecondSite {
        edge2,
        site2: world
            .clones
            .add_site(edge2, clones.slot_capacity, clones.cpu_pool),
        inter_site,
        fh_edge2_bs,
    });

    let sim = Simulation::new(seed, world);
    Ok((
        sim,
        EdgeNet {
            devices,
            access_up,
            access_down,
            bs,
            edge,
            fh_bs_edge,
            fh_edge_bs,
            central,
            server,
            intra,
            site,
            second_site,
        },
    ))
}

/// Shared failure slot: scenario callbacks stash the first error here.
type FailSlot = Rc<RefCell<Option<ScenarioError>>>;

fn fail(slot: &FailSlot, err: ScenarioError) {
    let mut cur = slot.borrow_mut();
    if cur.is_none() {
        *cur = Some(err);
    }
}

type Continuation = Box<dyn FnOnce(&mut Sim)>;

/// Countdown join: runs `then` once the last branch reports in.
struct Join {
    remaining: Cell<usize>,
    then: RefCell<Option<Continuation>>,
}

impl Join {
    fn new(count: usize, then: impl FnOnce(&mut Sim) + 'static) -> Rc<Join> {
        Rc::new(Join {
            remaining: Cell::new(count),
            then: RefCell::new(Some(Box::new(then))),
        })
    }

    fn arrive(self: &Rc<Self>, sim: &mut Sim) {
        let left = self.remaining.get() - 1;
        self.remaining.set(left);
        if left == 0 {
            if let Some(then) = self.then.borrow_mut().take() {
                then(sim);
            }
        }
    }
}

/// Spawn clones for `users` one after another, then continue.
fn spawn_all(
    sim: &mut Sim,
    users: Vec<(UserId, SiteId)>,
    clones: CloneParams,
    failure: FailSlot,
    then: impl FnOnce(&mut Sim) + 'static,
) {
    let mut queue = users;
    queue.reverse();
    spawn_next(sim, queue, clones, failure, Box::new(then));
}

fn spawn_next(
    sim: &mut Sim,
    mut queue: Vec<(UserId, SiteId)>,
    clones: CloneParams,
    failure: FailSlot,
    then: Continuation,
) {
    let Some((user, site)) = queue.pop() else {
        then(sim);
        return;
    };
    if sim.world.clones.clone_of(user, Tier::Persistent).is_none() {
        let central = sim.world.topology.node_id("central").expect("central node");
        if let Err(e) = sim.world.clones.create_persistent(
            user,
            central,
            clones.cpu_capacity,
            clones.storage_capacity,
        ) {
            fail(&failure, e.into());
            return;
        }
    }
    let sync_failure = failure.clone();
    let spawn = spawn_clone(
        sim,
        user,
        site,
        clones.profile_size,
        clones.cpu_capacity,
        move |s, outcome| match outcome {
            Ok(()) => spawn_next(s, queue, clones, failure.clone(), then),
            Err(e) => fail(&failure, e.into()),
        },
    );
    if let Err(e) = spawn {
        fail(&sync_failure, e.into());
    }
}

// ---------------------------------------------------------------------------
// C2C content sharing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C2cVariant {
    S1OneToOne,
    S2FanOutViaClones,
    S3DirectFromSenderClone,
    D2dBaseline,
}

#[derive(Debug, Clone)]
pub struct C2cSpec {
    pub variant: C2cVariant,
    pub n_receivers: usize,
    pub content: ContentItem,
    pub repeat_requests: usize,
    /// Receivers' clones at a second edge site; inter-clone transfers then
    /// ride the backhaul instead of the intra-site fabric.
    pub distinct_sites: bool,
}

impl C2cSpec {
    fn validate(&self) -> Result<(), ScenarioError> {
        if self.n_receivers < 1 {
            return Err(ScenarioError::InvalidSpec(
                "c2c.n_receivers must be >= 1".into(),
            ));
        }
        if self.repeat_requests < 1 {
            return Err(ScenarioError::InvalidSpec(
                "c2c.repeat_requests must be >= 1".into(),
            ));
        }
        if self.variant == C2cVariant::S1OneToOne && self.n_receivers != 1 {
            return Err(ScenarioError::InvalidSpec(
                "c2c.variant s1_one_to_one implies n_receivers = 1".into(),
            ));
        }
        Ok(())
    }

    fn scenario_name(&self) -> &'static str {
        match self.variant {
            C2cVariant::S1OneToOne => "c2c_s1",
            C2cVariant::S2FanOutViaClones => "c2c_s2",
            C2cVariant::S3DirectFromSenderClone => "c2c_s3",
            C2cVariant::D2dBaseline => "c2c_d2d",
        }
    }
}

struct C2cCtx {
    spec: C2cSpec,
    net: EdgeNet,
    failure: FailSlot,
}

pub fn run_c2c(
    spec: &C2cSpec,
    net_params: &NetParams,
    clone_params: &CloneParams,
    seed: u64,
) -> Result<MetricsReport, ScenarioError> {
    spec.validate()?;
    if spec.content.size > clone_params.storage_capacity {
        return Err(CloneError::ItemTooLarge {
            size: spec.content.size,
            capacity: clone_params.storage_capacity,
        }
        .into());
    }
    // Round j of an S1 run serves a fresh receiver; the others serve the
    // fixed receiver set each round.
    let receivers = match spec.variant {
        C2cVariant::S1OneToOne => spec.repeat_requests,
        _ => spec.n_receivers,
    };
    let (mut sim, net) = build_edge_world(
        1 + receivers,
        net_params,
        clone_params,
        spec.distinct_sites,
        spec.scenario_name(),
        seed,
    )?;

    let failure: FailSlot = Rc::default();
    let ctx = Rc::new(C2cCtx {
        spec: spec.clone(),
        net,
        failure: failure.clone(),
    });

    if spec.variant == C2cVariant::D2dBaseline {
        run_c2c_round(&mut sim, ctx, 0);
    } else {
        let mut to_spawn = vec![(UserId(0), ctx.net.site)];
        let receiver_site = ctx
            .net
            .second_site
            .as_ref()
            .map(|s| s.site2)
            .unwrap_or(ctx.net.site);
        for r in 0..receivers {
            to_spawn.push((UserId(1 + r as u32), receiver_site));
        }
        let ctx2 = ctx.clone();
        spawn_all(
            &mut sim,
            to_spawn,
            *clone_params,
            failure.clone(),
            move |s| run_c2c_round(s, ctx2, 0),
        );
    }

    sim.run_to_completion();
    let failed = failure.borrow_mut().take();
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(sim.world.metrics.clone())
}

fn c2c_round_receivers(ctx: &C2cCtx, round: usize) -> Vec<usize> {
    match ctx.spec.variant {
        C2cVariant::S1OneToOne => vec![round],
        _ => (0..ctx.spec.n_receivers).collect(),
    }
}

fn run_c2c_round(sim: &mut Sim, ctx: Rc<C2cCtx>, round: usize) {
    if round >= ctx.spec.repeat_requests {
        return;
    }
    if ctx.spec.variant == C2cVariant::D2dBaseline {
        // Direct device-to-device: the sender pushes the content over the
        // air once per receiver, every round.
        let targets = c2c_round_receivers(&ctx, round);
        let join = {
            let ctx = ctx.clone();
            Join::new(targets.len(), move |s| run_c2c_round(s, ctx, round + 1))
        };
        for r in targets {
            let path = vec![ctx.net.access_up[0], ctx.net.access_down[1 + r]];
            let src = ctx.net.devices[0];
            let flow = sim.world.next_flow_id();
            let spec = SessionSpec::bulk(flow, path, src, ctx.spec.content.size);
            let join = join.clone();
            let cb_ctx = ctx.clone();
            let started = start_transfer(sim, spec, move |s, outcome| {
                if let Err(e) = outcome {
                    fail(&cb_ctx.failure, e.into());
                    return;
                }
                join.arrive(s);
            });
            if let Err(e) = started {
                fail(&ctx.failure, e.into());
                return;
            }
        }
        return;
    }

    // Clone-assisted variants: make sure the sender's clone holds the
    // content (uploading once if it does not), then serve the round.
    let sender = UserId(0);
    let lookup = match cache_get(sim, sender, Tier::Transient, &ctx.spec.content.id) {
        Ok(v) => v,
        Err(e) => {
            fail(&ctx.failure, e.into());
            return;
        }
    };
    if lookup.is_some() {
        serve_round(sim, ctx, round);
        return;
    }
    let path = vec![ctx.net.access_up[0], ctx.net.fh_bs_edge];
    let src = ctx.net.devices[0];
    let flow = sim.world.next_flow_id();
    let spec = SessionSpec::bulk(flow, path, src, ctx.spec.content.size);
    let ctx2 = ctx.clone();
    let started = start_transfer(sim, spec, move |s, outcome| {
        if let Err(e) = outcome {
            fail(&ctx2.failure, e.into());
            return;
        }
        let item = ctx2.spec.content.clone();
        // The upload lands on the edge clone and is mirrored to the
        // durable tier.
        if let Err(e) = cache_put(s, sender, Tier::Transient, item.clone()) {
            fail(&ctx2.failure, e.into());
            return;
        }
        if let Err(e) = cache_put(s, sender, Tier::Persistent, item) {
            fail(&ctx2.failure, e.into());
            return;
        }
        serve_round(s, ctx2, round);
    });
    if let Err(e) = started {
        fail(&ctx.failure, e.into());
    }
}

fn serve_round(sim: &mut Sim, ctx: Rc<C2cCtx>, round: usize) {
    let targets = c2c_round_receivers(&ctx, round);
    let join = {
        let ctx = ctx.clone();
        Join::new(targets.len(), move |s| run_c2c_round(s, ctx, round + 1))
    };
    for r in targets {
        match ctx.spec.variant {
            C2cVariant::S2FanOutViaClones | C2cVariant::S1OneToOne => {
                clone_to_clone_then_download(sim, ctx.clone(), r, join.clone());
            }
            C2cVariant::S3DirectFromSenderClone => {
                download_to_receiver(sim, ctx.clone(), r, ctx.net.edge, join.clone());
            }
            C2cVariant::D2dBaseline => unreachable!("handled above"),
        }
    }
}

fn clone_to_clone_then_download(sim: &mut Sim, ctx: Rc<C2cCtx>, r: usize, join: Rc<Join>) {
    let (path, receiver_edge) = match &ctx.net.second_site {
        Some(s) => (vec![s.inter_site], s.edge2),
        None => (vec![ctx.net.intra], ctx.net.edge),
    };
    let src = ctx.net.edge;
    let flow = sim.world.next_flow_id();
    let spec = SessionSpec::bulk(flow, path, src, ctx.spec.content.size);
    let ctx2 = ctx.clone();
    let started = start_transfer(sim, spec, move |s, outcome| {
        if let Err(e) = outcome {
            fail(&ctx2.failure, e.into());
            return;
        }
        let receiver = UserId(1 + r as u32);
        let item = ctx2.spec.content.clone();
        if let Err(e) = cache_put(s, receiver, Tier::Transient, item) {
            fail(&ctx2.failure, e.into());
            return;
        }
        download_to_receiver(s, ctx2, r, receiver_edge, join);
    });
    if let Err(e) = started {
        fail(&ctx.failure, e.into());
    }
}

fn download_to_receiver(
    sim: &mut Sim,
    ctx: Rc<C2cCtx>,
    r: usize,
    from_edge: NodeId,
    join: Rc<Join>,
) {
    let fh = if from_edge == ctx.net.edge {
        ctx.net.fh_edge_bs
    } else {
        ctx.net
            .second_site
            .as_ref()
            .expect("second site exists for edge2 downloads")
            .fh_edge2_bs
    };
    let path = vec![fh, ctx.net.access_down[1 + r]];
    let flow = sim.world.next_flow_id();
    let spec = SessionSpec::bulk(flow, path, from_edge, ctx.spec.content.size);
    let ctx2 = ctx.clone();
    let started = start_transfer(sim, spec, move |s, outcome| {
        if let Err(e) = outcome {
            fail(&ctx2.failure, e.into());
            return;
        }
        join.arrive(s);
    });
    if let Err(e) = started {
        fail(&ctx.failure, e.into());
    }
}

// ---------------------------------------------------------------------------
// Clone-buffered streaming
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamingSpec {
    #[serde(rename = "bitrate")]
    pub bitrate_bps: f64,
    #[serde(rename = "duration")]
    pub duration_s: f64,
    #[serde(default)]
    pub wireless_loss: f64,
    #[serde(default = "default_true")]
    pub with_clone: bool,
    #[serde(default = "default_mtu")]
    pub packet_payload: u64,
}

fn default_true() -> bool {
    true
}

fn default_mtu() -> u64 {
    DEFAULT_MTU_PAYLOAD
}

impl Default for StreamingSpec {
    fn default() -> Self {
        StreamingSpec {
            bitrate_bps: 1_508_000.0,
            duration_s: 60.0,
            wireless_loss: 0.0,
            with_clone: true,
            packet_payload: DEFAULT_MTU_PAYLOAD,
        }
    }
}

/// Stream `bitrate * duration` bits from the internet server to the device.
/// With a clone, lost packets are re-sent from the edge; without one, from
/// the server, re-crossing the backhaul.
pub fn run_streaming(
    spec: &StreamingSpec,
    net_params: &NetParams,
    clone_params: &CloneParams,
    seed: u64,
) -> Result<MetricsReport, ScenarioError> {
    if !(spec.bitrate_bps > 0.0) || !(spec.duration_s > 0.0) {
        return Err(ScenarioError::InvalidSpec(
            "streaming.bitrate and streaming.duration must be > 0".into(),
        ));
    }
    if spec.packet_payload == 0 {
        return Err(ScenarioError::InvalidSpec(
            "streaming.packet_payload must be > 0".into(),
        ));
    }
    let mut net_params = *net_params;
    net_params.access_down.loss_prob = spec.wireless_loss;
    let name = if spec.with_clone {
        "streaming_clone"
    } else {
        "streaming_direct"
    };
    let (mut sim, net) = build_edge_world(1, &net_params, clone_params, false, name, seed)?;

    let failure: FailSlot = Rc::default();
    let bytes = (spec.bitrate_bps * spec.duration_s / 8.0).ceil() as u64;
    let path = {
        let server_edge = sim
            .world
            .topology
            .shortest_path(net.server, net.edge)
            .expect("server-edge link");
        let mut p = server_edge;
        p.push(net.fh_edge_bs);
        p.push(net.access_down[0]);
        p
    };
    let retransmit_from = if spec.with_clone {
        net.edge
    } else {
        net.server
    };

    let start = {
        let spec = *spec;
        let failure = failure.clone();
        move |s: &mut Sim| {
            let flow = s.world.next_flow_id();
            let mut session = SessionSpec::bulk(flow, path, retransmit_from, bytes);
            session.mtu_payload = spec.packet_payload;
            session.pacing_bps = Some(spec.bitrate_bps);
            let failure2 = failure.clone();
            let started = start_transfer(s, session, move |s, outcome| match outcome {
                Ok(stats) => {
                    s.world
                        .metrics
                        .add_time(keys::TIME_STREAM_COMPLETION, stats.completion);
                }
                Err(e) => fail(&failure2, e.into()),
            });
            if let Err(e) = started {
                fail(&failure, e.into());
            }
        }
    };

    if spec.with_clone {
        spawn_all(
            &mut sim,
            vec![(UserId(0), net.site)],
            *clone_params,
            failure.clone(),
            start,
        );
    } else {
        start(&mut sim);
    }

    sim.run_to_completion();
    let failed = failure.borrow_mut().take();
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(sim.world.metrics.clone())
}

// ---------------------------------------------------------------------------
// MPTCP proxy aggregation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MptcpSpec {
    pub access_paths: Vec<SegmentParams>,
    pub clone_to_server: SegmentParams,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MptcpOutcome {
    pub throughput_bps: f64,
    pub completion_s: f64,
}

/// The clone terminates multipath transport at the edge: the device-side
/// rate is the sum of the access paths, the server side is a conventional
/// single-path connection, and the end-to-end throughput is the smaller of
/// the two. Modeled as rate aggregation, not per-subflow packets.
pub fn run_mptcp_proxy(
    spec: &MptcpSpec,
    seed: u64,
) -> Result<(MptcpOutcome, MetricsReport), ScenarioError> {
    if spec.access_paths.is_empty() {
        return Err(ScenarioError::InvalidSpec(
            "mptcp.access_paths must be non-empty".into(),
        ));
    }
    let aggregate: f64 = spec.access_paths.iter().map(|p| p.rate_bps).sum();
    let throughput = aggregate.min(spec.clone_to_server.rate_bps);
    let access_latency = spec
        .access_paths
        .iter()
        .map(|p| p.latency_s)
        .fold(0.0f64, f64::max);
    let completion =
        (spec.bytes * 8) as f64 / throughput + access_latency + spec.clone_to_server.latency_s;

    let mut report = MetricsReport::new("mptcp", seed);
    report.add_bytes(keys::BYTES_ACCESS_UP_FIRST_TX, spec.bytes);
    report.add_bytes(keys::BYTES_BACKHAUL_FIRST_TX, spec.bytes);
    report.add_time(keys::TIME_STREAM_COMPLETION, completion);
    Ok((
        MptcpOutcome {
            throughput_bps: throughput,
            completion_s: completion,
        },
        report,
    ))
}

// ---------------------------------------------------------------------------
// ABR decision offloading
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct AbrLadder {
    pub rungs_bps: Vec<f64>,
    pub safety_factor: f64,
}

impl AbrLadder {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.rungs_bps.is_empty() {
            return Err(ScenarioError::InvalidSpec("abr.ladder is empty".into()));
        }
        if !self.rungs_bps.windows(2).all(|w| w[0] < w[1]) {
            return Err(ScenarioError::InvalidSpec(
                "abr.ladder must be strictly increasing".into(),
            ));
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            return Err(ScenarioError::InvalidSpec(
                "abr.safety_factor must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Highest rung at or under `safety_factor * measured_rate`; below the
/// ladder, the lowest rung keeps the stream alive.
pub fn choose_bitrate(ladder: &AbrLadder, measured_rate_bps: f64) -> f64 {
    let budget = ladder.safety_factor * measured_rate_bps;
    ladder
        .rungs_bps
        .iter()
        .rev()
        .find(|&&r| r <= budget)
        .copied()
        .unwrap_or(ladder.rungs_bps[0])
}

/// The clone watches the device's link state from the base station and
/// picks the stream; the decision consumes a clone-side event, none on the
/// device.
pub fn run_abr_offload(
    ladder: &AbrLadder,
    measured_rate_bps: f64,
    net_params: &NetParams,
    clone_params: &CloneParams,
    seed: u64,
) -> Result<(f64, MetricsReport), ScenarioError> {
    ladder.validate()?;
    let (mut sim, net) = build_edge_world(1, net_params, clone_params, false, "abr", seed)?;
    let failure: FailSlot = Rc::default();
    let chosen: Rc<Cell<f64>> = Rc::new(Cell::new(0.0));
    let slot = chosen.clone();
    let ladder2 = ladder.clone();
    spawn_all(
        &mut sim,
        vec![(UserId(0), net.site)],
        *clone_params,
        failure.clone(),
        move |s| {
            let at = s.clock();
            s.schedule(at, EventTag::with("abr.decide", 0, 0), move |s| {
                slot.set(choose_bitrate(&ladder2, measured_rate_bps));
                s.world.metrics.add_count(keys::COUNT_OFFLOAD_REMOTE);
                let now = s.clock().secs();
                s.world.metrics.add_time(keys::TIME_TASK_FINISH, now);
            })
            .expect("immediate event");
        },
    );
    sim.run_to_completion();
    let failed = failure.borrow_mut().take();
    if let Some(e) = failed {
        return Err(e);
    }
    Ok((chosen.get(), sim.world.metrics.clone()))
}

// ---------------------------------------------------------------------------
// Offload scenario (optionally with joint allocation) and the evolved-BS pair
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskParams {
    #[serde(rename = "D")]
    pub data_total_bits: u64,
    #[serde(rename = "S", default)]
    pub data_cached_bits: u64,
    #[serde(rename = "F")]
    pub instructions: u64,
    pub local_cpu: f64,
    #[serde(default)]
    pub result_size: u64,
}

impl Default for TaskParams {
    fn default() -> Self {
        TaskParams {
            data_total_bits: 8_000_000,
            data_cached_bits: 0,
            instructions: 4_000_000_000,
            local_cpu: 4e8,
            result_size: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllocationParams {
    pub radio_total: f64,
    pub cloud_total: f64,
    pub objective: Objective,
    #[serde(default = "default_grid_steps")]
    pub grid_steps: usize,
}

fn default_grid_steps() -> usize {
    200
}

/// Spawn a clone per task, optionally apply a joint allocation, then let
/// every user decide local-vs-remote and run the chosen branch.
pub fn run_offload(
    tasks: &[TaskParams],
    allocation: Option<&AllocationParams>,
    net_params: &NetParams,
    clone_params: &CloneParams,
    scenario: &str,
    seed: u64,
) -> Result<MetricsReport, ScenarioError> {
    if tasks.is_empty() {
        return Err(ScenarioError::InvalidSpec("no tasks configured".into()));
    }
    let (mut sim, net) =
        build_edge_world(tasks.len(), net_params, clone_params, false, scenario, seed)?;

    let failure: FailSlot = Rc::default();
    let to_spawn: Vec<(UserId, SiteId)> = (0..tasks.len())
        .map(|i| (UserId(i as u32), net.site))
        .collect();
    let tasks: Vec<TaskParams> = tasks.to_vec();
    let allocation = allocation.copied();
    let net = Rc::new(net);
    let failure2 = failure.clone();
    spawn_all(
        &mut sim,
        to_spawn,
        *clone_params,
        failure.clone(),
        move |s| {
            if let Err(e) = offload_phase(s, &tasks, allocation.as_ref(), &net) {
                fail(&failure2, e);
            }
        },
    );
    sim.run_to_completion();
    let failed = failure.borrow_mut().take();
    if let Some(e) = failed {
        return Err(e);
    }
    Ok(sim.world.metrics.clone())
}

fn offload_phase(
    sim: &mut Sim,
    tasks: &[TaskParams],
    allocation: Option<&AllocationParams>,
    net: &Rc<EdgeNet>,
) -> Result<(), ScenarioError> {
    let compute_tasks: Vec<ComputeTask> = tasks
        .iter()
        .map(|t| ComputeTask::new(t.data_total_bits, t.data_cached_bits, t.instructions))
        .collect();

    if let Some(alloc) = allocation {
        let attached: Vec<(UserId, ComputeTask, LinkId)> = compute_tasks
            .iter()
            .enumerate()
            .map(|(i, task)| (UserId(i as u32), *task, net.access_up[i]))
            .collect();
        let snapshot = collect_snapshot(sim, &attached);
        let cap = Capacity::new(alloc.radio_total, alloc.cloud_total);
        let plan = allocate_from_snapshot(&snapshot, cap, alloc.objective)?;
        let assignments: Vec<(UserId, LinkId)> =
            attached.iter().map(|(u, _, l)| (*u, *l)).collect();
        apply_plan(sim, &assignments, &plan)?;
    }

    for (i, task) in compute_tasks.iter().enumerate() {
        let user = UserId(i as u32);
        let params = tasks[i];
        let r = sim.world.topology.link(net.access_up[i]).rate_bps;
        let f = sim
            .world
            .clones
            .clone_of(user, Tier::Transient)
            .map(|c| c.cpu_capacity)
            .unwrap_or(0.0);
        let choice = if f > 0.0 && r > 0.0 {
            decide(task, params.local_cpu, r, f)?.choice
        } else {
            Choice::Local
        };
        match choice {
            Choice::Local => {
                sim.world.metrics.add_count(keys::COUNT_OFFLOAD_LOCAL);
                let finish = sim.clock() + task.instructions as f64 / params.local_cpu;
                sim.schedule(
                    finish,
                    EventTag::with("local.compute", user.0 as u64, 0),
                    |s| {
                        let now = s.clock().secs();
                        s.world.metrics.add_time(keys::TIME_TASK_FINISH, now);
                    },
                )
                .expect("future event");
            }
            Choice::Remote => {
                sim.world.metrics.add_count(keys::COUNT_OFFLOAD_REMOTE);
                let up = vec![net.access_up[i], net.fh_bs_edge];
                let down = vec![net.fh_edge_bs, net.access_down[i]];
                execute_offload(
                    sim,
                    user,
                    *task,
                    up,
                    down,
                    params.result_size,
                    move |s, outcome| match outcome {
                        Ok(out) => {
                            s.world
                                .metrics
                                .add_time(keys::TIME_TASK_FINISH, out.finish_secs);
                        }
                        Err(e) => {
                            // Surfacing through metrics would hide the bug;
                            // scenario offloads run on validated paths.
                            panic!("offload failed mid-run: {e}");
                        }
                    },
                )?;
            }
        }
    }
    Ok(())
}

/// Run the same offload scenario twice: as configured, and with the
/// fronthaul's delay and serialization removed (the clone-enabled base
/// station). Returns both reports.
pub fn run_evolved_bs(
    tasks: &[TaskParams],
    allocation: Option<&AllocationParams>,
    net_params: &NetParams,
    clone_params: &CloneParams,
    seed: u64,
) -> Result<(MetricsReport, MetricsReport), ScenarioError> {
    let base = run_offload(
        tasks,
        allocation,
        net_params,
        clone_params,
        "evolved_bs_base",
        seed,
    )?;
    let mut zeroed = *net_params;
    zeroed.fronthaul.latency_s = 0.0;
    zeroed.fronthaul.rate_bps = f64::INFINITY;
    let evolved = run_offload(
        tasks,
        allocation,
        &zeroed,
        clone_params,
        "evolved_bs_evolved",
        seed,
    )?;
    Ok((base, evolved))
}
