//! Compute offloading: the remote-execution time estimate, the local-vs-
//! remote decision and the simulated offload (upload, clone compute,
//! result download).
//!
//! The remote estimate is `(D - S)/r + F/f`: transfer time of the uncached
//! share of the input at the access rate, plus remote compute time. The
//! simulated offload is lower-bounded by the estimate and matches it
//! exactly on a lossless zero-latency path with no result download.

use thiserror::Error;

use crate::clone::{CloneState, Tier, UserId};
use crate::net::{start_transfer, LinkId, NetError, SessionSpec, Sim};
use crate::sim::EventTag;

/// An offloadable unit of work: `data_total` input bits of which
/// `data_cached` already live in the network, and an instruction count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComputeTask {
    pub data_total_bits: u64,
    pub data_cached_bits: u64,
    pub instructions: u64,
}

impl ComputeTask {
    pub fn new(data_total_bits: u64, data_cached_bits: u64, instructions: u64) -> Self {
        assert!(
            data_cached_bits <= data_total_bits,
            "cached bits cannot exceed total bits"
        );
        ComputeTask {
            data_total_bits,
            data_cached_bits,
            instructions,
        }
    }

    /// Bits that still have to cross the network.
    pub fn upload_bits(&self) -> u64 {
        self.data_total_bits - self.data_cached_bits
    }
}

/// The comparison baseline for the offload decision.
#[derive(Debug, Clone, Copy)]
pub struct DeviceProfile {
    pub local_cpu_ips: f64,
    pub access_up: LinkId,
}

#[derive(Debug, Error, PartialEq)]
pub enum OffloadError {
    #[error("rate and capacity must be > 0 (r={r}, f={f})")]
    Domain { r: f64, f: f64 },
    #[error("offload failed: clone is {0:?}")]
    CloneUnavailable(CloneState),
    #[error("offload failed: user has no edge clone")]
    NoClone,
    #[error("offload transfer failed: {0}")]
    TransferFailed(NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    Local,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadDecision {
    pub choice: Choice,
    pub t_local: f64,
    pub t_remote: f64,
}

/// Estimated remote execution time `(D - S)/r + F/f`.
pub fn remote_time(task: &ComputeTask, r_bps: f64, f_ips: f64) -> Result<f64, OffloadError> {
    if !(r_bps > 0.0) || !(f_ips > 0.0) {
        return Err(OffloadError::Domain { r: r_bps, f: f_ips });
    }
    Ok(task.upload_bits() as f64 / r_bps + task.instructions as f64 / f_ips)
}

/// Time to run the task on the device itself.
pub fn local_time(task: &ComputeTask, local_cpu_ips: f64) -> f64 {
    assert!(local_cpu_ips > 0.0, "local cpu must be > 0");
    task.instructions as f64 / local_cpu_ips
}

/// Offload only when strictly faster; ties stay local.
pub fn decide(
    task: &ComputeTask,
    local_cpu_ips: f64,
    r_bps: f64,
    f_ips: f64,
) -> Result<OffloadDecision, OffloadError> {
    let t_remote = remote_time(task, r_bps, f_ips)?;
    let t_local = local_time(task, local_cpu_ips);
    let choice = if t_remote < t_local {
        Choice::Remote
    } else {
        Choice::Local
    };
    Ok(OffloadDecision {
        choice,
        t_local,
        t_remote,
    })
}

/// When the task's input item sits in the clone's cache, the cached share
/// of the estimate is that item's size in bits.
pub fn cached_input_bits(sim: &Sim, user: UserId, content_id: &str) -> u64 {
    sim.world
        .clones
        .clone_of(user, Tier::Transient)
        .and_then(|c| c.cache.peek(content_id))
        .map(|bytes| bytes * 8)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadOutcome {
    pub finish_secs: f64,
}

/// Simulate a remote execution: upload the uncached input over `up_path`,
/// run `F / f` on the user's edge clone, then download `result_size` bytes
/// over `down_path`. The clone must stay active through the upload.
pub fn execute_offload(
    sim: &mut Sim,
    user: UserId,
    task: ComputeTask,
    up_path: Vec<LinkId>,
    down_path: Vec<LinkId>,
    result_size_bytes: u64,
    on_done: impl FnOnce(&mut Sim, Result<OffloadOutcome, OffloadError>) + 'static,
) -> Result<(), OffloadError> {
    let clone = sim
        .world
        .clones
        .clone_of(user, Tier::Transient)
        .ok_or(OffloadError::NoClone)?;
    if clone.state != CloneState::Active {
        return Err(OffloadError::CloneUnavailable(clone.state));
    }

    let upload_bytes = task.upload_bits().div_ceil(8);
    let src = sim.world.topology.link(up_path[0]).from;
    let flow = sim.world.next_flow_id();
    let spec = SessionSpec::bulk(flow, up_path, src, upload_bytes);
    start_transfer(sim, spec, move |s, outcome| {
        if let Err(e) = outcome {
            on_done(s, Err(OffloadError::TransferFailed(e)));
            return;
        }
        // The clone may have been torn down mid-transfer.
        let clone = match s.world.clones.clone_of(user, Tier::Transient) {
            Some(c) if c.state == CloneState::Active => c,
            Some(c) => {
                let state = c.state;
                on_done(s, Err(OffloadError::CloneUnavailable(state)));
                return;
            }
            None => {
                on_done(s, Err(OffloadError::NoClone));
                return;
            }
        };
        let compute_s = task.instructions as f64 / clone.cpu_capacity;
        let at = s.clock() + compute_s;
        s.schedule(
            at,
            EventTag::with("clone.compute", user.0 as u64, task.instructions),
            move |s| {
                if result_size_bytes == 0 {
                    let finish = s.clock().secs();
                    on_done(
                        s,
                        Ok(OffloadOutcome {
                            finish_secs: finish,
                        }),
                    );
                    return;
                }
                let src = s.world.topology.link(down_path[0]).from;
                let flow = s.world.next_flow_id();
                let spec = SessionSpec::bulk(flow, down_path, src, result_size_bytes);
                start_transfer(s, spec, move |s, outcome| match outcome {
                    Ok(stats) => on_done(
                        s,
                        Ok(OffloadOutcome {
                            finish_secs: stats.completion,
                        }),
                    ),
                    Err(e) => on_done(s, Err(OffloadError::TransferFailed(e))),
                })
                .expect("result path validated with the upload path");
            },
        )
        .expect("future event");
    })
    .map_err(OffloadError::TransferFailed)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clone::spawn_clone;
    use crate::net::{NodeKind, Segment, Topology};
    use crate::sim::Simulation;
    use crate::world::World;
    use std::cell::RefCell;
    use std::rc::Rc;

    #[test]
    fn remote_time_hand_arithmetic() {
        // 8e6 bits at 1e6 b/s plus 4e9 instructions at 2e9 i/s: 8 + 2 = 10.
        let task = ComputeTask::new(8_000_000, 0, 4_000_000_000);
        assert_eq!(remote_time(&task, 1e6, 2e9).unwrap(), 10.0);
    }

    #[test]
    fn fully_cached_input_skips_the_network() {
        let task = ComputeTask::new(5_000_000, 5_000_000, 3_000_000_000);
        assert_eq!(remote_time(&task, 123.0, 1e9).unwrap(), 3.0);
        let idle = ComputeTask::new(5_000_000, 5_000_000, 0);
        assert_eq!(remote_time(&idle, 123.0, 1e9).unwrap(), 0.0);
    }

    #[test]
    fn non_positive_rates_are_domain_errors() {
        let task = ComputeTask::new(1, 0, 1);
        assert!(remote_time(&task, 0.0, 1.0).is_err());
        assert!(remote_time(&task, 1.0, 0.0).is_err());
        assert!(remote_time(&task, -1.0, 1.0).is_err());
    }

    #[test]
    fn local_time_divides() {
        let task = ComputeTask::new(0, 0, 4_000_000_000);
        assert_eq!(local_time(&task, 4e8), 10.0);
        assert_eq!(local_time(&task, 8e8), 5.0);
        assert_eq!(local_time(&ComputeTask::new(0, 0, 0), 4e8), 0.0);
    }

    #[test]
    fn ties_stay_local() {
        // t_remote = 8/8 + 1 = 2.0, t_local = 2e9/1e9 = 2.0.
        let task = ComputeTask::new(8, 0, 2_000_000_000);
        let d = decide(&task, 1e9, 8.0, 2_000_000_000.0).unwrap();
        assert_eq!(d.t_local, d.t_remote);
        assert_eq!(d.choice, Choice::Local);
    }

    #[test]
    fn fast_network_and_cloud_pull_the_task_remote() {
        let task = ComputeTask::new(8_000_000, 0, 4_000_000_000);
        let d = decide(&task, 1e8, 1e12, 1e10).unwrap();
        assert_eq!(d.choice, Choice::Remote);
    }

    #[test]
    fn dead_slow_uplink_keeps_the_task_local() {
        let task = ComputeTask::new(1_000_000, 0, 4_000_000_000);
        let d = decide(&task, 1e9, 1.0, 1e12).unwrap();
        assert!(d.t_remote > 1e6);
        assert_eq!(d.choice, Choice::Local);
    }

    fn offload_world(rate: f64, latency: f64, loss: f64) -> (Sim, Vec<LinkId>, Vec<LinkId>) {
        let mut topo = Topology::new();
        let device = topo.add_node("dev", NodeKind::Device).unwrap();
        let edge = topo.add_node("edge", NodeKind::EdgeCloudSite).unwrap();
        let central = topo.add_node("central", NodeKind::CentralCloud).unwrap();
        let up = topo
            .add_link(device, edge, rate, latency, loss, Segment::AccessUp)
            .unwrap();
        let down = topo
            .add_link(edge, device, rate, latency, loss, Segment::AccessDown)
            .unwrap();
        topo.add_link(central, edge, f64::INFINITY, 0.0, 0.0, Segment::Backhaul)
            .unwrap();
        let mut world = World::bare(topo);
        let site = world.clones.add_site(edge, 4, 1e12);
        world
            .clones
            .create_persistent(UserId(0), central, 2e9, 1_000_000_000)
            .unwrap();
        let mut sim = Simulation::new(3, world);
        spawn_clone(&mut sim, UserId(0), site, 0, 2e9, |_, r| r.unwrap()).unwrap();
        sim.run_to_completion();
        (sim, vec![up], vec![down])
    }

    fn run_offload(
        sim: &mut Sim,
        task: ComputeTask,
        up: Vec<LinkId>,
        down: Vec<LinkId>,
        result: u64,
    ) -> Result<OffloadOutcome, OffloadError> {
        let out: Rc<RefCell<Option<Result<OffloadOutcome, OffloadError>>>> = Rc::default();
        let slot = out.clone();
        execute_offload(sim, UserId(0), task, up, down, result, move |_s, r| {
            *slot.borrow_mut() = Some(r);
        })?;
        sim.run_to_completion();
        let outcome = out.borrow_mut().take();
        outcome.expect("offload resolved")
    }

    #[test]
    fn lossless_zero_latency_matches_the_estimate_exactly() {
        let (mut sim, up, down) = offload_world(2e7, 0.0, 0.0);
        let task = ComputeTask::new(4_000_000, 0, 1_000_000_000);
        let estimate = remote_time(&task, 2e7, 2e9).unwrap();
        let outcome = run_offload(&mut sim, task, up, down, 0).unwrap();
        let rel = (outcome.finish_secs - estimate).abs() / estimate;
        assert!(
            rel < 1e-12,
            "sim {} vs estimate {estimate}",
            outcome.finish_secs
        );
    }

    #[test]
    fn losses_and_latency_only_push_the_finish_later() {
        let (mut sim, up, down) = offload_world(2e7, 0.004, 0.08);
        let task = ComputeTask::new(4_000_000, 0, 1_000_000_000);
        let estimate = remote_time(&task, 2e7, 2e9).unwrap();
        let outcome = run_offload(&mut sim, task, up, down, 0).unwrap();
        assert!(outcome.finish_secs > estimate);
    }

    #[test]
    fn result_download_is_counted_after_compute() {
        let (mut sim, up, down) = offload_world(2e7, 0.0, 0.0);
        let task = ComputeTask::new(4_000_000, 0, 1_000_000_000);
        let estimate = remote_time(&task, 2e7, 2e9).unwrap();
        let outcome = run_offload(&mut sim, task, up, down, 250_000).unwrap();
        let expected = estimate + 250_000.0 * 8.0 / 2e7;
        assert!((outcome.finish_secs - expected).abs() / expected < 1e-9);
    }

    #[test]
    fn clone_destroyed_mid_transfer_fails_the_offload() {
        let (mut sim, up, down) = offload_world(2e6, 0.0, 0.0);
        let task = ComputeTask::new(4_000_000, 0, 1_000_000_000);
        let out: Rc<RefCell<Option<Result<OffloadOutcome, OffloadError>>>> = Rc::default();
        let slot = out.clone();
        execute_offload(&mut sim, UserId(0), task, up, down, 0, move |_s, r| {
            *slot.borrow_mut() = Some(r);
        })
        .unwrap();
        // Upload takes 2 s; kill the clone at t = 1.
        sim.schedule(
            crate::sim::SimTime::from_secs(1.0),
            EventTag::new("test.destroy"),
            |s| {
                crate::clone::destroy_clone(s, UserId(0)).unwrap();
            },
        )
        .unwrap();
        sim.run_to_completion();
        let outcome = out.borrow_mut().take();
        match outcome.expect("resolved") {
            Err(OffloadError::NoClone) => {}
            other => panic!("expected NoClone, got {other:?}"),
        }
    }

    #[test]
    fn cache_binding_reads_the_item_size() {
        let (mut sim, _, _) = offload_world(2e7, 0.0, 0.0);
        crate::clone::cache_put(
            &mut sim,
            UserId(0),
            Tier::Transient,
            crate::clone::ContentItem::new("input", 1_000),
        )
        .unwrap();
        assert_eq!(cached_input_bits(&sim, UserId(0), "input"), 8_000);
        assert_eq!(cached_input_bits(&sim, UserId(0), "absent"), 0);
    }
}
