//! Property tests: the LRU cache against an independent reference model,
//! offload-estimate monotonicity and scaling invariance, allocation
//! feasibility, and the Eq-style lower bound on simulated offloads.

use proptest::prelude::*;

use aquasim::clone::{ContentItem, LruCache};
use aquasim::controller::{allocate_bruteforce, allocate_heuristic, Capacity, Demand, Objective};
use aquasim::offload::{decide, remote_time, ComputeTask};

// ---------------------------------------------------------------------------
// Reference LRU model: a recency-ordered Vec, most recent last.
// ---------------------------------------------------------------------------

#[derive(Default)]
struct ModelLru {
    capacity: u64,
    entries: Vec<(String, u64)>,
}

impl ModelLru {
    fn new(capacity: u64) -> Self {
        ModelLru {
            capacity,
            entries: Vec::new(),
        }
    }

    fn used(&self) -> u64 {
        self.entries.iter().map(|(_, s)| s).sum()
    }

    fn get(&mut self, id: &str) -> Option<u64> {
        let pos = self.entries.iter().position(|(i, _)| i == id)?;
        let entry = self.entries.remove(pos);
        let size = entry.1;
        self.entries.push(entry);
        Some(size)
    }

    fn put(&mut self, id: &str, size: u64) -> Option<Vec<(String, u64)>> {
        if size > self.capacity {
            return None;
        }
        if let Some(pos) = self.entries.iter().position(|(i, _)| i == id) {
            self.entries.remove(pos);
        }
        self.entries.push((id.to_string(), size));
        let mut evicted = Vec::new();
        while self.used() > self.capacity {
            evicted.push(self.entries.remove(0));
        }
        Some(evicted)
    }
}

#[derive(Debug, Clone)]
enum CacheOp {
    Get(u8),
    Put(u8, u64),
}

fn cache_ops() -> impl Strategy<Value = Vec<CacheOp>> {
    prop::collection::vec(
        prop_oneof![
            (0u8..12).prop_map(CacheOp::Get),
            ((0u8..12), (1u64..60)).prop_map(|(id, size)| CacheOp::Put(id, size)),
        ],
        1..200,
    )
}

proptest! {
    #[test]
    fn lru_matches_the_reference_model(ops in cache_ops(), capacity in 1u64..150) {
        let mut real = LruCache::new(capacity);
        let mut model = ModelLru::new(capacity);
        for op in ops {
            match op {
                CacheOp::Get(id) => {
                    let id = format!("k{id}");
                    prop_assert_eq!(real.get(&id), model.get(&id));
                }
                CacheOp::Put(id, size) => {
                    let id = format!("k{id}");
                    let got = real.put(ContentItem::new(id.clone(), size));
                    match model.put(&id, size) {
                        None => prop_assert!(got.is_err()),
                        Some(expected) => {
                            let got: Vec<(String, u64)> = got
                                .unwrap()
                                .into_iter()
                                .map(|item| (item.id, item.size))
                                .collect();
                            prop_assert_eq!(got, expected);
                        }
                    }
                }
            }
            prop_assert!(real.used() <= capacity);
            prop_assert_eq!(real.used(), model.used());
        }
    }

    #[test]
    fn remote_estimate_monotonicity(
        upload in 1u64..1_000_000_000,
        cached_fraction in 0.0f64..1.0,
        instructions in 0u64..1_000_000_000_000,
        r in 1e3f64..1e10,
        f in 1e3f64..1e12,
    ) {
        let cached = ((upload as f64) * cached_fraction) as u64;
        let task = ComputeTask::new(upload, cached, instructions);
        let base = remote_time(&task, r, f).unwrap();
        if task.upload_bits() > 0 {
            prop_assert!(remote_time(&task, r * 2.0, f).unwrap() < base);
        } else {
            prop_assert_eq!(remote_time(&task, r * 2.0, f).unwrap(), base);
        }
        if instructions > 0 {
            prop_assert!(remote_time(&task, r, f * 2.0).unwrap() < base);
        } else {
            prop_assert_eq!(remote_time(&task, r, f * 2.0).unwrap(), base);
        }
    }

    #[test]
    fn decision_is_scale_invariant(
        upload in 8u64..1_000_000_000,
        instructions in 1u64..1_000_000_000_000,
        r in 1e3f64..1e10,
        f in 1e6f64..1e12,
        local in 1e6f64..1e12,
        scale_pow in -8i32..9,
    ) {
        // Dyadic scaling keeps both times exactly proportional, so the
        // argmin cannot flip.
        let c = (2.0f64).powi(scale_pow);
        let task = ComputeTask::new(upload, 0, instructions);
        let base = decide(&task, local, r, f).unwrap();
        let scaled = decide(&task, local / c, r / c, f / c).unwrap();
        prop_assert_eq!(base.choice, scaled.choice);
    }

    #[test]
    fn allocations_stay_feasible_and_heuristic_dominates(
        seed_demands in prop::collection::vec((1e3f64..1e9, 1e3f64..1e12), 1..5),
        objective_max in prop::bool::ANY,
    ) {
        let cap = Capacity::new(1e8, 1e11);
        let objective = if objective_max {
            Objective::MinMaxTime
        } else {
            Objective::MinSumTime
        };
        let demands: Vec<Demand> = seed_demands
            .iter()
            .map(|&(transfer_bits, instructions)| Demand {
                transfer_bits,
                instructions,
            })
            .collect();
        let heur = allocate_heuristic(&demands, cap, objective).unwrap();
        let brute = allocate_bruteforce(&demands, cap, objective, 40).unwrap();
        for plan in [&heur, &brute] {
            let sum_r: f64 = plan.shares.iter().map(|s| s.r_bps).sum();
            let sum_f: f64 = plan.shares.iter().map(|s| s.f_ips).sum();
            prop_assert!(sum_r <= cap.radio_bps);
            prop_assert!(sum_f <= cap.cloud_ips);
        }
        // The continuous optimum never loses to a grid point.
        prop_assert!(heur.objective_value <= brute.objective_value * (1.0 + 1e-9));
    }
}

// ---------------------------------------------------------------------------
// The simulated offload never beats the analytic estimate.
// ---------------------------------------------------------------------------

#[test]
fn simulated_offload_lower_bound_holds_across_seeds() {
    use aquasim::clone::{spawn_clone, UserId};
    use aquasim::net::{NodeKind, Segment, Topology};
    use aquasim::offload::execute_offload;
    use aquasim::sim::Simulation;
    use aquasim::world::World;
    use std::cell::RefCell;
    use std::rc::Rc;

    for seed in 0..30u64 {
        let mut topo = Topology::new();
        let device = topo.add_node("dev", NodeKind::Device).unwrap();
        let edge = topo.add_node("edge", NodeKind::EdgeCloudSite).unwrap();
        let central = topo.add_node("central", NodeKind::CentralCloud).unwrap();
        let up = topo
            .add_link(device, edge, 2e6, 0.002, 0.03, Segment::AccessUp)
            .unwrap();
        let down = topo
            .add_link(edge, device, 2e6, 0.002, 0.03, Segment::AccessDown)
            .unwrap();
        topo.add_link(central, edge, 1e9, 0.0, 0.0, Segment::Backhaul)
            .unwrap();
        let mut world = World::bare(topo);
        let site = world.clones.add_site(edge, 2, 1e12);
        world
            .clones
            .create_persistent(UserId(0), central, 2e9, 1_000)
            .unwrap();
        let mut sim = Simulation::new(seed, world);
        spawn_clone(&mut sim, UserId(0), site, 0, 2e9, |_, r| r.unwrap()).unwrap();
        sim.run_to_completion();

        let task = ComputeTask::new(400_000, 0, 1_000_000_000);
        let estimate = remote_time(&task, 2e6, 2e9).unwrap();
        let out: Rc<RefCell<Option<f64>>> = Rc::default();
        let slot = out.clone();
        execute_offload(
            &mut sim,
            UserId(0),
            task,
            vec![up],
            vec![down],
            0,
            move |_s, r| {
                *slot.borrow_mut() = Some(r.unwrap().finish_secs);
            },
        )
        .unwrap();
        sim.run_to_completion();
        let finish = out.borrow().unwrap();
        assert!(
            finish >= estimate,
            "seed {seed}: simulated {finish} beats the estimate {estimate}"
        );
    }
}
