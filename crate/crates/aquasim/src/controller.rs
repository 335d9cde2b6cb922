//! The mobile cloud controller: joint allocation of access-link rate and
//! clone compute across users under total radio and cloud capacities.
//!
//! Two allocators cross-check each other. `allocate_bruteforce` finds the
//! exact optimum over the grid `{k/G * R} x {k/G * F_cap}` (computed by
//! dynamic programming over grid units, which enumerates the same space as
//! the naive product walk). `allocate_heuristic` solves the continuous
//! problem: a square-root proportional split for the sum objective, and
//! bisection on the target time with a per-user transfer/compute balance
//! for the max objective.

use thiserror::Error;

use crate::clone::{SiteId, Tier, UserId};
use crate::net::{LinkId, Sim};
use crate::offload::ComputeTask;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capacity {
    pub radio_bps: f64,
    pub cloud_ips: f64,
}

impl Capacity {
    pub fn new(radio_bps: f64, cloud_ips: f64) -> Self {
        assert!(radio_bps > 0.0 && cloud_ips > 0.0, "capacities must be > 0");
        Capacity {
            radio_bps,
            cloud_ips,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MinSumTime,
    MinMaxTime,
}

/// One user's resource demand: bits to move and instructions to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Demand {
    pub transfer_bits: f64,
    pub instructions: f64,
}

impl Demand {
    pub fn of_task(task: &ComputeTask) -> Self {
        Demand {
            transfer_bits: task.upload_bits() as f64,
            instructions: task.instructions as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Share {
    pub r_bps: f64,
    pub f_ips: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub objective: Objective,
    pub shares: Vec<Share>,
    pub objective_value: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum AllocError {
    #[error("the exhaustive oracle is bounded to 4 users, got {0}")]
    TooLargeForOracle(usize),
    #[error("grid_steps must be >= 2, got {0}")]
    BadGrid(usize),
    #[error("no feasible allocation exists")]
    Infeasible,
    #[error("plan has {plan} shares for {users} users")]
    ShapeMismatch { plan: usize, users: usize },
    #[error("plan exceeds the cpu pool at site {0:?}")]
    SiteOverload(SiteId),
    #[error("user {0:?} has no active edge clone")]
    NoClone(UserId),
}

/// Completion time of one user under a share; infinite when a positive
/// demand gets a zero share.
pub fn user_time(demand: &Demand, share: &Share) -> f64 {
    let tx = if demand.transfer_bits > 0.0 {
        if share.r_bps > 0.0 {
            demand.transfer_bits / share.r_bps
        } else {
            f64::INFINITY
        }
    } else {
        0.0
    };
    let cp = if demand.instructions > 0.0 {
        if share.f_ips > 0.0 {
            demand.instructions / share.f_ips
        } else {
            f64::INFINITY
        }
    } else {
        0.0
    };
    tx + cp
}

pub fn objective_value(objective: Objective, demands: &[Demand], shares: &[Share]) -> f64 {
    let times = demands.iter().zip(shares).map(|(d, s)| user_time(d, s));
    match objective {
        Objective::MinSumTime => times.sum(),
        Objective::MinMaxTime => times.fold(0.0f64, f64::max),
    }
}

/// Scale shares down by a whisker if float dust pushed a sum over the cap.
/// The margin keeps the rescaled sum strictly under the cap even after the
/// multiplications round.
fn clamp_feasible(shares: &mut [Share], cap: Capacity) {
    const MARGIN: f64 = 1.0 - 1e-12;
    let sum_r: f64 = shares.iter().map(|s| s.r_bps).sum();
    if sum_r > cap.radio_bps {
        let scale = cap.radio_bps / sum_r * MARGIN;
        for s in shares.iter_mut() {
            s.r_bps *= scale;
        }
    }
    let sum_f: f64 = shares.iter().map(|s| s.f_ips).sum();
    if sum_f > cap.cloud_ips {
        let scale = cap.cloud_ips / sum_f * MARGIN;
        for s in shares.iter_mut() {
            s.f_ips *= scale;
        }
    }
}

// ---------------------------------------------------------------------------
// Exhaustive grid oracle
// ---------------------------------------------------------------------------

const NO_FIT: u32 = u32::MAX / 4;

/// Per-user cost of `j` grid units of one resource.
fn unit_cost(demand: f64, units: usize, unit_size: f64) -> f64 {
    if demand == 0.0 {
        0.0
    } else if units == 0 {
        f64::INFINITY
    } else {
        demand / (units as f64 * unit_size)
    }
}

/// Minimize the sum of `demand/alloc` over grid compositions of `grid`
/// units. Returns per-user units, lexicographically smallest among optima.
fn min_sum_units(demands: &[f64], grid: usize, unit_size: f64) -> Option<Vec<usize>> {
    let n = demands.len();
    // suffix[i][u]: least cost for users i.. with at most u units.
    let mut suffix = vec![vec![0.0f64; grid + 1]; n + 1];
    for i in (0..n).rev() {
        for u in 0..=grid {
            let mut best = f64::INFINITY;
            for j in 0..=u {
                let c = unit_cost(demands[i], j, unit_size) + suffix[i + 1][u - j];
                if c < best {
                    best = c;
                }
            }
            suffix[i][u] = best;
        }
    }
    if suffix[0][grid].is_infinite() {
        return None;
    }
    let mut units = Vec::with_capacity(n);
    let mut budget = grid;
    for i in 0..n {
        let target = suffix[i][budget];
        let j = (0..=budget)
            .find(|&j| unit_cost(demands[i], j, unit_size) + suffix[i + 1][budget - j] == target)
            .expect("DP value is attained");
        units.push(j);
        budget -= j;
    }
    Some(units)
}

/// Smallest compute units that keep user `i` within time budget `slack`.
/// The epsilon haircut keeps rounding noise in the slack subtraction from
/// bumping an exact boundary up a whole grid unit.
fn min_compute_units(instructions: f64, slack: f64, grid: usize, unit_f: f64) -> u32 {
    if instructions == 0.0 {
        return 0;
    }
    if !(slack > 0.0) {
        return NO_FIT;
    }
    let exact = instructions / (unit_f * slack);
    let k = (exact * (1.0 - 1e-9)).ceil() as u64;
    let k = k.max(1);
    if k as usize > grid {
        NO_FIT
    } else {
        k as u32
    }
}

struct MaxOracle<'a> {
    demands: &'a [Demand],
    grid: usize,
    unit_r: f64,
    unit_f: f64,
}

impl MaxOracle<'_> {
    /// suffix tables g[i][u]: least total compute units for users i.. given
    /// at most u radio units, all users finishing within `target`.
    fn suffix_tables(&self, target: f64) -> Vec<Vec<u32>> {
        let n = self.demands.len();
        let g = self.grid;
        let mut tables = vec![vec![0u32; g + 1]; n + 1];
        for i in (0..n).rev() {
            let d = self.demands[i];
            let kmin: Vec<u32> = (0..=g)
                .map(|j| {
                    let a = unit_cost(d.transfer_bits, j, self.unit_r);
                    min_compute_units(d.instructions, target - a, g, self.unit_f)
                })
                .collect();
            for u in 0..=g {
                let mut best = NO_FIT;
                for j in 0..=u {
                    let total = kmin[j].saturating_add(tables[i + 1][u - j]);
                    if total < best {
                        best = total;
                    }
                }
                tables[i][u] = best;
            }
        }
        tables
    }

    fn feasible(&self, target: f64) -> bool {
        self.suffix_tables(target)[0][self.grid] as usize <= self.grid
    }

    /// Lexicographically smallest `(r_1, f_1, r_2, ...)` allocation meeting
    /// `target`.
    fn extract(&self, target: f64) -> Option<Vec<(usize, usize)>> {
        let n = self.demands.len();
        let g = self.grid;
        let tables = self.suffix_tables(target);
        if tables[0][g] as usize > g {
            return None;
        }
        let mut out = Vec::with_capacity(n);
        let mut radio = g;
        let mut compute = g;
        for i in 0..n {
            let d = self.demands[i];
            let mut chosen = None;
            for j in 0..=radio {
                let a = unit_cost(d.transfer_bits, j, self.unit_r);
                let k = min_compute_units(d.instructions, target - a, g, self.unit_f);
                let rest = tables[i + 1][radio - j];
                if (k.saturating_add(rest)) as usize <= compute {
                    chosen = Some((j, k as usize));
                    break;
                }
            }
            let (j, k) = chosen?;
            out.push((j, k));
            radio -= j;
            compute -= k;
        }
        Some(out)
    }
}

/// Exact optimum over the allocation grid, exhaustively covering every
/// feasible grid point. Bounded to four users; ties resolve to the
/// lexicographically smallest `(r_1, f_1, r_2, f_2, ...)`.
pub fn allocate_bruteforce(
    demands: &[Demand],
    cap: Capacity,
    objective: Objective,
    grid_steps: usize,
) -> Result<AllocationPlan, AllocError> {
    if demands.is_empty() || demands.len() > 4 {
        return Err(AllocError::TooLargeForOracle(demands.len()));
    }
    if grid_steps < 2 {
        return Err(AllocError::BadGrid(grid_steps));
    }
    let unit_r = cap.radio_bps / grid_steps as f64;
    let unit_f = cap.cloud_ips / grid_steps as f64;

    let shares_of = |units: &[(usize, usize)]| -> Vec<Share> {
        units
            .iter()
            .map(|&(j, k)| Share {
                r_bps: j as f64 * unit_r,
                f_ips: k as f64 * unit_f,
            })
            .collect()
    };

    let units = match objective {
        Objective::MinSumTime => {
            let tx: Vec<f64> = demands.iter().map(|d| d.transfer_bits).collect();
            let cp: Vec<f64> = demands.iter().map(|d| d.instructions).collect();
            let r_units = min_sum_units(&tx, grid_steps, unit_r).ok_or(AllocError::Infeasible)?;
            let f_units = min_sum_units(&cp, grid_steps, unit_f).ok_or(AllocError::Infeasible)?;
            r_units.into_iter().zip(f_units).collect::<Vec<_>>()
        }
        Objective::MinMaxTime => {
            let oracle = MaxOracle {
                demands,
                grid: grid_steps,
                unit_r,
                unit_f,
            };
            // The optimal max equals some user's grid time; search the
            // sorted candidate values for the smallest feasible one.
            let mut candidates: Vec<f64> = Vec::new();
            for d in demands {
                for j in 0..=grid_steps {
                    let a = unit_cost(d.transfer_bits, j, unit_r);
                    if a.is_infinite() {
                        continue;
                    }
                    for k in 0..=grid_steps {
                        let b = unit_cost(d.instructions, k, unit_f);
                        if b.is_finite() {
                            candidates.push(a + b);
                        }
                    }
                }
            }
            candidates.sort_by(f64::total_cmp);
            candidates.dedup();
            let mut lo = 0;
            let mut hi = candidates.len();
            while lo < hi {
                let mid = (lo + hi) / 2;
                if oracle.feasible(candidates[mid]) {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            if lo == candidates.len() {
                return Err(AllocError::Infeasible);
            }
            oracle
                .extract(candidates[lo])
                .ok_or(AllocError::Infeasible)?
        }
    };

    let mut shares = shares_of(&units);
    clamp_feasible(&mut shares, cap);
    let objective_value = objective_value(objective, demands, &shares);
    if objective_value.is_infinite() {
        return Err(AllocError::Infeasible);
    }
    Ok(AllocationPlan {
        objective,
        shares,
        objective_value,
    })
}

// ---------------------------------------------------------------------------
// Continuous heuristic
// ---------------------------------------------------------------------------

/// Square-root proportional split: the continuous optimum of
/// `sum(demand_i / alloc_i)` under a total budget.
fn sqrt_split(demands: &[f64], total: f64) -> Vec<f64> {
    let weights: Vec<f64> = demands.iter().map(|d| d.sqrt()).collect();
    let sum: f64 = weights.iter().sum();
    if sum == 0.0 {
        return vec![0.0; demands.len()];
    }
    weights.iter().map(|w| total * w / sum).collect()
}

/// Joint allocation without the enumeration bound. Sum objective: closed
/// form. Max objective: bisection on the target time with the per-user
/// transfer/compute split balanced so both capacity constraints bind
/// together.
pub fn allocate_heuristic(
    demands: &[Demand],
    cap: Capacity,
    objective: Objective,
) -> Result<AllocationPlan, AllocError> {
    let any_tx = demands.iter().any(|d| d.transfer_bits > 0.0);
    let any_cp = demands.iter().any(|d| d.instructions > 0.0);
    if (any_tx && !(cap.radio_bps > 0.0)) || (any_cp && !(cap.cloud_ips > 0.0)) {
        return Err(AllocError::Infeasible);
    }

    let mut shares = match objective {
        Objective::MinSumTime => {
            let tx: Vec<f64> = demands.iter().map(|d| d.transfer_bits).collect();
            let cp: Vec<f64> = demands.iter().map(|d| d.instructions).collect();
            let r = sqrt_split(&tx, cap.radio_bps);
            let f = sqrt_split(&cp, cap.cloud_ips);
            r.into_iter()
                .zip(f)
                .map(|(r_bps, f_ips)| Share { r_bps, f_ips })
                .collect::<Vec<_>>()
        }
        Objective::MinMaxTime => min_max_shares(demands, cap),
    };
    clamp_feasible(&mut shares, cap);
    let objective_value = objective_value(objective, demands, &shares);
    Ok(AllocationPlan {
        objective,
        shares,
        objective_value,
    })
}

/// Fraction of a user's time budget spent transferring, on the Pareto
/// frontier parameterized by the resource-price ratio `lambda`.
fn tx_fraction(d: &Demand, lambda: f64) -> f64 {
    if d.transfer_bits == 0.0 {
        0.0
    } else if d.instructions == 0.0 {
        1.0
    } else {
        1.0 / (1.0 + (lambda * d.instructions / d.transfer_bits).sqrt())
    }
}

fn min_max_shares(demands: &[Demand], cap: Capacity) -> Vec<Share> {
    // u = total radio demand, v = total compute demand for a unit target
    // time, given the per-user splits at `lambda`.
    let usage = |lambda: f64| -> (f64, f64) {
        let mut u = 0.0;
        let mut v = 0.0;
        for d in demands {
            let x = tx_fraction(d, lambda);
            if d.transfer_bits > 0.0 {
                u += d.transfer_bits / x;
            }
            if d.instructions > 0.0 {
                v += d.instructions / (1.0 - x);
            }
        }
        (u, v)
    };

    let mixed = demands
        .iter()
        .any(|d| d.transfer_bits > 0.0 && d.instructions > 0.0);
    let lambda = if mixed {
        // u/R - v/F crosses zero monotonically in lambda. Bisect with
        // geometric midpoints: sqrt is correctly rounded everywhere, so the
        // result is bit-identical across hosts (exp/log are not).
        let mut lo = 1e-60f64;
        let mut hi = 1e60f64;
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            let (u, v) = usage(mid);
            if u / cap.radio_bps >= v / cap.cloud_ips {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        (lo * hi).sqrt()
    } else {
        1.0
    };

    let (u, v) = usage(lambda);
    let target = (u / cap.radio_bps).max(v / cap.cloud_ips);
    if target == 0.0 {
        return vec![Share::default(); demands.len()];
    }
    demands
        .iter()
        .map(|d| {
            let x = tx_fraction(d, lambda);
            Share {
                r_bps: if d.transfer_bits > 0.0 {
                    d.transfer_bits / (x * target)
                } else {
                    0.0
                },
                f_ips: if d.instructions > 0.0 {
                    d.instructions / ((1.0 - x) * target)
                } else {
                    0.0
                },
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Monitoring and plan application
// ---------------------------------------------------------------------------

/// What the controller sees: one entry per attached user plus per-site load.
#[derive(Debug, Clone)]
pub struct MonitoringSnapshot {
    pub timestamp: SimTime,
    pub users: Vec<UserMonitor>,
    pub sites: Vec<SiteMonitor>,
}

#[derive(Debug, Clone)]
pub struct UserMonitor {
    pub user: UserId,
    pub task: ComputeTask,
    pub access_link: LinkId,
    pub access_rate_bps: f64,
}

#[derive(Debug, Clone)]
pub struct SiteMonitor {
    pub site: SiteId,
    pub cpu_used: f64,
    pub cpu_pool: f64,
}

pub fn collect_snapshot(
    sim: &Sim,
    attached: &[(UserId, ComputeTask, LinkId)],
) -> MonitoringSnapshot {
    MonitoringSnapshot {
        timestamp: sim.clock(),
        users: attached
            .iter()
            .map(|(user, task, link)| UserMonitor {
                user: *user,
                task: *task,
                access_link: *link,
                access_rate_bps: sim.world.topology.link(*link).rate_bps,
            })
            .collect(),
        sites: sim
            .world
            .clones
            .sites()
            .map(|(site, s)| SiteMonitor {
                site,
                cpu_used: s.cpu_used(),
                cpu_pool: s.cpu_pool,
            })
            .collect(),
    }
}

pub fn allocate_from_snapshot(
    snapshot: &MonitoringSnapshot,
    cap: Capacity,
    objective: Objective,
) -> Result<AllocationPlan, AllocError> {
    let demands: Vec<Demand> = snapshot
        .users
        .iter()
        .map(|u| Demand::of_task(&u.task))
        .collect();
    allocate_heuristic(&demands, cap, objective)
}

/// Push a plan into the live topology: per-user access rates and clone cpu
/// shares. Validated against every site's cpu pool first; a violating plan
/// changes nothing.
pub fn apply_plan(
    sim: &mut Sim,
    assignments: &[(UserId, LinkId)],
    plan: &AllocationPlan,
) -> Result<(), AllocError> {
    if assignments.len() != plan.shares.len() {
        return Err(AllocError::ShapeMismatch {
            plan: plan.shares.len(),
            users: assignments.len(),
        });
    }
    // Validate: recompute each site's cpu usage under the new shares.
    let mut deltas: Vec<(SiteId, f64)> = Vec::new();
    for ((user, _), share) in assignments.iter().zip(&plan.shares) {
        let clone = sim
            .world
            .clones
            .clone_of(*user, Tier::Transient)
            .ok_or(AllocError::NoClone(*user))?;
        let site = sim
            .world
            .clones
            .site_of_node(clone.site)
            .ok_or(AllocError::NoClone(*user))?;
        deltas.push((site, share.f_ips - clone.cpu_capacity));
    }
    for (site_id, _) in &deltas {
        let site = sim.world.clones.site(*site_id);
        let delta: f64 = deltas
            .iter()
            .filter(|(s, _)| s == site_id)
            .map(|(_, d)| d)
            .sum();
        if site.cpu_used() + delta > site.cpu_pool * (1.0 + 1e-12) {
            return Err(AllocError::SiteOverload(*site_id));
        }
    }
    // Commit.
    for ((user, link), share) in assignments.iter().zip(&plan.shares) {
        if share.r_bps > 0.0 {
            sim.world
                .topology
                .set_link_rate(*link, share.r_bps)
                .expect("positive rate");
        }
        sim.world
            .clones
            .set_clone_cpu(*user, share.f_ips)
            .expect("validated above");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_feasible(plan: &AllocationPlan, cap: Capacity) {
        let sum_r: f64 = plan.shares.iter().map(|s| s.r_bps).sum();
        let sum_f: f64 = plan.shares.iter().map(|s| s.f_ips).sum();
        assert!(sum_r <= cap.radio_bps, "radio {sum_r} > {}", cap.radio_bps);
        assert!(sum_f <= cap.cloud_ips, "cloud {sum_f} > {}", cap.cloud_ips);
    }

    fn d(tx: f64, cp: f64) -> Demand {
        Demand {
            transfer_bits: tx,
            instructions: cp,
        }
    }

    #[test]
    fn single_user_takes_everything() {
        let cap = Capacity::new(1e8, 1e10);
        let demands = [d(1e6, 1e9)];
        for objective in [Objective::MinSumTime, Objective::MinMaxTime] {
            let brute = allocate_bruteforce(&demands, cap, objective, 50).unwrap();
            assert_eq!(brute.shares[0].r_bps, 1e8);
            assert_eq!(brute.shares[0].f_ips, 1e10);
            let heur = allocate_heuristic(&demands, cap, objective).unwrap();
            assert!((heur.shares[0].r_bps - 1e8).abs() < 1.0);
            assert!((heur.shares[0].f_ips - 1e10).abs() < 100.0);
            assert!(
                (heur.objective_value - brute.objective_value).abs() / brute.objective_value < 1e-9
            );
        }
    }

    #[test]
    fn identical_users_split_evenly() {
        let cap = Capacity::new(1e8, 1e10);
        let demands = [d(4e6, 2e9), d(4e6, 2e9)];
        let brute = allocate_bruteforce(&demands, cap, Objective::MinMaxTime, 100).unwrap();
        assert_eq!(brute.shares[0], brute.shares[1]);
        assert_eq!(brute.shares[0].r_bps, 5e7);
        assert_eq!(brute.shares[0].f_ips, 5e9);
        let heur = allocate_heuristic(&demands, cap, Objective::MinMaxTime).unwrap();
        let t0 = user_time(&demands[0], &heur.shares[0]);
        let t1 = user_time(&demands[1], &heur.shares[1]);
        assert!((t0 - t1).abs() / t0 < 1e-9, "{t0} vs {t1}");
        assert_feasible(&heur, cap);
    }

    #[test]
    fn disjoint_demands_get_disjoint_resources() {
        // One user only moves bits, the other only computes.
        let cap = Capacity::new(1e8, 1e10);
        let demands = [d(8e6, 0.0), d(0.0, 1e9)];
        let brute = allocate_bruteforce(&demands, cap, Objective::MinSumTime, 40).unwrap();
        assert_eq!(brute.shares[0].r_bps, 1e8);
        assert_eq!(brute.shares[0].f_ips, 0.0);
        assert_eq!(brute.shares[1].r_bps, 0.0);
        assert_eq!(brute.shares[1].f_ips, 1e10);
    }

    #[test]
    fn sqrt_rule_matches_brute_force_within_a_grid_cell() {
        // Transfer-only demands 1:4 split the radio 1:2.
        let cap = Capacity::new(3e7, 1e9);
        let demands = [d(1e6, 0.0), d(4e6, 0.0)];
        let heur = allocate_heuristic(&demands, cap, Objective::MinSumTime).unwrap();
        assert!((heur.shares[0].r_bps - 1e7).abs() < 1.0);
        assert!((heur.shares[1].r_bps - 2e7).abs() < 1.0);
        let brute = allocate_bruteforce(&demands, cap, Objective::MinSumTime, 200).unwrap();
        let cell = cap.radio_bps / 200.0;
        for (h, b) in heur.shares.iter().zip(&brute.shares) {
            assert!((h.r_bps - b.r_bps).abs() <= cell);
        }
    }

    #[test]
    fn heuristic_never_beats_the_grid_by_much_nor_loses_much() {
        // Deterministic pseudo-random instances; the continuous optimum must
        // sit at or below the grid optimum, within 1% at 200 steps.
        let mut rng = crate::sim::StreamRng::new(99);
        let cap = Capacity::new(2e8, 5e10);
        for trial in 0..10 {
            let n = 2 + (rng.next_u64() % 3) as usize;
            let demands: Vec<Demand> = (0..n)
                .map(|_| {
                    d(
                        1e6 * (1.0 + 99.0 * rng.next_f64()),
                        1e9 * (1.0 + 99.0 * rng.next_f64()),
                    )
                })
                .collect();
            for objective in [Objective::MinSumTime, Objective::MinMaxTime] {
                let heur = allocate_heuristic(&demands, cap, objective).unwrap();
                let brute = allocate_bruteforce(&demands, cap, objective, 200).unwrap();
                assert_feasible(&heur, cap);
                assert_feasible(&brute, cap);
                assert!(
                    heur.objective_value <= brute.objective_value * (1.0 + 1e-9),
                    "trial {trial}: heuristic {} above oracle {}",
                    heur.objective_value,
                    brute.objective_value
                );
                let gap = (brute.objective_value - heur.objective_value) / brute.objective_value;
                assert!(gap <= 0.01, "trial {trial} {objective:?}: gap {gap}");
            }
        }
    }

    #[test]
    fn scaling_the_instance_scales_the_shares() {
        let cap = Capacity::new(1e8, 1e10);
        let demands = [d(3e6, 7e8), d(9e6, 2e9)];
        let c = 8.0; // dyadic, so the scaling is float-exact
        let scaled: Vec<Demand> = demands
            .iter()
            .map(|x| d(x.transfer_bits * c, x.instructions * c))
            .collect();
        let scaled_cap = Capacity::new(cap.radio_bps * c, cap.cloud_ips * c);
        for objective in [Objective::MinSumTime, Objective::MinMaxTime] {
            let base = allocate_heuristic(&demands, cap, objective).unwrap();
            let big = allocate_heuristic(&scaled, scaled_cap, objective).unwrap();
            for (b, s) in base.shares.iter().zip(&big.shares) {
                assert!((s.r_bps - b.r_bps * c).abs() <= b.r_bps * 1e-9);
                assert!((s.f_ips - b.f_ips * c).abs() <= b.f_ips * 1e-9);
            }
            assert!(
                (big.objective_value - base.objective_value).abs() <= base.objective_value * 1e-9
            );
        }
    }

    #[test]
    fn more_radio_never_hurts() {
        let demands = [d(5e6, 1e9), d(2e6, 3e9), d(8e6, 5e8)];
        for objective in [Objective::MinSumTime, Objective::MinMaxTime] {
            let small = allocate_heuristic(&demands, Capacity::new(1e8, 1e10), objective)
                .unwrap()
                .objective_value;
            let large = allocate_heuristic(&demands, Capacity::new(3e8, 1e10), objective)
                .unwrap()
                .objective_value;
            assert!(large <= small * (1.0 + 1e-12));
            let gs = allocate_bruteforce(&demands, Capacity::new(1e8, 1e10), objective, 60)
                .unwrap()
                .objective_value;
            let gl = allocate_bruteforce(&demands, Capacity::new(2e8, 1e10), objective, 60)
                .unwrap()
                .objective_value;
            assert!(gl <= gs * (1.0 + 1e-12));
        }
    }

    #[test]
    fn starved_grid_is_infeasible() {
        // Four users that all need radio, but only a 2-step grid.
        let cap = Capacity::new(1e8, 1e10);
        let demands = [d(1e6, 0.0), d(1e6, 0.0), d(1e6, 0.0), d(1e6, 0.0)];
        for objective in [Objective::MinSumTime, Objective::MinMaxTime] {
            assert_eq!(
                allocate_bruteforce(&demands, cap, objective, 2).unwrap_err(),
                AllocError::Infeasible
            );
        }
    }

    fn plan_world() -> (crate::net::Sim, Vec<(UserId, crate::net::LinkId)>) {
        use crate::clone::spawn_clone;
        use crate::net::{NodeKind, Segment, Topology};
        use crate::world::World;

        let mut topo = Topology::new();
        let edge = topo.add_node("edge", NodeKind::EdgeCloudSite).unwrap();
        let central = topo.add_node("central", NodeKind::CentralCloud).unwrap();
        topo.add_link(central, edge, 1e9, 0.0, 0.0, Segment::Backhaul)
            .unwrap();
        let mut links = Vec::new();
        let mut users = Vec::new();
        for i in 0..2u32 {
            let dev = topo.add_node(&format!("dev{i}"), NodeKind::Device).unwrap();
            let l = topo
                .add_link(dev, edge, 1e7, 0.0, 0.0, Segment::AccessUp)
                .unwrap();
            users.push(UserId(i));
            links.push(l);
        }
        let mut world = World::bare(topo);
        let site = world.clones.add_site(edge, 4, 5e9);
        for &u in &users {
            world
                .clones
                .create_persistent(u, central, 1e9, 1_000)
                .unwrap();
        }
        let mut sim = crate::sim::Simulation::new(0, world);
        for &u in &users {
            spawn_clone(&mut sim, u, site, 0, 1e9, |_, r| r.unwrap()).unwrap();
        }
        sim.run_to_completion();
        (sim, users.into_iter().zip(links).collect())
    }

    #[test]
    fn plan_application_updates_rates_and_cpu() {
        let (mut sim, assignments) = plan_world();
        let plan = AllocationPlan {
            objective: Objective::MinSumTime,
            shares: vec![
                Share {
                    r_bps: 3e7,
                    f_ips: 2e9,
                },
                Share {
                    r_bps: 1e7,
                    f_ips: 3e9,
                },
            ],
            objective_value: 0.0,
        };
        apply_plan(&mut sim, &assignments, &plan).unwrap();
        assert_eq!(sim.world.topology.link(assignments[0].1).rate_bps, 3e7);
        assert_eq!(
            sim.world
                .clones
                .clone_of(UserId(1), Tier::Transient)
                .unwrap()
                .cpu_capacity,
            3e9
        );
        // Idempotent: applying the same plan again changes nothing.
        apply_plan(&mut sim, &assignments, &plan).unwrap();
        assert_eq!(sim.world.topology.link(assignments[0].1).rate_bps, 3e7);
        assert!(sim.world.clones.site_invariants_ok());
    }

    #[test]
    fn pool_violating_plan_is_rejected_atomically() {
        let (mut sim, assignments) = plan_world();
        let plan = AllocationPlan {
            objective: Objective::MinSumTime,
            shares: vec![
                Share {
                    r_bps: 3e7,
                    f_ips: 4e9,
                },
                Share {
                    r_bps: 1e7,
                    f_ips: 4e9, // 8e9 total > the 5e9 pool
                },
            ],
            objective_value: 0.0,
        };
        let err = apply_plan(&mut sim, &assignments, &plan).unwrap_err();
        assert!(matches!(err, AllocError::SiteOverload(_)));
        // Old allocation intact.
        assert_eq!(sim.world.topology.link(assignments[0].1).rate_bps, 1e7);
        assert_eq!(
            sim.world
                .clones
                .clone_of(UserId(0), Tier::Transient)
                .unwrap()
                .cpu_capacity,
            1e9
        );
    }

    #[test]
    fn oracle_bounds_are_enforced() {
        let cap = Capacity::new(1e8, 1e10);
        let five = vec![d(1e6, 1e9); 5];
        assert_eq!(
            allocate_bruteforce(&five, cap, Objective::MinSumTime, 10).unwrap_err(),
            AllocError::TooLargeForOracle(5)
        );
        assert_eq!(
            allocate_bruteforce(&five[..2], cap, Objective::MinSumTime, 1).unwrap_err(),
            AllocError::BadGrid(1)
        );
    }
}
