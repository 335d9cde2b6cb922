//! Per-user clones: compute capacity, storage with LRU content caching, and
//! the spawn/active/migrate/destroy lifecycle across the transient edge tier
//! and the persistent central tier.
//!
//! A user has at most one clone per tier at any instant. The persistent
//! clone is always active at the central cloud and has no slot limits; the
//! transient clone occupies an edge-site slot and a share of the site's cpu
//! pool from the moment it starts spawning. Destroying a transient clone
//! discards its cache; the persistent tier keeps whatever was stored there.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::metrics::keys;
use crate::net::{start_transfer, NetError, NodeId, SessionSpec, Sim};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct UserId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    Transient,
    Persistent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloneState {
    Absent,
    Spawning,
    Active,
    Migrating,
    Destroyed,
}

/// Legal lifecycle transitions.
pub fn legal_transition(from: CloneState, to: CloneState) -> bool {
    use CloneState::*;
    matches!(
        (from, to),
        (Absent, Spawning)
            | (Spawning, Active)
            | (Active, Migrating)
            | (Migrating, Active)
            | (Active, Destroyed)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub user: UserId,
    pub tier: Tier,
    pub from: CloneState,
    pub to: CloneState,
}

/// Replay a transition log against the lifecycle table. Every sequence must
/// start from `Absent` and only take legal steps.
pub fn audit_transitions(log: &[Transition]) -> Result<(), String> {
    let mut current: BTreeMap<(UserId, Tier), CloneState> = BTreeMap::new();
    for (i, t) in log.iter().enumerate() {
        let entry = current
            .entry((t.user, t.tier))
            .or_insert(CloneState::Absent);
        // A destroyed clone may be replaced by a fresh lifecycle.
        if *entry == CloneState::Destroyed && t.from == CloneState::Absent {
            *entry = CloneState::Absent;
        }
        if *entry != t.from {
            return Err(format!(
                "record {i}: user {:?} {:?} was {:?}, log claims {:?}",
                t.user, t.tier, entry, t.from
            ));
        }
        if !legal_transition(t.from, t.to) {
            return Err(format!(
                "record {i}: illegal transition {:?} -> {:?} for user {:?}",
                t.from, t.to, t.user
            ));
        }
        *entry = t.to;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContentItem {
    pub id: String,
    pub size: u64,
}

impl ContentItem {
    pub fn new(id: impl Into<String>, size: u64) -> Self {
        assert!(size > 0, "content size must be > 0");
        ContentItem {
            id: id.into(),
            size,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CloneError {
    #[error("spawn rejected: {0}")]
    SpawnRejected(&'static str),
    #[error("migration rejected: {0}")]
    MigrationRejected(&'static str),
    #[error("illegal transition {from:?} -> {to:?}")]
    IllegalTransition { from: CloneState, to: CloneState },
    #[error("user has no {0:?} clone")]
    NoClone(Tier),
    #[error("clone is not active")]
    NotActive,
    #[error("destroying a persistent clone is a configuration error")]
    DestroyPersistent,
    #[error("item of {size} bytes exceeds storage capacity {capacity}")]
    ItemTooLarge { size: u64, capacity: u64 },
    #[error("no path between the sites involved")]
    NoPath,
    #[error("state transfer failed: {0}")]
    TransferFailed(NetError),
}

/// Byte-budgeted LRU cache.
#[derive(Debug, Clone, Default)]
pub struct LruCache {
    capacity: u64,
    used: u64,
    tick: u64,
    entries: BTreeMap<String, (u64, u64)>, // id -> (size, stamp)
    order: BTreeMap<u64, String>,          // stamp -> id
}

impl LruCache {
    pub fn new(capacity: u64) -> Self {
        LruCache {
            capacity,
            ..LruCache::default()
        }
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn touch(&mut self, id: &str) {
        let (_, stamp) = self.entries[id];
        self.order.remove(&stamp);
        self.tick += 1;
        self.order.insert(self.tick, id.to_string());
        self.entries.get_mut(id).unwrap().1 = self.tick;
    }

    /// Lookup that refreshes recency on a hit.
    pub fn get(&mut self, id: &str) -> Option<u64> {
        if self.entries.contains_key(id) {
            self.touch(id);
            Some(self.entries[id].0)
        } else {
            None
        }
    }

    /// Lookup without touching recency.
    pub fn peek(&self, id: &str) -> Option<u64> {
        self.entries.get(id).map(|(size, _)| *size)
    }

    /// Insert or refresh an item, evicting least-recently-used entries until
    /// the byte budget holds. Returns the evicted items, oldest first.
    pub fn put(&mut self, item: ContentItem) -> Result<Vec<ContentItem>, CloneError> {
        if item.size > self.capacity {
            return Err(CloneError::ItemTooLarge {
                size: item.size,
                capacity: self.capacity,
            });
        }
        if let Some((old_size, old_stamp)) = self.entries.remove(&item.id) {
            self.used -= old_size;
            self.order.remove(&old_stamp);
        }
        self.tick += 1;
        self.used += item.size;
        self.entries.insert(item.id.clone(), (item.size, self.tick));
        self.order.insert(self.tick, item.id);

        let mut evicted = Vec::new();
        while self.used > self.capacity {
            let (&stamp, id) = self
                .order
                .iter()
                .next()
                .expect("over budget implies entries");
            let id = id.clone();
            self.order.remove(&stamp);
            let (size, _) = self.entries.remove(&id).expect("indexed entry");
            self.used -= size;
            evicted.push(ContentItem { id, size });
        }
        Ok(evicted)
    }

    /// Entries sorted by id, for content-equality checks.
    pub fn items(&self) -> Vec<ContentItem> {
        self.entries
            .iter()
            .map(|(id, (size, _))| ContentItem {
                id: id.clone(),
                size: *size,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Clone {
    pub owner: UserId,
    pub tier: Tier,
    pub state: CloneState,
    pub site: NodeId,
    pub cpu_capacity: f64,
    pub storage_capacity: u64,
    pub profile_size: u64,
    pub cache: LruCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SiteId(pub usize);

/// An edge cloud site with admission limits for transient clones.
#[derive(Debug, Clone)]
pub struct EdgeSite {
    pub node: NodeId,
    pub slot_capacity: usize,
    pub cpu_pool: f64,
    slots_used: usize,
    cpu_used: f64,
}

impl EdgeSite {
    pub fn slots_free(&self) -> usize {
        self.slot_capacity - self.slots_used
    }

    pub fn cpu_free(&self) -> f64 {
        self.cpu_pool - self.cpu_used
    }

    pub fn slots_used(&self) -> usize {
        self.slots_used
    }

    pub fn cpu_used(&self) -> f64 {
        self.cpu_used
    }
}

#[derive(Debug, Default)]
pub struct CloneRegistry {
    clones: BTreeMap<(UserId, Tier), Clone>,
    sites: Vec<EdgeSite>,
    log: Vec<Transition>,
}

impl CloneRegistry {
    pub fn new() -> Self {
        CloneRegistry::default()
    }

    pub fn add_site(&mut self, node: NodeId, slot_capacity: usize, cpu_pool: f64) -> SiteId {
        self.sites.push(EdgeSite {
            node,
            slot_capacity,
            cpu_pool,
            slots_used: 0,
            cpu_used: 0.0,
        });
        SiteId(self.sites.len() - 1)
    }

    pub fn site(&self, id: SiteId) -> &EdgeSite {
        &self.sites[id.0]
    }

    pub fn sites(&self) -> impl Iterator<Item = (SiteId, &EdgeSite)> {
        self.sites.iter().enumerate().map(|(i, s)| (SiteId(i), s))
    }

    pub fn site_of_node(&self, node: NodeId) -> Option<SiteId> {
        self.sites.iter().position(|s| s.node == node).map(SiteId)
    }

    pub fn clone_of(&self, user: UserId, tier: Tier) -> Option<&Clone> {
        self.clones.get(&(user, tier))
    }

    pub fn clone_mut(&mut self, user: UserId, tier: Tier) -> Option<&mut Clone> {
        self.clones.get_mut(&(user, tier))
    }

    pub fn transition_log(&self) -> &[Transition] {
        &self.log
    }

    fn record(&mut self, user: UserId, tier: Tier, from: CloneState, to: CloneState) {
        self.log.push(Transition {
            user,
            tier,
            from,
            to,
        });
    }

    fn transition(&mut self, user: UserId, tier: Tier, to: CloneState) -> Result<(), CloneError> {
        let clone = self
            .clones
            .get_mut(&(user, tier))
            .ok_or(CloneError::NoClone(tier))?;
        let from = clone.state;
        if !legal_transition(from, to) {
            return Err(CloneError::IllegalTransition { from, to });
        }
        clone.state = to;
        self.record(user, tier, from, to);
        Ok(())
    }

    /// The always-active durable clone at the central cloud.
    pub fn create_persistent(
        &mut self,
        user: UserId,
        node: NodeId,
        cpu_capacity: f64,
        storage_capacity: u64,
    ) -> Result<(), CloneError> {
        if self.clones.contains_key(&(user, Tier::Persistent)) {
            return Err(CloneError::IllegalTransition {
                from: CloneState::Active,
                to: CloneState::Spawning,
            });
        }
        self.clones.insert(
            (user, Tier::Persistent),
            Clone {
                owner: user,
                tier: Tier::Persistent,
                state: CloneState::Active,
                site: node,
                cpu_capacity,
                storage_capacity,
                profile_size: 0,
                cache: LruCache::new(storage_capacity),
            },
        );
        self.record(
            user,
            Tier::Persistent,
            CloneState::Absent,
            CloneState::Spawning,
        );
        self.record(
            user,
            Tier::Persistent,
            CloneState::Spawning,
            CloneState::Active,
        );
        Ok(())
    }

    /// Re-point a transient clone's cpu share, keeping site accounting
    /// in step. The caller is responsible for pool validation.
    pub fn set_clone_cpu(&mut self, user: UserId, cpu: f64) -> Result<(), CloneError> {
        let clone = self
            .clones
            .get_mut(&(user, Tier::Transient))
            .ok_or(CloneError::NoClone(Tier::Transient))?;
        let old = clone.cpu_capacity;
        let node = clone.site;
        clone.cpu_capacity = cpu;
        if let Some(site) = self.sites.iter_mut().find(|s| s.node == node) {
            site.cpu_used += cpu - old;
        }
        Ok(())
    }

    /// Per-site admission invariants, recomputed from scratch.
    pub fn site_invariants_ok(&self) -> bool {
        for (sid, site) in self.sites.iter().enumerate() {
            if site.slots_used > site.slot_capacity || site.cpu_used > site.cpu_pool + 1e-9 {
                return false;
            }
            let live: Vec<&Clone> = self
                .clones
                .values()
                .filter(|c| {
                    c.tier == Tier::Transient
                        && c.site == site.node
                        && c.state != CloneState::Destroyed
                })
                .collect();
            let active = live
                .iter()
                .filter(|c| c.state == CloneState::Active)
                .count();
            if active > site.slot_capacity {
                return false;
            }
            let cpu: f64 = live.iter().map(|c| c.cpu_capacity).sum();
            if cpu > site.cpu_pool + 1e-9 {
                return false;
            }
            let _ = sid;
        }
        true
    }
}

/// Spawn a transient clone: admit at the site, pull `profile_size` bytes
/// from the user's persistent clone over the backhaul, then go active.
/// Admission failures surface synchronously; `on_done` fires when the clone
/// becomes active.
pub fn spawn_clone(
    sim: &mut Sim,
    user: UserId,
    site_id: SiteId,
    profile_size: u64,
    cpu_capacity: f64,
    on_done: impl FnOnce(&mut Sim, Result<(), CloneError>) + 'static,
) -> Result<(), CloneError> {
    let persistent_site = sim
        .world
        .clones
        .clone_of(user, Tier::Persistent)
        .ok_or(CloneError::NoClone(Tier::Persistent))?
        .site;
    let storage_capacity = sim
        .world
        .clones
        .clone_of(user, Tier::Persistent)
        .map(|c| c.storage_capacity)
        .unwrap_or(0);
    if sim.world.clones.clone_of(user, Tier::Transient).is_some() {
        return Err(CloneError::SpawnRejected("user already has an edge clone"));
    }
    let site = sim.world.clones.site(site_id);
    if site.slots_free() == 0 {
        return Err(CloneError::SpawnRejected("no free slot at the site"));
    }
    if cpu_capacity > site.cpu_free() + 1e-9 {
        return Err(CloneError::SpawnRejected("site cpu pool exhausted"));
    }
    let site_node = site.node;
    let path = sim
        .world
        .topology
        .shortest_path(persistent_site, site_node)
        .ok_or(CloneError::NoPath)?;

    {
        let reg = &mut sim.world.clones;
        reg.sites[site_id.0].slots_used += 1;
        reg.sites[site_id.0].cpu_used += cpu_capacity;
        reg.clones.insert(
            (user, Tier::Transient),
            Clone {
                owner: user,
                tier: Tier::Transient,
                state: CloneState::Absent,
                site: site_node,
                cpu_capacity,
                storage_capacity,
                profile_size,
                cache: LruCache::new(storage_capacity),
            },
        );
        reg.transition(user, Tier::Transient, CloneState::Spawning)
            .expect("fresh clone spawns");
    }

    let flow = sim.world.next_flow_id();
    let spec = SessionSpec::bulk(flow, path, persistent_site, profile_size);
    start_transfer(sim, spec, move |s, outcome| match outcome {
        Ok(_) => {
            s.world
                .clones
                .transition(user, Tier::Transient, CloneState::Active)
                .expect("spawning clone activates");
            s.world.metrics.add_count(keys::COUNT_SPAWN);
            on_done(s, Ok(()));
        }
        Err(e) => on_done(s, Err(CloneError::TransferFailed(e))),
    })
    .map_err(CloneError::TransferFailed)?;
    Ok(())
}

/// Tear down an active transient clone, releasing its slot and cpu share.
/// The edge cache is discarded; the persistent tier keeps its copy.
pub fn destroy_clone(sim: &mut Sim, user: UserId) -> Result<(), CloneError> {
    let clone = sim
        .world
        .clones
        .clone_of(user, Tier::Transient)
        .ok_or(CloneError::NoClone(Tier::Transient))?;
    let (site_node, cpu) = (clone.site, clone.cpu_capacity);
    sim.world
        .clones
        .transition(user, Tier::Transient, CloneState::Destroyed)?;
    let reg = &mut sim.world.clones;
    let site_id = reg.site_of_node(site_node).expect("clone site registered");
    reg.sites[site_id.0].slots_used -= 1;
    reg.sites[site_id.0].cpu_used -= cpu;
    reg.clones.remove(&(user, Tier::Transient));
    sim.world.metrics.add_count(keys::COUNT_DESTROY);
    Ok(())
}

/// Destroying a persistent clone is never legal.
pub fn destroy_persistent(_sim: &mut Sim, _user: UserId) -> Result<(), CloneError> {
    Err(CloneError::DestroyPersistent)
}

/// Move an active transient clone to another site, transferring profile plus
/// cached bytes over the inter-site path. On rejection the clone stays
/// active at the source and nothing moves.
pub fn migrate_clone(
    sim: &mut Sim,
    user: UserId,
    dst_site: SiteId,
    on_done: impl FnOnce(&mut Sim, Result<u64, CloneError>) + 'static,
) -> Result<(), CloneError> {
    let clone = sim
        .world
        .clones
        .clone_of(user, Tier::Transient)
        .ok_or(CloneError::NoClone(Tier::Transient))?;
    if clone.state != CloneState::Active {
        return Err(CloneError::NotActive);
    }
    let (src_node, cpu, bytes) = (
        clone.site,
        clone.cpu_capacity,
        clone.profile_size + clone.cache.used(),
    );
    let dst = sim.world.clones.site(dst_site);
    let dst_node = dst.node;
    if dst_node == src_node {
        return Err(CloneError::MigrationRejected("already at the destination"));
    }
    if dst.slots_free() == 0 {
        return Err(CloneError::MigrationRejected("destination site is full"));
    }
    if cpu > dst.cpu_free() + 1e-9 {
        return Err(CloneError::MigrationRejected(
            "destination cpu pool exhausted",
        ));
    }
    let path = sim
        .world
        .topology
        .shortest_path(src_node, dst_node)
        .ok_or(CloneError::NoPath)?;

    sim.world
        .clones
        .transition(user, Tier::Transient, CloneState::Migrating)?;
    // Reserve the destination for the whole migration.
    sim.world.clones.sites[dst_site.0].slots_used += 1;
    sim.world.clones.sites[dst_site.0].cpu_used += cpu;

    let flow = sim.world.next_flow_id();
    let spec = SessionSpec::bulk(flow, path, src_node, bytes);
    start_transfer(sim, spec, move |s, outcome| match outcome {
        Ok(stats) => {
            let reg = &mut s.world.clones;
            let src_site = reg.site_of_node(src_node).expect("source site registered");
            reg.sites[src_site.0].slots_used -= 1;
            reg.sites[src_site.0].cpu_used -= cpu;
            reg.clone_mut(user, Tier::Transient)
                .expect("migrating clone exists")
                .site = dst_node;
            reg.transition(user, Tier::Transient, CloneState::Active)
                .expect("migrating clone re-activates");
            s.world.metrics.add_count(keys::COUNT_MIGRATE);
            on_done(s, Ok(stats.delivered_bytes));
        }
        Err(e) => on_done(s, Err(CloneError::TransferFailed(e))),
    })
    .map_err(CloneError::TransferFailed)?;
    Ok(())
}

/// Cache lookup on a user's clone; refreshes recency and counts hit/miss.
pub fn cache_get(
    sim: &mut Sim,
    user: UserId,
    tier: Tier,
    content_id: &str,
) -> Result<Option<u64>, CloneError> {
    let clone = sim
        .world
        .clones
        .clone_mut(user, tier)
        .ok_or(CloneError::NoClone(tier))?;
    if clone.state != CloneState::Active {
        return Err(CloneError::NotActive);
    }
    let hit = clone.cache.get(content_id);
    if hit.is_some() {
        sim.world.metrics.add_count(keys::COUNT_CACHE_HIT);
    } else {
        sim.world.metrics.add_count(keys::COUNT_CACHE_MISS);
    }
    Ok(hit)
}

/// Cache insert on a user's clone.
pub fn cache_put(
    sim: &mut Sim,
    user: UserId,
    tier: Tier,
    item: ContentItem,
) -> Result<Vec<ContentItem>, CloneError> {
    let clone = sim
        .world
        .clones
        .clone_mut(user, tier)
        .ok_or(CloneError::NoClone(tier))?;
    if clone.state != CloneState::Active {
        return Err(CloneError::NotActive);
    }
    clone.cache.put(item)
}
