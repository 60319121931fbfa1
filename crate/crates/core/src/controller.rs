//! The per-domain IE Controller.
//!
//! A controller owns the registry of its (sub)domain: it grants every
//! registration, hands out suffixes and IPv6 addresses, tracks heartbeats
//! and evicts IEs that go silent. Colony IEs can be promoted to host an
//! auxiliary subdomain with its own nested controller and address block.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::net::Ipv6Addr;

use ipnet::Ipv6Net;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{
    derive_subdomain_controller, Asn, IeId, LayerKind, COLONY_MAX, COLONY_MIN, SPECIALIZED_MAX,
    SPECIALIZED_MIN,
};

pub const DEFAULT_MAX_IES: u64 = 100_000;
pub const DEFAULT_HEARTBEAT_INTERVAL: u64 = 10;
pub const DEFAULT_MISSED_HEARTBEATS: u64 = 3;

/// Smallest sub-block prefix length handed to an auxiliary subdomain.
const SUB_BLOCK_MIN_LEN: u8 = 64;
/// A block is only subdivided if the resulting sub-blocks are at most this long.
const SUB_BLOCK_MAX_LEN: u8 = 120;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControllerError {
    #[error("invalid address block: {0}")]
    InvalidBlock(String),
    #[error("{0} is already taken")]
    SuffixTaken(IeId),
    #[error("suffix {suffix} is outside the {layer} range")]
    SuffixOutOfRange { suffix: u32, layer: LayerRequest },
    #[error("capacity exhausted: {0}")]
    CapacityExhausted(String),
    #[error("{0} is not registered")]
    NotRegistered(IeId),
    #[error("{0} is already evicted")]
    AlreadyEvicted(IeId),
    #[error("the controller {0} cannot be evicted")]
    CannotEvictController(IeId),
    #[error("{0} is not a colony IE")]
    NotAColony(IeId),
    #[error("{0} already hosts a subdomain")]
    SubdomainExists(IeId),
    #[error("no sub-block left for a subdomain of {0}")]
    BlockExhausted(IeId),
}

/// Which layer a registration request asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerRequest {
    Specialized,
    Colony,
}

impl LayerRequest {
    fn range(self) -> (u32, u32) {
        match self {
            LayerRequest::Specialized => (SPECIALIZED_MIN, SPECIALIZED_MAX),
            LayerRequest::Colony => (COLONY_MIN, COLONY_MAX),
        }
    }
}

impl std::fmt::Display for LayerRequest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LayerRequest::Specialized => "specialized",
            LayerRequest::Colony => "colony",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntryStatus {
    Active,
    Evicted,
}

impl EntryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryStatus::Active => "Active",
            EntryStatus::Evicted => "Evicted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegistryEntry {
    pub id: IeId,
    pub layer: LayerKind,
    pub address: Ipv6Addr,
    pub status: EntryStatus,
    pub registered_at: u64,
    pub hosts_subdomain: bool,
}

impl RegistryEntry {
    pub fn is_active(&self) -> bool {
        self.status == EntryStatus::Active
    }

    /// One tab-separated snapshot record.
    pub fn snapshot_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.id,
            self.layer,
            self.address,
            self.status.as_str(),
            self.registered_at
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainConfig {
    pub asn: Asn,
    pub ipv6_block: Ipv6Net,
    pub max_ies: u64,
    /// Heartbeat period H, in ticks.
    pub heartbeat_interval: u64,
    /// Consecutive missed heartbeats M before automatic eviction.
    pub missed_heartbeats: u64,
}

impl DomainConfig {
    pub fn new(asn: Asn, ipv6_block: Ipv6Net) -> Self {
        Self {
            asn,
            ipv6_block,
            max_ies: DEFAULT_MAX_IES,
            heartbeat_interval: DEFAULT_HEARTBEAT_INTERVAL,
            missed_heartbeats: DEFAULT_MISSED_HEARTBEATS,
        }
    }

    pub fn with_max_ies(mut self, max_ies: u64) -> Self {
        self.max_ies = max_ies;
        self
    }
}

/// How a block is carved: the first `own_span` offsets serve the
/// controller's own registry, and the remaining sub-blocks (if any) go to
/// auxiliary subdomains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BlockLayout {
    own_span: u128,
    sub_len: Option<u8>,
    sub_count: u128,
}

impl BlockLayout {
    fn of(block: &Ipv6Net) -> Self {
        let len = block.prefix_len();
        let sub_len = SUB_BLOCK_MIN_LEN.max(len.saturating_add(16));
        if sub_len <= SUB_BLOCK_MAX_LEN {
            BlockLayout {
                own_span: 1u128 << (128 - sub_len),
                sub_len: Some(sub_len),
                sub_count: 1u128 << (sub_len - len),
            }
        } else {
            BlockLayout {
                own_span: 1u128 << (128 - len),
                sub_len: None,
                sub_count: 0,
            }
        }
    }

    /// Addresses available to the controller's own registry (offset 0 is
    /// the network address and never handed out).
    fn usable(&self) -> u128 {
        self.own_span - 1
    }
}

#[derive(Debug, Clone)]
pub struct DomainController {
    id: IeId,
    config: DomainConfig,
    layout: BlockLayout,
    clock: u64,
    entries: BTreeMap<IeId, RegistryEntry>,
    taken: BTreeSet<u32>,
    specialized_cursor: u64,
    colony_cursor: u64,
    free_offsets: BTreeSet<u128>,
    next_offset: u128,
    next_sub_block: u128,
    subdomains: BTreeMap<u32, DomainController>,
    last_heartbeat: BTreeMap<IeId, u64>,
    retired: bool,
}

/// Create a top-level domain with its `asn:0` controller.
pub fn create_domain(config: DomainConfig) -> Result<DomainController, ControllerError> {
    DomainController::build(IeId::controller(config.asn), config, 0)
}

impl DomainController {
    fn build(id: IeId, config: DomainConfig, clock: u64) -> Result<Self, ControllerError> {
        let block = config.ipv6_block;
        if block.trunc() != block {
            return Err(ControllerError::InvalidBlock(format!(
                "{block} has host bits set"
            )));
        }
        if config.max_ies == 0 {
            return Err(ControllerError::InvalidBlock("max_ies must be positive".into()));
        }
        if config.heartbeat_interval == 0 || config.missed_heartbeats == 0 {
            return Err(ControllerError::InvalidBlock(
                "heartbeat interval and missed count must be positive".into(),
            ));
        }
        let layout = BlockLayout::of(&block);
        if layout.usable() < u128::from(config.max_ies) {
            return Err(ControllerError::InvalidBlock(format!(
                "{block} offers {} addresses for {} IEs",
                layout.usable(),
                config.max_ies
            )));
        }
        let mut controller = DomainController {
            id: id.clone(),
            config,
            layout,
            clock,
            entries: BTreeMap::new(),
            taken: BTreeSet::new(),
            specialized_cursor: u64::from(SPECIALIZED_MIN),
            colony_cursor: u64::from(COLONY_MIN),
            free_offsets: BTreeSet::new(),
            next_offset: 1,
            next_sub_block: 1,
            subdomains: BTreeMap::new(),
            last_heartbeat: BTreeMap::new(),
            retired: false,
        };
        let address = controller
            .allocate_address()
            .expect("validated block has at least one address");
        controller.entries.insert(
            id.clone(),
            RegistryEntry {
                layer: id.layer(),
                id,
                address,
                status: EntryStatus::Active,
                registered_at: clock,
                hosts_subdomain: false,
            },
        );
        Ok(controller)
    }

    pub fn id(&self) -> &IeId {
        &self.id
    }

    pub fn asn(&self) -> Asn {
        self.config.asn
    }

    pub fn config(&self) -> &DomainConfig {
        &self.config
    }

    pub fn block(&self) -> Ipv6Net {
        self.config.ipv6_block
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    /// Set the logical time here and in every nested subdomain.
    pub fn set_clock(&mut self, tick: u64) {
        self.clock = tick;
        for sub in self.subdomains.values_mut() {
            sub.set_clock(tick);
        }
    }

    pub fn is_retired(&self) -> bool {
        self.retired
    }

    /// Entries of this registry only, in id order.
    pub fn entries(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.values()
    }

    pub fn active_count(&self) -> usize {
        self.entries.values().filter(|e| e.is_active()).count()
    }

    pub fn subdomains(&self) -> impl Iterator<Item = &DomainController> {
        self.subdomains.values()
    }

    /// Entries of this registry and all nested ones, sorted by id.
    pub fn all_entries(&self) -> Vec<&RegistryEntry> {
        let mut out: Vec<&RegistryEntry> = self.entries.values().collect();
        for sub in self.subdomains.values() {
            out.extend(sub.all_entries());
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        out
    }

    fn offset_address(&self, offset: u128) -> Ipv6Addr {
        Ipv6Addr::from(u128::from(self.config.ipv6_block.network()) + offset)
    }

    fn allocate_address(&mut self) -> Option<Ipv6Addr> {
        let offset = if let Some(&o) = self.free_offsets.iter().next() {
            self.free_offsets.remove(&o);
            o
        } else if self.next_offset < self.layout.own_span {
            let o = self.next_offset;
            self.next_offset += 1;
            o
        } else {
            return None;
        };
        Some(self.offset_address(offset))
    }

    fn peek_address_available(&self) -> bool {
        !self.free_offsets.is_empty() || self.next_offset < self.layout.own_span
    }

    fn release_address(&mut self, address: Ipv6Addr) {
        let offset = u128::from(address) - u128::from(self.config.ipv6_block.network());
        self.free_offsets.insert(offset);
    }

    fn lowest_free(&self, request: LayerRequest) -> Option<u32> {
        let (_, hi) = request.range();
        let mut candidate = match request {
            LayerRequest::Specialized => self.specialized_cursor,
            LayerRequest::Colony => self.colony_cursor,
        };
        // Suffixes are never released, so a cursor plus a skip over
        // explicitly requested ones finds the lowest free value.
        while candidate <= u64::from(hi) {
            let c = candidate as u32;
            if !self.taken.contains(&c) {
                return Some(c);
            }
            candidate += 1;
        }
        None
    }

    /// Ask the controller for consent to create a new IE in this registry.
    pub fn request_registration(
        &mut self,
        request: LayerRequest,
        requested_suffix: Option<u32>,
    ) -> Result<RegistryEntry, ControllerError> {
        let (lo, hi) = request.range();
        let suffix = match requested_suffix {
            Some(s) if !(lo..=hi).contains(&s) => {
                return Err(ControllerError::SuffixOutOfRange { suffix: s, layer: request })
            }
            Some(s) if self.taken.contains(&s) => {
                return Err(ControllerError::SuffixTaken(self.id.sibling(s)))
            }
            Some(s) => s,
            None => self.lowest_free(request).ok_or_else(|| {
                ControllerError::CapacityExhausted(format!("no free {request} suffix"))
            })?,
        };
        if self.active_count() as u64 >= self.config.max_ies {
            return Err(ControllerError::CapacityExhausted(format!(
                "{} active IEs",
                self.config.max_ies
            )));
        }
        if !self.peek_address_available() {
            return Err(ControllerError::CapacityExhausted(format!(
                "address block {} exhausted",
                self.config.ipv6_block
            )));
        }
        let address = self.allocate_address().expect("checked above");
        let id = self.id.sibling(suffix);
        self.taken.insert(suffix);
        let cursor = match request {
            LayerRequest::Specialized => &mut self.specialized_cursor,
            LayerRequest::Colony => &mut self.colony_cursor,
        };
        if u64::from(suffix) == *cursor {
            *cursor += 1;
        }
        let entry = RegistryEntry {
            layer: id.layer(),
            id: id.clone(),
            address,
            status: EntryStatus::Active,
            registered_at: self.clock,
            hosts_subdomain: false,
        };
        self.last_heartbeat.insert(id.clone(), self.clock);
        self.entries.insert(id, entry.clone());
        Ok(entry)
    }

    /// Evict an IE of this registry. See [`DomainController::evict_cascade`]
    /// for the full list of entries evicted alongside it.
    pub fn evict(&mut self, id: &IeId) -> Result<RegistryEntry, ControllerError> {
        self.evict_cascade(id)
            .map(|mut evicted| evicted.swap_remove(0))
    }

    /// Evict `id`; if it hosts a subdomain, every IE of that subdomain is
    /// evicted too. The first returned entry is `id` itself. Works on any
    /// nested registry reachable from this controller.
    pub fn evict_cascade(&mut self, id: &IeId) -> Result<Vec<RegistryEntry>, ControllerError> {
        if id == &self.id {
            return Err(ControllerError::CannotEvictController(id.clone()));
        }
        if id.domain_path() != self.id.domain_path() {
            return match self.owner_mut(id) {
                Some(owner) => owner.evict_cascade(id),
                None => Err(ControllerError::NotRegistered(id.clone())),
            };
        }
        let entry = self
            .entries
            .get_mut(id)
            .ok_or_else(|| ControllerError::NotRegistered(id.clone()))?;
        if !entry.is_active() {
            return Err(ControllerError::AlreadyEvicted(id.clone()));
        }
        entry.status = EntryStatus::Evicted;
        let evicted = entry.clone();
        self.last_heartbeat.remove(id);
        self.release_address(evicted.address);
        let mut out = vec![evicted];
        if let Some(sub) = self.subdomains.get_mut(&id.suffix()) {
            sub.retire(&mut out);
        }
        Ok(out)
    }

    fn retire(&mut self, out: &mut Vec<RegistryEntry>) {
        self.retired = true;
        self.last_heartbeat.clear();
        for entry in self.entries.values_mut() {
            if entry.is_active() {
                entry.status = EntryStatus::Evicted;
                out.push(entry.clone());
            }
        }
        for sub in self.subdomains.values_mut() {
            sub.retire(out);
        }
    }

    /// Look up an entry of this registry only.
    pub fn lookup(&self, id: &IeId) -> Result<&RegistryEntry, ControllerError> {
        self.entries
            .get(id)
            .ok_or_else(|| ControllerError::NotRegistered(id.clone()))
    }

    /// Look up an entry in this registry or any nested subdomain.
    pub fn find(&self, id: &IeId) -> Option<&RegistryEntry> {
        self.owner(id)?.entries.get(id)
    }

    pub fn is_active(&self, id: &IeId) -> bool {
        self.find(id).is_some_and(RegistryEntry::is_active)
    }

    fn relative_path<'a>(&self, id: &'a IeId) -> Option<&'a [u32]> {
        if id.asn() != self.asn() {
            return None;
        }
        id.domain_path().strip_prefix(self.id.domain_path())
    }

    /// The controller whose registry `id` belongs to.
    pub fn owner(&self, id: &IeId) -> Option<&DomainController> {
        let mut current = self;
        for colony in self.relative_path(id)? {
            current = current.subdomains.get(colony)?;
        }
        Some(current)
    }

    pub fn owner_mut(&mut self, id: &IeId) -> Option<&mut DomainController> {
        let rel = self.relative_path(id)?.to_vec();
        let mut current = self;
        for colony in rel {
            current = current.subdomains.get_mut(&colony)?;
        }
        Some(current)
    }

    /// Turn an Active colony IE into the origin of an auxiliary subdomain.
    /// Colonies in nested registries are delegated to their owner.
    pub fn spawn_auxiliary(&mut self, colony_id: &IeId) -> Result<&DomainController, ControllerError> {
        let sub_id = derive_subdomain_controller(colony_id)
            .map_err(|_| ControllerError::NotAColony(colony_id.clone()))?;
        if colony_id.domain_path() != self.id.domain_path() {
            let owner = match self.owner_mut(colony_id) {
                Some(owner) if owner.id.domain_path() == colony_id.domain_path() => owner,
                _ => return Err(ControllerError::NotRegistered(colony_id.clone())),
            };
            return owner.spawn_auxiliary(colony_id);
        }
        match self.entries.get(colony_id) {
            Some(e) if e.is_active() => {}
            _ => return Err(ControllerError::NotRegistered(colony_id.clone())),
        }
        let suffix = colony_id.suffix();
        if self.subdomains.contains_key(&suffix) {
            return Err(ControllerError::SubdomainExists(colony_id.clone()));
        }
        let sub_len = match self.layout.sub_len {
            Some(len) if self.next_sub_block < self.layout.sub_count => len,
            _ => return Err(ControllerError::BlockExhausted(colony_id.clone())),
        };
        let base = u128::from(self.config.ipv6_block.network())
            + (self.next_sub_block << (128 - sub_len));
        let block = Ipv6Net::new(Ipv6Addr::from(base), sub_len).expect("sub_len <= 128");
        let usable = BlockLayout::of(&block).usable();
        let config = DomainConfig {
            asn: self.config.asn,
            ipv6_block: block,
            max_ies: u64::try_from(usable).unwrap_or(u64::MAX).min(self.config.max_ies),
            heartbeat_interval: self.config.heartbeat_interval,
            missed_heartbeats: self.config.missed_heartbeats,
        };
        let sub = DomainController::build(sub_id, config, self.clock)
            .map_err(|_| ControllerError::BlockExhausted(colony_id.clone()))?;
        self.next_sub_block += 1;
        self.entries
            .get_mut(colony_id)
            .expect("checked above")
            .hosts_subdomain = true;
        Ok(self.subdomains.entry(suffix).or_insert(sub))
    }

    /// Record a heartbeat from `id` at the current clock. Returns `false`
    /// if `id` is not an Active non-controller IE of any reachable registry.
    pub fn record_heartbeat(&mut self, id: &IeId) -> bool {
        let Some(owner) = self.owner_mut(id) else {
            return false;
        };
        let clock = owner.clock;
        match owner.last_heartbeat.get_mut(id) {
            Some(last) => {
                *last = clock;
                true
            }
            None => false,
        }
    }

    /// Evict every IE, here and in nested subdomains, whose last heartbeat
    /// is more than `M * H` ticks old. Returns all entries evicted,
    /// including cascades.
    pub fn sweep_liveness(&mut self) -> Vec<RegistryEntry> {
        let window = self.config.heartbeat_interval * self.config.missed_heartbeats;
        let stale: Vec<IeId> = self
            .last_heartbeat
            .iter()
            .filter(|(_, &last)| self.clock.saturating_sub(last) > window)
            .map(|(id, _)| id.clone())
            .collect();
        let mut out = Vec::new();
        for id in stale {
            if let Ok(evicted) = self.evict_cascade(&id) {
                out.extend(evicted);
            }
        }
        for sub in self.subdomains.values_mut().filter(|s| !s.retired) {
            out.extend(sub.sweep_liveness());
        }
        out
    }

    /// Snapshot of this registry and every nested one, one record per line,
    /// sorted by id.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        for entry in self.all_entries() {
            let _ = writeln!(out, "{}", entry.snapshot_line());
        }
        out
    }
}
