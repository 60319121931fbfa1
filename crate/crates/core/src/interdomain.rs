//! Multi-domain harness: scenario files, inter-domain links and the
//! scheduler that steps every domain.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ipnet::{IpNet, Ipv6Net};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    DomainConfig, LayerRequest, DEFAULT_HEARTBEAT_INTERVAL, DEFAULT_MAX_IES, DEFAULT_MISSED_HEARTBEATS,
};
use crate::identity::{Asn, IeId};
use crate::iirr::{resolve_human_task, Decision, HumanTaskQueue, IrrStore, PolicyDecl};
use crate::ledger::{merge, Ledger};
use crate::rpsl::parse_object;
use crate::runtime::{
    AgentRole, Delivery, Domain, Event, EventKind, Message, MessageKind, SharedState, WorkerParams,
};
use crate::skau::{rebuild_kb, KnowledgeBase, Pipeline, DEFAULT_TOP_K};

pub const DEFAULT_MAX_TICKS: u64 = 200;

fn default_max_ticks() -> u64 {
    DEFAULT_MAX_TICKS
}

fn one() -> u64 {
    1
}

fn one_u32() -> u32 {
    1
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "is_zero")]
    pub seed: u64,
    #[serde(default = "default_max_ticks")]
    pub max_ticks: u64,
    /// Ticks per inter-domain hop.
    #[serde(default = "one")]
    pub inter_domain_latency: u64,
    /// Directory of corpus documents, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// RPSL flat file loaded into the iIRR before the first tick.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irr_seed: Option<PathBuf>,
    #[serde(default)]
    pub links: Vec<[Asn; 2]>,
    #[serde(rename = "domain")]
    pub domains: Vec<DomainSpec>,
    #[serde(default, rename = "schedule", skip_serializing_if = "Vec::is_empty")]
    pub schedule: Vec<ScheduleEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub asn: Asn,
    pub block: Ipv6Net,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ies: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heartbeat: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missed_heartbeats: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agents: Vec<AgentSpec>,
}

impl DomainSpec {
    pub fn domain_config(&self) -> DomainConfig {
        DomainConfig {
            asn: self.asn,
            ipv6_block: self.block,
            max_ies: self.max_ies.unwrap_or(DEFAULT_MAX_IES),
            heartbeat_interval: self.heartbeat.unwrap_or(DEFAULT_HEARTBEAT_INTERVAL),
            missed_heartbeats: self.missed_heartbeats.unwrap_or(DEFAULT_MISSED_HEARTBEATS),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub as_name: Option<String>,
    #[serde(default)]
    pub prefixes: Vec<IpNet>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleName {
    IrrMaintainer,
    KnowledgeServer,
    LedgerAgent,
    Worker,
}

/// `count` IEs of one layer, optionally all given the same role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub layer: LayerRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleName>,
    #[serde(default = "one_u32")]
    pub count: u32,
    /// irr-maintainer: run every `interval` ticks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<u64>,
    /// knowledge-server: seed terms for this domain's dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<Vec<String>>,
}

impl AgentSpec {
    fn check(&self) -> Result<(), String> {
        let role = self.role.map(role_name);
        let misplaced = |field: &str, wanted: RoleName| {
            format!("`{field}` only applies to role {}", role_name(wanted))
        };
        if self.interval.is_some() && self.role != Some(RoleName::IrrMaintainer) {
            return Err(misplaced("interval", RoleName::IrrMaintainer));
        }
        if self.interval == Some(0) {
            return Err("`interval` must be positive".into());
        }
        if self.seeds.is_some() && self.role != Some(RoleName::KnowledgeServer) {
            return Err(misplaced("seeds", RoleName::KnowledgeServer));
        }
        for (field, value) in [("query_rate", self.query_rate), ("remote_rate", self.remote_rate)] {
            if value.is_some() && self.role != Some(RoleName::Worker) {
                return Err(misplaced(field, RoleName::Worker));
            }
            if let Some(v) = value {
                if !(0.0..=1.0).contains(&v) {
                    return Err(format!("`{field}` must lie in [0, 1]"));
                }
            }
        }
        if self.terms.is_some() && self.role != Some(RoleName::Worker) {
            return Err(misplaced("terms", RoleName::Worker));
        }
        let fits = match (self.role, self.layer) {
            (None, _) => true,
            (Some(RoleName::Worker), l) => l == LayerRequest::Colony,
            (Some(_), l) => l == LayerRequest::Specialized,
        };
        if !fits {
            return Err(format!("role {} cannot run on the {} layer", role.unwrap_or(""), self.layer));
        }
        Ok(())
    }

    fn role(&self) -> Option<AgentRole> {
        Some(match self.role? {
            RoleName::IrrMaintainer => AgentRole::IrrMaintainer {
                interval: self.interval.unwrap_or(1),
            },
            RoleName::KnowledgeServer => AgentRole::KnowledgeServer,
            RoleName::LedgerAgent => AgentRole::LedgerAgent,
            RoleName::Worker => {
                let d = WorkerParams::default();
                AgentRole::Worker(WorkerParams {
                    query_rate: self.query_rate.unwrap_or(d.query_rate),
                    remote_rate: self.remote_rate.unwrap_or(d.remote_rate),
                    terms: self.terms.clone().unwrap_or_default(),
                })
            }
        })
    }
}

fn role_name(r: RoleName) -> &'static str {
    match r {
        RoleName::IrrMaintainer => "irr-maintainer",
        RoleName::KnowledgeServer => "knowledge-server",
        RoleName::LedgerAgent => "ledger-agent",
        RoleName::Worker => "worker",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionName {
    Send,
    Crash,
    Evict,
    Register,
    SpawnAuxiliary,
    ResolveTask,
}

/// One timed action, run at tick `at` before the domains step to `at + 1`.
/// Which fields are required depends on `action`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub at: u64,
    pub action: ActionName,
    /// crash / evict / spawn-auxiliary.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<IeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<IeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to: Option<IeId>,
    /// send: relay through this IE.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub via: Option<IeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<MessageKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    /// register: the domain, and optionally a nested subdomain controller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asn: Option<Asn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<IeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<LayerRequest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suffix: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<RoleName>,
    /// resolve-task: task id, and either an RPSL draft or `reject = true`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approve: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject: Option<bool>,
}

impl ScheduleEntry {
    /// ASNs the entry refers to.
    fn referenced_asns(&self) -> Vec<Asn> {
        [&self.target, &self.from, &self.to, &self.via, &self.parent]
            .into_iter()
            .flatten()
            .map(IeId::asn)
            .chain(self.asn)
            .collect()
    }

    fn check(&self) -> Result<(), String> {
        let need = |present: bool, field: &str| {
            if present {
                Ok(())
            } else {
                Err(format!("action needs `{field}`"))
            }
        };
        match self.action {
            ActionName::Send => {
                need(self.from.is_some(), "from")?;
                need(self.to.is_some(), "to")?;
                need(self.kind.is_some(), "kind")?;
                if self.kind == Some(MessageKind::Relay) {
                    return Err("use `via` instead of kind Relay".into());
                }
            }
            ActionName::Crash | ActionName::Evict | ActionName::SpawnAuxiliary => {
                need(self.target.is_some(), "target")?;
            }
            ActionName::Register => {
                need(self.asn.is_some(), "asn")?;
                need(self.layer.is_some(), "layer")?;
                if let Some(p) = &self.parent {
                    if Some(p.asn()) != self.asn || !p.layer().is_controller() {
                        return Err(format!("parent {p} is not a controller of the domain"));
                    }
                }
                let spec = AgentSpec {
                    layer: self.layer.expect("checked"),
                    role: self.role,
                    count: 1,
                    interval: None,
                    seeds: None,
                    query_rate: None,
                    remote_rate: None,
                    terms: None,
                };
                spec.check()?;
            }
            ActionName::ResolveTask => {
                need(self.task.is_some(), "task")?;
                if self.approve.is_some() == (self.reject == Some(true)) {
                    return Err("give exactly one of `approve` or `reject = true`".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error: {0}")]
    ParseError(String),
    #[error("invalid scenario: {0}")]
    ValidationError(String),
}

/// Read, parse and validate a scenario file. Relative `corpus` and
/// `irr_seed` paths are resolved against the file's directory.
pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut config = parse_scenario(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut config.corpus, &mut config.irr_seed].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    validate(&config)?;
    Ok(config)
}

/// Parse without resolving paths or validating.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    toml::from_str(text).map_err(|e| ScenarioError::ParseError(e.to_string().trim_end().to_string()))
}

pub fn scenario_to_toml(config: &ScenarioConfig) -> Result<String, ScenarioError> {
    toml::to_string(config).map_err(|e| ScenarioError::ValidationError(e.to_string()))
}

pub fn validate(config: &ScenarioConfig) -> Result<(), ScenarioError> {
    let invalid = |m: String| Err(ScenarioError::ValidationError(m));
    if config.max_ticks == 0 {
        return invalid("max_ticks must be positive".into());
    }
    if config.inter_domain_latency == 0 {
        return invalid("inter_domain_latency must be positive".into());
    }
    if config.domains.is_empty() {
        return invalid("no domains declared".into());
    }
    let mut asns = BTreeSet::new();
    for d in &config.domains {
        if !asns.insert(d.asn) {
            return invalid(format!("duplicate ASN {}", d.asn));
        }
        if let Err(e) = Domain::new(d.domain_config(), 0) {
            return invalid(format!("domain {}: {e}", d.asn));
        }
        if let Some(p) = &d.policy {
            let decl = PolicyDecl::new(d.asn, p.prefixes.iter().copied(), p.as_name.as_deref());
            if let Err(e) = decl.validate() {
                return invalid(format!("domain {} policy: {e}", d.asn));
            }
        }
        for a in &d.agents {
            if let Err(e) = a.check() {
                return invalid(format!("domain {} agents: {e}", d.asn));
            }
        }
    }
    for [a, b] in &config.links {
        for end in [a, b] {
            if !asns.contains(end) {
                return invalid(format!("link {a}-{b} names undeclared AS {end}"));
            }
        }
        if a == b {
            return invalid(format!("link {a}-{b} is a self link"));
        }
    }
    for (i, s) in config.schedule.iter().enumerate() {
        if s.at >= config.max_ticks {
            return invalid(format!(
                "schedule entry {} at tick {} is not before max_ticks {}",
                i + 1,
                s.at,
                config.max_ticks
            ));
        }
        if let Some(asn) = s.referenced_asns().into_iter().find(|a| !asns.contains(a)) {
            return invalid(format!("schedule entry {} names undeclared AS {asn}", i + 1));
        }
        if let Err(e) = s.check() {
            return invalid(format!("schedule entry {}: {e}", i + 1));
        }
    }
    for p in [&config.corpus].into_iter().flatten() {
        if !p.is_dir() {
            return invalid(format!("corpus {} is not a directory", p.display()));
        }
    }
    for p in [&config.irr_seed].into_iter().flatten() {
        if !p.is_file() {
            return invalid(format!("irr_seed {} is not a file", p.display()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("AS {0} already exists")]
    DuplicateAsn(Asn),
    #[error("AS {0} is not part of the simulation")]
    UnknownDomain(Asn),
    #[error("cannot link AS {0} to itself")]
    SelfLink(Asn),
}

/// Every domain, the links between them and the messages in transit.
pub struct Simulation {
    domains: BTreeMap<Asn, Domain>,
    links: BTreeMap<Asn, BTreeSet<Asn>>,
    latency: u64,
    shared: SharedState,
    in_flight: Vec<(u64, Message)>,
    now: u64,
    events: Vec<Event>,
    deliveries: Vec<Delivery>,
}

impl Simulation {
    pub fn new(inter_domain_latency: u64, shared: SharedState) -> Self {
        Simulation {
            domains: BTreeMap::new(),
            links: BTreeMap::new(),
            latency: inter_domain_latency.max(1),
            shared,
            in_flight: Vec::new(),
            now: 0,
            events: Vec::new(),
            deliveries: Vec::new(),
        }
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn add_domain(&mut self, domain: Domain) -> Result<(), SimError> {
        let asn = domain.asn();
        if self.domains.contains_key(&asn) {
            return Err(SimError::DuplicateAsn(asn));
        }
        self.domains.insert(asn, domain);
        self.links.entry(asn).or_default();
        Ok(())
    }

    pub fn connect_domains(&mut self, a: Asn, b: Asn) -> Result<(), SimError> {
        for x in [a, b] {
            if !self.domains.contains_key(&x) {
                return Err(SimError::UnknownDomain(x));
            }
        }
        if a == b {
            return Err(SimError::SelfLink(a));
        }
        self.links.entry(a).or_default().insert(b);
        self.links.entry(b).or_default().insert(a);
        self.domains.get_mut(&a).expect("checked").add_peer(b);
        self.domains.get_mut(&b).expect("checked").add_peer(a);
        Ok(())
    }

    pub fn domain(&self, asn: Asn) -> Option<&Domain> {
        self.domains.get(&asn)
    }

    pub fn domain_mut(&mut self, asn: Asn) -> Option<&mut Domain> {
        self.domains.get_mut(&asn)
    }

    pub fn domains(&self) -> &BTreeMap<Asn, Domain> {
        &self.domains
    }

    pub fn shared(&self) -> &SharedState {
        &self.shared
    }

    pub fn shared_mut(&mut self) -> &mut SharedState {
        &mut self.shared
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    /// Inter-domain hop count between two domains.
    pub fn hops(&self, from: Asn, to: Asn) -> Option<u64> {
        let mut seen = BTreeSet::from([from]);
        let mut queue = VecDeque::from([(from, 0u64)]);
        while let Some((asn, d)) = queue.pop_front() {
            if asn == to {
                return Some(d);
            }
            for next in self.links.get(&asn).into_iter().flatten() {
                if seen.insert(*next) {
                    queue.push_back((*next, d + 1));
                }
            }
        }
        None
    }

    /// Move events recorded by domains outside a tick into the trace.
    pub fn collect_events(&mut self) {
        for d in self.domains.values_mut() {
            self.events.extend(d.drain_events());
            self.deliveries.extend(d.take_deliveries());
        }
    }

    fn log(&mut self, kind: EventKind, subject: impl ToString, detail: impl Into<String>) {
        self.events.push(Event::new(self.now, kind, subject, detail));
    }

    /// Advance every domain one tick, in ascending ASN order.
    pub fn step(&mut self) {
        self.collect_events();
        let arriving = self.now + 1;
        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.in_flight)
            .into_iter()
            .partition(|(at, _)| *at <= arriving);
        self.in_flight = later;
        for (_, msg) in due {
            let stale = msg.hop_trace.iter().find(|h| {
                self.domains
                    .get(&h.asn())
                    .is_none_or(|d| !d.controller().is_active(h))
            });
            if let Some(hop) = stale {
                let detail = format!("{} hop {hop} not active", msg.id);
                self.events.push(Event::new(arriving, EventKind::Dropped, &msg.to, detail));
                continue;
            }
            self.domains
                .get_mut(&msg.to.asn())
                .expect("routed only to known domains")
                .accept_incoming(msg);
        }

        self.now = arriving;
        let asns: Vec<Asn> = self.domains.keys().copied().collect();
        for asn in asns {
            let domain = self.domains.get_mut(&asn).expect("listed");
            let events = domain.tick(&mut self.shared);
            let deliveries = domain.take_deliveries();
            let outbound = domain.take_outbound();
            self.events.extend(events);
            self.deliveries.extend(deliveries);
            for msg in outbound {
                match self.hops(asn, msg.to.asn()) {
                    Some(h) if self.domains.contains_key(&msg.to.asn()) => {
                        self.in_flight.push((self.now + h * self.latency, msg));
                    }
                    _ => {
                        let detail = format!("{} {} -> {}", msg.id, msg.kind, msg.to);
                        self.log(EventKind::NoRoute, msg.sender().clone(), detail);
                    }
                }
            }
        }
    }

    fn domain_of(&mut self, id: &IeId) -> Result<&mut Domain, String> {
        let asn = id.asn();
        self.domains.get_mut(&asn).ok_or_else(|| format!("unknown AS {asn}"))
    }

    fn run_action(&mut self, entry: &ScheduleEntry) -> Result<(), String> {
        let req = |o: &Option<IeId>| o.clone().expect("validated");
        match entry.action {
            ActionName::Send => {
                let from = req(&entry.from);
                let payload = entry.payload.clone().unwrap_or_default();
                let msg = Message::new(from.clone(), req(&entry.to), entry.kind.expect("validated"), payload);
                let msg = match &entry.via {
                    Some(via) => Message::relay(via.clone(), msg),
                    None => msg,
                };
                self.domain_of(&from)?.send(msg).map_err(|e| e.to_string())?;
            }
            ActionName::Crash => {
                let t = req(&entry.target);
                self.domain_of(&t)?.crash(&t).map_err(|e| e.to_string())?;
            }
            ActionName::Evict => {
                let t = req(&entry.target);
                self.domain_of(&t)?.evict(&t).map_err(|e| e.to_string())?;
            }
            ActionName::SpawnAuxiliary => {
                let t = req(&entry.target);
                self.domain_of(&t)?.spawn_auxiliary(&t).map_err(|e| e.to_string())?;
            }
            ActionName::Register => {
                let asn = entry.asn.expect("validated");
                let domain = self.domains.get_mut(&asn).ok_or_else(|| format!("unknown AS {asn}"))?;
                let layer = entry.layer.expect("validated");
                let e = domain
                    .register(layer, entry.suffix, entry.parent.as_ref())
                    .map_err(|e| e.to_string())?;
                let spec = AgentSpec {
                    layer,
                    role: entry.role,
                    count: 1,
                    interval: None,
                    seeds: None,
                    query_rate: None,
                    remote_rate: None,
                    terms: None,
                };
                if let Some(role) = spec.role() {
                    domain.attach_role(&e.id, role).map_err(|e| e.to_string())?;
                }
            }
            ActionName::ResolveTask => {
                let id = entry.task.expect("validated");
                let decision = match &entry.approve {
                    Some(text) => Decision::Approve(parse_object(text).map_err(|e| e.to_string())?),
                    None => Decision::Reject,
                };
                let task = resolve_human_task(&mut self.shared.tasks, id, decision).map_err(|e| e.to_string())?;
                self.log(EventKind::TaskResolved, "operator", format!("task {id} {:?}", task.status));
            }
        }
        Ok(())
    }
}

/// Everything a run produced.
pub struct SimulationReport {
    pub config: ScenarioConfig,
    pub events: Vec<Event>,
    pub deliveries: Vec<Delivery>,
    pub domains: BTreeMap<Asn, Domain>,
    pub irr: IrrStore,
    pub tasks: HumanTaskQueue,
    pub kb: KnowledgeBase,
}

impl SimulationReport {
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let _ = writeln!(out, "{}", e.to_line());
        }
        out
    }

    pub fn registry_snapshot(&self, asn: Asn) -> Option<String> {
        self.domains.get(&asn).map(|d| d.controller().snapshot())
    }

    pub fn ledgers(&self) -> Vec<Ledger> {
        self.domains.values().map(|d| d.ledger().clone()).collect()
    }

    /// Write the run's files below `dir`:
    /// `trace.tsv`, `registry/AS<n>.tsv`, `irr.db`, `ledger/AS<n>.ilog`,
    /// `ledger/merged.tsv`, `tasks.jsonl`, `kb.txt` and `scenario.toml`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), ScenarioError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |e: std::io::Error| ScenarioError::Io { path, message: e.to_string() }
        };
        let write = |rel: &str, content: &str| {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(io(parent))?;
            }
            fs::write(&path, content).map_err(io(&path))
        };
        write("trace.tsv", &self.trace_text())?;
        for (asn, d) in &self.domains {
            write(&format!("registry/AS{asn}.tsv"), &d.controller().snapshot())?;
            write(&format!("ledger/AS{asn}.ilog"), &d.ledger().to_file_string())?;
        }
        let merged = merge(&self.ledgers()).map(|m| m.to_text()).unwrap_or_else(|e| format!("# {e}\n"));
        write("ledger/merged.tsv", &merged)?;
        write("irr.db", &self.irr.dump())?;
        write("tasks.jsonl", &self.tasks.to_jsonl())?;
        write("kb.txt", &self.kb.to_text())?;
        write("scenario.toml", &scenario_to_toml(&self.config)?)?;
        Ok(())
    }
}

pub fn run_scenario(config: ScenarioConfig) -> SimulationReport {
    run_scenario_with_tasks(config, HumanTaskQueue::new())
}

/// Run with a task queue carried over from an earlier run, so approved
/// drafts get applied.
pub fn run_scenario_with_tasks(config: ScenarioConfig, tasks: HumanTaskQueue) -> SimulationReport {
    let shared = SharedState {
        tasks,
        ..SharedState::default()
    };
    let mut sim = Simulation::new(config.inter_domain_latency, shared);

    if let Some(path) = &config.irr_seed {
        match fs::read_to_string(path) {
            Ok(text) => {
                let errors = sim.shared.irr.seed_from_text(&text, 0);
                let seeded: Vec<(IeId, String)> = sim
                    .shared
                    .irr
                    .journal()
                    .iter()
                    .enumerate()
                    .map(|(seq, txn)| {
                        let key = txn.object.key().expect("stored objects have keys");
                        (txn.submitted_by.clone(), format!("{seq} {} {key}", txn.action))
                    })
                    .collect();
                for (by, detail) in seeded {
                    sim.log(EventKind::IrrTxn, by, detail);
                }
                for e in errors {
                    sim.log(EventKind::SetupFailed, "irr-seed", e.to_string());
                }
            }
            Err(e) => sim.log(EventKind::SetupFailed, "irr-seed", e.to_string()),
        }
    }

    for spec in &config.domains {
        let mut domain = match Domain::new(spec.domain_config(), config.seed) {
            Ok(d) => d,
            Err(e) => {
                sim.log(EventKind::SetupFailed, spec.asn, e.to_string());
                continue;
            }
        };
        if let Some(p) = &spec.policy {
            domain.set_policy(PolicyDecl::new(spec.asn, p.prefixes.iter().copied(), p.as_name.as_deref()));
        }
        for agent in &spec.agents {
            for _ in 0..agent.count {
                match domain.register(agent.layer, None, None) {
                    Ok(entry) => {
                        if let Some(role) = agent.role() {
                            if let Err(e) = domain.attach_role(&entry.id, role) {
                                domain.log(EventKind::SetupFailed, &entry.id, e.to_string());
                            }
                        }
                    }
                    Err(e) => domain.log(EventKind::RegistrationFailed, spec.asn, e.to_string()),
                }
            }
        }
        sim.add_domain(domain).expect("ASNs validated distinct");
    }
    for [a, b] in &config.links {
        if let Err(e) = sim.connect_domains(*a, *b) {
            sim.log(EventKind::SetupFailed, a, e.to_string());
        }
    }

    if let Some(dir) = &config.corpus {
        match build_kb(&config, dir) {
            Ok(kb) => sim.shared.kb = kb,
            Err(e) => sim.log(EventKind::SetupFailed, "corpus", e),
        }
    }
    sim.collect_events();

    let mut schedule: BTreeMap<u64, Vec<&ScheduleEntry>> = BTreeMap::new();
    for entry in &config.schedule {
        schedule.entry(entry.at).or_default().push(entry);
    }
    for t in 0..config.max_ticks {
        for entry in schedule.remove(&t).unwrap_or_default() {
            if let Err(e) = sim.run_action(entry) {
                sim.collect_events();
                sim.log(EventKind::ScheduleFailed, format!("{:?}", entry.action), e);
            }
        }
        sim.step();
    }
    sim.collect_events();

    SimulationReport {
        config,
        events: sim.events,
        deliveries: sim.deliveries,
        domains: sim.domains,
        irr: sim.shared.irr,
        tasks: sim.shared.tasks,
        kb: sim.shared.kb,
    }
}

/// Offline step: one dataset per domain, seeded by its knowledge servers,
/// merged into a knowledge base.
fn build_kb(config: &ScenarioConfig, dir: &Path) -> Result<KnowledgeBase, String> {
    let mut pipeline = Pipeline::new();
    let mut corpus = crate::skau::Corpus::new();
    corpus.ingest_dir(dir, 0).map_err(|e| e.to_string())?;
    for doc in corpus.docs() {
        pipeline
            .ingest_document(&doc.doc_id, &doc.text, doc.fetched_at)
            .map_err(|e| e.to_string())?;
    }
    pipeline.build_index().map_err(|e| e.to_string())?;
    let mut datasets = Vec::new();
    for d in &config.domains {
        let seeds: Vec<String> = d
            .agents
            .iter()
            .filter_map(|a| a.seeds.clone())
            .flatten()
            .collect();
        let name = format!("AS{}", d.asn);
        datasets.push(pipeline.distill(&name, &seeds, DEFAULT_TOP_K).map_err(|e| e.to_string())?);
    }
    Ok(rebuild_kb(&KnowledgeBase::empty(), &datasets))
}
