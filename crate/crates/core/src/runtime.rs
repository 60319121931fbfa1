//! Per-domain agent runtime: message routing under the layer rules, role
//! behaviour, and the tick loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    create_domain, ControllerError, DomainConfig, DomainController, LayerRequest, RegistryEntry,
};
use crate::identity::{Asn, IeId, LayerKind};
use crate::iirr::{maintainer_step, HumanTaskQueue, IrrStore, PolicyDecl};
use crate::ledger::{Ledger, LedgerBlock, Payload, PayloadKind};
use crate::skau::{query_knowledge, KnowledgeBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    Heartbeat,
    Task,
    Result,
    IrrUpdate,
    KnowledgeQuery,
    KnowledgeReply,
    LedgerAnnounce,
    Relay,
}

impl MessageKind {
    pub const ALL: [MessageKind; 8] = [
        MessageKind::Heartbeat,
        MessageKind::Task,
        MessageKind::Result,
        MessageKind::IrrUpdate,
        MessageKind::KnowledgeQuery,
        MessageKind::KnowledgeReply,
        MessageKind::LedgerAnnounce,
        MessageKind::Relay,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Heartbeat => "Heartbeat",
            MessageKind::Task => "Task",
            MessageKind::Result => "Result",
            MessageKind::IrrUpdate => "IrrUpdate",
            MessageKind::KnowledgeQuery => "KnowledgeQuery",
            MessageKind::KnowledgeReply => "KnowledgeReply",
            MessageKind::LedgerAnnounce => "LedgerAnnounce",
            MessageKind::Relay => "Relay",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown message kind `{s}`"))
    }
}

/// Assigned by the sending domain: its ASN and a per-domain sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct MessageId {
    pub asn: Asn,
    pub seq: u64,
}

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.asn, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub id: MessageId,
    pub from: IeId,
    pub to: IeId,
    pub kind: MessageKind,
    pub payload: Vec<u8>,
    pub hop_trace: Vec<IeId>,
    /// Present exactly when `kind` is `Relay`.
    pub inner: Option<Box<Message>>,
}

impl Message {
    pub fn new(from: IeId, to: IeId, kind: MessageKind, payload: impl Into<Vec<u8>>) -> Self {
        Message {
            id: MessageId::default(),
            hop_trace: vec![from.clone()],
            from,
            to,
            kind,
            payload: payload.into(),
            inner: None,
        }
    }

    /// Wrap `inner` for delivery to `via`, which forwards it on.
    pub fn relay(via: IeId, inner: Message) -> Self {
        Message {
            id: MessageId::default(),
            from: inner.from.clone(),
            to: via,
            kind: MessageKind::Relay,
            payload: Vec::new(),
            hop_trace: vec![inner.from.clone()],
            inner: Some(Box::new(inner)),
        }
    }

    /// The IE currently handing the message on.
    pub fn sender(&self) -> &IeId {
        self.hop_trace.last().unwrap_or(&self.from)
    }

    pub fn check(&self) -> Result<(), String> {
        if self.hop_trace.first() != Some(&self.from) {
            return Err("hop trace must start at the sender".into());
        }
        match (&self.inner, self.kind) {
            (Some(inner), MessageKind::Relay) => {
                if inner.from != self.from {
                    return Err("relayed message must come from the relay's sender".into());
                }
                inner.check()
            }
            (None, MessageKind::Relay) => Err("relay without an inner message".into()),
            (Some(_), _) => Err(format!("{} message carries an inner message", self.kind)),
            (None, _) => Ok(()),
        }
    }

    pub fn hops_text(&self) -> String {
        self.hop_trace.iter().map(ToString::to_string).collect::<Vec<_>>().join(">")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryReceipt {
    pub id: MessageId,
    /// Tick of delivery for intra-domain messages; `None` when the message
    /// left the domain.
    pub deliver_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("sender {0} is not an active IE of this domain")]
    SenderEvicted(IeId),
    #[error("recipient {0} is unknown")]
    RecipientUnknown(IeId),
    #[error("{from} may not send to {to} without a relay")]
    ForbiddenDirectExit { from: IeId, to: IeId },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("role {role} cannot attach to the {layer} layer")]
    RoleLayerMismatch { role: &'static str, layer: LayerKind },
    #[error("{0} is not registered")]
    NotRegistered(IeId),
    #[error("controllers cannot be crashed")]
    CannotCrashController,
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerParams {
    /// Chance per tick of issuing a knowledge query.
    pub query_rate: f64,
    /// Chance that a query goes to a linked domain instead of this one.
    pub remote_rate: f64,
    /// Terms to ask about; empty means any term of the knowledge base.
    pub terms: Vec<String>,
}

impl Default for WorkerParams {
    fn default() -> Self {
        WorkerParams {
            query_rate: 0.1,
            remote_rate: 0.5,
            terms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentRole {
    ControllerRole,
    IrrMaintainer { interval: u64 },
    KnowledgeServer,
    LedgerAgent,
    Worker(WorkerParams),
}

impl AgentRole {
    pub fn name(&self) -> &'static str {
        match self {
            AgentRole::ControllerRole => "controller",
            AgentRole::IrrMaintainer { .. } => "irr-maintainer",
            AgentRole::KnowledgeServer => "knowledge-server",
            AgentRole::LedgerAgent => "ledger-agent",
            AgentRole::Worker(_) => "worker",
        }
    }

    pub fn fits(&self, layer: LayerKind) -> bool {
        match self {
            AgentRole::ControllerRole => layer.is_controller(),
            AgentRole::IrrMaintainer { .. } | AgentRole::KnowledgeServer | AgentRole::LedgerAgent => {
                layer.is_specialized()
            }
            AgentRole::Worker(_) => layer.is_colony(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Registered,
    RegistrationFailed,
    RoleAttached,
    SubdomainSpawned,
    Evicted,
    Crashed,
    HeartbeatSent,
    Sent,
    SendFailed,
    Delivered,
    Dropped,
    Relayed,
    NoRoute,
    IrrTxn,
    IrrTxnFailed,
    TaskRaised,
    TaskResolved,
    TaskApplied,
    LedgerAppend,
    LedgerAppendFailed,
    LedgerReplicated,
    LedgerReplicaRejected,
    KnowledgeAnswered,
    ScheduleFailed,
    SetupFailed,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub tick: u64,
    pub kind: EventKind,
    pub subject: String,
    pub detail: String,
}

impl Event {
    pub fn new(tick: u64, kind: EventKind, subject: impl ToString, detail: impl Into<String>) -> Self {
        Event {
            tick,
            kind,
            subject: subject.to_string(),
            detail: detail.into(),
        }
    }

    /// `tick kind subject detail`, tab separated. Tabs and newlines inside
    /// the detail are replaced by spaces.
    pub fn to_line(&self) -> String {
        let detail: String = self
            .detail
            .chars()
            .map(|c| if c == '\t' || c == '\n' { ' ' } else { c })
            .collect();
        format!("{}\t{}\t{}\t{}", self.tick, self.kind, self.subject, detail)
    }
}

/// A message as handed to its recipient.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub tick: u64,
    pub message: Message,
}

/// State shared by all domains of a simulation: the iIRR, the human task
/// queue and the knowledge base.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedState {
    pub irr: IrrStore,
    pub tasks: HumanTaskQueue,
    pub kb: KnowledgeBase,
}

impl Default for SharedState {
    fn default() -> Self {
        SharedState {
            irr: IrrStore::new(),
            tasks: HumanTaskQueue::new(),
            kb: KnowledgeBase::empty(),
        }
    }
}

/// One AS: its controller, the roles of its IEs, and message queues.
#[derive(Debug, Clone)]
pub struct Domain {
    controller: DomainController,
    roles: BTreeMap<IeId, AgentRole>,
    policy: Option<PolicyDecl>,
    ledger: Ledger,
    replicas: BTreeMap<Asn, Ledger>,
    peers: BTreeSet<Asn>,
    now: u64,
    next_seq: u64,
    queue: Vec<(u64, Message)>,
    mailboxes: BTreeMap<IeId, Vec<Message>>,
    outbound: Vec<Message>,
    crashed: BTreeSet<IeId>,
    announced_kb: u64,
    events: Vec<Event>,
    deliveries: Vec<Delivery>,
    rng: ChaCha8Rng,
}

fn rng_for(seed: u64, asn: Asn) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&asn.value().to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

impl Domain {
    pub fn new(config: DomainConfig, seed: u64) -> Result<Domain, RuntimeError> {
        let asn = config.asn;
        let controller = create_domain(config)?;
        let mut roles = BTreeMap::new();
        roles.insert(controller.id().clone(), AgentRole::ControllerRole);
        let own = controller.lookup(controller.id()).expect("controller entry");
        let events = vec![Event::new(0, EventKind::Registered, &own.id, format!("{} {}", own.layer, own.address))];
        Ok(Domain {
            controller,
            roles,
            policy: None,
            ledger: Ledger::new(asn),
            replicas: BTreeMap::new(),
            peers: BTreeSet::new(),
            now: 0,
            next_seq: 0,
            queue: Vec::new(),
            mailboxes: BTreeMap::new(),
            outbound: Vec::new(),
            crashed: BTreeSet::new(),
            announced_kb: 0,
            events,
            deliveries: Vec::new(),
            rng: rng_for(seed, asn),
        })
    }

    pub fn asn(&self) -> Asn {
        self.controller.asn()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn controller(&self) -> &DomainController {
        &self.controller
    }

    pub fn roles(&self) -> &BTreeMap<IeId, AgentRole> {
        &self.roles
    }

    pub fn policy(&self) -> Option<&PolicyDecl> {
        self.policy.as_ref()
    }

    pub fn set_policy(&mut self, policy: PolicyDecl) {
        self.policy = Some(policy);
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    /// Copies of linked domains' ledgers built from their announcements.
    pub fn replicas(&self) -> &BTreeMap<Asn, Ledger> {
        &self.replicas
    }

    pub fn peers(&self) -> &BTreeSet<Asn> {
        &self.peers
    }

    pub fn add_peer(&mut self, asn: Asn) {
        self.peers.insert(asn);
    }

    pub fn is_crashed(&self, id: &IeId) -> bool {
        self.crashed.contains(id)
    }

    fn emit(&mut self, kind: EventKind, subject: impl ToString, detail: impl Into<String>) {
        self.events.push(Event::new(self.now, kind, subject, detail));
    }

    /// Record an event that happened outside the tick loop.
    pub fn log(&mut self, kind: EventKind, subject: impl ToString, detail: impl Into<String>) {
        self.emit(kind, subject, detail);
    }

    pub fn drain_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.events)
    }

    pub fn take_deliveries(&mut self) -> Vec<Delivery> {
        std::mem::take(&mut self.deliveries)
    }

    /// Messages addressed to other domains, in send order.
    pub fn take_outbound(&mut self) -> Vec<Message> {
        std::mem::take(&mut self.outbound)
    }

    /// Queue a message arriving from another domain for the next tick.
    pub fn accept_incoming(&mut self, message: Message) {
        self.queue.push((self.now + 1, message));
    }

    /// Ask for consent to add an IE. `parent` names the controller of a
    /// nested subdomain; the top-level registry is used otherwise.
    pub fn register(
        &mut self,
        request: LayerRequest,
        suffix: Option<u32>,
        parent: Option<&IeId>,
    ) -> Result<RegistryEntry, RuntimeError> {
        let registry = match parent {
            None => &mut self.controller,
            Some(p) => match self.controller.owner_mut(p) {
                Some(owner) if owner.id() == p => owner,
                _ => return Err(RuntimeError::NotRegistered(p.clone())),
            },
        };
        let entry = registry.request_registration(request, suffix)?;
        self.emit(
            EventKind::Registered,
            &entry.id,
            format!("{} {}", entry.layer, entry.address),
        );
        Ok(entry)
    }

    pub fn attach_role(&mut self, id: &IeId, role: AgentRole) -> Result<(), RuntimeError> {
        if !self.controller.is_active(id) {
            return Err(RuntimeError::NotRegistered(id.clone()));
        }
        let layer = id.layer();
        if !role.fits(layer) {
            return Err(RuntimeError::RoleLayerMismatch { role: role.name(), layer });
        }
        self.emit(EventKind::RoleAttached, id, role.name());
        self.roles.insert(id.clone(), role);
        Ok(())
    }

    pub fn evict(&mut self, id: &IeId) -> Result<Vec<RegistryEntry>, RuntimeError> {
        let evicted = self.controller.evict_cascade(id)?;
        for (i, e) in evicted.iter().enumerate() {
            let why = if i == 0 { "manual" } else { "cascade" };
            self.emit(EventKind::Evicted, &e.id, why);
        }
        Ok(evicted)
    }

    /// Stop an IE: it no longer heartbeats, handles messages or runs its role.
    pub fn crash(&mut self, id: &IeId) -> Result<(), RuntimeError> {
        if id.layer().is_controller() {
            return Err(RuntimeError::CannotCrashController);
        }
        if !self.controller.is_active(id) {
            return Err(RuntimeError::NotRegistered(id.clone()));
        }
        self.crashed.insert(id.clone());
        self.emit(EventKind::Crashed, id, "");
        Ok(())
    }

    pub fn spawn_auxiliary(&mut self, colony: &IeId) -> Result<IeId, RuntimeError> {
        let sub = self.controller.spawn_auxiliary(colony)?;
        let sub_id = sub.id().clone();
        let block = sub.block();
        let entry = sub.lookup(&sub_id).expect("subdomain controller").clone();
        self.emit(EventKind::SubdomainSpawned, colony, format!("{sub_id} {block}"));
        self.emit(
            EventKind::Registered,
            &sub_id,
            format!("{} {}", entry.layer, entry.address),
        );
        self.roles.insert(sub_id.clone(), AgentRole::ControllerRole);
        Ok(sub_id)
    }

    /// Hand a message to the routing layer. The last hop of the trace is
    /// the sending IE and must be Active here.
    pub fn send(&mut self, mut msg: Message) -> Result<DeliveryReceipt, RuntimeError> {
        msg.check().map_err(RuntimeError::Malformed)?;
        let asn = self.asn();
        let sender = msg.sender().clone();
        if let Some(hop) = msg
            .hop_trace
            .iter()
            .find(|h| h.asn() == asn && !self.controller.is_active(h))
        {
            return Err(RuntimeError::SenderEvicted(hop.clone()));
        }
        if sender.asn() != asn {
            return Err(RuntimeError::SenderEvicted(sender));
        }
        let local = msg.to.asn() == asn;
        if local && !self.controller.is_active(&msg.to) {
            return Err(RuntimeError::RecipientUnknown(msg.to.clone()));
        }
        if !local && sender.layer().is_colony() {
            return Err(RuntimeError::ForbiddenDirectExit { from: sender, to: msg.to.clone() });
        }
        self.next_seq += 1;
        msg.id = MessageId { asn, seq: self.next_seq };
        self.emit(
            EventKind::Sent,
            &sender,
            format!("{} {} -> {}", msg.id, msg.kind, msg.to),
        );
        let receipt = DeliveryReceipt {
            id: msg.id,
            deliver_at: local.then_some(self.now + 1),
        };
        if local {
            self.queue.push((self.now + 1, msg));
        } else {
            self.outbound.push(msg);
        }
        Ok(receipt)
    }

    fn try_send(&mut self, msg: Message) {
        let sender = msg.sender().clone();
        if let Err(e) = self.send(msg) {
            self.emit(EventKind::SendFailed, sender, e.to_string());
        }
    }

    /// Send from `from`, wrapping in a relay through an upper-layer IE when
    /// a colony IE addresses another domain.
    fn send_routed(&mut self, from: &IeId, msg: Message) {
        if msg.to.asn() != self.asn() && from.layer().is_colony() {
            match self.relay_for(from) {
                Some(via) => self.try_send(Message::relay(via, msg)),
                None => self.emit(EventKind::SendFailed, from, "no relay available"),
            }
        } else {
            self.try_send(msg);
        }
    }

    /// Lowest running specialized IE of the colony's registry, else its
    /// controller.
    fn relay_for(&self, colony: &IeId) -> Option<IeId> {
        let registry = self.controller.owner(colony)?;
        registry
            .entries()
            .find(|e| e.is_active() && e.layer.is_specialized() && !self.crashed.contains(&e.id))
            .map(|e| e.id.clone())
            .or_else(|| Some(registry.id().clone()))
    }

    fn running_with_role(&self, pred: impl Fn(&AgentRole) -> bool) -> Option<IeId> {
        self.roles
            .iter()
            .find(|(id, r)| pred(r) && self.controller.is_active(id) && !self.crashed.contains(*id))
            .map(|(id, _)| id.clone())
    }

    /// Advance one tick: deliver due messages, sweep liveness, emit
    /// heartbeats on multiples of the interval, then run every running IE
    /// in id order.
    pub fn tick(&mut self, shared: &mut SharedState) -> Vec<Event> {
        self.now += 1;
        self.controller.set_clock(self.now);

        let (due, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.queue)
            .into_iter()
            .partition(|(at, _)| *at <= self.now);
        self.queue = later;
        for (_, msg) in due {
            self.deliver(msg);
        }

        for e in self.controller.sweep_liveness() {
            self.emit(EventKind::Evicted, &e.id, "liveness");
        }

        if self.now.is_multiple_of(self.controller.config().heartbeat_interval) {
            let beating: Vec<IeId> = self
                .controller
                .all_entries()
                .into_iter()
                .filter(|e| e.is_active() && !e.layer.is_controller() && !self.crashed.contains(&e.id))
                .map(|e| e.id.clone())
                .collect();
            for id in beating {
                if self.controller.record_heartbeat(&id) {
                    self.emit(EventKind::HeartbeatSent, &id, "");
                }
            }
        }

        let running: Vec<IeId> = self
            .controller
            .all_entries()
            .into_iter()
            .filter(|e| e.is_active() && !self.crashed.contains(&e.id))
            .map(|e| e.id.clone())
            .collect();
        for id in running {
            let mailbox = self.mailboxes.remove(&id).unwrap_or_default();
            let role = self.roles.get(&id).cloned();
            for msg in mailbox {
                self.handle(&id, role.as_ref(), msg, shared);
            }
            if let Some(role) = role {
                self.step_role(&id, &role, shared);
            }
        }
        self.mailboxes.clear();
        self.drain_events()
    }

    fn deliver(&mut self, msg: Message) {
        let asn = self.asn();
        if !self.controller.is_active(&msg.to) {
            self.emit(EventKind::Dropped, &msg.to, format!("{} recipient not active", msg.id));
            return;
        }
        if let Some(hop) = msg
            .hop_trace
            .iter()
            .find(|h| h.asn() == asn && !self.controller.is_active(h))
        {
            let detail = format!("{} hop {hop} not active", msg.id);
            self.emit(EventKind::Dropped, &msg.to, detail);
            return;
        }
        self.emit(
            EventKind::Delivered,
            &msg.to,
            format!("{} {} from {} via {}", msg.id, msg.kind, msg.from, msg.hops_text()),
        );
        self.deliveries.push(Delivery { tick: self.now, message: msg.clone() });
        self.mailboxes.entry(msg.to.clone()).or_default().push(msg);
    }

    fn handle(&mut self, me: &IeId, role: Option<&AgentRole>, msg: Message, shared: &mut SharedState) {
        if let Some(inner) = msg.inner {
            let mut inner = *inner;
            inner.hop_trace.push(me.clone());
            self.emit(EventKind::Relayed, me, format!("{} -> {}", msg.id, inner.to));
            self.try_send(inner);
            return;
        }
        let foreign = msg.from.asn() != self.asn();
        match (role, msg.kind) {
            (Some(AgentRole::ControllerRole), MessageKind::LedgerAnnounce) if foreign => {
                self.replicate(&msg);
            }
            (Some(AgentRole::ControllerRole), MessageKind::KnowledgeQuery) => {
                match self.running_with_role(|r| matches!(r, AgentRole::KnowledgeServer)) {
                    Some(server) => {
                        let mut fwd = msg;
                        fwd.hop_trace.push(me.clone());
                        fwd.to = server;
                        self.try_send(fwd);
                    }
                    None => {
                        let detail = format!("{} no knowledge server", msg.id);
                        self.emit(EventKind::Dropped, me, detail);
                    }
                }
            }
            (Some(AgentRole::KnowledgeServer), MessageKind::KnowledgeQuery) => {
                let term = String::from_utf8_lossy(&msg.payload).trim().to_lowercase();
                let answer = match query_knowledge(&shared.kb, &term).first() {
                    Some((w, docs)) => format!("{term}\t{w:.6}\t{}", docs.join(",")),
                    None => format!("{term}\t-"),
                };
                self.emit(EventKind::KnowledgeAnswered, me, format!("{} {term}", msg.id));
                let reply = Message::new(me.clone(), msg.from.clone(), MessageKind::KnowledgeReply, answer);
                self.try_send(reply);
            }
            (Some(AgentRole::LedgerAgent), MessageKind::LedgerAnnounce) if !foreign => {
                self.append_announcement(me, &msg);
            }
            (Some(AgentRole::Worker(_)), MessageKind::Task) => {
                let reply = Message::new(me.clone(), msg.from.clone(), MessageKind::Result, msg.payload.clone());
                self.send_routed(me, reply);
            }
            _ => {}
        }
    }

    fn append_announcement(&mut self, me: &IeId, msg: &Message) {
        let text = String::from_utf8_lossy(&msg.payload).into_owned();
        let payload = match text.split_once('\t') {
            Some((kind, body)) => match kind.parse::<PayloadKind>() {
                Ok(kind) => Payload::new(kind, body.as_bytes()),
                Err(_) => Payload::new(PayloadKind::Freeform, msg.payload.clone()),
            },
            None => Payload::new(PayloadKind::Freeform, msg.payload.clone()),
        };
        let line = match self.ledger.append_block(&self.controller, me, self.now, payload) {
            Ok(block) => {
                let detail = format!("{} {} {}", block.index, block.payload.kind, block.hash);
                let line = block.to_line();
                self.emit(EventKind::LedgerAppend, me, detail);
                line
            }
            Err(e) => {
                self.emit(EventKind::LedgerAppendFailed, me, e.to_string());
                return;
            }
        };
        let peers: Vec<Asn> = self.peers.iter().copied().collect();
        for peer in peers {
            let m = Message::new(me.clone(), IeId::controller(peer), MessageKind::LedgerAnnounce, line.clone());
            self.try_send(m);
        }
    }

    fn replicate(&mut self, msg: &Message) {
        let origin = msg.from.asn();
        let me = self.controller.id().clone();
        let text = String::from_utf8_lossy(&msg.payload).into_owned();
        let replica = self.replicas.entry(origin).or_insert_with(|| Ledger::new(origin));
        let outcome = LedgerBlock::from_line(&text).and_then(|block| {
            if block.author.asn() != origin {
                return Err(format!("block author {} is not from {origin}", block.author));
            }
            if block.index != replica.len() as u64 || block.prev_hash != replica.head_hash() {
                return Err(format!("block {} does not extend the replica", block.index));
            }
            if block.compute_hash() != block.hash {
                return Err(format!("block {} digest mismatch", block.index));
            }
            let index = block.index;
            let mut blocks = std::mem::replace(replica, Ledger::new(origin)).into_blocks();
            blocks.push(block);
            *replica = Ledger::from_parts(origin, blocks);
            Ok(index)
        });
        match outcome {
            Ok(index) => self.emit(EventKind::LedgerReplicated, me, format!("{origin} {index}")),
            Err(e) => self.emit(EventKind::LedgerReplicaRejected, me, format!("{origin} {e}")),
        }
    }

    fn announce(&mut self, me: &IeId, kind: PayloadKind, body: String) {
        if let Some(agent) = self.running_with_role(|r| matches!(r, AgentRole::LedgerAgent)) {
            let m = Message::new(me.clone(), agent, MessageKind::LedgerAnnounce, format!("{kind}\t{body}"));
            self.try_send(m);
        }
    }

    fn step_role(&mut self, me: &IeId, role: &AgentRole, shared: &mut SharedState) {
        match role {
            AgentRole::IrrMaintainer { interval } => {
                if !self.now.is_multiple_of(*interval.max(&1)) {
                    return;
                }
                let Some(policy) = self.policy.clone() else { return };
                let out = maintainer_step(me, &policy, &mut shared.irr, &mut shared.tasks, self.now);
                for id in &out.applied_tasks {
                    self.emit(EventKind::TaskApplied, me, format!("task {id}"));
                }
                for (txn, receipt) in &out.submitted {
                    let change = format!("{} {}", txn.action, receipt.key);
                    self.emit(EventKind::IrrTxn, me, format!("{} {change}", receipt.seq));
                    self.announce(me, PayloadKind::IrrChangeAnnounce, change);
                }
                for (txn, err) in &out.failed {
                    self.emit(EventKind::IrrTxnFailed, me, format!("{} {err}", txn.action));
                }
                for task in &out.raised {
                    self.emit(EventKind::TaskRaised, me, format!("task {} {}", task.id, task.key));
                }
            }
            AgentRole::KnowledgeServer => {
                let version = shared.kb.version();
                if version > self.announced_kb {
                    self.announced_kb = version;
                    let body = format!("version {version} facts {}", shared.kb.len());
                    self.announce(me, PayloadKind::KnowledgeVersionAnnounce, body);
                }
            }
            AgentRole::Worker(params) => self.step_worker(me, params, &shared.kb),
            AgentRole::ControllerRole | AgentRole::LedgerAgent => {}
        }
    }

    fn step_worker(&mut self, me: &IeId, params: &WorkerParams, kb: &KnowledgeBase) {
        if self.rng.random::<f64>() >= params.query_rate {
            return;
        }
        let term = if params.terms.is_empty() {
            if kb.is_empty() {
                return;
            }
            let i = self.rng.random_range(0..kb.len());
            kb.facts().keys().nth(i).cloned().expect("index in range")
        } else {
            params.terms[self.rng.random_range(0..params.terms.len())].clone()
        };
        let remote = !self.peers.is_empty() && self.rng.random::<f64>() < params.remote_rate;
        let to = if remote {
            let i = self.rng.random_range(0..self.peers.len());
            IeId::controller(*self.peers.iter().nth(i).expect("index in range"))
        } else {
            match self.running_with_role(|r| matches!(r, AgentRole::KnowledgeServer)) {
                Some(server) => server,
                None => return,
            }
        };
        let query = Message::new(me.clone(), to, MessageKind::KnowledgeQuery, term);
        self.send_routed(me, query);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::parse_ie_id;

    fn id(s: &str) -> IeId {
        parse_ie_id(s).unwrap()
    }

    fn domain() -> Domain {
        let mut d = Domain::new(DomainConfig::new(Asn(65001), "2001:db8::/48".parse().unwrap()), 7).unwrap();
        d.register(LayerRequest::Specialized, None, None).unwrap();
        d.register(LayerRequest::Colony, None, None).unwrap();
        d.drain_events();
        d
    }

    fn kinds(events: &[Event]) -> Vec<EventKind> {
        events.iter().map(|e| e.kind).collect()
    }

    #[test]
    fn send_examples() {
        let mut d = domain();
        let colony = id("65001:10000");
        let r = d.send(Message::new(colony.clone(), id("65001:1"), MessageKind::Task, "x")).unwrap();
        assert_eq!(r.deliver_at, Some(1));

        let direct = Message::new(colony.clone(), id("65002:0"), MessageKind::Task, "x");
        assert!(matches!(d.send(direct.clone()), Err(RuntimeError::ForbiddenDirectExit { .. })));

        d.send(Message::relay(id("65001:1"), direct)).unwrap();
        let events = d.tick(&mut SharedState::default());
        let delivered: Vec<_> = d.take_deliveries();
        assert_eq!(delivered.len(), 2);
        assert_eq!(delivered[0].message.hop_trace, vec![colony.clone()]);
        assert!(kinds(&events).contains(&EventKind::Relayed));
        let out = d.take_outbound();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].hop_trace, vec![colony, id("65001:1")]);
        assert_eq!(out[0].to, id("65002:0"));
    }

    #[test]
    fn send_errors() {
        let mut d = domain();
        let m = Message::new(id("65001:10000"), id("65001:5"), MessageKind::Task, "");
        assert_eq!(d.send(m), Err(RuntimeError::RecipientUnknown(id("65001:5"))));
        d.evict(&id("65001:10000")).unwrap();
        let m = Message::new(id("65001:10000"), id("65001:1"), MessageKind::Task, "");
        assert_eq!(d.send(m), Err(RuntimeError::SenderEvicted(id("65001:10000"))));
        let mut bad = Message::new(id("65001:1"), id("65001:0"), MessageKind::Relay, "");
        assert!(matches!(d.send(bad.clone()), Err(RuntimeError::Malformed(_))));
        bad.kind = MessageKind::Task;
        bad.hop_trace.clear();
        assert!(matches!(d.send(bad), Err(RuntimeError::Malformed(_))));
    }

    #[test]
    fn no_delivery_to_evicted() {
        let mut d = domain();
        d.send(Message::new(id("65001:1"), id("65001:10000"), MessageKind::Task, "")).unwrap();
        d.evict(&id("65001:10000")).unwrap();
        let events = d.tick(&mut SharedState::default());
        assert!(kinds(&events).contains(&EventKind::Dropped));
        assert!(d.take_deliveries().is_empty());
    }

    #[test]
    fn attach_role_examples() {
        let mut d = domain();
        d.attach_role(&id("65001:1"), AgentRole::IrrMaintainer { interval: 1 }).unwrap();
        assert_eq!(
            d.attach_role(&id("65001:1"), AgentRole::Worker(WorkerParams::default())),
            Err(RuntimeError::RoleLayerMismatch { role: "worker", layer: LayerKind::Specialized })
        );
        assert!(matches!(
            d.attach_role(&id("65001:10000"), AgentRole::KnowledgeServer),
            Err(RuntimeError::RoleLayerMismatch { .. })
        ));
        assert_eq!(
            d.attach_role(&id("65001:2"), AgentRole::LedgerAgent),
            Err(RuntimeError::NotRegistered(id("65001:2")))
        );
    }

    #[test]
    fn idle_heartbeats_on_schedule() {
        let mut d = domain();
        let mut shared = SharedState::default();
        for _ in 0..35 {
            for e in d.tick(&mut shared) {
                assert_eq!(e.kind, EventKind::HeartbeatSent);
                assert_eq!(e.tick % 10, 0);
            }
        }
        assert_eq!(d.controller().active_count(), 3);
    }

    #[test]
    fn crashed_ie_is_evicted_by_liveness() {
        let mut d = domain();
        let mut shared = SharedState::default();
        d.crash(&id("65001:10000")).unwrap();
        assert_eq!(d.crash(&id("65001:0")), Err(RuntimeError::CannotCrashController));
        let mut evicted_at = None;
        for _ in 0..40 {
            for e in d.tick(&mut shared) {
                if e.kind == EventKind::Evicted {
                    evicted_at = Some(e.tick);
                }
            }
        }
        assert_eq!(evicted_at, Some(31));
    }

    #[test]
    fn maintainer_announces_to_ledger() {
        let mut d = domain();
        d.register(LayerRequest::Specialized, None, None).unwrap();
        d.attach_role(&id("65001:1"), AgentRole::IrrMaintainer { interval: 1 }).unwrap();
        d.attach_role(&id("65001:2"), AgentRole::LedgerAgent).unwrap();
        d.set_policy(PolicyDecl::new(Asn(65001), ["192.0.2.0/24".parse().unwrap()], Some("EX")));
        let mut shared = SharedState::default();
        let mut all = Vec::new();
        for _ in 0..3 {
            all.extend(d.tick(&mut shared));
        }
        assert_eq!(shared.irr.len(), 2);
        let count = |k| all.iter().filter(|e| e.kind == k).count();
        assert_eq!(count(EventKind::IrrTxn), 2);
        assert_eq!(count(EventKind::LedgerAppend), 2);
        assert_eq!(d.ledger().len(), 2);
        assert!(d.ledger().verify().is_ok());
    }

    #[test]
    fn knowledge_query_round_trip() {
        let mut d = domain();
        d.attach_role(&id("65001:1"), AgentRole::KnowledgeServer).unwrap();
        let params = WorkerParams { query_rate: 1.0, remote_rate: 0.0, terms: vec!["bgp".into()] };
        d.attach_role(&id("65001:10000"), AgentRole::Worker(params)).unwrap();
        let mut shared = SharedState::default();
        for _ in 0..3 {
            d.tick(&mut shared);
        }
        let replies: Vec<_> = d
            .take_deliveries()
            .into_iter()
            .filter(|dl| dl.message.kind == MessageKind::KnowledgeReply)
            .collect();
        assert_eq!(replies.len(), 1);
        assert_eq!(replies[0].message.payload, b"bgp\t-");
    }

    #[test]
    fn deterministic_ticks() {
        let run = || {
            let mut d = domain();
            for _ in 0..5 {
                d.register(LayerRequest::Colony, None, None).unwrap();
            }
            d.attach_role(&id("65001:1"), AgentRole::KnowledgeServer).unwrap();
            d.add_peer(Asn(65002));
            for s in 10000..10006 {
                let params = WorkerParams { query_rate: 0.5, remote_rate: 0.5, terms: vec!["a".into(), "b".into()] };
                d.attach_role(&IeId::new(Asn(65001), vec![s]).unwrap(), AgentRole::Worker(params)).unwrap();
            }
            let mut shared = SharedState::default();
            let mut lines = Vec::new();
            for _ in 0..50 {
                lines.extend(d.tick(&mut shared).iter().map(Event::to_line));
                lines.extend(d.take_outbound().iter().map(|m| m.hops_text()));
            }
            lines
        };
        assert_eq!(run(), run());
    }
}
