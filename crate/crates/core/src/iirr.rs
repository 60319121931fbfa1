//! The innovation IRR: a transactional RPSL object store, the policy
//! reconciliation performed by IRR maintainer IEs, and the queue of tasks
//! handed to human administrators when an object cannot be produced
//! automatically.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::identity::{Asn, IeId};
use crate::rpsl::{
    format_as_number, parse_objects, serialize_objects,
    validate_object, Attribute, RpslError, RpslKey, RpslObject, Violation,
};

/// `source:` attribute written on generated objects.
pub const SOURCE: &str = "IIRR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Action {
    Delete,
    Add,
    Update,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Add => "Add",
            Action::Update => "Update",
            Action::Delete => "Delete",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub action: Action,
    pub object: RpslObject,
    pub submitted_by: IeId,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IrrError {
    #[error("{0} already exists")]
    KeyExists(RpslKey),
    #[error("{0} does not exist")]
    KeyMissing(RpslKey),
    #[error("object does not validate: {}", join_violations(.0))]
    InvalidObject(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxnReceipt {
    /// Position of the transaction in the journal.
    pub seq: usize,
    pub action: Action,
    pub key: RpslKey,
}

/// Valid objects keyed by primary key, plus the journal of every applied
/// transaction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IrrStore {
    objects: BTreeMap<RpslKey, RpslObject>,
    journal: Vec<Transaction>,
}

fn checked_key(obj: &RpslObject) -> Result<RpslKey, IrrError> {
    let violations = validate_object(obj);
    if !violations.is_empty() {
        return Err(IrrError::InvalidObject(violations));
    }
    Ok(obj.key().expect("valid objects have a key"))
}

fn apply(objects: &mut BTreeMap<RpslKey, RpslObject>, txn: &Transaction) -> Result<RpslKey, IrrError> {
    let key = checked_key(&txn.object)?;
    match (txn.action, objects.contains_key(&key)) {
        (Action::Add, true) => return Err(IrrError::KeyExists(key)),
        (Action::Update | Action::Delete, false) => return Err(IrrError::KeyMissing(key)),
        (Action::Delete, true) => {
            objects.remove(&key);
        }
        (Action::Add | Action::Update, _) => {
            objects.insert(key, txn.object.clone());
        }
    }
    Ok(key)
}

/// Rebuild store contents from a journal.
pub fn replay(journal: &[Transaction]) -> Result<BTreeMap<RpslKey, RpslObject>, IrrError> {
    let mut objects = BTreeMap::new();
    for txn in journal {
        apply(&mut objects, txn)?;
    }
    Ok(objects)
}

impl IrrStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Apply `txn` atomically: on error the store is unchanged.
    pub fn submit_transaction(&mut self, txn: Transaction) -> Result<TxnReceipt, IrrError> {
        let key = apply(&mut self.objects, &txn)?;
        let receipt = TxnReceipt {
            seq: self.journal.len(),
            action: txn.action,
            key,
        };
        self.journal.push(txn);
        Ok(receipt)
    }

    pub fn get(&self, key: &RpslKey) -> Option<&RpslObject> {
        self.objects.get(key)
    }

    pub fn objects(&self) -> &BTreeMap<RpslKey, RpslObject> {
        &self.objects
    }

    pub fn journal(&self) -> &[Transaction] {
        &self.journal
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Objects belonging to `asn` (routes by origin, aut-num by number).
    pub fn objects_of(&self, asn: Asn) -> impl Iterator<Item = (&RpslKey, &RpslObject)> {
        self.objects.iter().filter(move |(k, _)| k.asn() == asn)
    }

    /// RPSL flat file, objects sorted by key.
    pub fn dump(&self) -> String {
        serialize_objects(self.objects.values())
    }

    /// Add every object of an RPSL flat file, each attributed to the
    /// controller of the object's AS. Parse failures are returned and
    /// skipped.
    pub fn seed_from_text(&mut self, text: &str, tick: u64) -> Vec<SeedError> {
        let mut errors = Vec::new();
        for result in parse_objects(text) {
            let outcome = result.map_err(SeedError::Parse).and_then(|object| {
                let key = object.key().expect("parsed objects validate");
                self.submit_transaction(Transaction {
                    action: Action::Add,
                    object,
                    submitted_by: IeId::controller(key.asn()),
                    tick,
                })
                .map_err(SeedError::Store)
            });
            if let Err(e) = outcome {
                errors.push(e);
            }
        }
        errors
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeedError {
    #[error(transparent)]
    Parse(RpslError),
    #[error(transparent)]
    Store(IrrError),
}

/// Declarative routing policy of one AS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyDecl {
    pub asn: Asn,
    pub announced_prefixes: BTreeSet<IpNet>,
    pub as_name: Option<String>,
}

impl PolicyDecl {
    pub fn new(asn: Asn, prefixes: impl IntoIterator<Item = IpNet>, as_name: Option<&str>) -> Self {
        Self {
            asn,
            announced_prefixes: prefixes.into_iter().collect(),
            as_name: as_name.map(str::to_string),
        }
    }

    /// Prefixes must be network addresses (no host bits).
    pub fn validate(&self) -> Result<(), String> {
        match self.announced_prefixes.iter().find(|p| p.trunc() != **p) {
            Some(p) => Err(format!("prefix {p} has host bits set")),
            None => Ok(()),
        }
    }

    fn route_key(&self, prefix: &IpNet) -> RpslKey {
        match prefix {
            IpNet::V4(p) => RpslKey::Route(*p, self.asn),
            IpNet::V6(p) => RpslKey::Route6(*p, self.asn),
        }
    }
}

fn maintainer_name(asn: Asn) -> String {
    format!("MAINT-AS{asn}")
}

/// Object generated for an announced prefix.
pub fn draft_route(asn: Asn, prefix: &IpNet) -> RpslObject {
    let class = match prefix {
        IpNet::V4(_) => "route",
        IpNet::V6(_) => "route6",
    };
    RpslObject::new(vec![
        Attribute::new(class, prefix.to_string()),
        Attribute::new("origin", format_as_number(asn)),
        Attribute::new("mnt-by", maintainer_name(asn)),
        Attribute::new("source", SOURCE),
    ])
    .expect("known class")
}

pub fn draft_aut_num(asn: Asn, as_name: &str) -> RpslObject {
    RpslObject::new(vec![
        Attribute::new("aut-num", format_as_number(asn)),
        Attribute::new("as-name", as_name),
        Attribute::new("mnt-by", maintainer_name(asn)),
        Attribute::new("source", SOURCE),
    ])
    .expect("known class")
}

/// One step of reconciliation. `draft` is the object to submit: the stored
/// object for deletes, the generated one otherwise. It is `None` when the
/// policy lacks the data needed to generate it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Change {
    pub action: Action,
    pub key: RpslKey,
    pub draft: Option<RpslObject>,
}

impl Change {
    pub fn into_transaction(self, submitted_by: &IeId, tick: u64) -> Option<Transaction> {
        Some(Transaction {
            action: self.action,
            object: self.draft?,
            submitted_by: submitted_by.clone(),
            tick,
        })
    }
}

fn non_key_attributes(obj: &RpslObject) -> Vec<&Attribute> {
    obj.attributes()
        .iter()
        .filter(|a| !obj.is_key_attribute(&a.name))
        .collect()
}

/// Minimal change list making the store's objects for `policy.asn` match
/// the policy: deletes first, then adds, then updates, each by key.
pub fn diff_policy(policy: &PolicyDecl, store: &IrrStore) -> Vec<Change> {
    let mut wanted: BTreeMap<RpslKey, Option<RpslObject>> = policy
        .announced_prefixes
        .iter()
        .map(|p| (policy.route_key(p), Some(draft_route(policy.asn, p))))
        .collect();
    wanted.insert(
        RpslKey::AutNum(policy.asn),
        policy.as_name.as_deref().map(|n| draft_aut_num(policy.asn, n)),
    );

    let mut changes = Vec::new();
    for (key, stored) in store.objects_of(policy.asn) {
        if !wanted.contains_key(key) {
            changes.push(Change {
                action: Action::Delete,
                key: *key,
                draft: Some(stored.clone()),
            });
        }
    }
    for (key, draft) in wanted {
        match (store.get(&key), draft) {
            (None, draft) => changes.push(Change {
                action: Action::Add,
                key,
                draft,
            }),
            // without a draft there is nothing to compare against
            (Some(_), None) => {}
            (Some(stored), Some(draft)) => {
                if non_key_attributes(stored) != non_key_attributes(&draft) {
                    changes.push(Change {
                        action: Action::Update,
                        key,
                        draft: Some(draft),
                    });
                }
            }
        }
    }
    changes.sort_by_key(|c| (c.action, c.key));
    changes
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Approved,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HumanTask {
    pub id: u64,
    pub key: RpslKey,
    pub description: String,
    pub draft: Option<RpslObject>,
    pub status: TaskStatus,
    pub raised_by: IeId,
    pub raised_at: u64,
    /// Set once an approved draft has been submitted by a maintainer.
    pub applied: bool,
}

impl HumanTask {
    fn open(&self) -> bool {
        self.status == TaskStatus::Pending || (self.status == TaskStatus::Approved && !self.applied)
    }
}

pub enum Decision {
    Approve(RpslObject),
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("unknown task {0}")]
    UnknownTask(u64),
    #[error("task {0} is not pending")]
    NotPending(u64),
    #[error("draft does not validate: {}", join_violations(.0))]
    InvalidDraft(Vec<Violation>),
    #[error("task file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HumanTaskQueue {
    tasks: BTreeMap<u64, HumanTask>,
    next_id: u64,
}

/// Line format of the task file (one JSON object per line).
#[derive(Serialize, Deserialize)]
struct TaskRecord {
    id: u64,
    key: String,
    status: TaskStatus,
    applied: bool,
    raised_by: IeId,
    raised_at: u64,
    description: String,
    /// Attribute pairs; drafts may be invalid, so they are not stored as
    /// RPSL text.
    draft: Option<Vec<(String, String)>>,
}

impl HumanTaskQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: u64) -> Option<&HumanTask> {
        self.tasks.get(&id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &HumanTask> {
        self.tasks.values()
    }

    pub fn pending(&self) -> impl Iterator<Item = &HumanTask> {
        self.tasks.values().filter(|t| t.status == TaskStatus::Pending)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    fn has_open(&self, key: &RpslKey) -> bool {
        self.tasks.values().any(|t| &t.key == key && t.open())
    }

    fn raise(&mut self, key: RpslKey, description: String, draft: Option<RpslObject>, raised_by: &IeId, tick: u64) -> &HumanTask {
        self.next_id += 1;
        let id = self.next_id;
        self.tasks.insert(
            id,
            HumanTask {
                id,
                key,
                description,
                draft,
                status: TaskStatus::Pending,
                raised_by: raised_by.clone(),
                raised_at: tick,
                applied: false,
            },
        );
        &self.tasks[&id]
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in self.tasks.values() {
            let record = TaskRecord {
                id: t.id,
                key: t.key.to_string(),
                status: t.status,
                applied: t.applied,
                raised_by: t.raised_by.clone(),
                raised_at: t.raised_at,
                description: t.description.clone(),
                draft: t.draft.as_ref().map(|d| {
                    d.attributes().iter().map(|a| (a.name.clone(), a.value.clone())).collect()
                }),
            };
            out.push_str(&serde_json::to_string(&record).expect("plain data serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<HumanTaskQueue, TaskError> {
        let mut queue = HumanTaskQueue::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fmt_err = |m: String| TaskError::Format(format!("line {}: {m}", i + 1));
            let r: TaskRecord = serde_json::from_str(line).map_err(|e| fmt_err(e.to_string()))?;
            let key: RpslKey = r.key.parse().map_err(fmt_err)?;
            let draft = match r.draft {
                Some(pairs) => Some(
                    RpslObject::new(pairs.into_iter().map(|(n, v)| Attribute::new(n, v)).collect())
                        .map_err(|e| fmt_err(e.to_string()))?,
                ),
                None => None,
            };
            queue.next_id = queue.next_id.max(r.id);
            queue.tasks.insert(
                r.id,
                HumanTask {
                    id: r.id,
                    key,
                    description: r.description,
                    draft,
                    status: r.status,
                    raised_by: r.raised_by,
                    raised_at: r.raised_at,
                    applied: r.applied,
                },
            );
        }
        Ok(queue)
    }
}

/// Approve (with a validating draft) or reject a pending task.
pub fn resolve_human_task(queue: &mut HumanTaskQueue, task_id: u64, decision: Decision) -> Result<HumanTask, TaskError> {
    let task = queue.tasks.get_mut(&task_id).ok_or(TaskError::UnknownTask(task_id))?;
    if task.status != TaskStatus::Pending {
        return Err(TaskError::NotPending(task_id));
    }
    match decision {
        Decision::Approve(draft) => {
            let violations = validate_object(&draft);
            if !violations.is_empty() {
                return Err(TaskError::InvalidDraft(violations));
            }
            task.draft = Some(draft);
            task.status = TaskStatus::Approved;
        }
        Decision::Reject => task.status = TaskStatus::Rejected,
    }
    Ok(task.clone())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaintainerOutcome {
    pub submitted: Vec<(Transaction, TxnReceipt)>,
    pub failed: Vec<(Transaction, IrrError)>,
    pub raised: Vec<HumanTask>,
    /// Approved tasks whose drafts were submitted this step.
    pub applied_tasks: Vec<u64>,
}

/// One reconciliation pass of an IRR maintainer IE: submit drafts of newly
/// approved tasks for this AS, then submit every automatable change and
/// turn the rest into human tasks (at most one open task per key).
pub fn maintainer_step(
    agent: &IeId,
    policy: &PolicyDecl,
    store: &mut IrrStore,
    tasks: &mut HumanTaskQueue,
    tick: u64,
) -> MaintainerOutcome {
    let mut out = MaintainerOutcome::default();

    let approved: Vec<u64> = tasks
        .tasks
        .values()
        .filter(|t| t.status == TaskStatus::Approved && !t.applied && t.key.asn() == policy.asn)
        .map(|t| t.id)
        .collect();
    for id in approved {
        let task = tasks.tasks.get_mut(&id).expect("listed above");
        task.applied = true;
        out.applied_tasks.push(id);
        let Some(draft) = task.draft.clone() else { continue };
        let action = match draft.key() {
            Some(k) if store.get(&k).is_some() => Action::Update,
            _ => Action::Add,
        };
        submit(store, &mut out, Transaction { action, object: draft, submitted_by: agent.clone(), tick });
    }

    for change in diff_policy(policy, store) {
        let automatable = change
            .draft
            .as_ref()
            .map(|d| (validate_object(d), d));
        match automatable {
            Some((violations, _)) if violations.is_empty() => {
                let txn = change.into_transaction(agent, tick).expect("draft present");
                submit(store, &mut out, txn);
            }
            other => {
                if tasks.has_open(&change.key) {
                    continue;
                }
                let description = match &other {
                    None => format!("{} {}: policy lacks the data to generate this object", change.action, change.key),
                    Some((v, _)) => format!("{} {}: generated draft is invalid ({})", change.action, change.key, join_violations(v)),
                };
                let task = tasks.raise(change.key, description, change.draft, agent, tick);
                out.raised.push(task.clone());
            }
        }
    }
    out
}

fn submit(store: &mut IrrStore, out: &mut MaintainerOutcome, txn: Transaction) {
    match store.submit_transaction(txn.clone()) {
        Ok(receipt) => out.submitted.push((txn, receipt)),
        Err(e) => out.failed.push((txn, e)),
    }
}
