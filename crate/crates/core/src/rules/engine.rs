use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, warn};
use parking_lot::{Mutex, RwLock};
use rand::RngCore;

use super::model::{
    validate_spec, ActionOutcome, EventRef, FireLogEntry, Rule, RuleAction, RuleSpec, BUILTIN_VARS,
};
use super::template::Template;
use crate::adapters::{write_replace_atomic, Attachment, OutgoingMail};
use crate::app::GenericApp;
use crate::error::{HubError, Result};
use crate::kernel::Subscription;
use crate::model::{ActionDescriptor, BlobRef, EventRecord, PayloadValue};

/// Longest causal chain of rule-triggered events that is still evaluated.
pub const MAX_CHAIN_DEPTH: u8 = 8;
pub const FIRE_LOG_CAPACITY: usize = 10_000;

struct Entry {
    rule: Rule,
    fire_count: AtomicU64,
    log: Mutex<VecDeque<FireLogEntry>>,
}

impl Entry {
    fn new(rule: Rule) -> Self {
        Self {
            rule,
            fire_count: AtomicU64::new(0),
            log: Mutex::new(VecDeque::new()),
        }
    }

    fn snapshot(&self) -> Rule {
        Rule {
            fire_count: self.fire_count.load(Ordering::Relaxed),
            ..self.rule.clone()
        }
    }
}

/// Evaluates If-Then rules against published events.
///
/// Evaluation holds the rule set's read lock for the whole event, and every
/// mutation takes the write lock, so a rule deleted or disabled by a returned
/// call never fires afterwards.
pub struct RuleEngine {
    app: Arc<GenericApp>,
    store: Option<PathBuf>,
    rules: RwLock<Vec<Entry>>,
    processed: AtomicU64,
}

impl RuleEngine {
    /// Loads persisted rules from `store` if the file exists.
    pub fn new(app: Arc<GenericApp>, store: Option<PathBuf>) -> Result<Self> {
        let mut entries = Vec::new();
        if let Some(path) = &store {
            match fs::read(path) {
                Ok(bytes) => {
                    let rules: Vec<Rule> = serde_json::from_slice(&bytes).map_err(|e| {
                        HubError::ConfigInvalid(format!("rules file {}: {e}", path.display()))
                    })?;
                    entries = rules
                        .into_iter()
                        .map(|mut r| {
                            r.fire_count = 0;
                            Entry::new(r)
                        })
                        .collect();
                }
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(Self {
            app,
            store,
            rules: RwLock::new(entries),
            processed: AtomicU64::new(0),
        })
    }

    pub fn create_rule(&self, spec: RuleSpec) -> Result<String> {
        let kernel = self.app.kernel().clone();
        validate_spec(&spec, |id| kernel.device(id))?;
        let mut rules = self.rules.write();
        if let Some(dup) = rules.iter().find(|e| e.rule.same_behavior(&spec)) {
            return Err(HubError::DuplicateRule(dup.rule.rule_id.clone()));
        }
        let mut raw = [0u8; 8];
        rand::rng().fill_bytes(&mut raw);
        let rule = Rule {
            rule_id: format!("r-{}", hex::encode(raw)),
            trigger: spec.trigger,
            actions: spec.actions,
            enabled: spec.enabled,
            created_at_utc_ms: self.app.clock().now_ms(),
            fire_count: 0,
        };
        let id = rule.rule_id.clone();
        rules.push(Entry::new(rule));
        if let Err(e) = self.persist(&rules) {
            rules.pop();
            return Err(e);
        }
        Ok(id)
    }

    pub fn delete_rule(&self, rule_id: &str) -> Result<()> {
        let mut rules = self.rules.write();
        let pos = rules
            .iter()
            .position(|e| e.rule.rule_id == rule_id)
            .ok_or_else(|| HubError::UnknownRule(rule_id.to_owned()))?;
        let removed = rules.remove(pos);
        if let Err(e) = self.persist(&rules) {
            rules.insert(pos, removed);
            return Err(e);
        }
        Ok(())
    }

    pub fn set_enabled(&self, rule_id: &str, enabled: bool) -> Result<Rule> {
        let mut rules = self.rules.write();
        let entry = rules
            .iter_mut()
            .find(|e| e.rule.rule_id == rule_id)
            .ok_or_else(|| HubError::UnknownRule(rule_id.to_owned()))?;
        let previous = std::mem::replace(&mut entry.rule.enabled, enabled);
        let snapshot = entry.snapshot();
        if let Err(e) = self.persist(&rules) {
            if let Some(entry) = rules.iter_mut().find(|e| e.rule.rule_id == rule_id) {
                entry.rule.enabled = previous;
            }
            return Err(e);
        }
        Ok(snapshot)
    }

    /// All rules in creation order.
    pub fn list_rules(&self) -> Vec<Rule> {
        self.rules.read().iter().map(Entry::snapshot).collect()
    }

    pub fn rule(&self, rule_id: &str) -> Result<Rule> {
        self.rules
            .read()
            .iter()
            .find(|e| e.rule.rule_id == rule_id)
            .map(Entry::snapshot)
            .ok_or_else(|| HubError::UnknownRule(rule_id.to_owned()))
    }

    /// Most recent `limit` log entries for a rule, oldest first.
    pub fn fire_log(&self, rule_id: &str, limit: usize) -> Result<Vec<FireLogEntry>> {
        let rules = self.rules.read();
        let entry = rules
            .iter()
            .find(|e| e.rule.rule_id == rule_id)
            .ok_or_else(|| HubError::UnknownRule(rule_id.to_owned()))?;
        let log = entry.log.lock();
        let skip = log.len().saturating_sub(limit);
        Ok(log.iter().skip(skip).cloned().collect())
    }

    fn persist(&self, rules: &[Entry]) -> Result<()> {
        let Some(path) = &self.store else {
            return Ok(());
        };
        let list: Vec<Rule> = rules.iter().map(|e| e.snapshot()).collect();
        let json = serde_json::to_vec_pretty(&list).expect("rules serialize");
        write_replace_atomic(path, &json).map_err(|e| HubError::StoreFailure(e.to_string()))
    }

    /// Fires every enabled rule whose trigger matches the event, once each.
    /// Action errors abort only the rest of that rule's list.
    pub fn evaluate(&self, rec: &EventRecord) -> Vec<FireLogEntry> {
        let rules = self.rules.read();
        let mut fired = Vec::new();
        for entry in rules.iter() {
            let rule = &entry.rule;
            if !rule.enabled
                || rule.trigger.device_id != rec.device_id
                || rule.trigger.event_name != rec.event_name
            {
                continue;
            }
            entry.fire_count.fetch_add(1, Ordering::Relaxed);
            let started_utc_ms = self.app.clock().now_ms();
            let t0 = Instant::now();
            let outcomes = if rec.chain_depth >= MAX_CHAIN_DEPTH {
                warn!(
                    "rule {} not run: chain depth {} reached",
                    rule.rule_id, rec.chain_depth
                );
                vec![ActionOutcome::Error {
                    action: "chain".into(),
                    code: HubError::ChainDepthExceeded.code().into(),
                    message: HubError::ChainDepthExceeded.to_string(),
                }]
            } else {
                self.run_actions(rule, rec)
            };
            let log_entry = FireLogEntry {
                rule_id: rule.rule_id.clone(),
                triggering: EventRef {
                    device_id: rec.device_id.clone(),
                    seq: rec.seq,
                },
                outcomes,
                started_utc_ms,
                duration_ms: t0.elapsed().as_millis() as u64,
            };
            let mut log = entry.log.lock();
            if log.len() >= FIRE_LOG_CAPACITY {
                log.pop_front();
            }
            log.push_back(log_entry.clone());
            fired.push(log_entry);
        }
        fired
    }

    fn run_actions(&self, rule: &Rule, rec: &EventRecord) -> Vec<ActionOutcome> {
        let mut bindings: HashMap<String, BlobRef> = HashMap::new();
        let mut outcomes = Vec::with_capacity(rule.actions.len());
        for action in &rule.actions {
            match self.run_action(action, rec, &mut bindings) {
                Ok(()) => outcomes.push(ActionOutcome::Ok {
                    action: action.kind().into(),
                }),
                Err(e) => {
                    debug!("rule {} action {} failed: {e}", rule.rule_id, action.kind());
                    outcomes.push(ActionOutcome::Error {
                        action: action.kind().into(),
                        code: e.code().into(),
                        message: e.to_string(),
                    });
                    break;
                }
            }
        }
        outcomes
    }

    fn run_action(
        &self,
        action: &RuleAction,
        rec: &EventRecord,
        bindings: &mut HashMap<String, BlobRef>,
    ) -> Result<()> {
        let render = |text: &str, bindings: &HashMap<String, BlobRef>| -> Result<String> {
            Template::parse(text)?.render(&template_vars(rec, bindings))
        };
        let bound = |name: &str, bindings: &HashMap<String, BlobRef>| -> Result<BlobRef> {
            bindings
                .get(name)
                .cloned()
                .ok_or_else(|| HubError::BadTemplate(format!("binding `{name}` has no value")))
        };
        match action {
            RuleAction::DeviceAction {
                device_id,
                action_name,
                params,
            } => {
                self.app.kernel().invoke_action(&ActionDescriptor {
                    device_id: device_id.clone(),
                    action_name: action_name.clone(),
                    params: params.clone(),
                })?;
            }
            RuleAction::CaptureImage { camera_id, bind_as } => {
                let blob = self.app.get_image(camera_id)?;
                bindings.insert(bind_as.clone(), blob);
            }
            RuleAction::SendEmail {
                to,
                subject,
                body_template,
                attach,
            } => {
                let attachment = match attach {
                    Some(name) => {
                        let blob = bound(name, bindings)?;
                        let (blob, bytes) = self.app.blob(&blob.id)?;
                        Some(Attachment {
                            filename: format!("{name}.png"),
                            mime: blob.mime,
                            bytes,
                        })
                    }
                    None => None,
                };
                self.app.send_mail(&OutgoingMail {
                    to: to.clone(),
                    subject: render(subject, bindings)?,
                    body: render(body_template, bindings)?,
                    attachment,
                })?;
            }
            RuleAction::UploadPicture {
                container,
                name_template,
                source,
            } => {
                let blob = bound(source, bindings)?;
                let name = render(name_template, bindings)?;
                self.app.upload_picture(&blob.id, container, &name)?;
            }
            RuleAction::AppendStream {
                stream_name,
                text_template,
            } => {
                let text = render(text_template, bindings)?;
                self.app.add_file_data_stream(stream_name, &text)?;
            }
        }
        Ok(())
    }

    /// Number of events taken off the engine's subscription and evaluated.
    pub fn processed(&self) -> u64 {
        self.processed.load(Ordering::Acquire)
    }

    /// Consumes `sub` on a dedicated thread until the platform stops.
    pub fn spawn(self: &Arc<Self>, sub: Arc<Subscription>) -> JoinHandle<()> {
        let engine = self.clone();
        std::thread::Builder::new()
            .name("rule-engine".into())
            .spawn(move || loop {
                let now = engine.app.clock().now_ms();
                match sub.poll(Duration::from_millis(500), 100, now) {
                    Ok(polled) => {
                        if polled.overflowed {
                            warn!("rule engine queue overflowed; some events were not evaluated");
                        }
                        for rec in &polled.events {
                            engine.evaluate(rec);
                            engine.processed.fetch_add(1, Ordering::Release);
                        }
                    }
                    Err(_) => break,
                }
            })
            .expect("spawn rule engine thread")
    }
}

fn template_vars(
    rec: &EventRecord,
    bindings: &HashMap<String, BlobRef>,
) -> BTreeMap<String, String> {
    let mut vars = BTreeMap::new();
    for (k, v) in &rec.payload {
        vars.insert(k.clone(), v.to_string());
    }
    for (k, b) in bindings {
        vars.insert(k.clone(), PayloadValue::BlobRef(b.clone()).to_string());
    }
    let builtins = [
        rec.device_id.to_string(),
        rec.event_name.clone(),
        rec.timestamp_utc_ms.to_string(),
        rec.seq.to_string(),
    ];
    for (name, value) in BUILTIN_VARS.iter().zip(builtins) {
        vars.insert((*name).to_owned(), value);
    }
    vars
}
