//! Device registry, lifecycle and the event bus.
//!
//! Every published record, including the lifecycle events carried by the
//! `@platform` pseudo-device, is stamped with a per-device sequence number and
//! the hub's clock, then fanned out to all matching subscriptions while the
//! registry lock is held. That gives per-device FIFO delivery for free.

mod subscription;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

pub use subscription::{
    Polled, QueueStats, Subscription, SubscriptionFilter, DEFAULT_QUEUE_CAPACITY, MAX_POLL_BATCH,
    MAX_POLL_TIMEOUT_MS,
};

use crate::clock::Clock;
use crate::error::{HubError, Result};
use crate::model::{
    ActionDescriptor, DeviceDescriptor, DeviceId, EventRecord, LifecycleEvent, Payload,
    PayloadValue,
};

pub const DEFAULT_MAX_SUBSCRIPTIONS: usize = 256;
pub const DEFAULT_IDLE_EXPIRY: Duration = Duration::from_secs(600);
pub const DEFAULT_ACTION_DEADLINE: Duration = Duration::from_secs(5);

/// Executes device actions on behalf of the kernel.
pub trait ActionHandler: Send + Sync {
    fn invoke(&self, device: &DeviceDescriptor, action: &ActionDescriptor) -> Result<Payload>;
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub queue_capacity: usize,
    pub max_subscriptions: usize,
    pub idle_expiry: Duration,
    pub action_deadline: Duration,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            max_subscriptions: DEFAULT_MAX_SUBSCRIPTIONS,
            idle_expiry: DEFAULT_IDLE_EXPIRY,
            action_deadline: DEFAULT_ACTION_DEADLINE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Running,
    Stopped,
}

/// Persistable registry contents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RegistrySnapshot {
    pub devices: Vec<DeviceDescriptor>,
    pub per_device_seq: BTreeMap<DeviceId, u64>,
}

struct State {
    phase: Phase,
    devices: BTreeMap<DeviceId, DeviceDescriptor>,
    seqs: HashMap<DeviceId, u64>,
}

pub struct Kernel {
    clock: Arc<dyn Clock>,
    config: KernelConfig,
    state: Mutex<State>,
    subs: RwLock<HashMap<String, Arc<Subscription>>>,
    actions: RwLock<Option<Arc<dyn ActionHandler>>>,
}

impl Kernel {
    pub fn new(config: KernelConfig, clock: Arc<dyn Clock>) -> Result<Self> {
        if config.queue_capacity == 0 {
            return Err(HubError::ConfigInvalid(
                "queue capacity must be positive".into(),
            ));
        }
        if config.max_subscriptions == 0 {
            return Err(HubError::ConfigInvalid(
                "subscription limit must be positive".into(),
            ));
        }
        Ok(Self {
            clock,
            config,
            state: Mutex::new(State {
                phase: Phase::Idle,
                devices: BTreeMap::new(),
                seqs: HashMap::new(),
            }),
            subs: RwLock::new(HashMap::new()),
            actions: RwLock::new(None),
        })
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn config(&self) -> &KernelConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.state.lock().phase
    }

    pub fn set_action_handler(&self, handler: Arc<dyn ActionHandler>) {
        *self.actions.write() = Some(handler);
    }

    /// Loads a registry snapshot. Only allowed before start; restored devices
    /// come back disconnected with their sequence counters intact.
    pub fn restore(&self, snapshot: RegistrySnapshot) -> Result<()> {
        let mut st = self.state.lock();
        if st.phase != Phase::Idle {
            return Err(HubError::AlreadyStarted);
        }
        for mut d in snapshot.devices {
            d.connected = false;
            st.devices.insert(d.id.clone(), d);
        }
        st.seqs.extend(snapshot.per_device_seq);
        Ok(())
    }

    pub fn snapshot(&self) -> RegistrySnapshot {
        let st = self.state.lock();
        RegistrySnapshot {
            devices: st.devices.values().cloned().collect(),
            per_device_seq: st
                .seqs
                .iter()
                .filter(|(id, _)| !id.is_platform())
                .map(|(id, seq)| (id.clone(), *seq))
                .collect(),
        }
    }

    pub fn start(&self) -> Result<()> {
        let mut st = self.state.lock();
        match st.phase {
            Phase::Idle => {}
            Phase::Running => return Err(HubError::AlreadyStarted),
            Phase::Stopped => return Err(HubError::PlatformStopped),
        }
        st.phase = Phase::Running;
        self.emit_lifecycle(&mut st, LifecycleEvent::PlatformStarted, None);
        Ok(())
    }

    /// Publishes `platformStopped`, then closes every subscription so blocked
    /// polls wake up with a terminal marker once drained.
    pub fn stop(&self) -> Result<()> {
        let mut st = self.state.lock();
        match st.phase {
            Phase::Running => {}
            Phase::Idle | Phase::Stopped => return Err(HubError::NotStarted),
        }
        self.emit_lifecycle(&mut st, LifecycleEvent::PlatformStopped, None);
        st.phase = Phase::Stopped;
        for d in st.devices.values_mut() {
            d.connected = false;
        }
        for sub in self.subs.read().values() {
            sub.close();
        }
        Ok(())
    }

    pub fn register_device(&self, mut desc: DeviceDescriptor) -> Result<()> {
        let mut st = self.state.lock();
        ensure_running(st.phase)?;
        if desc.id.is_platform() {
            return Err(HubError::InvalidDescriptor(vec!["reserved id".into()]));
        }
        if let Some(existing) = st.devices.get(&desc.id) {
            if existing.connected {
                return Err(HubError::DuplicateId(desc.id.to_string()));
            }
        }
        desc.connected = true;
        let id = desc.id.clone();
        st.devices.insert(id.clone(), desc);
        self.emit_lifecycle(&mut st, LifecycleEvent::DeviceRegistered, Some(&id));
        Ok(())
    }

    pub fn disconnect_device(&self, id: &DeviceId) -> Result<()> {
        let mut st = self.state.lock();
        ensure_running(st.phase)?;
        let dev = st
            .devices
            .get_mut(id)
            .ok_or_else(|| HubError::UnknownDevice(id.to_string()))?;
        if !dev.connected {
            return Err(HubError::AlreadyDisconnected(id.to_string()));
        }
        dev.connected = false;
        self.emit_lifecycle(&mut st, LifecycleEvent::DeviceDisconnected, Some(id));
        Ok(())
    }

    pub fn publish_event(
        &self,
        device_id: &DeviceId,
        event_name: &str,
        payload: Payload,
    ) -> Result<EventRecord> {
        self.publish_caused(device_id, event_name, payload, 0)
    }

    /// Like [`Kernel::publish_event`] but records how many rule hops led here.
    pub fn publish_caused(
        &self,
        device_id: &DeviceId,
        event_name: &str,
        payload: Payload,
        chain_depth: u8,
    ) -> Result<EventRecord> {
        let mut st = self.state.lock();
        ensure_running(st.phase)?;
        let dev = st
            .devices
            .get(device_id)
            .ok_or_else(|| HubError::UnknownDevice(device_id.to_string()))?;
        if !dev.connected {
            return Err(HubError::DeviceDisconnected(device_id.to_string()));
        }
        if !dev.has_event(event_name) {
            return Err(HubError::UnknownEventName(event_name.to_owned()));
        }
        Ok(self.emit(&mut st, device_id.clone(), event_name, payload, chain_depth))
    }

    pub fn invoke_action(&self, action: &ActionDescriptor) -> Result<Payload> {
        let device = {
            let st = self.state.lock();
            ensure_running(st.phase)?;
            let dev = st
                .devices
                .get(&action.device_id)
                .ok_or_else(|| HubError::UnknownDevice(action.device_id.to_string()))?;
            if !dev.connected {
                return Err(HubError::DeviceDisconnected(action.device_id.to_string()));
            }
            if !dev.has_action(&action.action_name) {
                return Err(HubError::UnknownAction(action.action_name.clone()));
            }
            dev.clone()
        };
        let handler = self
            .actions
            .read()
            .clone()
            .ok_or_else(|| HubError::DriverFailure("no driver attached".into()))?;
        let started = Instant::now();
        let out = handler.invoke(&device, action)?;
        if started.elapsed() > self.config.action_deadline {
            return Err(HubError::DriverFailure("driver deadline exceeded".into()));
        }
        Ok(out)
    }

    pub fn list_devices(&self) -> Result<Vec<DeviceDescriptor>> {
        let st = self.state.lock();
        if st.phase == Phase::Idle {
            return Err(HubError::NotStarted);
        }
        Ok(st.devices.values().cloned().collect())
    }

    pub fn device(&self, id: &DeviceId) -> Result<DeviceDescriptor> {
        self.state
            .lock()
            .devices
            .get(id)
            .cloned()
            .ok_or_else(|| HubError::UnknownDevice(id.to_string()))
    }

    pub fn last_seq(&self, id: &DeviceId) -> u64 {
        self.state.lock().seqs.get(id).copied().unwrap_or(0)
    }

    /// WatchEvent: client-facing subscription, counted against the limit and
    /// subject to idle expiry.
    pub fn watch(&self, filter: SubscriptionFilter) -> Result<Arc<Subscription>> {
        self.create_subscription(filter, self.config.queue_capacity, false)
    }

    /// Subscription for in-process consumers (rule engine, telemetry).
    pub fn watch_internal(
        &self,
        filter: SubscriptionFilter,
        capacity: usize,
    ) -> Result<Arc<Subscription>> {
        self.create_subscription(filter, capacity, true)
    }

    fn create_subscription(
        &self,
        filter: SubscriptionFilter,
        capacity: usize,
        internal: bool,
    ) -> Result<Arc<Subscription>> {
        // allowed before start so that platformStarted itself is observable
        let st = self.state.lock();
        if st.phase == Phase::Stopped {
            return Err(HubError::PlatformStopped);
        }
        if let Some(id) = &filter.device_id {
            if !id.is_platform() && !st.devices.contains_key(id) {
                return Err(HubError::UnknownDevice(id.to_string()));
            }
        }
        self.expire_idle();
        let mut subs = self.subs.write();
        if !internal
            && subs.values().filter(|s| !s.is_internal()).count() >= self.config.max_subscriptions
        {
            return Err(HubError::TooManySubscriptions(
                self.config.max_subscriptions,
            ));
        }
        let sub = Arc::new(Subscription::new(
            filter,
            capacity,
            internal,
            self.clock.now_ms(),
        ));
        subs.insert(sub.id().to_owned(), sub.clone());
        Ok(sub)
    }

    pub fn subscription(&self, id: &str) -> Result<Arc<Subscription>> {
        self.subs
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| HubError::UnknownSubscription(id.to_owned()))
    }

    /// GetNewEvent.
    pub fn poll(&self, sub_id: &str, timeout: Duration, max_batch: usize) -> Result<Polled> {
        self.expire_idle();
        let sub = self.subscription(sub_id)?;
        let timeout = timeout.min(Duration::from_millis(MAX_POLL_TIMEOUT_MS));
        sub.poll(
            timeout,
            max_batch.clamp(1, MAX_POLL_BATCH),
            self.clock.now_ms(),
        )
    }

    pub fn unsubscribe(&self, sub_id: &str) -> Result<()> {
        let sub = self
            .subs
            .write()
            .remove(sub_id)
            .ok_or_else(|| HubError::UnknownSubscription(sub_id.to_owned()))?;
        sub.close();
        Ok(())
    }

    pub fn subscription_count(&self) -> usize {
        self.subs
            .read()
            .values()
            .filter(|s| !s.is_internal())
            .count()
    }

    fn expire_idle(&self) {
        let expiry = self.config.idle_expiry;
        let mut subs = self.subs.write();
        subs.retain(|_, s| {
            let keep = s.is_internal() || s.idle_for() < expiry;
            if !keep {
                s.close();
            }
            keep
        });
    }

    fn emit_lifecycle(&self, st: &mut State, ev: LifecycleEvent, subject: Option<&DeviceId>) {
        let mut payload = Payload::new();
        if let Some(id) = subject {
            payload.insert("deviceId".into(), PayloadValue::Text(id.to_string()));
        }
        self.emit(st, DeviceId::platform(), ev.name(), payload, 0);
    }

    fn emit(
        &self,
        st: &mut State,
        device_id: DeviceId,
        event_name: &str,
        payload: Payload,
        chain_depth: u8,
    ) -> EventRecord {
        let seq = st.seqs.entry(device_id.clone()).or_insert(0);
        *seq += 1;
        let rec = EventRecord {
            device_id,
            seq: *seq,
            event_name: event_name.to_owned(),
            payload,
            timestamp_utc_ms: self.clock.now_ms(),
            chain_depth,
        };
        for sub in self.subs.read().values() {
            sub.offer(&rec);
        }
        rec
    }
}

fn ensure_running(phase: Phase) -> Result<()> {
    match phase {
        Phase::Running => Ok(()),
        Phase::Idle => Err(HubError::NotStarted),
        Phase::Stopped => Err(HubError::PlatformStopped),
    }
}
