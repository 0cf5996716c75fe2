//! Wires a kernel, its simulated drivers, the rule engine and telemetry into
//! one running hub.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{info, warn};
use parking_lot::Mutex;

use crate::adapters::{
    write_replace_atomic, DirBlobStore, FileStreamStore, FsMailSink, MemoryBlobStore,
    MemoryMailSink, MemoryStreamStore,
};
use crate::app::{Backends, GenericApp};
use crate::clock::{Clock, SystemClock};
use crate::config::{BackendKind, HubConfig};
use crate::error::{HubError, Result};
use crate::images::ImageStore;
use crate::kernel::{Kernel, KernelConfig, RegistrySnapshot, Subscription, SubscriptionFilter};
use crate::model::{validate_descriptor, EVENT_SAMPLE};
use crate::rules::RuleEngine;
use crate::sim::{CameraBank, Simulator};
use crate::telemetry::Telemetry;

/// Queue depth of the engine's and telemetry's own subscriptions. Far larger
/// than a client queue so bursts are absorbed rather than dropped.
pub const INTERNAL_QUEUE_CAPACITY: usize = 1 << 16;

pub struct HubBuilder {
    config: HubConfig,
    clock: Option<Arc<dyn Clock>>,
    backends: Option<Backends>,
}

impl HubBuilder {
    pub fn clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = Some(clock);
        self
    }

    /// Overrides the backends that `config.backend` would select.
    pub fn backends(mut self, backends: Backends) -> Self {
        self.backends = Some(backends);
        self
    }

    pub fn start(self) -> Result<Hub> {
        let config = self.config;
        config.validate()?;
        let clock = self.clock.unwrap_or_else(|| Arc::new(SystemClock));
        let backends = match self.backends {
            Some(b) => b,
            None => default_backends(&config, &clock)?,
        };
        let persist = config.persist;

        let kernel = Arc::new(Kernel::new(
            KernelConfig {
                queue_capacity: config.queue_capacity,
                max_subscriptions: config.max_subscriptions,
                idle_expiry: config.idle_expiry(),
                ..KernelConfig::default()
            },
            clock.clone(),
        )?);
        let registry_file = persist.then(|| config.registry_file());
        if let Some(path) = &registry_file {
            if let Some(snapshot) = load_registry(path)? {
                kernel.restore(snapshot)?;
            }
        }

        let images = Arc::new(ImageStore::new(backends.blobs.clone()));
        let cameras = Arc::new(CameraBank::new(
            config.sim_seed,
            clock.clone(),
            images.clone(),
        ));
        kernel.set_action_handler(cameras.clone());
        let sim = Arc::new(Simulator::new(kernel.clone(), cameras));
        let app = Arc::new(GenericApp::new(kernel.clone(), images, backends));
        let engine = Arc::new(RuleEngine::new(
            app.clone(),
            persist.then(|| config.rules_file()),
        )?);
        let telemetry = Arc::new(Telemetry::new(app.backends().streams.clone()));

        let engine_sub =
            kernel.watch_internal(SubscriptionFilter::all(), INTERNAL_QUEUE_CAPACITY)?;
        let telemetry_sub = kernel.watch_internal(
            SubscriptionFilter {
                device_id: None,
                event_name: Some(EVENT_SAMPLE.into()),
            },
            INTERNAL_QUEUE_CAPACITY,
        )?;
        let threads = vec![
            engine.spawn(engine_sub.clone()),
            telemetry.spawn(telemetry_sub.clone(), clock.clone()),
        ];

        let hub = Hub {
            config,
            clock,
            kernel,
            app,
            sim,
            engine,
            telemetry,
            engine_sub,
            telemetry_sub,
            registry_file,
            threads: Mutex::new(threads),
        };
        hub.kernel.start()?;
        for draft in &hub.config.devices {
            let desc = validate_descriptor(draft).map_err(|v| {
                HubError::InvalidDescriptor(
                    v.iter().map(|v| format!("{}: {v}", draft.id)).collect(),
                )
            })?;
            let id = desc.id.clone();
            match hub.kernel.register_device(desc) {
                Ok(()) => {}
                Err(HubError::DuplicateId(_)) => warn!("device {id} listed twice in config"),
                Err(e) => return Err(e),
            }
        }
        info!(
            "hub started with {} device(s)",
            hub.kernel.list_devices()?.len()
        );
        Ok(hub)
    }
}

fn default_backends(config: &HubConfig, clock: &Arc<dyn Clock>) -> Result<Backends> {
    Ok(match config.backend {
        BackendKind::Fs => Backends {
            mail: Arc::new(FsMailSink::new(config.outbox_dir(), clock.clone())),
            blobs: Arc::new(DirBlobStore::new(config.blob_root())?),
            streams: Arc::new(FileStreamStore::new(config.stream_root())?),
        },
        BackendKind::Memory => Backends {
            mail: Arc::new(MemoryMailSink::new()),
            blobs: Arc::new(MemoryBlobStore::new()),
            streams: Arc::new(MemoryStreamStore::new()),
        },
    })
}

fn load_registry(path: &PathBuf) -> Result<Option<RegistrySnapshot>> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| HubError::ConfigInvalid(format!("registry file {}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// A running hub. Dropping it stops the platform.
pub struct Hub {
    config: HubConfig,
    clock: Arc<dyn Clock>,
    kernel: Arc<Kernel>,
    app: Arc<GenericApp>,
    sim: Arc<Simulator>,
    engine: Arc<RuleEngine>,
    telemetry: Arc<Telemetry>,
    engine_sub: Arc<Subscription>,
    telemetry_sub: Arc<Subscription>,
    registry_file: Option<PathBuf>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Hub {
    pub fn builder(config: HubConfig) -> HubBuilder {
        HubBuilder {
            config,
            clock: None,
            backends: None,
        }
    }

    pub fn start(config: HubConfig) -> Result<Self> {
        Self::builder(config).start()
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn app(&self) -> &Arc<GenericApp> {
        &self.app
    }

    pub fn sim(&self) -> &Arc<Simulator> {
        &self.sim
    }

    pub fn engine(&self) -> &Arc<RuleEngine> {
        &self.engine
    }

    pub fn telemetry(&self) -> &Arc<Telemetry> {
        &self.telemetry
    }

    /// True once the engine and telemetry have consumed every event offered
    /// to them so far.
    pub fn is_idle(&self) -> bool {
        let drained = |sub: &Subscription, processed: u64| {
            let s = sub.stats();
            s.queued == 0 && processed + s.dropped >= s.enqueued
        };
        drained(&self.engine_sub, self.engine.processed())
            && drained(&self.telemetry_sub, self.telemetry.processed())
    }

    /// Waits until [`Hub::is_idle`] or the timeout passes.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.is_idle() {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            std::thread::sleep(Duration::from_millis(2));
        }
    }

    /// Stops the platform, lets the workers drain, and saves the registry.
    /// Calling it again is a no-op.
    pub fn stop(&self) -> Result<()> {
        let threads: Vec<_> = std::mem::take(&mut *self.threads.lock());
        if threads.is_empty() {
            return Ok(());
        }
        let stopped = self.kernel.stop();
        for t in threads {
            if t.join().is_err() {
                warn!("worker thread panicked");
            }
        }
        stopped?;
        if let Some(path) = &self.registry_file {
            let json =
                serde_json::to_vec_pretty(&self.kernel.snapshot()).expect("snapshot serializes");
            write_replace_atomic(path, &json).map_err(|e| HubError::StoreFailure(e.to_string()))?;
        }
        info!("hub stopped");
        Ok(())
    }
}

impl Drop for Hub {
    fn drop(&mut self) {
        if let Err(e) = self.stop() {
            warn!("stopping hub: {e}");
        }
    }
}
