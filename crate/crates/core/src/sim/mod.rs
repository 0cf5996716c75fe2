//! Simulated devices standing in for door sensors, cameras and climate
//! sensors, plus a scenario runner that drives them on a [`Clock`].

pub mod frame;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::error::{HubError, Result};
use crate::images::{ImageStore, PNG_MIME};
use crate::kernel::{ActionHandler, Kernel, Phase};
use crate::model::{
    ActionDescriptor, BlobRef, DeviceDescriptor, DeviceId, DeviceKind, EventRecord, Payload,
    PayloadValue, ACTION_TAKE_PICTURE, EVENT_DOOR_CLOSED, EVENT_DOOR_OPENED, EVENT_SAMPLE,
    KEY_IMAGE,
};

/// Driver for every simulated camera. Registered with the kernel as its
/// action handler.
pub struct CameraBank {
    seed: AtomicU64,
    clock: Arc<dyn Clock>,
    images: Arc<ImageStore>,
    counts: Mutex<HashMap<DeviceId, u64>>,
}

impl CameraBank {
    pub fn new(seed: u64, clock: Arc<dyn Clock>, images: Arc<ImageStore>) -> Self {
        Self {
            seed: AtomicU64::new(seed),
            clock,
            images,
            counts: Mutex::new(HashMap::new()),
        }
    }

    pub fn reseed(&self, seed: u64) {
        self.seed.store(seed, Ordering::SeqCst);
    }

    fn capture(&self, camera: &DeviceId) -> Result<BlobRef> {
        // hold the count lock across rendering so per-camera captures serialize
        let mut counts = self.counts.lock();
        let count = counts.entry(camera.clone()).or_insert(0);
        *count += 1;
        let png = frame::render_png(
            self.seed.load(Ordering::SeqCst),
            *count,
            self.clock.now_ms(),
        );
        self.images
            .put(PNG_MIME, &png)
            .map_err(|e| HubError::DriverFailure(format!("storing capture: {e}")))
    }
}

impl ActionHandler for CameraBank {
    fn invoke(&self, device: &DeviceDescriptor, action: &ActionDescriptor) -> Result<Payload> {
        match (device.kind, action.action_name.as_str()) {
            (DeviceKind::Camera, ACTION_TAKE_PICTURE) => {
                let blob = self.capture(&device.id)?;
                Ok(Payload::from([(
                    KEY_IMAGE.to_owned(),
                    PayloadValue::BlobRef(blob),
                )]))
            }
            _ => Err(HubError::UnknownAction(action.action_name.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "type",
    rename_all = "camelCase",
    rename_all_fields = "camelCase"
)]
pub enum SimCommand {
    SetDoor { device_id: DeviceId, open: bool },
    EmitSample { device_id: DeviceId, value: f64 },
    Tick,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimStep {
    pub offset_ms: u64,
    pub command: SimCommand,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimScenario {
    #[serde(default)]
    pub seed: u64,
    pub steps: Vec<SimStep>,
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self
            .steps
            .windows(2)
            .any(|w| w[1].offset_ms < w[0].offset_ms)
        {
            return Err(HubError::InvalidArgument(
                "scenario offsets must be non-decreasing".into(),
            ));
        }
        Ok(())
    }

    /// Parses either `{"seed":..,"steps":[..]}` or a bare step array.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Form {
            Full(SimScenario),
            Steps(Vec<SimStep>),
        }
        let scenario = match serde_json::from_str::<Form>(text)
            .map_err(|e| HubError::InvalidArgument(format!("invalid scenario: {e}")))?
        {
            Form::Full(s) => s,
            Form::Steps(steps) => SimScenario { seed: 0, steps },
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Time span covered by the steps.
    pub fn duration_ms(&self) -> u64 {
        self.steps.last().map_or(0, |s| s.offset_ms)
    }
}

/// Outcome of a scenario run aborted by a failing step.
#[derive(Debug)]
pub struct ScenarioAbort {
    pub step: usize,
    pub error: HubError,
    pub partial: Vec<EventRecord>,
}

impl std::fmt::Display for ScenarioAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "step {} failed: {} ({} records published)",
            self.step,
            self.error,
            self.partial.len()
        )
    }
}

impl std::error::Error for ScenarioAbort {}

pub struct Simulator {
    kernel: Arc<Kernel>,
    cameras: Arc<CameraBank>,
    doors: Mutex<HashMap<DeviceId, bool>>,
    // guards the check-then-publish sequence for sensor samples
    sample_gate: Mutex<()>,
}

impl Simulator {
    pub fn new(kernel: Arc<Kernel>, cameras: Arc<CameraBank>) -> Self {
        Self {
            kernel,
            cameras,
            doors: Mutex::new(HashMap::new()),
            sample_gate: Mutex::new(()),
        }
    }

    pub fn cameras(&self) -> &Arc<CameraBank> {
        &self.cameras
    }

    fn device_of_kind(
        &self,
        id: &DeviceId,
        ok: impl Fn(DeviceKind) -> bool,
    ) -> Result<DeviceDescriptor> {
        match self.kernel.phase() {
            Phase::Running => {}
            Phase::Idle => return Err(HubError::NotStarted),
            Phase::Stopped => return Err(HubError::PlatformStopped),
        }
        let dev = self.kernel.device(id)?;
        if !ok(dev.kind) {
            return Err(HubError::WrongKind(id.to_string()));
        }
        if !dev.connected {
            return Err(HubError::DeviceDisconnected(id.to_string()));
        }
        Ok(dev)
    }

    /// Returns `None` when the door is already in the requested state.
    pub fn set_door(&self, id: &DeviceId, open: bool) -> Result<Option<EventRecord>> {
        let mut doors = self.doors.lock();
        self.device_of_kind(id, |k| k == DeviceKind::DoorSensor)?;
        let state = doors.entry(id.clone()).or_insert(false);
        if *state == open {
            return Ok(None);
        }
        let name = if open {
            EVENT_DOOR_OPENED
        } else {
            EVENT_DOOR_CLOSED
        };
        let rec = self.kernel.publish_event(id, name, Payload::new())?;
        *state = open;
        Ok(Some(rec))
    }

    pub fn door_is_open(&self, id: &DeviceId) -> bool {
        self.doors.lock().get(id).copied().unwrap_or(false)
    }

    pub fn take_picture(&self, id: &DeviceId) -> Result<BlobRef> {
        self.device_of_kind(id, |k| k == DeviceKind::Camera)?;
        let out = self.kernel.invoke_action(&ActionDescriptor {
            device_id: id.clone(),
            action_name: ACTION_TAKE_PICTURE.into(),
            params: Payload::new(),
        })?;
        out.get(KEY_IMAGE)
            .and_then(PayloadValue::as_blob)
            .cloned()
            .ok_or_else(|| HubError::DriverFailure("camera returned no image".into()))
    }

    pub fn emit_sample(&self, id: &DeviceId, value: f64) -> Result<EventRecord> {
        let _gate = self.sample_gate.lock();
        let dev = self.device_of_kind(id, |k| k.sample_key().is_some())?;
        let number = PayloadValue::number(value).ok_or(HubError::NonFiniteValue)?;
        let key = dev.kind.sample_key().expect("sensor kind");
        self.kernel
            .publish_event(id, EVENT_SAMPLE, Payload::from([(key.to_owned(), number)]))
    }

    pub fn apply(&self, cmd: &SimCommand) -> Result<Option<EventRecord>> {
        match cmd {
            SimCommand::SetDoor { device_id, open } => self.set_door(device_id, *open),
            SimCommand::EmitSample { device_id, value } => {
                self.emit_sample(device_id, *value).map(Some)
            }
            SimCommand::Tick => Ok(None),
        }
    }

    /// Runs the steps in offset order, pacing them on `clock` relative to the
    /// moment the run starts. Reseeds the cameras from the scenario.
    pub fn run_scenario(
        &self,
        scenario: &SimScenario,
        clock: &dyn Clock,
    ) -> Result<Vec<EventRecord>, ScenarioAbort> {
        if let Err(error) = scenario.validate() {
            return Err(ScenarioAbort {
                step: 0,
                error,
                partial: Vec::new(),
            });
        }
        self.cameras.reseed(scenario.seed);
        let start = clock.now_ms();
        let mut out = Vec::new();
        for (i, step) in scenario.steps.iter().enumerate() {
            clock.advance_to(start + step.offset_ms as i64);
            match self.apply(&step.command) {
                Ok(Some(rec)) => out.push(rec),
                Ok(None) => {}
                Err(error) => {
                    return Err(ScenarioAbort {
                        step: i,
                        error,
                        partial: out,
                    })
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::MemoryBlobStore;
    use crate::clock::VirtualClock;
    use crate::kernel::{KernelConfig, SubscriptionFilter};
    use std::time::Duration;

    struct Rig {
        kernel: Arc<Kernel>,
        sim: Simulator,
        clock: Arc<VirtualClock>,
        images: Arc<ImageStore>,
    }

    fn rig(seed: u64) -> Rig {
        let clock = Arc::new(VirtualClock::new(1_700_000_000_000));
        let kernel = Arc::new(Kernel::new(KernelConfig::default(), clock.clone()).unwrap());
        let images = Arc::new(ImageStore::new(Arc::new(MemoryBlobStore::new())));
        let cams = Arc::new(CameraBank::new(seed, clock.clone(), images.clone()));
        kernel.set_action_handler(cams.clone());
        kernel.start().unwrap();
        for (id, kind) in [
            ("door1", DeviceKind::DoorSensor),
            ("cam1", DeviceKind::Camera),
            ("temp1", DeviceKind::TemperatureSensor),
            ("hum1", DeviceKind::HumiditySensor),
        ] {
            kernel
                .register_device(DeviceDescriptor::new(
                    DeviceId::new(id).unwrap(),
                    kind,
                    id,
                    "home",
                ))
                .unwrap();
        }
        Rig {
            sim: Simulator::new(kernel.clone(), cams),
            kernel,
            clock,
            images,
        }
    }

    fn id(s: &str) -> DeviceId {
        DeviceId::new(s).unwrap()
    }

    #[test]
    fn door_open_close_and_idempotence() {
        let r = rig(0);
        let rec = r.sim.set_door(&id("door1"), true).unwrap().unwrap();
        assert_eq!(rec.event_name, "doorOpened");
        assert!(r.sim.set_door(&id("door1"), true).unwrap().is_none());
        assert_eq!(
            r.sim
                .set_door(&id("door1"), false)
                .unwrap()
                .unwrap()
                .event_name,
            "doorClosed"
        );
        // closed is the initial state
        assert!(r.sim.set_door(&id("door1"), false).unwrap().is_none());
    }

    #[test]
    fn door_command_on_camera_is_wrong_kind() {
        let r = rig(0);
        assert!(matches!(
            r.sim.set_door(&id("cam1"), true),
            Err(HubError::WrongKind(_))
        ));
        assert!(matches!(
            r.sim.set_door(&id("ghost"), true),
            Err(HubError::UnknownDevice(_))
        ));
    }

    #[test]
    fn pictures_decode_and_are_distinct() {
        let r = rig(0);
        let a = r.sim.take_picture(&id("cam1")).unwrap();
        let b = r.sim.take_picture(&id("cam1")).unwrap();
        assert_ne!(a.id, b.id);
        assert_eq!(a.mime, "image/png");
        let (_, bytes) = r.images.resolve(&a.id).unwrap();
        let reader = png::Decoder::new(std::io::Cursor::new(bytes))
            .read_info()
            .unwrap();
        assert_eq!((reader.info().width, reader.info().height), (160, 120));
    }

    #[test]
    fn picture_on_disconnected_camera() {
        let r = rig(0);
        r.kernel.disconnect_device(&id("cam1")).unwrap();
        assert!(matches!(
            r.sim.take_picture(&id("cam1")),
            Err(HubError::DeviceDisconnected(_))
        ));
        assert!(matches!(
            r.sim.take_picture(&id("door1")),
            Err(HubError::WrongKind(_))
        ));
    }

    #[test]
    fn samples_use_kind_specific_keys() {
        let r = rig(0);
        let t = r.sim.emit_sample(&id("temp1"), 21.5).unwrap();
        assert_eq!(t.payload["celsius"], PayloadValue::Number(21.5));
        let h = r.sim.emit_sample(&id("hum1"), 40.0).unwrap();
        assert_eq!(h.payload["percentRH"], PayloadValue::Number(40.0));
        assert!(matches!(
            r.sim.emit_sample(&id("temp1"), f64::NAN),
            Err(HubError::NonFiniteValue)
        ));
        assert!(matches!(
            r.sim.emit_sample(&id("door1"), 1.0),
            Err(HubError::WrongKind(_))
        ));
    }

    #[test]
    fn empty_and_ordered_scenarios() {
        let r = rig(0);
        assert!(r
            .sim
            .run_scenario(&SimScenario::default(), r.clock.as_ref())
            .unwrap()
            .is_empty());
        let s = SimScenario {
            seed: 0,
            steps: vec![
                SimStep {
                    offset_ms: 0,
                    command: SimCommand::SetDoor {
                        device_id: id("door1"),
                        open: true,
                    },
                },
                SimStep {
                    offset_ms: 500,
                    command: SimCommand::SetDoor {
                        device_id: id("door1"),
                        open: false,
                    },
                },
            ],
        };
        let t0 = r.clock.now_ms();
        let recs = r.sim.run_scenario(&s, r.clock.as_ref()).unwrap();
        let names: Vec<_> = recs.iter().map(|r| r.event_name.as_str()).collect();
        assert_eq!(names, ["doorOpened", "doorClosed"]);
        assert_eq!(recs[1].timestamp_utc_ms - t0, 500);
    }

    #[test]
    fn hundred_samples_have_dense_seq() {
        let r = rig(0);
        let steps = (0..100)
            .map(|i| SimStep {
                offset_ms: i * 10,
                command: SimCommand::EmitSample {
                    device_id: id("temp1"),
                    value: i as f64,
                },
            })
            .collect();
        let recs = r
            .sim
            .run_scenario(&SimScenario { seed: 0, steps }, r.clock.as_ref())
            .unwrap();
        // oracle: the n-th sample of a fresh device must carry seq n
        assert_eq!(recs.len(), 100);
        for (n, rec) in recs.iter().enumerate() {
            assert_eq!(rec.seq, n as u64 + 1);
        }
    }

    #[test]
    fn failing_step_aborts_with_partial_results() {
        let r = rig(0);
        let s = SimScenario {
            seed: 0,
            steps: vec![
                SimStep {
                    offset_ms: 0,
                    command: SimCommand::EmitSample {
                        device_id: id("temp1"),
                        value: 1.0,
                    },
                },
                SimStep {
                    offset_ms: 1,
                    command: SimCommand::SetDoor {
                        device_id: id("temp1"),
                        open: true,
                    },
                },
                SimStep {
                    offset_ms: 2,
                    command: SimCommand::EmitSample {
                        device_id: id("temp1"),
                        value: 2.0,
                    },
                },
            ],
        };
        let abort = r.sim.run_scenario(&s, r.clock.as_ref()).unwrap_err();
        assert_eq!(abort.step, 1);
        assert_eq!(abort.partial.len(), 1);
        assert!(matches!(abort.error, HubError::WrongKind(_)));
    }

    #[test]
    fn scenario_json_forms() {
        let text = r#"{"seed":3,"steps":[{"offsetMs":0,"command":{"type":"setDoor","deviceId":"door1","open":true}},
            {"offsetMs":10,"command":{"type":"emitSample","deviceId":"temp1","value":20.5}},
            {"offsetMs":10,"command":{"type":"tick"}}]}"#;
        let s = SimScenario::from_json(text).unwrap();
        assert_eq!(s.seed, 3);
        assert_eq!(s.steps.len(), 3);
        let bare = r#"[{"offsetMs":5,"command":{"type":"tick"}}]"#;
        assert_eq!(SimScenario::from_json(bare).unwrap().duration_ms(), 5);
        let backwards = r#"[{"offsetMs":5,"command":{"type":"tick"}},{"offsetMs":1,"command":{"type":"tick"}}]"#;
        assert!(SimScenario::from_json(backwards).is_err());
    }

    #[test]
    fn runs_are_deterministic() {
        let scenario = SimScenario {
            seed: 42,
            steps: (0..20)
                .map(|i| SimStep {
                    offset_ms: i * 1000,
                    command: if i % 2 == 0 {
                        SimCommand::SetDoor {
                            device_id: id("door1"),
                            open: i % 4 == 0,
                        }
                    } else {
                        SimCommand::EmitSample {
                            device_id: id("hum1"),
                            value: 30.0 + i as f64,
                        }
                    },
                })
                .collect(),
        };
        let run = || {
            let r = rig(0);
            let recs = r.sim.run_scenario(&scenario, r.clock.as_ref()).unwrap();
            let pics: Vec<Vec<u8>> = (0..3)
                .map(|_| {
                    let b = r.sim.take_picture(&id("cam1")).unwrap();
                    r.images.resolve(&b.id).unwrap().1
                })
                .collect();
            (serde_json::to_vec(&recs).unwrap(), pics)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn concurrent_stimulation_keeps_seq_dense() {
        let r = Arc::new(rig(0));
        let sub = r
            .kernel
            .watch(SubscriptionFilter {
                device_id: Some(id("temp1")),
                event_name: None,
            })
            .unwrap();
        std::thread::scope(|s| {
            for t in 0..4 {
                let r = r.clone();
                s.spawn(move || {
                    for i in 0..50 {
                        r.sim
                            .emit_sample(&id("temp1"), (t * 100 + i) as f64)
                            .unwrap();
                    }
                });
            }
        });
        let mut seqs = Vec::new();
        loop {
            let p = r.kernel.poll(sub.id(), Duration::ZERO, 100).unwrap();
            if p.events.is_empty() {
                break;
            }
            seqs.extend(p.events.iter().map(|e| e.seq));
        }
        assert_eq!(seqs, (1..=200).collect::<Vec<_>>());
    }
}
