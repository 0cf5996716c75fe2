//! Temperature and humidity recording with per-month aggregates.
//!
//! Samples are appended to one stream per metric (`telemetry-<metric>`), with
//! the sample's own timestamp on the line and `deviceId,value` as its text.
//! Aggregates are recomputed from that log on every query.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use chrono::{Datelike, TimeZone, Utc};
use log::warn;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::adapters::DataStreamStore;
use crate::error::{HubError, Result};
use crate::kernel::Subscription;
use crate::model::{
    DeviceId, EventRecord, PayloadValue, EVENT_SAMPLE, KEY_CELSIUS, KEY_PERCENT_RH,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Temperature,
    Humidity,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Temperature => "temperature",
            Metric::Humidity => "humidity",
        }
    }

    pub fn stream_name(self) -> String {
        format!("telemetry-{}", self.as_str())
    }

    fn payload_key(self) -> &'static str {
        match self {
            Metric::Temperature => KEY_CELSIUS,
            Metric::Humidity => KEY_PERCENT_RH,
        }
    }
}

impl FromStr for Metric {
    type Err = HubError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temperature" => Ok(Metric::Temperature),
            "humidity" => Ok(Metric::Humidity),
            other => Err(HubError::InvalidArgument(format!(
                "unknown metric `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A UTC calendar month, written `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) || !(0..=9999).contains(&year) {
            return Err(HubError::InvalidRange(format!("{year}-{month}")));
        }
        Ok(Self { year, month })
    }

    pub fn of_timestamp(ms: i64) -> Option<Self> {
        let t = Utc.timestamp_millis_opt(ms).single()?;
        Some(Self {
            year: t.year(),
            month: t.month(),
        })
    }

    /// First millisecond of the month.
    pub fn start_ms(self) -> i64 {
        Utc.with_ymd_and_hms(self.year, self.month, 1, 0, 0, 0)
            .single()
            .expect("valid month start")
            .timestamp_millis()
    }
}

impl FromStr for YearMonth {
    type Err = HubError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || HubError::InvalidRange(format!("`{s}` is not YYYY-MM"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 || !y.bytes().chain(m.bytes()).all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        YearMonth::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TelemetrySample {
    pub device_id: DeviceId,
    pub metric: Metric,
    pub value: f64,
    pub timestamp_utc_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MonthlyAggregate {
    pub year_month: YearMonth,
    pub metric: Metric,
    pub mean: f64,
    pub count: u64,
    pub min: f64,
    pub max: f64,
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(self) -> f64 {
        self.sum + self.carry
    }
}

struct Acc {
    sum: CompensatedSum,
    count: u64,
    min: f64,
    max: f64,
}

pub struct Telemetry {
    streams: Arc<dyn DataStreamStore>,
    processed: AtomicU64,
}

impl Telemetry {
    pub fn new(streams: Arc<dyn DataStreamStore>) -> Self {
        Self {
            streams,
            processed: AtomicU64::new(0),
        }
    }

    /// Converts a `sample` event into a logged sample. Other events are
    /// ignored.
    pub fn ingest(&self, rec: &EventRecord) -> Result<Option<TelemetrySample>> {
        if rec.event_name != EVENT_SAMPLE {
            return Ok(None);
        }
        let (metric, value) = [Metric::Temperature, Metric::Humidity]
            .into_iter()
            .find_map(|m| rec.payload.get(m.payload_key()).map(|v| (m, v)))
            .ok_or_else(|| HubError::MalformedPayload("sample without celsius/percentRH".into()))?;
        let value = match value {
            PayloadValue::Number(n) if n.is_finite() => *n,
            other => {
                return Err(HubError::MalformedPayload(format!(
                    "{} is not a finite number: {other:?}",
                    metric.payload_key()
                )))
            }
        };
        let sample = TelemetrySample {
            device_id: rec.device_id.clone(),
            metric,
            value,
            timestamp_utc_ms: rec.timestamp_utc_ms,
        };
        self.streams.append(
            &metric.stream_name(),
            sample.timestamp_utc_ms,
            &format!("{},{}", sample.device_id, sample.value),
        )?;
        Ok(Some(sample))
    }

    /// Every logged sample for `metric`, in log order.
    pub fn samples(&self, metric: Metric) -> Result<Vec<TelemetrySample>> {
        self.streams
            .read(&metric.stream_name(), 0)?
            .into_iter()
            .map(|line| {
                let parsed = line.text.split_once(',').and_then(|(dev, v)| {
                    Some(TelemetrySample {
                        device_id: dev.parse().ok()?,
                        metric,
                        value: v.parse().ok()?,
                        timestamp_utc_ms: line.timestamp_utc_ms,
                    })
                });
                parsed.ok_or_else(|| {
                    HubError::StoreFailure(format!("corrupt telemetry line `{}`", line.text))
                })
            })
            .collect()
    }

    /// One aggregate per month in `from..=to` that has samples, oldest first.
    pub fn monthly_averages(
        &self,
        metric: Metric,
        from: YearMonth,
        to: YearMonth,
    ) -> Result<Vec<MonthlyAggregate>> {
        if from > to {
            return Err(HubError::InvalidRange(format!("{from} is after {to}")));
        }
        let mut months: BTreeMap<YearMonth, Acc> = BTreeMap::new();
        for s in self.samples(metric)? {
            let Some(ym) = YearMonth::of_timestamp(s.timestamp_utc_ms) else {
                continue;
            };
            if ym < from || ym > to {
                continue;
            }
            let acc = months.entry(ym).or_insert(Acc {
                sum: CompensatedSum::default(),
                count: 0,
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
            });
            acc.sum.add(s.value);
            acc.count += 1;
            acc.min = acc.min.min(s.value);
            acc.max = acc.max.max(s.value);
        }
        Ok(months
            .into_iter()
            .map(|(ym, acc)| MonthlyAggregate {
                year_month: ym,
                metric,
                mean: (acc.sum.total() / acc.count as f64).clamp(acc.min, acc.max),
                count: acc.count,
                min: acc.min,
                max: acc.max,
            })
            .collect())
    }

    pub fn export_csv(&self, metric: Metric, from: YearMonth, to: YearMonth) -> Result<String> {
        Ok(render_csv(&self.monthly_averages(metric, from, to)?))
    }

    pub fn processed(&self) -> u64 {
        self.processed.load(Ordering::Acquire)
    }

    /// Consumes `sub` on a dedicated thread until the platform stops.
    pub fn spawn(
        self: &Arc<Self>,
        sub: Arc<Subscription>,
        clock: Arc<dyn crate::clock::Clock>,
    ) -> JoinHandle<()> {
        let this = self.clone();
        std::thread::Builder::new()
            .name("telemetry".into())
            .spawn(move || {
                while let Ok(polled) = sub.poll(Duration::from_millis(500), 100, clock.now_ms()) {
                    for rec in &polled.events {
                        if let Err(e) = this.ingest(rec) {
                            warn!("dropping sample {}#{}: {e}", rec.device_id, rec.seq);
                        }
                        this.processed.fetch_add(1, Ordering::Release);
                    }
                }
            })
            .expect("spawn telemetry thread")
    }
}

pub const CSV_HEADER: &str = "yearMonth,metric,mean,count,min,max";

pub fn render_csv(rows: &[MonthlyAggregate]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{},{},{}\n",
            r.year_month, r.metric, r.mean, r.count, r.min, r.max
        ));
    }
    out
}
