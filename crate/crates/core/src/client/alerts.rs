//! The Alerts app written purely against the client API: when the door
//! opens, photograph the room, mail the photo, archive it, and log a line.
//!
//! Every statement inside the marked region that calls the hub carries an
//! `// @api` marker; a test counts them and holds the total to 15.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use log::{info, warn};

use super::{ClientResult, HubClient};
use crate::model::{DeviceId, EVENT_DOOR_OPENED};

#[derive(Debug, Clone)]
pub struct AlertsConfig {
    pub door: DeviceId,
    pub camera: DeviceId,
    pub to: String,
    pub container: String,
    pub stream: String,
    pub poll_timeout_ms: u64,
}

/// Effects produced by one run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlertsStats {
    pub events: u64,
    pub emails: u64,
    pub uploads: u64,
    pub lines: u64,
    pub errors: u64,
}

/// Logs a failed call and counts it; the loop carries on.
fn ok<T>(stats: &mut AlertsStats, call: &str, res: ClientResult<T>) -> Option<T> {
    match res {
        Ok(v) => Some(v),
        Err(e) => {
            warn!("{call} failed: {e}");
            stats.errors += 1;
            None
        }
    }
}

/// Runs until `stop` is set or the hub reports it has stopped.
#[rustfmt::skip]
pub fn run_alerts_app(client: &HubClient, cfg: &AlertsConfig, stop: &AtomicBool) -> ClientResult<AlertsStats> {
    let mut stats = AlertsStats::default();
    // alerts-app: begin
    let mut sub = client.watch(Some(&cfg.door), Some(EVENT_DOOR_OPENED))?; // @api
    while !stop.load(Ordering::Relaxed) {
        let batch = match client.get_new_event(&sub, cfg.poll_timeout_ms, 100) { // @api
            Ok(batch) => batch,
            Err(e) if e.code() == Some("platform-stopped") => break,
            Err(e) if e.code() == Some("unknown-subscription") => {
                sub = client.watch(Some(&cfg.door), Some(EVENT_DOOR_OPENED))?; // @api
                continue;
            }
            Err(e) => {
                warn!("GetNewEvent failed: {e}");
                stats.errors += 1;
                std::thread::sleep(Duration::from_millis(500));
                continue;
            }
        };
        for event in batch.events {
            stats.events += 1;
            let ts = event.timestamp_utc_ms;
            let Some(img) = ok(&mut stats, "GetImage", client.get_image(&cfg.camera)) else { continue }; // @api
            let body = format!("The door {} opened at {ts}.", event.device_id);
            stats.emails += ok(&mut stats, "SendEmailWithImage", client.send_email_with_image(&cfg.to, "Door opened", &body, &img.id)).is_some() as u64; // @api
            stats.uploads += ok(&mut stats, "UploadPicture", client.upload_picture(&img.id, &cfg.container, &format!("alert-{ts}.png"))).is_some() as u64; // @api
            stats.lines += ok(&mut stats, "AddFileDataStream", client.add_file_data_stream(&cfg.stream, &format!("door opened at {ts}"))).is_some() as u64; // @api
        }
    }
    // alerts-app: end
    info!("alerts app finished: {stats:?}");
    Ok(stats)
}

/// Counts the `// @api` markers between the region delimiters, and checks
/// that no hub call inside the region is left unmarked.
pub fn count_api_statements(source: &str) -> Result<usize, String> {
    let begin = source
        .find("// alerts-app: begin")
        .ok_or("no region start")?;
    let end = source.find("// alerts-app: end").ok_or("no region end")?;
    let mut count = 0;
    for line in source[begin..end].lines() {
        let marked = line.trim_end().ends_with("// @api");
        if line.contains("client.") && !marked {
            return Err(format!("unmarked call: {}", line.trim()));
        }
        count += marked as usize;
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loop_stays_within_fifteen_api_statements() {
        let n = count_api_statements(include_str!("alerts.rs")).unwrap();
        assert!((6..=15).contains(&n), "{n} API statements");
    }

    #[test]
    fn unmarked_calls_are_caught() {
        let src = "// alerts-app: begin\nclient.watch(None, None)?;\n// alerts-app: end\n";
        assert!(count_api_statements(src).is_err());
    }
}
