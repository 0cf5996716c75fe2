use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use generichub::client::{run_alerts_app, AlertsConfig, ClientError, HubClient};
use generichub::config::HubConfig;
use generichub::hub::Hub;
use generichub::model::DeviceId;
use generichub::rules::{alerts_pipeline, RuleAction, RuleSpec, Trigger};
use generichub::sim::{SimCommand, SimScenario};
use generichub::telemetry::{Metric, YearMonth};

#[derive(Debug, Parser)]
#[command(
    name = "generichub",
    version,
    about = "If-Then hub for simulated smart-home devices"
)]
struct Cli {
    /// Config file (TOML, or JSON by extension). Defaults to $GENERICHUB_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Hub base URL, overriding the config's [client] section.
    #[arg(long, global = true, env = "GENERICHUB_URL")]
    url: Option<String>,
    /// Bearer token, overriding the config.
    #[arg(long, global = true, env = "GENERICHUB_TOKEN", hide_env_values = true)]
    token: Option<String>,
    /// Print raw API JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the hub and its HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// List registered devices.
    Devices,
    /// Subscribe and print events as they arrive.
    Watch {
        #[arg(long)]
        device: Option<DeviceId>,
        #[arg(long)]
        event: Option<String>,
        /// Stop after this many events.
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        timeout_ms: Option<u64>,
    },
    /// Manage If-Then rules.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
    /// Monthly telemetry averages.
    Telemetry {
        metric: Metric,
        #[arg(long)]
        from: YearMonth,
        #[arg(long)]
        to: YearMonth,
        /// Emit the CSV export instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// Run the Alerts app against a hub until interrupted.
    AlertsApp(AlertsArgs),
    /// Replay a simulation scenario against a hub.
    Sim {
        #[arg(long)]
        scenario: PathBuf,
        /// Time compression factor.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
}

#[derive(Debug, Subcommand)]
enum RulesCommand {
    /// Create a rule: `--when door1.doorOpened --do cam1.takePicture`, or the
    /// alerts pipeline with `--alerts --camera cam1 --to addr`.
    Add {
        #[arg(long, value_name = "DEVICE.EVENT")]
        when: String,
        #[arg(
            long = "do",
            value_name = "DEVICE.ACTION",
            required_unless_present = "alerts"
        )]
        action: Option<String>,
        #[arg(long, requires_all = ["camera", "to"], conflicts_with = "action")]
        alerts: bool,
        #[arg(long)]
        camera: Option<DeviceId>,
        #[arg(long)]
        to: Option<String>,
        #[arg(long, default_value = "alerts")]
        container: String,
        #[arg(long, default_value = "alerts")]
        stream: String,
        #[arg(long)]
        disabled: bool,
    },
    List,
    Rm {
        rule_id: String,
    },
    Enable {
        rule_id: String,
    },
    Disable {
        rule_id: String,
    },
    /// Recent firings of a rule.
    Log {
        rule_id: String,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
}

#[derive(Debug, Args)]
struct AlertsArgs {
    #[arg(long)]
    door: DeviceId,
    #[arg(long)]
    camera: DeviceId,
    #[arg(long)]
    to: String,
    #[arg(long, default_value = "alerts")]
    container: String,
    #[arg(long, default_value = "alerts")]
    stream: String,
}

enum Failure {
    Usage(String),
    Client(ClientError),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Client(e)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let default_level = if matches!(cli.command, Command::Serve { .. }) {
        "info"
    } else {
        "warn"
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level))
        .init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Client(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<HubConfig, Failure> {
    let mut cfg =
        HubConfig::load(cli.config.as_deref()).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(url) = &cli.url {
        cfg.client.base_url = url.clone();
    }
    if let Some(token) = &cli.token {
        cfg.client.auth_token = token.clone();
        cfg.auth_token = token.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    if let Command::Serve { listen } = &cli.command {
        return serve(cfg, listen.clone());
    }
    cfg.client
        .validate()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let client = HubClient::new(&cfg.client);
    let json = cli.json;
    match cli.command {
        Command::Serve { .. } => unreachable!(),
        Command::Devices => {
            let devices = client.devices()?;
            emit(json, &devices, || {
                table(
                    &["ID", "KIND", "NAME", "LOCATION", "CONNECTED"],
                    devices
                        .iter()
                        .map(|d| {
                            vec![
                                d.id.to_string(),
                                d.kind.to_string(),
                                d.name.clone(),
                                d.location.clone(),
                                d.connected.to_string(),
                            ]
                        })
                        .collect(),
                )
            });
        }
        Command::Watch {
            device,
            event,
            count,
            timeout_ms,
        } => {
            let sub = client.watch(device.as_ref(), event.as_deref())?;
            let timeout = timeout_ms.unwrap_or(client.default_timeout_ms());
            let mut seen = 0;
            while count.is_none_or(|c| seen < c) {
                let want = count.map_or(100, |c| (c - seen).min(100));
                let batch = client.get_new_event(&sub, timeout, want)?;
                if batch.overflowed {
                    eprintln!("warning: events were dropped before this batch");
                }
                for ev in &batch.events {
                    if json {
                        println!("{}", serde_json::to_string(ev).expect("event serializes"));
                    } else {
                        let payload: Vec<String> =
                            ev.payload.iter().map(|(k, v)| format!("{k}={v}")).collect();
                        println!(
                            "{}#{} {} {} {}",
                            ev.device_id,
                            ev.seq,
                            ev.event_name,
                            ev.timestamp_utc_ms,
                            payload.join(" ")
                        );
                    }
                }
                seen += batch.events.len();
            }
        }
        Command::Rules { command } => rules(&client, json, command)?,
        Command::Telemetry {
            metric,
            from,
            to,
            csv,
        } => {
            if csv {
                print!("{}", client.monthly_csv(metric, from, to)?);
            } else {
                let rows = client.monthly(metric, from, to)?;
                emit(json, &rows, || {
                    table(
                        &["MONTH", "METRIC", "MEAN", "COUNT", "MIN", "MAX"],
                        rows.iter()
                            .map(|r| {
                                vec![
                                    r.year_month.to_string(),
                                    r.metric.to_string(),
                                    format!("{:.3}", r.mean),
                                    r.count.to_string(),
                                    r.min.to_string(),
                                    r.max.to_string(),
                                ]
                            })
                            .collect(),
                    )
                });
            }
        }
        Command::AlertsApp(args) => {
            let stop = Arc::new(AtomicBool::new(false));
            let cfg = AlertsConfig {
                door: args.door,
                camera: args.camera,
                to: args.to,
                container: args.container,
                stream: args.stream,
                poll_timeout_ms: client.default_timeout_ms(),
            };
            let stats = run_alerts_app(&client, &cfg, &stop)?;
            println!(
                "events={} emails={} uploads={} lines={} errors={}",
                stats.events, stats.emails, stats.uploads, stats.lines, stats.errors
            );
        }
        Command::Sim { scenario, speed } => {
            if !(speed.is_finite() && speed > 0.0) {
                return Err(Failure::Usage("--speed must be a positive number".into()));
            }
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| Failure::Usage(format!("{}: {e}", scenario.display())))?;
            let scenario =
                SimScenario::from_json(&text).map_err(|e| Failure::Usage(e.to_string()))?;
            let started = Instant::now();
            let published = replay(&client, &scenario, speed)?;
            let elapsed_ms = started.elapsed().as_millis() as u64;
            if json {
                println!(
                    "{}",
                    serde_json::json!({ "published": published, "elapsedMs": elapsed_ms })
                );
            } else {
                println!("published {published} event(s) in {elapsed_ms} ms");
            }
        }
    }
    Ok(())
}

fn rules(client: &HubClient, json: bool, command: RulesCommand) -> Result<(), Failure> {
    match command {
        RulesCommand::Add {
            when,
            action,
            alerts,
            camera,
            to,
            container,
            stream,
            disabled,
        } => {
            let (device, event) = split_dotted(&when)?;
            let mut spec = if alerts {
                let (camera, to) = camera.zip(to).expect("clap enforces --camera and --to");
                let mut spec = alerts_pipeline(device, camera, &to, &container, &stream);
                spec.trigger.event_name = event;
                spec
            } else {
                let (target, action_name) =
                    split_dotted(action.as_deref().expect("clap enforces --do"))?;
                RuleSpec {
                    trigger: Trigger {
                        device_id: device,
                        event_name: event,
                    },
                    actions: vec![RuleAction::DeviceAction {
                        device_id: target,
                        action_name,
                        params: Default::default(),
                    }],
                    enabled: true,
                }
            };
            spec.enabled = !disabled;
            let id = client.create_rule(&spec)?;
            if json {
                println!("{}", serde_json::json!({ "ruleId": id }));
            } else {
                println!("{id}");
            }
        }
        RulesCommand::List => {
            let rules = client.rules()?;
            emit(json, &rules, || {
                table(
                    &["ID", "WHEN", "DO", "ENABLED", "FIRED"],
                    rules
                        .iter()
                        .map(|r| {
                            vec![
                                r.rule_id.clone(),
                                format!("{}.{}", r.trigger.device_id, r.trigger.event_name),
                                r.actions
                                    .iter()
                                    .map(describe_action)
                                    .collect::<Vec<_>>()
                                    .join(" -> "),
                                r.enabled.to_string(),
                                r.fire_count.to_string(),
                            ]
                        })
                        .collect(),
                )
            });
        }
        RulesCommand::Rm { rule_id } => client.delete_rule(&rule_id)?,
        RulesCommand::Enable { rule_id } => {
            let rule = client.set_rule_enabled(&rule_id, true)?;
            emit(json, &rule, || format!("{} enabled\n", rule.rule_id));
        }
        RulesCommand::Disable { rule_id } => {
            let rule = client.set_rule_enabled(&rule_id, false)?;
            emit(json, &rule, || format!("{} disabled\n", rule.rule_id));
        }
        RulesCommand::Log { rule_id, limit } => {
            let log = client.rule_log(&rule_id, limit)?;
            emit(json, &log, || {
                table(
                    &["EVENT", "STARTED", "MS", "OUTCOMES"],
                    log.iter()
                        .map(|e| {
                            let outcomes: Vec<String> = e
                                .outcomes
                                .iter()
                                .map(|o| serde_json::to_string(o).expect("outcome serializes"))
                                .collect();
                            vec![
                                format!("{}#{}", e.triggering.device_id, e.triggering.seq),
                                e.started_utc_ms.to_string(),
                                e.duration_ms.to_string(),
                                outcomes.join(" "),
                            ]
                        })
                        .collect(),
                )
            });
        }
    }
    Ok(())
}

fn describe_action(a: &RuleAction) -> String {
    match a {
        RuleAction::DeviceAction {
            device_id,
            action_name,
            ..
        } => format!("{device_id}.{action_name}"),
        RuleAction::CaptureImage { camera_id, bind_as } => {
            format!("capture {camera_id} as {bind_as}")
        }
        RuleAction::SendEmail { to, .. } => format!("email {to}"),
        RuleAction::UploadPicture { container, .. } => format!("upload to {container}"),
        RuleAction::AppendStream { stream_name, .. } => format!("append to {stream_name}"),
    }
}

fn split_dotted(s: &str) -> Result<(DeviceId, String), Failure> {
    let (dev, name) = s
        .split_once('.')
        .filter(|(_, n)| !n.is_empty())
        .ok_or_else(|| Failure::Usage(format!("`{s}` is not DEVICE.NAME")))?;
    let dev = dev
        .parse()
        .map_err(|e| Failure::Usage(format!("`{dev}`: {e}")))?;
    Ok((dev, name.to_owned()))
}

/// Replays steps against the hub, sleeping `offset / speed` between them.
fn replay(client: &HubClient, scenario: &SimScenario, speed: f64) -> Result<usize, Failure> {
    let start = Instant::now();
    let mut published = 0;
    for step in &scenario.steps {
        let due = Duration::from_secs_f64(step.offset_ms as f64 / 1000.0 / speed);
        if let Some(wait) = due.checked_sub(start.elapsed()) {
            std::thread::sleep(wait);
        }
        published += match &step.command {
            SimCommand::SetDoor { device_id, open } => {
                client.sim_door(device_id, *open)?.is_some() as usize
            }
            SimCommand::EmitSample { device_id, value } => {
                client.sim_sample(device_id, *value)?;
                1
            }
            SimCommand::Tick => 0,
        };
    }
    Ok(published)
}

fn serve(mut cfg: HubConfig, listen: Option<String>) -> Result<(), Failure> {
    if let Some(l) = listen {
        cfg.listen = l;
    }
    let listen = cfg.listen.clone();
    let hub = Arc::new(Hub::start(cfg).map_err(|e| Failure::Usage(e.to_string()))?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Usage(e.to_string()))?;
    let served = rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&listen)
            .await
            .map_err(|e| Failure::Usage(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::Usage(e.to_string()))?;
        println!("listening on http://{addr}");
        let stopper = hub.clone();
        let shutdown = async move {
            let _ = tokio::signal::ctrl_c().await;
            log::info!("interrupted; stopping");
            // wakes blocked long polls so the graceful shutdown can finish
            let _ = tokio::task::spawn_blocking(move || stopper.stop()).await;
        };
        generichub::server::serve(hub.clone(), listener, shutdown)
            .await
            .map_err(|e| Failure::Usage(e.to_string()))
    });
    hub.stop().map_err(|e| Failure::Usage(e.to_string()))?;
    served
}

fn emit<T: Serialize>(json: bool, value: &T, human: impl FnOnce() -> String) {
    if json {
        println!(
            "{}",
            serde_json::to_string_pretty(value).expect("response serializes")
        );
    } else {
        print!("{}", human());
    }
}

fn table(headers: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_owned() + "\n"
    };
    let mut out = line(headers.to_vec());
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}
