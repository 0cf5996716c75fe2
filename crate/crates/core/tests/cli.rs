mod common;

use std::process::{Command, Output, Stdio};
use std::time::Duration;

use common::*;

fn cli(url: &str, args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_generichub"));
    cmd.env_remove("GENERICHUB_CONFIG")
        .env_remove("GENERICHUB_URL")
        .env_remove("GENERICHUB_TOKEN")
        .env("RUST_LOG", "off")
        .args(["--url", url, "--token", TOKEN])
        .args(args);
    cmd
}

fn run(url: &str, args: &[&str]) -> Output {
    cli(url, args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn devices_prints_one_row_per_device() {
    let t = start_hub(
        Backend::Memory,
        &[("door1", "door-sensor"), ("cam1", "camera")],
    );
    let (server, _) = serve(&t.hub);
    let out = run(&server.base_url(), &["devices"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3, "{text}");
    assert!(lines[0].starts_with("ID"));
    assert!(text.contains("door1") && text.contains("door-sensor") && text.contains("cam1"));

    let out = run(&server.base_url(), &["--json", "devices"]);
    let parsed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 2);
}

#[test]
fn rules_add_list_disable_and_remove() {
    let t = start_hub(Backend::Memory, &HOUSE);
    let (server, _) = serve(&t.hub);
    let url = server.base_url();
    let out = run(
        &url,
        &[
            "rules",
            "add",
            "--when",
            "door1.doorOpened",
            "--do",
            "cam1.takePicture",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let rule_id = stdout(&out).trim().to_owned();
    assert!(!rule_id.is_empty());
    assert_eq!(t.hub.engine().rule(&rule_id).unwrap().actions.len(), 1);

    let out = run(
        &url,
        &[
            "rules",
            "add",
            "--when",
            "door1.doorOpened",
            "--alerts",
            "--camera",
            "cam1",
            "--to",
            "a@b.org",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");

    let out = run(&url, &["rules", "list"]);
    assert_eq!(stdout(&out).lines().count(), 3);

    assert_eq!(
        run(&url, &["rules", "disable", &rule_id]).status.code(),
        Some(0)
    );
    assert!(!t.hub.engine().rule(&rule_id).unwrap().enabled);
    assert_eq!(run(&url, &["rules", "rm", &rule_id]).status.code(), Some(0));
    assert_eq!(t.hub.engine().list_rules().len(), 1);
}

#[test]
fn api_errors_exit_two() {
    let t = start_hub(Backend::Memory, &HOUSE);
    let (server, _) = serve(&t.hub);
    let out = run(
        &server.base_url(),
        &[
            "rules",
            "add",
            "--when",
            "ghost.doorOpened",
            "--do",
            "cam1.takePicture",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown-device"));

    let out = cli(&server.base_url(), &["devices"])
        .args(["--token", "wrong"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_hub_exits_three() {
    // bind and release a port so nothing is listening on it
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let out = run(&format!("http://127.0.0.1:{port}"), &["devices"]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
}

#[test]
fn usage_errors_exit_one() {
    let url = "http://127.0.0.1:1";
    assert_eq!(
        run(url, &["rules", "add", "--when", "door1.doorOpened"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(url, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        run(
            url,
            &[
                "rules",
                "add",
                "--when",
                "nodot",
                "--do",
                "cam1.takePicture"
            ]
        )
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        run(url, &["sim", "--scenario", "/nonexistent.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(run(url, &["--help"]).status.code(), Some(0));
}

#[test]
fn sim_replays_scenarios_with_time_compression() {
    let t = start_hub(Backend::Memory, &HOUSE);
    let (server, _) = serve(&t.hub);
    let url = server.base_url();

    let empty = t.dir.path().join("empty.json");
    std::fs::write(&empty, r#"{"seed": 1, "steps": []}"#).unwrap();
    let out = run(
        &url,
        &["--json", "sim", "--scenario", empty.to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["published"], 0);

    // 10 s of scenario time at 100x
    let timed = t.dir.path().join("timed.json");
    std::fs::write(
        &timed,
        r#"[
            {"offsetMs": 0, "command": {"type": "setDoor", "deviceId": "door1", "open": true}},
            {"offsetMs": 5000, "command": {"type": "emitSample", "deviceId": "temp1", "value": 20.5}},
            {"offsetMs": 10000, "command": {"type": "setDoor", "deviceId": "door1", "open": false}}
        ]"#,
    )
    .unwrap();
    let out = run(
        &url,
        &[
            "--json",
            "sim",
            "--scenario",
            timed.to_str().unwrap(),
            "--speed",
            "100",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["published"], 3);
    let elapsed = v["elapsedMs"].as_u64().unwrap();
    assert!((95..=400).contains(&elapsed), "elapsed {elapsed} ms");
    assert_eq!(t.hub.kernel().last_seq(&id("door1")), 2);
}

#[test]
fn alerts_app_process_reacts_to_door_openings_only() {
    for backend in Backend::ALL {
        let t = start_hub(backend, &HOUSE);
        let (server, client) = serve(&t.hub);
        let mut child = cli(
            &server.base_url(),
            &[
                "alerts-app",
                "--door",
                "door1",
                "--camera",
                "cam1",
                "--to",
                "ops@example.org",
            ],
        )
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
        // the app subscribes before reacting; wait for its subscription to exist
        let base = t.hub.kernel().subscription_count();
        assert!(wait_until(Duration::from_secs(5), || t
            .hub
            .kernel()
            .subscription_count()
            > base));

        client.sim_door(&id("door1"), true).unwrap();
        let ok = wait_until(Duration::from_secs(3), || {
            t.effects.mails().len() == 1
                && t.effects.uploads("alerts").len() == 1
                && t.hub.app().read_stream("alerts", 0).unwrap().len() == 1
        });
        assert!(ok, "{}: alert effects did not appear", backend.label());

        client.sim_door(&id("door1"), false).unwrap();
        std::thread::sleep(Duration::from_millis(300));
        assert_eq!(t.effects.mails().len(), 1);
        assert_eq!(t.effects.uploads("alerts").len(), 1);
        assert_eq!(t.hub.app().read_stream("alerts", 0).unwrap().len(), 1);

        let mail = &t.effects.mails()[0];
        assert_eq!(mail.to, "ops@example.org");
        assert_eq!(mail.attachments.len(), 1);
        png_dims(&mail.attachments[0].1);

        child.kill().unwrap();
        child.wait().unwrap();
    }
}
