mod common;

use std::net::TcpStream;
use std::time::{Duration, Instant};

use tungstenite::stream::MaybeTlsStream;
use tungstenite::{connect, Message as WsMessage, WebSocket};

use socialnav::bridge::{serve, Envelope, Message, ServeHandle, ServeOptions, Snapshot};
use socialnav::harness::{run_episode, EpisodeOptions, Scenario};
use socialnav::local_planner::Variant;

type Client = WebSocket<MaybeTlsStream<TcpStream>>;

fn start(name: &str, realtime: bool) -> ServeHandle {
    let opts = ServeOptions { port: 0, realtime, scenario_dir: common::scenario_dir(), ..Default::default() };
    serve(common::load(name), opts).unwrap()
}

fn client(h: &ServeHandle) -> Client {
    let (ws, _) = connect(format!("ws://{}", h.local_addr())).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    }
    ws
}

fn recv(ws: &mut Client) -> Envelope {
    loop {
        if let WsMessage::Text(t) = ws.read().unwrap() {
            let env: Envelope = serde_json::from_str(t.as_str()).unwrap();
            assert_eq!(env.v, 1);
            return env;
        }
    }
}

fn next_snapshot(ws: &mut Client) -> Snapshot {
    loop {
        if let Message::Snapshot(s) = recv(ws).msg {
            return *s;
        }
    }
}

fn send(ws: &mut Client, seq: u64, msg: Message) {
    ws.send(WsMessage::text(Envelope::new(seq, msg).to_json())).unwrap();
}

#[test]
fn first_snapshot_arrives_within_a_tick() {
    let h = start("distracted.json", true);
    let t = Instant::now();
    let mut ws = client(&h);
    let s = next_snapshot(&mut ws);
    assert!(t.elapsed() < Duration::from_millis(200), "{:?}", t.elapsed());
    assert!(s.costmap.is_some(), "first snapshot carries the costmap");
    assert!(next_snapshot(&mut ws).costmap.is_none());
    h.shutdown();
}

#[test]
fn sequence_numbers_increase() {
    let h = start("distracted.json", true);
    let mut ws = client(&h);
    let seqs: Vec<u64> = (0..5).map(|_| recv(&mut ws).seq).collect();
    assert!(seqs.windows(2).all(|w| w[1] > w[0]), "{seqs:?}");
    h.shutdown();
}

#[test]
fn preference_triggers_a_replan() {
    let sc = common::load("upf-office/layout-01.json");
    let opts = ServeOptions { port: 0, scenario_dir: common::scenario_dir(), ..Default::default() };
    let h = serve(Scenario { preference: None, ..sc.clone() }, opts).unwrap();
    let mut ws = client(&h);
    let before = next_snapshot(&mut ws);
    let pref = sc.preference.unwrap().point_m;
    send(&mut ws, 0, Message::SetPreference { x: pref[0], y: pref[1] });
    let deadline = Instant::now() + Duration::from_millis(500);
    let after = loop {
        let s = next_snapshot(&mut ws);
        if s.costmap_rev > before.costmap_rev {
            break s;
        }
        assert!(Instant::now() < deadline, "no re-plan within 500 ms");
    };
    assert_eq!(after.preference, Some(pref));
    assert!(after.costmap.is_some());
    let closest = |s: &Snapshot| {
        s.global_path
            .iter()
            .map(|p| ((p[0] - pref[0]).powi(2) + (p[1] - pref[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    assert!(closest(&after) < 0.5 && closest(&before) > 1.5, "{} {}", closest(&after), closest(&before));
    h.shutdown();
}

#[test]
fn malformed_frames_get_an_error_and_the_sim_continues() {
    let h = start("distracted.json", true);
    let mut ws = client(&h);
    let first = next_snapshot(&mut ws);
    ws.send(WsMessage::text("{not json")).unwrap();
    let mut saw_error = false;
    let mut last = first.tick;
    for _ in 0..20 {
        match recv(&mut ws).msg {
            Message::Error { .. } => saw_error = true,
            Message::Snapshot(s) => last = s.tick,
            _ => {}
        }
        if saw_error && last > first.tick + 2 {
            break;
        }
    }
    assert!(saw_error && last > first.tick + 2);
    send(&mut ws, 1, Message::SetGoal { x: -50.0, y: 0.0 });
    let err = loop {
        if let Message::Error { message } = recv(&mut ws).msg {
            break message;
        }
    };
    assert!(err.contains("outside"), "{err}");
    h.shutdown();
}

#[test]
fn user_commands_raise_eta_and_are_clamped() {
    let h = start("distracted.json", true);
    let mut ws = client(&h);
    next_snapshot(&mut ws);
    for k in 0..5 {
        send(&mut ws, k, Message::UserCmd { v: 9.0, omega: 0.0 });
    }
    let mut eta = 0.0;
    for _ in 0..5 {
        let s = next_snapshot(&mut ws);
        eta = f64::max(eta, s.eta);
        assert!(s.robot.v <= 1.2 + 1e-12);
    }
    assert!(eta > 0.95, "eta {eta}");
    h.shutdown();
}

#[test]
fn headless_serve_matches_the_harness() {
    let sc = common::load("aggressive.json");
    let h = start("aggressive.json", false);
    let served = h.next_episode_log(Duration::from_secs(60)).expect("episode finishes");
    h.shutdown();
    let mut direct = run_episode(&sc, Variant::SsMpcDcbf, None, 0, EpisodeOptions::default()).unwrap().log;
    let mut served = served;
    for t in direct.ticks.iter_mut().chain(served.ticks.iter_mut()) {
        t.diag.solve_time_s = 0.0;
    }
    assert_eq!(served, direct);
}

#[test]
fn snapshots_follow_the_tick_period() {
    let h = start("distracted.json", true);
    let mut ws = client(&h);
    next_snapshot(&mut ws);
    let mut stamps = Vec::new();
    for _ in 0..21 {
        next_snapshot(&mut ws);
        stamps.push(Instant::now());
    }
    h.shutdown();
    let mut gaps: Vec<f64> = stamps.windows(2).map(|w| (w[1] - w[0]).as_secs_f64()).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    gaps.sort_by(f64::total_cmp);
    let median = gaps[gaps.len() / 2];
    assert!((mean - 0.1).abs() <= 0.02 && (median - 0.1).abs() <= 0.02, "mean {mean} median {median}");
}
