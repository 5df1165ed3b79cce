use std::collections::BTreeMap;
use std::io::ErrorKind;
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use tungstenite::{Message as WsMessage, WebSocket};

use crate::costmap::CostPatch;
use crate::crowd_sim::ControlInput;
use crate::gridworld::Point2;
use crate::harness::{EpisodeLog, EpisodeOptions, HarnessError, Scenario, Session};
use crate::local_planner::Variant;

use super::protocol::{parse_client_message, point, Envelope, Message, PedestrianView, RobotView, Snapshot, TrackView};

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("bridge io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub bind: IpAddr,
    /// 0 picks a free port.
    pub port: u16,
    pub variant: Variant,
    pub seed: u64,
    /// Directory searched by `reset` for `<name>.json`.
    pub scenario_dir: PathBuf,
    /// Pace ticks at wall-clock rate; otherwise step as fast as possible.
    pub realtime: bool,
    /// Largest side of the costmap patch sent to clients.
    pub costmap_side: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: 8765,
            variant: Variant::SsMpcDcbf,
            seed: 0,
            scenario_dir: PathBuf::from("."),
            realtime: true,
            costmap_side: 96,
        }
    }
}

/// Running server. Dropping it asks every thread to stop.
pub struct ServeHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
    logs: Receiver<EpisodeLog>,
}

impl ServeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the log of the next finished episode arrives.
    pub fn next_episode_log(&self, timeout: Duration) -> Option<EpisodeLog> {
        self.logs.recv_timeout(timeout).ok()
    }

    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {
        self.stop();
        self.join();
    }
}

impl Drop for ServeHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

type ClientId = u64;

enum Inbound {
    Connect(ClientId, Sender<Message>),
    Disconnect(ClientId),
    Msg(ClientId, Message),
}

/// Starts the listener and simulation threads.
pub fn serve(scenario: Scenario, opts: ServeOptions) -> Result<ServeHandle, BridgeError> {
    let session = Session::new(&scenario, opts.variant, opts.seed, EpisodeOptions::default())?;
    let listener = TcpListener::bind((opts.bind, opts.port))?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (in_tx, in_rx) = mpsc::channel();
    let (log_tx, logs) = mpsc::channel();

    let mut sim = Sim::new(session, opts, in_rx, log_tx, stop.clone());
    let sim_thread = thread::spawn(move || sim.run());
    let accept_stop = stop.clone();
    let accept_thread = thread::spawn(move || accept_loop(listener, in_tx, accept_stop));
    Ok(ServeHandle { addr, stop, threads: vec![sim_thread, accept_thread], logs })
}

fn accept_loop(listener: TcpListener, in_tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let mut next_id: ClientId = 0;
    let mut clients = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id;
                next_id += 1;
                let tx = in_tx.clone();
                let st = stop.clone();
                clients.push(thread::spawn(move || client_loop(stream, id, tx, st)));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(_) => thread::sleep(Duration::from_millis(10)),
        }
        clients.retain(|c: &JoinHandle<()>| !c.is_finished());
    }
    for c in clients {
        let _ = c.join();
    }
}

fn client_loop(stream: TcpStream, id: ClientId, in_tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let Ok(mut ws) = tungstenite::accept(stream) else { return };
    if ws.get_ref().set_read_timeout(Some(Duration::from_millis(2))).is_err() {
        return;
    }
    let (out_tx, out_rx) = mpsc::channel();
    if in_tx.send(Inbound::Connect(id, out_tx)).is_err() {
        return;
    }
    let mut seq: u64 = 0;
    let mut send = |ws: &mut WebSocket<TcpStream>, msg: Message| {
        let text = Envelope::new(seq, msg).to_json();
        seq += 1;
        ws.send(WsMessage::text(text))
    };
    'outer: while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(WsMessage::Text(text)) => match parse_client_message(text.as_str()) {
                Ok(env) => {
                    if in_tx.send(Inbound::Msg(id, env.msg)).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    if send(&mut ws, Message::Error { message: e.to_string() }).is_err() {
                        break;
                    }
                }
            },
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
        loop {
            match out_rx.try_recv() {
                Ok(msg) => {
                    if send(&mut ws, msg).is_err() {
                        break 'outer;
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => break 'outer,
            }
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    let _ = in_tx.send(Inbound::Disconnect(id));
}

struct Client {
    tx: Sender<Message>,
    costmap_rev: Option<u64>,
}

struct Sim {
    session: Session,
    opts: ServeOptions,
    inbound: Receiver<Inbound>,
    logs: Sender<EpisodeLog>,
    stop: Arc<AtomicBool>,
    clients: BTreeMap<ClientId, Client>,
    paused: bool,
    costmap_rev: u64,
    patch: CostPatch,
    log_sent: bool,
}

impl Sim {
    fn new(
        session: Session,
        opts: ServeOptions,
        inbound: Receiver<Inbound>,
        logs: Sender<EpisodeLog>,
        stop: Arc<AtomicBool>,
    ) -> Self {
        let patch = session.costmap.downsample(opts.costmap_side);
        Self {
            session,
            opts,
            inbound,
            logs,
            stop,
            clients: BTreeMap::new(),
            paused: false,
            costmap_rev: 0,
            patch,
            log_sent: false,
        }
    }

    fn run(&mut self) {
        let period = Duration::from_secs_f64(self.session.scenario.sim.dt_s);
        let mut deadline = Instant::now();
        while !self.stop.load(Ordering::SeqCst) {
            // Everything received before this boundary applies to the next tick.
            while let Ok(ev) = self.inbound.try_recv() {
                self.handle(ev);
            }
            let stepping = !self.paused && !self.session.is_done();
            if stepping {
                if let Err(e) = self.session.step() {
                    self.paused = true;
                    self.broadcast_error(&format!("simulation halted: {e}"));
                }
                if self.session.is_done() && !self.log_sent {
                    self.log_sent = true;
                    if let Some(log) = self.finished_log() {
                        let _ = self.logs.send(log);
                    }
                }
            }
            self.broadcast_snapshot();
            if self.opts.realtime || !stepping {
                deadline += period;
                let now = Instant::now();
                if deadline > now {
                    thread::sleep(deadline - now);
                } else {
                    deadline = now;
                }
            }
        }
    }

    fn finished_log(&self) -> Option<EpisodeLog> {
        let outcome = self.session.outcome.clone()?;
        Some(EpisodeLog { header: self.session.header(), ticks: self.session.ticks.clone(), outcome })
    }

    fn handle(&mut self, ev: Inbound) {
        match ev {
            Inbound::Connect(id, tx) => {
                self.clients.insert(id, Client { tx, costmap_rev: None });
            }
            Inbound::Disconnect(id) => {
                self.clients.remove(&id);
            }
            Inbound::Msg(id, msg) => {
                if let Err(e) = self.apply(msg) {
                    if let Some(c) = self.clients.get(&id) {
                        let _ = c.tx.send(Message::Error { message: e });
                    }
                }
            }
        }
    }

    fn apply(&mut self, msg: Message) -> Result<(), String> {
        apply_message(&mut self.session, &mut self.paused, &self.opts, msg).map(|outcome| {
            if let Applied::Replanned | Applied::Reset = outcome {
                self.costmap_rev += 1;
                self.patch = self.session.costmap.downsample(self.opts.costmap_side);
            }
            if let Applied::Reset = outcome {
                self.log_sent = false;
            }
        })
    }

    fn snapshot(&self) -> Snapshot {
        build_snapshot(&self.session, self.paused, self.costmap_rev)
    }

    fn broadcast_snapshot(&mut self) {
        if self.clients.is_empty() {
            return;
        }
        let snap = self.snapshot();
        let rev = self.costmap_rev;
        let patch = &self.patch;
        self.clients.retain(|_, c| {
            let mut s = snap.clone();
            if c.costmap_rev != Some(rev) {
                s.costmap = Some(patch.clone());
                c.costmap_rev = Some(rev);
            }
            c.tx.send(Message::Snapshot(Box::new(s))).is_ok()
        });
    }

    fn broadcast_error(&mut self, message: &str) {
        self.clients.retain(|_, c| c.tx.send(Message::Error { message: message.to_string() }).is_ok());
    }
}

/// Effect of a client message on the session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Applied {
    Unchanged,
    Replanned,
    Reset,
}

/// Applies one client message at a tick boundary. Errors leave the session
/// untouched and are reported back to the sender.
pub fn apply_message(
    session: &mut Session,
    paused: &mut bool,
    opts: &ServeOptions,
    msg: Message,
) -> Result<Applied, String> {
    let finite = |vals: &[f64]| vals.iter().all(|v| v.is_finite());
    match msg {
        Message::UserCmd { v, omega } => {
            if !finite(&[v, omega]) {
                return Err("user_cmd values must be finite".into());
            }
            session.push_user_command(ControlInput::new(v, omega));
            Ok(Applied::Unchanged)
        }
        Message::SetPreference { x, y } => {
            let p = checked_point(session, x, y, "set_preference")?;
            session.set_preference(Some(p)).map_err(|e| e.to_string())?;
            Ok(Applied::Replanned)
        }
        Message::SetGoal { x, y } => {
            let p = checked_point(session, x, y, "set_goal")?;
            session.set_goal(p).map_err(|e| e.to_string())?;
            Ok(Applied::Replanned)
        }
        Message::SetMode { variant } => {
            let v: Variant = variant.parse().map_err(|e: crate::local_planner::PlannerError| e.to_string())?;
            session.set_variant(v).map_err(|e| e.to_string())?;
            Ok(Applied::Unchanged)
        }
        Message::Pause => {
            *paused = true;
            Ok(Applied::Unchanged)
        }
        Message::Resume => {
            *paused = false;
            Ok(Applied::Unchanged)
        }
        Message::Reset { scenario } => {
            let sc = if scenario.is_empty() || scenario == session.scenario.name {
                session.scenario.clone()
            } else {
                if !scenario.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                    return Err(format!("invalid scenario name `{scenario}`"));
                }
                Scenario::load(&opts.scenario_dir.join(format!("{scenario}.json"))).map_err(|e| e.to_string())?
            };
            *session =
                Session::new(&sc, session.variant, opts.seed, EpisodeOptions::default()).map_err(|e| e.to_string())?;
            *paused = false;
            Ok(Applied::Reset)
        }
        Message::Snapshot(_) | Message::Error { .. } => Err("message type is sent by the server only".into()),
    }
}

fn checked_point(session: &Session, x: f64, y: f64, what: &str) -> Result<Point2, String> {
    let p = Point2::new(x, y);
    if !(x.is_finite() && y.is_finite()) || !session.world.grid.world_to_grid(p).cell().is_some() {
        return Err(format!("{what}: ({x}, {y}) is outside the map"));
    }
    Ok(p)
}

pub fn build_snapshot(session: &Session, paused: bool, costmap_rev: u64) -> Snapshot {
    let w = &session.world;
    let last = session.ticks.last();
    let cmd = last.map(|t| t.cmd).unwrap_or_default();
    Snapshot {
        scenario: session.scenario.name.clone(),
        variant: session.variant.name().to_string(),
        tick: session.tick_index(),
        t: session.time(),
        robot: RobotView {
            x: w.robot.pose.x,
            y: w.robot.pose.y,
            theta: w.robot.pose.theta,
            radius: w.robot.radius,
            v: cmd.v,
            omega: cmd.omega,
        },
        pedestrians: w
            .pedestrians
            .iter()
            .map(|p| PedestrianView {
                id: p.id,
                x: p.position.x,
                y: p.position.y,
                vx: p.velocity.x,
                vy: p.velocity.y,
                radius: p.radius,
            })
            .collect(),
        tracks: session
            .last_obstacles
            .iter()
            .map(|o| TrackView {
                id: o.id,
                x: o.position.x,
                y: o.position.y,
                vx: o.velocity.x,
                vy: o.velocity.y,
                social_area: o.area,
            })
            .collect(),
        global_path: session.path.waypoints.iter().copied().map(point).collect(),
        goal: point(session.goal),
        preference: session.preference.map(point),
        eta: last.map_or(0.0, |t| t.diag.eta),
        min_h: last.and_then(|t| t.diag.barrier_min),
        status: last.map(|t| t.diag.status),
        collided: w.collided,
        paused,
        done: session.is_done(),
        costmap_rev,
        costmap: None,
    }
}
