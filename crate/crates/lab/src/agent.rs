//! Synthetic SNMP v2c agent.
//!
//! Answers GetRequests for sysUpTime.0 and the eight polled ifEntry counters of
//! its interfaces, with values taken from a scenario schedule or a recorded
//! trace at the current time of its [`Clock`]. Scenario-driven counters advance
//! in one-second steps of simulated time and are interpolated within a step.
//!
//! Fault injection (`drop_all`, `delay_ms`, `reboot_now`) and scenario switches
//! go through the [`AgentHandle`] and take effect on the next request.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use nss_core::features::{wrapping_delta, CounterSnapshot};
use nss_snmp::oids::{parse_if_counter, sys_uptime};
use nss_snmp::{decode_message, encode_message, Clock, Message, Pdu, PduKind, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::net::UdpSocket;
use tokio::task::JoinHandle;

use crate::scenario::{CounterModel, Scenario, ScenarioKind};
use crate::trace::Trace;

const STEP_MS: u64 = 1000;
const GEN_ERR: i32 = 5;

#[derive(Debug, Clone)]
pub enum AgentSource {
    /// Scenarios played back to back, repeating once the last one ends.
    Schedule(Vec<Scenario>),
    /// Replays recorded counters; the trace's own streams define the interfaces.
    Trace(Trace),
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub community: String,
    /// Interfaces served in schedule mode.
    pub if_indexes: Vec<u32>,
    pub clock: Clock,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self { community: "public".into(), if_indexes: vec![1], clock: Clock::system() }
    }
}

struct Iface {
    model: CounterModel,
    rng: ChaCha8Rng,
    /// Schedule time up to which `model` holds complete steps.
    stepped_ms: u64,
    pending: Option<[f64; 8]>,
}

enum Source {
    Schedule { scenarios: Vec<Scenario>, cycle_ms: u64, ifaces: BTreeMap<u32, Iface> },
    Trace { streams: BTreeMap<u32, Vec<CounterSnapshot>> },
}

struct Phase {
    start_ms: u64,
    source: Source,
}

impl Phase {
    fn schedule(start_ms: u64, scenarios: Vec<Scenario>, ifaces: BTreeMap<u32, Iface>) -> Self {
        let cycle_ms = scenarios.iter().map(|s| s.duration_s * 1000).sum();
        Self { start_ms, source: Source::Schedule { scenarios, cycle_ms, ifaces } }
    }

    /// Scenario active `rel_ms` into the phase, and how long it has been active.
    fn scenario_at(scenarios: &[Scenario], cycle_ms: u64, rel_ms: u64) -> (&Scenario, u64) {
        let mut t = rel_ms % cycle_ms;
        for s in scenarios {
            let d = s.duration_s * 1000;
            if t < d {
                return (s, t);
            }
            t -= d;
        }
        unreachable!("offset is reduced modulo the cycle length")
    }

    fn kind_at(&self, ts_ms: u64) -> Option<ScenarioKind> {
        match &self.source {
            Source::Schedule { scenarios, cycle_ms, .. } => {
                Some(Self::scenario_at(scenarios, *cycle_ms, ts_ms.saturating_sub(self.start_ms)).0.kind)
            }
            Source::Trace { .. } => None,
        }
    }

    /// Raw counter values of one interface at `now_ms`, or `None` if not served.
    fn counters(&mut self, if_index: u32, now_ms: u64) -> Option<Vec<(&'static str, u32)>> {
        let rel = now_ms.saturating_sub(self.start_ms);
        match &mut self.source {
            Source::Schedule { scenarios, cycle_ms, ifaces } => {
                let iface = ifaces.get_mut(&if_index)?;
                let draw = |iface: &mut Iface| {
                    let (s, into) = Self::scenario_at(scenarios, *cycle_ms, iface.stepped_ms);
                    CounterModel::draw_step(s, into as f64 / 1000.0, STEP_MS as f64 / 1000.0, &mut iface.rng)
                };
                while iface.stepped_ms + STEP_MS <= rel {
                    let inc = match iface.pending.take() {
                        Some(inc) => inc,
                        None => draw(iface),
                    };
                    iface.model.add(&inc);
                    iface.stepped_ms += STEP_MS;
                }
                if iface.pending.is_none() {
                    iface.pending = Some(draw(iface));
                }
                let frac = (rel - iface.stepped_ms) as f64 / STEP_MS as f64;
                Some(iface.model.values_with(iface.pending.as_ref().map(|p| (p, frac))))
            }
            Source::Trace { streams } => {
                let snaps = streams.get(&if_index)?;
                Some(interpolate(snaps, rel))
            }
        }
    }

    /// Freezes the current values of every interface into plain counter models.
    fn freeze(&mut self, now_ms: u64) -> BTreeMap<u32, CounterModel> {
        let ids: Vec<u32> = match &self.source {
            Source::Schedule { ifaces, .. } => ifaces.keys().copied().collect(),
            Source::Trace { streams } => streams.keys().copied().collect(),
        };
        ids.into_iter()
            .map(|i| {
                let values = self.counters(i, now_ms).unwrap_or_default();
                (i, CounterModel::with_offsets(&values))
            })
            .collect()
    }
}

/// Counters `rel_ms` after the first snapshot, linear between snapshots and
/// held at the last one afterwards.
fn interpolate(snaps: &[CounterSnapshot], rel_ms: u64) -> Vec<(&'static str, u32)> {
    let Some(first) = snaps.first() else { return Vec::new() };
    let t = first.ts_ms + rel_ms;
    let k = snaps.partition_point(|s| s.ts_ms <= t).max(1) - 1;
    let a = &snaps[k];
    let b = snaps.get(k + 1);
    nss_core::features::COUNTER_NAMES
        .iter()
        .filter_map(|&name| {
            let va = a.counter(name)?;
            let v = match b.and_then(|b| Some((b, b.counter(name)?))) {
                Some((b, vb)) => {
                    let frac = (t - a.ts_ms) as f64 / (b.ts_ms - a.ts_ms) as f64;
                    va.wrapping_add((f64::from(wrapping_delta(va, vb)) * frac) as u32)
                }
                None => va,
            };
            Some((name, v))
        })
        .collect()
}

struct State {
    phases: Vec<Phase>,
    boot_ms: u64,
    /// Counter values at the last reboot; reported values are relative to them.
    baseline: BTreeMap<u32, BTreeMap<&'static str, u32>>,
}

impl State {
    fn current(&mut self) -> &mut Phase {
        self.phases.last_mut().expect("at least one phase")
    }

    fn counters(&mut self, if_index: u32, now_ms: u64) -> Option<Vec<(&'static str, u32)>> {
        let raw = self.current().counters(if_index, now_ms)?;
        let base = self.baseline.get(&if_index);
        Some(
            raw.into_iter()
                .map(|(n, v)| (n, v.wrapping_sub(base.and_then(|b| b.get(n)).copied().unwrap_or(0))))
                .collect(),
        )
    }
}

struct Shared {
    clock: Clock,
    community: Vec<u8>,
    drop_all: AtomicBool,
    delay_ms: AtomicU64,
    requests: AtomicU64,
    state: Mutex<State>,
}

/// Control handle of a running agent. Dropping it stops the agent.
pub struct AgentHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    task: JoinHandle<()>,
}

fn new_ifaces(if_indexes: &[u32], seed: u64, models: Option<&BTreeMap<u32, CounterModel>>) -> BTreeMap<u32, Iface> {
    if_indexes
        .iter()
        .map(|&i| {
            let model = models.and_then(|m| m.get(&i).cloned()).unwrap_or_default();
            let rng = ChaCha8Rng::seed_from_u64(seed ^ u64::from(i).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            (i, Iface { model, rng, stepped_ms: 0, pending: None })
        })
        .collect()
}

/// Binds `bind` and serves until the handle is dropped or shut down.
pub async fn run_agent(bind: SocketAddr, source: AgentSource, config: AgentConfig) -> std::io::Result<AgentHandle> {
    let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidInput, m);
    let now = config.clock.now_ms();
    let phase = match source {
        AgentSource::Schedule(scenarios) => {
            if scenarios.is_empty() {
                return Err(invalid("agent schedule is empty".into()));
            }
            for s in &scenarios {
                s.validate().map_err(|e| invalid(e.to_string()))?;
            }
            if config.if_indexes.is_empty() {
                return Err(invalid("agent needs at least one interface".into()));
            }
            let ifaces = new_ifaces(&config.if_indexes, scenarios[0].seed, None);
            Phase::schedule(now, scenarios, ifaces)
        }
        AgentSource::Trace(trace) => {
            let mut streams: BTreeMap<u32, Vec<CounterSnapshot>> = BTreeMap::new();
            for s in trace.snapshots {
                streams.entry(s.if_index).or_default().push(s);
            }
            if streams.is_empty() {
                return Err(invalid("agent trace is empty".into()));
            }
            Phase { start_ms: now, source: Source::Trace { streams } }
        }
    };
    let socket = Arc::new(UdpSocket::bind(bind).await?);
    let addr = socket.local_addr()?;
    let shared = Arc::new(Shared {
        clock: config.clock,
        community: config.community.into_bytes(),
        drop_all: AtomicBool::new(false),
        delay_ms: AtomicU64::new(0),
        requests: AtomicU64::new(0),
        state: Mutex::new(State { phases: vec![phase], boot_ms: now, baseline: BTreeMap::new() }),
    });
    let task = tokio::spawn(serve(socket, shared.clone()));
    Ok(AgentHandle { addr, shared, task })
}

async fn serve(socket: Arc<UdpSocket>, shared: Arc<Shared>) {
    let mut buf = vec![0u8; 65_535];
    loop {
        let Ok((n, peer)) = socket.recv_from(&mut buf).await else { continue };
        shared.requests.fetch_add(1, Ordering::Relaxed);
        if shared.drop_all.load(Ordering::Relaxed) {
            continue;
        }
        let Some(reply) = respond(&shared, &buf[..n]) else { continue };
        let delay = shared.delay_ms.load(Ordering::Relaxed);
        if delay == 0 {
            let _ = socket.send_to(&reply, peer).await;
        } else {
            let socket = socket.clone();
            tokio::spawn(async move {
                tokio::time::sleep(Duration::from_millis(delay)).await;
                let _ = socket.send_to(&reply, peer).await;
            });
        }
    }
}

fn respond(shared: &Shared, datagram: &[u8]) -> Option<Vec<u8>> {
    let request = decode_message(datagram).ok()?;
    if request.community != shared.community {
        return None;
    }
    let mut pdu = match request.pdu.kind {
        PduKind::Response => return None,
        PduKind::GetNextRequest => Pdu {
            kind: PduKind::Response,
            error_status: GEN_ERR,
            error_index: 0,
            ..request.pdu
        },
        PduKind::GetRequest => Pdu { kind: PduKind::Response, ..request.pdu },
    };
    if pdu.error_status == 0 {
        let now = shared.clock.now_ms();
        let mut state = shared.state.lock().expect("agent state");
        let uptime = ((now - state.boot_ms) / 10) as u32;
        let uptime_oid = sys_uptime();
        let mut cache: BTreeMap<u32, Option<Vec<(&'static str, u32)>>> = BTreeMap::new();
        for vb in &mut pdu.varbinds {
            vb.value = if vb.oid == uptime_oid {
                Value::TimeTicks(uptime)
            } else if let Some((name, idx)) = parse_if_counter(&vb.oid) {
                let values = cache.entry(idx).or_insert_with(|| state.counters(idx, now));
                match values.as_ref().and_then(|v| v.iter().find(|(n, _)| *n == name)) {
                    Some(&(_, v)) => Value::Counter32(v),
                    None => Value::NoSuchInstance,
                }
            } else {
                Value::NoSuchInstance
            };
        }
    }
    Some(encode_message(&Message { version: request.version, community: request.community, pdu }))
}

impl AgentHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn clock(&self) -> Clock {
        self.shared.clock
    }

    /// Silently drops every request while set.
    pub fn set_drop_all(&self, on: bool) {
        self.shared.drop_all.store(on, Ordering::Relaxed);
    }

    /// Delays every response by `ms` real milliseconds.
    pub fn set_delay_ms(&self, ms: u64) {
        self.shared.delay_ms.store(ms, Ordering::Relaxed);
    }

    /// Simulates a device restart: uptime and counters start again from zero.
    pub fn reboot_now(&self) {
        let now = self.shared.clock.now_ms();
        let mut state = self.shared.state.lock().expect("agent state");
        state.boot_ms = now;
        let phase = state.current();
        let ids: Vec<u32> = match &phase.source {
            Source::Schedule { ifaces, .. } => ifaces.keys().copied().collect(),
            Source::Trace { streams } => streams.keys().copied().collect(),
        };
        let baseline = ids
            .into_iter()
            .filter_map(|i| Some((i, phase.counters(i, now)?.into_iter().collect())))
            .collect();
        state.baseline = baseline;
    }

    /// Switches to `scenario` from now on. Counters continue from their
    /// current values.
    pub fn set_scenario(&self, scenario: Scenario) -> Result<(), crate::ScenarioError> {
        self.set_schedule(vec![scenario])
    }

    pub fn set_schedule(&self, scenarios: Vec<Scenario>) -> Result<(), crate::ScenarioError> {
        if scenarios.is_empty() {
            return Err(crate::ScenarioError::Invalid("schedule is empty".into()));
        }
        for s in &scenarios {
            s.validate()?;
        }
        let now = self.shared.clock.now_ms();
        let mut state = self.shared.state.lock().expect("agent state");
        let models = state.current().freeze(now);
        let ids: Vec<u32> = models.keys().copied().collect();
        let ifaces = new_ifaces(&ids, scenarios[0].seed, Some(&models));
        state.phases.push(Phase::schedule(now, scenarios, ifaces));
        Ok(())
    }

    /// Scenario that was driving the counters at clock time `ts_ms`; `None`
    /// while replaying a trace.
    pub fn kind_at(&self, ts_ms: u64) -> Option<ScenarioKind> {
        let state = self.shared.state.lock().expect("agent state");
        let k = state.phases.partition_point(|p| p.start_ms <= ts_ms).max(1) - 1;
        state.phases[k].kind_at(ts_ms)
    }

    pub fn current_kind(&self) -> Option<ScenarioKind> {
        self.kind_at(self.shared.clock.now_ms())
    }

    /// Datagrams received so far, including dropped ones.
    pub fn requests_received(&self) -> u64 {
        self.shared.requests.load(Ordering::Relaxed)
    }

    pub fn shutdown(&self) {
        self.task.abort();
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.task.abort();
    }
}
