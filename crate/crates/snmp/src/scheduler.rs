//! Periodic polling of every (target, interface) stream.
//!
//! Each stream runs in its own task, so a slow or dead target only delays
//! itself. A semaphore bounds the number of requests in flight across all
//! streams. Gaps between polls are the target interval scaled by a factor
//! drawn uniformly from `[1 - jitter, 1 + jitter]`, seeded per stream so runs
//! are reproducible. Results reach the sink in poll order per stream.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio::sync::{mpsc, Semaphore};
use tokio::task::JoinHandle;

use crate::client::{poll_once, PollError, PollOptions, PolledSnapshot, Target, TargetError};
use crate::clock::Clock;

pub trait Poller: Send + Sync + 'static {
    fn poll(
        &self,
        target: &Target,
        if_index: u32,
        clock: &Clock,
    ) -> impl Future<Output = Result<PolledSnapshot, PollError>> + Send;
}

/// Polls real agents over UDP.
#[derive(Debug, Clone, Default)]
pub struct SnmpPoller {
    pub options: PollOptions,
}

impl Poller for SnmpPoller {
    async fn poll(
        &self,
        target: &Target,
        if_index: u32,
        clock: &Clock,
    ) -> Result<PolledSnapshot, PollError> {
        poll_once(target, if_index, &self.options, clock).await
    }
}

#[derive(Debug)]
pub enum PollEvent {
    Snapshot(PolledSnapshot),
    Failed {
        target: String,
        if_index: u32,
        ts_ms: u64,
        unreachable: bool,
        message: String,
    },
}

impl PollEvent {
    pub fn stream(&self) -> (&str, u32) {
        match self {
            Self::Snapshot(s) => (&s.snapshot.target, s.snapshot.if_index),
            Self::Failed { target, if_index, .. } => (target, *if_index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub max_in_flight: usize,
    /// Relative half-width of the interval jitter.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { max_in_flight: 64, jitter: 0.1, seed: 0 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SchedulerError {
    #[error(transparent)]
    Invalid(#[from] TargetError),
    #[error("target '{0}' already exists")]
    Duplicate(String),
}

struct Shared<P> {
    poller: P,
    clock: Clock,
    config: SchedulerConfig,
    sink: mpsc::Sender<PollEvent>,
    permits: Semaphore,
}

pub struct Scheduler<P: Poller> {
    shared: Arc<Shared<P>>,
    streams: Mutex<BTreeMap<String, (Target, Vec<JoinHandle<()>>)>>,
}

impl<P: Poller> Scheduler<P> {
    /// Must be called inside a tokio runtime.
    pub fn new(poller: P, clock: Clock, config: SchedulerConfig, sink: mpsc::Sender<PollEvent>) -> Self {
        let permits = Semaphore::new(config.max_in_flight.max(1));
        Self {
            shared: Arc::new(Shared { poller, clock, config, sink, permits }),
            streams: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn clock(&self) -> Clock {
        self.shared.clock
    }

    pub fn add_target(&self, target: Target) -> Result<(), SchedulerError> {
        target.validate()?;
        let mut streams = self.streams.lock().expect("scheduler lock");
        if streams.contains_key(&target.id) {
            return Err(SchedulerError::Duplicate(target.id));
        }
        let tasks = target
            .if_indexes
            .iter()
            .map(|&if_index| tokio::spawn(run_stream(self.shared.clone(), target.clone(), if_index)))
            .collect();
        streams.insert(target.id.clone(), (target, tasks));
        Ok(())
    }

    /// Stops polling a target. Returns whether it existed.
    pub fn remove_target(&self, id: &str) -> bool {
        let removed = self.streams.lock().expect("scheduler lock").remove(id);
        match removed {
            Some((_, tasks)) => {
                tasks.iter().for_each(JoinHandle::abort);
                true
            }
            None => false,
        }
    }

    /// Current targets ordered by id.
    pub fn targets(&self) -> Vec<Target> {
        self.streams.lock().expect("scheduler lock").values().map(|(t, _)| t.clone()).collect()
    }

    pub fn shutdown(&self) {
        let mut streams = self.streams.lock().expect("scheduler lock");
        for (_, tasks) in streams.values() {
            tasks.iter().for_each(JoinHandle::abort);
        }
        streams.clear();
    }
}

impl<P: Poller> Drop for Scheduler<P> {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// FNV-1a; stable across platforms and releases, unlike `DefaultHasher`.
fn stream_seed(seed: u64, target: &str, if_index: u32) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in target.bytes().chain(if_index.to_le_bytes()) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

async fn run_stream<P: Poller>(shared: Arc<Shared<P>>, target: Target, if_index: u32) {
    let clock = shared.clock;
    let jitter = shared.config.jitter.clamp(0.0, 0.5);
    let interval_ms = f64::from(target.poll_interval_s) * 1000.0;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(shared.config.seed, &target.id, if_index));
    // spread stream start-up over the first tenth of an interval
    let mut due_ms = clock.elapsed_ms() + (rng.random_range(0.0..=0.1) * interval_ms) as u64;
    loop {
        tokio::time::sleep_until(clock.instant_at(due_ms)).await;
        let result = {
            let Ok(_permit) = shared.permits.acquire().await else { return };
            shared.poller.poll(&target, if_index, &clock).await
        };
        let event = match result {
            Ok(s) => PollEvent::Snapshot(s),
            Err(e) => PollEvent::Failed {
                target: target.id.clone(),
                if_index,
                ts_ms: clock.now_ms(),
                unreachable: e.is_unreachable(),
                message: e.to_string(),
            },
        };
        if shared.sink.send(event).await.is_err() {
            return;
        }
        let gap = interval_ms * (1.0 + rng.random_range(-jitter..=jitter));
        due_ms += gap as u64;
        due_ms = due_ms.max(clock.elapsed_ms());
    }
}
