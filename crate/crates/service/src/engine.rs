//! Service state and the snapshot pipeline.
//!
//! Poll results flow from the scheduler into one processing thread, which owns
//! the per-stream cursors and is the only writer of history. The active model
//! sits behind an `Arc` that is swapped whole, so a classification always runs
//! against one consistent model. Events for the event stream go through a
//! broadcast channel; slow subscribers lose the oldest events, never the
//! pipeline's progress.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use nss_core::classifier::{recognize_online, StateDecision};
use nss_core::features::{default_feature_order, CounterSnapshot, CursorEvent, FeatureError, RateVector, StreamCursor};
use nss_core::store::{
    HistoryPage, HistoryQuery, HistoryStore, LabelOutcome, LabelStore, LabeledSample, ModelArtifact,
    ModelStore, ModelSummary, StateRecord, StoreError,
};
use nss_core::training::{classify_raw, train_model, RawSample, TrainingError, TrainingOptions, TrainingReport};
use nss_snmp::{Clock, PollEvent};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::config::ServiceConfig;

const EVENT_BUFFER: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Invalid(String),
    #[error("label '{0}' is not in the class set")]
    UnknownLabel(String),
    #[error("need >= 2 classes among labeled samples, found {0}")]
    InsufficientClasses(usize),
    #[error("training in progress")]
    TrainingInProgress,
    #[error("{0}")]
    Conflict(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Training(TrainingError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

impl From<TrainingError> for ServiceError {
    fn from(e: TrainingError) -> Self {
        match e {
            TrainingError::InsufficientClasses(n) => Self::InsufficientClasses(n),
            TrainingError::UnknownLabel(l) => Self::UnknownLabel(l),
            other => Self::Training(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Health {
    Ok,
    Degraded,
    Unreachable,
}

/// Latest known state of one (target, interface) stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamState {
    pub target: String,
    pub if_index: u32,
    pub health: Health,
    pub decision: Option<StateDecision>,
    pub recommended_strategy: Option<String>,
    pub rates: Option<RateVector>,
    pub model_id: Option<String>,
    pub updated_ms: Option<u64>,
    pub last_record_id: Option<u64>,
    /// Why the stream is not healthy, when it is not.
    pub message: Option<String>,
}

impl StreamState {
    fn new(target: &str, if_index: u32) -> Self {
        Self {
            target: target.to_string(),
            if_index,
            health: Health::Ok,
            decision: None,
            recommended_strategy: None,
            rates: None,
            model_id: None,
            updated_ms: None,
            last_record_id: None,
            message: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveState {
    /// Active model, or `None` while untrained.
    pub model: Option<ModelSummary>,
    pub untrained: bool,
    pub online_reorg: bool,
    pub streams: Vec<StreamState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingState {
    Idle,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingStatus {
    pub state: TrainingState,
    pub started_at_ms: Option<u64>,
    pub finished_at_ms: Option<u64>,
    pub report: Option<TrainingReport>,
    pub error: Option<String>,
}

/// Event-stream message; serialized as `{"type": ..., "data": ...}`.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum ServiceEvent {
    State(StreamState),
    Record(StateRecord),
    Training(TrainingStatus),
}

impl ServiceEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::State(_) => "state",
            Self::Record(_) => "record",
            Self::Training(_) => "training",
        }
    }
}

/// Parameter overrides accepted by a training request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub delta: Option<f64>,
    pub alpha: Option<f64>,
    pub epsilon: Option<f64>,
    pub max_passes: Option<usize>,
    pub variant: Option<nss_core::classifier::UpdateVariant>,
}

impl TrainOverrides {
    pub fn apply(&self, mut o: TrainingOptions) -> TrainingOptions {
        if let Some(v) = self.delta {
            o.params.delta = v;
        }
        if let Some(v) = self.alpha {
            o.alpha = v;
        }
        if let Some(v) = self.epsilon {
            o.params.epsilon = v;
        }
        if let Some(v) = self.max_passes {
            o.params.max_passes = v;
        }
        if let Some(v) = self.variant {
            o.params.update_variant = v;
        }
        o
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResult {
    pub outcome: LabelOutcome,
    pub sample: LabeledSample,
}

#[derive(Debug)]
pub struct ActiveModel {
    pub id: String,
    pub artifact: ModelArtifact,
}

type StreamKey = (String, u32);

/// Everything the pipeline and the API share.
pub struct Shared {
    config: ServiceConfig,
    clock: Clock,
    active: RwLock<Option<Arc<ActiveModel>>>,
    live: RwLock<BTreeMap<StreamKey, StreamState>>,
    history: Mutex<HistoryStore>,
    labels: Mutex<LabelStore>,
    models: Mutex<ModelStore>,
    training_busy: AtomicBool,
    training: Mutex<TrainingStatus>,
    events: broadcast::Sender<ServiceEvent>,
}

/// Marks training as running until dropped.
pub struct TrainingGuard<'a>(&'a AtomicBool);

impl Drop for TrainingGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

impl Shared {
    /// Opens the stores under `config.data_dir` and loads the active model.
    pub fn open(config: ServiceConfig, clock: Clock) -> Result<Arc<Self>, ServiceError> {
        let dir = &config.data_dir;
        std::fs::create_dir_all(dir).map_err(StoreError::from)?;
        let history = HistoryStore::open(dir.join("history"), config.history_config())?;
        let labels = LabelStore::open(dir.join("labels.log"))?;
        let models = ModelStore::open(dir.join("models"))?;
        let active = models.active()?.map(|(id, artifact)| Arc::new(ActiveModel { id, artifact }));
        let mut live = BTreeMap::new();
        for t in &config.targets {
            for &i in &t.if_indexes {
                live.insert((t.id.clone(), i), StreamState::new(&t.id, i));
            }
        }
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Ok(Arc::new(Self {
            config,
            clock,
            active: RwLock::new(active),
            live: RwLock::new(live),
            history: Mutex::new(history),
            labels: Mutex::new(labels),
            models: Mutex::new(models),
            training_busy: AtomicBool::new(false),
            training: Mutex::new(TrainingStatus {
                state: TrainingState::Idle,
                started_at_ms: None,
                finished_at_ms: None,
                report: None,
                error: None,
            }),
            events,
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn subscribe(&self) -> broadcast::Receiver<ServiceEvent> {
        self.events.subscribe()
    }

    fn emit(&self, e: ServiceEvent) {
        // no subscribers is fine
        let _ = self.events.send(e);
    }

    pub fn active_model(&self) -> Option<Arc<ActiveModel>> {
        self.active.read().expect("model lock").clone()
    }

    fn swap_model(&self, m: ActiveModel) {
        *self.active.write().expect("model lock") = Some(Arc::new(m));
    }

    pub fn live_state(&self) -> LiveState {
        let model = self.active_model().map(|m| ModelSummary::of(&m.id, &m.artifact));
        LiveState {
            untrained: model.is_none(),
            model,
            online_reorg: self.config.online_reorg,
            streams: self.live.read().expect("live lock").values().cloned().collect(),
        }
    }

    pub fn stream_states(&self) -> Vec<StreamState> {
        self.live.read().expect("live lock").values().cloned().collect()
    }

    pub fn track_stream(&self, target: &str, if_index: u32) {
        self.live
            .write()
            .expect("live lock")
            .entry((target.to_string(), if_index))
            .or_insert_with(|| StreamState::new(target, if_index));
    }

    pub fn forget_target(&self, target: &str) {
        self.live.write().expect("live lock").retain(|(t, _), _| t != target);
    }

    fn update_stream(&self, target: &str, if_index: u32, f: impl FnOnce(&mut StreamState)) {
        let state = {
            let mut live = self.live.write().expect("live lock");
            let entry = live
                .entry((target.to_string(), if_index))
                .or_insert_with(|| StreamState::new(target, if_index));
            f(entry);
            entry.clone()
        };
        self.emit(ServiceEvent::State(state));
    }

    pub fn query_history(&self, q: &HistoryQuery) -> Result<HistoryPage, ServiceError> {
        Ok(self.history.lock().expect("history lock").query(q)?)
    }

    pub fn record(&self, id: u64) -> Result<StateRecord, ServiceError> {
        self.history
            .lock()
            .expect("history lock")
            .get(id)?
            .ok_or_else(|| ServiceError::NotFound(format!("record {id} not found")))
    }

    pub fn history_len(&self) -> usize {
        self.history.lock().expect("history lock").len()
    }

    /// Stores the record's raw features as a sample with `label`. Labeling the
    /// same record again replaces its label; nothing is retrained.
    pub fn label_record(&self, record_id: u64, label: &str) -> Result<LabelResult, ServiceError> {
        let names = self.config.class_names();
        if !names.iter().any(|n| n == label) {
            return Err(ServiceError::UnknownLabel(label.to_string()));
        }
        let record = self.record(record_id)?;
        let sample = LabeledSample {
            source_id: record_id.to_string(),
            label: label.to_string(),
            features: record.raw_features,
            labeled_at_ms: self.clock.now_ms(),
        };
        let mut labels = self.labels.lock().expect("labels lock");
        let outcome = labels.add(sample, &names).map_err(|e| match e {
            StoreError::UnknownLabel(l) => ServiceError::UnknownLabel(l),
            other => other.into(),
        })?;
        let sample = labels.get(&record_id.to_string()).cloned().expect("just stored");
        Ok(LabelResult { outcome, sample })
    }

    /// Stores a sample that did not come from history, e.g. an imported dataset.
    pub fn add_sample(&self, sample: LabeledSample) -> Result<LabelOutcome, ServiceError> {
        let names = self.config.class_names();
        self.labels.lock().expect("labels lock").add(sample, &names).map_err(|e| match e {
            StoreError::UnknownLabel(l) => ServiceError::UnknownLabel(l),
            other => other.into(),
        })
    }

    pub fn samples(&self) -> Vec<LabeledSample> {
        self.labels.lock().expect("labels lock").samples().to_vec()
    }

    pub fn training_status(&self) -> TrainingStatus {
        self.training.lock().expect("training lock").clone()
    }

    /// Claims the single training slot.
    pub fn try_begin_training(&self) -> Result<TrainingGuard<'_>, ServiceError> {
        self.training_busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map(|_| TrainingGuard(&self.training_busy))
            .map_err(|_| ServiceError::TrainingInProgress)
    }

    fn set_training(&self, f: impl FnOnce(&mut TrainingStatus)) {
        let status = {
            let mut s = self.training.lock().expect("training lock");
            f(&mut s);
            s.clone()
        };
        self.emit(ServiceEvent::Training(status));
    }

    /// Trains on every stored sample and activates the result. Blocking.
    pub fn train(&self, overrides: &TrainOverrides) -> Result<TrainingReport, ServiceError> {
        let _guard = self.try_begin_training()?;
        let samples: Vec<RawSample> = self
            .samples()
            .into_iter()
            .map(|s| RawSample { features: s.features, label: s.label })
            .collect();
        let present: std::collections::BTreeSet<&str> = samples.iter().map(|s| s.label.as_str()).collect();
        if present.len() < 2 {
            return Err(ServiceError::InsufficientClasses(present.len()));
        }
        let options = overrides.apply(self.config.training.options());
        options.params.validate().map_err(|e| ServiceError::Invalid(e.to_string()))?;
        if !(options.alpha.is_finite() && options.alpha > 0.0) {
            return Err(ServiceError::Invalid("alpha must be positive".into()));
        }
        let started = self.clock.now_ms();
        self.set_training(|s| {
            *s = TrainingStatus {
                state: TrainingState::Running,
                started_at_ms: Some(started),
                finished_at_ms: None,
                report: None,
                error: None,
            }
        });
        let result = (|| {
            let (artifact, report) =
                train_model(&samples, &self.config.class_names(), default_feature_order(), &options, started)?;
            let models = self.models.lock().expect("models lock");
            let id = models.save(&artifact)?;
            models.set_active(&id)?;
            self.swap_model(ActiveModel { id, artifact });
            Ok::<_, ServiceError>(report)
        })();
        let finished = self.clock.now_ms();
        match &result {
            Ok(report) => self.set_training(|s| {
                s.state = TrainingState::Succeeded;
                s.finished_at_ms = Some(finished);
                s.report = Some(report.clone());
            }),
            Err(e) => self.set_training(|s| {
                s.state = TrainingState::Failed;
                s.finished_at_ms = Some(finished);
                s.error = Some(e.to_string());
            }),
        }
        result
    }

    pub fn list_models(&self) -> Result<Vec<ModelSummary>, ServiceError> {
        Ok(self.models.lock().expect("models lock").list()?)
    }

    pub fn load_model(&self, id: &str) -> Result<ModelArtifact, ServiceError> {
        self.models.lock().expect("models lock").load(id).map_err(|e| match e {
            StoreError::NotFound(m) => ServiceError::NotFound(m),
            other => other.into(),
        })
    }

    /// Makes a stored model the active one.
    pub fn activate_model(&self, id: &str) -> Result<ModelSummary, ServiceError> {
        let models = self.models.lock().expect("models lock");
        let artifact = models.load(id).map_err(|e| match e {
            StoreError::NotFound(m) => ServiceError::NotFound(m),
            other => other.into(),
        })?;
        self.check_model(&artifact)?;
        models.set_active(id)?;
        let summary = ModelSummary::of(id, &artifact);
        self.swap_model(ActiveModel { id: id.to_string(), artifact });
        Ok(summary)
    }

    /// Imports a portable model file without activating it.
    pub fn import_model(&self, bytes: &[u8]) -> Result<String, ServiceError> {
        Ok(self.models.lock().expect("models lock").import(bytes)?)
    }

    fn check_model(&self, artifact: &ModelArtifact) -> Result<(), ServiceError> {
        let names = self.config.class_names();
        if let Some(c) = artifact.classes().iter().find(|c| !names.contains(&c.name)) {
            return Err(ServiceError::Invalid(format!("model class '{}' is not configured", c.name)));
        }
        Ok(())
    }
}

/// Input of the processing thread.
pub enum PipelineInput {
    Poll(PollEvent),
    /// Snapshots pushed over the API; the reply carries one result per snapshot.
    Ingest(Vec<CounterSnapshot>, tokio::sync::oneshot::Sender<Vec<Result<Option<StateRecord>, String>>>),
}

/// Per-stream processing state; owned by the single processing thread.
pub struct Engine {
    shared: Arc<Shared>,
    cursors: HashMap<StreamKey, StreamCursor>,
}

impl Engine {
    pub fn new(shared: Arc<Shared>) -> Self {
        Self { shared, cursors: HashMap::new() }
    }

    pub fn handle(&mut self, input: PipelineInput) {
        match input {
            PipelineInput::Poll(PollEvent::Snapshot(s)) => {
                let degraded = s.degraded();
                if let Err(e) = self.process_snapshot(s.snapshot, degraded) {
                    tracing::warn!("snapshot dropped: {e}");
                }
            }
            PipelineInput::Poll(PollEvent::Failed { target, if_index, ts_ms, unreachable, message }) => {
                self.shared.update_stream(&target, if_index, |st| {
                    st.health = if unreachable { Health::Unreachable } else { Health::Degraded };
                    st.updated_ms = Some(ts_ms);
                    st.message = Some(message);
                });
            }
            PipelineInput::Ingest(snaps, reply) => {
                let results = snaps
                    .into_iter()
                    .map(|s| self.process_snapshot(s, false).map_err(|e| e.to_string()))
                    .collect();
                let _ = reply.send(results);
            }
        }
    }

    /// Turns one snapshot into a history record, if it completes a pair.
    ///
    /// Returns `Ok(None)` for the first snapshot of a stream, after a device
    /// restart and when counters needed for the features are missing.
    pub fn process_snapshot(
        &mut self,
        snapshot: CounterSnapshot,
        degraded: bool,
    ) -> Result<Option<StateRecord>, ServiceError> {
        let shared = self.shared.clone();
        let key = (snapshot.target.clone(), snapshot.if_index);
        let (target, if_index, ts_ms) = (snapshot.target.clone(), snapshot.if_index, snapshot.ts_ms);
        let health = if degraded { Health::Degraded } else { Health::Ok };
        let event = self.cursors.entry(key).or_default().push(snapshot)?;
        let rates = match event {
            CursorEvent::First | CursorEvent::Reset => {
                let msg = matches!(event, CursorEvent::Reset).then(|| "device restarted".to_string());
                shared.update_stream(&target, if_index, |st| {
                    st.health = health;
                    st.updated_ms = Some(ts_ms);
                    st.message = msg;
                });
                return Ok(None);
            }
            CursorEvent::Rates(r) => r,
        };
        let raw = match rates.raw_features() {
            Ok(raw) => raw,
            Err(e) => {
                shared.update_stream(&target, if_index, |st| {
                    st.health = Health::Degraded;
                    st.updated_ms = Some(ts_ms);
                    st.rates = Some(rates);
                    st.message = Some(e.to_string());
                });
                return Ok(None);
            }
        };

        let active = shared.active_model();
        let mut decision = None;
        let mut vector = None;
        if let Some(m) = &active {
            let row = rates.features(&m.artifact.feature_order)?;
            match classify_raw(&m.artifact, &row) {
                Ok((v, d)) => {
                    let d = if shared.config.online_reorg { self.reorganize(m, &v).unwrap_or(d) } else { d };
                    vector = Some(v.into_values());
                    decision = Some(d.at(ts_ms));
                }
                Err(e) => tracing::warn!("classification failed for {target}/{if_index}: {e}"),
            }
        }
        let strategy = decision.as_ref().map(|d: &StateDecision| shared.config.strategy_for(d.label.name()));
        let model_id = decision.as_ref().and(active.as_ref()).map(|m| m.id.clone());
        let mut record = StateRecord {
            id: 0,
            target: target.clone(),
            if_index,
            ts_ms,
            decision,
            feature_vector: vector,
            raw_features: raw,
            recommended_strategy: strategy,
            model_id,
        };
        record.id = shared.history.lock().expect("history lock").append(record.clone())?;
        shared.update_stream(&target, if_index, |st| {
            st.health = health;
            st.updated_ms = Some(ts_ms);
            st.decision = record.decision.clone();
            st.recommended_strategy = record.recommended_strategy.clone();
            st.rates = Some(rates);
            st.model_id = record.model_id.clone();
            st.last_record_id = Some(record.id);
            st.message = None;
        });
        shared.emit(ServiceEvent::Record(record.clone()));
        Ok(Some(record))
    }

    /// Absorbs `v` into the active model's bookkeeping and swaps the updated
    /// model in, unless a different model was activated meanwhile.
    fn reorganize(&self, m: &Arc<ActiveModel>, v: &nss_core::classifier::FeatureVector) -> Option<StateDecision> {
        let (mut decisions, model) = recognize_online(&m.artifact.model, std::slice::from_ref(v)).ok()?;
        let mut slot = self.shared.active.write().expect("model lock");
        if slot.as_ref().is_some_and(|cur| Arc::ptr_eq(cur, m)) {
            let mut artifact = m.artifact.clone();
            artifact.model = model;
            *slot = Some(Arc::new(ActiveModel { id: m.id.clone(), artifact }));
        }
        decisions.pop()
    }
}
