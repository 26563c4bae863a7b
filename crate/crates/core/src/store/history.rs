//! Append-only classification history.
//!
//! Records live in numbered segment files (`seg-00000001.log`, ...), one
//! checksummed JSON line per record. An in-memory index of (id, stream,
//! timestamp, label, file position) is rebuilt from the segments on open; a torn
//! final line left by a crash is truncated away. When the record count exceeds
//! the retention cap the oldest segment is deleted whole.

use std::collections::{HashMap, VecDeque};
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{decode_line, encode_line, StoreError};
use crate::classifier::StateDecision;

/// One processed snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    /// Assigned by the store on append.
    #[serde(default)]
    pub id: u64,
    pub target: String,
    pub if_index: u32,
    pub ts_ms: u64,
    /// `None` while no model is active: the snapshot is kept raw.
    pub decision: Option<StateDecision>,
    /// Normalized vector the decision was made on.
    pub feature_vector: Option<Vec<f64>>,
    /// Unnormalized features in the v1 order, kept for labeling and retraining.
    pub raw_features: Vec<f64>,
    pub recommended_strategy: Option<String>,
    #[serde(default)]
    pub model_id: Option<String>,
}

impl StateRecord {
    /// Label name, `"Unidentified"`, or `None` for raw records.
    pub fn label_name(&self) -> Option<&str> {
        self.decision.as_ref().map(|d| d.label.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelFilter {
    Class(String),
    Unidentified,
}

impl LabelFilter {
    /// `"Unidentified"` (any case) selects in-margin records; anything else a class name.
    pub fn parse(s: &str) -> Self {
        if s.eq_ignore_ascii_case("unidentified") {
            Self::Unidentified
        } else {
            Self::Class(s.to_string())
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryQuery {
    pub target: Option<String>,
    pub if_index: Option<u32>,
    /// Inclusive bounds in ms.
    pub from_ms: Option<u64>,
    pub to_ms: Option<u64>,
    pub label: Option<LabelFilter>,
    pub offset: usize,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPage {
    pub records: Vec<StateRecord>,
    /// Matches before paging.
    pub total: usize,
    pub next_offset: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryConfig {
    pub segment_records: usize,
    pub max_records: usize,
}

impl Default for HistoryConfig {
    fn default() -> Self {
        Self { segment_records: 10_000, max_records: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LabelKey {
    Raw,
    Unidentified,
    Class(u32),
}

#[derive(Debug, Clone, Copy)]
struct IndexEntry {
    id: u64,
    ts_ms: u64,
    stream: u32,
    label: LabelKey,
    segment: u64,
    offset: u64,
    len: u32,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    number: u64,
    records: usize,
    size: u64,
}

#[derive(Debug)]
pub struct HistoryStore {
    dir: PathBuf,
    config: HistoryConfig,
    streams: Vec<(String, u32)>,
    stream_ids: HashMap<(String, u32), u32>,
    labels: Vec<String>,
    label_ids: HashMap<String, u32>,
    index: VecDeque<IndexEntry>,
    segments: VecDeque<Segment>,
    writer: Option<File>,
    next_id: u64,
    last_ts: HashMap<u32, u64>,
}

fn segment_path(dir: &Path, number: u64) -> PathBuf {
    dir.join(format!("seg-{number:08}.log"))
}

impl HistoryStore {
    pub fn open(dir: impl Into<PathBuf>, config: HistoryConfig) -> Result<Self, StoreError> {
        if config.segment_records == 0 || config.max_records == 0 {
            return Err(StoreError::Invalid("history limits must be positive".into()));
        }
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut numbers = Vec::new();
        for entry in fs::read_dir(&dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(n) = name.strip_prefix("seg-").and_then(|s| s.strip_suffix(".log")) {
                if let Ok(n) = n.parse::<u64>() {
                    numbers.push(n);
                }
            }
        }
        numbers.sort_unstable();

        let mut store = Self {
            dir,
            config,
            streams: Vec::new(),
            stream_ids: HashMap::new(),
            labels: Vec::new(),
            label_ids: HashMap::new(),
            index: VecDeque::new(),
            segments: VecDeque::new(),
            writer: None,
            next_id: 1,
            last_ts: HashMap::new(),
        };
        let last = numbers.last().copied();
        for number in numbers {
            store.load_segment(number, Some(number) == last)?;
        }
        Ok(store)
    }

    fn load_segment(&mut self, number: u64, is_last: bool) -> Result<(), StoreError> {
        let path = segment_path(&self.dir, number);
        let bytes = fs::read(&path)?;
        let mut offset = 0usize;
        let mut records = 0usize;
        while offset < bytes.len() {
            let end = bytes[offset..].iter().position(|&b| b == b'\n').map(|p| offset + p);
            let parsed = end.and_then(|end| decode_line(&bytes[offset..end])).and_then(|json| {
                serde_json::from_slice::<StateRecord>(json).ok()
            });
            match (end, parsed) {
                (Some(end), Some(record)) => {
                    let len = (end + 1 - offset) as u32;
                    self.index_record(&record, number, offset as u64, len);
                    self.next_id = self.next_id.max(record.id + 1);
                    records += 1;
                    offset = end + 1;
                }
                _ if is_last => {
                    // torn tail from an interrupted append
                    let f = OpenOptions::new().write(true).open(&path)?;
                    f.set_len(offset as u64)?;
                    f.sync_all()?;
                    break;
                }
                _ => {
                    return Err(StoreError::Corrupt(format!(
                        "history segment {} is damaged at byte {offset}",
                        path.display()
                    )));
                }
            }
        }
        self.segments.push_back(Segment { number, records, size: offset as u64 });
        Ok(())
    }

    fn stream_id(&mut self, target: &str, if_index: u32) -> u32 {
        let key = (target.to_string(), if_index);
        if let Some(&id) = self.stream_ids.get(&key) {
            return id;
        }
        let id = self.streams.len() as u32;
        self.streams.push(key.clone());
        self.stream_ids.insert(key, id);
        id
    }

    fn label_key(&mut self, record: &StateRecord) -> LabelKey {
        match &record.decision {
            None => LabelKey::Raw,
            Some(d) if d.label.is_unidentified() => LabelKey::Unidentified,
            Some(d) => {
                let name = d.label.name();
                if let Some(&id) = self.label_ids.get(name) {
                    return LabelKey::Class(id);
                }
                let id = self.labels.len() as u32;
                self.labels.push(name.to_string());
                self.label_ids.insert(name.to_string(), id);
                LabelKey::Class(id)
            }
        }
    }

    fn index_record(&mut self, record: &StateRecord, segment: u64, offset: u64, len: u32) {
        let stream = self.stream_id(&record.target, record.if_index);
        let label = self.label_key(record);
        let last = self.last_ts.entry(stream).or_insert(record.ts_ms);
        *last = (*last).max(record.ts_ms);
        self.index.push_back(IndexEntry {
            id: record.id,
            ts_ms: record.ts_ms,
            stream,
            label,
            segment,
            offset,
            len,
        });
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Appends a record durably (fsync before returning) and returns its id.
    ///
    /// Timestamps must not go backwards within a (target, interface) stream.
    pub fn append(&mut self, mut record: StateRecord) -> Result<u64, StoreError> {
        if let Some(&stream) = self.stream_ids.get(&(record.target.clone(), record.if_index)) {
            if let Some(&last) = self.last_ts.get(&stream) {
                if record.ts_ms < last {
                    return Err(StoreError::OutOfOrder(format!(
                        "{}/{}: {} ms after {} ms",
                        record.target, record.if_index, record.ts_ms, last
                    )));
                }
            }
        }
        record.id = self.next_id;
        let json = serde_json::to_vec(&record).map_err(|e| StoreError::Serialize(e.to_string()))?;
        let line = encode_line(&json);

        let needs_roll = match self.segments.back() {
            None => true,
            Some(seg) => seg.records >= self.config.segment_records,
        };
        if needs_roll {
            let number = self.segments.back().map_or(1, |s| s.number + 1);
            self.segments.push_back(Segment { number, records: 0, size: 0 });
            self.writer = None;
        }
        let seg = *self.segments.back().expect("segment exists");
        if self.writer.is_none() {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(segment_path(&self.dir, seg.number))?;
            self.writer = Some(file);
        }
        let writer = self.writer.as_mut().expect("writer open");
        let written = writer.write_all(&line).and_then(|_| writer.sync_data());
        if let Err(e) = written {
            // drop whatever part of the line made it to disk
            let _ = writer.set_len(seg.size);
            self.writer = None;
            return Err(e.into());
        }

        self.index_record(&record, seg.number, seg.size, line.len() as u32);
        let back = self.segments.back_mut().expect("segment exists");
        back.records += 1;
        back.size += line.len() as u64;
        self.next_id += 1;
        self.enforce_retention()?;
        Ok(record.id)
    }

    fn enforce_retention(&mut self) -> Result<(), StoreError> {
        while self.index.len() > self.config.max_records && self.segments.len() > 1 {
            let oldest = self.segments.pop_front().expect("segment exists");
            while self.index.front().is_some_and(|e| e.segment == oldest.number) {
                self.index.pop_front();
            }
            fs::remove_file(segment_path(&self.dir, oldest.number))?;
        }
        Ok(())
    }

    fn read_entry(&self, entry: &IndexEntry) -> Result<StateRecord, StoreError> {
        let mut f = File::open(segment_path(&self.dir, entry.segment))?;
        f.seek(SeekFrom::Start(entry.offset))?;
        let mut buf = vec![0u8; entry.len as usize];
        f.read_exact(&mut buf)?;
        let line = buf.strip_suffix(b"\n").unwrap_or(&buf);
        let json = decode_line(line)
            .ok_or_else(|| StoreError::Checksum(format!("history record {}", entry.id)))?;
        serde_json::from_slice(json).map_err(|e| StoreError::Corrupt(e.to_string()))
    }

    pub fn get(&self, id: u64) -> Result<Option<StateRecord>, StoreError> {
        let (a, b) = self.index.as_slices();
        let found = match a.binary_search_by_key(&id, |e| e.id) {
            Ok(i) => Some(&a[i]),
            Err(_) => b.binary_search_by_key(&id, |e| e.id).ok().map(|i| &b[i]),
        };
        found.map(|e| self.read_entry(e)).transpose()
    }

    /// Matching records ordered by timestamp, ties in insertion order.
    pub fn query(&self, q: &HistoryQuery) -> Result<HistoryPage, StoreError> {
        let label = match &q.label {
            None => None,
            Some(LabelFilter::Unidentified) => Some(LabelKey::Unidentified),
            Some(LabelFilter::Class(name)) => match self.label_ids.get(name) {
                Some(&id) => Some(LabelKey::Class(id)),
                None => {
                    return Ok(HistoryPage { records: Vec::new(), total: 0, next_offset: None })
                }
            },
        };
        let mut hits: Vec<&IndexEntry> = self
            .index
            .iter()
            .filter(|e| {
                let (target, if_index) = &self.streams[e.stream as usize];
                q.target.as_ref().is_none_or(|t| t == target)
                    && q.if_index.is_none_or(|i| i == *if_index)
                    && q.from_ms.is_none_or(|f| e.ts_ms >= f)
                    && q.to_ms.is_none_or(|t| e.ts_ms <= t)
                    && label.is_none_or(|l| l == e.label)
            })
            .collect();
        hits.sort_by_key(|e| (e.ts_ms, e.id));
        let total = hits.len();
        let end = match q.limit {
            Some(limit) => q.offset.saturating_add(limit).min(total),
            None => total,
        };
        let start = q.offset.min(total);
        let records =
            hits[start..end].iter().map(|e| self.read_entry(e)).collect::<Result<Vec<_>, _>>()?;
        let next_offset = (end < total).then_some(end);
        Ok(HistoryPage { records, total, next_offset })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{ClassDecision, ClassLabel};

    pub(crate) fn record(target: &str, ts_ms: u64, label: Option<&str>) -> StateRecord {
        let decision = label.map(|name| StateDecision {
            label: if name == "Unidentified" {
                ClassDecision::Unidentified
            } else {
                ClassDecision::Class(ClassLabel::new(0, name))
            },
            potentials: vec![0.5, 0.25],
            margin: 0.25,
            decided_at_ms: Some(ts_ms),
        });
        StateRecord {
            id: 0,
            target: target.into(),
            if_index: 1,
            ts_ms,
            decision,
            feature_vector: Some(vec![0.1, -0.2]),
            raw_features: vec![1.0, 2.0],
            recommended_strategy: Some("none".into()),
            model_id: None,
        }
    }

    #[test]
    fn append_and_query_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = HistoryStore::open(dir.path(), HistoryConfig::default()).unwrap();
        for i in 0..100 {
            h.append(record("a", 1000 + i, Some("Normal"))).unwrap();
        }
        let page = h.query(&HistoryQuery::default()).unwrap();
        assert_eq!(page.total, 100);
        assert!(page.records.windows(2).all(|w| w[0].ts_ms <= w[1].ts_ms));
        assert_eq!(page.records[0].id, 1);
        assert_eq!(page.next_offset, None);
    }

    #[test]
    fn empty_range_and_paging() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = HistoryStore::open(dir.path(), HistoryConfig::default()).unwrap();
        for i in 0..10 {
            h.append(record("a", i * 10, Some("Normal"))).unwrap();
        }
        let q = HistoryQuery { from_ms: Some(500), to_ms: Some(600), ..Default::default() };
        assert!(h.query(&q).unwrap().records.is_empty());
        let q = HistoryQuery { from_ms: Some(20), to_ms: Some(40), ..Default::default() };
        assert_eq!(h.query(&q).unwrap().total, 3);
        let q = HistoryQuery { offset: 4, limit: Some(4), ..Default::default() };
        let page = h.query(&q).unwrap();
        assert_eq!(page.records.len(), 4);
        assert_eq!(page.records[0].ts_ms, 40);
        assert_eq!(page.next_offset, Some(8));
    }

    #[test]
    fn label_filter_and_ties() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = HistoryStore::open(dir.path(), HistoryConfig::default()).unwrap();
        h.append(record("a", 5, Some("Normal"))).unwrap();
        h.append(record("b", 5, Some("Unidentified"))).unwrap();
        h.append(record("a", 5, Some("Unidentified"))).unwrap();
        h.append(record("a", 6, None)).unwrap();
        let q = HistoryQuery { label: Some(LabelFilter::parse("unidentified")), ..Default::default() };
        let page = h.query(&q).unwrap();
        assert_eq!(page.records.iter().map(|r| r.id).collect::<Vec<_>>(), vec![2, 3]);
        let q = HistoryQuery { label: Some(LabelFilter::Class("Nope".into())), ..Default::default() };
        assert_eq!(h.query(&q).unwrap().total, 0);
        let q = HistoryQuery { target: Some("a".into()), ..Default::default() };
        assert_eq!(h.query(&q).unwrap().records.iter().map(|r| r.id).collect::<Vec<_>>(), vec![1, 3, 4]);
    }

    #[test]
    fn rejects_backwards_timestamps_per_stream() {
        let dir = tempfile::tempdir().unwrap();
        let mut h = HistoryStore::open(dir.path(), HistoryConfig::default()).unwrap();
        h.append(record("a", 50, None)).unwrap();
        assert!(matches!(h.append(record("a", 49, None)), Err(StoreError::OutOfOrder(_))));
        h.append(record("b", 10, None)).unwrap();
        h.append(record("a", 50, None)).unwrap();
    }

    #[test]
    fn reopen_restores_everything() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = HistoryConfig { segment_records: 3, max_records: 100 };
        let before = {
            let mut h = HistoryStore::open(dir.path(), cfg).unwrap();
            for i in 0..10 {
                h.append(record("a", i, Some(if i % 2 == 0 { "Normal" } else { "Unidentified" }))).unwrap();
            }
            h.query(&HistoryQuery::default()).unwrap()
        };
        let mut h = HistoryStore::open(dir.path(), cfg).unwrap();
        assert_eq!(h.query(&HistoryQuery::default()).unwrap(), before);
        assert_eq!(h.append(record("a", 20, None)).unwrap(), 11);
        assert_eq!(h.get(4).unwrap().unwrap().ts_ms, 3);
        assert_eq!(h.get(999).unwrap(), None);
    }

    #[test]
    fn torn_tail_is_truncated() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut h = HistoryStore::open(dir.path(), HistoryConfig::default()).unwrap();
            h.append(record("a", 1, None)).unwrap();
            h.append(record("a", 2, None)).unwrap();
        }
        let seg = segment_path(dir.path(), 1);
        let mut f = OpenOptions::new().append(true).open(&seg).unwrap();
        f.write_all(b"0000abcd {\"half").unwrap();
        drop(f);
        let mut h = HistoryStore::open(dir.path(), HistoryConfig::default()).unwrap();
        assert_eq!(h.len(), 2);
        h.append(record("a", 3, None)).unwrap();
        let h = HistoryStore::open(dir.path(), HistoryConfig::default()).unwrap();
        assert_eq!(h.len(), 3);
    }

    #[test]
    fn damage_in_older_segment_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = HistoryConfig { segment_records: 2, max_records: 100 };
        {
            let mut h = HistoryStore::open(dir.path(), cfg).unwrap();
            for i in 0..5 {
                h.append(record("a", i, None)).unwrap();
            }
        }
        let seg = segment_path(dir.path(), 1);
        let mut bytes = fs::read(&seg).unwrap();
        bytes[12] ^= 0x55;
        fs::write(&seg, bytes).unwrap();
        assert!(matches!(HistoryStore::open(dir.path(), cfg), Err(StoreError::Corrupt(_))));
    }

    #[test]
    fn retention_drops_oldest_segment() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = HistoryConfig { segment_records: 4, max_records: 10 };
        let mut h = HistoryStore::open(dir.path(), cfg).unwrap();
        for i in 0..13 {
            h.append(record("a", i, None)).unwrap();
        }
        // 13 > 10 drops the first segment (4 records)
        assert_eq!(h.len(), 9);
        let page = h.query(&HistoryQuery::default()).unwrap();
        assert_eq!(page.records[0].id, 5);
        assert!(!segment_path(dir.path(), 1).exists());
        let h = HistoryStore::open(dir.path(), cfg).unwrap();
        assert_eq!(h.len(), 9);
    }
}
