//! In-memory job table with per-job event logs.
//!
//! Every job owns an append-only list of events. Subscribers replay the list
//! from the start and then wait for the watch channel to announce new
//! entries, so a stream opened at any time delivers every trace row exactly
//! once.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use vehiclesdf::params::{GeomParams, TraceRow};

/// Trace rows are flushed to subscribers whenever the iteration counter
/// crosses a multiple of this, plus once at the end.
pub const EVENT_EVERY: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Optimize,
    Drag,
    Extract,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }

    /// Forward only: queued, then running, then done or failed.
    pub fn can_become(self, next: JobStatus) -> bool {
        match self {
            JobStatus::Queued => next != JobStatus::Queued,
            JobStatus::Running => next.is_terminal(),
            JobStatus::Done | JobStatus::Failed => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub mesh_id: String,
    pub final_params: GeomParams,
    pub mse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Parameters measured on the decoded mesh, if extraction succeeded.
    pub extracted_params: Option<GeomParams>,
    pub latent: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub seed: u64,
    pub request: serde_json::Value,
    pub trace: Vec<TraceRow>,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum JobEvent {
    Trace { rows: Vec<TraceRow> },
    Done { result: JobResult },
    Failed { error: String },
}

impl JobEvent {
    pub fn name(&self) -> &'static str {
        match self {
            JobEvent::Trace { .. } => "trace",
            JobEvent::Done { .. } => "done",
            JobEvent::Failed { .. } => "failed",
        }
    }

    pub fn is_terminal(&self) -> bool {
        !matches!(self, JobEvent::Trace { .. })
    }
}

struct Entry {
    record: JobRecord,
    events: Vec<JobEvent>,
    notify: watch::Sender<usize>,
}

#[derive(Clone, Default)]
pub struct JobTable {
    inner: Arc<Mutex<BTreeMap<String, Entry>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum JobError {
    #[error("unknown job {0}")]
    Unknown(String),
    #[error("job {id} cannot move from {from:?} to {to:?}")]
    Transition {
        id: String,
        from: JobStatus,
        to: JobStatus,
    },
}

impl JobTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a queued job. Returns `false` if the id already exists, in
    /// which case nothing changes.
    pub fn insert(
        &self,
        job_id: &str,
        kind: JobKind,
        seed: u64,
        request: serde_json::Value,
    ) -> bool {
        let mut t = self.inner.lock().expect("job table poisoned");
        if t.contains_key(job_id) {
            return false;
        }
        let (notify, _) = watch::channel(0);
        t.insert(
            job_id.to_string(),
            Entry {
                record: JobRecord {
                    job_id: job_id.to_string(),
                    kind,
                    status: JobStatus::Queued,
                    seed,
                    request,
                    trace: Vec::new(),
                    result: None,
                    error: None,
                },
                events: Vec::new(),
                notify,
            },
        );
        true
    }

    pub fn get(&self, job_id: &str) -> Option<JobRecord> {
        let t = self.inner.lock().expect("job table poisoned");
        t.get(job_id).map(|e| e.record.clone())
    }

    pub fn list(&self) -> Vec<JobRecord> {
        let t = self.inner.lock().expect("job table poisoned");
        t.values().map(|e| e.record.clone()).collect()
    }

    fn with_entry<R>(
        &self,
        job_id: &str,
        f: impl FnOnce(&mut Entry) -> Result<R, JobError>,
    ) -> Result<R, JobError> {
        let mut t = self.inner.lock().expect("job table poisoned");
        let e = t
            .get_mut(job_id)
            .ok_or_else(|| JobError::Unknown(job_id.to_string()))?;
        f(e)
    }

    fn transition(e: &mut Entry, to: JobStatus) -> Result<(), JobError> {
        let from = e.record.status;
        if !from.can_become(to) {
            return Err(JobError::Transition {
                id: e.record.job_id.clone(),
                from,
                to,
            });
        }
        e.record.status = to;
        Ok(())
    }

    fn push_event(e: &mut Entry, event: JobEvent) {
        e.events.push(event);
        e.notify.send_replace(e.events.len());
    }

    pub fn start(&self, job_id: &str) -> Result<(), JobError> {
        self.with_entry(job_id, |e| Self::transition(e, JobStatus::Running))
    }

    /// Append trace rows to the record and publish them as one event.
    pub fn append_trace(&self, job_id: &str, rows: Vec<TraceRow>) -> Result<(), JobError> {
        if rows.is_empty() {
            return Ok(());
        }
        self.with_entry(job_id, |e| {
            e.record.trace.extend(rows.iter().cloned());
            Self::push_event(e, JobEvent::Trace { rows });
            Ok(())
        })
    }

    pub fn finish(&self, job_id: &str, result: JobResult) -> Result<(), JobError> {
        self.with_entry(job_id, |e| {
            Self::transition(e, JobStatus::Done)?;
            e.record.result = Some(result.clone());
            Self::push_event(e, JobEvent::Done { result });
            Ok(())
        })
    }

    pub fn fail(&self, job_id: &str, error: String) -> Result<(), JobError> {
        self.with_entry(job_id, |e| {
            Self::transition(e, JobStatus::Failed)?;
            e.record.error = Some(error.clone());
            Self::push_event(e, JobEvent::Failed { error });
            Ok(())
        })
    }

    /// Events from index `from` onwards plus a receiver that changes when
    /// more arrive.
    pub fn events_since(
        &self,
        job_id: &str,
        from: usize,
    ) -> Option<(Vec<JobEvent>, watch::Receiver<usize>)> {
        let t = self.inner.lock().expect("job table poisoned");
        let e = t.get(job_id)?;
        let tail = e
            .events
            .get(from..)
            .map(<[JobEvent]>::to_vec)
            .unwrap_or_default();
        Some((tail, e.notify.subscribe()))
    }
}

/// Buffers accepted trace rows and hands them to `flush` in batches.
pub struct TraceBatcher<F: FnMut(Vec<TraceRow>)> {
    pending: Vec<TraceRow>,
    flush: F,
}

impl<F: FnMut(Vec<TraceRow>)> TraceBatcher<F> {
    pub fn new(flush: F) -> Self {
        Self {
            pending: Vec::new(),
            flush,
        }
    }

    pub fn push(&mut self, row: &TraceRow) {
        let crossed = match self.pending.last() {
            Some(prev) => row.iter / EVENT_EVERY != prev.iter / EVENT_EVERY,
            None => false,
        };
        if crossed {
            self.drain();
        }
        self.pending.push(row.clone());
    }

    pub fn drain(&mut self) {
        if !self.pending.is_empty() {
            (self.flush)(std::mem::take(&mut self.pending));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(iter: usize) -> TraceRow {
        TraceRow {
            iter,
            params: GeomParams([1.0; 7]),
            mse: 1.0 / (iter + 1) as f64,
            latent: None,
        }
    }

    fn result() -> JobResult {
        JobResult {
            mesh_id: "m".into(),
            final_params: GeomParams([1.0; 7]),
            mse: 0.0,
            converged: true,
            iterations: 3,
            extracted_params: None,
            latent: vec![0.0],
        }
    }

    #[test]
    fn transitions_only_move_forward() {
        let t = JobTable::new();
        assert!(t.insert("a", JobKind::Optimize, 0, serde_json::Value::Null));
        assert!(!t.insert("a", JobKind::Optimize, 0, serde_json::Value::Null));
        assert!(t.finish("a", result()).is_ok());
        assert!(t.start("a").is_err());
        assert!(t.fail("a", "x".into()).is_err());
        assert_eq!(t.get("a").unwrap().status, JobStatus::Done);
        assert!(matches!(t.start("nope"), Err(JobError::Unknown(_))));
    }

    #[test]
    fn status_order() {
        use JobStatus::*;
        assert!(Queued.can_become(Running));
        assert!(Running.can_become(Failed));
        assert!(!Running.can_become(Queued));
        assert!(!Done.can_become(Failed));
    }

    #[test]
    fn events_match_record_trace() {
        let t = JobTable::new();
        t.insert("j", JobKind::Optimize, 1, serde_json::Value::Null);
        t.start("j").unwrap();
        let mut b = TraceBatcher::new(|rows| t.append_trace("j", rows).unwrap());
        for i in [0, 1, 2, 5, 9, 10, 11, 25, 26, 40] {
            b.push(&row(i));
        }
        b.drain();
        t.finish("j", result()).unwrap();
        let (events, _) = t.events_since("j", 0).unwrap();
        let streamed: Vec<TraceRow> = events
            .iter()
            .filter_map(|e| match e {
                JobEvent::Trace { rows } => Some(rows.clone()),
                _ => None,
            })
            .flatten()
            .collect();
        assert_eq!(streamed, t.get("j").unwrap().trace);
        // Batches: [0..9], [10, 11], [25, 26], [40], then done.
        assert_eq!(events.len(), 5);
        assert!(events.last().unwrap().is_terminal());
        let (tail, _) = t.events_since("j", 3).unwrap();
        assert_eq!(tail.len(), 2);
    }
}
