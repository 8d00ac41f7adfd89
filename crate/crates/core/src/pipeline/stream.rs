//! Event-time streaming prediction.
//!
//! A session stays open until the stream clock (the largest timestamp seen
//! so far) passes its last click by more than the idle timeout, or the
//! stream ends. Its prediction is then exactly what [`predict_session`]
//! returns for the accumulated clicks.

use std::collections::{BTreeSet, HashMap, HashSet};

use chrono::TimeDelta;
use thiserror::Error;

use super::{predict_session, ModelBundle, SessionPrediction};
use crate::ingest::{ClickEvent, Session, SessionId, Timestamp};

pub const DEFAULT_IDLE_TIMEOUT_SECS: f64 = 30.0 * 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum StreamError {
    #[error("idle timeout must be a positive number of seconds, got {0}")]
    BadTimeout(f64),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamDiagnostics {
    pub events: u64,
    /// Events for sessions that were already finalized; dropped.
    pub late_events: u64,
    /// Events older than their open session's latest click; re-sorted in.
    pub reordered_events: u64,
    pub sessions_emitted: u64,
}

pub struct StreamPredictor<'a> {
    bundle: &'a ModelBundle,
    timeout: TimeDelta,
    open: HashMap<SessionId, Vec<ClickEvent>>,
    // (last click time, session) for every open session
    expiry: BTreeSet<(Timestamp, SessionId)>,
    finalized: HashSet<SessionId>,
    clock: Option<Timestamp>,
    diagnostics: StreamDiagnostics,
}

impl<'a> StreamPredictor<'a> {
    pub fn new(bundle: &'a ModelBundle, idle_timeout_secs: f64) -> Result<Self, StreamError> {
        if !(idle_timeout_secs.is_finite() && idle_timeout_secs > 0.0) {
            return Err(StreamError::BadTimeout(idle_timeout_secs));
        }
        let millis = (idle_timeout_secs * 1000.0).round().max(1.0) as i64;
        Ok(StreamPredictor {
            bundle,
            timeout: TimeDelta::milliseconds(millis),
            open: HashMap::new(),
            expiry: BTreeSet::new(),
            finalized: HashSet::new(),
            clock: None,
            diagnostics: StreamDiagnostics::default(),
        })
    }

    pub fn diagnostics(&self) -> StreamDiagnostics {
        self.diagnostics
    }

    pub fn open_sessions(&self) -> usize {
        self.open.len()
    }

    /// Feeds one click; returns the predictions of sessions it closed.
    pub fn push(&mut self, event: ClickEvent) -> Vec<SessionPrediction> {
        self.diagnostics.events += 1;
        let sid = event.session_id;
        if self.finalized.contains(&sid) {
            self.diagnostics.late_events += 1;
            return Vec::new();
        }
        let ts = event.timestamp;
        let clicks = self.open.entry(sid).or_default();
        let last = match clicks.last() {
            Some(prev) => {
                self.expiry.remove(&(prev.timestamp, sid));
                if ts < prev.timestamp {
                    self.diagnostics.reordered_events += 1;
                    let at = clicks.partition_point(|c| c.timestamp <= ts);
                    clicks.insert(at, event);
                } else {
                    clicks.push(event);
                }
                clicks.last().map(|c| c.timestamp).unwrap_or(ts)
            }
            None => {
                clicks.push(event);
                ts
            }
        };
        self.expiry.insert((last, sid));
        self.clock = Some(self.clock.map_or(ts, |c| c.max(ts)));
        self.expire()
    }

    fn expire(&mut self) -> Vec<SessionPrediction> {
        let Some(clock) = self.clock else {
            return Vec::new();
        };
        let mut out = Vec::new();
        while let Some(&(last, sid)) = self.expiry.first() {
            if last + self.timeout >= clock {
                break;
            }
            self.expiry.pop_first();
            out.push(self.finalize(sid));
        }
        out
    }

    fn finalize(&mut self, sid: SessionId) -> SessionPrediction {
        let clicks = self.open.remove(&sid).unwrap_or_default();
        self.finalized.insert(sid);
        self.diagnostics.sessions_emitted += 1;
        predict_session(self.bundle, &Session::from_clicks(sid, clicks))
    }

    /// Closes every open session, oldest activity first.
    pub fn finish(&mut self) -> Vec<SessionPrediction> {
        let mut out = Vec::with_capacity(self.expiry.len());
        while let Some((_, sid)) = self.expiry.pop_first() {
            out.push(self.finalize(sid));
        }
        out
    }
}

pub fn stream_predict<I>(
    bundle: &ModelBundle,
    events: I,
    idle_timeout_secs: f64,
) -> Result<(Vec<SessionPrediction>, StreamDiagnostics), StreamError>
where
    I: IntoIterator<Item = ClickEvent>,
{
    let mut predictor = StreamPredictor::new(bundle, idle_timeout_secs)?;
    let mut out = Vec::new();
    for ev in events {
        out.extend(predictor.push(ev));
    }
    out.extend(predictor.finish());
    Ok((out, predictor.diagnostics()))
}
