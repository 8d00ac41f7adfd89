//! Prediction scoring, cross-validation and threshold sweeps.

mod cv;

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{Session, SessionId};
use crate::likelihood::ModelError;
use crate::pipeline::{SessionPrediction, ThresholdError};

pub use cv::{
    fold_assignment, holdout_split, kfold, threshold_sweep, write_cv_csv, write_sweep_csv,
    Aggregate, CvReport, FoldReport, HoldoutSplit, Summary, SweepCell,
};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("predictions and truth disagree on session ids (missing: {missing:?}, unexpected: {unexpected:?})")]
    IdMismatch {
        missing: Vec<SessionId>,
        unexpected: Vec<SessionId>,
    },
    #[error("session {0} predicted more than once")]
    DuplicatePrediction(SessionId),
    #[error("k must satisfy 2 <= k <= {n} sessions, got {k}")]
    BadK { k: usize, n: usize },
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("threshold grids must be non-empty")]
    EmptyGrid,
    #[error("fold {fold}: {source}")]
    Train { fold: usize, source: ModelError },
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
}

/// A 2x2 table of predicted vs actual.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// `TP / (TP + FN) * 100`; 0 when there are no positives.
    pub fn tp_rate(&self) -> f64 {
        percent(self.tp, self.tp + self.fn_)
    }

    /// `FP / (FP + TN) * 100`; 0 when there are no negatives.
    pub fn fp_rate(&self) -> f64 {
        percent(self.fp, self.fp + self.tn)
    }
}

fn percent(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64 * 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub score: f64,
    /// Predicted-buy vs actual-buy per session.
    pub session: Confusion,
    /// Predicted vs bought per clicked (session, item) pair.
    pub item: Confusion,
    /// Bought items the session never clicked; no predictor can reach them.
    pub unreachable_positives: u64,
    pub n_test_sessions: u64,
    pub n_buy_sessions: u64,
}

impl EvalReport {
    pub fn tp_rate_session(&self) -> f64 {
        self.session.tp_rate()
    }

    pub fn fp_rate_session(&self) -> f64 {
        self.session.fp_rate()
    }

    pub fn tp_rate_item(&self) -> f64 {
        self.item.tp_rate()
    }

    pub fn fp_rate_item(&self) -> f64 {
        self.item.fp_rate()
    }
}

fn index_predictions(
    preds: &[SessionPrediction],
) -> Result<BTreeMap<SessionId, &SessionPrediction>, EvalError> {
    let mut by_id = BTreeMap::new();
    for p in preds {
        if by_id.insert(p.session_id, p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.session_id));
        }
    }
    Ok(by_id)
}

/// Session- and item-level confusion tables plus the challenge score.
/// `preds` must cover exactly the sessions in `truth`.
pub fn confusion<S: Borrow<Session>>(
    preds: &[SessionPrediction],
    truth: &[S],
) -> Result<EvalReport, EvalError> {
    let by_id = index_predictions(preds)?;
    let truth_ids: BTreeSet<SessionId> = truth.iter().map(|s| s.borrow().session_id).collect();
    let missing: Vec<SessionId> = truth_ids
        .iter()
        .filter(|id| !by_id.contains_key(id))
        .copied()
        .collect();
    let unexpected: Vec<SessionId> = by_id
        .keys()
        .filter(|id| !truth_ids.contains(id))
        .copied()
        .collect();
    if !missing.is_empty() || !unexpected.is_empty() {
        return Err(EvalError::IdMismatch {
            missing,
            unexpected,
        });
    }

    let mut session = Confusion::default();
    let mut item = Confusion::default();
    let mut unreachable = 0;
    let mut n_buy = 0;
    for s in truth {
        let s = s.borrow();
        let pred = by_id[&s.session_id];
        let actual_buy = !s.bought_items.is_empty();
        n_buy += u64::from(actual_buy);
        session.record(pred.session_is_buy(), actual_buy);
        let clicked = s.clicked_items();
        for it in &clicked {
            item.record(
                pred.predicted_items.contains(it),
                s.bought_items.contains(it),
            );
        }
        unreachable += s.bought_items.difference(&clicked).count() as u64;
    }
    Ok(EvalReport {
        score: recsys_score(preds, truth)?,
        session,
        item,
        unreachable_positives: unreachable,
        n_test_sessions: truth.len() as u64,
        n_buy_sessions: n_buy,
    })
}

/// RecSys Challenge 2015 score.
///
/// For every session predicted as a buy: `+|S_b|/|S| + jaccard(A, B)` if it
/// really was a buy session, `-|S_b|/|S|` otherwise. Sessions without
/// predicted items contribute nothing, so `preds` may be a sparse solution.
pub fn recsys_score<S: Borrow<Session>>(
    preds: &[SessionPrediction],
    truth: &[S],
) -> Result<f64, EvalError> {
    let by_truth: BTreeMap<SessionId, &Session> = truth
        .iter()
        .map(|s| (s.borrow().session_id, s.borrow()))
        .collect();
    let n_buy = by_truth
        .values()
        .filter(|s| !s.bought_items.is_empty())
        .count();
    let by_id = index_predictions(preds)?;
    let unexpected: Vec<SessionId> = by_id
        .keys()
        .filter(|id| !by_truth.contains_key(id))
        .copied()
        .collect();
    if !unexpected.is_empty() {
        return Err(EvalError::IdMismatch {
            missing: Vec::new(),
            unexpected,
        });
    }
    if by_truth.is_empty() {
        return Ok(0.0);
    }
    let buy_share = n_buy as f64 / by_truth.len() as f64;
    let mut score = 0.0;
    for (sid, pred) in by_id {
        if !pred.session_is_buy() {
            continue;
        }
        let bought = &by_truth[&sid].bought_items;
        if bought.is_empty() {
            score -= buy_share;
        } else {
            let inter = pred.predicted_items.intersection(bought).count();
            let union = pred.predicted_items.union(bought).count();
            score += buy_share + inter as f64 / union as f64;
        }
    }
    Ok(score)
}
