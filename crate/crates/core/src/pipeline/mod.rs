//! Training and two-step prediction.
//!
//! Step 1 keeps the instances of a session whose likelihood ratio exceeds
//! `t1`; step 2 keeps those of the survivors whose item is unknown to the
//! popularity table or whose `p * n` exceeds `t2`.

mod bundle;
mod solution;
mod stream;

use std::borrow::Borrow;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract_instances, FeatureConfig};
use crate::ingest::{ItemId, Session, SessionId};
use crate::likelihood::{self, step1_filter, LikelihoodModel, Mode, ModelError};
use crate::popularity::{
    build_popularity, step2_filter, BuyBasis, CategoryBounds, Popularity,
};

pub use bundle::{BundleError, ModelBundle, FORMAT_VERSION};
pub use solution::{parse_solution, write_solution, SolutionError};
pub use stream::{
    stream_predict, StreamDiagnostics, StreamError, StreamPredictor, DEFAULT_IDLE_TIMEOUT_SECS,
};

pub const DEFAULT_T1: f64 = 1.0;
pub const DEFAULT_T2: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("threshold {name} must be a non-negative number, got {value}")]
    Invalid { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    t1: f64,
    t2: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            t1: DEFAULT_T1,
            t2: DEFAULT_T2,
        }
    }
}

impl Thresholds {
    pub fn new(t1: f64, t2: f64) -> Result<Self, ThresholdError> {
        for (name, value) in [("t1", t1), ("t2", t2)] {
            if value.is_nan() || value < 0.0 {
                return Err(ThresholdError::Invalid { name, value });
            }
        }
        Ok(Thresholds { t1, t2 })
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn t2(&self) -> f64 {
        self.t2
    }
}

/// Everything that shapes a trained bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub features: FeatureConfig,
    pub mode: Mode,
    pub alpha: f64,
    pub buy_basis: BuyBasis,
    pub bounds: CategoryBounds,
    pub thresholds: Thresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            features: FeatureConfig::default(),
            mode: Mode::Joint,
            alpha: likelihood::DEFAULT_ALPHA,
            buy_basis: BuyBasis::Events,
            bounds: CategoryBounds::default(),
            thresholds: Thresholds::default(),
        }
    }
}

const TRAIN_CHUNK: usize = 4096;

/// Fits the likelihood model and the popularity table on `sessions`.
pub fn train<S: Borrow<Session> + Sync>(
    sessions: &[S],
    config: &TrainConfig,
) -> Result<ModelBundle, ModelError> {
    let empty = LikelihoodModel::empty(config.features.clone(), config.mode, config.alpha)?;
    let partials: Vec<LikelihoodModel> = sessions
        .par_chunks(TRAIN_CHUNK)
        .map(|chunk| {
            let mut m = empty.clone();
            for s in chunk {
                for inst in extract_instances(s.borrow(), &config.features) {
                    m.observe(&inst);
                }
            }
            m
        })
        .collect();
    let likelihood = likelihood::merge(std::iter::once(&empty).chain(&partials))?;
    likelihood.ensure_both_classes()?;

    let popularity = build_popularity(
        sessions.iter().flat_map(|s| &s.borrow().clicks),
        sessions.iter().flat_map(|s| &s.borrow().buys),
        config.buy_basis,
    );
    Ok(ModelBundle::new(
        likelihood,
        popularity,
        config.thresholds,
        config.bounds,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionPrediction {
    pub session_id: SessionId,
    pub predicted_items: BTreeSet<ItemId>,
}

impl SessionPrediction {
    pub fn session_is_buy(&self) -> bool {
        !self.predicted_items.is_empty()
    }
}

pub fn predict_session(bundle: &ModelBundle, session: &Session) -> SessionPrediction {
    let instances = extract_instances(session, bundle.features());
    let t = bundle.thresholds();
    let selected = step1_filter(bundle.likelihood(), &instances, t.t1());
    let kept = step2_filter(&selected, bundle.popularity(), t.t2());
    SessionPrediction {
        session_id: session.session_id,
        predicted_items: kept.into_iter().map(|i| i.item_id).collect(),
    }
}

/// Output order matches input order.
pub fn predict_batch<S: Borrow<Session> + Sync>(
    bundle: &ModelBundle,
    sessions: &[S],
) -> Vec<SessionPrediction> {
    sessions
        .par_iter()
        .map(|s| predict_session(bundle, s.borrow()))
        .collect()
}

/// Threshold-independent quantities of one instance, so that many
/// threshold pairs can be evaluated against a single fitted bundle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredInstance {
    pub item_id: ItemId,
    pub ratio: f64,
    pub popularity: Option<Popularity>,
    pub clicks: u32,
}

impl ScoredInstance {
    pub fn passes(&self, thresholds: &Thresholds) -> bool {
        self.ratio > thresholds.t1()
            && self
                .popularity
                .is_none_or(|p| p.weighted_exceeds(self.clicks, thresholds.t2()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSession {
    pub session_id: SessionId,
    pub instances: Vec<ScoredInstance>,
}

impl ScoredSession {
    pub fn predict(&self, thresholds: &Thresholds) -> SessionPrediction {
        SessionPrediction {
            session_id: self.session_id,
            predicted_items: self
                .instances
                .iter()
                .filter(|i| i.passes(thresholds))
                .map(|i| i.item_id)
                .collect(),
        }
    }
}

pub fn score_session(bundle: &ModelBundle, session: &Session) -> ScoredSession {
    let instances = extract_instances(session, bundle.features())
        .into_iter()
        .map(|i| ScoredInstance {
            item_id: i.item_id,
            ratio: bundle.likelihood().likelihood_ratio(&i.features).value,
            popularity: bundle.popularity().get(i.item_id),
            clicks: i.clicks,
        })
        .collect();
    ScoredSession {
        session_id: session.session_id,
        instances,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{assemble_sessions, parse_timestamp, BuyEvent, ClickEvent};

    fn click(sid: u64, t: &str, item: u64) -> ClickEvent {
        ClickEvent {
            session_id: sid,
            timestamp: parse_timestamp(t).unwrap(),
            item_id: item,
            category: "0".into(),
        }
    }

    fn buy(sid: u64, item: u64) -> BuyEvent {
        BuyEvent {
            session_id: sid,
            timestamp: parse_timestamp("2014-04-06T11:00:00Z").unwrap(),
            item_id: item,
            price: 10,
            quantity: 1,
        }
    }

    fn two_sessions() -> Vec<Session> {
        let clicks = vec![
            click(1, "2014-04-06T10:00:00Z", 5),
            click(1, "2014-04-06T10:01:00Z", 5),
            click(2, "2014-04-07T09:00:00Z", 6),
        ];
        assemble_sessions(clicks, vec![buy(1, 5)]).into_sessions()
    }

    #[test]
    fn trains_on_two_sessions() {
        let b = train(&two_sessions(), &TrainConfig::default()).unwrap();
        assert!(b.likelihood().total_buy() >= 1);
        assert_eq!(b.popularity().get(5), Some(Popularity { buys: 1, clicks: 2 }));
    }

    #[test]
    fn no_buy_sessions_fail() {
        let mut sessions = two_sessions();
        sessions.remove(0);
        assert!(train(&sessions, &TrainConfig::default()).is_err());
        assert!(train::<Session>(&[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn thresholds_validate() {
        assert!(Thresholds::new(-1.0, 0.0).is_err());
        assert!(Thresholds::new(0.0, f64::NAN).is_err());
        assert!(Thresholds::new(0.0, 0.0).is_ok());
        assert!(Thresholds::new(f64::INFINITY, 1.0).is_ok());
    }

    #[test]
    fn low_ratio_session_predicts_nothing() {
        let sessions = two_sessions();
        let cfg = TrainConfig {
            alpha: 0.0,
            ..TrainConfig::default()
        };
        let b = train(&sessions, &cfg).unwrap();
        let p = predict_session(&b, &sessions[1]);
        assert!(!p.session_is_buy());
        let p = predict_session(&b, &sessions[0]);
        // ratio inf > t1, p*n = 0.5*2 = 1 > 0.5
        assert_eq!(p.predicted_items, BTreeSet::from([5]));
    }

    #[test]
    fn unknown_item_passes_step_two() {
        let sessions = two_sessions();
        let cfg = TrainConfig {
            alpha: 0.0,
            thresholds: Thresholds::new(1.0, 1e9).unwrap(),
            ..TrainConfig::default()
        };
        let b = train(&sessions, &cfg).unwrap();
        // same features as session 1's bought instance, but a never-seen item
        let probe = Session::from_clicks(
            9,
            vec![
                click(9, "2014-04-06T10:00:00Z", 77),
                click(9, "2014-04-06T10:01:00Z", 77),
            ],
        );
        assert_eq!(predict_session(&b, &probe).predicted_items, BTreeSet::from([77]));
        // the known item with the same features is dropped at t2 = 1e9
        assert!(!predict_session(&b, &sessions[0]).session_is_buy());
    }

    #[test]
    fn batch_matches_elementwise() {
        let sessions = two_sessions();
        let b = train(&sessions, &TrainConfig::default()).unwrap();
        assert!(predict_batch::<Session>(&b, &[]).is_empty());
        let doubled = vec![sessions[0].clone(), sessions[0].clone()];
        let out = predict_batch(&b, &doubled);
        assert_eq!(out[0], out[1]);
        let out = predict_batch(&b, &sessions);
        let expect: Vec<_> = sessions.iter().map(|s| predict_session(&b, s)).collect();
        assert_eq!(out, expect);
    }

    #[test]
    fn scored_path_agrees_with_filters() {
        let sessions = two_sessions();
        let b = train(&sessions, &TrainConfig::default()).unwrap();
        for t1 in [0.0, 0.5, 1.0, 3.0] {
            for t2 in [0.0, 0.5, 1.0] {
                let th = Thresholds::new(t1, t2).unwrap();
                let bt = b.clone().with_thresholds(th);
                for s in &sessions {
                    assert_eq!(score_session(&b, s).predict(&th), predict_session(&bt, s));
                }
            }
        }
    }
}
