//! Count-based class-conditional model and the step-1 likelihood-ratio
//! filter.
//!
//! Counts are kept as exact integers. Ratios are evaluated in `f64` from
//! those counts:
//!
//! ```text
//! ratio(k) = ((B(k) + a) / (T_b + a*K)) / ((N(k) + a) / (T_n + a*K))
//! ```
//!
//! where `K` is the number of distinct keys seen in training plus one key
//! reserved for everything unseen. With `a = 0` this is the raw ratio of
//! empirical conditional frequencies.

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureConfig, FeatureKey, FeatureVector, Instance};
use crate::ingest::Label;

pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training data has no {0:?} instances")]
    MissingClass(Label),
    #[error("smoothing alpha must be finite and >= 0, got {0}")]
    InvalidAlpha(f64),
    #[error("cannot merge models: {0}")]
    ConfigMismatch(String),
    #[error("no models to merge")]
    NothingToMerge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One table over the full feature tuple.
    #[default]
    Joint,
    /// Product of per-feature marginal ratios.
    Independent,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Mode::Joint),
            "independent" => Ok(Mode::Independent),
            other => Err(format!("unknown mode {other:?} (expected joint|independent)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassCounts {
    pub buy: u64,
    pub nonbuy: u64,
}

impl ClassCounts {
    fn add(&mut self, label: Label) {
        match label {
            Label::Buy => self.buy += 1,
            Label::NonBuy => self.nonbuy += 1,
        }
    }

    fn absorb(&mut self, other: ClassCounts) {
        self.buy += other.buy;
        self.nonbuy += other.nonbuy;
    }
}

/// A likelihood ratio. `unseen` marks keys with no training evidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LikelihoodRatio {
    pub value: f64,
    pub unseen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodModel {
    mode: Mode,
    alpha: f64,
    features: FeatureConfig,
    total_buy: u64,
    total_nonbuy: u64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    joint: BTreeMap<FeatureKey, ClassCounts>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    marginals: BTreeMap<Feature, BTreeMap<u32, ClassCounts>>,
}

fn check_alpha(alpha: f64) -> Result<(), ModelError> {
    if alpha.is_finite() && alpha >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidAlpha(alpha))
    }
}

impl LikelihoodModel {
    /// A model with no counts. Identity element for [`merge`].
    pub fn empty(features: FeatureConfig, mode: Mode, alpha: f64) -> Result<Self, ModelError> {
        check_alpha(alpha)?;
        Ok(LikelihoodModel {
            mode,
            alpha,
            features,
            total_buy: 0,
            total_nonbuy: 0,
            joint: BTreeMap::new(),
            marginals: BTreeMap::new(),
        })
    }

    pub fn observe(&mut self, instance: &Instance) {
        match self.mode {
            Mode::Joint => {
                let key = self.features.key(&instance.features);
                self.joint.entry(key).or_default().add(instance.label);
            }
            Mode::Independent => {
                for &f in self.features.enabled() {
                    self.marginals
                        .entry(f)
                        .or_default()
                        .entry(instance.features.get(f))
                        .or_default()
                        .add(instance.label);
                }
            }
        }
        match instance.label {
            Label::Buy => self.total_buy += 1,
            Label::NonBuy => self.total_nonbuy += 1,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn features(&self) -> &FeatureConfig {
        &self.features
    }

    pub fn total_buy(&self) -> u64 {
        self.total_buy
    }

    pub fn total_nonbuy(&self) -> u64 {
        self.total_nonbuy
    }

    /// Joint-mode table, keyed by packed feature key.
    pub fn joint_counts(&self) -> &BTreeMap<FeatureKey, ClassCounts> {
        &self.joint
    }

    /// Independent-mode table for one feature.
    pub fn marginal_counts(&self, feature: Feature) -> Option<&BTreeMap<u32, ClassCounts>> {
        self.marginals.get(&feature)
    }

    pub fn counts(&self, key: FeatureKey) -> ClassCounts {
        self.joint.get(&key).copied().unwrap_or_default()
    }

    pub fn likelihood_ratio(&self, fv: &FeatureVector) -> LikelihoodRatio {
        match self.mode {
            Mode::Joint => {
                let c = self.counts(self.features.key(fv));
                self.smoothed_ratio(c, self.joint.len() as u64 + 1)
            }
            Mode::Independent => {
                let mut value = 1.0;
                let mut unseen = false;
                let (mut zero, mut inf) = (false, false);
                for &f in self.features.enabled() {
                    let table = self.marginals.get(&f);
                    let c = table
                        .and_then(|t| t.get(&fv.get(f)))
                        .copied()
                        .unwrap_or_default();
                    let k = table.map_or(0, |t| t.len() as u64) + 1;
                    let r = self.smoothed_ratio(c, k);
                    unseen |= r.unseen;
                    if r.value == 0.0 {
                        zero = true;
                    } else if r.value.is_infinite() {
                        inf = true;
                    } else {
                        value *= r.value;
                    }
                }
                match (zero, inf) {
                    // contradictory unsmoothed evidence carries no information
                    (true, true) => LikelihoodRatio {
                        value: 1.0,
                        unseen: true,
                    },
                    (true, false) => LikelihoodRatio { value: 0.0, unseen },
                    (false, true) => LikelihoodRatio {
                        value: f64::INFINITY,
                        unseen,
                    },
                    (false, false) => LikelihoodRatio { value, unseen },
                }
            }
        }
    }

    fn smoothed_ratio(&self, c: ClassCounts, k: u64) -> LikelihoodRatio {
        let unseen = c.buy == 0 && c.nonbuy == 0;
        let a = self.alpha;
        if a == 0.0 {
            if unseen {
                return LikelihoodRatio {
                    value: 1.0,
                    unseen,
                };
            }
            if c.nonbuy == 0 {
                return LikelihoodRatio {
                    value: f64::INFINITY,
                    unseen,
                };
            }
            if c.buy == 0 {
                return LikelihoodRatio { value: 0.0, unseen };
            }
            let value = (c.buy as f64 * self.total_nonbuy as f64)
                / (c.nonbuy as f64 * self.total_buy as f64);
            return LikelihoodRatio { value, unseen };
        }
        let k = k as f64;
        let num = (c.buy as f64 + a) * (self.total_nonbuy as f64 + a * k);
        let den = (c.nonbuy as f64 + a) * (self.total_buy as f64 + a * k);
        LikelihoodRatio {
            value: num / den,
            unseen,
        }
    }

    fn compatible(&self, other: &LikelihoodModel) -> Result<(), ModelError> {
        if self.mode != other.mode {
            return Err(ModelError::ConfigMismatch(format!(
                "mode {:?} vs {:?}",
                self.mode, other.mode
            )));
        }
        if self.alpha.to_bits() != other.alpha.to_bits() {
            return Err(ModelError::ConfigMismatch(format!(
                "alpha {} vs {}",
                self.alpha, other.alpha
            )));
        }
        if self.features != other.features {
            return Err(ModelError::ConfigMismatch(format!(
                "features {} vs {}",
                self.features.canonical(),
                other.features.canonical()
            )));
        }
        Ok(())
    }

    pub fn merge_from(&mut self, other: &LikelihoodModel) -> Result<(), ModelError> {
        self.compatible(other)?;
        for (k, c) in &other.joint {
            self.joint.entry(*k).or_default().absorb(*c);
        }
        for (f, table) in &other.marginals {
            let mine = self.marginals.entry(*f).or_default();
            for (v, c) in table {
                mine.entry(*v).or_default().absorb(*c);
            }
        }
        self.total_buy += other.total_buy;
        self.total_nonbuy += other.total_nonbuy;
        Ok(())
    }

    /// Fails unless both classes have at least one instance.
    pub fn ensure_both_classes(&self) -> Result<(), ModelError> {
        if self.total_buy == 0 {
            Err(ModelError::MissingClass(Label::Buy))
        } else if self.total_nonbuy == 0 {
            Err(ModelError::MissingClass(Label::NonBuy))
        } else {
            Ok(())
        }
    }
}

pub fn fit<'a, I>(
    instances: I,
    features: &FeatureConfig,
    mode: Mode,
    alpha: f64,
) -> Result<LikelihoodModel, ModelError>
where
    I: IntoIterator<Item = &'a Instance>,
{
    let mut model = LikelihoodModel::empty(features.clone(), mode, alpha)?;
    for inst in instances {
        model.observe(inst);
    }
    model.ensure_both_classes()?;
    Ok(model)
}

/// Elementwise sum of compatible models.
pub fn merge<'a, I>(models: I) -> Result<LikelihoodModel, ModelError>
where
    I: IntoIterator<Item = &'a LikelihoodModel>,
{
    let mut iter = models.into_iter();
    let mut acc = iter.next().ok_or(ModelError::NothingToMerge)?.clone();
    for m in iter {
        acc.merge_from(m)?;
    }
    Ok(acc)
}

/// Instances whose likelihood ratio strictly exceeds `t1`, in input order.
pub fn step1_filter(model: &LikelihoodModel, instances: &[Instance], t1: f64) -> Vec<Instance> {
    instances
        .iter()
        .filter(|i| model.likelihood_ratio(&i.features).value > t1)
        .copied()
        .collect()
}
