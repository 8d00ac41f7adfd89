//! Per-(session, item) feature extraction and binning.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Timelike};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ingest::{ItemId, Label, Session, SessionId};

pub const DEFAULT_CLICK_CAP: u32 = 10;
pub const DEFAULT_DURATION_CAP: u32 = 30;
const MAX_CAP: u32 = u16::MAX as u32;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureConfigError {
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("{name} must be between 1 and {MAX_CAP}, got {value}")]
    BadCap { name: &'static str, value: u32 },
    #[error("at least one feature must be enabled")]
    NoFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    HourOfDay,
    DayOfMonth,
    DayOfWeek,
    MonthOfYear,
    ItemClicks,
    Duration,
}

impl Feature {
    pub const ALL: [Feature; 6] = [
        Feature::HourOfDay,
        Feature::DayOfMonth,
        Feature::DayOfWeek,
        Feature::MonthOfYear,
        Feature::ItemClicks,
        Feature::Duration,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::HourOfDay => "hour_of_day",
            Feature::DayOfMonth => "day_of_month",
            Feature::DayOfWeek => "day_of_week",
            Feature::MonthOfYear => "month_of_year",
            Feature::ItemClicks => "item_clicks",
            Feature::Duration => "duration",
        }
    }

    /// Bit offset and width inside a packed [`FeatureKey`].
    fn slot(self) -> (u32, u32) {
        match self {
            Feature::HourOfDay => (0, 5),
            Feature::DayOfMonth => (5, 5),
            Feature::DayOfWeek => (10, 3),
            Feature::MonthOfYear => (13, 4),
            Feature::ItemClicks => (17, 16),
            Feature::Duration => (33, 16),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = FeatureConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| FeatureConfigError::UnknownFeature(s.to_string()))
    }
}

/// Which features key the model, and the bin caps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    enabled: Vec<Feature>,
    click_cap: u32,
    duration_cap: u32,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            enabled: Feature::ALL.to_vec(),
            click_cap: DEFAULT_CLICK_CAP,
            duration_cap: DEFAULT_DURATION_CAP,
        }
    }
}

impl FeatureConfig {
    pub fn new(
        enabled: impl IntoIterator<Item = Feature>,
        click_cap: u32,
        duration_cap: u32,
    ) -> Result<Self, FeatureConfigError> {
        let mut enabled: Vec<Feature> = enabled.into_iter().collect();
        enabled.sort();
        enabled.dedup();
        if enabled.is_empty() {
            return Err(FeatureConfigError::NoFeatures);
        }
        for (name, value) in [("click_cap", click_cap), ("duration_cap", duration_cap)] {
            if value == 0 || value > MAX_CAP {
                return Err(FeatureConfigError::BadCap { name, value });
            }
        }
        Ok(FeatureConfig {
            enabled,
            click_cap,
            duration_cap,
        })
    }

    pub fn enabled(&self) -> &[Feature] {
        &self.enabled
    }

    pub fn click_cap(&self) -> u32 {
        self.click_cap
    }

    pub fn duration_cap(&self) -> u32 {
        self.duration_cap
    }

    /// Canonical text form; the checksum is computed over this string.
    pub fn canonical(&self) -> String {
        let names: Vec<&str> = self.enabled.iter().map(|f| f.name()).collect();
        format!(
            "features={};click_cap={};duration_cap={}",
            names.join(","),
            self.click_cap,
            self.duration_cap
        )
    }

    pub fn checksum(&self) -> String {
        Sha256::digest(self.canonical().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn key(&self, fv: &FeatureVector) -> FeatureKey {
        let mut packed = 0u64;
        for &f in &self.enabled {
            let (shift, _) = f.slot();
            packed |= u64::from(fv.get(f)) << shift;
        }
        FeatureKey(packed)
    }
}

/// Binned features of one (session, item) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureVector {
    pub hour_of_day: u8,
    pub day_of_month: u8,
    /// 0 = Sunday.
    pub day_of_week: u8,
    pub month_of_year: u8,
    pub item_click_count: u32,
    pub duration_bin: u32,
}

impl FeatureVector {
    pub fn get(&self, f: Feature) -> u32 {
        match f {
            Feature::HourOfDay => self.hour_of_day.into(),
            Feature::DayOfMonth => self.day_of_month.into(),
            Feature::DayOfWeek => self.day_of_week.into(),
            Feature::MonthOfYear => self.month_of_year.into(),
            Feature::ItemClicks => self.item_click_count,
            Feature::Duration => self.duration_bin,
        }
    }
}

/// Packed, process-independent index of a binned feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureKey(pub u64);

/// Key over the enabled features of the default configuration.
pub fn feature_key(fv: &FeatureVector) -> FeatureKey {
    FeatureConfig::default().key(fv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instance {
    pub session_id: SessionId,
    pub item_id: ItemId,
    pub features: FeatureVector,
    /// Uncapped clicks on this item in this session.
    pub clicks: u32,
    pub label: Label,
}

/// First-to-last click span in minutes.
pub fn session_duration_minutes(session: &Session) -> f64 {
    session_duration_millis(session) as f64 / 60_000.0
}

fn session_duration_millis(session: &Session) -> i64 {
    match (session.clicks.first(), session.clicks.last()) {
        (Some(first), Some(last)) => (last.timestamp - first.timestamp).num_milliseconds().max(0),
        _ => 0,
    }
}

/// One instance per distinct clicked item, in order of first click.
pub fn extract_instances(session: &Session, config: &FeatureConfig) -> Vec<Instance> {
    let Some(first) = session.clicks.first() else {
        return Vec::new();
    };
    let start = first.timestamp;
    let minutes = (session_duration_millis(session) / 60_000) as u64;
    let duration_bin = minutes.min(u64::from(config.duration_cap)) as u32;

    let mut order: Vec<ItemId> = Vec::new();
    let mut counts: BTreeMap<ItemId, u32> = BTreeMap::new();
    for c in &session.clicks {
        let n = counts.entry(c.item_id).or_insert(0);
        if *n == 0 {
            order.push(c.item_id);
        }
        *n += 1;
    }

    order
        .into_iter()
        .map(|item_id| {
            let clicks = counts[&item_id];
            Instance {
                session_id: session.session_id,
                item_id,
                features: FeatureVector {
                    hour_of_day: start.hour() as u8,
                    day_of_month: start.day() as u8,
                    day_of_week: start.weekday().num_days_from_sunday() as u8,
                    month_of_year: start.month() as u8,
                    item_click_count: clicks.min(config.click_cap),
                    duration_bin,
                },
                clicks,
                label: if session.bought_items.contains(&item_id) {
                    Label::Buy
                } else {
                    Label::NonBuy
                },
            }
        })
        .collect()
}
