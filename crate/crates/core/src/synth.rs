//! Seeded synthetic click/buy logs with a planted ground truth.
//!
//! The generator plants a session-level buy intent first and item-level
//! purchases second:
//!
//! 1. Each session draws a start time and a buy intent with probability
//!    `q * dow_factor * hour_factor`. The factors are normalized to mean one
//!    over the sampled calendar, so the expected intent rate is exactly `q`.
//! 2. Intent and non-intent sessions draw their length and their items from
//!    different distributions: intent sessions are longer and favour items
//!    with high planted popularity.
//! 3. In an intent session every click converts into a buy event with
//!    probability `r`.
//!
//! `q` and `r` (and the intent-session item distribution) are solved so
//! that the realized buy-session fraction equals `buy_session_fraction` and
//! every item's expected buys-per-click equals its planted popularity.

use std::io::Write;

use chrono::{Datelike, NaiveDate, TimeDelta, TimeZone, Utc};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp;
use serde::Serialize;
use thiserror::Error;

use crate::ingest::{
    assemble_sessions, write_buy, write_click, BuyEvent, ClickEvent, ItemId, Session, SessionId,
    Timestamp,
};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Invalid(String),
    #[error("infeasible synthetic config: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlantedPopularity {
    /// Each item draws its popularity uniformly from `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// One value per item, most-clicked item first.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sessions: usize,
    pub n_items: usize,
    pub base_item_id: ItemId,
    pub popularity: PlantedPopularity,
    /// Click share of the item at rank `i` (from 1) is proportional to `i^-s`.
    pub item_zipf_exponent: f64,
    pub buy_session_fraction: f64,
    pub mean_clicks_buy: f64,
    pub mean_clicks_nonbuy: f64,
    pub max_clicks: usize,
    /// Chance that a click revisits an item already clicked in the session.
    pub revisit_prob: f64,
    pub mean_gap_secs: f64,
    pub max_gap_secs: f64,
    /// Multiplicative buy-intent factors, Sunday first.
    pub dow_factors: [f64; 7],
    pub hour_factors: [f64; 24],
    pub start_date: NaiveDate,
    pub days: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let mut hour_factors = [1.0; 24];
        for (h, f) in hour_factors.iter_mut().enumerate() {
            *f = match h {
                0..=6 => 0.6,
                18..=22 => 1.3,
                _ => 1.0,
            };
        }
        SynthConfig {
            seed: 42,
            n_sessions: 10_000,
            n_items: 500,
            base_item_id: 214_500_000,
            popularity: PlantedPopularity::Uniform {
                low: 0.005,
                high: 0.08,
            },
            item_zipf_exponent: 1.0,
            buy_session_fraction: 0.05,
            mean_clicks_buy: 6.0,
            mean_clicks_nonbuy: 3.0,
            max_clicks: 60,
            revisit_prob: 0.35,
            mean_gap_secs: 60.0,
            max_gap_secs: 600.0,
            dow_factors: [1.3, 1.0, 1.0, 1.0, 0.8, 0.95, 1.1],
            hour_factors,
            start_date: NaiveDate::from_ymd_opt(2014, 4, 1).expect("valid date"),
            days: 183,
        }
    }
}

/// One row per (session, clicked item).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestRow {
    pub session_id: SessionId,
    pub item_id: ItemId,
    pub clicks: u32,
    /// Planted session-level buy intent.
    pub intent: bool,
    pub session_buy_prob: f64,
    /// Probability, given the session's intent and clicks, that the item is
    /// bought at least once.
    pub planted_buy_prob: f64,
    pub bought: bool,
}

/// Quantities solved from the config before sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedModel {
    pub item_ids: Vec<ItemId>,
    pub popularity: Vec<f64>,
    pub intent_rate: f64,
    pub conversion_prob: f64,
}

impl PlantedModel {
    pub fn popularity_of(&self, item: ItemId) -> Option<f64> {
        self.item_ids
            .iter()
            .position(|&i| i == item)
            .map(|i| self.popularity[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Globally ordered by timestamp.
    pub clicks: Vec<ClickEvent>,
    pub buys: Vec<BuyEvent>,
    pub manifest: Vec<ManifestRow>,
    pub planted: Option<PlantedModel>,
}

impl Dataset {
    pub fn sessions(&self) -> Vec<Session> {
        assemble_sessions(self.clicks.iter().cloned(), self.buys.iter().cloned()).into_sessions()
    }

    pub fn write_clicks<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for c in &self.clicks {
            write_click(out, c)?;
        }
        Ok(())
    }

    pub fn write_buys<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for b in &self.buys {
            write_buy(out, b)?;
        }
        Ok(())
    }

    pub fn write_manifest<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.manifest {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn invalid(msg: impl Into<String>) -> SynthError {
    SynthError::Invalid(msg.into())
}

fn check_unit(name: &str, v: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(invalid(format!("{name} must lie in [0, 1], got {v}")))
    }
}

pub fn validate(cfg: &SynthConfig) -> Result<(), SynthError> {
    if cfg.n_items == 0 {
        return Err(invalid("n_items must be at least 1"));
    }
    if cfg.days == 0 {
        return Err(invalid("days must be at least 1"));
    }
    if cfg.max_clicks == 0 {
        return Err(invalid("max_clicks must be at least 1"));
    }
    if cfg.base_item_id == 0 {
        return Err(invalid("base_item_id must be at least 1"));
    }
    let f = cfg.buy_session_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(invalid(format!(
            "buy_session_fraction must lie in (0, 1), got {f}"
        )));
    }
    check_unit("revisit_prob", cfg.revisit_prob)?;
    for (name, m) in [
        ("mean_clicks_buy", cfg.mean_clicks_buy),
        ("mean_clicks_nonbuy", cfg.mean_clicks_nonbuy),
    ] {
        if !(m >= 1.0 && m.is_finite()) {
            return Err(invalid(format!("{name} must be >= 1, got {m}")));
        }
    }
    if !(cfg.mean_gap_secs > 0.0 && cfg.max_gap_secs > 0.0) {
        return Err(invalid("click gaps must be positive"));
    }
    if !(cfg.item_zipf_exponent >= 0.0 && cfg.item_zipf_exponent.is_finite()) {
        return Err(invalid("item_zipf_exponent must be >= 0"));
    }
    let factors_ok = |fs: &[f64]| fs.iter().all(|x| *x >= 0.0 && x.is_finite()) && fs.iter().any(|x| *x > 0.0);
    if !factors_ok(&cfg.dow_factors) || !factors_ok(&cfg.hour_factors) {
        return Err(invalid("calendar factors must be non-negative and not all zero"));
    }
    match &cfg.popularity {
        PlantedPopularity::Uniform { low, high } => {
            check_unit("popularity low", *low)?;
            check_unit("popularity high", *high)?;
            if low > high {
                return Err(invalid("popularity low must not exceed high"));
            }
        }
        PlantedPopularity::Explicit(v) => {
            if v.len() != cfg.n_items {
                return Err(invalid(format!(
                    "{} planted popularities for {} items",
                    v.len(),
                    cfg.n_items
                )));
            }
            for p in v {
                check_unit("planted popularity", *p)?;
            }
        }
    }
    Ok(())
}

/// Pmf of `1 + Poisson(mean - 1)` truncated to `1..=max`; index 0 is length 1.
fn length_pmf(mean: f64, max: usize) -> Vec<f64> {
    let lambda = mean - 1.0;
    let mut pmf = Vec::with_capacity(max);
    if lambda == 0.0 {
        pmf.push(1.0);
        pmf.resize(max, 0.0);
        return pmf;
    }
    let mut log_p = -lambda;
    for k in 0..max {
        if k > 0 {
            log_p += lambda.ln() - (k as f64).ln();
        }
        pmf.push(log_p.exp());
    }
    let total: f64 = pmf.iter().sum();
    pmf.iter_mut().for_each(|p| *p /= total);
    pmf
}

fn expect<F: Fn(usize) -> f64>(pmf: &[f64], f: F) -> f64 {
    pmf.iter().enumerate().map(|(i, p)| p * f(i + 1)).sum()
}

struct Solved {
    intent_rate: f64,
    conversion_prob: f64,
    // click distribution of intent sessions
    intent_weights: Vec<f64>,
}

/// Finds the conversion probability `r` that balances the click mass of
/// intent sessions against the planted popularities.
fn solve(
    popularity: &[f64],
    plain_weights: &[f64],
    pmf_buy: &[f64],
    pmf_nonbuy: &[f64],
    f: f64,
) -> Result<Solved, SynthError> {
    let p_max = popularity.iter().cloned().fold(0.0, f64::max);
    if p_max <= 0.0 {
        return Err(SynthError::Infeasible(
            "at least one item needs a positive planted popularity".into(),
        ));
    }
    if p_max >= 1.0 {
        return Err(SynthError::Infeasible(
            "planted popularity must stay below 1".into(),
        ));
    }
    let mean_buy = expect(pmf_buy, |l| l as f64);
    let mean_nonbuy = expect(pmf_nonbuy, |l| l as f64);
    let intent = |r: f64| f / expect(pmf_buy, |l| 1.0 - (1.0 - r).powi(l as i32));
    // expected intent clicks / non-intent clicks
    let click_ratio = |r: f64| {
        let q = intent(r);
        q * mean_buy / ((1.0 - q) * mean_nonbuy)
    };
    let demand = |r: f64| {
        popularity
            .iter()
            .zip(plain_weights)
            .map(|(p, u)| u * p / (r - p))
            .sum::<f64>()
    };
    if intent(1.0) >= 1.0 {
        return Err(SynthError::Infeasible(
            "buy_session_fraction too high for the intent-session length".into(),
        ));
    }
    if demand(1.0) > click_ratio(1.0) {
        return Err(SynthError::Infeasible(format!(
            "planted popularities are too high for buy_session_fraction {f}"
        )));
    }
    let (mut lo, mut hi) = (p_max, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let q = intent(mid);
        if q < 1.0 && demand(mid) > click_ratio(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = hi;
    let ratio = click_ratio(r);
    let intent_weights = popularity
        .iter()
        .zip(plain_weights)
        .map(|(p, u)| u * p / (r - p) / ratio)
        .collect();
    Ok(Solved {
        intent_rate: intent(r),
        conversion_prob: r,
        intent_weights,
    })
}

fn weighted(weights: &[f64]) -> Result<WeightedIndex<f64>, SynthError> {
    WeightedIndex::new(weights).map_err(|e| SynthError::Infeasible(e.to_string()))
}

fn category_of(idx: usize) -> &'static str {
    const TOKENS: [&str; 4] = ["0", "0", "S", "3"];
    TOKENS[idx % TOKENS.len()]
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    validate(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let popularity: Vec<f64> = match &cfg.popularity {
        PlantedPopularity::Explicit(v) => v.clone(),
        PlantedPopularity::Uniform { low, high } => (0..cfg.n_items)
            .map(|_| low + (high - low) * rng.random::<f64>())
            .collect(),
    };
    let plain_weights: Vec<f64> = {
        let raw: Vec<f64> = (1..=cfg.n_items)
            .map(|rank| (rank as f64).powf(-cfg.item_zipf_exponent))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    };
    let pmf_buy = length_pmf(cfg.mean_clicks_buy, cfg.max_clicks);
    let pmf_nonbuy = length_pmf(cfg.mean_clicks_nonbuy, cfg.max_clicks);
    let solved = solve(
        &popularity,
        &plain_weights,
        &pmf_buy,
        &pmf_nonbuy,
        cfg.buy_session_fraction,
    )?;

    let item_ids: Vec<ItemId> = (0..cfg.n_items as u64).map(|i| cfg.base_item_id + i).collect();
    let plain_items = weighted(&plain_weights)?;
    let intent_items = weighted(&solved.intent_weights)?;
    let len_buy = weighted(&pmf_buy)?;
    let len_nonbuy = weighted(&pmf_nonbuy)?;
    let gap = Exp::new(1.0 / cfg.mean_gap_secs).map_err(|e| invalid(e.to_string()))?;

    let day_dow: Vec<usize> = (0..cfg.days)
        .map(|d| {
            (cfg.start_date + TimeDelta::days(d as i64))
                .weekday()
                .num_days_from_sunday() as usize
        })
        .collect();
    let dow_mean = day_dow.iter().map(|&w| cfg.dow_factors[w]).sum::<f64>() / cfg.days as f64;
    let hour_mean = cfg.hour_factors.iter().sum::<f64>() / 24.0;
    let origin: Timestamp = Utc.from_utc_datetime(&cfg.start_date.and_hms_opt(0, 0, 0).expect("midnight"));
    let r = solved.conversion_prob;

    let mut clicks = Vec::new();
    let mut buys = Vec::new();
    let mut manifest = Vec::new();
    for sid in 1..=cfg.n_sessions as SessionId {
        let day = rng.random_range(0..cfg.days as usize);
        let hour = rng.random_range(0..24usize);
        let offset_ms = rng.random_range(0..3_600_000i64);
        let start = origin
            + TimeDelta::days(day as i64)
            + TimeDelta::hours(hour as i64)
            + TimeDelta::milliseconds(offset_ms);
        let factor = cfg.dow_factors[day_dow[day]] / dow_mean * cfg.hour_factors[hour] / hour_mean;
        let q = (solved.intent_rate * factor).min(1.0);
        let intent = rng.random_bool(q);

        let (len_dist, item_dist) = if intent {
            (&len_buy, &intent_items)
        } else {
            (&len_nonbuy, &plain_items)
        };
        let len = len_dist.sample(&mut rng) + 1;
        let mut picked: Vec<usize> = Vec::with_capacity(len);
        let mut ts = start;
        // first-click order of distinct items, with click and conversion counts
        let mut items: Vec<(usize, u32, u32)> = Vec::new();
        for n in 0..len {
            let idx = if n > 0 && rng.random_bool(cfg.revisit_prob) {
                picked[rng.random_range(0..picked.len())]
            } else {
                item_dist.sample(&mut rng)
            };
            picked.push(idx);
            if n > 0 {
                let secs = gap.sample(&mut rng).min(cfg.max_gap_secs);
                ts += TimeDelta::milliseconds((secs * 1000.0) as i64);
            }
            clicks.push(ClickEvent {
                session_id: sid,
                timestamp: ts,
                item_id: item_ids[idx],
                category: category_of(idx).to_string(),
            });
            let converted = intent && rng.random_bool(r);
            if converted {
                buys.push(BuyEvent {
                    session_id: sid,
                    timestamp: ts + TimeDelta::seconds(rng.random_range(1..=120)),
                    item_id: item_ids[idx],
                    price: rng.random_range(100..=50_000),
                    quantity: rng.random_range(1..=2),
                });
            }
            match items.iter_mut().find(|e| e.0 == idx) {
                Some(e) => {
                    e.1 += 1;
                    e.2 += u32::from(converted);
                }
                None => items.push((idx, 1, u32::from(converted))),
            }
        }
        for (idx, n, conversions) in items {
            manifest.push(ManifestRow {
                session_id: sid,
                item_id: item_ids[idx],
                clicks: n,
                intent,
                session_buy_prob: q,
                planted_buy_prob: if intent {
                    1.0 - (1.0 - r).powi(n as i32)
                } else {
                    0.0
                },
                bought: conversions > 0,
            });
        }
    }
    clicks.sort_by_key(|c| c.timestamp);
    buys.sort_by_key(|b| b.timestamp);

    Ok(Dataset {
        clicks,
        buys,
        manifest,
        planted: Some(PlantedModel {
            item_ids,
            popularity,
            intent_rate: solved.intent_rate,
            conversion_prob: r,
        }),
    })
}

/// A small dataset whose bought instances and non-bought instances never
/// share a feature key under the default feature configuration.
///
/// Buy sessions start on Sunday 2014-04-06 and click their bought item three
/// times and one other item once. Non-buy sessions start on Monday
/// 2014-04-07. Every session lasts under a minute.
pub fn separable_fixture(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_buy = rng.random_range(30..=50u64);
    let n_nonbuy = rng.random_range(80..=120u64);
    let sunday = Utc.with_ymd_and_hms(2014, 4, 6, 10, 0, 0).unwrap();
    let monday = Utc.with_ymd_and_hms(2014, 4, 7, 10, 0, 0).unwrap();

    let mut clicks = Vec::new();
    let mut buys = Vec::new();
    let mut manifest = Vec::new();
    let click = |sid, ts, item| ClickEvent {
        session_id: sid,
        timestamp: ts,
        item_id: item,
        category: "0".to_string(),
    };
    for sid in 1..=(n_buy + n_nonbuy) {
        let is_buy = sid <= n_buy;
        let start = if is_buy { sunday } else { monday }
            + TimeDelta::minutes(rng.random_range(0..50))
            + TimeDelta::seconds(rng.random_range(0..5));
        let step = TimeDelta::seconds(5);
        // (item, clicks, bought)
        let plan: Vec<(ItemId, u32, bool)> = if is_buy {
            vec![
                (1000 + rng.random_range(1..=20), 3, true),
                (2000 + rng.random_range(1..=40), 1, false),
            ]
        } else {
            let a = 3000 + rng.random_range(1..=60);
            let b = 4000 + rng.random_range(1..=60);
            vec![(a, rng.random_range(1..=2), false), (b, 1, false)]
        };
        let mut ts = start;
        for &(item, n, bought) in &plan {
            for _ in 0..n {
                clicks.push(click(sid, ts, item));
                ts += step;
            }
            if bought {
                buys.push(BuyEvent {
                    session_id: sid,
                    timestamp: ts,
                    item_id: item,
                    price: 1_000,
                    quantity: 1,
                });
            }
            manifest.push(ManifestRow {
                session_id: sid,
                item_id: item,
                clicks: n,
                intent: is_buy,
                session_buy_prob: if is_buy { 1.0 } else { 0.0 },
                planted_buy_prob: if bought { 1.0 } else { 0.0 },
                bought,
            });
        }
    }
    clicks.sort_by_key(|c| c.timestamp);
    Dataset {
        clicks,
        buys,
        manifest,
        planted: None,
    }
}
