//! Item popularity `p = b / c` and the step-2 filter.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Instance;
use crate::ingest::{BuyEvent, ClickEvent, ItemId, SessionId};

#[derive(Debug, Error, PartialEq)]
pub enum PopularityError {
    #[error("category bounds must satisfy 0 <= low_max < med_max, got ({0}, {1})")]
    BadBounds(f64, f64),
}

/// What `b` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuyBasis {
    /// Every buy event.
    #[default]
    Events,
    /// Distinct sessions that bought the item.
    Sessions,
    /// Sum of purchased quantities.
    Quantity,
}

impl FromStr for BuyBasis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "events" => Ok(BuyBasis::Events),
            "sessions" => Ok(BuyBasis::Sessions),
            "quantity" => Ok(BuyBasis::Quantity),
            other => Err(format!(
                "unknown buy basis {other:?} (expected events|sessions|quantity)"
            )),
        }
    }
}

/// Exact popularity as a buys/clicks pair; `clicks >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Popularity {
    pub buys: u64,
    pub clicks: u64,
}

impl Popularity {
    pub fn value(&self) -> f64 {
        self.buys as f64 / self.clicks as f64
    }

    /// `p * n > t2`, evaluated as `b * n > t2 * c`.
    pub fn weighted_exceeds(&self, n: u32, t2: f64) -> bool {
        let lhs = self.buys as u128 * n as u128;
        (lhs as f64) > t2 * self.clicks as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Low,
    Medium,
    High,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Low => "low",
            Category::Medium => "medium",
            Category::High => "high",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryBounds {
    low_max: f64,
    med_max: f64,
}

impl Default for CategoryBounds {
    fn default() -> Self {
        CategoryBounds {
            low_max: 0.05,
            med_max: 0.15,
        }
    }
}

impl CategoryBounds {
    pub fn new(low_max: f64, med_max: f64) -> Result<Self, PopularityError> {
        if !(low_max >= 0.0 && low_max < med_max && med_max.is_finite()) {
            return Err(PopularityError::BadBounds(low_max, med_max));
        }
        Ok(CategoryBounds { low_max, med_max })
    }

    pub fn low_max(&self) -> f64 {
        self.low_max
    }

    pub fn med_max(&self) -> f64 {
        self.med_max
    }
}

/// Report-only label; never consulted by [`step2_filter`].
pub fn categorize(p: f64, bounds: &CategoryBounds) -> Category {
    if p <= bounds.low_max {
        Category::Low
    } else if p <= bounds.med_max {
        Category::Medium
    } else {
        Category::High
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopularityTable {
    basis: BuyBasis,
    entries: BTreeMap<ItemId, Popularity>,
    /// Buy counts of items that were bought but never clicked.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    unclicked: BTreeMap<ItemId, u64>,
}

impl PopularityTable {
    pub fn basis(&self) -> BuyBasis {
        self.basis
    }

    pub fn get(&self, item: ItemId) -> Option<Popularity> {
        self.entries.get(&item).copied()
    }

    pub fn entries(&self) -> &BTreeMap<ItemId, Popularity> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn unclicked_bought_items(&self) -> u64 {
        self.unclicked.len() as u64
    }

    /// Sums `b` and `c` of two partial tables built over disjoint sessions.
    pub fn merge(&self, other: &PopularityTable) -> PopularityTable {
        assert_eq!(self.basis, other.basis, "buy basis mismatch");
        let mut raw = RawCounts::default();
        for t in [self, other] {
            for (item, p) in &t.entries {
                let e = raw.counts.entry(*item).or_default();
                e.0 += p.buys;
                e.1 += p.clicks;
            }
            for (item, b) in &t.unclicked {
                raw.counts.entry(*item).or_default().0 += b;
            }
        }
        raw.finish(self.basis)
    }
}

#[derive(Default)]
struct RawCounts {
    // item -> (b, c)
    counts: BTreeMap<ItemId, (u64, u64)>,
}

impl RawCounts {
    fn finish(self, basis: BuyBasis) -> PopularityTable {
        let mut entries = BTreeMap::new();
        let mut unclicked = BTreeMap::new();
        for (item, (buys, clicks)) in self.counts {
            if clicks == 0 {
                unclicked.insert(item, buys);
            } else {
                entries.insert(item, Popularity { buys, clicks });
            }
        }
        PopularityTable {
            basis,
            entries,
            unclicked,
        }
    }
}

/// Builds the table from training events. Items with no clicks are left out.
pub fn build_popularity<'a, C, B>(clicks: C, buys: B, basis: BuyBasis) -> PopularityTable
where
    C: IntoIterator<Item = &'a ClickEvent>,
    B: IntoIterator<Item = &'a BuyEvent>,
{
    let mut raw = RawCounts::default();
    for c in clicks {
        raw.counts.entry(c.item_id).or_default().1 += 1;
    }
    let mut seen: BTreeSet<(SessionId, ItemId)> = BTreeSet::new();
    for b in buys {
        let inc = match basis {
            BuyBasis::Events => 1,
            BuyBasis::Quantity => b.quantity,
            BuyBasis::Sessions => u64::from(seen.insert((b.session_id, b.item_id))),
        };
        raw.counts.entry(b.item_id).or_default().0 += inc;
    }
    raw.finish(basis)
}

/// Keeps an instance iff its item is unknown to the table, or `p * n > t2`
/// with `n` the uncapped in-session click count.
pub fn step2_filter(selected: &[Instance], table: &PopularityTable, t2: f64) -> Vec<Instance> {
    selected
        .iter()
        .filter(|i| match table.get(i.item_id) {
            Some(p) => p.weighted_exceeds(i.clicks, t2),
            None => true,
        })
        .copied()
        .collect()
}
