//! Descriptive aggregations over a labeled dataset, as one long-form CSV.
//!
//! Every row is `section,bin,n,buys,rate`. Calendar and click/duration
//! sections count (session, item) instances, so `rate` is the empirical
//! buy probability of an instance in that bin. Popularity sections count
//! items instead.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::features::{extract_instances, Feature, FeatureConfig};
use crate::ingest::{Label, Session};
use crate::popularity::{categorize, CategoryBounds, PopularityTable};

/// Width of a popularity histogram bucket.
pub const POPULARITY_BUCKET: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsRow {
    pub section: &'static str,
    pub bin: String,
    pub n: u64,
    pub buys: u64,
    pub rate: Option<f64>,
}

fn ratio(buys: u64, n: u64) -> Option<f64> {
    (n > 0).then(|| buys as f64 / n as f64)
}

fn instance_section(
    section: &'static str,
    counts: &BTreeMap<u32, (u64, u64)>,
    out: &mut Vec<StatsRow>,
) {
    for (bin, &(n, buys)) in counts {
        out.push(StatsRow {
            section,
            bin: bin.to_string(),
            n,
            buys,
            rate: ratio(buys, n),
        });
    }
}

/// Bucket index of popularity `p`; bucket `i` covers `[i*w, (i+1)*w)`.
fn bucket(p: f64) -> u64 {
    // guard against 0.15 / 0.05 = 2.9999999999999996
    ((p / POPULARITY_BUCKET) + 1e-9).floor() as u64
}

pub fn compute(
    sessions: &[Session],
    features: &FeatureConfig,
    table: &PopularityTable,
    bounds: &CategoryBounds,
) -> Vec<StatsRow> {
    let sections = [
        ("day_of_month", Feature::DayOfMonth),
        ("day_of_week", Feature::DayOfWeek),
        ("hour_of_day", Feature::HourOfDay),
        ("item_clicks", Feature::ItemClicks),
        ("duration_minutes", Feature::Duration),
    ];
    let mut tallies: Vec<BTreeMap<u32, (u64, u64)>> = vec![BTreeMap::new(); sections.len()];
    for s in sessions {
        for inst in extract_instances(s, features) {
            let bought = u64::from(inst.label == Label::Buy);
            for (tally, (_, f)) in tallies.iter_mut().zip(sections) {
                let e = tally.entry(inst.features.get(f)).or_default();
                e.0 += 1;
                e.1 += bought;
            }
        }
    }
    let mut rows = Vec::new();
    for (tally, (name, _)) in tallies.iter().zip(sections) {
        instance_section(name, tally, &mut rows);
    }

    let mut buckets: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
    let mut categories: BTreeMap<_, (u64, u64)> = BTreeMap::new();
    for pop in table.entries().values() {
        let p = pop.value();
        let e = buckets.entry(bucket(p)).or_default();
        e.0 += 1;
        e.1 += pop.buys;
        let e = categories.entry(categorize(p, bounds)).or_default();
        e.0 += 1;
        e.1 += pop.buys;
    }
    for (b, (n, buys)) in buckets {
        let lo = b as f64 * POPULARITY_BUCKET;
        rows.push(StatsRow {
            section: "popularity_bucket",
            bin: format!("{lo:.2}-{:.2}", lo + POPULARITY_BUCKET),
            n,
            buys,
            rate: None,
        });
    }
    for (c, (n, buys)) in categories {
        rows.push(StatsRow {
            section: "popularity_category",
            bin: c.to_string(),
            n,
            buys,
            rate: None,
        });
    }
    rows
}

pub fn write_stats_csv<W: Write>(out: W, rows: &[StatsRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{assemble_sessions, parse_timestamp, BuyEvent, ClickEvent};
    use crate::popularity::{build_popularity, BuyBasis};

    fn click(sid: u64, t: &str, item: u64) -> ClickEvent {
        ClickEvent {
            session_id: sid,
            timestamp: parse_timestamp(t).unwrap(),
            item_id: item,
            category: "0".into(),
        }
    }

    #[test]
    fn counts_by_section() {
        let clicks = vec![
            click(1, "2014-04-06T18:00:00Z", 1),
            click(1, "2014-04-06T18:03:00Z", 1),
            click(1, "2014-04-06T18:04:00Z", 2),
            click(2, "2014-04-07T09:00:00Z", 1),
        ];
        let buys = vec![BuyEvent {
            session_id: 1,
            timestamp: parse_timestamp("2014-04-06T18:10:00Z").unwrap(),
            item_id: 1,
            price: 0,
            quantity: 1,
        }];
        let sessions = assemble_sessions(clicks.clone(), buys.clone()).into_sessions();
        let table = build_popularity(&clicks, &buys, BuyBasis::Events);
        let rows = compute(&sessions, &FeatureConfig::default(), &table, &CategoryBounds::default());
        let find = |section: &str, bin: &str| {
            rows.iter()
                .find(|r| r.section == section && r.bin == bin)
                .cloned()
                .unwrap()
        };
        // Sunday: two instances, one bought
        let sun = find("day_of_week", "0");
        assert_eq!((sun.n, sun.buys, sun.rate), (2, 1, Some(0.5)));
        assert_eq!(find("item_clicks", "2").buys, 1);
        assert_eq!(find("duration_minutes", "4").n, 2);
        // item 1: 1 buy / 3 clicks, item 2: 0 / 1
        let b = find("popularity_bucket", "0.30-0.35");
        assert_eq!((b.n, b.buys), (1, 1));
        assert_eq!(find("popularity_category", "high").n, 1);
        assert_eq!(find("popularity_category", "low").n, 1);
    }

    #[test]
    fn bucket_edges() {
        assert_eq!(bucket(0.0), 0);
        assert_eq!(bucket(0.049), 0);
        assert_eq!(bucket(0.05), 1);
        assert_eq!(bucket(0.15), 3);
        assert_eq!(bucket(1.0), 20);
    }
}
