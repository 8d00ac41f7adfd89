#![allow(dead_code)]

use std::collections::BTreeSet;

use buypred::ingest::{assemble_sessions, BuyEvent, ClickEvent, Session, Timestamp};
use chrono::{TimeDelta, TimeZone, Utc};
use proptest::prelude::*;
use rand::Rng;

pub fn base() -> Timestamp {
    Utc.with_ymd_and_hms(2014, 4, 1, 0, 0, 0).unwrap()
}

pub fn at(ms: i64) -> Timestamp {
    base() + TimeDelta::milliseconds(ms)
}

pub fn click(sid: u64, ms: i64, item: u64) -> ClickEvent {
    ClickEvent {
        session_id: sid,
        timestamp: at(ms),
        item_id: item,
        category: "0".into(),
    }
}

pub fn buy(sid: u64, ms: i64, item: u64) -> BuyEvent {
    BuyEvent {
        session_id: sid,
        timestamp: at(ms),
        item_id: item,
        price: 100,
        quantity: 1,
    }
}

/// Random click/buy logs over a small item and calendar range, so that
/// feature keys collide often. Session 1 always buys, the last never does.
pub fn random_events<R: Rng>(
    rng: &mut R,
    n_sessions: usize,
    n_items: u64,
) -> (Vec<ClickEvent>, Vec<BuyEvent>) {
    let mut clicks = Vec::new();
    let mut buys = Vec::new();
    for sid in 1..=n_sessions as u64 {
        // within two weeks, on the hour grid so hours repeat
        let start = rng.random_range(0..14 * 24) as i64 * 3_600_000
            + rng.random_range(0..4) as i64 * 60_000;
        let len = rng.random_range(1..=6);
        let mut t = start;
        let mut items = Vec::new();
        for _ in 0..len {
            let item = rng.random_range(1..=n_items);
            clicks.push(click(sid, t, item));
            items.push(item);
            t += rng.random_range(0..240_000);
        }
        let buyer = sid == 1 || (sid != n_sessions as u64 && rng.random_bool(0.3));
        if buyer {
            let first = items[0];
            buys.push(buy(sid, t, first));
            for &it in &items[1..] {
                if rng.random_bool(0.3) {
                    buys.push(buy(sid, t + 1000, it));
                }
            }
        }
    }
    (clicks, buys)
}

pub fn sessions_of(clicks: &[ClickEvent], buys: &[BuyEvent]) -> Vec<Session> {
    assemble_sessions(clicks.iter().cloned(), buys.iter().cloned()).into_sessions()
}

/// (session, start offset minutes, [(item, gap seconds)], bought flags)
pub fn arb_events(max_sessions: usize) -> impl Strategy<Value = (Vec<ClickEvent>, Vec<BuyEvent>)> {
    let session = (
        0..(7 * 24 * 60i64),
        prop::collection::vec((1..=8u64, 0..600i64, any::<bool>()), 1..6),
        any::<bool>(),
    );
    prop::collection::vec(session, 1..=max_sessions).prop_map(|sessions| {
        let mut clicks = Vec::new();
        let mut buys = Vec::new();
        for (i, (start_min, cl, buyer)) in sessions.into_iter().enumerate() {
            let sid = i as u64 + 1;
            let mut t = start_min * 60_000;
            let mut bought = BTreeSet::new();
            for (item, gap, b) in cl {
                t += gap * 1000;
                clicks.push(click(sid, t, item));
                if buyer && b {
                    bought.insert(item);
                }
            }
            for item in bought {
                buys.push(buy(sid, t + 5000, item));
            }
        }
        (clicks, buys)
    })
}
