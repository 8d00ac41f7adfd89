//! Click and buy log ingestion.
//!
//! Both files are headerless comma-separated logs in the yoochoose layout:
//!
//! ```text
//! clicks: session_id,timestamp,item_id,category
//! buys:   session_id,timestamp,item_id,price,quantity
//! ```
//!
//! Malformed lines never abort a parse. They are collected as [`Reject`]s
//! carrying their 1-based line number so a caller can write a reject log,
//! and only a failure of the underlying reader is fatal.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};

use chrono::{DateTime, SubsecRound, Utc};
use serde::Serialize;
use thiserror::Error;

pub type SessionId = u64;
pub type ItemId = u64;
pub type Timestamp = DateTime<Utc>;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("read failure: {0}")]
    Io(#[from] io::Error),
    #[error("csv write failure: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClickEvent {
    pub session_id: SessionId,
    pub timestamp: Timestamp,
    pub item_id: ItemId,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BuyEvent {
    pub session_id: SessionId,
    pub timestamp: Timestamp,
    pub item_id: ItemId,
    pub price: u64,
    pub quantity: u64,
}

/// A rejected input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    pub line_no: u64,
    pub reason: String,
}

/// Result of parsing one log file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parsed<T> {
    pub events: Vec<T>,
    pub rejects: Vec<Reject>,
    pub total_lines: u64,
}

/// Parses a timestamp such as `2014-04-07T10:51:09.277Z`, truncated to
/// millisecond precision. Fractional seconds are optional.
pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let ts = DateTime::parse_from_rfc3339(s).ok()?;
    Some(ts.with_timezone(&Utc).trunc_subsecs(3))
}

pub fn format_timestamp(ts: &Timestamp) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string()
}

fn parse_id(field: &str, name: &str) -> Result<u64, String> {
    match field.parse::<u64>() {
        Ok(0) => Err(format!("{name} must be >= 1")),
        Ok(v) => Ok(v),
        Err(_) => Err(format!("invalid {name} {field:?}")),
    }
}

fn parse_count(field: &str, name: &str) -> Result<u64, String> {
    field
        .parse::<u64>()
        .map_err(|_| format!("invalid {name} {field:?}"))
}

fn parse_ts_field(field: &str) -> Result<Timestamp, String> {
    parse_timestamp(field).ok_or_else(|| format!("invalid timestamp {field:?}"))
}

fn split_fields<'a, const N: usize>(line: &'a str) -> Result<[&'a str; N], String> {
    let mut out = [""; N];
    let mut n = 0;
    for field in line.split(',') {
        if n == N {
            return Err(format!("expected {N} fields, found more"));
        }
        out[n] = field;
        n += 1;
    }
    if n != N {
        return Err(format!("expected {N} fields, found {n}"));
    }
    Ok(out)
}

pub fn parse_click_line(line: &str) -> Result<ClickEvent, String> {
    let [sid, ts, item, category] = split_fields::<4>(line)?;
    Ok(ClickEvent {
        session_id: parse_id(sid, "session_id")?,
        timestamp: parse_ts_field(ts)?,
        item_id: parse_id(item, "item_id")?,
        category: category.to_string(),
    })
}

pub fn parse_buy_line(line: &str) -> Result<BuyEvent, String> {
    let [sid, ts, item, price, quantity] = split_fields::<5>(line)?;
    Ok(BuyEvent {
        session_id: parse_id(sid, "session_id")?,
        timestamp: parse_ts_field(ts)?,
        item_id: parse_id(item, "item_id")?,
        price: parse_count(price, "price")?,
        quantity: parse_count(quantity, "quantity")?,
    })
}

/// Line-oriented record reader shared by the batch parsers and the
/// streaming predictor. Each call to [`LineRecords::next_record`] yields
/// either a parsed event or a reject for the next physical line.
pub struct LineRecords<R, F> {
    reader: R,
    parse: F,
    buf: Vec<u8>,
    line_no: u64,
}

impl<R: BufRead, T, F: FnMut(&str) -> Result<T, String>> LineRecords<R, F> {
    pub fn new(reader: R, parse: F) -> Self {
        LineRecords {
            reader,
            parse,
            buf: Vec::with_capacity(128),
            line_no: 0,
        }
    }

    pub fn lines_read(&self) -> u64 {
        self.line_no
    }

    pub fn next_record(&mut self) -> Result<Option<Result<T, Reject>>, IngestError> {
        self.buf.clear();
        if self.reader.read_until(b'\n', &mut self.buf)? == 0 {
            return Ok(None);
        }
        self.line_no += 1;
        let mut bytes = &self.buf[..];
        if let Some(rest) = bytes.strip_suffix(b"\n") {
            bytes = rest;
        }
        if let Some(rest) = bytes.strip_suffix(b"\r") {
            bytes = rest;
        }
        let outcome = match std::str::from_utf8(bytes) {
            Err(_) => Err("line is not valid UTF-8".to_string()),
            Ok("") => Err("empty line".to_string()),
            Ok(line) => (self.parse)(line),
        };
        Ok(Some(outcome.map_err(|reason| Reject {
            line_no: self.line_no,
            reason,
        })))
    }
}

fn parse_all<R: BufRead, T>(
    source: R,
    parse: fn(&str) -> Result<T, String>,
) -> Result<Parsed<T>, IngestError> {
    let mut records = LineRecords::new(source, parse);
    let mut parsed = Parsed {
        events: Vec::new(),
        rejects: Vec::new(),
        total_lines: 0,
    };
    while let Some(record) = records.next_record()? {
        match record {
            Ok(ev) => parsed.events.push(ev),
            Err(rej) => parsed.rejects.push(rej),
        }
    }
    parsed.total_lines = records.lines_read();
    Ok(parsed)
}

pub fn parse_clicks<R: BufRead>(source: R) -> Result<Parsed<ClickEvent>, IngestError> {
    parse_all(source, parse_click_line)
}

pub fn parse_buys<R: BufRead>(source: R) -> Result<Parsed<BuyEvent>, IngestError> {
    parse_all(source, parse_buy_line)
}

/// Writes a reject log as `line_no,reason` CSV with a header row.
pub fn write_rejects<W: Write>(out: W, rejects: &[Reject]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rejects {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_click<W: Write>(out: &mut W, c: &ClickEvent) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{}",
        c.session_id,
        format_timestamp(&c.timestamp),
        c.item_id,
        c.category
    )
}

pub fn write_buy<W: Write>(out: &mut W, b: &BuyEvent) -> io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{}",
        b.session_id,
        format_timestamp(&b.timestamp),
        b.item_id,
        b.price,
        b.quantity
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Label {
    Buy,
    NonBuy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: SessionId,
    /// Sorted by timestamp, ties kept in input order.
    pub clicks: Vec<ClickEvent>,
    pub bought_items: BTreeSet<ItemId>,
    /// Raw buy events of this session, in input order.
    pub buys: Vec<BuyEvent>,
}

impl Session {
    /// Builds a session from clicks alone (no ground truth).
    pub fn from_clicks(session_id: SessionId, mut clicks: Vec<ClickEvent>) -> Self {
        clicks.sort_by_key(|c| c.timestamp);
        Session {
            session_id,
            clicks,
            bought_items: BTreeSet::new(),
            buys: Vec::new(),
        }
    }

    pub fn label(&self) -> Label {
        if self.bought_items.is_empty() {
            Label::NonBuy
        } else {
            Label::Buy
        }
    }

    pub fn clicked_items(&self) -> BTreeSet<ItemId> {
        self.clicks.iter().map(|c| c.item_id).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AssemblyDiagnostics {
    /// Buy events whose session has no clicks; dropped.
    pub orphan_buys: u64,
    /// Buys of an item the session never clicked; kept as ground truth.
    pub unclicked_buys: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Assembled {
    pub sessions: BTreeMap<SessionId, Session>,
    pub diagnostics: AssemblyDiagnostics,
}

impl Assembled {
    pub fn into_sessions(self) -> Vec<Session> {
        self.sessions.into_values().collect()
    }
}

/// Groups events into sessions keyed by session id.
pub fn assemble_sessions<C, B>(clicks: C, buys: B) -> Assembled
where
    C: IntoIterator<Item = ClickEvent>,
    B: IntoIterator<Item = BuyEvent>,
{
    let mut sessions: BTreeMap<SessionId, Session> = BTreeMap::new();
    for click in clicks {
        sessions
            .entry(click.session_id)
            .or_insert_with(|| Session {
                session_id: click.session_id,
                clicks: Vec::new(),
                bought_items: BTreeSet::new(),
                buys: Vec::new(),
            })
            .clicks
            .push(click);
    }
    for s in sessions.values_mut() {
        // stable: equal timestamps keep input order
        s.clicks.sort_by_key(|c| c.timestamp);
    }

    let mut diagnostics = AssemblyDiagnostics::default();
    for buy in buys {
        match sessions.get_mut(&buy.session_id) {
            None => diagnostics.orphan_buys += 1,
            Some(s) => {
                if !s.clicks.iter().any(|c| c.item_id == buy.item_id) {
                    diagnostics.unclicked_buys += 1;
                }
                s.bought_items.insert(buy.item_id);
                s.buys.push(buy);
            }
        }
    }
    Assembled {
        sessions,
        diagnostics,
    }
}

/// Serializes sessions back to click CSV, session by session.
pub fn write_session_clicks<'a, W, I>(out: &mut W, sessions: I) -> io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Session>,
{
    for s in sessions {
        for c in &s.clicks {
            write_click(out, c)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn ts(s: &str) -> Timestamp {
        parse_timestamp(s).unwrap()
    }

    #[test]
    fn click_line_maps_fields() {
        let p = parse_clicks("1,2014-04-07T10:51:09.277Z,214536502,0\n".as_bytes()).unwrap();
        assert_eq!(p.total_lines, 1);
        assert_eq!(
            p.events,
            vec![ClickEvent {
                session_id: 1,
                timestamp: Utc.with_ymd_and_hms(2014, 4, 7, 10, 51, 9).unwrap()
                    + chrono::TimeDelta::milliseconds(277),
                item_id: 214536502,
                category: "0".into(),
            }]
        );
    }

    #[test]
    fn category_token_is_opaque() {
        let p = parse_clicks("7,2014-04-02T06:38:53.104Z,214662742,S".as_bytes()).unwrap();
        assert_eq!(p.events[0].category, "S");
        assert_eq!(p.events[0].item_id, 214662742);
        let p = parse_clicks("7,2014-04-02T06:38:53.104Z,214662742,".as_bytes()).unwrap();
        assert_eq!(p.events[0].category, "");
    }

    #[test]
    fn malformed_click_is_rejected_and_parsing_continues() {
        let input = "x,notatime,0,0\n2,2014-04-07T10:51:09Z,5,0\n";
        let p = parse_clicks(input.as_bytes()).unwrap();
        assert_eq!(p.events.len(), 1);
        assert_eq!(p.rejects.len(), 1);
        assert_eq!(p.rejects[0].line_no, 1);
        assert_eq!(p.events.len() as u64 + p.rejects.len() as u64, p.total_lines);
    }

    #[test]
    fn zero_ids_and_blank_lines_are_rejected() {
        let input = "0,2014-04-07T10:51:09Z,5,0\n\n3,2014-04-07T10:51:09Z,0,0\r\n";
        let p = parse_clicks(input.as_bytes()).unwrap();
        assert!(p.events.is_empty());
        let lines: Vec<u64> = p.rejects.iter().map(|r| r.line_no).collect();
        assert_eq!(lines, vec![1, 2, 3]);
    }

    #[test]
    fn buy_line_maps_fields() {
        let p = parse_buys("420374,2014-04-06T18:44:58.314Z,214537888,12462,1".as_bytes()).unwrap();
        let b = &p.events[0];
        assert_eq!(
            (b.session_id, b.item_id, b.price, b.quantity),
            (420374, 214537888, 12462, 1)
        );
        assert_eq!(b.timestamp, ts("2014-04-06T18:44:58.314Z"));
    }

    #[test]
    fn empty_buy_stream() {
        let p = parse_buys("".as_bytes()).unwrap();
        assert!(p.events.is_empty() && p.rejects.is_empty());
        assert_eq!(p.total_lines, 0);
    }

    #[test]
    fn buy_arity_is_checked() {
        let p = parse_buys("1,2014-04-06T18:44:58.314Z,2,3".as_bytes()).unwrap();
        assert!(p.events.is_empty());
        assert_eq!(p.rejects[0].line_no, 1);
        let p = parse_buys("1,2014-04-06T18:44:58.314Z,2,3,4,5".as_bytes()).unwrap();
        assert_eq!(p.rejects.len(), 1);
    }

    #[test]
    fn timestamps_truncate_to_millis() {
        assert_eq!(
            ts("2014-04-07T10:51:09.277999Z"),
            ts("2014-04-07T10:51:09.277Z")
        );
        assert_eq!(format_timestamp(&ts("2014-04-07T10:51:09Z")), "2014-04-07T10:51:09.000Z");
    }

    #[test]
    fn read_failure_is_fatal() {
        struct Broken;
        impl io::Read for Broken {
            fn read(&mut self, _: &mut [u8]) -> io::Result<usize> {
                Err(io::Error::other("disk gone"))
            }
        }
        let r = parse_clicks(io::BufReader::new(Broken));
        assert!(matches!(r, Err(IngestError::Io(_))));
    }

    fn click(sid: u64, t: &str, item: u64) -> ClickEvent {
        ClickEvent {
            session_id: sid,
            timestamp: ts(t),
            item_id: item,
            category: "0".into(),
        }
    }

    fn buy(sid: u64, item: u64) -> BuyEvent {
        BuyEvent {
            session_id: sid,
            timestamp: ts("2014-04-07T11:00:00Z"),
            item_id: item,
            price: 100,
            quantity: 1,
        }
    }

    #[test]
    fn sessions_get_labels_from_buys() {
        let clicks = vec![
            click(1, "2014-04-07T10:00:00Z", 10),
            click(2, "2014-04-07T10:00:00Z", 20),
        ];
        let a = assemble_sessions(clicks, vec![buy(2, 20)]);
        assert_eq!(a.sessions[&1].label(), Label::NonBuy);
        assert_eq!(a.sessions[&2].label(), Label::Buy);
    }

    #[test]
    fn orphan_buys_are_dropped() {
        let a = assemble_sessions(
            vec![click(1, "2014-04-07T10:00:00Z", 10)],
            vec![buy(99, 10)],
        );
        assert_eq!(a.diagnostics.orphan_buys, 1);
        assert!(!a.sessions.contains_key(&99));
    }

    #[test]
    fn duplicate_buys_collapse() {
        let a = assemble_sessions(
            vec![click(1, "2014-04-07T10:00:00Z", 10)],
            vec![buy(1, 10), buy(1, 10)],
        );
        assert_eq!(a.sessions[&1].bought_items.len(), 1);
        assert_eq!(a.sessions[&1].buys.len(), 2);
    }

    #[test]
    fn unclicked_buy_still_labels() {
        let a = assemble_sessions(
            vec![click(1, "2014-04-07T10:00:00Z", 10)],
            vec![buy(1, 11)],
        );
        assert!(a.sessions[&1].bought_items.contains(&11));
        assert_eq!(a.diagnostics.unclicked_buys, 1);
    }

    #[test]
    fn clicks_sorted_with_stable_ties() {
        let clicks = vec![
            click(1, "2014-04-07T10:05:00Z", 3),
            click(1, "2014-04-07T10:00:00Z", 1),
            click(1, "2014-04-07T10:00:00Z", 2),
        ];
        let a = assemble_sessions(clicks, vec![]);
        let items: Vec<u64> = a.sessions[&1].clicks.iter().map(|c| c.item_id).collect();
        assert_eq!(items, vec![1, 2, 3]);
    }

    #[test]
    fn reject_log_format() {
        let mut out = Vec::new();
        write_rejects(
            &mut out,
            &[Reject {
                line_no: 4,
                reason: "expected 4 fields, found 3".into(),
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "line_no,reason\n4,\"expected 4 fields, found 3\"\n"
        );
    }
}
