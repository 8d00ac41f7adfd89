//! RecSys solution files: `session_id;item_id,item_id,...` per predicted
//! buy session. Sessions with no predicted items are omitted.

use std::collections::BTreeSet;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::SessionPrediction;

#[derive(Debug, Error)]
pub enum SolutionError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

pub fn write_solution<'a, W, I>(out: &mut W, predictions: I) -> io::Result<()>
where
    W: Write + ?Sized,
    I: IntoIterator<Item = &'a SessionPrediction>,
{
    for p in predictions {
        if p.predicted_items.is_empty() {
            continue;
        }
        write!(out, "{};", p.session_id)?;
        for (i, item) in p.predicted_items.iter().enumerate() {
            if i > 0 {
                out.write_all(b",")?;
            }
            write!(out, "{item}")?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_solution<R: BufRead>(input: R) -> Result<Vec<SessionPrediction>, SolutionError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = idx as u64 + 1;
        let bad = |reason: String| SolutionError::Malformed {
            line: line_no,
            reason,
        };
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (sid, items) = line
            .split_once(';')
            .ok_or_else(|| bad("missing ';' separator".into()))?;
        let session_id = sid
            .parse()
            .map_err(|_| bad(format!("invalid session id {sid:?}")))?;
        let predicted_items = items
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad(format!("invalid item id {s:?}"))))
            .collect::<Result<BTreeSet<u64>, _>>()?;
        out.push(SessionPrediction {
            session_id,
            predicted_items,
        });
    }
    Ok(out)
}
