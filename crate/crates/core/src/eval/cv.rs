use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{confusion, EvalError, EvalReport};
use crate::ingest::Session;
use crate::pipeline::{score_session, train, SessionPrediction, Thresholds, TrainConfig};

/// Mean and sample standard deviation of one metric over folds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let v: Vec<f64> = values.into_iter().collect();
        let n = v.len() as f64;
        if v.is_empty() {
            return Summary {
                mean: 0.0,
                std: 0.0,
            };
        }
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() < 2 {
            0.0
        } else {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Summary { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub score: Summary,
    pub tp_rate_session: Summary,
    pub fp_rate_session: Summary,
    pub tp_rate_item: Summary,
    pub fp_rate_item: Summary,
}

impl Aggregate {
    pub fn of(reports: &[EvalReport]) -> Aggregate {
        let s = |f: fn(&EvalReport) -> f64| Summary::of(reports.iter().map(f));
        Aggregate {
            score: s(|r| r.score),
            tp_rate_session: s(EvalReport::tp_rate_session),
            fp_rate_session: s(EvalReport::fp_rate_session),
            tp_rate_item: s(EvalReport::tp_rate_item),
            fp_rate_item: s(EvalReport::fp_rate_item),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldReport {
    pub fold: usize,
    pub train_sessions: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub folds: Vec<FoldReport>,
    pub aggregate: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub t1: f64,
    pub t2: f64,
    pub folds: Vec<EvalReport>,
    pub aggregate: Aggregate,
}

/// Seeded partition of `0..n` into `k` folds whose sizes differ by at most
/// one. Indices inside a fold are ascending.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 || k > n {
        return Err(EvalError::BadK { k, n });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        let mut fold = order[start..start + len].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        start += len;
    }
    Ok(folds)
}

/// Trains once per fold and evaluates every threshold pair of `grid` on
/// that fold's held-out sessions. Returns `[fold][cell]`.
fn cross_validate(
    sessions: &[Session],
    k: usize,
    seed: u64,
    config: &TrainConfig,
    grid: &[Thresholds],
) -> Result<Vec<(usize, Vec<EvalReport>)>, EvalError> {
    let folds = fold_assignment(sessions.len(), k, seed)?;
    let mut in_fold = vec![0usize; sessions.len()];
    for (f, idx) in folds.iter().enumerate() {
        for &i in idx {
            in_fold[i] = f;
        }
    }
    (0..k)
        .into_par_iter()
        .map(|f| {
            let train_set: Vec<&Session> = sessions
                .iter()
                .zip(&in_fold)
                .filter(|(_, &g)| g != f)
                .map(|(s, _)| s)
                .collect();
            let test_set: Vec<&Session> = folds[f].iter().map(|&i| &sessions[i]).collect();
            let bundle =
                train(&train_set, config).map_err(|source| EvalError::Train { fold: f, source })?;
            let scored: Vec<_> = test_set.iter().map(|s| score_session(&bundle, s)).collect();
            let cells = grid
                .iter()
                .map(|th| {
                    let preds: Vec<SessionPrediction> =
                        scored.iter().map(|s| s.predict(th)).collect();
                    confusion(&preds, &test_set)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok((train_set.len(), cells))
        })
        .collect()
}

/// k-fold cross-validation at the thresholds in `config`.
pub fn kfold(
    sessions: &[Session],
    k: usize,
    seed: u64,
    config: &TrainConfig,
) -> Result<CvReport, EvalError> {
    let per_fold = cross_validate(sessions, k, seed, config, &[config.thresholds])?;
    let folds: Vec<FoldReport> = per_fold
        .into_iter()
        .enumerate()
        .map(|(fold, (train_sessions, cells))| FoldReport {
            fold,
            train_sessions,
            report: cells[0],
        })
        .collect();
    let reports: Vec<EvalReport> = folds.iter().map(|f| f.report).collect();
    Ok(CvReport {
        aggregate: Aggregate::of(&reports),
        folds,
    })
}

/// One cross-validated aggregate per `(t1, t2)` pair, row-major in `t1`.
/// Each fold is fitted once; thresholds only enter at decision time.
pub fn threshold_sweep(
    sessions: &[Session],
    t1_grid: &[f64],
    t2_grid: &[f64],
    k: usize,
    seed: u64,
    config: &TrainConfig,
) -> Result<Vec<SweepCell>, EvalError> {
    if t1_grid.is_empty() || t2_grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut grid = Vec::with_capacity(t1_grid.len() * t2_grid.len());
    for &t1 in t1_grid {
        for &t2 in t2_grid {
            grid.push(Thresholds::new(t1, t2)?);
        }
    }
    let per_fold = cross_validate(sessions, k, seed, config, &grid)?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(c, th)| {
            let folds: Vec<EvalReport> = per_fold.iter().map(|(_, cells)| cells[c]).collect();
            SweepCell {
                t1: th.t1(),
                t2: th.t2(),
                aggregate: Aggregate::of(&folds),
                folds,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutSplit {
    pub train: Vec<Session>,
    pub test: Vec<Session>,
    /// Fraction of test sessions with at least one buy.
    pub test_buy_rate: f64,
}

/// Seeded random split by session; the test side gets
/// `round(n * test_fraction)` sessions. Input order is kept on both sides.
pub fn holdout_split(
    sessions: Vec<Session>,
    test_fraction: f64,
    seed: u64,
) -> Result<HoldoutSplit, EvalError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(EvalError::BadFraction(test_fraction));
    }
    let n = sessions.len();
    let n_test = (n as f64 * test_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (test, train): (Vec<_>, Vec<_>) = sessions
        .into_iter()
        .zip(is_test)
        .partition(|(_, t)| *t);
    let test: Vec<Session> = test.into_iter().map(|(s, _)| s).collect();
    let train: Vec<Session> = train.into_iter().map(|(s, _)| s).collect();
    let buys = test.iter().filter(|s| !s.bought_items.is_empty()).count();
    let test_buy_rate = if test.is_empty() {
        0.0
    } else {
        buys as f64 / test.len() as f64
    };
    Ok(HoldoutSplit {
        train,
        test,
        test_buy_rate,
    })
}

const REPORT_COLUMNS: [&str; 17] = [
    "score",
    "tp_rate_session",
    "fp_rate_session",
    "tp_rate_item",
    "fp_rate_item",
    "tp_session",
    "fp_session",
    "tn_session",
    "fn_session",
    "tp_item",
    "fp_item",
    "tn_item",
    "fn_item",
    "unreachable_positives",
    "n_test_sessions",
    "n_buy_sessions",
    "n_train_sessions",
];

fn report_fields(r: &EvalReport, n_train: Option<usize>) -> Vec<String> {
    let mut v = vec![
        r.score.to_string(),
        r.tp_rate_session().to_string(),
        r.fp_rate_session().to_string(),
        r.tp_rate_item().to_string(),
        r.fp_rate_item().to_string(),
    ];
    for c in [r.session, r.item] {
        v.extend([c.tp, c.fp, c.tn, c.fn_].map(|x| x.to_string()));
    }
    v.push(r.unreachable_positives.to_string());
    v.push(r.n_test_sessions.to_string());
    v.push(r.n_buy_sessions.to_string());
    v.push(n_train.map(|n| n.to_string()).unwrap_or_default());
    v
}

fn summary_fields(a: &Aggregate, pick: fn(&Summary) -> f64) -> Vec<String> {
    let mut v: Vec<String> = [
        a.score,
        a.tp_rate_session,
        a.fp_rate_session,
        a.tp_rate_item,
        a.fp_rate_item,
    ]
    .iter()
    .map(|s| pick(s).to_string())
    .collect();
    v.resize(REPORT_COLUMNS.len(), String::new());
    v
}

/// One row per fold, then `mean` and `std` rows.
pub fn write_cv_csv<W: Write>(out: W, report: &CvReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["fold"];
    header.extend(REPORT_COLUMNS);
    w.write_record(&header)?;
    for f in &report.folds {
        let mut row = vec![f.fold.to_string()];
        row.extend(report_fields(&f.report, Some(f.train_sessions)));
        w.write_record(&row)?;
    }
    for (label, pick) in [
        ("mean", (|s: &Summary| s.mean) as fn(&Summary) -> f64),
        ("std", |s: &Summary| s.std),
    ] {
        let mut row = vec![label.to_string()];
        row.extend(summary_fields(&report.aggregate, pick));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per grid cell with mean and std of each headline metric.
pub fn write_sweep_csv<W: Write>(out: W, cells: &[SweepCell]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t1",
        "t2",
        "score_mean",
        "score_std",
        "tp_rate_session_mean",
        "tp_rate_session_std",
        "fp_rate_session_mean",
        "fp_rate_session_std",
        "tp_rate_item_mean",
        "tp_rate_item_std",
        "fp_rate_item_mean",
        "fp_rate_item_std",
    ])?;
    for c in cells {
        let a = &c.aggregate;
        let mut row = vec![c.t1.to_string(), c.t2.to_string()];
        for s in [
            a.score,
            a.tp_rate_session,
            a.fp_rate_session,
            a.tp_rate_item,
            a.fp_rate_item,
        ] {
            row.push(s.mean.to_string());
            row.push(s.std.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
