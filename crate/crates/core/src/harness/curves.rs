use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::trainer::{EvalReport, TrainError, TrainObserver};

pub const CURVE_HEADER: &str = "step,mean_episode_length,mean_return,episodes,seed";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: u64,
    pub mean_episode_length: f64,
    pub mean_return: f64,
    pub episodes: u64,
    pub seed: u64,
}

impl CurveRow {
    pub fn from_report(r: &EvalReport, seed: u64) -> Self {
        Self {
            step: r.step as u64,
            mean_episode_length: r.mean_episode_length,
            mean_return: r.mean_return,
            episodes: r.episodes as u64,
            seed,
        }
    }
}

/// Per-step medians across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub step: u64,
    pub mean_episode_length: f64,
    pub mean_return: f64,
    pub episodes: f64,
    pub seed: String,
}

/// Streams rows to a CSV file, flushing after each one so partial runs survive.
pub struct CurveSink {
    writer: csv::Writer<File>,
    seed: u64,
    rows: Vec<CurveRow>,
}

impl CurveSink {
    pub fn create(path: &Path, seed: u64) -> Result<Self, HarnessError> {
        let writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        let mut sink = Self { writer, seed, rows: Vec::new() };
        sink.writer.write_record(CURVE_HEADER.split(','))?;
        sink.writer.flush()?;
        Ok(sink)
    }

    pub fn push(&mut self, report: &EvalReport) -> Result<(), HarnessError> {
        let row = CurveRow::from_report(report, self.seed);
        self.writer.serialize(&row)?;
        self.writer.flush()?;
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[CurveRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<CurveRow> {
        self.rows
    }
}

impl TrainObserver for CurveSink {
    fn on_eval(&mut self, report: &EvalReport) -> Result<(), TrainError> {
        self.push(report).map_err(|e| TrainError::Hook(e.to_string()))
    }
}

pub fn read_curve(path: &Path) -> Result<Vec<CurveRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CURVE_HEADER {
        return Err(HarnessError::Package(format!("unexpected curve header {:?}", header.join(","))));
    }
    Ok(r.deserialize().collect::<Result<Vec<CurveRow>, _>>()?)
}

/// Rows sorted by step, then seed.
pub fn sort_rows(rows: &mut [CurveRow]) {
    rows.sort_by(|a, b| a.step.cmp(&b.step).then(a.seed.cmp(&b.seed)));
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(CURVE_HEADER.split(','))?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Median across seeds at every step that appears in `rows`.
pub fn aggregate(rows: &[CurveRow]) -> Vec<MedianRow> {
    let mut steps: Vec<u64> = rows.iter().map(|r| r.step).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|s| {
            let at: Vec<&CurveRow> = rows.iter().filter(|r| r.step == s).collect();
            let col = |f: fn(&CurveRow) -> f64| median(&at.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(0.0);
            MedianRow {
                step: s,
                mean_episode_length: col(|r| r.mean_episode_length),
                mean_return: col(|r| r.mean_return),
                episodes: col(|r| r.episodes as f64),
                seed: "median".into(),
            }
        })
        .collect()
}

/// First step at which the median episode length is at or below `threshold`.
pub fn steps_to_threshold(rows: &[MedianRow], threshold: f64) -> Option<u64> {
    rows.iter().find(|r| r.mean_episode_length <= threshold).map(|r| r.step)
}

/// One-sided exact Mann-Whitney test: probability under exchangeability that
/// the rank sum of `a` is at most its observed value (small `a` favoured).
/// Ties get mid-ranks. Exhaustive over all splits, so keep samples small.
pub fn mann_whitney_less(a: &[f64], b: &[f64]) -> f64 {
    let mut all: Vec<(f64, usize)> = a.iter().map(|&x| (x, 0)).chain(b.iter().map(|&x| (x, 1))).collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].iter_mut().for_each(|r| *r = mid);
        i = j + 1;
    }
    let observed: f64 = ranks.iter().zip(&all).filter(|(_, (_, g))| *g == 0).map(|(r, _)| r).sum();
    let k = a.len();
    let (mut hits, mut total) = (0u64, 0u64);
    combinations(n, k, &mut |idx| {
        let s: f64 = idx.iter().map(|&i| ranks[i]).sum();
        total += 1;
        if s <= observed + 1e-9 {
            hits += 1;
        }
    });
    hits as f64 / total as f64
}

fn combinations(n: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            go(i + 1, n, k, cur, f);
            cur.pop();
        }
    }
    go(0, n, k, &mut Vec::with_capacity(k), f);
}

/// Population variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}
