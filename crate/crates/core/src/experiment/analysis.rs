use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::DecisionRecord;
use crate::sim::Metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub count: usize,
}

/// Distribution of environmental rewards and the share above the hurdle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub hurdle: f64,
    pub bins: Vec<HistogramBin>,
    pub total: usize,
    pub above_hurdle: usize,
    pub fraction_above: f64,
}

pub fn histogram(values: &[f64], hurdle: f64, bin_width: f64) -> Histogram {
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *bins.entry((v / bin_width).floor() as i64).or_default() += 1;
    }
    let above = values.iter().filter(|v| **v > hurdle).count();
    Histogram {
        bin_width,
        hurdle,
        bins: bins
            .into_iter()
            .map(|(k, count)| HistogramBin {
                lower: k as f64 * bin_width,
                count,
            })
            .collect(),
        total: values.len(),
        above_hurdle: above,
        fraction_above: if values.is_empty() {
            0.0
        } else {
            above as f64 / values.len() as f64
        },
    }
}

pub fn parse_decisions(text: &str) -> Result<Vec<DecisionRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLog {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_decisions(&text)
}

/// Histogram (bin width 0.5 vehicles) of the queue-difference rewards in a
/// decision log.
pub fn reward_histogram(path: &Path, hurdle: f64) -> Result<Histogram> {
    let r: Vec<f64> = read_decisions(path)?.iter().map(|d| d.r_env).collect();
    Ok(histogram(&r, hurdle, 0.5))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// One row of a comparison table; every column is a median over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub name: String,
    pub seeds: usize,
    pub travel_time: Option<f64>,
    pub queue_length: f64,
    pub delay_seconds: Option<f64>,
    pub delay_ratio: Option<f64>,
    pub throughput: f64,
}

impl CompareRow {
    pub fn from_metrics(name: &str, runs: &[Metrics]) -> Self {
        let col = |f: &dyn Fn(&Metrics) -> Option<f64>| {
            median(&runs.iter().filter_map(f).collect::<Vec<_>>())
        };
        CompareRow {
            name: name.to_string(),
            seeds: runs.len(),
            travel_time: col(&|m| m.travel_time),
            queue_length: col(&|m| Some(m.queue_length)).unwrap_or(0.0),
            delay_seconds: col(&|m| m.delay_seconds),
            delay_ratio: col(&|m| m.delay_ratio),
            throughput: col(&|m| Some(m.throughput as f64)).unwrap_or(0.0),
        }
    }
}

pub const COMPARE_HEADER: &str =
    "name,seeds,travel_time,queue_length,delay_seconds,delay_ratio,throughput";

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], mut out: W) -> std::io::Result<()> {
    let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    writeln!(out, "{COMPARE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.name,
            r.seeds,
            opt(r.travel_time),
            r.queue_length,
            opt(r.delay_seconds),
            opt(r.delay_ratio),
            r.throughput
        )?;
    }
    Ok(())
}
