//! Processing-time model for sub-batches.
//!
//! A bucketed lookup table over (sentence count, max source length, max
//! target length) holds the mean of observed seconds per bucket; shapes that
//! miss the table fall back to a least-squares affine model in the two
//! padded areas, with coefficients clamped non-negative so estimates stay
//! monotone in every coordinate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SubBatch;
use crate::error::{Error, Result};

pub const SENTENCE_BUCKET_WIDTH: u32 = 8;
pub const LENGTH_BUCKET_WIDTH: u32 = 4;

/// Floor for estimates; keeps every estimate strictly positive.
const MIN_ESTIMATE: f64 = 1e-9;

/// One observed sub-batch timing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub num_sentences: u32,
    pub max_src_len: u32,
    pub max_tgt_len: u32,
    pub seconds: f64,
}

fn bucket_key(n: u32, s: u32, t: u32) -> (u32, u32, u32) {
    (
        (n.saturating_sub(1)) / SENTENCE_BUCKET_WIDTH,
        (s.saturating_sub(1)) / LENGTH_BUCKET_WIDTH,
        (t.saturating_sub(1)) / LENGTH_BUCKET_WIDTH,
    )
}

/// Fitted timing model: bucket means plus an affine fallback
/// `seconds ~= a*(n*max_src) + b*(n*max_tgt) + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingModel {
    table: BTreeMap<(u32, u32, u32), f64>,
    affine: [f64; 3],
}

impl TimingModel {
    pub fn estimate(&self, b: &SubBatch) -> f64 {
        self.estimate_shape(
            b.num_sentences as u32,
            b.max_src_len as u32,
            b.max_tgt_len as u32,
        )
    }

    pub fn estimate_shape(&self, n: u32, s: u32, t: u32) -> f64 {
        if let Some(&mean) = self.table.get(&bucket_key(n, s, t)) {
            return mean.max(MIN_ESTIMATE);
        }
        let x1 = f64::from(n) * f64::from(s);
        let x2 = f64::from(n) * f64::from(t);
        (self.affine[0] * x1 + self.affine[1] * x2 + self.affine[2]).max(MIN_ESTIMATE)
    }

    pub fn affine_coefficients(&self) -> [f64; 3] {
        self.affine
    }

    pub fn table_len(&self) -> usize {
        self.table.len()
    }
}

/// Solve the least-squares problem over the active feature set.
/// Features: 0 -> n*max_src, 1 -> n*max_tgt, 2 -> intercept.
#[allow(clippy::needless_range_loop)] // textbook index form for the 3x3 elimination
fn solve_affine(ms: &[Measurement], active: [bool; 3]) -> Option<[f64; 3]> {
    let feats = |m: &Measurement| {
        [
            f64::from(m.num_sentences) * f64::from(m.max_src_len),
            f64::from(m.num_sentences) * f64::from(m.max_tgt_len),
            1.0,
        ]
    };
    let idx: Vec<usize> = (0..3).filter(|&i| active[i]).collect();
    let k = idx.len();
    if k == 0 {
        return Some([0.0; 3]);
    }
    // Normal equations A x = b over the active features.
    let mut a = vec![vec![0.0f64; k]; k];
    let mut b = vec![0.0f64; k];
    for m in ms {
        let f = feats(m);
        for (r, &ir) in idx.iter().enumerate() {
            for (c, &ic) in idx.iter().enumerate() {
                a[r][c] += f[ir] * f[ic];
            }
            b[r] += f[ir] * m.seconds;
        }
    }
    // Gaussian elimination with partial pivoting.
    for col in 0..k {
        let piv = (col..k).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..k {
            let f = a[row][col] / a[col][col];
            for c in col..k {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0f64; k];
    for row in (0..k).rev() {
        let mut acc = b[row];
        for c in (row + 1)..k {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    let mut out = [0.0f64; 3];
    for (r, &ir) in idx.iter().enumerate() {
        out[ir] = x[r];
    }
    Some(out)
}

/// Fit the bucket table and the affine fallback from measurements.
pub fn fit_timing_model(measurements: &[Measurement]) -> Result<TimingModel> {
    if measurements.is_empty() {
        return Err(Error::Data("no timing measurements".into()));
    }
    if measurements
        .iter()
        .any(|m| m.num_sentences == 0 || m.max_src_len == 0 || m.max_tgt_len == 0 || !m.seconds.is_finite())
    {
        return Err(Error::Data("measurements must have positive shape and finite seconds".into()));
    }

    let mut sums: BTreeMap<(u32, u32, u32), (f64, u64)> = BTreeMap::new();
    for m in measurements {
        let e = sums
            .entry(bucket_key(m.num_sentences, m.max_src_len, m.max_tgt_len))
            .or_insert((0.0, 0));
        e.0 += m.seconds;
        e.1 += 1;
    }
    let table: BTreeMap<_, _> = sums
        .into_iter()
        .map(|(k, (s, c))| (k, s / c as f64))
        .collect();

    // Full fit; drop negative slope features and refit until the slopes are
    // non-negative (monotonicity of the fallback).
    let mut active = [true, true, true];
    let affine = loop {
        match solve_affine(measurements, active) {
            Some(sol) => {
                let mut changed = false;
                for i in 0..2 {
                    if active[i] && sol[i] < 0.0 {
                        active[i] = false;
                        changed = true;
                    }
                }
                if !changed {
                    break sol;
                }
            }
            None => {
                // Singular system: drop the intercept first, then fall back
                // to the mean.
                if active[2] && (active[0] || active[1]) {
                    active = [false, false, true];
                } else {
                    let mean =
                        measurements.iter().map(|m| m.seconds).sum::<f64>() / measurements.len() as f64;
                    break [0.0, 0.0, mean];
                }
            }
        }
    };

    Ok(TimingModel { table, affine })
}

/// p-th percentile of an ascending-sorted sample, linear interpolation
/// between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistBin {
    pub low: f64,
    pub high: f64,
    pub count: u64,
}

/// Descriptive statistics of estimated per-sub-batch times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// (percentile, value) pairs.
    pub percentiles: Vec<(f64, f64)>,
    /// Coefficient of variation (population std / mean).
    pub cv: f64,
    pub bins: Vec<HistBin>,
}

impl TimingStats {
    /// Histogram as CSV with header `bin_low,bin_high,count`.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.low, b.high, b.count));
        }
        out
    }
}

/// Estimate times for each sub-batch and summarize the distribution.
pub fn timing_histogram(
    batches: &[SubBatch],
    model: &TimingModel,
    nbins: usize,
    pcts: &[f64],
) -> Result<TimingStats> {
    if batches.is_empty() {
        return Err(Error::Data("no sub-batches to summarize".into()));
    }
    let mut times: Vec<f64> = batches.iter().map(|b| model.estimate(b)).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
    let (min, max) = (times[0], times[times.len() - 1]);

    let nbins = nbins.max(1);
    let mut bins: Vec<HistBin> = if max > min {
        let width = (max - min) / nbins as f64;
        (0..nbins)
            .map(|i| HistBin {
                low: min + i as f64 * width,
                high: min + (i + 1) as f64 * width,
                count: 0,
            })
            .collect()
    } else {
        vec![HistBin {
            low: min,
            high: max,
            count: 0,
        }]
    };
    for &t in &times {
        let i = if max > min {
            (((t - min) / (max - min) * nbins as f64) as usize).min(nbins - 1)
        } else {
            0
        };
        bins[i].count += 1;
    }

    Ok(TimingStats {
        mean,
        min,
        max,
        percentiles: pcts.iter().map(|&p| (p, percentile(&times, p))).collect(),
        cv: if mean > 0.0 { var.sqrt() / mean } else { 0.0 },
        bins,
    })
}

/// Read measurements from CSV with header
/// `num_sentences,max_src_len,max_tgt_len,seconds`.
pub fn read_measurements_csv(path: &Path) -> Result<Vec<Measurement>> {
    let body = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 && line.starts_with("num_sentences") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Data(format!(
                "measurement line {} has {} columns, expected 4",
                lineno + 1,
                cols.len()
            )));
        }
        let parse_u = |s: &str| {
            s.trim()
                .parse::<u32>()
                .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))
        };
        let seconds = cols[3]
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Data(format!("line {}: {e}", lineno + 1)))?;
        out.push(Measurement {
            num_sentences: parse_u(cols[0])?,
            max_src_len: parse_u(cols[1])?,
            max_tgt_len: parse_u(cols[2])?,
            seconds,
        });
    }
    Ok(out)
}

pub fn write_measurements_csv(path: &Path, ms: &[Measurement]) -> Result<()> {
    let mut out = String::from("num_sentences,max_src_len,max_tgt_len,seconds\n");
    for m in ms {
        out.push_str(&format!(
            "{},{},{},{}\n",
            m.num_sentences, m.max_src_len, m.max_tgt_len, m.seconds
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
