//! Score statistics over image sets and training runs, run comparison and
//! montages.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::pgm::export_pgm;
use crate::dataset::DatasetError;
use crate::topology::{recolor, score_label_or_zero, score_or_zero, GrayImage, ScoreConfig, NUM_LABELS};
use crate::training::MetricsRow;

/// Trailing window used when none is given.
pub const DEFAULT_WINDOW: usize = 5000;
/// Slope magnitude, per 1000 iterations, below which a run has no trend.
pub const NO_TREND_SLOPE: f64 = 0.05;
/// White border between montage tiles, in pixels.
pub const GUTTER: usize = 2;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("images differ in size")]
    MixedSizes,
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Sum by a fixed binary tree, so the result does not depend on how the
/// terms were computed.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

/// Exact per-image scores, blank images scoring 0.
pub fn batch_scores(images: &[&GrayImage], cfg: &ScoreConfig) -> Vec<f64> {
    images.par_iter().map(|img| score_or_zero(img, cfg)).collect()
}

pub fn batch_mean_score(images: &[&GrayImage], cfg: &ScoreConfig) -> Result<f64, EvalError> {
    if images.is_empty() {
        return Err(EvalError::EmptyBatch);
    }
    Ok(pairwise_sum(&batch_scores(images, cfg)) / images.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreHistogram {
    pub counts: [usize; NUM_LABELS],
    pub scores: Vec<f64>,
}

impl ScoreHistogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Largest over smallest count among `bins`; infinite if one is empty.
    pub fn max_min_ratio(&self, bins: impl IntoIterator<Item = usize>) -> f64 {
        let picked: Vec<usize> = bins.into_iter().map(|b| self.counts[b]).collect();
        let max = picked.iter().copied().max().unwrap_or(0);
        match picked.iter().copied().min() {
            Some(0) | None => f64::INFINITY,
            Some(min) => max as f64 / min as f64,
        }
    }
}

pub fn score_histogram(images: &[&GrayImage], cfg: &ScoreConfig) -> ScoreHistogram {
    let labels: Vec<u8> = images.par_iter().map(|img| score_label_or_zero(img, cfg)).collect();
    let mut counts = [0; NUM_LABELS];
    for l in labels {
        counts[l as usize] += 1;
    }
    ScoreHistogram {
        counts,
        scores: batch_scores(images, cfg),
    }
}

/// Ordinary least-squares slope of `y` on `x`; 0 with fewer than two
/// distinct abscissae.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    if x.len() < 2 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}

/// Statistics of the mean-score column over the last `window` metrics rows.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTrend {
    pub iterations: Vec<usize>,
    pub scores: Vec<f64>,
    pub requested_window: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Least-squares slope, score per 1000 iterations.
    pub slope_per_1000: f64,
    pub mean_proxy: f64,
    pub mean_frac_label10: f64,
}

impl ScoreTrend {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// The window was larger than the run and was cut to its length.
    pub fn clamped(&self) -> bool {
        self.requested_window > self.scores.len()
    }

    /// Slope line plus a warning when the window was clamped.
    pub fn describe(&self, name: &str) -> String {
        let trend = if self.slope_per_1000.abs() < NO_TREND_SLOPE { "no trend" } else { "trending" };
        let mut v = format!("{name}: slope {:+.4} per 1000 iterations ({trend})\n", self.slope_per_1000);
        if self.clamped() {
            let _ = writeln!(v, "warning: {name} has {} rows, window {} clamped", self.len(), self.requested_window);
        }
        v
    }

    /// `metric,run_a,run_b,gap` rows for a single run; the other columns
    /// stay empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,run_a,run_b,gap\n");
        for (name, x) in self.csv_values() {
            let _ = writeln!(out, "{name},{x:.6},,");
        }
        out
    }

    fn csv_values(&self) -> [(&'static str, f64); 6] {
        [
            ("window_rows", self.len() as f64),
            ("mean_score", self.mean),
            ("std_score", self.std),
            ("slope_per_1000", self.slope_per_1000),
            ("mean_proxy", self.mean_proxy),
            ("frac_label10", self.mean_frac_label10),
        ]
    }
}

pub fn score_trend(rows: &[MetricsRow], window: usize) -> ScoreTrend {
    let tail = &rows[rows.len().saturating_sub(window)..];
    let iterations: Vec<usize> = tail.iter().map(|r| r.iter).collect();
    let scores: Vec<f64> = tail.iter().map(|r| r.mean_score).collect();
    let n = scores.len().max(1) as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let std = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
    let x: Vec<f64> = iterations.iter().map(|&i| i as f64 / 1000.0).collect();
    let col_mean = |f: fn(&MetricsRow) -> f64| tail.iter().map(f).sum::<f64>() / n;
    ScoreTrend {
        slope_per_1000: least_squares_slope(&x, &scores),
        mean_proxy: col_mean(|r| r.mean_proxy),
        mean_frac_label10: col_mean(|r| r.frac_label10),
        iterations,
        scores,
        requested_window: window,
        mean,
        std,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunComparison {
    pub a: ScoreTrend,
    pub b: ScoreTrend,
    /// Window mean of `a` minus that of `b`.
    pub gap: f64,
    pub pooled_std: f64,
    /// `gap` over its pooled standard error.
    pub t_stat: f64,
}

pub fn compare_runs(a: &[MetricsRow], b: &[MetricsRow], window: usize) -> RunComparison {
    let (ta, tb) = (score_trend(a, window), score_trend(b, window));
    let gap = ta.mean - tb.mean;
    let (na, nb) = (ta.len() as f64, tb.len() as f64);
    let ss = |t: &ScoreTrend| t.std.powi(2) * t.len() as f64;
    let dof = na + nb - 2.0;
    let pooled_std = if dof > 0.0 { ((ss(&ta) + ss(&tb)) / dof).sqrt() } else { 0.0 };
    let se = pooled_std * (1.0 / na.max(1.0) + 1.0 / nb.max(1.0)).sqrt();
    let t_stat = if se > 0.0 {
        gap / se
    } else if gap == 0.0 {
        0.0
    } else {
        gap.signum() * f64::INFINITY
    };
    RunComparison {
        a: ta,
        b: tb,
        gap,
        pooled_std,
        t_stat,
    }
}

impl RunComparison {
    /// `metric,run_a,run_b,gap` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,run_a,run_b,gap\n");
        for ((name, x), (_, y)) in self.a.csv_values().into_iter().zip(self.b.csv_values()) {
            let _ = writeln!(out, "{name},{x:.6},{y:.6},{:.6}", x - y);
        }
        out
    }

    pub fn verdict(&self) -> String {
        let mut v = format!(
            "window mean score: run_a {:.4}, run_b {:.4}, gap {:+.4} (pooled std {:.4}, t = {:.2})\n",
            self.a.mean, self.b.mean, self.gap, self.pooled_std, self.t_stat
        );
        let sig = if self.t_stat.abs() >= 1.96 { "significant" } else { "not significant" };
        let _ = writeln!(v, "difference is {sig} at the 5% level (|t| >= 1.96)");
        v.push_str(&self.a.describe("run_a"));
        v.push_str(&self.b.describe("run_b"));
        v
    }
}

/// Near-square grid of equally sized images, row-major, separated by white
/// gutters. With `recolor` each tile shows its largest component in black
/// and the others in grays; blank tiles stay blank.
pub fn montage(images: &[&GrayImage], recolored: bool, cfg: &ScoreConfig) -> Result<GrayImage, EvalError> {
    let first = images.first().ok_or(EvalError::EmptyBatch)?;
    let (h, w) = (first.height(), first.width());
    if images.iter().any(|i| (i.height(), i.width()) != (h, w)) {
        return Err(EvalError::MixedSizes);
    }
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    let (mh, mw) = (rows * h + (rows - 1) * GUTTER, cols * w + (cols - 1) * GUTTER);
    let mut px = vec![0.0f32; mh * mw];
    for (k, img) in images.iter().enumerate() {
        let tile = if recolored {
            recolor(img, cfg).unwrap_or_else(|_| GrayImage::zeros(h, w))
        } else {
            (*img).clone()
        };
        let (oy, ox) = ((k / cols) * (h + GUTTER), (k % cols) * (w + GUTTER));
        for y in 0..h {
            let dst = (oy + y) * mw + ox;
            px[dst..dst + w].copy_from_slice(&tile.pixels()[y * w..(y + 1) * w]);
        }
    }
    Ok(GrayImage::new(mh, mw, px).expect("montage dimensions"))
}

pub fn render_montage(images: &[&GrayImage], path: &Path, recolored: bool, cfg: &ScoreConfig) -> Result<GrayImage, EvalError> {
    let m = montage(images, recolored, cfg)?;
    export_pgm(&m, path)?;
    Ok(m)
}
