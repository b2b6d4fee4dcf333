//! Baseline filters, the survivor SNR, classification metrics and the
//! throughput harness.

use std::collections::VecDeque;
use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::event::{Event, Label, SensorGeometry};

/// `factor * log10(M / N)` with M surviving real and N surviving noise
/// events. M = 0 gives negative infinity (also when N = 0), otherwise N = 0
/// gives positive infinity.
pub fn snr_from_counts(m: u64, n: u64, factor: f64) -> f64 {
    if m == 0 {
        f64::NEG_INFINITY
    } else if n == 0 {
        f64::INFINITY
    } else {
        factor * (m as f64 / n as f64).log10()
    }
}

/// Survivor counts `(M, N)`: events predicted Real that are truly Real, and
/// those that are truly Noise.
pub fn survivor_counts(truth: &[Label], predicted: &[Label]) -> (u64, u64) {
    assert_eq!(truth.len(), predicted.len());
    let mut m = 0;
    let mut n = 0;
    for (&t, &p) in truth.iter().zip(predicted) {
        if p == Label::Real {
            match t {
                Label::Real => m += 1,
                Label::Noise => n += 1,
                Label::Unknown => {}
            }
        }
    }
    (m, n)
}

/// SNR of the denoised output in dB.
pub fn snr_db(truth: &[Label], predicted: &[Label], factor: f64) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::EmptyStream);
    }
    let (m, n) = survivor_counts(truth, predicted);
    Ok(snr_from_counts(m, n, factor))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub baf_dt: u64,
    pub radius: u16,
    pub nnb_count: usize,
    pub nnb_dt: u64,
    pub rp_period: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            baf_dt: 2000,
            radius: 1,
            nnb_count: 2,
            nnb_dt: 5000,
            rp_period: 500,
        }
    }
}

fn neighborhood(e: &Event, radius: u16, geometry: &SensorGeometry) -> impl Iterator<Item = usize> {
    let w = geometry.width as usize;
    let r = radius as i32;
    let (cx, cy) = (e.x as i32, e.y as i32);
    let (gw, gh) = (geometry.width as i32, geometry.height as i32);
    (-r..=r)
        .flat_map(move |dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(move |&(dx, dy)| {
            let (x, y) = (cx + dx, cy + dy);
            (dx, dy) != (0, 0) && x >= 0 && y >= 0 && x < gw && y < gh
        })
        .map(move |(dx, dy)| (cy + dy) as usize * w + (cx + dx) as usize)
}

/// Background activity filter: Real when some neighboring pixel (own pixel
/// excluded) fired within `baf_dt` before the event.
pub fn baf_filter(stream: &[Event], geometry: &SensorGeometry, config: &FilterConfig) -> Vec<Label> {
    let mut last: Vec<Option<u64>> = vec![None; geometry.pixel_count()];
    stream
        .iter()
        .map(|e| {
            let supported =
                neighborhood(e, config.radius, geometry).any(|i| last[i].is_some_and(|t| e.t - t <= config.baf_dt));
            last[geometry.pixel_index(e.x, e.y)] = Some(e.t);
            if supported {
                Label::Real
            } else {
                Label::Noise
            }
        })
        .collect()
}

/// Nearest-neighbor filter: Real when at least `nnb_count` prior events on
/// neighboring pixels (own pixel excluded) lie within `nnb_dt`.
pub fn nnb_filter(stream: &[Event], geometry: &SensorGeometry, config: &FilterConfig) -> Vec<Label> {
    let mut recent: Vec<VecDeque<u64>> = vec![VecDeque::new(); geometry.pixel_count()];
    stream
        .iter()
        .map(|e| {
            let mut count = 0usize;
            for i in neighborhood(e, config.radius, geometry) {
                let q = &mut recent[i];
                while q.front().is_some_and(|&t| e.t - t > config.nnb_dt) {
                    q.pop_front();
                }
                count += q.len();
            }
            recent[geometry.pixel_index(e.x, e.y)].push_back(e.t);
            if count >= config.nnb_count {
                Label::Real
            } else {
                Label::Noise
            }
        })
        .collect()
}

/// Refractory filter: Noise when the same pixel fired within `rp_period`
/// before the event.
pub fn rp_filter(stream: &[Event], geometry: &SensorGeometry, config: &FilterConfig) -> Vec<Label> {
    let mut last: Vec<Option<u64>> = vec![None; geometry.pixel_count()];
    stream
        .iter()
        .map(|e| {
            let i = geometry.pixel_index(e.x, e.y);
            let refractory = last[i].is_some_and(|t| e.t - t <= config.rp_period);
            last[i] = Some(e.t);
            if refractory {
                Label::Noise
            } else {
                Label::Real
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confusion {
    pub true_positive: u64,
    pub false_positive: u64,
    pub true_negative: u64,
    pub false_negative: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Real is the positive class; Unknown truth is ignored. An empty
/// denominator gives precision or recall of 1.
pub fn confusion_metrics(predicted: &[Label], truth: &[Label]) -> Confusion {
    assert_eq!(predicted.len(), truth.len());
    let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p == Label::Real, t) {
            (_, Label::Unknown) => {}
            (true, Label::Real) => tp += 1,
            (true, Label::Noise) => fp += 1,
            (false, Label::Noise) => tn += 1,
            (false, Label::Real) => fn_ += 1,
        }
    }
    let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let total = tp + fp + tn + fn_;
    Confusion {
        true_positive: tp,
        false_positive: fp,
        true_negative: tn,
        false_negative: fn_,
        precision,
        recall,
        f1,
        accuracy: ratio(tp + tn, total),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseResult {
    pub labels: Vec<Label>,
    pub wall_seconds: f64,
    pub events: usize,
    /// Forward passes for the network, per-event decisions for filters.
    pub inferences: usize,
}

pub trait Denoiser: Sync {
    fn name(&self) -> String;
    /// Events labeled by one inference.
    fn events_per_inference(&self) -> usize;
    fn label(&self, stream: &[Event], geometry: &SensorGeometry) -> Result<Vec<Label>>;

    fn denoise(&self, stream: &[Event], geometry: &SensorGeometry) -> Result<DenoiseResult> {
        let start = Instant::now();
        let labels = self.label(stream, geometry)?;
        let wall_seconds = start.elapsed().as_secs_f64();
        let per = self.events_per_inference().max(1);
        Ok(DenoiseResult {
            inferences: stream.len().div_ceil(per),
            events: stream.len(),
            wall_seconds,
            labels,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Baf,
    Nnb,
    Rp,
}

#[derive(Debug, Clone, Copy)]
pub struct FilterDenoiser {
    pub kind: FilterKind,
    pub config: FilterConfig,
}

impl Denoiser for FilterDenoiser {
    fn name(&self) -> String {
        match self.kind {
            FilterKind::Baf => "baf",
            FilterKind::Nnb => "nnb",
            FilterKind::Rp => "rp",
        }
        .to_string()
    }

    fn events_per_inference(&self) -> usize {
        1
    }

    fn label(&self, stream: &[Event], geometry: &SensorGeometry) -> Result<Vec<Label>> {
        Ok(match self.kind {
            FilterKind::Baf => baf_filter(stream, geometry, &self.config),
            FilterKind::Nnb => nnb_filter(stream, geometry, &self.config),
            FilterKind::Rp => rp_filter(stream, geometry, &self.config),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub events: usize,
    pub median_seconds: f64,
    pub events_per_second: f64,
    pub events_per_inference: usize,
    /// Present when the stream carries ground truth.
    pub snr_db: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub labels: Vec<Label>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `denoiser` `repetitions` times on a single worker thread and
/// reports the median wall time. Quality columns are filled when the stream
/// is labeled.
pub fn bench(
    denoiser: &dyn Denoiser,
    stream: &[Event],
    geometry: &SensorGeometry,
    repetitions: usize,
    snr_factor: f64,
) -> Result<BenchRow> {
    if repetitions < 3 {
        return Err(Error::Config(format!(
            "bench needs at least 3 repetitions, got {repetitions}"
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    let mut times = Vec::with_capacity(repetitions);
    let mut labels = Vec::new();
    for _ in 0..repetitions {
        let r = pool.install(|| denoiser.denoise(stream, geometry))?;
        times.push(r.wall_seconds);
        labels = r.labels;
    }
    let median_seconds = median(times);
    let truth: Vec<Label> = stream.iter().map(|e| e.label).collect();
    let labeled = truth.iter().any(|&l| l != Label::Unknown);
    let (snr, precision, recall) = if labeled && !stream.is_empty() {
        let c = confusion_metrics(&labels, &truth);
        (
            Some(snr_db(&truth, &labels, snr_factor)?),
            Some(c.precision),
            Some(c.recall),
        )
    } else {
        (None, None, None)
    };
    Ok(BenchRow {
        method: denoiser.name(),
        events: stream.len(),
        median_seconds,
        events_per_second: if median_seconds > 0.0 {
            stream.len() as f64 / median_seconds
        } else {
            f64::INFINITY
        },
        events_per_inference: denoiser.events_per_inference(),
        snr_db: snr,
        precision,
        recall,
        labels,
    })
}

pub const BENCH_COLUMNS: [&str; 8] = [
    "method",
    "events",
    "median_seconds",
    "events_per_second",
    "events_per_inference",
    "SNR_dB",
    "precision",
    "recall",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// Comma-separated report with the fixed column set.
pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Internal(e.to_string());
    out.write_record(BENCH_COLUMNS).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.method.clone(),
            r.events.to_string(),
            format!("{}", r.median_seconds),
            format!("{}", r.events_per_second),
            r.events_per_inference.to_string(),
            opt(r.snr_db),
            opt(r.precision),
            opt(r.recall),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Human-readable table of the same rows.
pub fn write_bench_table<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(
        w,
        "{:<8} {:>10} {:>12} {:>14} {:>10} {:>9} {:>9} {:>9}",
        "method", "events", "median_s", "events/s", "per_inf", "SNR_dB", "prec", "recall"
    )?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into());
    for r in rows {
        writeln!(
            w,
            "{:<8} {:>10} {:>12.6} {:>14.0} {:>10} {:>9} {:>9} {:>9}",
            r.method,
            r.events,
            r.median_seconds,
            r.events_per_second,
            r.events_per_inference,
            f(r.snr_db),
            f(r.precision),
            f(r.recall)
        )?;
    }
    Ok(())
}
