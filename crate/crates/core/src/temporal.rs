//! Temporal Window (TW) filter.
//!
//! Timestamps of one movement are scored with a discrete Gaussian around the
//! window mean; events farther than `t_lim` from the mean are dropped.

use crate::error::{Error, Result};
use crate::event::{Event, EventWindow};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalStats {
    pub t_mu: f64,
    /// Population standard deviation of the timestamps.
    pub sigma: f64,
    pub t_min: u64,
    pub t_max: u64,
    pub count: usize,
}

impl TemporalStats {
    pub fn from_timestamps(ts: &[u64]) -> Option<Self> {
        if ts.is_empty() {
            return None;
        }
        let n = ts.len() as f64;
        let t_min = *ts.iter().min()?;
        let t_max = *ts.iter().max()?;
        let mean_off = ts.iter().map(|&t| (t - t_min) as f64).sum::<f64>() / n;
        let var = ts
            .iter()
            .map(|&t| {
                let d = (t - t_min) as f64 - mean_off;
                d * d
            })
            .sum::<f64>()
            / n;
        Some(TemporalStats {
            t_mu: (t_min as f64 + mean_off).clamp(t_min as f64, t_max as f64),
            sigma: var.sqrt(),
            t_min,
            t_max,
            count: ts.len(),
        })
    }

    pub fn from_window(window: &EventWindow) -> Option<Self> {
        let ts: Vec<u64> = window.timestamps().collect();
        Self::from_timestamps(&ts)
    }

    pub fn span(&self) -> f64 {
        (self.t_max - self.t_min) as f64
    }

    /// Unnormalized log-density `-(t - t_mu)^2 / (2 sigma^2)`.
    pub fn log_kernel(&self, t: f64) -> f64 {
        let d = t - self.t_mu;
        -(d * d) / (2.0 * self.sigma * self.sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwConfig {
    /// Events assumed to describe one transient movement.
    pub events_per_movement: usize,
    /// Fixed window half-width in microseconds; bypasses the adaptive rule.
    pub explicit_t_lim: Option<f64>,
}

impl Default for TwConfig {
    fn default() -> Self {
        TwConfig {
            events_per_movement: 500,
            explicit_t_lim: None,
        }
    }
}

/// Discrete-Gaussian probability of timestamp `t` within the window whose
/// timestamps are `window_ts`. Every event contributes one term to the
/// normalizer, duplicates included.
pub fn temporal_probability(t: u64, stats: &TemporalStats, window_ts: &[u64]) -> Result<f64> {
    if stats.sigma == 0.0 {
        return Err(Error::ZeroVariance);
    }
    temporal_probability_at(t as f64, stats, window_ts)
}

/// Same as [`temporal_probability`] for an arbitrary real-valued time.
pub fn temporal_probability_at(t: f64, stats: &TemporalStats, window_ts: &[u64]) -> Result<f64> {
    if stats.sigma == 0.0 {
        return Err(Error::ZeroVariance);
    }
    // shift by the largest exponent so the sum cannot underflow to zero
    let shift = window_ts
        .iter()
        .map(|&s| stats.log_kernel(s as f64))
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = window_ts
        .iter()
        .map(|&s| (stats.log_kernel(s as f64) - shift).exp())
        .sum();
    Ok((stats.log_kernel(t) - shift).exp() / z)
}

/// `(t_max - t_min) / floor(M / L)`, or the whole span when `M < L`.
pub fn adaptive_t_lim(stats: &TemporalStats, config: &TwConfig) -> f64 {
    if let Some(t) = config.explicit_t_lim {
        return t;
    }
    let groups = stats.count / config.events_per_movement.max(1);
    if groups >= 1 {
        stats.span() / groups as f64
    } else {
        stats.span()
    }
}

/// Keep mask over the window: `|t - t_mu| <= t_lim`, boundary inclusive.
pub fn tw_keep_mask(window: &EventWindow, t_lim: f64) -> Vec<bool> {
    window
        .events
        .iter()
        .map(|e| (e.t as f64 - window.t_mu).abs() <= t_lim)
        .collect()
}

/// Splits a window into (kept, dropped) events, each in window order.
pub fn tw_filter(window: &EventWindow, t_lim: f64) -> (Vec<Event>, Vec<Event>) {
    let mask = tw_keep_mask(window, t_lim);
    let mut kept = Vec::with_capacity(window.len());
    let mut dropped = Vec::new();
    for (e, keep) in window.events.iter().zip(mask) {
        if keep {
            kept.push(*e);
        } else {
            dropped.push(*e);
        }
    }
    (kept, dropped)
}

/// Keep mask from the probability form of the rule,
/// `p(t) >= p(t_mu - t_lim)`. The normalizer is shared by both sides so the
/// comparison is made on the log-kernel; a zero-variance window keeps all.
pub fn tw_keep_mask_by_probability(window: &EventWindow, t_lim: f64) -> Vec<bool> {
    let Some(stats) = TemporalStats::from_window(window) else {
        return Vec::new();
    };
    if stats.sigma == 0.0 {
        return vec![true; window.len()];
    }
    let stats = TemporalStats {
        t_mu: window.t_mu,
        ..stats
    };
    // kernel at distance t_lim, formed like log_kernel so equal distances compare equal
    let bound = -(t_lim * t_lim) / (2.0 * stats.sigma * stats.sigma);
    window
        .events
        .iter()
        .map(|e| stats.log_kernel(e.t as f64) >= bound)
        .collect()
}
