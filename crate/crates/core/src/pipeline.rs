//! Window-level denoising: partition, temporal window, bone check, network.

use rayon::prelude::*;

use crate::bec::{bone_flags, DEFAULT_TAU};
use crate::error::Result;
use crate::eval::Denoiser;
use crate::event::{partition_windows, Event, EventWindow, Label, SensorGeometry};
use crate::nn::{forward_plan, LabeledWindow, ModelParams, WindowPlan};
use crate::temporal::{adaptive_t_lim, tw_keep_mask, TemporalStats, TwConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    /// Events per window.
    pub window: usize,
    pub tw: TwConfig,
    pub tau: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            window: 4096,
            tw: TwConfig::default(),
            tau: DEFAULT_TAU,
        }
    }
}

/// Temporal-window keep mask for one window.
pub fn window_keep_mask(window: &EventWindow, tw: &TwConfig) -> Vec<bool> {
    match TemporalStats::from_window(window) {
        Some(stats) => tw_keep_mask(window, adaptive_t_lim(&stats, tw)),
        None => Vec::new(),
    }
}

/// Labels a whole stream with the temporal-window filter alone.
pub fn tw_labels(stream: &[Event], config: &PipelineConfig) -> Vec<Label> {
    partition_windows(stream, config.window)
        .iter()
        .flat_map(|w| window_keep_mask(w, &config.tw))
        .map(|keep| if keep { Label::Real } else { Label::Noise })
        .collect()
}

/// Events surviving the temporal window, their positions in the window and
/// their bone flags.
pub struct PreparedWindow {
    pub kept: Vec<Event>,
    pub positions: Vec<usize>,
    pub bone: Vec<bool>,
}

pub fn prepare_window(window: &EventWindow, geometry: &SensorGeometry, config: &PipelineConfig) -> PreparedWindow {
    let mask = window_keep_mask(window, &config.tw);
    let mut kept = Vec::with_capacity(window.len());
    let mut positions = Vec::with_capacity(window.len());
    for (i, (e, keep)) in window.events.iter().zip(mask).enumerate() {
        if keep {
            kept.push(*e);
            positions.push(i);
        }
    }
    let bone = bone_flags(&kept, geometry, config.tau);
    PreparedWindow { kept, positions, bone }
}

/// Training windows built from the temporal-window survivors.
pub fn labeled_windows(
    stream: &[Event],
    geometry: &SensorGeometry,
    config: &PipelineConfig,
    params_levels: &[crate::geometry::LevelSpec],
) -> Result<Vec<LabeledWindow>> {
    partition_windows(stream, config.window)
        .par_iter()
        .map(|w| {
            let prep = prepare_window(w, geometry, config);
            Ok(LabeledWindow {
                plan: WindowPlan::build(&prep.kept, &prep.bone, geometry, params_levels)?,
                truth: prep.kept.iter().map(|e| e.label).collect(),
            })
        })
        .collect()
}

/// The full window network as a denoiser.
pub struct WedNetDenoiser {
    pub params: ModelParams<f32>,
    pub config: PipelineConfig,
}

impl WedNetDenoiser {
    fn label_window(&self, window: &EventWindow, geometry: &SensorGeometry) -> Result<Vec<Label>> {
        let prep = prepare_window(window, geometry, &self.config);
        let mut labels = vec![Label::Noise; window.len()];
        let plan = WindowPlan::build(&prep.kept, &prep.bone, geometry, &self.params.shape.levels)?;
        let logits = forward_plan(&plan, &self.params)?.logits;
        for (&pos, &z) in prep.positions.iter().zip(&logits) {
            if z > 0.0 {
                labels[pos] = Label::Real;
            }
        }
        Ok(labels)
    }
}

impl Denoiser for WedNetDenoiser {
    fn name(&self) -> String {
        "wednet".into()
    }

    fn events_per_inference(&self) -> usize {
        self.config.window
    }

    fn label(&self, stream: &[Event], geometry: &SensorGeometry) -> Result<Vec<Label>> {
        let windows = partition_windows(stream, self.config.window);
        let per: Vec<Vec<Label>> = windows
            .par_iter()
            .map(|w| self.label_window(w, geometry))
            .collect::<Result<_>>()?;
        Ok(per.into_iter().flatten().collect())
    }
}

/// Temporal-window filter as a denoiser.
pub struct TwDenoiser {
    pub config: PipelineConfig,
}

impl Denoiser for TwDenoiser {
    fn name(&self) -> String {
        "tw".into()
    }

    fn events_per_inference(&self) -> usize {
        self.config.window
    }

    fn label(&self, stream: &[Event], _geometry: &SensorGeometry) -> Result<Vec<Label>> {
        Ok(tw_labels(stream, &self.config))
    }
}
