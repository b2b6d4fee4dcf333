//! Event data model, stream validation and window partitioning.

use crate::error::{Error, Result};

/// Ground-truth or predicted class of an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Label {
    #[default]
    Unknown,
    Real,
    Noise,
}

impl Label {
    pub fn to_byte(self) -> u8 {
        match self {
            Label::Unknown => 0,
            Label::Real => 1,
            Label::Noise => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Label> {
        match b {
            0 => Some(Label::Unknown),
            1 => Some(Label::Real),
            2 => Some(Label::Noise),
            _ => None,
        }
    }
}

/// One sensor firing.
///
/// `p` is stored as the signed byte used on disk; a validated stream only
/// holds -1 or +1 (a zero comparator output means no event was emitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
    pub label: Label,
}

impl Event {
    pub fn new(t: u64, x: u16, y: u16, p: i8) -> Self {
        Event {
            t,
            x,
            y,
            p,
            label: Label::Unknown,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = label;
        self
    }
}

/// Pixel-array dimensions plus the sensor-model constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorGeometry {
    pub width: u16,
    pub height: u16,
    /// Gain of the log amplifier.
    pub gain_a: f64,
    /// Intensity offset guarding `log(0)`.
    pub offset_b: f64,
    /// Comparator threshold on the log-intensity change.
    pub threshold_theta: f64,
    /// Background-activity rate, events per pixel per second.
    pub noise_rate_eta: f64,
}

impl SensorGeometry {
    pub const DEFAULT_THRESHOLD: f64 = 0.2;

    pub fn new(width: u16, height: u16) -> Self {
        SensorGeometry {
            width,
            height,
            gain_a: 1.0,
            offset_b: 1.0,
            threshold_theta: Self::DEFAULT_THRESHOLD,
            noise_rate_eta: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("sensor dimensions must be at least 1".into()));
        }
        if !(self.threshold_theta > 0.0) {
            return Err(Error::Config("threshold_theta must be positive".into()));
        }
        if !(self.noise_rate_eta >= 0.0) {
            return Err(Error::Config("noise_rate_eta must be non-negative".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    #[inline]
    pub fn pixel_index(&self, x: u16, y: u16) -> usize {
        y as usize * self.width as usize + x as usize
    }

    pub fn contains(&self, e: &Event) -> bool {
        e.x < self.width && e.y < self.height
    }
}

/// Checks bounds and polarity, then stable-sorts by timestamp.
pub fn validate_stream(mut events: Vec<Event>, geometry: &SensorGeometry) -> Result<Vec<Event>> {
    for (index, e) in events.iter().enumerate() {
        if !geometry.contains(e) {
            return Err(Error::OutOfBounds { index });
        }
        if e.p != 1 && e.p != -1 {
            return Err(Error::NegativePolarityEncoding { index, value: e.p });
        }
    }
    // sort_by_key is stable: equal timestamps keep input order
    if !events.windows(2).all(|w| w[0].t <= w[1].t) {
        events.sort_by_key(|e| e.t);
    }
    Ok(events)
}

/// A time-ordered stack of events processed as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub events: Vec<Event>,
    /// Offset of the first event in the source stream.
    pub start: usize,
    pub t_min: u64,
    pub t_max: u64,
    pub t_mu: f64,
    /// Set on the trailing window when the stream length is not a multiple of `w`.
    pub is_tail: bool,
}

impl EventWindow {
    pub fn new(events: Vec<Event>, start: usize, is_tail: bool) -> Self {
        let t_min = events.first().map_or(0, |e| e.t);
        let t_max = events.last().map_or(0, |e| e.t);
        let t_mu = mean_timestamp(&events);
        EventWindow {
            events,
            start,
            t_min,
            t_max,
            t_mu,
            is_tail,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = u64> + '_ {
        self.events.iter().map(|e| e.t)
    }
}

/// Mean timestamp, accumulated relative to the first event so large absolute
/// clocks do not lose precision.
pub(crate) fn mean_timestamp(events: &[Event]) -> f64 {
    let Some(first) = events.first() else {
        return 0.0;
    };
    let base = first.t;
    let sum: f64 = events.iter().map(|e| e.t.wrapping_sub(base) as f64).sum();
    let mean = base as f64 + sum / events.len() as f64;
    // clamp against rounding past the extremes
    let lo = events.iter().map(|e| e.t).min().unwrap_or(base) as f64;
    let hi = events.iter().map(|e| e.t).max().unwrap_or(base) as f64;
    mean.clamp(lo, hi)
}

/// Splits a validated stream into consecutive windows of exactly `w` events.
/// A shorter remainder is kept as a tail window.
pub fn partition_windows(stream: &[Event], w: usize) -> Vec<EventWindow> {
    assert!(w >= 1, "window size must be at least 1");
    stream
        .chunks(w)
        .enumerate()
        .map(|(i, chunk)| EventWindow::new(chunk.to_vec(), i * w, chunk.len() < w))
        .collect()
}
