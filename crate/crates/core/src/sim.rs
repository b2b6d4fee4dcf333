//! Synthetic labeled event data.
//!
//! A per-pixel log-intensity comparator driven by simple moving-object
//! scenes produces the real events; a Poisson background-activity injector
//! adds the noise. Both are keyed by `(seed, pixel)` on a counter-based
//! generator, so serial and parallel runs emit identical streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::event::{Event, Label, SensorGeometry};

/// Slack for log/exp round-off when a change lands exactly on the threshold.
const THRESHOLD_EPS: f64 = 1e-9;

/// Sub-pixel samples per axis when a pixel straddles an object edge.
const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    MovingBar,
    MovingDisk,
    TwoObjects,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving_bar" | "bar" => Ok(SceneKind::MovingBar),
            "moving_disk" | "disk" => Ok(SceneKind::MovingDisk),
            "two_objects" => Ok(SceneKind::TwoObjects),
            other => Err(Error::Config(format!("unknown scene kind {other:?}"))),
        }
    }
}

/// A bright object moving at constant velocity over a uniform background.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Pixels per second along x and y.
    pub velocity: [f64; 2],
    /// Bar thickness or disk diameter, pixels.
    pub object_size: f64,
    /// Object-to-background intensity ratio.
    pub contrast: f64,
    pub duration_us: u64,
    /// Internal sampling rate of the comparator, Hz.
    pub frame_rate: f64,
    /// Object centre at t = 0, pixel coordinates.
    pub origin: [f64; 2],
    pub background: f64,
    /// Relative standard deviation of the per-pixel threshold.
    pub threshold_jitter: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            kind: SceneKind::MovingBar,
            velocity: [100.0, 0.0],
            object_size: 6.0,
            contrast: 3.0,
            duration_us: 500_000,
            frame_rate: 1000.0,
            origin: [8.0, 32.0],
            background: 1.0,
            threshold_jitter: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidScene(m.to_string()));
        if self.duration_us == 0 {
            return bad("duration must be positive");
        }
        if !(self.frame_rate > 0.0) {
            return bad("frame_rate must be positive");
        }
        if !(self.contrast >= 1.0) {
            return bad("contrast must be at least 1");
        }
        if !(self.object_size > 0.0) {
            return bad("object_size must be positive");
        }
        if !(self.background > 0.0) {
            return bad("background intensity must be positive");
        }
        if !(self.threshold_jitter >= 0.0) {
            return bad("threshold_jitter must be non-negative");
        }
        if !self.velocity.iter().chain(&self.origin).all(|v| v.is_finite()) {
            return bad("velocity and origin must be finite");
        }
        let step = self.speed() / self.frame_rate;
        if step > 1.0 {
            return Err(Error::InvalidScene(format!(
                "frame_rate {} Hz moves the object {step:.3} px per step; at most 1 px allowed",
                self.frame_rate
            )));
        }
        Ok(())
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    /// A random bar or disk crossing the sensor near its centre at mid-duration.
    pub fn random(seed: u64, geometry: &SensorGeometry, duration_us: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = if rng.random_bool(0.5) {
            SceneKind::MovingBar
        } else {
            SceneKind::MovingDisk
        };
        let speed = rng.random_range(80.0..200.0);
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let velocity = [speed * angle.cos(), speed * angle.sin()];
        let object_size = match kind {
            SceneKind::MovingBar => rng.random_range(3.0..8.0),
            _ => rng.random_range(16.0..40.0),
        };
        let (w, h) = (geometry.width as f64, geometry.height as f64);
        let half = duration_us as f64 * 1e-6 / 2.0;
        let jitter = [rng.random_range(-0.15..0.15) * w, rng.random_range(-0.15..0.15) * h];
        let origin = [
            w / 2.0 + jitter[0] - velocity[0] * half,
            h / 2.0 + jitter[1] - velocity[1] * half,
        ];
        SceneSpec {
            kind,
            velocity,
            object_size,
            contrast: rng.random_range(2.0..4.0),
            duration_us,
            frame_rate: 1000.0,
            origin,
            background: 1.0,
            threshold_jitter: 0.05,
        }
    }

    fn objects(&self, geometry: &SensorGeometry) -> Vec<Object> {
        let dir = if self.speed() > 0.0 {
            [self.velocity[0] / self.speed(), self.velocity[1] / self.speed()]
        } else {
            [1.0, 0.0]
        };
        let half = self.object_size / 2.0;
        match self.kind {
            SceneKind::MovingBar => vec![Object::Bar {
                origin: self.origin,
                velocity: self.velocity,
                normal: dir,
                half,
            }],
            SceneKind::MovingDisk => vec![Object::Disk {
                origin: self.origin,
                velocity: self.velocity,
                radius: half,
            }],
            SceneKind::TwoObjects => {
                let mirrored = [
                    geometry.width as f64 - self.origin[0],
                    geometry.height as f64 - self.origin[1],
                ];
                vec![
                    Object::Disk {
                        origin: self.origin,
                        velocity: self.velocity,
                        radius: half,
                    },
                    Object::Bar {
                        origin: mirrored,
                        velocity: [-self.velocity[0], -self.velocity[1]],
                        normal: [-dir[0], -dir[1]],
                        half,
                    },
                ]
            }
        }
    }

    /// Scene intensity integrated over pixel `(x, y)` at time `t_sec`.
    pub fn intensity_at(&self, geometry: &SensorGeometry, x: u16, y: u16, t_sec: f64) -> f64 {
        let objects = self.objects(geometry);
        self.pixel_intensity(&objects, x, y, t_sec)
    }

    fn pixel_intensity(&self, objects: &[Object], x: u16, y: u16, t_sec: f64) -> f64 {
        let cov = objects
            .iter()
            .map(|o| o.coverage(x as f64, y as f64, t_sec))
            .sum::<f64>()
            .min(1.0);
        self.background * (1.0 + (self.contrast - 1.0) * cov)
    }
}

#[derive(Debug, Clone, Copy)]
enum Object {
    /// Infinite band `|(q - c(t)) . normal| <= half`.
    Bar {
        origin: [f64; 2],
        velocity: [f64; 2],
        normal: [f64; 2],
        half: f64,
    },
    Disk {
        origin: [f64; 2],
        velocity: [f64; 2],
        radius: f64,
    },
}

impl Object {
    fn centre(&self, t: f64) -> [f64; 2] {
        let (Object::Bar { origin, velocity, .. } | Object::Disk { origin, velocity, .. }) = *self;
        [origin[0] + velocity[0] * t, origin[1] + velocity[1] * t]
    }

    fn half_extent(&self) -> f64 {
        match *self {
            Object::Bar { half, .. } => half,
            Object::Disk { radius, .. } => radius,
        }
    }

    /// Distance of `q` from the object's axis (bar) or centre (disk).
    fn reach(&self, c: [f64; 2], qx: f64, qy: f64) -> f64 {
        match *self {
            Object::Bar { normal, .. } => ((qx - c[0]) * normal[0] + (qy - c[1]) * normal[1]).abs(),
            Object::Disk { .. } => (qx - c[0]).hypot(qy - c[1]),
        }
    }

    /// Fraction of the unit pixel square at `(px, py)` covered by the object.
    fn coverage(&self, px: f64, py: f64, t: f64) -> f64 {
        // half-diagonal of a pixel, rounded up
        const R_PIX: f64 = 0.7072;
        let c = self.centre(t);
        let h = self.half_extent();
        let s = self.reach(c, px + 0.5, py + 0.5);
        if s > h + R_PIX {
            return 0.0;
        }
        if s < h - R_PIX {
            return 1.0;
        }
        let step = 1.0 / SUPERSAMPLE as f64;
        let mut hits = 0usize;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let qx = px + (i as f64 + 0.5) * step;
                let qy = py + (j as f64 + 0.5) * step;
                if self.reach(c, qx, qy) <= h {
                    hits += 1;
                }
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }
}

/// Counter-based generator for one `(seed, stream)` pair.
pub(crate) fn keyed_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs the comparator over every pixel and returns the time-sorted events,
/// all labeled real, together with whether any pixel intensity changed.
pub fn render_events(scene: &SceneSpec, geometry: &SensorGeometry, seed: u64) -> Result<(Vec<Event>, bool)> {
    scene.validate()?;
    geometry.validate()?;
    let objects = scene.objects(geometry);
    let duration = scene.duration_us as f64 * 1e-6;
    let dt = 1.0 / scene.frame_rate;
    let steps = (duration * scene.frame_rate).ceil() as usize;
    let a = geometry.gain_a;
    let b = geometry.offset_b;
    let theta = geometry.threshold_theta;

    let rows: Vec<(Vec<Event>, bool)> = (0..geometry.height)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            let mut changed = false;
            for x in 0..geometry.width {
                let pixel = geometry.pixel_index(x, y) as u64;
                let theta_px = if scene.threshold_jitter > 0.0 {
                    let mut rng = keyed_rng(seed, pixel);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    theta * (1.0 + scene.threshold_jitter * z).max(0.05)
                } else {
                    theta
                };
                let mut last_i = scene.pixel_intensity(&objects, x, y, 0.0);
                let mut prev = (a * last_i + b).ln();
                let mut reference = prev;
                let mut t_prev = 0.0;
                for k in 1..=steps {
                    let t = (k as f64 * dt).min(duration);
                    let i = scene.pixel_intensity(&objects, x, y, t);
                    if i != last_i {
                        changed = true;
                        last_i = i;
                        let level = (a * i + b).ln();
                        let span = level - prev;
                        // linear interpolation of the log signal inside the step
                        while level - reference >= theta_px - THRESHOLD_EPS {
                            reference += theta_px;
                            let frac = ((reference - prev) / span).clamp(0.0, 1.0);
                            out.push(stamp(t_prev + frac * (t - t_prev), x, y, 1));
                        }
                        while level - reference <= -theta_px + THRESHOLD_EPS {
                            reference -= theta_px;
                            let frac = ((reference - prev) / span).clamp(0.0, 1.0);
                            out.push(stamp(t_prev + frac * (t - t_prev), x, y, -1));
                        }
                        prev = level;
                    }
                    t_prev = t;
                }
            }
            (out, changed)
        })
        .collect();

    let changed = rows.iter().any(|(_, c)| *c);
    let mut events: Vec<Event> = rows.into_iter().flat_map(|(e, _)| e).collect();
    // rows are concatenated in raster order, so the stable sort is deterministic
    events.sort_by_key(|e| e.t);
    Ok((events, changed))
}

fn stamp(t_sec: f64, x: u16, y: u16, p: i8) -> Event {
    Event::new((t_sec * 1e6).floor() as u64, x, y, p).with_label(Label::Real)
}

/// Simulates a scene; fails with `DegenerateScene` when nothing in view ever
/// changes brightness.
pub fn simulate_events(scene: &SceneSpec, geometry: &SensorGeometry, seed: u64) -> Result<Vec<Event>> {
    let (events, changed) = render_events(scene, geometry, seed)?;
    if !changed {
        return Err(Error::DegenerateScene);
    }
    Ok(events)
}

/// Background-activity noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    /// Events per pixel per second.
    pub eta: f64,
    /// When set, the total noise count is `round(ratio * real_count)` and
    /// `eta` is ignored.
    pub ratio: Option<f64>,
    pub seed: u64,
    /// Optional refractory interval after a real event during which the same
    /// pixel emits no noise.
    pub dead_time_us: Option<u64>,
}

impl NoiseSpec {
    pub fn rate(eta: f64, seed: u64) -> Self {
        NoiseSpec {
            eta,
            ratio: None,
            seed,
            dead_time_us: None,
        }
    }

    pub fn ratio(ratio: f64, seed: u64) -> Self {
        NoiseSpec {
            eta: 0.0,
            ratio: Some(ratio),
            seed,
            dead_time_us: None,
        }
    }
}

struct DeadTimes {
    by_pixel: Vec<Vec<u64>>,
    dead: u64,
}

impl DeadTimes {
    fn new(stream: &[Event], geometry: &SensorGeometry, dead: u64) -> Self {
        let mut by_pixel = vec![Vec::new(); geometry.pixel_count()];
        for e in stream {
            by_pixel[geometry.pixel_index(e.x, e.y)].push(e.t);
        }
        for v in &mut by_pixel {
            v.sort_unstable();
        }
        DeadTimes { by_pixel, dead }
    }

    fn blocked(&self, pixel: usize, t: u64) -> bool {
        let times = &self.by_pixel[pixel];
        // latest real event at or before t
        let idx = times.partition_point(|&s| s <= t);
        idx > 0 && t - times[idx - 1] < self.dead
    }
}

/// Adds Noise-labeled background activity to `stream` over `[0, duration_us)`.
pub fn inject_ba_noise(
    stream: &[Event],
    spec: &NoiseSpec,
    geometry: &SensorGeometry,
    duration_us: u64,
) -> Result<Vec<Event>> {
    geometry.validate()?;
    if !(spec.eta >= 0.0) {
        return Err(Error::Config("noise rate must be non-negative".into()));
    }
    let dead = spec
        .dead_time_us
        .filter(|&d| d > 0)
        .map(|d| DeadTimes::new(stream, geometry, d));

    let mut noise = match spec.ratio {
        Some(ratio) => {
            if !(ratio >= 0.0) {
                return Err(Error::Config("noise ratio must be non-negative".into()));
            }
            ratio_noise(stream.len(), ratio, spec.seed, geometry, duration_us, dead.as_ref())?
        }
        None => rate_noise(spec, geometry, duration_us, dead.as_ref()),
    };
    if noise.is_empty() {
        return Ok(stream.to_vec());
    }
    noise.sort_by_key(|e| (e.t, e.y, e.x));
    let mut out = Vec::with_capacity(stream.len() + noise.len());
    out.extend_from_slice(stream);
    out.extend(noise);
    // stable: real events stay ahead of noise at equal timestamps
    out.sort_by_key(|e| e.t);
    Ok(out)
}

fn rate_noise(spec: &NoiseSpec, geometry: &SensorGeometry, duration_us: u64, dead: Option<&DeadTimes>) -> Vec<Event> {
    let mean = spec.eta * duration_us as f64 * 1e-6;
    if mean <= 0.0 || duration_us == 0 {
        return Vec::new();
    }
    let poisson = Poisson::new(mean).expect("positive finite mean");
    (0..geometry.height)
        .into_par_iter()
        .flat_map_iter(|y| {
            let mut row = Vec::new();
            for x in 0..geometry.width {
                let pixel = geometry.pixel_index(x, y);
                let mut rng = keyed_rng(spec.seed, pixel as u64);
                let n = poisson.sample(&mut rng) as u64;
                for _ in 0..n {
                    let t = rng.random_range(0..duration_us);
                    let p = if rng.random_bool(0.5) { 1 } else { -1 };
                    if dead.is_some_and(|d| d.blocked(pixel, t)) {
                        continue;
                    }
                    row.push(Event::new(t, x, y, p).with_label(Label::Noise));
                }
            }
            row
        })
        .collect()
}

fn ratio_noise(
    real_count: usize,
    ratio: f64,
    seed: u64,
    geometry: &SensorGeometry,
    duration_us: u64,
    dead: Option<&DeadTimes>,
) -> Result<Vec<Event>> {
    let target = (ratio * real_count as f64).round() as usize;
    if target == 0 {
        return Ok(Vec::new());
    }
    if duration_us == 0 {
        return Err(Error::Config("noise duration must be positive".into()));
    }
    let mut rng = keyed_rng(seed, u64::MAX);
    let mut out = Vec::with_capacity(target);
    let mut attempts = 0usize;
    while out.len() < target {
        attempts += 1;
        if attempts > target.saturating_mul(1000) {
            return Err(Error::Config("dead time leaves no room for the requested noise".into()));
        }
        let x = rng.random_range(0..geometry.width);
        let y = rng.random_range(0..geometry.height);
        let t = rng.random_range(0..duration_us);
        let p = if rng.random_bool(0.5) { 1 } else { -1 };
        if dead.is_some_and(|d| d.blocked(geometry.pixel_index(x, y), t)) {
            continue;
        }
        out.push(Event::new(t, x, y, p).with_label(Label::Noise));
    }
    Ok(out)
}

/// Probability that a pixel with noise rate `eta` fires exactly `n` times in
/// an interval of length `t` (same time unit as `1 / eta`).
pub fn poisson_count_pmf(n: u64, eta: f64, t: f64) -> f64 {
    let mean = eta * t;
    if mean == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (n as f64 * mean.ln() - mean - ln_factorial(n)).exp()
}
