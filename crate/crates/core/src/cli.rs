//! The `wednet` command line.
//!
//! Every subcommand accepts `--config <file>`; its pairs are inserted ahead
//! of the real arguments so explicit flags win. The effective settings are
//! echoed next to the primary output as `<output>.cfg`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{read_config, render_config, to_flags};
use crate::error::{Error, Result};
use crate::eval::{
    bench, confusion_metrics, snr_db, survivor_counts, write_bench_csv, write_bench_table, Denoiser, FilterConfig,
    FilterDenoiser, FilterKind,
};
use crate::event::{Label, SensorGeometry};
use crate::geometry::LevelSpec;
use crate::io::{read_events, write_events, Format};
use crate::nn::{train, LabeledWindow, LcscHyperParams, ModelParams, NetworkShape, TrainConfig};
use crate::pipeline::{labeled_windows, PipelineConfig, TwDenoiser, WedNetDenoiser};
use crate::sim::{inject_ba_noise, simulate_events, NoiseSpec, SceneKind, SceneSpec};
use crate::temporal::TwConfig;

#[derive(Parser, Debug)]
#[command(name = "wednet", version, about = "Window-based event denoising toolkit")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic scene to a Real-only event stream.
    Simulate(SimulateArgs),
    /// Add background-activity noise to a stream.
    InjectNoise(InjectArgs),
    /// Label every event of a stream as Real or Noise.
    Denoise(DenoiseArgs),
    /// Train the window network on labeled streams.
    Train(TrainArgs),
    /// Compare denoisers on a stream.
    Eval(EvalArgs),
    /// Time denoisers and write a throughput report.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// key = value file with defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Event file format; defaults to the file extension (.txt/.csv text).
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Args, Debug, Clone)]
pub struct SensorArgs {
    #[arg(long, default_value_t = 128)]
    pub width: u16,
    #[arg(long, default_value_t = 128)]
    pub height: u16,
    /// Log-intensity contrast threshold.
    #[arg(long, default_value_t = SensorGeometry::DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

fn parse_pair(s: &str) -> std::result::Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| p.parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
    match parts.as_slice() {
        [a] => Ok([num(a)?, 0.0]),
        [a, b] => Ok([num(a)?, num(b)?]),
        _ => Err(format!("expected `x` or `x,y`, got {s:?}")),
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sensor: SensorArgs,
    #[arg(long)]
    pub output: PathBuf,
    /// moving_bar, moving_disk or two_objects.
    #[arg(long, default_value = "moving_bar")]
    pub scene: String,
    /// Pixels per second, `vx` or `vx,vy`.
    #[arg(long, value_parser = parse_pair, default_value = "100,0")]
    pub velocity: [f64; 2],
    #[arg(long, value_parser = parse_pair, default_value = "8,32")]
    pub origin: [f64; 2],
    #[arg(long, default_value_t = 6.0)]
    pub size: f64,
    #[arg(long, default_value_t = 3.0)]
    pub contrast: f64,
    #[arg(long, default_value_t = 500_000)]
    pub duration_us: u64,
    #[arg(long, default_value_t = 1000.0)]
    pub frame_rate: f64,
    /// Relative per-pixel threshold spread.
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Draw a random scene from the seed instead of the scene flags.
    #[arg(long)]
    pub random_scene: bool,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Noise events per pixel per second.
    #[arg(long, default_value_t = 0.0)]
    pub eta: f64,
    /// Noise count as a fraction of the real count; overrides --eta.
    #[arg(long)]
    pub ratio: Option<f64>,
    #[arg(long)]
    pub dead_time_us: Option<u64>,
    /// Noise interval length; defaults to the last timestamp plus one.
    #[arg(long)]
    pub duration_us: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct WindowArgs {
    /// Events per window.
    #[arg(long, default_value_t = 4096)]
    pub window: usize,
    /// Events per movement for the adaptive temporal limit.
    #[arg(long, default_value_t = 500)]
    pub events_per_movement: usize,
    /// Fixed temporal limit in microseconds.
    #[arg(long)]
    pub t_lim: Option<f64>,
    /// Minimum domain size of a bone event.
    #[arg(long, default_value_t = crate::bec::DEFAULT_TAU)]
    pub bec_tau: usize,
}

impl WindowArgs {
    fn pipeline(&self) -> Result<PipelineConfig> {
        if self.window == 0 || self.events_per_movement == 0 {
            return Err(Error::Config("window and events-per-movement must be positive".into()));
        }
        Ok(PipelineConfig {
            window: self.window,
            tw: TwConfig {
                events_per_movement: self.events_per_movement,
                explicit_t_lim: self.t_lim,
            },
            tau: self.bec_tau,
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct FilterArgs {
    #[arg(long, default_value_t = 2000)]
    pub baf_dt: u64,
    #[arg(long, default_value_t = 1)]
    pub radius: u16,
    #[arg(long, default_value_t = 2)]
    pub nnb_count: usize,
    #[arg(long, default_value_t = 5000)]
    pub nnb_dt: u64,
    #[arg(long, default_value_t = 500)]
    pub rp_period: u64,
    /// SNR scale: 20 (amplitude) or 10 (power).
    #[arg(long, default_value_t = 20.0)]
    pub snr_factor: f64,
}

impl FilterArgs {
    fn config(&self) -> FilterConfig {
        FilterConfig {
            baf_dt: self.baf_dt,
            radius: self.radius,
            nnb_count: self.nnb_count,
            nnb_dt: self.nnb_dt,
            rp_period: self.rp_period,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Raw,
    Tw,
    Baf,
    Nnb,
    Rp,
    Wednet,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub filters: FilterArgs,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub filter: Method,
    /// Trained parameters, required by the network.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct LevelArgs {
    /// Level preset: full, desk or tiny.
    #[arg(long, default_value = "desk")]
    pub levels: String,
    #[arg(long, value_delimiter = ',')]
    pub centroids: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub group_sizes: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub radii: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub channels: Option<Vec<usize>>,
    /// Sparse-coding iterations per level.
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
}

impl LevelArgs {
    fn shape(&self) -> Result<NetworkShape> {
        let mut levels = LevelSpec::preset(&self.levels)?;
        let n = levels.len();
        let check = |len: usize, what: &str| {
            if len == n {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} lists {len} values for {n} levels")))
            }
        };
        if let Some(t) = &self.centroids {
            check(t.len(), "centroids")?;
            levels.iter_mut().zip(t).for_each(|(l, &v)| l.centroids = v);
        }
        if let Some(k) = &self.group_sizes {
            check(k.len(), "group-sizes")?;
            for (l, &v) in levels.iter_mut().zip(k) {
                *l = LevelSpec::new(l.centroids, v, l.radius, l.channels);
            }
        }
        if let Some(r) = &self.radii {
            check(r.len(), "radii")?;
            levels.iter_mut().zip(r).for_each(|(l, &v)| l.radius = v);
        }
        if let Some(d) = &self.channels {
            check(d.len(), "channels")?;
            levels.iter_mut().zip(d).for_each(|(l, &v)| l.channels = v);
        }
        NetworkShape::new(levels)
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub levels: LevelArgs,
    /// Labeled training streams.
    #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
    pub input: Vec<PathBuf>,
    /// Labeled validation streams.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub val: Vec<PathBuf>,
    /// Checkpoint path; the history goes to `<output>.history.csv`.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Windows per update step.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Gradient norm cap per step; 0 disables it.
    #[arg(long, default_value_t = 1.0)]
    pub clip_norm: f64,
    /// Randomly keep at most this many windows per training file.
    #[arg(long)]
    pub windows_per_file: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub filters: FilterArgs,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "raw,tw,baf,nnb,rp")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Optional comma-separated report.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub window: WindowArgs,
    #[command(flatten)]
    pub filters: FilterArgs,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "baf,nnb,rp")]
    pub methods: Vec<Method>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub repetitions: usize,
    /// Comma-separated report; the table is also printed.
    #[arg(long)]
    pub output: PathBuf,
}

fn format_for(path: &Path, explicit: &Option<String>) -> Result<Format> {
    match explicit {
        Some(f) => f.parse(),
        None => Ok(Format::from_path(path)),
    }
}

fn cfg_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

/// Effective `key = value` pairs of a parsed subcommand, defaults included.
fn effective_pairs(matches: &ArgMatches) -> Vec<(String, String)> {
    let mut ids: Vec<String> = matches
        .ids()
        .map(|id| id.as_str().to_string())
        .filter(|id| id != "config")
        .collect();
    ids.sort();
    let mut pairs = Vec::new();
    for id in ids {
        let Ok(Some(raw)) = matches.try_get_raw(&id) else {
            continue;
        };
        let values: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        if values.is_empty() {
            continue;
        }
        pairs.push((id.replace('_', "-"), values.join(",")));
    }
    pairs
}

fn echo_config(output: &Path, matches: &ArgMatches) -> Result<()> {
    fs::write(cfg_path(output), render_config(&effective_pairs(matches)))?;
    Ok(())
}

fn load_params(path: &Option<PathBuf>) -> Result<ModelParams<f32>> {
    match path {
        Some(p) => ModelParams::read_checkpoint(p),
        None => Err(Error::MissingCheckpoint("--checkpoint is required for wednet".into())),
    }
}

fn make_denoiser(
    method: Method,
    filters: &FilterArgs,
    window: &WindowArgs,
    checkpoint: &Option<PathBuf>,
) -> Result<Box<dyn Denoiser>> {
    let config = filters.config();
    Ok(match method {
        Method::Raw => Box::new(RawDenoiser),
        Method::Tw => Box::new(TwDenoiser {
            config: window.pipeline()?,
        }),
        Method::Baf => Box::new(FilterDenoiser {
            kind: FilterKind::Baf,
            config,
        }),
        Method::Nnb => Box::new(FilterDenoiser {
            kind: FilterKind::Nnb,
            config,
        }),
        Method::Rp => Box::new(FilterDenoiser {
            kind: FilterKind::Rp,
            config,
        }),
        Method::Wednet => Box::new(WedNetDenoiser {
            params: load_params(checkpoint)?,
            config: window.pipeline()?,
        }),
    })
}

/// Keeps every event; the reference for raw SNR.
struct RawDenoiser;

impl Denoiser for RawDenoiser {
    fn name(&self) -> String {
        "raw".into()
    }

    fn events_per_inference(&self) -> usize {
        1
    }

    fn label(&self, stream: &[crate::event::Event], _g: &SensorGeometry) -> Result<Vec<Label>> {
        Ok(vec![Label::Real; stream.len()])
    }
}

fn has_truth(labels: &[Label]) -> bool {
    labels.iter().any(|&l| l != Label::Unknown)
}

fn cmd_simulate(a: &SimulateArgs, matches: &ArgMatches) -> Result<()> {
    let mut geometry = SensorGeometry::new(a.sensor.width, a.sensor.height);
    geometry.threshold_theta = a.sensor.threshold;
    geometry.validate()?;
    let scene = if a.random_scene {
        SceneSpec::random(a.common.seed, &geometry, a.duration_us)
    } else {
        SceneSpec {
            kind: a.scene.parse::<SceneKind>()?,
            velocity: a.velocity,
            object_size: a.size,
            contrast: a.contrast,
            duration_us: a.duration_us,
            frame_rate: a.frame_rate,
            origin: a.origin,
            threshold_jitter: a.jitter,
            ..SceneSpec::default()
        }
    };
    let events = simulate_events(&scene, &geometry, a.common.seed)?;
    write_events(&a.output, &events, &geometry, format_for(&a.output, &a.common.format)?)?;
    echo_config(&a.output, matches)?;
    println!("simulated {} events -> {}", events.len(), a.output.display());
    Ok(())
}

fn cmd_inject(a: &InjectArgs, matches: &ArgMatches) -> Result<()> {
    let (events, geometry) = read_events(&a.input, format_for(&a.input, &a.common.format)?)?;
    let duration = a.duration_us.unwrap_or_else(|| events.last().map_or(1, |e| e.t + 1));
    let spec = NoiseSpec {
        eta: a.eta,
        ratio: a.ratio,
        seed: a.common.seed,
        dead_time_us: a.dead_time_us,
    };
    if let Some(r) = a.ratio {
        if !(r >= 0.0) {
            return Err(Error::Config("ratio must be non-negative".into()));
        }
    }
    let mixed = inject_ba_noise(&events, &spec, &geometry, duration)?;
    write_events(&a.output, &mixed, &geometry, format_for(&a.output, &a.common.format)?)?;
    echo_config(&a.output, matches)?;
    println!(
        "added {} noise events ({} total) -> {}",
        mixed.len() - events.len(),
        mixed.len(),
        a.output.display()
    );
    Ok(())
}

fn print_quality(name: &str, truth: &[Label], predicted: &[Label], factor: f64) -> Result<()> {
    let kept = predicted.iter().filter(|&&l| l == Label::Real).count();
    if has_truth(truth) {
        let c = confusion_metrics(predicted, truth);
        let (m, n) = survivor_counts(truth, predicted);
        println!(
            "{name}: kept {kept}/{} real {m} noise {n} SNR {:.3} dB precision {:.4} recall {:.4} f1 {:.4}",
            truth.len(),
            snr_db(truth, predicted, factor)?,
            c.precision,
            c.recall,
            c.f1
        );
    } else {
        println!("{name}: kept {kept}/{} (no ground truth)", truth.len());
    }
    Ok(())
}

fn cmd_denoise(a: &DenoiseArgs, matches: &ArgMatches) -> Result<()> {
    let (events, geometry) = read_events(&a.input, format_for(&a.input, &a.common.format)?)?;
    let denoiser = make_denoiser(a.filter, &a.filters, &a.window, &a.checkpoint)?;
    let result = denoiser.denoise(&events, &geometry)?;
    let truth: Vec<Label> = events.iter().map(|e| e.label).collect();
    let labeled: Vec<_> = events
        .iter()
        .zip(&result.labels)
        .map(|(e, &l)| e.with_label(l))
        .collect();
    write_events(&a.output, &labeled, &geometry, format_for(&a.output, &a.common.format)?)?;
    echo_config(&a.output, matches)?;
    print_quality(&denoiser.name(), &truth, &result.labels, a.filters.snr_factor)
}

fn cmd_train(a: &TrainArgs, matches: &ArgMatches) -> Result<()> {
    let shape = a.levels.shape()?;
    let pipeline = a.window.pipeline()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.common.seed);
    let load = |paths: &[PathBuf], rng: &mut ChaCha8Rng, cap: Option<usize>| -> Result<Vec<LabeledWindow>> {
        let mut all = Vec::new();
        for p in paths {
            let (events, geometry) = read_events(p, format_for(p, &a.common.format)?)?;
            if !events.iter().all(|e| e.label != Label::Unknown) {
                return Err(Error::Config(format!("{} has unlabeled events", p.display())));
            }
            let mut windows = labeled_windows(&events, &geometry, &pipeline, &shape.levels)?;
            if let Some(cap) = cap {
                windows.shuffle(rng);
                windows.truncate(cap);
            }
            all.extend(windows);
        }
        Ok(all)
    };
    let train_set = load(&a.input, &mut rng, a.windows_per_file)?;
    let val_set = load(&a.val, &mut rng, None)?;
    let config = TrainConfig {
        shape,
        hyper: LcscHyperParams {
            iterations: a.levels.iterations,
            ..LcscHyperParams::default()
        },
        epochs: a.epochs,
        lr: a.lr,
        momentum: a.momentum,
        batch_windows: a.batch,
        clip_norm: a.clip_norm,
        seed: a.common.seed,
    };
    info!(
        "training on {} windows, validating on {}",
        train_set.len(),
        val_set.len()
    );
    let outcome = train(&train_set, &val_set, &config)?;
    outcome.params.write_checkpoint(&a.output)?;
    let mut hist_path = a.output.as_os_str().to_owned();
    hist_path.push(".history.csv");
    let mut h = fs::File::create(PathBuf::from(hist_path))?;
    writeln!(h, "epoch,train_loss,val_loss,val_snr_db")?;
    for r in &outcome.history {
        writeln!(h, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.val_snr_db)?;
    }
    echo_config(&a.output, matches)?;
    if let Some(last) = outcome.history.last() {
        println!(
            "trained {} epochs: train loss {:.5}, val loss {:.5}, val SNR {:.3} dB -> {}",
            a.epochs,
            last.train_loss,
            last.val_loss,
            last.val_snr_db,
            a.output.display()
        );
    }
    Ok(())
}

fn cmd_eval(a: &EvalArgs, matches: &ArgMatches) -> Result<()> {
    let (events, geometry) = read_events(&a.input, format_for(&a.input, &a.common.format)?)?;
    let truth: Vec<Label> = events.iter().map(|e| e.label).collect();
    let mut rows = Vec::new();
    for &m in &a.methods {
        let d = make_denoiser(m, &a.filters, &a.window, &a.checkpoint)?;
        let labels = d.label(&events, &geometry)?;
        print_quality(&d.name(), &truth, &labels, a.filters.snr_factor)?;
        rows.push((d.name(), labels));
    }
    if let Some(out) = &a.output {
        let mut f = fs::File::create(out)?;
        writeln!(f, "method,events,kept,real_kept,noise_kept,SNR_dB,precision,recall")?;
        for (name, labels) in &rows {
            let kept = labels.iter().filter(|&&l| l == Label::Real).count();
            if has_truth(&truth) {
                let (m, n) = survivor_counts(&truth, labels);
                let c = confusion_metrics(labels, &truth);
                let snr = snr_db(&truth, labels, a.filters.snr_factor)?;
                writeln!(
                    f,
                    "{name},{},{kept},{m},{n},{snr},{},{}",
                    events.len(),
                    c.precision,
                    c.recall
                )?;
            } else {
                writeln!(f, "{name},{},{kept},,,,,", events.len())?;
            }
        }
        echo_config(out, matches)?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs, matches: &ArgMatches) -> Result<()> {
    let (events, geometry) = read_events(&a.input, format_for(&a.input, &a.common.format)?)?;
    let mut rows = Vec::new();
    for &m in &a.methods {
        let d = make_denoiser(m, &a.filters, &a.window, &a.checkpoint)?;
        rows.push(bench(
            d.as_ref(),
            &events,
            &geometry,
            a.repetitions,
            a.filters.snr_factor,
        )?);
    }
    write_bench_table(std::io::stdout().lock(), &rows)?;
    write_bench_csv(fs::File::create(&a.output)?, &rows)?;
    echo_config(&a.output, matches)?;
    Ok(())
}

fn common(cmd: &Command) -> &Common {
    match cmd {
        Command::Simulate(a) => &a.common,
        Command::InjectNoise(a) => &a.common,
        Command::Denoise(a) => &a.common,
        Command::Train(a) => &a.common,
        Command::Eval(a) => &a.common,
        Command::Bench(a) => &a.common,
    }
}

/// Finds `--config` among the raw arguments without full parsing.
fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(rest));
        }
    }
    None
}

fn dispatch(cmd: &Command, matches: &ArgMatches) -> Result<()> {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a, matches),
        Command::InjectNoise(a) => cmd_inject(a, matches),
        Command::Denoise(a) => cmd_denoise(a, matches),
        Command::Train(a) => cmd_train(a, matches),
        Command::Eval(a) => cmd_eval(a, matches),
        Command::Bench(a) => cmd_bench(a, matches),
    }
}

fn run(args: Vec<OsString>) -> Result<()> {
    // config pairs go right after the subcommand name so later flags win
    let mut full = args.clone();
    if let Some(path) = config_path(&args) {
        let flags = to_flags(&read_config(&path)?);
        let at = args
            .iter()
            .skip(1)
            .position(|a| !a.to_string_lossy().starts_with('-'))
            .map_or(args.len(), |p| p + 2);
        full.splice(at..at, flags.into_iter().map(OsString::from));
    }
    let matches = Cli::command().try_get_matches_from(full).map_err(clap_error)?;
    let cli = Cli::from_arg_matches(&matches).map_err(clap_error)?;
    let sub = matches
        .subcommand()
        .map(|(_, m)| m.clone())
        .expect("subcommand is required");

    let threads = common(&cli.command).threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(|| dispatch(&cli.command, &sub))
}

struct ClapExit(clap::Error);

fn clap_error(e: clap::Error) -> Error {
    use clap::error::ErrorKind;
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            let _ = e.print();
            Error::Internal(HELP_SHOWN.into())
        }
        _ => Error::Config(ClapExit(e).render()),
    }
}

impl ClapExit {
    fn render(&self) -> String {
        self.0.render().to_string().trim_end().to_string()
    }
}

const HELP_SHOWN: &str = "\u{0}help";

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 success, 1 validation or parse error, 2 domain
/// error, 3 internal error.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    match std::panic::catch_unwind(|| run(args)) {
        Ok(Ok(())) => 0,
        Ok(Err(Error::Internal(m))) if m == HELP_SHOWN => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => 3,
    }
}
