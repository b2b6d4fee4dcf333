//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use wednet::bec::{bone_flags, label_connected_domains, BinaryFrame};
use wednet::eval::{
    bench, snr_db, snr_from_counts, survivor_counts, Denoiser, FilterConfig, FilterDenoiser, FilterKind,
};
use wednet::geometry::{farthest_event_sampling, idw_stencils, LevelSpec, NormalizedPoint};
use wednet::gof::{chi_square_poisson, ks_exponential};
use wednet::nn::{
    backward, class_weights, forward_plan, lcsc_block, loss_bce_weighted, train, LcscHyperParams, ModelParams,
    NetworkShape, TrainConfig, WindowPlan,
};
use wednet::pipeline::{labeled_windows, PipelineConfig, WedNetDenoiser};
use wednet::sim::{inject_ba_noise, simulate_events, NoiseSpec, SceneSpec};
use wednet::temporal::{adaptive_t_lim, tw_keep_mask, tw_keep_mask_by_probability, TemporalStats, TwConfig};
use wednet::{Event, EventWindow, Label, SensorGeometry};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tw_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000 {
        let sigma = 10f64.powf(rng.random_range(0.0..5.0));
        let normal = Normal::new(1e6, sigma).unwrap();
        let mut ts: Vec<u64> = (0..1024)
            .map(|_| normal.sample(&mut rng).round().max(0.0) as u64)
            .collect();
        ts.sort_unstable();
        let window = EventWindow::new(ts.iter().map(|&t| Event::new(t, 0, 0, 1)).collect(), 0, false);
        let stats = TemporalStats::from_window(&window).unwrap();
        let pick = window.events[rng.random_range(0..1024)].t;
        let limits = [
            adaptive_t_lim(&stats, &TwConfig::default()),
            sigma * rng.random_range(0.0..3.0),
            // exactly on an event, to exercise the inclusive boundary
            (pick as f64 - window.t_mu).abs(),
        ];
        for t_lim in limits {
            let direct = tw_keep_mask(&window, t_lim);
            let by_prob = tw_keep_mask_by_probability(&window, t_lim);
            ensure(direct == by_prob, || {
                format!("window {i}, sigma {sigma:.3}, t_lim {t_lim}: keep-sets differ")
            })?;
        }
    }
    Ok("1000 windows x 3 limits identical".into())
}

fn poisson_model() -> Outcome {
    let geometry = SensorGeometry::new(400, 250);
    let mut worst: f64 = 1.0;
    for (k, eta_t) in [0.5, 3.0, 10.0].into_iter().enumerate() {
        // one second of noise at eta events per pixel per second
        let noise = inject_ba_noise(&[], &NoiseSpec::rate(eta_t, 10 + k as u64), &geometry, 1_000_000)
            .map_err(|e| e.to_string())?;
        let mut counts = vec![0u64; geometry.pixel_count()];
        for e in &noise {
            counts[geometry.pixel_index(e.x, e.y)] += 1;
        }
        let chi = chi_square_poisson(&counts, eta_t);
        ensure(chi.p_value > 0.01, || {
            format!("eta*t = {eta_t}: chi-square p = {:.4}", chi.p_value)
        })?;
        worst = worst.min(chi.p_value);
    }
    // superposition over 100 pixels: exponential gaps with rate 100 * eta
    let small = SensorGeometry::new(10, 10);
    let noise = inject_ba_noise(&[], &NoiseSpec::rate(10.0, 99), &small, 100_000_000).map_err(|e| e.to_string())?;
    let gaps: Vec<f64> = noise.windows(2).map(|w| (w[1].t - w[0].t) as f64).collect();
    let ks = ks_exponential(&gaps, 100.0 * 10.0 * 1e-6);
    ensure(ks.p_value > 0.01, || {
        format!("inter-arrival KS p = {:.4} over {} gaps", ks.p_value, gaps.len())
    })?;
    Ok(format!(
        "min chi-square p {worst:.3}, KS p {:.3} over {} gaps",
        ks.p_value,
        gaps.len()
    ))
}

fn flood_fill(frame: &BinaryFrame) -> Vec<u32> {
    let (w, h) = (frame.width, frame.height);
    let mut comp = vec![0u32; w * h];
    let mut next = 0;
    for start in 0..w * h {
        if !frame.get(start % w, start / w) || comp[start] != 0 {
            continue;
        }
        next += 1;
        comp[start] = next;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut nbrs = Vec::with_capacity(4);
            if x > 0 {
                nbrs.push(i - 1);
            }
            if x + 1 < w {
                nbrs.push(i + 1);
            }
            if y > 0 {
                nbrs.push(i - w);
            }
            if y + 1 < h {
                nbrs.push(i + w);
            }
            for j in nbrs {
                if frame.get(j % w, j / w) && comp[j] == 0 {
                    comp[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    comp
}

fn domain_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0usize;
    for _ in 0..500 {
        let density = rng.random_range(0.1..0.9);
        let mut frame = BinaryFrame::new(16, 16);
        for y in 0..16 {
            for x in 0..16 {
                frame.set(x, y, rng.random_bool(density));
            }
        }
        let got = label_connected_domains(&frame);
        let want = flood_fill(&frame);
        let n = want.iter().copied().max().unwrap_or(0) as usize;
        // the partition must match up to renaming, in both directions
        let mut fwd = vec![None; got.size_of.len()];
        let mut back = vec![None; n + 1];
        let mut size = vec![0usize; n + 1];
        for i in 0..256 {
            let (a, b) = (got.label_of[i] as usize, want[i] as usize);
            if (a == 0) != (b == 0) {
                mismatches += 1;
                continue;
            }
            if b == 0 {
                continue;
            }
            size[b] += 1;
            if *fwd[a].get_or_insert(b) != b || *back[b].get_or_insert(a) != a {
                mismatches += 1;
            }
        }
        if got.component_count() != n {
            mismatches += 1;
        }
        for i in 0..256 {
            if want[i] != 0 && got.domain_size(i % 16, i / 16) != size[want[i] as usize] {
                mismatches += 1;
            }
        }
    }
    ensure(mismatches == 0, || format!("{mismatches} mismatches"))?;
    Ok("500 frames, zero mismatches".into())
}

fn fps_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..200 {
        let n = rng.random_range(1..=256);
        let t = rng.random_range(1..=32);
        // coarse lattice so distance ties occur
        let lattice = rng.random_bool(0.5);
        let points: Vec<NormalizedPoint> = (0..n)
            .map(|_| {
                let mut c = || {
                    if lattice {
                        rng.random_range(0..5) as f64 / 4.0
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                };
                NormalizedPoint {
                    nx: c(),
                    ny: c(),
                    nt: c(),
                    p: 1,
                }
            })
            .collect();
        let mut eligible: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let forced = rng.random_range(0..n);
        eligible[forced] = true;
        let picks = farthest_event_sampling(&points, t, &eligible).map_err(|e| e.to_string())?;
        ensure(picks.len() == t, || {
            format!("case {case}: {} picks for {t}", picks.len())
        })?;
        let distinct = t.min(eligible.iter().filter(|&&e| e).count());
        for j in 0..t {
            ensure(eligible[picks[j]], || format!("case {case}: pick {j} not eligible"))?;
            if j >= distinct {
                ensure(picks[j] == picks[j % distinct], || {
                    format!("case {case}: padding breaks the cycle")
                })?;
            }
        }
        for j in 1..distinct {
            let min_d = |i: usize| {
                picks[..j]
                    .iter()
                    .map(|&c| points[i].dist2(&points[c]))
                    .fold(f64::INFINITY, f64::min)
            };
            ensure(!picks[..j].contains(&picks[j]), || {
                format!("case {case}: pick {j} repeats")
            })?;
            let best = (0..n)
                .filter(|&i| eligible[i] && !picks[..j].contains(&i))
                .map(min_d)
                .fold(f64::NEG_INFINITY, f64::max);
            ensure(min_d(picks[j]) == best, || {
                format!("case {case}: pick {j} has min distance {} < {best}", min_d(picks[j]))
            })?;
        }
    }
    Ok("200 instances, every pick maximal".into())
}

/// Zero-padded 'same' synthesis along the neighbor axis:
/// `out[t,k,c] = sum_j sum_d codes[t, k + j - width/2, d] * dict[c, j, d]`.
fn synthesize(codes: &Array3<f64>, dict: &Array3<f64>) -> Array3<f64> {
    let (tn, kn, dn) = codes.dim();
    let (cn, width, _) = dict.dim();
    let mut out = Array3::zeros((tn, kn, cn));
    for t in 0..tn {
        for k in 0..kn {
            for j in 0..width {
                let src = k as isize + j as isize - (width / 2) as isize;
                if src < 0 || src >= kn as isize {
                    continue;
                }
                for c in 0..cn {
                    for d in 0..dn {
                        out[[t, k, c]] += codes[[t, src as usize, d]] * dict[[c, j, d]];
                    }
                }
            }
        }
    }
    out
}

/// Transpose of [`synthesize`], written as the scatter of each product.
fn analyze(residual: &Array3<f64>, dict: &Array3<f64>) -> Array3<f64> {
    let (tn, kn, cn) = residual.dim();
    let (_, width, dn) = dict.dim();
    let mut out = Array3::zeros((tn, kn, dn));
    for t in 0..tn {
        for k in 0..kn {
            for j in 0..width {
                let src = k as isize + j as isize - (width / 2) as isize;
                if src < 0 || src >= kn as isize {
                    continue;
                }
                for c in 0..cn {
                    for d in 0..dn {
                        out[[t, src as usize, d]] += residual[[t, k, c]] * dict[[c, j, d]];
                    }
                }
            }
        }
    }
    out
}

fn lcsc_ista() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (tn, kn, cn, dn, width) = (4, 16, 3, 8, 3);
    let dict = Array3::from_shape_simple_fn((cn, width, dn), || rng.random_range(-1.0..1.0));
    let signal = Array3::from_shape_simple_fn((tn, kn, cn), || rng.random_range(-1.0..1.0));
    // Lipschitz constant of the data term by power iteration
    let mut v = Array3::from_shape_simple_fn((tn, kn, dn), || rng.random_range(-1.0..1.0));
    let mut lip = 0.0;
    for _ in 0..500 {
        let av = analyze(&synthesize(&v, &dict), &dict);
        lip = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        v = av / lip;
    }
    let step = 1.0 / (1.01 * lip);
    let penalty = 0.05;

    let mut enc = Array3::zeros((dn, width, cn));
    for d in 0..dn {
        for j in 0..width {
            for c in 0..cn {
                enc[[d, j, c]] = step * dict[[c, width - 1 - j, d]];
            }
        }
    }
    let thresholds = Array1::from_elem(dn, penalty * step);

    let soft = |x: f64, l: f64| x.signum() * (x.abs() - l).max(0.0);
    let mut ista = Array3::<f64>::zeros((tn, kn, dn));
    let mut learned = ista.clone();
    let mut worst: f64 = 0.0;
    for it in 0..50 {
        let grad = analyze(&(synthesize(&ista, &dict) - &signal), &dict);
        ista = (&ista - &(grad * step)).mapv(|x| soft(x, penalty * step));
        learned =
            lcsc_block(learned.view(), signal.view(), &enc, &dict, thresholds.view()).map_err(|e| e.to_string())?;
        let diff = (&ista - &learned).iter().fold(0.0f64, |m, x| m.max(x.abs()));
        worst = worst.max(diff);
        ensure(diff <= 1e-6, || format!("iteration {it}: max difference {diff:e}"))?;
    }
    let nonzero = ista.iter().filter(|x| **x != 0.0).count();
    Ok(format!(
        "50 iterations, max difference {worst:.2e}, {nonzero} nonzero codes"
    ))
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let geometry = SensorGeometry::new(16, 16);
    let mut events: Vec<Event> = (0..48)
        .map(|_| {
            let p = if rng.random_bool(0.5) { 1 } else { -1 };
            let label = if rng.random_bool(0.5) {
                Label::Real
            } else {
                Label::Noise
            };
            Event::new(
                rng.random_range(0..10_000),
                rng.random_range(0..16),
                rng.random_range(0..16),
                p,
            )
            .with_label(label)
        })
        .collect();
    events.sort_by_key(|e| e.t);
    let shape =
        NetworkShape::new(LevelSpec::stack(&[8, 4], &[4, 2], &[0.5, 1.0], &[3, 3])).map_err(|e| e.to_string())?;
    let params = ModelParams::<f64>::init(shape, LcscHyperParams::default(), 7).map_err(|e| e.to_string())?;
    let bone = bone_flags(&events, &geometry, 2);
    let truth: Vec<Label> = events.iter().map(|e| e.label).collect();
    let weights = class_weights(&truth);
    let plan = WindowPlan::build(&events, &bone, &geometry, &params.shape.levels).map_err(|e| e.to_string())?;
    let loss = |q: &ModelParams<f64>| {
        let cache = forward_plan(&plan, q).expect("forward");
        loss_bce_weighted(&cache.logits, &truth, weights, truth.len()).0
    };
    let cache = forward_plan(&plan, &params).map_err(|e| e.to_string())?;
    let (_, dlogits) = loss_bce_weighted(&cache.logits, &truth, weights, truth.len());
    let analytic = backward(&plan, &params, &cache, &dlogits).flatten();
    let base = params.flatten();
    let mut indices: Vec<usize> = (0..base.len()).collect();
    indices.shuffle(&mut rng);
    indices.truncate(200);
    ensure(indices.len() == 200, || format!("only {} parameters", base.len()))?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for &i in &indices {
        let mut plus = params.clone();
        plus.set_flat(i, base[i] + h);
        let mut minus = params.clone();
        minus.set_flat(i, base[i] - h);
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    ensure(worst <= 1e-4, || format!("worst relative error {worst:e}"))?;
    Ok(format!(
        "200 of {} parameters, worst relative error {worst:.2e}",
        base.len()
    ))
}

struct DeskRun {
    denoiser: WedNetDenoiser,
    sample: Vec<Event>,
    geometry: SensorGeometry,
}

fn desk_run(keep: &mut Option<DeskRun>) -> Outcome {
    let geometry = SensorGeometry::new(128, 128);
    let duration = 500_000;
    let scenes: Vec<Vec<Event>> = (0..40u64)
        .map(|s| {
            let spec = SceneSpec::random(1000 + s, &geometry, duration);
            let real = simulate_events(&spec, &geometry, 1000 + s)?;
            inject_ba_noise(&real, &NoiseSpec::ratio(1.0, 5000 + s), &geometry, duration)
        })
        .collect::<wednet::Result<_>>()
        .map_err(|e| e.to_string())?;
    let shape = NetworkShape::new(LevelSpec::desk()).map_err(|e| e.to_string())?;
    let pipeline = PipelineConfig {
        window: 512,
        ..PipelineConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut sample_windows = |streams: &[Vec<Event>], per_file: usize| -> Result<Vec<_>, String> {
        let mut out = Vec::new();
        for s in streams {
            let mut w = labeled_windows(s, &geometry, &pipeline, &shape.levels).map_err(|e| e.to_string())?;
            w.shuffle(&mut rng);
            w.truncate(per_file);
            out.extend(w);
        }
        Ok(out)
    };
    let train_set = sample_windows(&scenes[..32], 24)?;
    let val_set = sample_windows(&scenes[32..], 8)?;
    let config = TrainConfig {
        epochs: 30,
        ..TrainConfig::new(shape)
    };
    let outcome = train(&train_set, &val_set, &config).map_err(|e| e.to_string())?;

    let denoiser = WedNetDenoiser {
        params: outcome.params,
        config: pipeline,
    };
    let baf = FilterDenoiser {
        kind: FilterKind::Baf,
        config: FilterConfig::default(),
    };
    let (mut net, mut base, mut raw) = ((0, 0), (0, 0), (0, 0));
    for s in &scenes[32..] {
        let truth: Vec<Label> = s.iter().map(|e| e.label).collect();
        let add = |acc: &mut (u64, u64), c: (u64, u64)| *acc = (acc.0 + c.0, acc.1 + c.1);
        add(
            &mut net,
            survivor_counts(&truth, &denoiser.label(s, &geometry).map_err(|e| e.to_string())?),
        );
        add(
            &mut base,
            survivor_counts(&truth, &baf.label(s, &geometry).map_err(|e| e.to_string())?),
        );
        add(&mut raw, survivor_counts(&truth, &vec![Label::Real; s.len()]));
    }
    let (snr_net, snr_baf, snr_raw) = (
        snr_from_counts(net.0, net.1, 20.0),
        snr_from_counts(base.0, base.1, 20.0),
        snr_from_counts(raw.0, raw.1, 20.0),
    );
    let detail = format!("held-out SNR: network {snr_net:.2} dB, BAF {snr_baf:.2} dB, raw {snr_raw:.2} dB");
    *keep = Some(DeskRun {
        denoiser,
        sample: scenes[39].clone(),
        geometry,
    });
    ensure(snr_net >= snr_raw + 6.0 && snr_net >= snr_baf, || detail.clone())?;
    Ok(detail)
}

fn window_efficiency(run: &Option<DeskRun>) -> Outcome {
    let run = run.as_ref().ok_or("needs the trained desk model")?;
    let filters = [FilterKind::Baf, FilterKind::Nnb, FilterKind::Rp].map(|kind| FilterDenoiser {
        kind,
        config: FilterConfig::default(),
    });
    let net = bench(&run.denoiser, &run.sample, &run.geometry, 5, 20.0).map_err(|e| e.to_string())?;
    let mut fastest_filter: f64 = 0.0;
    for f in &filters {
        let row = bench(f, &run.sample, &run.geometry, 5, 20.0).map_err(|e| e.to_string())?;
        ensure(row.events_per_inference == 1, || {
            format!(
                "{} labels {} events per inference",
                row.method, row.events_per_inference
            )
        })?;
        fastest_filter = fastest_filter.max(row.events_per_second);
    }
    ensure(net.events_per_inference >= 256, || {
        format!("network labels {} events per inference", net.events_per_inference)
    })?;
    let detail = format!(
        "network: {} events per inference, {:.0} events/s; filters: 1 per inference, up to {:.0} events/s",
        net.events_per_inference, net.events_per_second, fastest_filter
    );
    ensure(net.events_per_second >= 1e5, || detail.clone())?;
    Ok(detail)
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wednet"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn bench_without_timing(path: &Path) -> Result<String, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    // wall-clock columns are measurements, everything else is a primary output
    Ok(text
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            [&f[..2], &f[4..]].concat().join(",")
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

fn run_all_subcommands(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let common = ["--seed", "11", "--threads", "2"];
    let with = |mut v: Vec<String>| {
        v.extend(common.iter().map(|s| s.to_string()));
        v
    };
    let run = |v: Vec<String>| cli(&v.iter().map(String::as_str).collect::<Vec<_>>());
    let s = |a: &[&str]| a.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    run(with(s(&[
        "simulate",
        "--random-scene",
        "--width",
        "64",
        "--height",
        "64",
        "--duration-us",
        "200000",
        "--output",
        &p("clean.evd"),
    ])))?;
    run(with(s(&[
        "inject-noise",
        "--input",
        &p("clean.evd"),
        "--output",
        &p("noisy.evd"),
        "--ratio",
        "1.0",
    ])))?;
    run(with(s(&[
        "train",
        "--input",
        &p("noisy.evd"),
        "--val",
        &p("noisy.evd"),
        "--output",
        &p("model.wedn"),
        "--levels",
        "tiny",
        "--window",
        "128",
        "--epochs",
        "2",
    ])))?;
    let mut outputs = vec!["clean.evd", "noisy.evd", "model.wedn", "model.wedn.history.csv"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for f in ["tw", "baf", "nnb", "rp", "wednet"] {
        let name = format!("denoised_{f}.txt");
        run(with(s(&[
            "denoise",
            "--input",
            &p("noisy.evd"),
            "--output",
            &p(&name),
            "--filter",
            f,
            "--checkpoint",
            &p("model.wedn"),
            "--window",
            "128",
        ])))?;
        outputs.push(name);
    }
    run(with(s(&[
        "eval",
        "--input",
        &p("noisy.evd"),
        "--methods",
        "raw,tw,baf,nnb,rp,wednet",
        "--checkpoint",
        &p("model.wedn"),
        "--window",
        "128",
        "--output",
        &p("eval.csv"),
    ])))?;
    outputs.push("eval.csv".into());
    run(with(s(&[
        "bench",
        "--input",
        &p("noisy.evd"),
        "--methods",
        "baf,wednet",
        "--checkpoint",
        &p("model.wedn"),
        "--window",
        "128",
        "--repetitions",
        "3",
        "--output",
        &p("bench.csv"),
    ])))?;
    let mut files = Vec::new();
    for name in outputs {
        files.push((
            name.clone(),
            std::fs::read(dir.join(&name)).map_err(|e| format!("{name}: {e}"))?,
        ));
    }
    files.push((
        "bench.csv".into(),
        bench_without_timing(&dir.join("bench.csv"))?.into_bytes(),
    ));
    Ok(files)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_all_subcommands(a.path())?;
    let second = run_all_subcommands(b.path())?;
    for ((name, x), (_, y)) in first.iter().zip(&second) {
        ensure(!x.is_empty(), || format!("{name} is empty"))?;
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    Ok(format!("{} outputs byte-identical", first.len()))
}

fn metric_sanity() -> Outcome {
    for m in [1u64, 7, 1000, 123_456] {
        let v = snr_from_counts(m, m, 20.0);
        ensure(v == 0.0, || format!("snr(M = N = {m}) = {v}"))?;
    }
    let truth: Vec<Label> = (0..2000)
        .map(|i| if i % 2 == 0 { Label::Real } else { Label::Noise })
        .collect();
    let raw = snr_db(&truth, &vec![Label::Real; truth.len()], 20.0).map_err(|e| e.to_string())?;
    ensure(raw == 0.0, || format!("raw SNR at equal counts = {raw}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let point = |rng: &mut ChaCha8Rng| NormalizedPoint {
        nx: rng.random_range(0.0..1.0),
        ny: rng.random_range(0.0..1.0),
        nt: rng.random_range(0.0..1.0),
        p: 1,
    };
    let sources: Vec<NormalizedPoint> = (0..500).map(|_| point(&mut rng)).collect();
    let targets: Vec<NormalizedPoint> = (0..10_000).map(|_| point(&mut rng)).collect();
    let mut worst: f64 = 0.0;
    for st in idw_stencils(&targets, &sources) {
        let sum: f64 = st.weight[..st.len].iter().sum();
        worst = worst.max((sum - 1.0).abs());
    }
    ensure(worst <= 1e-12, || format!("interpolation weights off by {worst:e}"))?;
    Ok(format!("SNR(M = N) = 0, weight sums within {worst:.1e}"))
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    let elapsed = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; took {elapsed:.1?}, limit {limit:?}")),
        Err(d) => (false, d),
    };
    println!(
        "{} {id:>2} {name}: {detail} ({:.1}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn main() {
    let secs = Duration::from_secs;
    let mut desk = None;
    let results = [
        report(1, "temporal window equivalence", secs(10), tw_equivalence),
        report(2, "noise sampler statistics", secs(30), poisson_model),
        report(3, "connected domain oracle", secs(5), domain_oracle),
        report(4, "farthest sampling oracle", secs(30), fps_oracle),
        report(5, "sparse coding vs ISTA", secs(5), lcsc_ista),
        report(6, "gradient check", secs(60), gradient_check),
        report(7, "desk end-to-end run", secs(30 * 60), || desk_run(&mut desk)),
        report(8, "window vs per-event efficiency", secs(5 * 60), || {
            window_efficiency(&desk)
        }),
        report(9, "determinism", secs(10 * 60), determinism),
        report(10, "metric sanity", secs(10), metric_sanity),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
