//! Forward and reverse passes of the window network.
//!
//! Everything that depends only on the window (sampling, grouping, relative
//! coordinates, interpolation stencils) is computed once into a
//! [`WindowPlan`]; the parameter-dependent passes run on top of it and treat
//! those discrete choices as constants.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::layers::{
    add_bias, col2im, conv_cols_backward, conv_same, im2col, relu_backward, relu_inplace, soft_threshold_backward,
    soft_threshold_cols, sum_pool_rows,
};
use super::params::{FpParams, LcscHyperParams, ModelParams, NetworkShape, SaParams};
use super::Scalar;
use crate::error::{Error, Result};
use crate::event::{Event, Label, SensorGeometry};
use crate::geometry::{
    ball_group, idw_stencils, normalize_coords, relative_transform, sample_with_fallback, IdwStencil, LevelSpec,
    NormalizedPoint,
};

/// Discrete structure of one abstraction level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPlan {
    /// Indices into the previous level's points.
    pub centroids: Vec<usize>,
    /// Row-major `T x K` member indices into the previous level's points.
    pub grid: Vec<usize>,
    /// `(T*K) x 4` relative channels.
    pub rel: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub n: usize,
    /// `n x 2`: polarity and bone flag.
    pub event_features: Array2<f64>,
    pub levels: Vec<LevelPlan>,
    /// `stencils[j]`: from the level-`j` centroids back onto the points that
    /// entered level `j`.
    pub stencils: Vec<Vec<IdwStencil>>,
}

pub fn event_features(events: &[Event], bone: &[bool]) -> Array2<f64> {
    let mut f = Array2::zeros((events.len(), 2));
    for (i, (e, &b)) in events.iter().zip(bone).enumerate() {
        f[[i, 0]] = e.p as f64;
        f[[i, 1]] = if b { 1.0 } else { 0.0 };
    }
    f
}

impl WindowPlan {
    pub fn build(
        events: &[Event],
        bone: &[bool],
        geometry: &SensorGeometry,
        levels: &[LevelSpec],
    ) -> Result<WindowPlan> {
        if bone.len() != events.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} bone flags for {} events",
                bone.len(),
                events.len()
            )));
        }
        for l in levels {
            l.validate()?;
        }
        let n = events.len();
        let mut plan = WindowPlan {
            n,
            event_features: event_features(events, bone),
            levels: Vec::with_capacity(levels.len()),
            stencils: Vec::with_capacity(levels.len()),
        };
        if n == 0 {
            return Ok(plan);
        }
        let mut points: Vec<NormalizedPoint> = normalize_coords(events, geometry);
        let mut eligible = bone.to_vec();
        for spec in levels {
            let centroids = sample_with_fallback(&points, spec.centroids, &eligible);
            let grid = ball_group(&points, &centroids, spec.radius, spec.group_size);
            let rel = relative_transform(&points, &grid, &centroids, spec.group_size)
                .into_shape_with_order((spec.centroids * spec.group_size, 4))
                .expect("standard layout");
            let next: Vec<NormalizedPoint> = centroids.iter().map(|&c| points[c]).collect();
            plan.stencils.push(idw_stencils(&points, &next));
            plan.levels.push(LevelPlan { centroids, grid, rel });
            points = next;
            eligible = vec![true; points.len()];
        }
        Ok(plan)
    }
}

struct IterCache<S> {
    e: Array2<S>,
    z: Array2<S>,
    u: Array2<S>,
}

struct LevelCache<S> {
    s_tilde: Array2<S>,
    e0_pre: Array2<S>,
    iters: Vec<IterCache<S>>,
}

struct PropCache<S> {
    input: Array2<S>,
    pre: Array2<S>,
}

/// Activations kept for the reverse pass.
pub struct ForwardCache<S> {
    levels: Vec<LevelCache<S>>,
    props: Vec<PropCache<S>>,
    /// `feats[0]` are the event features, `feats[j + 1]` the pooled output of
    /// level `j`.
    feats: Vec<Array2<S>>,
    hidden: Array2<S>,
    pub logits: Vec<S>,
}

fn check_finite<S: Scalar>(_a: &Array2<S>) {
    debug_assert!(_a.iter().all(|v| v.is_finite()), "non-finite activation");
}

/// Gathered grid `S~`: relative channels followed by the members' features.
fn gather_group<S: Scalar>(rel: ArrayView2<f64>, grid: &[usize], prev: ArrayView2<S>) -> Array2<S> {
    let c = prev.ncols();
    let mut out = Array2::zeros((grid.len(), 4 + c));
    for (r, &m) in grid.iter().enumerate() {
        let mut row = out.row_mut(r);
        for ch in 0..4 {
            row[ch] = S::from_f64(rel[[r, ch]]);
        }
        row.slice_mut(s![4..]).assign(&prev.row(m));
    }
    out
}

fn check_sa<S: Scalar>(sa: &SaParams<S>, cin: usize, k: usize) -> Result<()> {
    let (d, kw, ci) = sa.init_w.dim();
    let ok = ci == cin
        && sa.enc_w.dim() == (d, kw, cin)
        && sa.dict_q.dim() == (cin, kw, d)
        && sa.init_b.len() == d
        && sa.lambda.len() == d
        && kw % 2 == 1
        && kw <= k;
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "abstraction parameters {:?}/{:?} for {cin} input channels, K = {k}",
            sa.init_w.dim(),
            sa.dict_q.dim()
        )))
    }
}

/// One update `Soft(E - W*Q*E + W*S~)`, computed as `E + W*(S~ - Q*E)`
/// (the maps are linear and bias-free).
fn lcsc_step<S: Scalar>(
    e: &Array2<S>,
    s_tilde: ArrayView2<S>,
    k: usize,
    enc_w: &Array3<S>,
    dict_q: &Array3<S>,
    lambda: ArrayView1<S>,
) -> (Array2<S>, IterCache<S>) {
    let z = &s_tilde - &conv_same(e.view(), k, dict_q);
    let u = e + &conv_same(z.view(), k, enc_w);
    let next = soft_threshold_cols(u.view(), lambda);
    (next, IterCache { e: e.clone(), z, u })
}

fn ssfe_rows<S: Scalar>(
    s_tilde: ArrayView2<S>,
    k: usize,
    sa: &SaParams<S>,
    iterations: usize,
) -> (Array2<S>, LevelCache<S>) {
    let mut e0_pre = conv_same(s_tilde, k, &sa.init_w);
    add_bias(&mut e0_pre, sa.init_b.view());
    let mut e = e0_pre.clone();
    relu_inplace(&mut e);
    let mut iters = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (next, cache) = lcsc_step(&e, s_tilde, k, &sa.enc_w, &sa.dict_q, sa.lambda.view());
        iters.push(cache);
        e = next;
    }
    check_finite(&e);
    (
        e,
        LevelCache {
            s_tilde: s_tilde.to_owned(),
            e0_pre,
            iters,
        },
    )
}

fn flat<S: Scalar>(x: ArrayView3<S>) -> (Array2<S>, usize, usize) {
    let (t, k, c) = x.dim();
    let owned = x
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((t * k, c))
        .expect("standard layout");
    (owned, t, k)
}

/// One sparse-coding iteration on `T x K x D` codes and `T x K x C` inputs.
/// `enc_w` is `D x width x C`, `dict_q` is `C x width x D`.
pub fn lcsc_block<S: Scalar>(
    e: ArrayView3<S>,
    s_tilde: ArrayView3<S>,
    enc_w: &Array3<S>,
    dict_q: &Array3<S>,
    lambda: ArrayView1<S>,
) -> Result<Array3<S>> {
    let (t, k, d) = e.dim();
    let c = s_tilde.dim().2;
    let kw = enc_w.dim().1;
    if s_tilde.dim().0 != t
        || s_tilde.dim().1 != k
        || enc_w.dim() != (d, kw, c)
        || dict_q.dim() != (c, kw, d)
        || lambda.len() != d
        || kw % 2 == 0
        || kw > k
    {
        return Err(Error::ShapeMismatch(format!(
            "codes {:?}, input {:?}, maps {:?}/{:?}",
            e.dim(),
            s_tilde.dim(),
            enc_w.dim(),
            dict_q.dim()
        )));
    }
    let (ef, _, _) = flat(e);
    let (sf, _, _) = flat(s_tilde);
    let (next, _) = lcsc_step(&ef, sf.view(), k, enc_w, dict_q, lambda);
    Ok(next.into_shape_with_order((t, k, d)).expect("same element count"))
}

/// Initialization map plus `hyper.iterations` sparse-coding updates.
pub fn ssfe_forward<S: Scalar>(s_tilde: ArrayView3<S>, sa: &SaParams<S>, hyper: &LcscHyperParams) -> Result<Array3<S>> {
    hyper.validate()?;
    let (sf, t, k) = flat(s_tilde);
    check_sa(sa, sf.ncols(), k)?;
    let (e, _) = ssfe_rows(sf.view(), k, sa, hyper.iterations);
    let d = e.ncols();
    Ok(e.into_shape_with_order((t, k, d)).expect("same element count"))
}

fn level_forward<S: Scalar>(
    plan: &LevelPlan,
    prev: ArrayView2<S>,
    k: usize,
    sa: &SaParams<S>,
    iterations: usize,
) -> Result<(Array2<S>, LevelCache<S>)> {
    check_sa(sa, 4 + prev.ncols(), k)?;
    let s_tilde = gather_group(plan.rel.view(), &plan.grid, prev);
    let (e, cache) = ssfe_rows(s_tilde.view(), k, sa, iterations);
    Ok((sum_pool_rows(e.view(), k), cache))
}

/// Sampling, grouping, relative transform with incoming features, sparse
/// coding and pooling. Returns the centroid indices and `T x D` features.
pub fn set_abstraction_level<S: Scalar>(
    points: &[NormalizedPoint],
    features: ArrayView2<S>,
    level: &LevelSpec,
    eligible: &[bool],
    sa: &SaParams<S>,
    hyper: &LcscHyperParams,
) -> Result<(Vec<usize>, Array2<S>)> {
    level.validate()?;
    if features.nrows() != points.len() || eligible.len() != points.len() {
        return Err(Error::ShapeMismatch(
            "features, flags and points differ in length".into(),
        ));
    }
    if points.is_empty() {
        return Err(Error::NoEligibleEvents);
    }
    let centroids = sample_with_fallback(points, level.centroids, eligible);
    let grid = ball_group(points, &centroids, level.radius, level.group_size);
    let rel = relative_transform(points, &grid, &centroids, level.group_size)
        .into_shape_with_order((level.centroids * level.group_size, 4))
        .expect("standard layout");
    let plan = LevelPlan { centroids, grid, rel };
    let (pooled, _) = level_forward(&plan, features, level.group_size, sa, hyper.iterations)?;
    Ok((plan.centroids, pooled))
}

fn interpolate<S: Scalar>(stencils: &[IdwStencil], source: ArrayView2<S>) -> Array2<S> {
    let mut out = Array2::zeros((stencils.len(), source.ncols()));
    for (i, st) in stencils.iter().enumerate() {
        let mut row = out.row_mut(i);
        for j in 0..st.len {
            row.scaled_add(S::from_f64(st.weight[j]), &source.row(st.source[j]));
        }
    }
    out
}

fn interpolate_backward<S: Scalar>(stencils: &[IdwStencil], dout: ArrayView2<S>, sources: usize) -> Array2<S> {
    let mut d = Array2::zeros((sources, dout.ncols()));
    for (i, st) in stencils.iter().enumerate() {
        for j in 0..st.len {
            d.row_mut(st.source[j])
                .scaled_add(S::from_f64(st.weight[j]), &dout.row(i));
        }
    }
    d
}

fn dense_forward<S: Scalar>(input: &Array2<S>, fp: &FpParams<S>) -> Array2<S> {
    let mut pre = input.dot(&fp.weight.t());
    add_bias(&mut pre, fp.bias.view());
    pre
}

fn concat<S: Scalar>(a: ArrayView2<S>, b: ArrayView2<S>) -> Array2<S> {
    ndarray::concatenate(Axis(1), &[a, b]).expect("row counts agree")
}

/// Interpolation onto the targets, concatenation with the skip features and
/// a rectified decode.
pub fn feature_propagation_level<S: Scalar>(
    targets: &[NormalizedPoint],
    sources: &[NormalizedPoint],
    source_features: ArrayView2<S>,
    skip: ArrayView2<S>,
    fp: &FpParams<S>,
) -> Result<Array2<S>> {
    if sources.is_empty() {
        return Err(Error::ShapeMismatch("propagation needs at least one source".into()));
    }
    if source_features.nrows() != sources.len()
        || skip.nrows() != targets.len()
        || fp.weight.ncols() != source_features.ncols() + skip.ncols()
    {
        return Err(Error::ShapeMismatch(format!(
            "propagation of {:?} with skip {:?} through {:?}",
            source_features.dim(),
            skip.dim(),
            fp.weight.dim()
        )));
    }
    let interp = interpolate(&idw_stencils(targets, sources), source_features);
    let mut out = dense_forward(&concat(interp.view(), skip), fp);
    relu_inplace(&mut out);
    Ok(out)
}

fn check_shape<S: Scalar>(plan: &WindowPlan, params: &ModelParams<S>) -> Result<()> {
    let shape: &NetworkShape = &params.shape;
    if plan.n > 0 && plan.levels.len() != shape.depth() {
        return Err(Error::ShapeMismatch(format!(
            "plan has {} levels, parameters {}",
            plan.levels.len(),
            shape.depth()
        )));
    }
    if plan.event_features.ncols() != shape.event_channels {
        return Err(Error::ShapeMismatch("event feature width".into()));
    }
    for (j, lp) in plan.levels.iter().enumerate() {
        let spec = &shape.levels[j];
        if lp.centroids.len() != spec.centroids || lp.grid.len() != spec.centroids * spec.group_size {
            return Err(Error::ShapeMismatch(format!(
                "level {} plan does not match its level",
                j + 1
            )));
        }
    }
    Ok(())
}

/// Full forward pass over a planned window.
pub fn forward_plan<S: Scalar>(plan: &WindowPlan, params: &ModelParams<S>) -> Result<ForwardCache<S>> {
    check_shape(plan, params)?;
    let feats0 = plan.event_features.mapv(S::from_f64);
    if plan.n == 0 {
        return Ok(ForwardCache {
            levels: Vec::new(),
            props: Vec::new(),
            feats: vec![feats0],
            hidden: Array2::zeros((0, params.shape.head_input())),
            logits: Vec::new(),
        });
    }
    let depth = params.shape.depth();
    let iterations = params.hyper.iterations;
    let mut feats = vec![feats0];
    let mut levels = Vec::with_capacity(depth);
    for j in 0..depth {
        let k = params.shape.levels[j].group_size;
        let (pooled, cache) = level_forward(&plan.levels[j], feats[j].view(), k, &params.sa[j], iterations)?;
        levels.push(cache);
        feats.push(pooled);
    }

    let mut props: Vec<Option<PropCache<S>>> = (0..depth).map(|_| None).collect();
    let mut hidden = feats[depth].clone();
    for j in (0..depth).rev() {
        let interp = interpolate(&plan.stencils[j], hidden.view());
        let input = concat(interp.view(), feats[j].view());
        let pre = dense_forward(&input, &params.fp[j]);
        hidden = pre.clone();
        relu_inplace(&mut hidden);
        check_finite(&hidden);
        props[j] = Some(PropCache { input, pre });
    }
    let logits = hidden.dot(&params.head_w).mapv(|v| v + params.head_b[0]).to_vec();
    Ok(ForwardCache {
        levels,
        props: props.into_iter().map(|p| p.expect("every step ran")).collect(),
        feats,
        hidden,
        logits,
    })
}

/// Which activation a calibration step rescales.
#[derive(Clone, Copy)]
enum Stage {
    Level(usize),
    Prop(usize),
}

fn stage_rms<S: Scalar>(plans: &[&WindowPlan], params: &ModelParams<S>, stage: Stage) -> Result<f64> {
    let (mut sq, mut count) = (0.0, 0usize);
    for plan in plans {
        let cache = forward_plan(plan, params)?;
        let acts: Vec<f64> = match stage {
            Stage::Level(j) => cache.feats[j + 1].iter().map(|v| v.as_f64()).collect(),
            Stage::Prop(j) => cache.props[j].pre.iter().map(|v| v.as_f64().max(0.0)).collect(),
        };
        sq += acts.iter().map(|v| v * v).sum::<f64>();
        count += acts.len();
    }
    Ok(if count == 0 { 0.0 } else { (sq / count as f64).sqrt() })
}

/// Rescales a freshly initialized network on sample windows so that every
/// pooled level output and every propagation output has unit RMS and the
/// logits are centered with unit spread. Levels are handled input to output.
pub fn calibrate<S: Scalar>(params: &mut ModelParams<S>, plans: &[&WindowPlan]) -> Result<()> {
    let plans: Vec<&WindowPlan> = plans.iter().copied().filter(|p| p.n > 0).collect();
    if plans.is_empty() {
        return Ok(());
    }
    let depth = params.shape.depth();
    let stages = (0..depth).map(Stage::Level).chain((0..depth).rev().map(Stage::Prop));
    for stage in stages {
        for _ in 0..6 {
            let rms = stage_rms(&plans, params, stage)?;
            if !(rms > 1e-12) || (0.8..1.25).contains(&rms) {
                break;
            }
            let f = S::from_f64(1.0 / rms);
            match stage {
                Stage::Level(j) => {
                    let sa = &mut params.sa[j];
                    sa.init_w.mapv_inplace(|v| v * f);
                    sa.init_b.mapv_inplace(|v| v * f);
                    sa.enc_w.mapv_inplace(|v| v * f);
                }
                Stage::Prop(j) => {
                    params.fp[j].weight.mapv_inplace(|v| v * f);
                    params.fp[j].bias.mapv_inplace(|v| v * f);
                }
            }
        }
    }
    params.head_b[0] = S::zero();
    let logits: Vec<f64> = plans
        .iter()
        .map(|p| forward_plan(p, params).map(|c| c.logits))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .map(|v| v.as_f64())
        .collect();
    let n = logits.len() as f64;
    let mean = logits.iter().sum::<f64>() / n;
    let sd = (logits.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if sd > 1e-12 {
        let f = S::from_f64(1.0 / sd);
        params.head_w.mapv_inplace(|v| v * f);
    }
    params.head_b[0] = S::from_f64(-mean / sd.max(1e-12));
    Ok(())
}

/// Per-event logits for a window; positive means Real.
pub fn wednet_forward<S: Scalar>(
    events: &[Event],
    bone: &[bool],
    geometry: &SensorGeometry,
    params: &ModelParams<S>,
) -> Result<Vec<S>> {
    let plan = WindowPlan::build(events, bone, geometry, &params.shape.levels)?;
    Ok(forward_plan(&plan, params)?.logits)
}

fn level_backward<S: Scalar>(
    plan: &LevelPlan,
    cache: &LevelCache<S>,
    sa: &SaParams<S>,
    grad: &mut SaParams<S>,
    dpooled: ArrayView2<S>,
    k: usize,
    prev_width: usize,
    need_prev: bool,
) -> Option<Array2<S>> {
    let kw = sa.init_w.dim().1;
    let d = sa.init_w.dim().0;
    let cin = 4 + prev_width;
    let rows = plan.grid.len();
    let mut de = Array2::zeros((rows, d));
    for r in 0..rows {
        de.row_mut(r).assign(&dpooled.row(r / k));
    }
    let mut ds: Array2<S> = Array2::zeros((rows, cin));
    for it in cache.iters.iter().rev() {
        let (du, dl) = soft_threshold_backward(de.view(), it.u.view(), sa.lambda.view());
        grad.lambda += &dl;
        // u = e + W * z
        let (dz_col, dw) = conv_cols_backward(du.view(), im2col(it.z.view(), k, kw).view(), &sa.enc_w);
        grad.enc_w += &dw;
        let dz = col2im(dz_col.view(), k, kw, cin);
        ds += &dz;
        // z = s - Q * e
        let neg = dz.mapv(|v| -v);
        let (de_col, dq) = conv_cols_backward(neg.view(), im2col(it.e.view(), k, kw).view(), &sa.dict_q);
        grad.dict_q += &dq;
        de = du + &col2im(de_col.view(), k, kw, d);
    }
    relu_backward(&mut de, cache.e0_pre.view());
    grad.init_b += &de.sum_axis(Axis(0));
    let (ds_col, dw) = conv_cols_backward(de.view(), im2col(cache.s_tilde.view(), k, kw).view(), &sa.init_w);
    grad.init_w += &dw;
    ds += &col2im(ds_col.view(), k, kw, cin);

    if !need_prev {
        return None;
    }
    let prev_rows = plan.grid.iter().copied().max().map_or(0, |m| m + 1);
    let mut dprev = Array2::zeros((prev_rows, prev_width));
    for (r, &m) in plan.grid.iter().enumerate() {
        let mut row = dprev.row_mut(m);
        row += &ds.slice(s![r, 4..]);
    }
    Some(dprev)
}

/// Reverse pass from per-logit gradients to every parameter block.
pub fn backward<S: Scalar>(
    plan: &WindowPlan,
    params: &ModelParams<S>,
    cache: &ForwardCache<S>,
    dlogits: &[S],
) -> ModelParams<S> {
    let mut grad = params.zeros_like();
    if plan.n == 0 {
        return grad;
    }
    assert_eq!(dlogits.len(), plan.n);
    let depth = params.shape.depth();
    let dl = Array1::from(dlogits.to_vec());
    grad.head_b[0] = dl.sum();
    grad.head_w.assign(&cache.hidden.t().dot(&dl));
    let mut dhidden = Array2::zeros(cache.hidden.raw_dim());
    for (mut row, &g) in dhidden.rows_mut().into_iter().zip(dlogits) {
        row.scaled_add(g, &params.head_w);
    }

    let mut dfeats: Vec<Array2<S>> = cache.feats.iter().map(|f| Array2::zeros(f.raw_dim())).collect();
    for j in 0..depth {
        let pc = &cache.props[j];
        let fp = &params.fp[j];
        let mut dpre = dhidden;
        relu_backward(&mut dpre, pc.pre.view());
        grad.fp[j].bias.assign(&dpre.sum_axis(Axis(0)));
        grad.fp[j].weight.assign(&dpre.t().dot(&pc.input));
        let dinput = dpre.dot(&fp.weight);
        let src = params.shape.prop_source(j);
        if j > 0 {
            dfeats[j] += &dinput.slice(s![.., src..]);
        }
        let sources = cache.feats[j + 1].nrows();
        dhidden = interpolate_backward(&plan.stencils[j], dinput.slice(s![.., ..src]), sources);
    }
    dfeats[depth] += &dhidden;

    for j in (0..depth).rev() {
        let k = params.shape.levels[j].group_size;
        let prev_width = cache.feats[j].ncols();
        let dprev = level_backward(
            &plan.levels[j],
            &cache.levels[j],
            &params.sa[j],
            &mut grad.sa[j],
            dfeats[j + 1].view(),
            k,
            prev_width,
            j > 0,
        );
        if let Some(dp) = dprev {
            let mut target = dfeats[j].slice_mut(s![..dp.nrows(), ..]);
            target += &dp;
        }
    }
    grad
}

#[inline]
fn target(label: Label) -> Option<f64> {
    match label {
        Label::Real => Some(1.0),
        Label::Noise => Some(0.0),
        Label::Unknown => None,
    }
}

/// Stable per-event loss `max(z, 0) - z y + ln(1 + exp(-|z|))`.
#[inline]
pub fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy over labeled events; Unknown labels are skipped.
pub fn loss_bce<S: Scalar>(logits: &[S], truth: &[Label]) -> f64 {
    assert_eq!(logits.len(), truth.len());
    let mut total = 0.0;
    let mut n = 0usize;
    for (&z, &l) in logits.iter().zip(truth) {
        if let Some(y) = target(l) {
            total += bce_logit(z.as_f64(), y);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        total / n as f64
    }
}

/// Inverse-frequency class weights `(real, noise)` normalized so a balanced
/// batch gets weight one per event.
pub fn class_weights(truth: &[Label]) -> (f64, f64) {
    let real = truth.iter().filter(|&&l| l == Label::Real).count();
    let noise = truth.iter().filter(|&&l| l == Label::Noise).count();
    let n = (real + noise) as f64;
    match (real, noise) {
        (0, _) | (_, 0) => (1.0, 1.0),
        _ => (n / (2.0 * real as f64), n / (2.0 * noise as f64)),
    }
}

/// Weighted mean loss and its gradient w.r.t. each logit. `weights` are the
/// `(real, noise)` class weights; `count` is the normalizing event count.
pub fn loss_bce_weighted<S: Scalar>(logits: &[S], truth: &[Label], weights: (f64, f64), count: usize) -> (f64, Vec<S>) {
    assert_eq!(logits.len(), truth.len());
    let norm = count.max(1) as f64;
    let mut total = 0.0;
    let grad = logits
        .iter()
        .zip(truth)
        .map(|(&z, &l)| match target(l) {
            Some(y) => {
                let w = if y > 0.5 { weights.0 } else { weights.1 };
                let z = z.as_f64();
                total += w * bce_logit(z, y);
                S::from_f64(w * (sigmoid(z) - y) / norm)
            }
            None => S::zero(),
        })
        .collect();
    (total / norm, grad)
}
