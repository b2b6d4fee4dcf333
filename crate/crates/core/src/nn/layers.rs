//! Layer primitives on dense feature grids.
//!
//! Grouped grids of shape `T x K x C` are kept as row-major `(T*K) x C`
//! matrices so the neighbor-axis convolution becomes an im2col product.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use super::Scalar;
use crate::error::{Error, Result};

/// `(T*K) x C` -> `(T*K) x (width*C)`, zero-padded 'same' windows along K.
/// Column `d*C + c` of row `t*K + k` holds `x[t, k + d - width/2, c]`.
pub fn im2col<S: Scalar>(x: ArrayView2<S>, k: usize, width: usize) -> Array2<S> {
    if width == 1 {
        return x.to_owned();
    }
    let rows = x.nrows();
    let c = x.ncols();
    let pad = width / 2;
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let mut out = vec![S::zero(); rows * width * c];
    for (r, dst) in out.chunks_exact_mut(width * c).enumerate() {
        let ki = r % k;
        let base = r - ki;
        for d in 0..width {
            let from = ki as isize + d as isize - pad as isize;
            if from < 0 || from >= k as isize {
                continue;
            }
            let row = (base + from as usize) * c;
            dst[d * c..(d + 1) * c].copy_from_slice(&src[row..row + c]);
        }
    }
    Array2::from_shape_vec((rows, width * c), out).expect("sized above")
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the grid.
pub fn col2im<S: Scalar>(dcol: ArrayView2<S>, k: usize, width: usize, c: usize) -> Array2<S> {
    if width == 1 {
        return dcol.to_owned();
    }
    let rows = dcol.nrows();
    let pad = width / 2;
    let dcol = dcol.as_standard_layout();
    let src = dcol.as_slice().expect("standard layout");
    let mut dx = vec![S::zero(); rows * c];
    for (r, from_row) in src.chunks_exact(width * c).enumerate() {
        let ki = r % k;
        let base = r - ki;
        for d in 0..width {
            let to = ki as isize + d as isize - pad as isize;
            if to < 0 || to >= k as isize {
                continue;
            }
            let row = (base + to as usize) * c;
            for (t, &v) in dx[row..row + c].iter_mut().zip(&from_row[d * c..(d + 1) * c]) {
                *t += v;
            }
        }
    }
    Array2::from_shape_vec((rows, c), dx).expect("sized above")
}

fn weight_matrix<S: Scalar>(weight: &Array3<S>) -> ArrayView2<'_, S> {
    let (o, w, c) = weight.dim();
    weight
        .view()
        .into_shape_with_order((o, w * c))
        .expect("parameter arrays are contiguous")
}

/// Linear neighbor-axis convolution of an im2col matrix with a
/// `C_out x width x C_in` kernel.
pub fn conv_cols<S: Scalar>(col: ArrayView2<S>, weight: &Array3<S>) -> Array2<S> {
    // the matrices are tall and thin, where a row-by-row product beats a
    // packed GEMM
    let wt = weight_matrix(weight).t().as_standard_layout().into_owned();
    let wt = wt.as_slice().expect("standard layout");
    let (rows, inner) = col.dim();
    let outs = weight.dim().0;
    let col = col.as_standard_layout();
    let src = col.as_slice().expect("standard layout");
    let mut out = vec![S::zero(); rows * outs];
    if outs > 0 && inner > 0 {
        for (dst, row) in out.chunks_exact_mut(outs).zip(src.chunks_exact(inner)) {
            for (&a, w) in row.iter().zip(wt.chunks_exact(outs)) {
                if a != S::zero() {
                    for (d, &wv) in dst.iter_mut().zip(w) {
                        *d += a * wv;
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((rows, outs), out).expect("sized above")
}

/// `conv_cols(im2col(x, k, width), weight)` without building the column
/// matrix.
pub fn conv_same<S: Scalar>(x: ArrayView2<S>, k: usize, weight: &Array3<S>) -> Array2<S> {
    let (outs, width, c) = weight.dim();
    let rows = x.nrows();
    let weight = weight.as_standard_layout();
    let wt = weight.as_slice().expect("standard layout");
    let x = x.as_standard_layout();
    let src = x.as_slice().expect("standard layout");
    let pad = width / 2;
    let span = width * c;
    let mut out = vec![S::zero(); rows * outs];
    if outs > 0 && c > 0 {
        for (r, dst) in out.chunks_exact_mut(outs).enumerate() {
            let ki = r % k;
            // taps that land inside the group; the input rows they read are
            // contiguous, as is the matching stretch of each filter
            let lo = pad.saturating_sub(ki);
            let hi = width.min(k + pad - ki);
            if lo >= hi {
                continue;
            }
            let first = r + lo - pad;
            let window = &src[first * c..(first + hi - lo) * c];
            for (o, filter) in dst.iter_mut().zip(wt.chunks_exact(span)) {
                *o = dot(window, &filter[lo * c..hi * c]);
            }
        }
    }
    Array2::from_shape_vec((rows, outs), out).expect("sized above")
}

/// Eight running partial sums, so the loop vectorizes.
#[inline(always)]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 8];
    let (a8, b8) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: S = a8
        .remainder()
        .iter()
        .zip(b8.remainder())
        .map(|(&p, &q)| p * q)
        .fold(S::zero(), |s, v| s + v);
    for (p, q) in a8.zip(b8) {
        let p: &[S; 8] = p.try_into().expect("eight lanes");
        let q: &[S; 8] = q.try_into().expect("eight lanes");
        for i in 0..8 {
            acc[i] += p[i] * q[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

/// Gradients of [`conv_cols`]: returns `(d_col, d_weight)`.
pub fn conv_cols_backward<S: Scalar>(
    dout: ArrayView2<S>,
    col: ArrayView2<S>,
    weight: &Array3<S>,
) -> (Array2<S>, Array3<S>) {
    let wm = weight_matrix(weight);
    let dcol = dout.dot(&wm);
    let dw = dout.t().dot(&col);
    let dw = dw
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order(weight.raw_dim())
        .expect("gradient matches kernel shape");
    (dcol, dw)
}

pub fn add_bias<S: Scalar>(y: &mut Array2<S>, bias: ArrayView1<S>) {
    let b = bias.to_vec();
    match y.as_slice_mut() {
        Some(data) if !b.is_empty() => {
            for row in data.chunks_exact_mut(b.len()) {
                for (v, &bb) in row.iter_mut().zip(&b) {
                    *v += bb;
                }
            }
        }
        _ => {
            for mut row in y.rows_mut() {
                row += &bias;
            }
        }
    }
}

pub fn relu_inplace<S: Scalar>(y: &mut Array2<S>) {
    y.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
}

/// Zeroes `grad` wherever the pre-activation was not positive.
pub fn relu_backward<S: Scalar>(grad: &mut Array2<S>, pre: ArrayView2<S>) {
    grad.zip_mut_with(&pre, |g, &p| {
        if p <= S::zero() {
            *g = S::zero();
        }
    });
}

#[inline]
pub fn soft<S: Scalar>(x: S, lambda: S) -> S {
    if x > lambda {
        x - lambda
    } else if x < -lambda {
        x + lambda
    } else {
        S::zero()
    }
}

/// `sign(x) * max(|x| - lambda, 0)`.
pub fn soft_threshold<S: Scalar>(x: S, lambda: S) -> S {
    soft(x, lambda)
}

/// Column-wise soft threshold with one level per channel.
pub fn soft_threshold_cols<S: Scalar>(u: ArrayView2<S>, lambda: ArrayView1<S>) -> Array2<S> {
    let mut out = u.as_standard_layout().into_owned();
    let l = lambda.to_vec();
    if l.is_empty() {
        return out;
    }
    for row in out.as_slice_mut().expect("standard layout").chunks_exact_mut(l.len()) {
        for (v, &ll) in row.iter_mut().zip(&l) {
            *v = soft(*v, ll);
        }
    }
    out
}

/// Backward of [`soft_threshold_cols`]: gradient w.r.t. the input, and the
/// accumulated gradient w.r.t. the per-channel levels.
pub fn soft_threshold_backward<S: Scalar>(
    dout: ArrayView2<S>,
    u: ArrayView2<S>,
    lambda: ArrayView1<S>,
) -> (Array2<S>, Array1<S>) {
    let mut du = Array2::zeros(u.raw_dim());
    let mut dl = Array1::zeros(lambda.len());
    for ((drow, urow), mut durow) in dout.rows().into_iter().zip(u.rows()).zip(du.rows_mut()) {
        for c in 0..lambda.len() {
            let x = urow[c];
            let l = lambda[c];
            if x > l {
                durow[c] = drow[c];
                dl[c] -= drow[c];
            } else if x < -l {
                durow[c] = drow[c];
                dl[c] += drow[c];
            }
        }
    }
    (du, dl)
}

/// Sum over the K axis of a `(T*K) x D` grid, in fixed order.
pub fn sum_pool_rows<S: Scalar>(x: ArrayView2<S>, k: usize) -> Array2<S> {
    let t = x.nrows() / k;
    let mut out = Array2::zeros((t, x.ncols()));
    for ti in 0..t {
        let mut acc = out.row_mut(ti);
        for ki in 0..k {
            acc += &x.row(ti * k + ki);
        }
    }
    out
}

/// `T x K x C` convolution along K with 'same' padding followed by a
/// rectifier; `K' = K`.
pub fn sfe_forward<S: Scalar>(input: ArrayView3<S>, weight: &Array3<S>, bias: ArrayView1<S>) -> Result<Array3<S>> {
    let (t, k, c_in) = input.dim();
    let (c_out, width, w_in) = weight.dim();
    if w_in != c_in || bias.len() != c_out {
        return Err(Error::ShapeMismatch(format!(
            "kernel {:?} / bias {} against input channels {c_in}",
            weight.dim(),
            bias.len()
        )));
    }
    if width > k || width % 2 == 0 {
        return Err(Error::ShapeMismatch(format!("kernel width {width} with K = {k}")));
    }
    let flat = input
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((t * k, c_in))
        .expect("standard layout");
    let col = im2col(flat.view(), k, width);
    let mut y = conv_cols(col.view(), weight);
    add_bias(&mut y, bias);
    relu_inplace(&mut y);
    Ok(y.into_shape_with_order((t, k, c_out)).expect("same element count"))
}

/// Sums a `T x K x D` grid over K.
pub fn sum_pool<S: Scalar>(grid: ArrayView3<S>) -> Array2<S> {
    grid.sum_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random3(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Array3<f64> {
        Array::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_kernel_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random3(&mut rng, (3, 5, 2));
        let w = Array3::<f64>::zeros((4, 3, 2));
        let y = sfe_forward(x.view(), &w, Array1::zeros(4).view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_nonnegative_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random3(&mut rng, (3, 4, 3)).mapv(f64::abs);
        let mut w = Array3::<f64>::zeros((3, 1, 3));
        for c in 0..3 {
            w[[c, 0, c]] = 1.0;
        }
        let y = sfe_forward(x.view(), &w, Array1::zeros(3).view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (t, k, ci, co, width) = (4, 7, 3, 5, 3);
        let x = random3(&mut rng, (t, k, ci));
        let w = random3(&mut rng, (co, width, ci));
        let b = Array1::from_shape_fn(co, |_| rng.random_range(-0.5..0.5));
        let xf = x.mapv(|v| v as f32);
        let wf = w.mapv(|v| v as f32);
        let bf = b.mapv(|v| v as f32);
        let y = sfe_forward(xf.view(), &wf, bf.view()).unwrap();
        for ti in 0..t {
            for ki in 0..k {
                for o in 0..co {
                    let mut acc = b[o];
                    for d in 0..width {
                        let src = ki as isize + d as isize - 1;
                        if src < 0 || src >= k as isize {
                            continue;
                        }
                        for c in 0..ci {
                            acc += w[[o, d, c]] * x[[ti, src as usize, c]];
                        }
                    }
                    let expected = acc.max(0.0);
                    assert!((y[[ti, ki, o]] as f64 - expected).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let x = Array3::<f64>::zeros((2, 3, 4));
        let w = Array3::<f64>::zeros((2, 1, 5));
        assert!(matches!(
            sfe_forward(x.view(), &w, Array1::zeros(2).view()),
            Err(Error::ShapeMismatch(_))
        ));
        let w = Array3::<f64>::zeros((2, 5, 4));
        assert!(sfe_forward(x.view(), &w, Array1::zeros(2).view()).is_err());
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(2.0, 0.5), 1.5);
        assert_eq!(soft_threshold(-0.3, 0.5), 0.0);
        assert_eq!(soft_threshold(-2.0, 0.5), -1.5);
        for v in [-3.0, -0.1, 0.0, 0.7] {
            assert_eq!(soft_threshold(v, 0.0), v);
        }
    }

    #[test]
    fn sum_pool_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random3(&mut rng, (5, 6, 3));
        let pooled = sum_pool(g.view());
        let flat = g.clone().into_shape_with_order((30, 3)).unwrap();
        assert_eq!(sum_pool_rows(flat.view(), 6), pooled);
        for t in 0..5 {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..6 {
                    acc += g[[t, k, c]];
                }
                assert_eq!(pooled[[t, c]], acc);
            }
        }
        let single = random3(&mut rng, (4, 1, 2));
        assert_eq!(sum_pool(single.view()), single.index_axis(Axis(1), 0));
    }

    #[test]
    fn direct_convolution_matches_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for (k, width) in [(5, 3), (4, 1), (3, 3)] {
            let x = random3(&mut rng, (3, k, 4)).into_shape_with_order((3 * k, 4)).unwrap();
            let w = random3(&mut rng, (6, width, 4));
            let a = conv_same(x.view(), k, &w);
            let b = conv_cols(im2col(x.view(), k, width).view(), &w);
            for (p, q) in a.iter().zip(&b) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
        let y = Array2::from_shape_fn((12, 9), |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = (&im2col(x.view(), 4, 3) * &y).sum();
        let rhs: f64 = (&x * &col2im(y.view(), 4, 3, 3)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
