//! Goodness-of-fit checks for the noise sampler.

use statrs::distribution::{ChiSquared, ContinuousCDF};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    pub dof: usize,
}

/// Pearson chi-square of observed per-pixel counts against a Poisson pmf.
/// Cells with expected frequency below 5 are pooled into their neighbor and
/// the upper tail is one open-ended cell.
pub fn chi_square_poisson(counts: &[u64], mean: f64) -> TestOutcome {
    let total = counts.len() as f64;
    let max = counts.iter().copied().max().unwrap_or(0);
    let mut observed = vec![0f64; max as usize + 1];
    for &c in counts {
        observed[c as usize] += 1.0;
    }
    // expected cell frequencies 0..=max, last cell is the tail P(X >= max)
    let mut expected: Vec<f64> = (0..=max)
        .map(|k| total * crate::sim::poisson_count_pmf(k, mean, 1.0))
        .collect();
    let head: f64 = expected[..expected.len() - 1].iter().sum();
    *expected.last_mut().unwrap() = total - head;

    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(&expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= 5.0 {
            cells.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => cells.push((o_acc, e_acc)),
        }
    }
    let statistic: f64 = cells.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN);
    TestOutcome {
        statistic,
        p_value,
        dof,
    }
}

/// Asymptotic Kolmogorov tail `Q(lambda) = 2 sum (-1)^(k-1) exp(-2 k^2 lambda^2)`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against an exponential with `rate`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> TestOutcome {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let cdf = 1.0 - (-rate * x).exp();
        d = d.max((i as f64 + 1.0) / n - cdf).max(cdf - i as f64 / n);
    }
    let sq = n.sqrt();
    // small-sample correction of the asymptotic distribution
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    TestOutcome {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
        dof: s.len(),
    }
}
