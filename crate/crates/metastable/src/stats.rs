//! Statistical tests and fits used by the verification harness: KS tests,
//! chi-square tests, Wilson intervals, exact binomial tests, least squares.

use crate::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Lanczos approximation of ln Gamma(x), x > 0. Relative error ~1e-13.
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = G[0];
    let t = x + 7.5;
    for (i, &g) in G.iter().enumerate().skip(1) {
        a += g / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        // Series representation.
        let mut sum = 1.0 / a;
        let mut term = sum;
        let mut n = a;
        for _ in 0..500 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        sum * (-x + a * x.ln() - ln_gamma(a)).exp()
    } else {
        1.0 - gamma_q_cf(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) by continued fraction.
fn gamma_q_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / 1e-300;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < 1e-300 {
            d = 1e-300;
        }
        c = b + an / c;
        if c.abs() < 1e-300 {
            c = 1e-300;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-15 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p(a, x)
    } else {
        gamma_q_cf(a, x)
    }
}

/// Survival function of the chi-square distribution with `df` degrees.
pub fn chi2_sf(x: f64, df: f64) -> f64 {
    gamma_q(0.5 * df, 0.5 * x).clamp(0.0, 1.0)
}

/// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{j-1} e^{-2 j^2 lambda^2}.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let t = (-2.0 * (j as f64 * j as f64) * lambda * lambda).exp();
        sum += sign * t;
        if t < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `xs` against the CDF `cdf`.
/// Returns (D, p) with the Stephens small-sample correction.
pub fn ks_test_cdf<F: Fn(f64) -> f64>(xs: &[f64], cdf: F) -> (f64, f64) {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i as f64 + 1.0) / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    let lambda = d * (n.sqrt() + 0.12 + 0.11 / n.sqrt());
    (d, kolmogorov_sf(lambda))
}

/// KS test of exit times against the exponential law with the rate estimated
/// as 1/mean. Estimating the rate makes the reported p conservative (large).
pub fn ks_test_exponential(times: &[f64]) -> Result<(f64, f64)> {
    if times.len() < 10 {
        return Err(Error::Input("need at least 10 samples".into()));
    }
    let rate = 1.0 / mean(times);
    Ok(ks_test_cdf(times, |t| 1.0 - (-rate * t).exp()))
}

/// Two-sample KS test. Returns (D, p).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    ys.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0f64;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        if x <= y {
            i += 1;
        }
        if y <= x {
            j += 1;
        }
        let diff = (i as f64 / n as f64 - j as f64 / m as f64).abs();
        d = d.max(diff);
    }
    let ne = (n as f64 * m as f64) / (n as f64 + m as f64);
    let lambda = d * (ne.sqrt() + 0.12 + 0.11 / ne.sqrt());
    (d, kolmogorov_sf(lambda))
}

/// Chi-square test of independence on a contingency table (rows x cols).
/// Rows/columns with zero totals are dropped. Returns (stat, df, p).
pub fn chi2_independence(table: &[Vec<u64>]) -> Result<(f64, usize, f64)> {
    let rows: Vec<&Vec<u64>> = table.iter().filter(|r| r.iter().sum::<u64>() > 0).collect();
    if rows.is_empty() {
        return Err(Error::Input("empty contingency table".into()));
    }
    let ncol = rows[0].len();
    let col_tot: Vec<u64> = (0..ncol)
        .map(|c| rows.iter().map(|r| r[c]).sum::<u64>())
        .collect();
    let keep: Vec<usize> = (0..ncol).filter(|&c| col_tot[c] > 0).collect();
    if keep.len() < 2 || rows.len() < 2 {
        return Err(Error::Input(
            "contingency table needs at least 2 non-empty rows and columns".into(),
        ));
    }
    let grand: u64 = col_tot.iter().sum();
    let mut stat = 0.0;
    for r in &rows {
        let rt: u64 = r.iter().sum();
        for &c in &keep {
            let e = rt as f64 * col_tot[c] as f64 / grand as f64;
            let o = r[c] as f64;
            stat += (o - e) * (o - e) / e;
        }
    }
    let df = (rows.len() - 1) * (keep.len() - 1);
    Ok((stat, df, chi2_sf(stat, df as f64)))
}

/// Wilson score interval for a binomial proportion at `z` standard errors.
pub fn wilson_ci(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn ln_binom_pmf(k: u64, n: u64, p: f64) -> f64 {
    let (kf, nf) = (k as f64, n as f64);
    ln_gamma(nf + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(nf - kf + 1.0)
        + kf * p.ln()
        + (nf - kf) * (1.0 - p).ln()
}

/// Exact two-sided binomial test: the total probability of all outcomes no
/// more likely than the observed one. Scans outward from the mode, so it is
/// cheap even for n ~ 1e6.
pub fn exact_binomial_two_sided(k: u64, n: u64, p: f64) -> f64 {
    let ln_obs = ln_binom_pmf(k, n, p) + 1e-9;
    let mode = (p * (n as f64 + 1.0)).floor().min(n as f64) as u64;
    let mut total = 0.0f64;
    // Walk left and right from the mode until the pmf is negligible.
    for dir in [-1i64, 1i64] {
        let mut i = if dir < 0 { mode as i64 } else { mode as i64 + 1 };
        loop {
            if i < 0 || i > n as i64 {
                break;
            }
            let lp = ln_binom_pmf(i as u64, n, p);
            if lp < ln_obs.min(-45.0) && (i - mode as i64).unsigned_abs() as f64 > 8.0 * (n as f64 * p * (1.0 - p)).sqrt() {
                break;
            }
            if lp <= ln_obs {
                total += lp.exp();
            }
            i += dir;
        }
    }
    total.min(1.0)
}

/// Least-squares line through (x, y); returns (slope, intercept).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    let _ = n;
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Total-variation distance between two discrete distributions on a shared
/// support, `0.5 * sum |p - q|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p
        .iter()
        .zip(q.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
}

/// Histogram of `xs` over [lo, hi) with `bins` equal cells, normalized to
/// total mass 1 (samples outside the range are clamped into the end cells).
pub fn histogram(xs: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let w = (hi - lo) / bins as f64;
    for &x in xs {
        let mut b = ((x - lo) / w).floor() as i64;
        if b < 0 {
            b = 0;
        }
        if b >= bins as i64 {
            b = bins as i64 - 1;
        }
        h[b as usize] += 1.0;
    }
    let n = xs.len() as f64;
    for v in &mut h {
        *v /= n;
    }
    h
}
