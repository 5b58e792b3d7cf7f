//! Goodness of fit by parametric bootstrap, the Poissonian calibration model
//! and weighted sinusoid fits.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use std::f64::consts::{PI, TAU};

use crate::mle::{log_likelihood, reconstruct, ReconstructionParams};
use crate::povm::MeasurementContext;
use crate::rng::derive_seed;
use crate::sim::{simulate_dataset, Dataset};
use crate::twirl::BlockOperator;
use crate::{Error, Real, Result};

/// `Σ m log(m / M_i)` over nonzero counts, with `M_i` the setting total.
pub fn unconstrained_loglik(data: &Dataset) -> f64 {
    data.settings
        .iter()
        .map(|s| {
            let total = s.total();
            s.counts.iter().filter(|(_, m)| *m > 0.0).map(|(_, m)| m * (m / total).ln()).sum::<f64>()
        })
        .sum()
}

/// Logarithmic likelihood ratio `−2(ℒ − ℒ_u)` against the unconstrained model.
pub fn log_lr(loglik: f64, data: &Dataset) -> f64 {
    -2.0 * (loglik - unconstrained_loglik(data))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub original_lr: f64,
    pub boot_lrs: Vec<f64>,
    /// `(original − mean) / s` with `s` the sample standard deviation.
    pub sigma_deviation: f64,
}

/// Mean and sample (`n − 1`) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Parametric bootstrap of the log-LR.
///
/// `original` is the dataset `estimate` was reconstructed from. Replicate
/// `b` draws `m[i]` samples per setting from `estimate` with seed
/// `derive_seed(seed, b)` and is reconstructed with `params`, so the replicates
/// are independent of scheduling.
pub fn parametric_bootstrap<T: Real>(
    estimate: &BlockOperator<T>,
    context: &MeasurementContext<T>,
    original: &Dataset,
    m: &[u64],
    n_boot: usize,
    params: &ReconstructionParams,
    seed: u64,
) -> Result<BootstrapReport> {
    if n_boot < 2 {
        return Err(Error::invalid("n_boot must be at least 2"));
    }
    let original_lr = log_lr(log_likelihood(estimate, context, original)?, original);
    let boot_lrs = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let data = simulate_dataset(estimate, context, m, derive_seed(seed, b as u64))?;
            let rep = reconstruct(context, &data, params)?;
            Ok(log_lr(rep.final_loglik(), &data))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std) = mean_std(&boot_lrs);
    Ok(BootstrapReport { original_lr, boot_lrs, sigma_deviation: (original_lr - mean) / std })
}

/// Whether a fit passes the χ² gate: `chi2` at most the `1 − p` quantile of
/// χ²(`dof`).
pub fn chi2_gate(chi2: f64, dof: usize, p: f64) -> Result<bool> {
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(chi2 <= dist.inverse_cdf(1.0 - p))
}

pub const CHI2_GATE_P: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonFit {
    pub mu_hat: f64,
    /// Total Fisher information `M Σ_n q_n'² / q_n` at `mu_hat`.
    pub fisher_info: f64,
}

/// Poisson photon-number distribution truncated to `cols` entries, the last
/// holding the tail mass, with first and second derivatives in `μ`.
fn poisson_columns(mu: f64, cols: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pmf = |m: isize| -> f64 {
        if m < 0 {
            0.0
        } else if mu == 0.0 {
            if m == 0 { 1.0 } else { 0.0 }
        } else {
            let m = m as f64;
            (-mu + m * mu.ln() - ln_factorial(m)).exp()
        }
    };
    let last = cols - 1;
    let mut p = Vec::with_capacity(cols);
    let mut d1 = Vec::with_capacity(cols);
    let mut d2 = Vec::with_capacity(cols);
    for m in 0..last as isize {
        p.push(pmf(m));
        d1.push(pmf(m - 1) - pmf(m));
        d2.push(pmf(m - 2) - 2.0 * pmf(m - 1) + pmf(m));
    }
    let mut tail = 0.0;
    let mut j = last as isize;
    loop {
        let t = pmf(j);
        tail += t;
        if (t <= 1e-18 * tail && j as f64 > mu) || j > last as isize + 10_000 {
            break;
        }
        j += 1;
    }
    p.push(tail);
    let l = last as isize;
    d1.push(pmf(l - 1));
    d2.push(pmf(l - 2) - pmf(l - 1));
    (p, d1, d2)
}

fn ln_factorial(m: f64) -> f64 {
    statrs::function::gamma::ln_gamma(m + 1.0)
}

/// Maximum-likelihood Poisson mean seen through a detector response.
///
/// `counts[n]` is the number of events with detected outcome `n` and
/// `response[n][m]` the probability of outcome `n` given `m` photons. The
/// last column stands for `cols − 1` or more photons. The objective
/// `Σ_n m(n) log Σ_m T_{nm} Pois(m; μ)` is maximized over `μ ≥ 0` by Newton
/// steps on its derivative, falling back to bisection whenever a step leaves
/// the current bracket.
pub fn poisson_mle(counts: &[f64], response: &[Vec<f64>]) -> Result<PoissonFit> {
    let rows = response.len();
    let cols = response.first().map_or(0, |r| r.len());
    if counts.is_empty() || counts.len() > rows || cols < 2 || response.iter().any(|r| r.len() != cols) {
        return Err(Error::dimension("counts and response shapes disagree"));
    }
    for m in 0..cols {
        let s: f64 = response.iter().map(|r| r[m]).sum();
        if response.iter().any(|r| r[m] < 0.0) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("response column {m} is not stochastic")));
        }
    }
    if counts.iter().any(|&c| c < 0.0 || !c.is_finite()) {
        return Err(Error::invalid("counts must be nonnegative"));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::invalid("all counts are zero"));
    }
    // Score, its derivative and the per-sample Fisher information at μ.
    let eval = |mu: f64| -> (f64, f64, f64) {
        let (p, d1, d2) = poisson_columns(mu, cols);
        let (mut g, mut h, mut info) = (0.0, 0.0, 0.0);
        for (n, row) in response.iter().enumerate() {
            let q: f64 = row.iter().zip(&p).map(|(t, x)| t * x).sum();
            let q1: f64 = row.iter().zip(&d1).map(|(t, x)| t * x).sum();
            let q2: f64 = row.iter().zip(&d2).map(|(t, x)| t * x).sum();
            if q > 0.0 {
                info += q1 * q1 / q;
            }
            let c = counts.get(n).copied().unwrap_or(0.0);
            if c > 0.0 {
                if q <= 0.0 {
                    return (f64::INFINITY, f64::NEG_INFINITY, info);
                }
                g += c * q1 / q;
                h += c * (q2 / q - (q1 / q).powi(2));
            }
        }
        (g, h, info)
    };
    let fit = |mu: f64| {
        let (_, _, info) = eval(mu);
        PoissonFit { mu_hat: mu, fisher_info: total * info }
    };
    let mean: f64 = counts.iter().enumerate().map(|(n, c)| n as f64 * c).sum::<f64>() / total;
    let (g0, _, _) = eval(0.0);
    if g0 <= 0.0 {
        return Ok(fit(0.0));
    }
    let mut lo = 0.0;
    let mut hi = mean.max(1.0);
    while eval(hi).0 > 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::numerical("Poisson likelihood does not turn over below μ = 1e6"));
        }
    }
    let mut mu = mean.clamp(lo, hi);
    for _ in 0..200 {
        let (g, h, _) = eval(mu);
        if g > 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let newton = if h < 0.0 { mu - g / h } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - mu).abs() <= 1e-15 * (1.0 + mu) || hi - lo <= 1e-15 * (1.0 + hi) {
            return Ok(fit(next));
        }
        mu = next;
    }
    Ok(fit(mu))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub chi2: f64,
    pub dof: usize,
    pub notes: Vec<String>,
}

fn sinusoid_chi2(p: &Vector4<f64>, v: &[f64], y: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(y).zip(w).map(|((&x, &t), &wi)| wi * (t - (p[2] * (p[0] * x + p[1]).sin() + p[3])).powi(2)).sum()
}

/// Weighted linear fit of `p sin(a v) + q cos(a v) + d` for a fixed `a`.
fn linear_at(a: f64, v: &[f64], y: &[f64], w: &[f64]) -> Option<(Vector4<f64>, f64)> {
    let n = v.len();
    let x = DMatrix::from_fn(n, 3, |i, j| {
        let s = w[i].sqrt();
        s * match j {
            0 => (a * v[i]).sin(),
            1 => (a * v[i]).cos(),
            _ => 1.0,
        }
    });
    let rhs = DVector::from_fn(n, |i, _| w[i].sqrt() * y[i]);
    let sol = x.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let (ps, qc, d) = (sol[0], sol[1], sol[2]);
    let p = Vector4::new(a, qc.atan2(ps), ps.hypot(qc), d);
    let chi2 = sinusoid_chi2(&p, v, y, w);
    Some((p, chi2))
}

fn levenberg_marquardt(mut p: Vector4<f64>, v: &[f64], y: &[f64], w: &[f64]) -> (Vector4<f64>, f64) {
    let mut chi2 = sinusoid_chi2(&p, v, y, w);
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for ((&x, &t), &wi) in v.iter().zip(y).zip(w) {
            let ph = p[0] * x + p[1];
            let (s, c) = ph.sin_cos();
            let r = t - (p[2] * s + p[3]);
            let g = Vector4::new(p[2] * c * x, p[2] * c, s, 1.0);
            jtj += wi * g * g.transpose();
            jtr += wi * r * g;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for i in 0..4 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = p + step;
            let c2 = sinusoid_chi2(&trial, v, y, w);
            if c2.is_finite() && c2 <= chi2 {
                let done = chi2 - c2 <= 1e-15 * (1.0 + chi2) && step.norm() <= 1e-12 * (1.0 + p.norm());
                p = trial;
                chi2 = c2;
                lambda = (lambda * 0.3).max(1e-15);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (p, chi2)
}

/// Weighted least-squares fit of `c · sin(a v + b) + d`.
///
/// Starting frequencies come from a grid scan of the linear subproblem; each
/// is refined by Levenberg–Marquardt from phases `0, π/2, π, 3π/2` and the
/// best result is returned with `a > 0`, `c ≥ 0` and `b ∈ [0, 2π)`.
pub fn sinusoid_fit(v: &[f64], y: &[f64], w: &[f64]) -> Result<SinusoidFit> {
    let n = v.len();
    if n < 5 || y.len() != n || w.len() != n {
        return Err(Error::invalid("need at least 5 points with matching v, y and w"));
    }
    if w.iter().any(|&x| !(x > 0.0)) || v.iter().chain(y).any(|x| !x.is_finite()) {
        return Err(Error::invalid("weights must be positive and data finite"));
    }
    let (vmin, vmax) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
    let span = vmax - vmin;
    if !(span > 0.0) {
        return Err(Error::invalid("v must take at least two values"));
    }
    let a_max = PI * (n - 1) as f64 / span;
    let a_min = 0.25 * PI / span;
    let grid = 40 * n;
    let mut scan: Vec<(f64, Vector4<f64>)> = (0..grid)
        .filter_map(|i| {
            let a = a_min * (a_max / a_min).powf(i as f64 / (grid - 1) as f64);
            linear_at(a, v, y, w).map(|(p, c)| (c, p))
        })
        .collect();
    scan.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut best: Option<(Vector4<f64>, f64)> = None;
    for (_, p0) in scan.iter().take(3) {
        for k in 0..4 {
            let start = Vector4::new(p0[0], k as f64 * 0.5 * PI, p0[2].max(1e-12), p0[3]);
            let (p, c2) = levenberg_marquardt(start, v, y, w);
            if c2.is_finite() && best.as_ref().is_none_or(|b| c2 < b.1) {
                best = Some((p, c2));
            }
        }
        let (p, c2) = levenberg_marquardt(*p0, v, y, w);
        if c2.is_finite() && best.as_ref().is_none_or(|b| c2 < b.1) {
            best = Some((p, c2));
        }
    }
    let (p, chi2) = best.ok_or_else(|| Error::numerical("sinusoid fit did not converge from any start"))?;
    let (mut a, mut b, mut c, d) = (p[0], p[1], p[2], p[3]);
    if a < 0.0 {
        a = -a;
        b = PI - b;
    }
    if c < 0.0 {
        c = -c;
        b += PI;
    }
    b = b.rem_euclid(TAU);
    if b >= TAU {
        b = 0.0;
    }
    let mut notes = Vec::new();
    let scale = y.iter().map(|t| (t - d).abs()).fold(0.0, f64::max);
    if c <= 1e-8 * (1.0 + scale) {
        notes.push("amplitude c is zero: a and b are not identifiable".to_string());
    }
    Ok(SinusoidFit { a, b, c, d, chi2, dof: n - 4, notes })
}
