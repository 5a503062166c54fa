//! Convergence diagnostics for MCMC output.

use alloc::vec;
use alloc::vec::Vec;

use crate::stats;

/// Sample autocorrelation of a single series at lags `0..=max_lag`.
pub fn acf(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let max_lag = max_lag.min(n.saturating_sub(1));
    let m = stats::mean(x);
    let c0: f64 = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    if !(c0 > 0.0) {
        let mut out = vec![0.0; max_lag + 1];
        if let Some(first) = out.first_mut() {
            *first = 1.0;
        }
        return out;
    }
    (0..=max_lag)
        .map(|lag| {
            let c: f64 = (0..n - lag)
                .map(|t| (x[t] - m) * (x[t + lag] - m))
                .sum::<f64>()
                / n as f64;
            c / c0
        })
        .collect()
}

/// Autocovariance at `lag` pooled over chains, each demeaned separately.
fn pooled_autocov(chains: &[Vec<f64>], means: &[f64], lag: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (c, &m) in chains.iter().zip(means) {
        if c.len() <= lag {
            continue;
        }
        for t in 0..c.len() - lag {
            total += (c[t] - m) * (c[t + lag] - m);
        }
        count += c.len();
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Effective sample size from Geyer's initial positive sequence on the
/// pooled autocorrelation: `N / τ` with `τ = -1 + 2 Σ Γ_k`, where
/// `Γ_k = ρ_{2k} + ρ_{2k+1}` summed while positive.
///
/// A series with no variance has ESS equal to its length.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let total: usize = chains.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
    let c0 = pooled_autocov(chains, &means, 0);
    if !(c0 > 0.0) {
        return total as f64;
    }
    let max_len = chains.iter().map(Vec::len).max().unwrap_or(0);
    let rho = |lag: usize| pooled_autocov(chains, &means, lag) / c0;
    let mut sum_gamma = 0.0;
    let mut k = 0;
    while 2 * k + 1 < max_len {
        let g = if k == 0 {
            1.0 + rho(1)
        } else {
            rho(2 * k) + rho(2 * k + 1)
        };
        if !(g > 0.0) {
            break;
        }
        sum_gamma += g;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum_gamma).max(1.0 / libm::log10(total as f64 + 10.0));
    total as f64 / tau
}

/// Split R-hat: each chain is cut in half and the halves are compared as
/// separate chains. Returns 1 for constant input, and infinity when every
/// half is constant but the halves disagree.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let h = c.len() / 2;
        if h == 0 {
            continue;
        }
        // Odd lengths drop the middle draw.
        halves.push(&c[..h]);
        halves.push(&c[c.len() - h..]);
    }
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    if halves.len() < 2 || n < 2 {
        return f64::NAN;
    }
    let m = halves.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = halves.iter().map(|h| stats::mean(&h[..n])).collect();
    let vars: Vec<f64> = halves.iter().map(|h| stats::variance(&h[..n])).collect();
    let grand = stats::mean(&means);
    let b = nf / (m - 1.0) * means.iter().map(|v| (v - grand) * (v - grand)).sum::<f64>();
    let w = stats::mean(&vars);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    libm::sqrt(var_plus / w)
}
