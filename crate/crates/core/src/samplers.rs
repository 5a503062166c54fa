//! Branch-probability sampling for sibling groups.
//!
//! Survey-informed groups follow the `+1` convention: a child seen `x` times
//! in a survey of size `n` gets `Beta(x + 1, n - x + 1)` when surveys differ
//! between siblings, and Dirichlet concentration `x + 1` when one survey
//! covers the whole group.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Beta, Distribution, Gamma};

use crate::rng::RngStream;
use crate::stats::beta_ln_pdf;
use crate::tree::{BranchSpec, Survey};

/// Redraw budget for one rejection-sampled branch vector.
pub const REJECTION_RETRY_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSample {
    pub probabilities: Vec<f64>,
    /// 1 when the scheme samples the target exactly.
    pub importance_weight: f64,
}

impl BranchSample {
    fn exact(probabilities: Vec<f64>) -> Self {
        BranchSample {
            probabilities,
            importance_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SamplerError {
    #[error("non-positive or non-finite concentration {0}")]
    BadConcentration(f64),
    #[error("survey count {x} exceeds survey size {n}")]
    SurveyExceedsSize { x: u64, n: u64 },
    #[error("incompatible sibling surveys: acceptance rate {accepted}/{attempts}")]
    IncompatibleSurveys { accepted: u64, attempts: u64 },
    #[error("branch spec has no children")]
    Empty,
    #[error("fixed probabilities are not on the simplex")]
    NotOnSimplex,
}

/// Acceptance bookkeeping for the rejection branch of
/// [`sample_sibling_group_tracked`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectionStats {
    pub attempts: u64,
    pub accepted: u64,
}

impl RejectionStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }
}

fn gamma(shape: f64, rng: &mut RngStream) -> f64 {
    Gamma::new(shape, 1.0)
        .expect("shape validated by caller")
        .sample(rng)
}

fn beta(a: f64, b: f64, rng: &mut RngStream) -> f64 {
    Beta::new(a, b)
        .expect("parameters validated by caller")
        .sample(rng)
}

/// Exact Dirichlet draw.
pub fn sample_dirichlet(
    concentration: &[f64],
    rng: &mut RngStream,
) -> Result<BranchSample, SamplerError> {
    if concentration.is_empty() {
        return Err(SamplerError::Empty);
    }
    if let Some(&a) = concentration.iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(SamplerError::BadConcentration(a));
    }
    if concentration.iter().all(|&a| a >= 1.0) {
        let mut g: Vec<f64> = concentration.iter().map(|&a| gamma(a, rng)).collect();
        let total: f64 = g.iter().sum();
        g.iter_mut().for_each(|v| *v /= total);
        return Ok(BranchSample::exact(g));
    }
    // Small shapes underflow; work with log-gammas via
    // G(a) = G(a + 1) * U^(1/a).
    let logs: Vec<f64> = concentration
        .iter()
        .map(|&a| {
            if a >= 1.0 {
                libm::log(gamma(a, rng))
            } else {
                libm::log(gamma(a + 1.0, rng)) + libm::log(rng.uniform_open()) / a
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logs.iter().map(|l| libm::exp(l - max)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    Ok(BranchSample::exact(p))
}

/// `p ~ Beta(x + 1, n - x + 1)` for the informed child; returns `(p, 1 - p)`.
pub fn sample_beta_pair(x: u64, n: u64, rng: &mut RngStream) -> Result<BranchSample, SamplerError> {
    if x > n {
        return Err(SamplerError::SurveyExceedsSize { x, n });
    }
    let p = beta((x + 1) as f64, (n - x + 1) as f64, rng);
    Ok(BranchSample::exact(vec![p, 1.0 - p]))
}

/// Dirichlet concentration for a survey covering all listed children.
pub fn survey_concentration(counts: &[u64]) -> Vec<f64> {
    counts.iter().map(|&x| (x + 1) as f64).collect()
}

pub fn sample_sibling_group(
    spec: &BranchSpec,
    rng: &mut RngStream,
) -> Result<BranchSample, SamplerError> {
    sample_sibling_group_tracked(spec, rng, &mut RejectionStats::default())
}

/// Case dispatch over [`BranchSpec`]; rejection attempts are added to `stats`.
pub fn sample_sibling_group_tracked(
    spec: &BranchSpec,
    rng: &mut RngStream,
    stats: &mut RejectionStats,
) -> Result<BranchSample, SamplerError> {
    match spec {
        BranchSpec::Fixed { probabilities } => {
            if probabilities.is_empty() {
                return Err(SamplerError::Empty);
            }
            let sum: f64 = probabilities.iter().sum();
            if probabilities.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                return Err(SamplerError::NotOnSimplex);
            }
            Ok(BranchSample::exact(probabilities.clone()))
        }
        BranchSpec::DirichletSurvey { counts, total } => {
            let sum: u64 = counts.iter().sum();
            if sum > *total {
                return Err(SamplerError::SurveyExceedsSize { x: sum, n: *total });
            }
            sample_dirichlet(&survey_concentration(counts), rng)
        }
        BranchSpec::DirichletPrior { concentration } => sample_dirichlet(concentration, rng),
        BranchSpec::BetaSurveyPerChild { surveys } => sample_beta_group(surveys, rng, stats),
    }
}

fn sample_beta_group(
    surveys: &[Option<Survey>],
    rng: &mut RngStream,
    stats: &mut RejectionStats,
) -> Result<BranchSample, SamplerError> {
    if surveys.is_empty() {
        return Err(SamplerError::Empty);
    }
    for s in surveys.iter().flatten() {
        if s.x > s.n {
            return Err(SamplerError::SurveyExceedsSize { x: s.x, n: s.n });
        }
    }
    let informed = surveys.iter().filter(|s| s.is_some()).count();
    let k = surveys.len();

    if informed == 0 {
        return sample_dirichlet(&vec![1.0; k], rng);
    }

    if k == 2 && informed == 1 {
        let pos = surveys.iter().position(Option::is_some).unwrap_or(0);
        let s = surveys[pos].expect("informed position");
        let pair = sample_beta_pair(s.x, s.n, rng)?;
        let p = pair.probabilities[0];
        let probabilities = if pos == 0 {
            vec![p, 1.0 - p]
        } else {
            vec![1.0 - p, p]
        };
        return Ok(BranchSample::exact(probabilities));
    }

    let params: Vec<Option<(f64, f64)>> = surveys
        .iter()
        .map(|s| s.map(|s| ((s.x + 1) as f64, (s.n - s.x + 1) as f64)))
        .collect();

    if informed < k {
        // Proper informed subset: uninformed children share the residual.
        let uninformed = (k - informed) as f64;
        for _ in 0..REJECTION_RETRY_CAP {
            stats.attempts += 1;
            let draws: Vec<f64> = params
                .iter()
                .map(|p| p.map_or(0.0, |(a, b)| beta(a, b, rng)))
                .collect();
            let sum: f64 = draws.iter().sum();
            if sum < 1.0 {
                stats.accepted += 1;
                let residual = (1.0 - sum) / uninformed;
                let probabilities = params
                    .iter()
                    .zip(&draws)
                    .map(|(p, &d)| if p.is_some() { d } else { residual })
                    .collect();
                return Ok(BranchSample::exact(probabilities));
            }
        }
        return Err(SamplerError::IncompatibleSurveys {
            accepted: 0,
            attempts: REJECTION_RETRY_CAP,
        });
    }

    // Every child informed by its own survey: project onto the simplex and
    // reweight by the ratio of marginal Beta densities (normalized over raw).
    stats.attempts += 1;
    stats.accepted += 1;
    let raw: Vec<f64> = params
        .iter()
        .map(|p| {
            let (a, b) = p.expect("all informed");
            beta(a, b, rng)
        })
        .collect();
    let sum: f64 = raw.iter().sum();
    let normalized: Vec<f64> = raw.iter().map(|&r| r / sum).collect();
    let mut log_w = 0.0;
    for ((p, &r), &q) in params.iter().zip(&raw).zip(&normalized) {
        let (a, b) = p.expect("all informed");
        log_w += beta_ln_pdf(q, a, b) - beta_ln_pdf(r, a, b);
    }
    let importance_weight = libm::exp(log_w);
    Ok(BranchSample {
        probabilities: normalized,
        importance_weight: if importance_weight.is_finite() {
            importance_weight
        } else {
            0.0
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    fn means(draws: &[Vec<f64>]) -> Vec<f64> {
        let k = draws[0].len();
        (0..k)
            .map(|i| draws.iter().map(|d| d[i]).sum::<f64>() / draws.len() as f64)
            .collect()
    }

    fn draw_many(spec: &BranchSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|_| sample_sibling_group(spec, &mut rng).unwrap().probabilities)
            .collect()
    }

    #[test]
    fn uniform_dirichlet_mean() {
        let mut rng = RngStream::new(11, 0);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| {
                sample_dirichlet(&[1.0, 1.0], &mut rng)
                    .unwrap()
                    .probabilities
            })
            .collect();
        for m in means(&draws) {
            assert!((m - 0.5).abs() < 0.01, "{m}");
        }
    }

    #[test]
    fn survey_group_at_g_mean() {
        // Concentrations (12908, 2377, 46) from survey counts (12907, 2376, 45).
        let spec = BranchSpec::DirichletSurvey {
            counts: vec![12907, 2376, 45],
            total: 15328,
        };
        let m = means(&draw_many(&spec, 100_000, 12));
        let expected = [12908.0 / 15331.0, 2377.0 / 15331.0, 46.0 / 15331.0];
        for (m, e) in m.iter().zip(expected) {
            assert!((m - e).abs() < 0.001, "{m} vs {e}");
        }
        assert!((expected[0] - 0.8420).abs() < 5e-5);
        assert!((expected[1] - 0.1550).abs() < 5e-5);
        assert!((expected[2] - 0.0030).abs() < 5e-5);
    }

    #[test]
    fn concentration_limit() {
        let mut rng = RngStream::new(13, 0);
        let s = sample_dirichlet(&[1e12, 1.0], &mut rng).unwrap();
        assert!((s.probabilities[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn small_concentrations_stay_on_simplex() {
        let mut rng = RngStream::new(14, 0);
        for _ in 0..1000 {
            let s = sample_dirichlet(&[1e-3, 0.01, 2.0], &mut rng).unwrap();
            let sum: f64 = s.probabilities.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.probabilities.iter().all(|p| p.is_finite() && *p >= 0.0));
        }
    }

    #[test]
    fn bad_concentration_rejected() {
        let mut rng = RngStream::new(1, 0);
        assert_eq!(
            sample_dirichlet(&[1.0, 0.0], &mut rng),
            Err(SamplerError::BadConcentration(0.0))
        );
        assert!(sample_dirichlet(&[-1.0], &mut rng).is_err());
    }

    #[test]
    fn beta_pair_means() {
        let mean_of = |x, n| {
            let mut rng = RngStream::new(21, 0);
            (0..100_000)
                .map(|_| sample_beta_pair(x, n, &mut rng).unwrap().probabilities[0])
                .sum::<f64>()
                / 100_000.0
        };
        assert!((mean_of(1, 10) - 2.0 / 12.0).abs() < 0.005);
        assert!((mean_of(0, 0) - 0.5).abs() < 0.005);
        assert!((mean_of(20, 20) - 21.0 / 22.0).abs() < 0.005);
        let mut rng = RngStream::new(1, 0);
        assert_eq!(
            sample_beta_pair(3, 2, &mut rng),
            Err(SamplerError::SurveyExceedsSize { x: 3, n: 2 })
        );
    }

    #[test]
    fn fixed_passes_through() {
        let spec = BranchSpec::Fixed {
            probabilities: vec![0.3, 0.7],
        };
        let mut rng = RngStream::new(1, 0);
        let s = sample_sibling_group(&spec, &mut rng).unwrap();
        assert_eq!(s.probabilities, vec![0.3, 0.7]);
        assert_eq!(s.importance_weight, 1.0);
    }

    #[test]
    fn root_group_survey_mean() {
        let spec = BranchSpec::DirichletSurvey {
            counts: vec![3, 2],
            total: 5,
        };
        let m = means(&draw_many(&spec, 100_000, 31));
        assert!((m[0] - 4.0 / 7.0).abs() < 0.005);
        assert!((m[1] - 3.0 / 7.0).abs() < 0.005);
    }

    #[test]
    fn rejection_acceptance_matches_brute_force() {
        // Oracle: P(p1 + p2 < 1) for independent Beta(2, 2) pairs, by plain
        // Monte-Carlo with a separate stream.
        let mut oracle_rng = RngStream::new(999, 7);
        let n = 1_000_000;
        let hits = (0..n)
            .filter(|_| beta(2.0, 2.0, &mut oracle_rng) + beta(2.0, 2.0, &mut oracle_rng) < 1.0)
            .count();
        let oracle = hits as f64 / n as f64;

        let spec = BranchSpec::BetaSurveyPerChild {
            surveys: vec![
                Some(Survey { x: 1, n: 2 }),
                Some(Survey { x: 1, n: 2 }),
                None,
            ],
        };
        let mut rng = RngStream::new(5, 0);
        let mut st = RejectionStats::default();
        for _ in 0..200_000 {
            let s = sample_sibling_group_tracked(&spec, &mut rng, &mut st).unwrap();
            let sum: f64 = s.probabilities.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.probabilities[0] + s.probabilities[1] < 1.0);
        }
        assert!(
            (st.acceptance_rate() - oracle).abs() < 0.01,
            "{} vs {oracle}",
            st.acceptance_rate()
        );
    }

    #[test]
    fn impossible_surveys_exhaust_retry_cap() {
        // Two near-certain children leave no room: sum of draws is ~2.
        let spec = BranchSpec::BetaSurveyPerChild {
            surveys: vec![
                Some(Survey {
                    x: 100_000,
                    n: 100_000,
                }),
                Some(Survey {
                    x: 100_000,
                    n: 100_000,
                }),
                None,
            ],
        };
        let mut rng = RngStream::new(5, 0);
        let err = sample_sibling_group(&spec, &mut rng).unwrap_err();
        assert_eq!(
            err,
            SamplerError::IncompatibleSurveys {
                accepted: 0,
                attempts: REJECTION_RETRY_CAP
            }
        );
    }

    #[test]
    fn all_informed_group_is_normalized_and_weighted() {
        let spec = BranchSpec::BetaSurveyPerChild {
            surveys: vec![
                Some(Survey { x: 3, n: 10 }),
                Some(Survey { x: 5, n: 12 }),
                Some(Survey { x: 2, n: 8 }),
            ],
        };
        let mut rng = RngStream::new(8, 0);
        for _ in 0..1000 {
            let s = sample_sibling_group(&spec, &mut rng).unwrap();
            let sum: f64 = s.probabilities.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(s.importance_weight > 0.0 && s.importance_weight.is_finite());
        }
    }

    #[test]
    fn single_informed_pair_matches_beta_pair_in_distribution() {
        // Two-sample Kolmogorov–Smirnov at alpha = 0.001 on 10^4 draws each.
        let spec = BranchSpec::BetaSurveyPerChild {
            surveys: vec![None, Some(Survey { x: 1, n: 10 })],
        };
        let n = 10_000;
        let mut a_rng = RngStream::new(100, 0);
        let mut b_rng = RngStream::new(200, 0);
        let a: Vec<f64> = (0..n)
            .map(|_| {
                sample_sibling_group(&spec, &mut a_rng)
                    .unwrap()
                    .probabilities[1]
            })
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|_| sample_beta_pair(1, 10, &mut b_rng).unwrap().probabilities[0])
            .collect();
        let d = ks_statistic(&a, &b);
        let critical = 1.949 * libm::sqrt(2.0 / n as f64);
        assert!(d < critical, "D = {d}, critical {critical}");
    }

    fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
        let a = stats::sorted(a);
        let b = stats::sorted(b);
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let diff = (i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs();
            d = d.max(diff);
        }
        d
    }
}
