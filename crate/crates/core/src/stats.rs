//! Monte-Carlo harness, estimators and goodness-of-fit tests.
//!
//! Replicas fan out over the rayon pool of the caller; results are collected
//! in replica order so every aggregate is deterministic.

use crate::fluctuation::{
    coupled_pair, pathwise_metrics, simulate_limit_sde, CouplingOptions, PathwiseMetrics,
    DEFAULT_SDE_STEPS,
};
use crate::network::{HybridState, ReactionNetwork};
use crate::path::SimError;
use crate::pdmp_sim::{simulate_pdmp_with, PdmpOptions};
use rayon::prelude::*;
use statrs::distribution::{
    ChiSquared, ContinuousCDF, DiscreteCDF, Discrete, Exp, Normal, Poisson, StudentsT,
};
use std::fmt::Write as _;
use std::io::{self, Write};
use thiserror::Error;

/// Fewest samples accepted by [`gof_test`].
pub const MIN_GOF_SAMPLES: usize = 20;
/// Replica-index bit reserved for the independent limit paths of the SDE.
pub const SDE_REPLICA_BIT: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("need at least {needed} samples, got {found}")]
    InsufficientSamples { needed: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("replica {replica}: {source}")]
    Simulation {
        replica: u64,
        #[source]
        source: SimError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Reference laws for [`gof_test`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    Poisson { mean: f64 },
    Exponential { rate: f64 },
    Normal { mean: f64, var: f64 },
}

/// Chi-square (discrete laws) or Kolmogorov–Smirnov (continuous laws) test.
pub fn gof_test(samples: &[f64], law: Law) -> Result<TestResult, StatsError> {
    if samples.len() < MIN_GOF_SAMPLES {
        return Err(StatsError::InsufficientSamples {
            needed: MIN_GOF_SAMPLES,
            found: samples.len(),
        });
    }
    let bad = |msg: String| StatsError::InvalidArgument(msg);
    match law {
        Law::Poisson { mean } => {
            let counts = samples
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as u64)
                    } else {
                        Err(bad(format!("{v} is not a count")))
                    }
                })
                .collect::<Result<Vec<u64>, _>>()?;
            poisson_chi_square(&counts, mean)
        }
        Law::Exponential { rate } => {
            let d = Exp::new(rate).map_err(|e| bad(e.to_string()))?;
            Ok(ks_one_sample(samples, |x| d.cdf(x)))
        }
        Law::Normal { mean, var } => {
            let d = Normal::new(mean, var.sqrt()).map_err(|e| bad(e.to_string()))?;
            Ok(ks_one_sample(samples, |x| d.cdf(x)))
        }
    }
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // small-λ form: √(2π)/λ Σ exp(-(2k-1)²π²/(8λ²))
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let s: f64 = (1..=20)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * c).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let s: f64 = (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum();
        (2.0 * s).clamp(0.0, 1.0)
    }
}

fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let r = n_eff.sqrt();
    kolmogorov_sf((r + 0.12 + 0.11 / r) * d)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample(samples: &[f64], cdf: impl Fn(f64) -> f64) -> TestResult {
    let s = sorted(samples);
    let n = s.len() as f64;
    let d = s
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = cdf(x);
            (c - i as f64 / n).max((i + 1) as f64 / n - c)
        })
        .fold(0.0, f64::max);
    TestResult {
        statistic: d,
        p_value: ks_p_value(d, n),
    }
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> TestResult {
    let (sa, sb) = (sorted(a), sorted(b));
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    TestResult {
        statistic: d,
        p_value: ks_p_value(d, na * nb / (na + nb)),
    }
}

/// Chi-square test of counts against `Poisson(mean)`.
///
/// Bins hold at least 5 expected observations; both tails are pooled.
pub fn poisson_chi_square(counts: &[u64], mean: f64) -> Result<TestResult, StatsError> {
    let law = Poisson::new(mean).map_err(|e| StatsError::InvalidArgument(e.to_string()))?;
    let m = counts.len() as f64;
    // (lo, hi inclusive or open-ended, expected)
    let mut bins: Vec<(u64, Option<u64>, f64)> = Vec::new();
    let (mut lo, mut acc, mut k) = (0u64, 0.0, 0u64);
    loop {
        acc += m * law.pmf(k);
        let tail = m * law.sf(k);
        if tail < 5.0 {
            bins.push((lo, None, acc + tail));
            break;
        }
        if acc >= 5.0 {
            bins.push((lo, Some(k), acc));
            lo = k + 1;
            acc = 0.0;
        }
        k += 1;
    }
    if bins.len() > 1 && bins[bins.len() - 1].2 < 5.0 {
        let last = bins.pop().unwrap();
        let prev = bins.last_mut().unwrap();
        prev.1 = None;
        prev.2 += last.2;
    }
    if bins.len() < 2 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
        });
    }
    let mut observed = vec![0.0; bins.len()];
    for &c in counts {
        let b = bins
            .iter()
            .position(|(lo, hi, _)| c >= *lo && hi.is_none_or(|h| c <= h))
            .expect("bins cover all counts");
        observed[b] += 1.0;
    }
    let stat: f64 = bins
        .iter()
        .zip(&observed)
        .map(|((_, _, e), o)| (o - e).powi(2) / e)
        .sum();
    let dof = (bins.len() - 1) as f64;
    let p = ChiSquared::new(dof).unwrap().sf(stat);
    Ok(TestResult {
        statistic: stat,
        p_value: p,
    })
}

/// Sample mean with standard error `s/√M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
}

pub fn mean_se(values: &[f64]) -> Estimate {
    let m = values.len() as f64;
    if values.is_empty() {
        return Estimate {
            mean: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / m;
    let se = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt() / m.sqrt()
    } else {
        f64::NAN
    };
    Estimate { mean, se }
}

/// Unbiased sample variance with its large-sample standard error.
pub fn variance_se(values: &[f64]) -> Estimate {
    let m = values.len() as f64;
    if values.len() < 4 {
        return Estimate {
            mean: f64::NAN,
            se: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / m;
    let s2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let m4 = values.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / m;
    let var_s2 = ((m4 - s2 * s2 * (m - 3.0) / (m - 1.0)) / m).max(0.0);
    Estimate {
        mean: s2,
        se: var_s2.sqrt(),
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let centre = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// A binomial proportion with standard error and 95% Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub se: f64,
    pub wilson: (f64, f64),
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let p = if trials > 0 {
            successes as f64 / trials as f64
        } else {
            f64::NAN
        };
        Proportion {
            successes,
            trials,
            estimate: p,
            se: (p * (1.0 - p) / trials as f64).sqrt(),
            wilson: wilson_interval(successes, trials, 1.959_963_984_540_054),
        }
    }
}

/// Least-squares fit of `log v = intercept + slope · log N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// 95% interval from the t distribution with `k - 2` degrees of freedom.
    pub slope_ci: (f64, f64),
    pub points: usize,
}

impl LogLogFit {
    /// Fitted constant `C` in `v ≈ C · N^slope`.
    pub fn constant(&self) -> f64 {
        self.intercept.exp()
    }
}

/// Fits the rate; `None` with fewer than 3 points or a nonpositive value.
pub fn loglog_fit(ns: &[f64], values: &[f64]) -> Option<LogLogFit> {
    if ns.len() != values.len()
        || ns.len() < 3
        || values.iter().chain(ns).any(|v| !(*v > 0.0 && v.is_finite()))
    {
        return None;
    }
    let k = ns.len() as f64;
    let xs: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let dof = k - 2.0;
    let slope_se = (rss / dof / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, dof).unwrap().inverse_cdf(0.975);
    Some(LogLogFit {
        slope,
        intercept,
        slope_se,
        slope_ci: (slope - q * slope_se, slope + q * slope_se),
        points: ns.len(),
    })
}

/// Runs `M` coupled pairs (replicas `0..M`) and summarizes each.
#[allow(clippy::too_many_arguments)]
pub fn coupled_metrics(
    net: &ReactionNetwork,
    n: u64,
    z0n: &HybridState,
    z0: &HybridState,
    horizon: f64,
    replicas: u64,
    seed: u64,
    opts: &CouplingOptions,
) -> Vec<Result<PathwiseMetrics, SimError>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let pair = coupled_pair(net, n, z0n, z0, horizon, seed, r, opts)?;
            Ok(pathwise_metrics(net, &pair))
        })
        .collect()
}

/// Aggregates of one `N` in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: u64,
    pub replicas: u64,
    /// Replicas that failed (event cap, integrator); excluded from estimates.
    pub failed: Vec<(u64, String)>,
    pub sup_error: Estimate,
    pub sup_x_error: Estimate,
    pub sup_y_error: Estimate,
    pub y_equal: Proportion,
    /// `√N · E[sup |M^N|]`.
    pub scaled_martingale: Estimate,
    /// `N · E[sup |γ^N|]`.
    pub scaled_gamma: Estimate,
}

impl SweepRow {
    pub fn completed(&self) -> u64 {
        self.replicas - self.failed.len() as u64
    }
}

/// Two-sample comparison of one coordinate of `V^N(T)` and `V(T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CltCoordinate {
    pub species: String,
    pub vn_mean: Estimate,
    pub v_mean: Estimate,
    pub vn_var: Estimate,
    pub v_var: Estimate,
    pub ks: TestResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CltBlock {
    pub n: u64,
    pub horizon: f64,
    pub m_n: usize,
    pub m_sde: usize,
    pub coordinates: Vec<CltCoordinate>,
    pub vn_samples: Vec<Vec<f64>>,
    pub v_samples: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub horizon: f64,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
    pub fit: Option<LogLogFit>,
    pub clt: Option<CltBlock>,
    pub warnings: Vec<String>,
}

fn check_replicas(m: u64) -> Result<(), StatsError> {
    if m < 2 {
        return Err(StatsError::InvalidArgument(format!(
            "need at least 2 replicas, got {m}"
        )));
    }
    Ok(())
}

/// Strong error sweep over `N`, with the fitted log-log rate.
#[allow(clippy::too_many_arguments)]
pub fn strong_error_sweep(
    net: &ReactionNetwork,
    z0n: &HybridState,
    z0: &HybridState,
    horizon: f64,
    n_list: &[u64],
    replicas: u64,
    seed: u64,
    opts: &CouplingOptions,
) -> Result<ConvergenceReport, StatsError> {
    check_replicas(replicas)?;
    if n_list.is_empty() {
        return Err(StatsError::InvalidArgument("N list is empty".into()));
    }
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &n in n_list {
        let results = coupled_metrics(net, n, z0n, z0, horizon, replicas, seed, opts);
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res {
                Ok(m) => ok.push(m),
                Err(SimError::EventCap { .. }) | Err(SimError::StepUnderflow { .. }) => {
                    failed.push((r as u64, res.unwrap_err().to_string()))
                }
                Err(e) => {
                    return Err(StatsError::Simulation {
                        replica: r as u64,
                        source: e,
                    })
                }
            }
        }
        if !failed.is_empty() {
            warnings.push(format!(
                "N = {n}: {} of {replicas} replicas failed and were excluded",
                failed.len()
            ));
        }
        let nf = n as f64;
        let col = |f: &dyn Fn(&PathwiseMetrics) -> f64| -> Vec<f64> { ok.iter().map(f).collect() };
        rows.push(SweepRow {
            n,
            replicas,
            failed,
            sup_error: mean_se(&col(&|m| m.sup_error)),
            sup_x_error: mean_se(&col(&|m| m.sup_x_error)),
            sup_y_error: mean_se(&col(&|m| m.sup_y_error)),
            y_equal: Proportion::new(
                ok.iter().filter(|m| m.y_equal).count() as u64,
                ok.len() as u64,
            ),
            scaled_martingale: mean_se(&col(&|m| nf.sqrt() * m.sup_martingale)),
            scaled_gamma: mean_se(&col(&|m| nf * m.sup_gamma)),
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.sup_error.mean).collect();
    let fit = loglog_fit(&ns, &errs);
    if fit.is_none() {
        warnings.push("rate fit undefined (fewer than 3 N values or zero errors)".into());
    } else if rows.len() < 4 {
        warnings.push("rate fit uses fewer than 4 values of N".into());
    }
    Ok(ConvergenceReport {
        horizon,
        seed,
        rows,
        fit,
        clt: None,
        warnings,
    })
}

/// Fraction of replicas whose discrete event lists coincide.
#[allow(clippy::too_many_arguments)]
pub fn discrete_equality_probability(
    net: &ReactionNetwork,
    z0n: &HybridState,
    z0: &HybridState,
    horizon: f64,
    n: u64,
    replicas: u64,
    seed: u64,
    opts: &CouplingOptions,
) -> Result<Proportion, StatsError> {
    check_replicas(replicas)?;
    let mut hits = 0;
    for (r, res) in coupled_metrics(net, n, z0n, z0, horizon, replicas, seed, opts)
        .into_iter()
        .enumerate()
    {
        let m = res.map_err(|e| StatsError::Simulation {
            replica: r as u64,
            source: e,
        })?;
        hits += u64::from(m.y_equal);
    }
    Ok(Proportion::new(hits, replicas))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CltOptions {
    pub coupling: CouplingOptions,
    pub sde_steps: usize,
}

impl Default for CltOptions {
    fn default() -> Self {
        CltOptions {
            coupling: CouplingOptions::default(),
            sde_steps: DEFAULT_SDE_STEPS,
        }
    }
}

/// Samples `V(T)` from `M_sde` SDE runs along independent limit paths.
pub fn sample_limit_sde(
    net: &ReactionNetwork,
    z0: &HybridState,
    v0: &[f64],
    horizon: f64,
    replicas: u64,
    seed: u64,
    opts: &CltOptions,
) -> Result<Vec<Vec<f64>>, StatsError> {
    let pdmp_opts = PdmpOptions {
        grid: 1,
        event_cap: opts.coupling.event_cap,
        rtol: opts.coupling.rtol,
        atol: opts.coupling.atol,
    };
    (0..replicas)
        .into_par_iter()
        .map(|r| {
            let wrap = |e| StatsError::Simulation {
                replica: r,
                source: e,
            };
            let zp = simulate_pdmp_with(net, z0, horizon, seed, r | SDE_REPLICA_BIT, &pdmp_opts)
                .map_err(wrap)?;
            let p = simulate_limit_sde(net, &zp, v0, opts.sde_steps, seed, r).map_err(wrap)?;
            Ok(p.final_value().to_vec())
        })
        .collect()
}

/// Compares `V^N(T)` with `V(T)` coordinate by coordinate.
#[allow(clippy::too_many_arguments)]
pub fn clt_compare(
    net: &ReactionNetwork,
    z0n: &HybridState,
    z0: &HybridState,
    horizon: f64,
    n: u64,
    m_n: u64,
    m_sde: u64,
    seed: u64,
    opts: &CltOptions,
) -> Result<CltBlock, StatsError> {
    check_replicas(m_n)?;
    check_replicas(m_sde)?;
    let dim = net.n();
    let mut warnings = Vec::new();
    if (m_sde as usize) < 10 * dim {
        warnings.push(format!("M_sde = {m_sde} is below 10·n = {}", 10 * dim));
    }
    let mut vn = Vec::with_capacity(m_n as usize);
    for (r, res) in coupled_metrics(net, n, z0n, z0, horizon, m_n, seed, &opts.coupling)
        .into_iter()
        .enumerate()
    {
        let m = res.map_err(|e| StatsError::Simulation {
            replica: r as u64,
            source: e,
        })?;
        vn.push(m.v_final);
    }
    let sqrt_n = (n as f64).sqrt();
    let v0: Vec<f64> = z0n
        .x()
        .iter()
        .zip(z0.x())
        .map(|(a, b)| sqrt_n * (a - b))
        .collect();
    let v = sample_limit_sde(net, z0, &v0, horizon, m_sde, seed, opts)?;
    let coordinates = (0..dim)
        .map(|i| {
            let a: Vec<f64> = vn.iter().map(|s| s[i]).collect();
            let b: Vec<f64> = v.iter().map(|s| s[i]).collect();
            CltCoordinate {
                species: net.continuous_species()[i].clone(),
                vn_mean: mean_se(&a),
                v_mean: mean_se(&b),
                vn_var: variance_se(&a),
                v_var: variance_se(&b),
                ks: ks_two_sample(&a, &b),
            }
        })
        .collect();
    Ok(CltBlock {
        n,
        horizon,
        m_n: m_n as usize,
        m_sde: m_sde as usize,
        coordinates,
        vn_samples: vn,
        v_samples: v,
        warnings,
    })
}

fn fmt_est(e: &Estimate) -> String {
    format!("{},{}", e.mean, e.se)
}

impl ConvergenceReport {
    /// One row per `N`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "N,M,completed,failed,sup_err_mean,sup_err_se,sup_x_err_mean,sup_x_err_se,\
             sup_y_err_mean,sup_y_err_se,y_equal_frac,y_equal_se,y_equal_lo,y_equal_hi,\
             sqrtN_supM_mean,sqrtN_supM_se,N_supgamma_mean,N_supgamma_se,\
             fit_slope,fit_slope_se,fit_slope_lo,fit_slope_hi,fit_intercept,fit_constant"
        )?;
        let fit = match &self.fit {
            Some(f) => format!(
                "{},{},{},{},{},{}",
                f.slope,
                f.slope_se,
                f.slope_ci.0,
                f.slope_ci.1,
                f.intercept,
                f.constant()
            ),
            None => "undefined,undefined,undefined,undefined,undefined,undefined".into(),
        };
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.replicas,
                r.completed(),
                r.failed.len(),
                fmt_est(&r.sup_error),
                fmt_est(&r.sup_x_error),
                fmt_est(&r.sup_y_error),
                r.y_equal.estimate,
                r.y_equal.se,
                r.y_equal.wilson.0,
                r.y_equal.wilson.1,
                fmt_est(&r.scaled_martingale),
                fmt_est(&r.scaled_gamma),
                fit
            )?;
        }
        Ok(())
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "horizon T = {}, seed = {}", self.horizon, self.seed);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "N = {:>6}: E sup|Z^N-Z| = {:.6} ± {:.6}  P(Y^N = Y) = {:.4} [{:.4}, {:.4}]  \
                 √N E sup|M^N| = {:.4} ± {:.4}  N E sup|γ^N| = {:.4} ± {:.4}  ({} of {} replicas)",
                r.n,
                r.sup_error.mean,
                r.sup_error.se,
                r.y_equal.estimate,
                r.y_equal.wilson.0,
                r.y_equal.wilson.1,
                r.scaled_martingale.mean,
                r.scaled_martingale.se,
                r.scaled_gamma.mean,
                r.scaled_gamma.se,
                r.completed(),
                r.replicas
            );
        }
        match &self.fit {
            Some(f) => {
                let _ = writeln!(
                    s,
                    "fitted rate: slope = {:.4} ± {:.4} (95% CI [{:.4}, {:.4}]), C = {:.4}",
                    f.slope,
                    f.slope_se,
                    f.slope_ci.0,
                    f.slope_ci.1,
                    f.constant()
                );
            }
            None => {
                let _ = writeln!(s, "fitted rate: undefined");
            }
        }
        if let Some(c) = &self.clt {
            let _ = writeln!(
                s,
                "CLT at T = {}, N = {}: {} coupled pairs vs {} SDE runs",
                c.horizon, c.n, c.m_n, c.m_sde
            );
            for k in &c.coordinates {
                let _ = writeln!(
                    s,
                    "  {}: mean V^N = {:.4} ± {:.4}, mean V = {:.4} ± {:.4}, var V^N = {:.4} ± {:.4}, \
                     var V = {:.4} ± {:.4}, KS D = {:.4} (p = {:.4})",
                    k.species,
                    k.vn_mean.mean,
                    k.vn_mean.se,
                    k.v_mean.mean,
                    k.v_mean.se,
                    k.vn_var.mean,
                    k.vn_var.se,
                    k.v_var.mean,
                    k.v_var.se,
                    k.ks.statistic,
                    k.ks.p_value
                );
            }
            for w in &c.warnings {
                let _ = writeln!(s, "warning: {w}");
            }
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning: {w}");
        }
        s
    }

    /// A gnuplot script with inline data: log-log error plot and, when a
    /// CLT block is present, histogram overlays of `V^N(T)` and `V(T)`.
    pub fn plot_script(&self) -> String {
        let mut s = String::new();
        if !self.rows.is_empty() {
            let _ = writeln!(s, "$errors << EOD");
            for r in &self.rows {
                let _ = writeln!(s, "{} {} {}", r.n, r.sup_error.mean, r.sup_error.se);
            }
            let _ = writeln!(s, "EOD");
            let _ = writeln!(s, "set terminal pngcairo size 800,600");
            let _ = writeln!(s, "set output 'strong_error.png'");
            let _ = writeln!(s, "set logscale xy");
            let _ = writeln!(s, "set xlabel 'N'");
            let _ = writeln!(s, "set ylabel 'E sup |Z^N - Z|'");
            match &self.fit {
                Some(f) => {
                    let _ = writeln!(
                        s,
                        "plot $errors using 1:2:3 with yerrorbars title 'mean sup error', \
                         {} * x**({}) title 'fit slope {:.3}'",
                        f.constant(),
                        f.slope,
                        f.slope
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "plot $errors using 1:2:3 with yerrorbars title 'mean sup error'"
                    );
                }
            }
        }
        if let Some(c) = &self.clt {
            for (i, k) in c.coordinates.iter().enumerate() {
                let _ = writeln!(s, "$vn{i} << EOD");
                for v in &c.vn_samples {
                    let _ = writeln!(s, "{}", v[i]);
                }
                let _ = writeln!(s, "EOD\n$v{i} << EOD");
                for v in &c.v_samples {
                    let _ = writeln!(s, "{}", v[i]);
                }
                let _ = writeln!(s, "EOD");
                let width = 4.0 * k.v_var.mean.max(1e-12).sqrt() / 30.0;
                let _ = writeln!(s, "set terminal pngcairo size 800,600");
                let _ = writeln!(s, "set output 'clt_{}.png'", k.species);
                let _ = writeln!(s, "unset logscale");
                let _ = writeln!(s, "set xlabel 'V({})'", k.species);
                let _ = writeln!(s, "set ylabel 'density'");
                let _ = writeln!(s, "bw = {width}");
                let _ = writeln!(s, "bin(x) = bw * floor(x / bw) + bw / 2");
                let _ = writeln!(
                    s,
                    "plot $vn{i} using (bin($1)):(1.0 / ({} * bw)) smooth frequency with boxes \
                     title 'V^N(T)', $v{i} using (bin($1)):(1.0 / ({} * bw)) smooth frequency \
                     with lines title 'V(T)'",
                    c.m_n, c.m_sde
                );
            }
        }
        s
    }
}
