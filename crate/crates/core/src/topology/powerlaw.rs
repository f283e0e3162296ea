//! Adjusted power law with low-degree saturation and exponential cutoff:
//!
//! ```text
//! p_k = (k + k_sat)^(-gamma) exp(-k / k_cut) / Z,   k_min <= k <= k_max
//! ```
//!
//! `Z` sums the same expression over the observed support. For a fixed
//! `(k_sat, k_cut)` the log-likelihood is concave in `gamma`, so `gamma` is
//! found by safeguarded Newton iteration on histogram sufficient
//! statistics. The pair itself is chosen by minimum KS distance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Result, TopologyError};

pub const MIN_OBSERVATIONS: usize = 50;
const GAMMA_LO: f64 = 1.000_001;
const GAMMA_HI: f64 = 30.0;
const K_SAT_MAX: u64 = 100;
const K_CUT_POINTS: usize = 30;

/// Candidate values scanned for `k_sat` and `k_cut`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawGrid {
    pub k_sat: Vec<u64>,
    pub k_cut: Vec<u64>,
}

impl PowerLawGrid {
    /// `k_sat` in `0..=min(100, k_max)`, `k_cut` on a 30-point log grid
    /// over `[k_min, 2 k_max]` (rounded, deduplicated).
    pub fn default_for(k_min: u64, k_max: u64) -> Self {
        let k_sat = (0..=K_SAT_MAX.min(k_max)).collect();
        let lo = (k_min.max(1)) as f64;
        let hi = (2 * k_max).max(1) as f64;
        let mut k_cut: Vec<u64> = (0..K_CUT_POINTS)
            .map(|i| {
                let t = i as f64 / (K_CUT_POINTS - 1) as f64;
                (lo.ln() + t * (hi.ln() - lo.ln())).exp().round().max(1.0) as u64
            })
            .collect();
        k_cut.dedup();
        PowerLawGrid { k_sat, k_cut }
    }
}

/// Grid used for a fit and for every bootstrap refit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub enum GridSpec {
    /// [`PowerLawGrid::default_for`] on each sample's own support.
    #[default]
    Default,
    Fixed(PowerLawGrid),
}

impl GridSpec {
    fn resolve(&self, k_min: u64, k_max: u64) -> PowerLawGrid {
        match self {
            GridSpec::Default => PowerLawGrid::default_for(k_min, k_max),
            GridSpec::Fixed(g) => g.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub gamma: f64,
    pub k_sat: u64,
    pub k_cut: u64,
    pub ks_stat: f64,
    pub log_lik: f64,
    pub k_min: u64,
    pub k_max: u64,
    pub n_obs: usize,
    pub bootstrap_p: Option<f64>,
    pub n_bootstrap: usize,
    #[serde(skip)]
    pub grid: GridSpec,
}

/// Degree histogram over the contiguous support `[k_min, k_max]`.
struct Hist {
    k_min: u64,
    counts: Vec<f64>,
    n: f64,
    sum_k: f64,
}

impl Hist {
    fn new(degrees: &[u64]) -> Result<Self> {
        let obs: Vec<u64> = degrees.iter().copied().filter(|&k| k >= 1).collect();
        if obs.len() < MIN_OBSERVATIONS {
            return Err(TopologyError::TooFewObservations(obs.len()));
        }
        let k_min = *obs.iter().min().expect("nonempty");
        let k_max = *obs.iter().max().expect("nonempty");
        if k_min == k_max {
            return Err(TopologyError::DegenerateDegrees);
        }
        let mut counts = vec![0.0; (k_max - k_min + 1) as usize];
        for &k in &obs {
            counts[(k - k_min) as usize] += 1.0;
        }
        Ok(Hist { k_min, counts, n: obs.len() as f64, sum_k: obs.iter().map(|&k| k as f64).sum() })
    }

    fn k_max(&self) -> u64 {
        self.k_min + self.counts.len() as u64 - 1
    }

    fn k(&self, i: usize) -> f64 {
        (self.k_min + i as u64) as f64
    }
}

/// Log-weights `-gamma ln(k + k_sat) - k / k_cut` over the support and
/// their log-sum-exp.
fn log_weights(k_min: u64, len: usize, logs: &[f64], gamma: f64, k_cut: f64) -> (Vec<f64>, f64) {
    let a: Vec<f64> = (0..len).map(|i| -gamma * logs[i] - (k_min + i as u64) as f64 / k_cut).collect();
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + a.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    (a, lse)
}

/// Normalized pmf over `[k_min, k_max]`.
pub fn adjusted_powerlaw_pmf(gamma: f64, k_sat: u64, k_cut: u64, k_min: u64, k_max: u64) -> Vec<f64> {
    let len = (k_max - k_min + 1) as usize;
    let logs: Vec<f64> = (0..len).map(|i| ((k_min + i as u64 + k_sat) as f64).ln()).collect();
    let (a, lse) = log_weights(k_min, len, &logs, gamma, k_cut as f64);
    a.iter().map(|x| (x - lse).exp()).collect()
}

/// Per-pair state: the fixed logs and sufficient statistics.
struct Candidate<'a> {
    hist: &'a Hist,
    logs: Vec<f64>,
    s1: f64,
    k_cut: f64,
}

impl<'a> Candidate<'a> {
    fn new(hist: &'a Hist, k_sat: u64, k_cut: u64) -> Self {
        let logs: Vec<f64> = (0..hist.counts.len()).map(|i| (hist.k(i) + k_sat as f64).ln()).collect();
        let s1 = logs.iter().zip(&hist.counts).map(|(l, c)| l * c).sum();
        Candidate { hist, logs, s1, k_cut: k_cut as f64 }
    }

    /// Log-likelihood and its first two derivatives in `gamma`.
    fn eval(&self, gamma: f64) -> (f64, f64, f64) {
        let h = self.hist;
        let (a, lse) = log_weights(h.k_min, h.counts.len(), &self.logs, gamma, self.k_cut);
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for (ai, l) in a.iter().zip(&self.logs) {
            let p = (ai - lse).exp();
            e1 += p * l;
            e2 += p * l * l;
        }
        let ll = -gamma * self.s1 - h.sum_k / self.k_cut - h.n * lse;
        (ll, -self.s1 + h.n * e1, -h.n * (e2 - e1 * e1))
    }

    fn initial_gamma(&self, k_sat: u64) -> f64 {
        let h = self.hist;
        let denom = (h.k_min + k_sat) as f64 - 0.5;
        let s: f64 = self.logs.iter().zip(&h.counts).map(|(l, c)| c * (l - denom.ln())).sum();
        if s > 0.0 {
            1.0 + h.n / s
        } else {
            2.0
        }
    }

    fn maximize(&self, gamma0: f64) -> (f64, f64) {
        let (_, g_lo, _) = self.eval(GAMMA_LO);
        if g_lo <= 0.0 {
            return (GAMMA_LO, self.eval(GAMMA_LO).0);
        }
        let (_, g_hi, _) = self.eval(GAMMA_HI);
        if g_hi >= 0.0 {
            return (GAMMA_HI, self.eval(GAMMA_HI).0);
        }
        let (mut lo, mut hi) = (GAMMA_LO, GAMMA_HI);
        let mut x = gamma0.clamp(lo, hi);
        for _ in 0..200 {
            let (_, g, d2) = self.eval(x);
            if g > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let mut next = if d2 < 0.0 { x - g / d2 } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            let done = (next - x).abs() <= 1e-13 * x.max(1.0) || hi - lo <= 1e-13;
            x = next;
            if done {
                break;
            }
        }
        (x, self.eval(x).0)
    }

    fn ks(&self, gamma: f64) -> f64 {
        let h = self.hist;
        let (a, lse) = log_weights(h.k_min, h.counts.len(), &self.logs, gamma, self.k_cut);
        let (mut f_fit, mut f_emp, mut d) = (0.0, 0.0, 0.0f64);
        for (ai, c) in a.iter().zip(&h.counts) {
            f_fit += (ai - lse).exp();
            f_emp += c / h.n;
            d = d.max((f_emp - f_fit).abs());
        }
        d
    }
}

fn fit_hist(hist: &Hist, grid: &PowerLawGrid) -> Result<(f64, u64, u64, f64, f64)> {
    let pairs: Vec<(u64, u64)> = grid
        .k_sat
        .iter()
        .flat_map(|&s| grid.k_cut.iter().map(move |&c| (s, c)))
        .filter(|&(s, c)| c >= s && c >= 1)
        .collect();
    if pairs.is_empty() {
        return Err(TopologyError::Fit("empty (k_sat, k_cut) grid".into()));
    }
    let results: Vec<(f64, u64, u64, f64, f64)> = pairs
        .par_iter()
        .map(|&(s, c)| {
            let cand = Candidate::new(hist, s, c);
            let (gamma, ll) = cand.maximize(cand.initial_gamma(s));
            (cand.ks(gamma), s, c, gamma, ll)
        })
        .collect();
    let mut best = results[0];
    for r in &results[1..] {
        if r.0 < best.0 {
            best = *r;
        }
    }
    Ok(best)
}

/// Fit the adjusted power law to positive degrees (zeros are ignored).
pub fn fit_adjusted_powerlaw(degrees: &[u64], grid: GridSpec) -> Result<PowerLawFit> {
    let hist = Hist::new(degrees)?;
    let g = grid.resolve(hist.k_min, hist.k_max());
    let (ks_stat, k_sat, k_cut, gamma, log_lik) = fit_hist(&hist, &g)?;
    Ok(PowerLawFit {
        gamma,
        k_sat,
        k_cut,
        ks_stat,
        log_lik,
        k_min: hist.k_min,
        k_max: hist.k_max(),
        n_obs: hist.n as usize,
        bootstrap_p: None,
        n_bootstrap: 0,
        grid,
    })
}

/// Log-likelihood of positive `degrees` under fixed parameters, with the
/// normalizer over the observed support.
pub fn log_likelihood(degrees: &[u64], gamma: f64, k_sat: u64, k_cut: u64) -> Result<f64> {
    let hist = Hist::new(degrees)?;
    Ok(Candidate::new(&hist, k_sat, k_cut).eval(gamma).0)
}

/// Draw `n` degrees from the fitted pmf.
pub fn sample_fitted<R: Rng>(fit: &PowerLawFit, n: usize, rng: &mut R) -> Vec<u64> {
    let pmf = adjusted_powerlaw_pmf(fit.gamma, fit.k_sat, fit.k_cut, fit.k_min, fit.k_max);
    let mut cdf = Vec::with_capacity(pmf.len());
    let mut acc = 0.0;
    for p in pmf {
        acc += p;
        cdf.push(acc);
    }
    (0..n)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            let i = cdf.partition_point(|&c| c < u).min(cdf.len() - 1);
            fit.k_min + i as u64
        })
        .collect()
}

/// Fraction of `n_boot` samples from the fitted model whose refit KS
/// distance is at least the observed one. Replicate `b` uses stream `b` of
/// a generator seeded with `seed`, so the result does not depend on the
/// thread count.
pub fn bootstrap_pvalue(fit: &PowerLawFit, n_boot: usize, seed: u64) -> Result<f64> {
    if n_boot < 1 {
        return Err(TopologyError::Fit("bootstrap needs at least one replicate".into()));
    }
    let outcomes: Vec<Option<bool>> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let sample = sample_fitted(fit, fit.n_obs, &mut rng);
            let hist = Hist::new(&sample).ok()?;
            let grid = fit.grid.resolve(hist.k_min, hist.k_max());
            let (ks, ..) = fit_hist(&hist, &grid).ok()?;
            Some(ks >= fit.ks_stat)
        })
        .collect();
    let valid: Vec<bool> = outcomes.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(TopologyError::Fit("every bootstrap replicate was degenerate".into()));
    }
    Ok(valid.iter().filter(|&&x| x).count() as f64 / valid.len() as f64)
}

/// Fit, then attach a bootstrap p-value when `n_boot > 0`.
pub fn fit_with_bootstrap(degrees: &[u64], grid: GridSpec, n_boot: usize, seed: u64) -> Result<PowerLawFit> {
    let mut fit = fit_adjusted_powerlaw(degrees, grid)?;
    if n_boot > 0 {
        fit.bootstrap_p = Some(bootstrap_pvalue(&fit, n_boot, seed)?);
        fit.n_bootstrap = n_boot;
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pure_fit(gamma: f64) -> PowerLawFit {
        PowerLawFit {
            gamma,
            k_sat: 0,
            k_cut: 1_000_000_000_000,
            ks_stat: 0.0,
            log_lik: 0.0,
            k_min: 1,
            k_max: 400,
            n_obs: 400,
            bootstrap_p: None,
            n_bootstrap: 0,
            grid: GridSpec::Default,
        }
    }

    #[test]
    fn large_cutoff_limit_is_pure_power_law() {
        let p = adjusted_powerlaw_pmf(2.2, 0, 1_000_000_000_000, 1, 500);
        let z: f64 = (1..=500).map(|k| (k as f64).powf(-2.2)).sum();
        for (i, &pk) in p.iter().enumerate() {
            let k = (i + 1) as f64;
            assert!((pk - k.powf(-2.2) / z).abs() < 1e-6);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn returned_gamma_is_a_local_maximum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sample = sample_fitted(&pure_fit(2.3), 2000, &mut rng);
        let fit = fit_adjusted_powerlaw(&sample, GridSpec::Default).unwrap();
        assert!(fit.gamma > 1.0 && fit.k_cut >= fit.k_sat);
        let at = log_likelihood(&sample, fit.gamma, fit.k_sat, fit.k_cut).unwrap();
        assert!((at - fit.log_lik).abs() < 1e-6 * at.abs());
        for dg in [-0.01, 0.01] {
            let g = fit.gamma + dg;
            if g > 1.0 {
                assert!(at >= log_likelihood(&sample, g, fit.k_sat, fit.k_cut).unwrap());
            }
        }
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            fit_adjusted_powerlaw(&[3; 10], GridSpec::Default),
            Err(TopologyError::TooFewObservations(10))
        ));
        assert!(matches!(fit_adjusted_powerlaw(&[3; 80], GridSpec::Default), Err(TopologyError::DegenerateDegrees)));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = sample_fitted(&pure_fit(2.5), 200, &mut rng);
        let fit = fit_adjusted_powerlaw(&sample, GridSpec::Default).unwrap();
        assert!(bootstrap_pvalue(&fit, 0, 1).is_err());
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sample = sample_fitted(&pure_fit(2.5), 300, &mut rng);
        let grid = GridSpec::Fixed(PowerLawGrid { k_sat: vec![0, 1, 2], k_cut: vec![50, 1000] });
        let fit = fit_adjusted_powerlaw(&sample, grid).unwrap();
        let a = bootstrap_pvalue(&fit, 40, 9).unwrap();
        let b = bootstrap_pvalue(&fit, 40, 9).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }
}
