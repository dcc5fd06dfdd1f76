//! Estimators and goodness-of-fit tests used by the verification harness.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// A point estimate with its CLT standard error, optionally set against an
/// analytic value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub oracle: Option<f64>,
    pub z: Option<f64>,
}

impl EstimatorReport {
    pub fn with_oracle(mut self, oracle: f64) -> Self {
        self.oracle = Some(oracle);
        let diff = self.estimate - oracle;
        self.z = if self.stderr > 0.0 {
            Some(diff / self.stderr)
        } else if diff == 0.0 {
            Some(0.0)
        } else {
            None
        };
        self
    }

    /// `|estimate - oracle| <= z_max * stderr + allowance`.
    pub fn within(&self, z_max: f64, allowance: f64) -> bool {
        match self.oracle {
            Some(o) => (self.estimate - o).abs() <= z_max * self.stderr + allowance,
            None => false,
        }
    }
}

fn require(n: usize, needed: usize) -> Result<()> {
    if n < needed {
        Err(Error::SampleTooSmall { needed, got: n })
    } else {
        Ok(())
    }
}

pub fn estimate_mean(sample: &[f64]) -> Result<EstimatorReport> {
    require(sample.len(), 2)?;
    let n = sample.len() as f64;
    let mean = sample.iter().copied().collect::<CompensatedSum>().value() / n;
    let ss = sample
        .iter()
        .map(|&x| (x - mean) * (x - mean))
        .collect::<CompensatedSum>()
        .value();
    let var = ss / (n - 1.0);
    Ok(EstimatorReport {
        estimate: mean,
        stderr: (var / n).sqrt(),
        n: sample.len(),
        oracle: None,
        z: None,
    })
}

/// Empirical `E exp(-alpha X)`.
pub fn estimate_laplace(sample: &[f64], alpha: f64) -> Result<EstimatorReport> {
    require(sample.len(), 2)?;
    let values: Vec<f64> = sample.iter().map(|&x| (-alpha * x).exp()).collect();
    estimate_mean(&values)
}

/// Empirical proportion of `true` values with its binomial standard error.
pub fn estimate_proportion(flags: &[bool]) -> Result<EstimatorReport> {
    require(flags.len(), 2)?;
    let n = flags.len() as f64;
    let p = flags.iter().filter(|&&b| b).count() as f64 / n;
    Ok(EstimatorReport {
        estimate: p,
        stderr: (p * (1.0 - p) / n).sqrt(),
        n: flags.len(),
        oracle: None,
        z: None,
    })
}

/// Survival function of the Kolmogorov distribution,
/// `P(sup |B^bridge| > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Theta-function form converges fast for small arguments.
        let c = -std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let mut cdf = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            cdf += (c * j * j).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / lambda;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sf = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sf += if k % 2 == 1 { term } else { -term };
            if term < 1e-18 {
                break;
            }
        }
        (2.0 * sf).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

fn sorted(sample: &[f64]) -> Result<Vec<f64>> {
    if sample.iter().any(|x| x.is_nan()) {
        return Err(invalid("sample contains NaN"));
    }
    let mut v = sample.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF, with the
/// asymptotic p-value.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult> {
    require(sample.len(), 1)?;
    let v = sorted(sample)?;
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(n.sqrt() * d),
        n: v.len(),
    })
}

/// KS p-value of `sample` against the exponential law with the given mean.
pub fn ks_exponential(sample: &[f64], mean: f64) -> Result<f64> {
    require(sample.len(), 50)?;
    if !(mean > 0.0) {
        return Err(invalid(format!(
            "exponential mean must be positive, got {mean}"
        )));
    }
    Ok(ks_one_sample(
        sample,
        |x| if x <= 0.0 { 0.0 } else { -(-x / mean).exp_m1() },
    )?
    .p_value)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    require(a.len().min(b.len()), 1)?;
    let (x, y) = (sorted(a)?, sorted(b)?);
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(en * d),
        n: x.len() + y.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Pearson goodness-of-fit test; `expected` holds cell probabilities.
pub fn chi_square_gof(observed: &[u64], expected: &[f64]) -> Result<ChiSquareResult> {
    if observed.len() != expected.len() || observed.len() < 2 {
        return Err(invalid(
            "observed and expected must have the same length >= 2",
        ));
    }
    let total: u64 = observed.iter().sum();
    require(total as usize, 1)?;
    let norm: f64 = expected.iter().sum();
    let mut stat = 0.0;
    for (&o, &p) in observed.iter().zip(expected) {
        let e = total as f64 * p / norm;
        if !(e > 0.0) {
            return Err(invalid("expected cell counts must be positive"));
        }
        stat += (o as f64 - e).powi(2) / e;
    }
    let df = observed.len() - 1;
    let dist = ChiSquared::new(df as f64).map_err(|e| invalid(e.to_string()))?;
    Ok(ChiSquareResult {
        statistic: stat,
        df,
        p_value: dist.sf(stat),
    })
}

/// z-statistic for the difference of two independent proportions, using
/// the pooled variance.
pub fn two_proportion_z(hits_a: usize, n_a: usize, hits_b: usize, n_b: usize) -> Result<f64> {
    require(n_a.min(n_b), 1)?;
    let (pa, pb) = (hits_a as f64 / n_a as f64, hits_b as f64 / n_b as f64);
    let pooled = (hits_a + hits_b) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 {
        return Ok(0.0);
    }
    Ok((pa - pb) / se)
}
