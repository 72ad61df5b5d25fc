use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{ks_normal, ks_two_sample, mean_var};

/// A Kolmogorov–Smirnov statistic and its asymptotic p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Size of the reference sample; `None` for a CDF.
    pub reference_n: Option<usize>,
}

/// Moments of a replicate sample. Standard errors come from batch means:
/// each statistic is recomputed on `batches` contiguous blocks and the
/// spread of the block values is scaled by `1/sqrt(batches)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub n: usize,
    pub batches: usize,
    pub mean: f64,
    pub mean_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub skewness: f64,
    pub skewness_se: f64,
    pub excess_kurtosis: f64,
    pub excess_kurtosis_se: f64,
    pub ks_normal: KsResult,
    pub ks_reference: Option<KsResult>,
}

#[derive(Clone, Copy)]
struct Moments {
    mean: f64,
    var: f64,
    skew: f64,
    kurt: f64,
}

fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let (mean, var) = mean_var(xs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    // Constant data has no shape; report 0 rather than NaN.
    let (skew, kurt) = if m2 > 0.0 { (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0) } else { (0.0, 0.0) };
    Moments { mean, var, skew, kurt }
}

/// Summary of `values` in the given order. `batches` is clamped to `2..=n`.
pub fn summarize(values: &[f64], batches: usize) -> Result<StatSummary> {
    let n = values.len();
    if n < 2 {
        return Err(Error::arg(format!("summary needs at least two values, got {n}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite replicate value".into()));
    }
    let all = moments(values);
    let b = batches.clamp(2, n);
    let size = n / b;
    let blocks: Vec<Moments> = (0..b).map(|i| moments(&values[i * size..(i + 1) * size])).collect();
    let se = |f: fn(&Moments) -> f64| {
        let xs: Vec<f64> = blocks.iter().map(f).collect();
        let (_, v) = mean_var(&xs);
        if v.is_finite() { (v / b as f64).sqrt() } else { f64::NAN }
    };
    let (d, p) = if all.var > 0.0 { ks_normal(values) } else { (1.0, 0.0) };
    Ok(StatSummary {
        n,
        batches: b,
        mean: all.mean,
        mean_se: se(|m| m.mean),
        variance: all.var,
        variance_se: se(|m| m.var),
        skewness: all.skew,
        skewness_se: se(|m| m.skew),
        excess_kurtosis: all.kurt,
        excess_kurtosis_se: se(|m| m.kurt),
        ks_normal: KsResult { statistic: d, p_value: p, reference_n: None },
        ks_reference: None,
    })
}

impl StatSummary {
    /// Attach a two-sample KS test of the standardised values against a standardised reference.
    pub fn with_reference(mut self, values: &[f64], reference: &[f64]) -> Self {
        let (d, p) = ks_two_sample(&standardize(values), &standardize(reference));
        self.ks_reference = Some(KsResult { statistic: d, p_value: p, reference_n: Some(reference.len()) });
        self
    }
}

/// `(x - mean) / sd`; constant input maps to zeros.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    let (m, v) = mean_var(xs);
    let s = if v > 0.0 { v.sqrt() } else { 1.0 };
    xs.iter().map(|x| (x - m) / s).collect()
}
