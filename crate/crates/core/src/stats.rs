//! Classification metrics, aggregate statistics, Welch's t-test and the
//! energy / latency comparison formulas used by the report tables.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::OpCount;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("predictions and labels differ in length ({predictions} vs {labels})")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("need at least two observations per sample, got {0} and {1}")]
    TooFewObservations(usize, usize),
    #[error("degenerate variance: both samples are constant")]
    DegenerateVariance,
    #[error("baseline must be positive, got {0}")]
    NonPositiveBaseline(f64),
    #[error("cost constants must be nonnegative, got {0}")]
    NegativeCost(f64),
}

/// Confusion counts and the derived rates for a binary classifier.
///
/// Rates with an empty denominator are reported as `None`, never as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub accuracy: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

/// Welch two-sample t-test result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub dof: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Linear cost model mapping operation counts to proxy energy units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub e_mac: f64,
    pub e_acc: f64,
    pub e_fetch: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        // Ratio picked so event-driven runs on the synthetic benchmark land
        // in the same percent-reduction regime as the reference hardware
        // comparison. The constants are configuration, not measurements.
        Self { e_mac: 4.6, e_acc: 1.0, e_fetch: 0.0 }
    }
}

/// Operation counts priced through a [`CostModel`], plus measured wall-clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub ops: OpCount,
    pub proxy_energy: f64,
    pub wall_clock_seconds: f64,
}

/// Confusion-matrix metrics for binary predictions against labels.
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport, StatsError> {
    if predictions.is_empty() {
        return Err(StatsError::EmptyInput("predictions"));
    }
    if predictions.len() != labels.len() {
        return Err(StatsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p != 0, l != 0) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let total = (tp + tn + fp + fn_) as f64;
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            None
        } else {
            Some(num as f64 / den as f64)
        }
    };
    Ok(MetricsReport {
        tp,
        tn,
        fp,
        fn_,
        accuracy: (tp + tn) as f64 / total,
        tpr: ratio(tp, tp + fn_),
        tnr: ratio(tn, tn + fp),
    })
}

/// Mean and sample standard deviation (n − 1 denominator; 0 when n = 1).
pub fn aggregate(values: &[f64]) -> Result<(f64, f64), StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyInput("aggregate"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Welch's two-sample t-test (unequal variances), two-sided p-value.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewObservations(a.len(), b.len()));
    }
    let (mean_a, sd_a) = aggregate(a)?;
    let (mean_b, sd_b) = aggregate(b)?;
    let (var_a, var_b) = (sd_a * sd_a, sd_b * sd_b);
    if var_a == 0.0 && var_b == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let sa = var_a / a.len() as f64;
    let sb = var_b / b.len() as f64;
    let se = (sa + sb).sqrt();
    let t = (mean_a - mean_b) / se;
    let dof = (sa + sb) * (sa + sb)
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let p = student_t_two_sided_p(t, dof);
    Ok(TTestResult { t, dof, p })
}

/// Percent reduction of `comparison` relative to `baseline` (Eq. style
/// `100 × (baseline − comparison) / baseline`).
pub fn percent_reduction(baseline: f64, comparison: f64) -> Result<f64, StatsError> {
    if baseline <= 0.0 {
        return Err(StatsError::NonPositiveBaseline(baseline));
    }
    Ok(100.0 * (baseline - comparison) / baseline)
}

/// Latency ratio `comparison / baseline`; values above 1 mean the
/// comparison path is slower.
pub fn latency_ratio(comparison: f64, baseline: f64) -> Result<f64, StatsError> {
    if baseline <= 0.0 {
        return Err(StatsError::NonPositiveBaseline(baseline));
    }
    Ok(comparison / baseline)
}

/// Price an operation count through the linear cost model.
pub fn energy_proxy(
    ops: &OpCount,
    cost: &CostModel,
    wall_clock_seconds: f64,
) -> Result<EnergyReport, StatsError> {
    for c in [cost.e_mac, cost.e_acc, cost.e_fetch] {
        if c < 0.0 {
            return Err(StatsError::NegativeCost(c));
        }
    }
    let proxy_energy = ops.dense_macs as f64 * cost.e_mac
        + ops.event_accumulates as f64 * cost.e_acc
        + ops.weight_fetches as f64 * cost.e_fetch;
    Ok(EnergyReport { ops: ops.clone(), proxy_energy, wall_clock_seconds })
}

/// Two-sided p-value of Student's t distribution via the regularized
/// incomplete beta function: `p = I_{ν/(ν+t²)}(ν/2, 1/2)`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    let x = dof / (dof + t * t);
    regularized_incomplete_beta(0.5 * dof, 0.5, x).clamp(0.0, 1.0)
}

/// Regularized incomplete beta function `I_x(a, b)` by continued fraction.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // The continued fraction converges fast only for x below the split
    // point; use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) otherwise.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - regularized_incomplete_beta(b, a, 1.0 - x)
    }
}

/// Modified Lentz evaluation of the incomplete beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
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
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
