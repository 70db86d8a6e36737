//! Distribution statistics and the Levene variance-equality test.

use serde::{Deserialize, Serialize};

use crate::model::HistogramBin;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {needed} values, got {found}")]
    TooFewValues { needed: usize, found: usize },
    #[error("histogram needs bins ≥ 1 and hi > lo")]
    BadRange,
    #[error("domain error: {0}")]
    Domain(String),
    #[error("input contains a non-finite value")]
    NonFinite,
}

pub fn mean(values: &[f64]) -> Result<f64, StatsError> {
    if values.is_empty() {
        return Err(StatsError::TooFewValues { needed: 1, found: 0 });
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Arithmetic mean and sample (n - 1) standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFewValues { needed: 2, found: values.len() });
    }
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
    }
    Ok((mean, (m2 / (values.len() - 1) as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
    /// Values outside `[lo, hi]`, including non-finite ones.
    pub out_of_range: usize,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.bins.iter().map(|b| b.count).sum()
    }
}

/// Equal-width histogram over `[lo, hi]`; the last bin includes `hi`.
pub fn histogram(values: &[f64], bins: usize, range: (f64, f64)) -> Result<Histogram, StatsError> {
    let (lo, hi) = range;
    if bins == 0 || !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(StatsError::BadRange);
    }
    let width = (hi - lo) / bins as f64;
    let edge = |i: usize| if i == bins { hi } else { lo + width * i as f64 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin { lo: edge(i), hi: edge(i + 1), count: 0 })
        .collect();
    let mut out_of_range = 0;
    for &v in values {
        if !(lo..=hi).contains(&v) {
            out_of_range += 1;
            continue;
        }
        let mut idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        // Snap to the stored edges so bucketing agrees with the reported bounds.
        while idx > 0 && v < out[idx].lo {
            idx -= 1;
        }
        while idx + 1 < bins && v >= out[idx + 1].lo {
            idx += 1;
        }
        out[idx].count += 1;
    }
    Ok(Histogram { bins: out, out_of_range })
}

/// Location each group's absolute deviations are measured from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Center {
    /// Classic Levene.
    #[default]
    Mean,
    /// Brown-Forsythe variant.
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeveneOutcome {
    pub w: f64,
    pub p_value: f64,
    pub df_between: f64,
    pub df_within: f64,
    /// Every group had zero spread around its center.
    pub degenerate: bool,
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn levene_test(group_a: &[f64], group_b: &[f64], center: Center) -> Result<LeveneOutcome, StatsError> {
    levene_test_groups(&[group_a, group_b], center)
}

pub fn levene_test_groups(groups: &[&[f64]], center: Center) -> Result<LeveneOutcome, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewValues { needed: 2, found: groups.len() });
    }
    if let Some(g) = groups.iter().find(|g| g.len() < 2) {
        return Err(StatsError::TooFewValues { needed: 2, found: g.len() });
    }
    if groups.iter().flat_map(|g| g.iter()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }

    let deviations: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let c = match center {
                Center::Mean => g.iter().sum::<f64>() / g.len() as f64,
                Center::Median => median(g),
            };
            g.iter().map(|v| (v - c).abs()).collect()
        })
        .collect();
    let sizes: Vec<f64> = deviations.iter().map(|z| z.len() as f64).collect();
    let means: Vec<f64> = deviations
        .iter()
        .map(|z| z.iter().sum::<f64>() / z.len() as f64)
        .collect();

    let k = groups.len() as f64;
    let n_total: f64 = sizes.iter().sum();

    // Pairwise form of the between-group sum of squares: exactly zero when
    // the group means coincide.
    let mut between = 0.0;
    for i in 0..means.len() {
        for j in (i + 1)..means.len() {
            let d = means[i] - means[j];
            between += sizes[i] * sizes[j] * d * d;
        }
    }
    between /= n_total;
    let within: f64 = deviations
        .iter()
        .zip(&means)
        .map(|(z, m)| z.iter().map(|v| (v - m) * (v - m)).sum::<f64>())
        .sum();

    let df_between = k - 1.0;
    let df_within = n_total - k;
    // Deviations that are all equal within rounding (always the case for
    // two-element groups) count as zero spread.
    let scale: f64 = deviations.iter().flatten().map(|v| v * v).sum();
    if within <= 1e-24 * scale || within == 0.0 {
        let (w, p_value) = if between == 0.0 { (0.0, 1.0) } else { (f64::INFINITY, 0.0) };
        return Ok(LeveneOutcome { w, p_value, df_between, df_within, degenerate: true });
    }
    let w = (df_within / df_between) * (between / within);
    let p_value = f_upper_tail(w, df_between, df_within)?;
    Ok(LeveneOutcome { w, p_value, df_between, df_within, degenerate: false })
}

/// `P(F > x)` for an F(d1, d2) variable.
pub fn f_upper_tail(x: f64, d1: f64, d2: f64) -> Result<f64, StatsError> {
    if !(d1 > 0.0 && d2 > 0.0) || x.is_nan() {
        return Err(StatsError::Domain(format!("F({d1}, {d2}) at {x}")));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x))
}

/// `P(F ≤ x)` for an F(d1, d2) variable.
pub fn f_cdf(x: f64, d1: f64, d2: f64) -> Result<f64, StatsError> {
    if !(d1 > 0.0 && d2 > 0.0) || x.is_nan() {
        return Err(StatsError::Domain(format!("F({d1}, {d2}) at {x}")));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    incomplete_beta(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin().abs()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularized incomplete beta `I_x(a, b)` by continued fraction.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> Result<f64, StatsError> {
    if !(a > 0.0 && a.is_finite() && b > 0.0 && b.is_finite()) {
        return Err(StatsError::Domain(format!("incomplete beta needs a, b > 0 (a={a}, b={b})")));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(StatsError::Domain(format!("incomplete beta needs x in [0,1] (x={x})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let front = (a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b)).exp();
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x)? / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x)? / b
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Modified Lentz evaluation of the incomplete-beta continued fraction.
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> Result<f64, StatsError> {
    const MAX_ITER: usize = 10_000;
    const EPS: f64 = 1e-16;
    const TINY: f64 = 1e-300;
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok(h);
        }
    }
    Err(StatsError::Domain(format!("continued fraction did not converge (a={a}, b={b}, x={x})")))
}
