//! Simple linear regression with classical inference: coefficients, R²,
//! standard errors, Student-t p-values and confidence intervals.

use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("need at least 3 points, got {0}")]
    InsufficientData(usize),
    #[error("xs and ys differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("design is rank deficient: all x values are equal")]
    Rank,
    #[error("input contains non-finite values")]
    NonFinite,
}

/// Natural log of the gamma function for `x > 0` (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function, modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
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

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// CDF of Student's t distribution with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-sided tail probability `P(|T| >= |t|)`.
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0)
}

/// Inverse CDF by bisection on [`student_t_cdf`].
pub fn student_t_quantile(p: f64, dof: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let (mut lo, mut hi) = (-1.0, 1.0);
    while student_t_cdf(lo, dof) > p {
        lo *= 2.0;
    }
    while student_t_cdf(hi, dof) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if student_t_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * mid.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub se_a: f64,
    pub se_b: f64,
    pub r_squared: f64,
    /// Set when the ys have zero variance; `r_squared` is then 0.
    pub degenerate: bool,
    pub t_a: f64,
    /// Two-sided p-value of the slope.
    pub p_a: f64,
    pub ci_a: (f64, f64),
    pub ci_b: (f64, f64),
    pub dof: usize,
    pub residuals: Vec<f64>,
    /// Residual standard error.
    pub sigma: f64,
    pub x_mean: f64,
    pub sxx: f64,
    /// `t_{0.975, dof}`.
    pub t_crit: f64,
}

/// Ordinary least squares fit of `y = a x + b` with 95% intervals.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<OlsFit, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 3 {
        return Err(AnalysisError::InsufficientData(n));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    let nf = n as f64;
    let x_mean = xs.iter().sum::<f64>() / nf;
    let y_mean = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::Rank);
    }
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let syy: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let a = sxy / sxx;
    let b = y_mean - a * x_mean;
    let residuals: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| y - (a * x + b)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let degenerate = syy == 0.0;
    let r_squared = if degenerate {
        0.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    let dof = n - 2;
    let sigma = (ss_res / dof as f64).sqrt();
    let se_a = sigma / sxx.sqrt();
    let se_b = sigma * (1.0 / nf + x_mean * x_mean / sxx).sqrt();
    let t_a = if se_a > 0.0 {
        a / se_a
    } else if a == 0.0 {
        0.0
    } else {
        a.signum() * f64::INFINITY
    };
    let p_a = student_t_two_sided_p(t_a, dof as f64);
    let t_crit = student_t_quantile(0.975, dof as f64);
    Ok(OlsFit {
        n,
        a,
        b,
        se_a,
        se_b,
        r_squared,
        degenerate,
        t_a,
        p_a,
        ci_a: (a - t_crit * se_a, a + t_crit * se_a),
        ci_b: (b - t_crit * se_b, b + t_crit * se_b),
        dof,
        residuals,
        sigma,
        x_mean,
        sxx,
        t_crit,
    })
}

impl OlsFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * x + self.b
    }

    /// 95% confidence band of the mean response at `x`.
    pub fn mean_response_ci(&self, x: f64) -> (f64, f64) {
        let y = self.predict(x);
        let half = self.t_crit
            * self.sigma
            * (1.0 / self.n as f64 + (x - self.x_mean).powi(2) / self.sxx).sqrt();
        (y - half, y + half)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisDecision {
    pub alpha: f64,
    pub a: f64,
    pub p_two_sided: f64,
    pub reject_null: bool,
}

/// The null hypothesis (no cooling effect of vegetation) is rejected when
/// the slope is negative and its two-sided p-value is strictly below alpha.
pub fn decide(a: f64, p_two_sided: f64, alpha: f64) -> HypothesisDecision {
    HypothesisDecision {
        alpha,
        a,
        p_two_sided,
        reject_null: p_two_sided < alpha && a < 0.0,
    }
}

pub fn hypothesis_report(fit: &OlsFit, alpha: f64) -> HypothesisDecision {
    decide(fit.a, fit.p_a, alpha)
}

impl HypothesisDecision {
    pub fn summary(&self) -> String {
        let verdict = if self.reject_null {
            "reject H0"
        } else {
            "fail to reject H0"
        };
        format!(
            "decision: {verdict} (slope {:e}, two-sided p {:.6}, alpha {}; rejection requires p < alpha and a negative slope)",
            self.a, self.p_two_sided, self.alpha
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FigureRow {
    pub delta_t: f64,
    pub mean_v: f64,
    pub fit_v: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

pub fn figure_rows(aggregated: &[(f64, f64)], fit: &OlsFit) -> Vec<FigureRow> {
    aggregated
        .iter()
        .map(|&(dt, v)| {
            let (ci_lo, ci_hi) = fit.mean_response_ci(dt);
            FigureRow {
                delta_t: dt,
                mean_v: v,
                fit_v: fit.predict(dt),
                ci_lo,
                ci_hi,
            }
        })
        .collect()
}

/// CSV with header `delta_t,mean_v,fit_v,ci_lo,ci_hi`.
pub fn report_figure_data<W: Write>(
    aggregated: &[(f64, f64)],
    fit: &OlsFit,
    mut w: W,
) -> Result<Vec<FigureRow>, std::io::Error> {
    if aggregated.len() < 3 {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            "figure data needs at least 3 rows",
        ));
    }
    let rows = figure_rows(aggregated, fit);
    writeln!(w, "delta_t,mean_v,fit_v,ci_lo,ci_hi")?;
    for r in &rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.delta_t, r.mean_v, r.fit_v, r.ci_lo, r.ci_hi
        )?;
    }
    Ok(rows)
}
