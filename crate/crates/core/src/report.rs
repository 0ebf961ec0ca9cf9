//! Final artifact of a sweep: the per-offset mean vegetation fraction table,
//! its linear fit and the hypothesis decision.

use std::fmt::Write as _;
use std::io::Write;

use thiserror::Error;

use crate::analysis::{
    figure_rows, hypothesis_report, ols_fit, AnalysisError, FigureRow, HypothesisDecision, OlsFit,
};
use crate::autogeolabel::aggregate_fractions;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("records contain no delta_t = 0 baseline")]
    MissingBaseline,
    #[error("need at least 3 distinct delta_t values, got {0}")]
    TooFewOffsets(usize),
    #[error("record for `{0}` has a fraction outside [0, 1]")]
    BadFraction(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    pub scene_id: String,
    pub delta_t: f64,
    pub achieved_dt: f64,
    /// Vegetation fraction of the counterfactual.
    pub v_prime: f64,
    /// Vegetation fraction of the reconstruction at delta_t = 0.
    pub v_baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub alpha: f64,
    pub n_records: usize,
    pub n_scenes: usize,
    /// Counterfactuals dropped upstream (for example degenerate gradients).
    pub excluded: usize,
    pub aggregated: Vec<(f64, f64)>,
    pub fit: OlsFit,
    pub decision: HypothesisDecision,
    pub rows: Vec<FigureRow>,
    pub mean_abs_dt_error: f64,
}

/// Aggregates records by offset, fits `mean_v = a delta_t + b` and decides.
pub fn build_report(
    records: &[ExperimentRecord],
    excluded: usize,
    alpha: f64,
) -> Result<Report, ReportError> {
    for r in records {
        let ok = |v: f64| (0.0..=1.0).contains(&v);
        if !ok(r.v_prime) || !ok(r.v_baseline) {
            return Err(ReportError::BadFraction(r.scene_id.clone()));
        }
    }
    if !records.iter().any(|r| r.delta_t == 0.0) {
        return Err(ReportError::MissingBaseline);
    }
    let tuples: Vec<(f64, f64)> = records.iter().map(|r| (r.delta_t, r.v_prime)).collect();
    let aggregated = aggregate_fractions(&tuples);
    if aggregated.len() < 3 {
        return Err(ReportError::TooFewOffsets(aggregated.len()));
    }
    let xs: Vec<f64> = aggregated.iter().map(|r| r.0).collect();
    let ys: Vec<f64> = aggregated.iter().map(|r| r.1).collect();
    let fit = ols_fit(&xs, &ys)?;
    let decision = hypothesis_report(&fit, alpha);
    let rows = figure_rows(&aggregated, &fit);
    let mut scenes: Vec<&str> = records.iter().map(|r| r.scene_id.as_str()).collect();
    scenes.sort_unstable();
    scenes.dedup();
    let moved: Vec<f64> = records
        .iter()
        .filter(|r| r.delta_t != 0.0)
        .map(|r| (r.achieved_dt - r.delta_t).abs())
        .collect();
    let mean_abs_dt_error = if moved.is_empty() {
        0.0
    } else {
        moved.iter().sum::<f64>() / moved.len() as f64
    };
    Ok(Report {
        alpha,
        n_records: records.len(),
        n_scenes: scenes.len(),
        excluded,
        aggregated,
        fit,
        decision,
        rows,
        mean_abs_dt_error,
    })
}

impl Report {
    pub fn write_figure_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "delta_t,mean_v,fit_v,ci_lo,ci_hi")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.delta_t, r.mean_v, r.fit_v, r.ci_lo, r.ci_hi
            )?;
        }
        Ok(())
    }

    pub fn text(&self) -> String {
        let f = &self.fit;
        let mut s = String::new();
        let _ = writeln!(s, "scenes: {}", self.n_scenes);
        let _ = writeln!(s, "records: {}", self.n_records);
        let _ = writeln!(s, "excluded: {}", self.excluded);
        let _ = writeln!(s, "offsets: {}", self.aggregated.len());
        let _ = writeln!(
            s,
            "mean |achieved_dt - delta_t|: {:.6}",
            self.mean_abs_dt_error
        );
        let _ = writeln!(s, "fit: mean_v = a * delta_t + b");
        let _ = writeln!(
            s,
            "a: {:e} (95% CI {:e} .. {:e}, se {:e})",
            f.a, f.ci_a.0, f.ci_a.1, f.se_a
        );
        let _ = writeln!(
            s,
            "b: {:.6} (95% CI {:.6} .. {:.6}, se {:e})",
            f.b, f.ci_b.0, f.ci_b.1, f.se_b
        );
        let degenerate = if f.degenerate {
            " (degenerate: zero variance)"
        } else {
            ""
        };
        let _ = writeln!(s, "r_squared: {:.6}{degenerate}", f.r_squared);
        let _ = writeln!(s, "t_a: {:.6}, dof {}", f.t_a, f.dof);
        let _ = writeln!(s, "p_a (two-sided): {:.6e}", f.p_a);
        let _ = writeln!(s, "{}", self.decision.summary());
        s
    }
}
