//! Grid search for the distance of influence of a point feature: the cap
//! `D` on a distance covariate that maximizes the severity log-likelihood.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{Mode, ObservationTable};
use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions};
use crate::lrtest::chi2_quantile;
use crate::spec::ModelSpec;

/// Log-likelihood differences below this count as ties.
const TIE: f64 = 1e-6;

/// `min(d, cap)`.
pub fn influence_variable(d: f64, cap: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::Domain(format!("distance must be ≥ 0, got {d}")));
    }
    if !(cap > 0.0) {
        return Err(Error::Domain(format!("influence range must be > 0, got {cap}")));
    }
    Ok(d.min(cap))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub d_min: f64,
    pub d_max: f64,
    pub step: f64,
}

impl Grid {
    /// `d_min + k·step` for every k that stays at or below `d_max`.
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.d_min > 0.0 && self.step > 0.0 && self.d_max >= self.d_min) {
            return Err(Error::Config(format!(
                "invalid grid: d_min={}, d_max={}, step={}",
                self.d_min, self.d_max, self.step
            )));
        }
        let n = ((self.d_max - self.d_min) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|k| self.d_min + k as f64 * self.step).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceProfile {
    pub distance_column: String,
    pub grid: Vec<f64>,
    /// Log-likelihood at convergence per grid point; `None` where the fit
    /// failed or did not converge.
    pub ll: Vec<Option<f64>>,
    pub converged: Vec<bool>,
    pub d_star: f64,
    pub ll_star: f64,
    /// Total influence segment, `2·d_star` (upstream plus downstream).
    pub segment_length: f64,
    /// No grid point is better than another at the 95% level.
    pub flat: bool,
    pub warnings: Vec<String>,
}

impl InfluenceProfile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["D", "ll", "converged"])?;
        for ((d, ll), c) in self.grid.iter().zip(&self.ll).zip(&self.converged) {
            w.write_record([
                format!("{d}"),
                ll.map(|v| format!("{v}")).unwrap_or_default(),
                c.to_string(),
            ])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Refit `spec` with the distance column capped at each grid value and
/// keep the cap with the highest log-likelihood (ties go to the smaller
/// cap). Each fit starts from the previous grid point's estimates; when a
/// cap leaves the column unchanged the previous fit is reused as is.
pub fn search_influence(
    table: &ObservationTable,
    spec: &ModelSpec,
    distance_column: &str,
    grid: &Grid,
    opts: &FitOptions,
) -> Result<InfluenceProfile> {
    if spec.mode() != Mode::Severity {
        return Err(Error::InvalidSpec("influence search needs a severity model".into()));
    }
    if !spec.terms.iter().any(|t| t.variable == distance_column) {
        return Err(Error::InvalidSpec(format!(
            "model has no term for the distance column `{distance_column}`"
        )));
    }
    let d = table
        .column(distance_column)
        .ok_or_else(|| Error::MissingColumn(distance_column.to_string()))?
        .to_vec();
    let points = grid.points()?;
    let mut opts = FitOptions {
        covariance: false,
        restricted: false,
        ..opts.clone()
    };
    let mut ll = Vec::with_capacity(points.len());
    let mut converged = Vec::with_capacity(points.len());
    let mut warnings = Vec::new();
    let mut previous: Option<(Vec<f64>, Option<f64>, bool)> = None;
    for &cap in &points {
        let capped = d
            .iter()
            .map(|&v| influence_variable(v, cap))
            .collect::<Result<Vec<f64>>>()?;
        let outcome = match &previous {
            Some((col, l, c)) if *col == capped => (*l, *c),
            _ => {
                let t = table.with_column(distance_column, capped.clone())?;
                match fit(&t, spec, &opts) {
                    Ok(f) if f.converged => {
                        opts.start = Some(f.theta_raw.clone());
                        (Some(f.ll_converged), true)
                    }
                    Ok(_) => {
                        warnings.push(format!("fit at D = {cap} did not converge; excluded"));
                        (None, false)
                    }
                    Err(e) => {
                        warnings.push(format!("fit at D = {cap} failed: {e}; excluded"));
                        (None, false)
                    }
                }
            }
        };
        ll.push(outcome.0);
        converged.push(outcome.1);
        previous = Some((capped, outcome.0, outcome.1));
    }

    let mut best: Option<(usize, f64)> = None;
    for (i, l) in ll.iter().enumerate() {
        if let Some(v) = *l {
            if best.is_none_or(|(_, b)| v > b + TIE) {
                best = Some((i, v));
            }
        }
    }
    let (i_star, ll_star) =
        best.ok_or_else(|| Error::NotConverged("no grid point converged".into()))?;
    let finite: Vec<f64> = ll.iter().flatten().copied().collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let flat = ll_star - lo < 0.5 * chi2_quantile(0.95, 1.0)?;
    if flat {
        warnings.push(
            "flat profile: no cap improves the log-likelihood significantly; D is not identified"
                .into(),
        );
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let d_star = points[i_star];
    Ok(InfluenceProfile {
        distance_column: distance_column.to_string(),
        grid: points,
        ll,
        converged,
        d_star,
        ll_star,
        segment_length: 2.0 * d_star,
        flat,
        warnings,
    })
}
