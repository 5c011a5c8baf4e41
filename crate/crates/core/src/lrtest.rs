//! Likelihood-ratio tests of a pooled model against a two-way split, with
//! asymptotic χ² and parametric-bootstrap (Monte-Carlo) null distributions.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::design::build_design;
use crate::error::{Error, Result};
use crate::fit::{fit, FitOptions};
use crate::mle::FitResult;
use crate::rng;
use crate::spec::ModelSpec;
use crate::special::{gamma_p, gamma_q};
use crate::synth::Sampler;

/// Statistics this far below zero are optimizer noise and clamp silently
/// apart from a warning; anything lower is still clamped but flagged louder.
const NEGATIVE_TOLERANCE: f64 = 1e-4;

/// Failure share above which a Monte-Carlo run is abandoned.
const MAX_FAILURE_SHARE: f64 = 0.2;

pub const MIN_REPLICATES: usize = 100;

/// `X² = −2(LL_all − LL_A − LL_B)` and its degrees of freedom
/// `(params_A + params_B) − params_all`. Negative statistics are clamped to 0.
pub fn lr_statistic(
    ll_all: f64,
    ll_a: f64,
    ll_b: f64,
    params_all: usize,
    params_a: usize,
    params_b: usize,
) -> Result<(f64, usize)> {
    let dof = (params_a + params_b) as i64 - params_all as i64;
    if dof <= 0 {
        return Err(Error::Domain(format!("degrees of freedom must be positive, got {dof}")));
    }
    let x2 = -2.0 * (ll_all - ll_a - ll_b);
    if !x2.is_finite() {
        return Err(Error::NonFinite("likelihood-ratio statistic".into()));
    }
    Ok((x2.max(0.0), dof as usize))
}

fn check_chi2_args(x: f64, dof: f64) -> Result<()> {
    if !(dof > 0.0 && dof.is_finite()) {
        return Err(Error::Domain(format!("χ² degrees of freedom must be positive, got {dof}")));
    }
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("χ² argument must be ≥ 0, got {x}")));
    }
    Ok(())
}

/// Upper tail `P(χ²_dof ≥ x) = Q(dof/2, x/2)`.
pub fn chi2_sf(x: f64, dof: f64) -> Result<f64> {
    check_chi2_args(x, dof)?;
    Ok(gamma_q(dof / 2.0, x / 2.0))
}

/// Lower tail `P(χ²_dof ≤ x) = P(dof/2, x/2)`.
pub fn chi2_cdf(x: f64, dof: f64) -> Result<f64> {
    check_chi2_args(x, dof)?;
    Ok(gamma_p(dof / 2.0, x / 2.0))
}

/// Value `q` with `P(χ²_dof ≤ q) = p`, by bracketing and bisection.
pub fn chi2_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must lie in (0, 1), got {p}")));
    }
    check_chi2_args(0.0, dof)?;
    // Work on whichever tail is smaller to keep precision for p near 1.
    let upper = p > 0.5;
    let f = |x: f64| -> f64 {
        if upper {
            (1.0 - p) - gamma_q(dof / 2.0, x / 2.0)
        } else {
            gamma_p(dof / 2.0, x / 2.0) - p
        }
    };
    let mut lo = 0.0;
    let mut hi = dof.max(1.0);
    while f(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Domain("χ² quantile bracket did not close".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[0, max]`; the top edge is inclusive.
    pub fn over_zero_to_max(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let max = values.iter().copied().fold(0.0f64, f64::max);
        let top = if max > 0.0 { max } else { 1.0 };
        let width = top / bins as f64;
        let edges = (0..=bins).map(|i| i as f64 * width).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = ((v / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Ok(Histogram { edges, counts })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["bin_left", "bin_right", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([
                format!("{}", self.edges[i]),
                format!("{}", self.edges[i + 1]),
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    /// Monte-Carlo replicates; 0 runs the asymptotic test only.
    pub replicates: usize,
    pub seed: u64,
    pub bins: usize,
    /// Report `(k+1)/(R+1)` instead of the plain fraction `k/R`.
    pub bias_corrected: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            replicates: 1000,
            seed: 0,
            bins: 50,
            bias_corrected: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTestResult {
    pub x2: f64,
    pub dof: usize,
    pub p_asymptotic: f64,
    pub ll_all: f64,
    pub ll_a: f64,
    pub ll_b: f64,
    pub params_all: usize,
    pub params_a: usize,
    pub params_b: usize,
    pub n_a: usize,
    pub n_b: usize,
    /// All three observed-data fits converged.
    pub converged: bool,
    pub p_mc: Option<f64>,
    pub bias_corrected: bool,
    pub null_histogram: Option<Histogram>,
    /// Simulated statistics in replicate order (failed replicates omitted).
    pub null_statistics: Vec<f64>,
    pub replicates: usize,
    pub failed_replicates: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl LrTestResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Replace the outcomes of `table` with draws from the fitted `pooled`
/// model at each row's covariates. Random coefficients are redrawn from
/// their fitted mixing distributions.
pub fn simulate_under_null(
    pooled: &FitResult,
    table: &ObservationTable,
    stream: &mut rng::Rng,
) -> Result<ObservationTable> {
    if !pooled.converged {
        return Err(Error::NotConverged("pooled fit is needed to simulate the null".into()));
    }
    let spec = pooled
        .spec
        .as_ref()
        .ok_or_else(|| Error::Config("fit carries no model spec".into()))?;
    let design = build_design(table, spec)?;
    let outcome = Sampler::new(&design, &pooled.theta_hat)?.outcome(stream)?;
    let outcome = match (outcome, table.outcome()) {
        // Keep the table's own label order; the design uses the spec order.
        (
            crate::dataset::Outcome::Severity { codes, .. },
            crate::dataset::Outcome::Severity { labels, .. },
        ) => {
            let map: Vec<usize> = design
                .outcome_labels()
                .iter()
                .map(|l| labels.iter().position(|x| x == l))
                .collect::<Option<_>>()
                .map_or_else(
                    || Err(Error::Config("table lacks a model outcome label".into())),
                    Ok,
                )?;
            crate::dataset::Outcome::Severity {
                labels: labels.clone(),
                codes: codes.into_iter().map(|c| map[c]).collect(),
            }
        }
        (o, _) => o,
    };
    table.with_outcome(outcome)
}

struct Fits {
    all: FitResult,
    a: FitResult,
    b: FitResult,
}

fn fit_three(
    table: &ObservationTable,
    parts: &(ObservationTable, ObservationTable),
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<Fits> {
    Ok(Fits {
        all: fit(table, spec, opts)?,
        a: fit(&parts.0, spec, opts)?,
        b: fit(&parts.1, spec, opts)?,
    })
}

/// Pooled versus split likelihood-ratio test, with an optional Monte-Carlo
/// null distribution from `mc.replicates` parametric-bootstrap datasets.
pub fn mc_null_distribution(
    table: &ObservationTable,
    spec: &ModelSpec,
    flag_column: &str,
    opts: &FitOptions,
    mc: &McOptions,
) -> Result<LrTestResult> {
    if mc.replicates > 0 && mc.replicates < MIN_REPLICATES {
        return Err(Error::Config(format!(
            "at least {MIN_REPLICATES} Monte-Carlo replicates are required, got {}",
            mc.replicates
        )));
    }
    let parts = table.split_by_flag(flag_column)?;
    if parts.0.n_rows() == 0 || parts.1.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let observed = fit_three(table, &parts, spec, opts)?;
    let p = spec.n_params();
    let (x2, dof) = lr_statistic(
        observed.all.ll_converged,
        observed.a.ll_converged,
        observed.b.ll_converged,
        p,
        p,
        p,
    )?;
    let mut warnings = Vec::new();
    let raw = -2.0 * (observed.all.ll_converged - observed.a.ll_converged - observed.b.ll_converged);
    if raw < 0.0 {
        let msg = format!("negative likelihood-ratio statistic {raw:.3e} clamped to 0");
        log::warn!("{msg}");
        warnings.push(if raw < -NEGATIVE_TOLERANCE {
            format!("{msg}; exceeds optimizer tolerance, check convergence")
        } else {
            msg
        });
    }
    let converged = observed.all.converged && observed.a.converged && observed.b.converged;
    if !converged {
        warnings.push("an observed-data fit did not converge".into());
    }
    let mut result = LrTestResult {
        x2,
        dof,
        p_asymptotic: chi2_sf(x2, dof as f64)?,
        ll_all: observed.all.ll_converged,
        ll_a: observed.a.ll_converged,
        ll_b: observed.b.ll_converged,
        params_all: p,
        params_a: p,
        params_b: p,
        n_a: parts.0.n_rows(),
        n_b: parts.1.n_rows(),
        converged,
        p_mc: None,
        bias_corrected: mc.bias_corrected,
        null_histogram: None,
        null_statistics: Vec::new(),
        replicates: mc.replicates,
        failed_replicates: 0,
        seed: mc.seed,
        warnings,
    };
    if mc.replicates == 0 {
        return Ok(result);
    }

    let pooled = &observed.all;
    let refit = FitOptions {
        start: Some(pooled.theta_raw.clone()),
        covariance: false,
        restricted: false,
        ..opts.clone()
    };
    let sims: Vec<Option<f64>> = (0..mc.replicates)
        .into_par_iter()
        .map(|i| replicate(pooled, table, flag_column, spec, &refit, mc.seed, i as u64))
        .collect();
    let stats: Vec<f64> = sims.iter().flatten().copied().collect();
    let failed = mc.replicates - stats.len();
    if failed as f64 > MAX_FAILURE_SHARE * mc.replicates as f64 {
        return Err(Error::ReplicateFailures {
            failed,
            total: mc.replicates,
        });
    }
    if failed > 0 {
        result
            .warnings
            .push(format!("{failed} of {} replicates dropped (non-converged refit)", mc.replicates));
    }
    let k = stats.iter().filter(|&&s| s >= x2).count() as f64;
    let r = stats.len() as f64;
    result.p_mc = Some(if mc.bias_corrected {
        (k + 1.0) / (r + 1.0)
    } else {
        k / r
    });
    result.null_histogram = Some(Histogram::over_zero_to_max(&stats, mc.bins)?);
    result.null_statistics = stats;
    result.failed_replicates = failed;
    Ok(result)
}

/// One bootstrap replicate: simulate under the pooled fit and refit all
/// three models. `None` when any refit fails or does not converge.
fn replicate(
    pooled: &FitResult,
    table: &ObservationTable,
    flag_column: &str,
    spec: &ModelSpec,
    opts: &FitOptions,
    seed: u64,
    index: u64,
) -> Option<f64> {
    let mut stream = rng::stream(seed, index);
    let synthetic = simulate_under_null(pooled, table, &mut stream).ok()?;
    let parts = synthetic.split_by_flag(flag_column).ok()?;
    let fits = fit_three(&synthetic, &parts, spec, opts).ok()?;
    if !(fits.all.converged && fits.a.converged && fits.b.converged) {
        return None;
    }
    let x2 = -2.0 * (fits.all.ll_converged - fits.a.ll_converged - fits.b.ll_converged);
    x2.is_finite().then_some(x2.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Adaptive Simpson integration of the χ² density.
    fn simpson_sf(x: f64, k: f64) -> f64 {
        let ln_norm = -(k / 2.0) * 2f64.ln() - crate::special::ln_gamma(k / 2.0);
        let pdf = |t: f64| {
            if t <= 0.0 {
                if k < 2.0 {
                    f64::INFINITY
                } else if k == 2.0 {
                    0.5
                } else {
                    0.0
                }
            } else {
                (ln_norm + (k / 2.0 - 1.0) * t.ln() - t / 2.0).exp()
            }
        };
        fn adapt(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, eps: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() <= 15.0 * eps {
                return left + right + (left + right - whole) / 15.0;
            }
            adapt(f, a, m, fa, flm, fm, left, eps / 2.0, depth - 1)
                + adapt(f, m, b, fm, frm, fb, right, eps / 2.0, depth - 1)
        }
        let integrate = |a: f64, b: f64| {
            let m = 0.5 * (a + b);
            let (fa, fm, fb) = (pdf(a), pdf(m), pdf(b));
            let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
            adapt(&pdf, a, b, fa, fm, fb, whole, 1e-13, 50)
        };
        // Upper tail integrated over [x, x + 400] in unit-ish panels.
        let mut total = 0.0;
        let mut a = x;
        while a < x + k + 400.0 {
            let b = a + 2.0;
            total += integrate(a, b);
            a = b;
        }
        total
    }

    #[test]
    fn statistic_by_hand() {
        let (x2, dof) = lr_statistic(-100.0, -60.0, -38.0, 10, 10, 10).unwrap();
        assert!((x2 - 4.0).abs() < 1e-12);
        assert_eq!(dof, 10);
        let (x2, _) = lr_statistic(-98.0, -60.0, -38.0, 10, 10, 10).unwrap();
        assert_eq!(x2, 0.0);
        assert!(lr_statistic(-1.0, -1.0, -1.0, 10, 5, 5).is_err());
        let (x2, _) = lr_statistic(-98.00001, -60.0, -38.0, 3, 3, 3).unwrap();
        assert!(x2 >= 0.0);
    }

    #[test]
    fn survival_matches_simpson_oracle() {
        for &k in &[1.0, 2.0, 3.0, 5.0, 10.0, 21.0, 40.0] {
            for &x in &[0.5, 1.0, 3.0, 7.5, 15.0, 27.21, 40.0] {
                let a = chi2_sf(x, k).unwrap();
                let b = simpson_sf(x, k);
                assert!((a - b).abs() < 1e-8, "k={k} x={x}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn survival_edges_and_monotonicity() {
        assert_eq!(chi2_sf(0.0, 4.0).unwrap(), 1.0);
        assert!(chi2_sf(-1.0, 4.0).is_err());
        assert!(chi2_sf(1.0, 0.0).is_err());
        let mut prev = 1.0;
        for i in 1..200 {
            let p = chi2_sf(i as f64 * 0.25, 7.0).unwrap();
            assert!(p <= prev && (0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn quantile_round_trip() {
        use rand::RngCore;
        let mut r = rng::seeded(1);
        for _ in 0..200 {
            let p = rng::open01(&mut r).clamp(1e-6, 1.0 - 1e-6);
            let d = 1 + (r.next_u64() % 60) as usize;
            let q = chi2_quantile(p, d as f64).unwrap();
            let back = chi2_sf(q, d as f64).unwrap();
            assert!((back - (1.0 - p)).abs() < 1e-8, "p={p} d={d}");
        }
        assert!(chi2_quantile(0.0, 3.0).is_err());
        assert!(chi2_quantile(1.0, 3.0).is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = Histogram::over_zero_to_max(&[0.0, 0.5, 1.0, 2.0, 2.0], 4).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 5);
        assert_eq!(h.edges.len(), 5);
        assert_eq!(*h.edges.last().unwrap(), 2.0);
        assert_eq!(h.counts[3], 2);
    }
}
