//! Estimation entry point shared by all four families.

use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::design::{build_design, DesignMatrix, ParamRole, Response};
use crate::error::{Error, Result};
use crate::mixed::{DrawMatrix, DrawSettings, DEFAULT_DRAWS, DEFAULT_SKIP};
use crate::mle::{
    covariance, maximize, summarize, Covariance, FitResult, Maximum, Natural, Objective, OptimSettings,
    Termination,
};
use crate::mnl::severity_objective;
use crate::nb::{count_objective, intercept_only};
use crate::spec::{ModelSpec, CONSTANT};

/// Locations beyond this magnitude in an unconverged logit fit are read as
/// coefficients escaping to infinity.
const SEPARATION_BOUND: f64 = 25.0;

/// Fits ending with `ln α` below this are refined with [`POLISH_TOLERANCE`].
const POLISH_LN_ALPHA: f64 = -4.6;
const POLISH_TOLERANCE: f64 = 1e-11;

/// `α̂` below this is reported as Poisson-equivalent.
const POISSON_ALPHA: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub settings: OptimSettings,
    /// Simulation draws per observation (mixed families).
    pub draws: usize,
    pub seed: u64,
    pub halton_skip: usize,
    pub shift: bool,
    /// Starting point in optimizer coordinates (log scales, `ln α`).
    pub start: Option<Vec<f64>>,
    /// Compute the covariance matrix and standard errors.
    pub covariance: bool,
    /// Compute the restricted log-likelihood (NaN when skipped).
    pub restricted: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            settings: OptimSettings::default(),
            draws: DEFAULT_DRAWS,
            seed: 0,
            halton_skip: DEFAULT_SKIP,
            shift: false,
            start: None,
            covariance: true,
            restricted: true,
        }
    }
}

impl FitOptions {
    pub fn draw_settings(&self) -> DrawSettings {
        DrawSettings {
            count: self.draws,
            seed: self.seed,
            skip: self.halton_skip,
            shift: self.shift,
        }
    }
}

/// Log-likelihood of any family on a prepared design.
pub fn log_likelihood<'a>(
    design: &'a DesignMatrix,
    draws: Option<&'a DrawMatrix>,
) -> Result<Box<dyn Objective + 'a>> {
    Ok(match design.response() {
        Response::Codes(_) => Box::new(severity_objective(design, draws)?),
        Response::Counts(_) => Box::new(count_objective(design, draws)?),
    })
}

/// Default starting point: zeros, unit scales, and for count models the
/// constant at `ln(mean count)` with `ln α = 0`.
pub fn default_start(design: &DesignMatrix) -> Vec<f64> {
    let mut theta = vec![0.0; design.n_params()];
    if let Response::Counts(counts) = design.response() {
        let mean = counts.iter().sum::<u64>() as f64 / counts.len().max(1) as f64;
        if mean > 0.0 {
            for t in design.terms() {
                if t.variable == CONSTANT {
                    theta[t.loc] = mean.ln();
                }
            }
        }
    }
    theta
}

/// Draw matrix for a mixed design, `None` otherwise.
pub fn draws_for(design: &DesignMatrix, opts: &FitOptions) -> Result<Option<DrawMatrix>> {
    if design.family().is_mixed() {
        Ok(Some(DrawMatrix::new(design, opts.draw_settings())?))
    } else {
        Ok(None)
    }
}

/// Fit `spec` to `table`, dispatching on the spec's family.
pub fn fit(table: &ObservationTable, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    let design = build_design(table, spec)?;
    let draws = draws_for(&design, opts)?;
    fit_design(&design, draws.as_ref(), spec, opts)
}

/// Fit on a prepared design and draw matrix.
pub fn fit_design(
    design: &DesignMatrix,
    draws: Option<&DrawMatrix>,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.settings.validate()?;
    if design.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let obj = log_likelihood(design, draws)?;
    let theta0 = match &opts.start {
        Some(s) => {
            design.check_theta(s)?;
            s.clone()
        }
        None => default_start(design),
    };
    let mut max = maximize(obj.as_ref(), &theta0, &opts.settings)?;
    if let Some(a) = design.alpha_index() {
        // Near α = 0 the log-likelihood flattens like α itself, so the
        // gradient test stops short of the Poisson limit. Push on.
        if max.converged && max.theta[a] < POLISH_LN_ALPHA {
            let tight = OptimSettings {
                gradient_tolerance: opts.settings.gradient_tolerance.min(POLISH_TOLERANCE),
                ..opts.settings.clone()
            };
            let polished = maximize(obj.as_ref(), &max.theta, &tight)?;
            let met = polished.gradient_norm
                <= opts.settings.gradient_tolerance * polished.ll.abs().max(1.0);
            if polished.ll >= max.ll && met {
                max = Maximum {
                    converged: true,
                    termination: max.termination,
                    iterations: max.iterations + polished.iterations,
                    start: max.start,
                    ..polished
                };
            }
        }
    }
    let mut converged = max.converged;
    let mut termination = max.termination;
    let mut warnings = Vec::new();
    if !converged {
        warnings.push(format!(
            "optimizer stopped without meeting the gradient tolerance ({:?}, |g|={:.3e})",
            termination, max.gradient_norm
        ));
    }

    let roles = design.roles();
    if let Response::Codes(codes) = design.response() {
        let mut seen = vec![false; design.n_outcomes()];
        codes.iter().for_each(|&c| seen[c] = true);
        let missing: Vec<&str> = seen
            .iter()
            .zip(design.outcome_labels())
            .filter(|(s, _)| !**s)
            .map(|(_, l)| l.as_str())
            .collect();
        let escaping = !converged
            && max
                .theta
                .iter()
                .zip(&roles)
                .any(|(v, r)| *r == ParamRole::Location && v.abs() > SEPARATION_BOUND);
        if !missing.is_empty() || escaping {
            converged = false;
            termination = Termination::Separation;
            let what = if missing.is_empty() {
                "coefficients diverging".to_string()
            } else {
                format!("outcome(s) never observed: {}", missing.join(", "))
            };
            warnings.push(format!("separation: {what}; estimates are not finite"));
        }
    }

    let natural = Natural::new(obj.as_ref(), &roles);
    let theta_hat = natural.from_raw(&max.theta);
    let cov = if opts.covariance {
        covariance(&natural, &theta_hat, &opts.settings, Some(natural.positive()))
    } else {
        Covariance::not_computed(theta_hat.len())
    };

    let ll_restricted = if !opts.restricted {
        f64::NAN
    } else {
        match design.response() {
            Response::Codes(_) => {
                design.n_rows() as f64 * (1.0 / design.n_outcomes() as f64).ln()
            }
            Response::Counts(counts) => intercept_only(counts, &opts.settings)?.0,
        }
    };

    let mut result = summarize(&theta_hat, &cov, max.ll, ll_restricted)?;
    if let Some(a) = design.alpha_index() {
        if theta_hat[a] < POISSON_ALPHA {
            warnings.push(format!(
                "overdispersion {:.3e} is at the boundary: the model is Poisson-equivalent",
                theta_hat[a]
            ));
        }
    }
    result.warnings.extend(warnings);
    result.family = Some(spec.family);
    result.spec = Some(spec.clone());
    result.labels = design.param_labels();
    result.roles = roles;
    result.theta_raw = max.theta;
    result.n_obs = design.n_rows();
    result.converged = converged;
    result.iterations = max.iterations;
    result.termination = termination;
    result.draws = draws.map(|d| d.settings());
    for w in &result.warnings {
        log::warn!("{w}");
    }
    Ok(result)
}

/// Log-likelihood of a finished fit re-evaluated on `design`.
pub fn evaluate(design: &DesignMatrix, draws: Option<&DrawMatrix>, theta_raw: &[f64]) -> Result<f64> {
    design.check_theta(theta_raw)?;
    let ll = log_likelihood(design, draws)?.value(theta_raw);
    if !ll.is_finite() {
        return Err(Error::NonFinite("log-likelihood".into()));
    }
    Ok(ll)
}
