//! Multinomial logit severity model, fixed or with random coefficients.

use crate::dataset::ObservationTable;
use crate::design::{DesignMatrix, Response};
use crate::effects::{self, EffectsReport};
use crate::error::{Error, Result};
use crate::fit::{self, FitOptions};
use crate::mixed::{softmax, DrawMatrix};
use crate::mle::{FitResult, Objective, RowModel, RowSum};
use crate::spec::{Family, ModelSpec};

/// Outcome probabilities of `row` at `theta` (locations only for random
/// terms).
pub fn mnl_prob(theta: &[f64], design: &DesignMatrix, row: usize) -> Result<Vec<f64>> {
    design.check_theta(theta)?;
    let mut coefs = vec![0.0; design.terms().len()];
    design.term_coefficients(theta, None, &mut coefs);
    let mut p = vec![0.0; design.n_outcomes()];
    design.predictors(&coefs, row, None, &mut p);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("linear predictor in row {row}")));
    }
    softmax(&mut p);
    Ok(p)
}

/// Row likelihood of a (mixed) logit. With draws, each row's probability is
/// the draw average `P̃ = (1/R) Σ_r P_r`.
pub struct SeverityModel<'a> {
    design: &'a DesignMatrix,
    draws: Option<&'a DrawMatrix>,
    codes: &'a [usize],
}

pub struct SeverityScratch {
    coefs: Vec<f64>,
    p: Vec<f64>,
    acc: Vec<f64>,
}

impl<'a> SeverityModel<'a> {
    pub fn new(design: &'a DesignMatrix, draws: Option<&'a DrawMatrix>) -> Result<Self> {
        let codes = match design.response() {
            Response::Codes(c) => c,
            Response::Counts(_) => {
                return Err(Error::InvalidSpec("logit model needs severity outcomes".into()))
            }
        };
        if design.n_random() > 0 && draws.is_none() {
            return Err(Error::Config("random coefficients need simulation draws".into()));
        }
        Ok(SeverityModel {
            design,
            draws: draws.filter(|_| design.n_random() > 0),
            codes,
        })
    }
}

impl RowModel for SeverityModel<'_> {
    type Scratch = SeverityScratch;

    fn dim(&self) -> usize {
        self.design.n_params()
    }

    fn n_rows(&self) -> usize {
        self.design.n_rows()
    }

    fn scratch(&self) -> SeverityScratch {
        SeverityScratch {
            coefs: vec![0.0; self.design.terms().len()],
            p: vec![0.0; self.design.n_outcomes()],
            acc: vec![0.0; self.design.n_params()],
        }
    }

    fn row(&self, theta: &[f64], row: usize, s: &mut SeverityScratch, grad: &mut [f64]) -> f64 {
        let d = self.design;
        let y = self.codes[row];
        let xs = d.row(row);
        match self.draws {
            None => {
                d.term_coefficients(theta, None, &mut s.coefs);
                d.predictors(&s.coefs, row, None, &mut s.p);
                softmax(&mut s.p);
                for t in d.terms() {
                    let q: f64 = t
                        .outcomes
                        .iter()
                        .map(|&o| if o == y { 1.0 - s.p[o] } else { -s.p[o] })
                        .sum();
                    grad[t.loc] += xs[t.var] * q;
                }
                s.p[y].ln()
            }
            Some(draws) => {
                s.acc.iter_mut().for_each(|a| *a = 0.0);
                let mut total = 0.0;
                let r_count = draws.n_draws();
                for r in 0..r_count {
                    let e = draws.draw(row, r);
                    d.term_coefficients(theta, Some(e), &mut s.coefs);
                    d.predictors(&s.coefs, row, None, &mut s.p);
                    softmax(&mut s.p);
                    let w = s.p[y];
                    total += w;
                    for t in d.terms() {
                        let q: f64 = t
                            .outcomes
                            .iter()
                            .map(|&o| if o == y { 1.0 - s.p[o] } else { -s.p[o] })
                            .sum();
                        let wxq = w * xs[t.var] * q;
                        s.acc[t.loc] += wxq;
                        if let (Some(sc), Some(slot)) = (t.scale, t.random_slot) {
                            s.acc[sc] += wxq * theta[sc].exp() * e[slot];
                        }
                    }
                }
                for (g, a) in grad.iter_mut().zip(&s.acc) {
                    *g += a / total;
                }
                (total / r_count as f64).ln()
            }
        }
    }
}

/// Log-likelihood of a logit design, with draws for mixed designs.
pub fn severity_objective<'a>(
    design: &'a DesignMatrix,
    draws: Option<&'a DrawMatrix>,
) -> Result<RowSum<SeverityModel<'a>>> {
    Ok(RowSum(SeverityModel::new(design, draws)?))
}

/// Log-likelihood `Σₙ ln Pₙ(observed)` and its gradient.
pub fn mnl_loglik(theta: &[f64], design: &DesignMatrix) -> Result<(f64, Vec<f64>)> {
    design.check_theta(theta)?;
    let obj = severity_objective(design, None)?;
    let mut g = vec![0.0; theta.len()];
    let ll = obj.value_grad(theta, &mut g);
    Ok((ll, g))
}

/// Simulated log-likelihood `Σₙ ln P̃ₙ(observed)` and its gradient.
pub fn simulated_loglik(
    theta: &[f64],
    design: &DesignMatrix,
    draws: &DrawMatrix,
) -> Result<(f64, Vec<f64>)> {
    design.check_theta(theta)?;
    let obj = severity_objective(design, Some(draws))?;
    let mut g = vec![0.0; theta.len()];
    let ll = obj.value_grad(theta, &mut g);
    Ok((ll, g))
}

/// Maximum likelihood for a fixed-coefficient logit severity model.
pub fn fit_mnl(table: &ObservationTable, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    if spec.family != Family::Mnl {
        return Err(Error::InvalidSpec(format!(
            "expected family mnl, got {}",
            spec.family.as_str()
        )));
    }
    fit::fit(table, spec, opts)
}

/// Averaged direct and cross elasticities for continuous variables.
pub fn elasticities(
    fit: &FitResult,
    design: &DesignMatrix,
    variables: &[String],
) -> Result<EffectsReport> {
    effects::severity_effects(design, &fit.theta_raw, None, variables, &[])
}

/// Averaged pseudo-elasticities for 0/1 indicators.
pub fn pseudo_elasticities(
    fit: &FitResult,
    design: &DesignMatrix,
    variables: &[String],
) -> Result<EffectsReport> {
    effects::severity_effects(design, &fit.theta_raw, None, &[], variables)
}
