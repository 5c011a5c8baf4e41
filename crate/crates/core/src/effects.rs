//! Averaged elasticities, pseudo-elasticities and marginal effects.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::design::{DesignMatrix, Perturb};
use crate::error::{Error, Result};
use crate::mixed::{softmax, DrawMatrix};
use crate::spec::{Family, CONSTANT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectKind {
    Elasticity,
    PseudoElasticity,
    MarginalEffect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEntry {
    pub variable: String,
    pub kind: EffectKind,
    /// Equation whose copy of the variable changes.
    pub x_outcome: Option<String>,
    /// Outcome whose probability responds.
    pub p_outcome: Option<String>,
    pub value: f64,
    /// Direct (`x_outcome == p_outcome`) or cross effect.
    pub direct: Option<bool>,
    /// `|value| >= 1`.
    pub elastic: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectsReport {
    pub family: Family,
    pub n_obs: usize,
    pub entries: Vec<EffectEntry>,
}

impl EffectsReport {
    pub fn find(&self, variable: &str, x_outcome: &str, p_outcome: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| {
                e.variable == variable
                    && e.x_outcome.as_deref() == Some(x_outcome)
                    && e.p_outcome.as_deref() == Some(p_outcome)
            })
            .map(|e| e.value)
    }

    pub fn marginal(&self, variable: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.variable == variable && e.kind == EffectKind::MarginalEffect)
            .map(|e| e.value)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "variable", "kind", "x_outcome", "p_outcome", "value", "direct", "elastic",
        ])?;
        for e in &self.entries {
            let kind = match e.kind {
                EffectKind::Elasticity => "elasticity",
                EffectKind::PseudoElasticity => "pseudo_elasticity",
                EffectKind::MarginalEffect => "marginal_effect",
            };
            let flag = |b: Option<bool>| b.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                e.variable.as_str(),
                kind,
                e.x_outcome.as_deref().unwrap_or(""),
                e.p_outcome.as_deref().unwrap_or(""),
                &format!("{}", e.value),
                &flag(e.direct),
                &flag(e.elastic),
            ])?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }
}

/// Evaluates (simulated) logit probabilities row by row. Without draws it
/// is the plain logit model with a single "draw" at the locations.
pub(crate) struct Simulator<'a> {
    design: &'a DesignMatrix,
    theta: &'a [f64],
    draws: Option<&'a DrawMatrix>,
}

impl<'a> Simulator<'a> {
    pub(crate) fn new(
        design: &'a DesignMatrix,
        theta: &'a [f64],
        draws: Option<&'a DrawMatrix>,
    ) -> Self {
        Simulator {
            design,
            theta,
            draws,
        }
    }

    fn n_draws(&self) -> usize {
        self.draws.map_or(1, |d| d.n_draws())
    }

    /// Calls `f(probabilities, term coefficients)` once per draw.
    pub(crate) fn for_each_draw(
        &self,
        row: usize,
        perturb: Option<&Perturb>,
        mut f: impl FnMut(&[f64], &[f64]),
    ) {
        let mut coefs = vec![0.0; self.design.terms().len()];
        let mut p = vec![0.0; self.design.n_outcomes()];
        for r in 0..self.n_draws() {
            let d = self.draws.map(|d| d.draw(row, r));
            self.design.term_coefficients(self.theta, d, &mut coefs);
            self.design.predictors(&coefs, row, perturb, &mut p);
            softmax(&mut p);
            f(&p, &coefs);
        }
    }

    pub(crate) fn probabilities(&self, row: usize, perturb: Option<&Perturb>) -> Vec<f64> {
        let mut acc = vec![0.0; self.design.n_outcomes()];
        self.for_each_draw(row, perturb, |p, _| {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        });
        let r = self.n_draws() as f64;
        acc.iter_mut().for_each(|a| *a /= r);
        acc
    }

    /// Elasticity of every outcome probability with respect to the copy of
    /// variable `var` entering equation `eq`, for one row:
    /// `x / P̃ᵢ · mean_r[ Pᵢᵣ (δᵢⱼ − Pⱼᵣ) βⱼᵣ ]`.
    pub(crate) fn row_elasticities(&self, row: usize, var: usize, eq: usize) -> Vec<f64> {
        let n_out = self.design.n_outcomes();
        let mut deriv = vec![0.0; n_out];
        let mut pbar = vec![0.0; n_out];
        let terms = self.design.terms();
        self.for_each_draw(row, None, |p, coefs| {
            let beta: f64 = terms
                .iter()
                .zip(coefs)
                .filter(|(t, _)| t.var == var && t.outcomes.contains(&eq))
                .map(|(_, c)| c)
                .sum();
            for i in 0..n_out {
                let delta = if i == eq { 1.0 } else { 0.0 };
                deriv[i] += p[i] * (delta - p[eq]) * beta;
                pbar[i] += p[i];
            }
        });
        let x = self.design.x(row, var);
        deriv
            .iter()
            .zip(&pbar)
            .map(|(d, pb)| x * d / pb)
            .collect()
    }
}

fn equations_of(design: &DesignMatrix, var: usize) -> Vec<usize> {
    let mut eqs: Vec<usize> = design
        .terms()
        .iter()
        .filter(|t| t.var == var)
        .flat_map(|t| t.outcomes.iter().copied())
        .collect();
    eqs.sort_unstable();
    eqs.dedup();
    eqs
}

pub(crate) fn lookup_variable(design: &DesignMatrix, name: &str) -> Result<usize> {
    if name == CONSTANT {
        return Err(Error::VariableKind {
            variable: name.to_string(),
            problem: "the constant; effects are defined for covariates only".into(),
        });
    }
    design
        .variable_index(name)
        .ok_or_else(|| Error::VariableNotInModel(name.to_string()))
}

fn is_binary(design: &DesignMatrix, var: usize) -> bool {
    (0..design.n_rows()).all(|r| {
        let v = design.x(r, var);
        v == 0.0 || v == 1.0
    })
}

/// Averaged elasticities (continuous variables) and pseudo-elasticities
/// (0/1 indicators) of a severity model, with or without simulation draws.
pub fn severity_effects(
    design: &DesignMatrix,
    theta: &[f64],
    draws: Option<&DrawMatrix>,
    continuous: &[String],
    indicators: &[String],
) -> Result<EffectsReport> {
    design.check_theta(theta)?;
    let n = design.n_rows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let labels = design.outcome_labels();
    if labels.is_empty() {
        return Err(Error::Config("elasticities apply to severity models".into()));
    }
    let n_out = design.n_outcomes();
    let sim = Simulator::new(design, theta, draws);
    let mut entries = Vec::new();
    let mut push = |variable: &str, kind, j: usize, i: usize, value: f64| {
        entries.push(EffectEntry {
            variable: variable.to_string(),
            kind,
            x_outcome: Some(labels[j].clone()),
            p_outcome: Some(labels[i].clone()),
            value,
            direct: Some(i == j),
            elastic: Some(value.abs() >= 1.0),
        });
    };

    for name in continuous {
        let var = lookup_variable(design, name)?;
        if is_binary(design, var) {
            return Err(Error::VariableKind {
                variable: name.clone(),
                problem: "a 0/1 indicator; use pseudo-elasticities".into(),
            });
        }
        for j in equations_of(design, var) {
            let mut sum = vec![0.0; n_out];
            for row in 0..n {
                for (s, e) in sum.iter_mut().zip(sim.row_elasticities(row, var, j)) {
                    *s += e;
                }
            }
            for (i, s) in sum.iter().enumerate() {
                push(name, EffectKind::Elasticity, j, i, s / n as f64);
            }
        }
    }

    for name in indicators {
        let var = lookup_variable(design, name)?;
        if !is_binary(design, var) {
            return Err(Error::VariableKind {
                variable: name.clone(),
                problem: "not a 0/1 indicator".into(),
            });
        }
        for j in equations_of(design, var) {
            let mut sum = vec![0.0; n_out];
            for row in 0..n {
                let at = |value| {
                    sim.probabilities(
                        row,
                        Some(&Perturb {
                            var,
                            outcome: Some(j),
                            value,
                        }),
                    )
                };
                let (p1, p0) = (at(1.0), at(0.0));
                let observed = sim.probabilities(row, None);
                for i in 0..n_out {
                    sum[i] += (p1[i] - p0[i]) / observed[i];
                }
            }
            for (i, s) in sum.iter().enumerate() {
                push(name, EffectKind::PseudoElasticity, j, i, s / n as f64);
            }
        }
    }

    Ok(EffectsReport {
        family: design.family(),
        n_obs: n,
        entries,
    })
}

/// Per-row elasticities of every outcome probability with respect to the
/// copy of `variable` in equation `eq` (before averaging).
pub fn row_elasticities(
    design: &DesignMatrix,
    theta: &[f64],
    draws: Option<&DrawMatrix>,
    row: usize,
    variable: &str,
    eq: usize,
) -> Result<Vec<f64>> {
    design.check_theta(theta)?;
    let var = lookup_variable(design, variable)?;
    Ok(Simulator::new(design, theta, draws).row_elasticities(row, var, eq))
}

/// Outcome probabilities of `row` with `variable` in equation `eq` (or every
/// equation when `None`) set to `value`.
pub fn perturbed_probabilities(
    design: &DesignMatrix,
    theta: &[f64],
    draws: Option<&DrawMatrix>,
    row: usize,
    variable: &str,
    eq: Option<usize>,
    value: f64,
) -> Result<Vec<f64>> {
    design.check_theta(theta)?;
    let var = design
        .variable_index(variable)
        .ok_or_else(|| Error::VariableNotInModel(variable.to_string()))?;
    Ok(Simulator::new(design, theta, draws).probabilities(
        row,
        Some(&Perturb {
            var,
            outcome: eq,
            value,
        }),
    ))
}
