//! Design matrices: packed parameter layout and linear predictors.
//!
//! Parameters are packed in term order. A fixed term owns one slot (its
//! coefficient); a random term owns two, the location followed by the log
//! of its scale. Count families append `ln α` as the final slot.

use serde::{Deserialize, Serialize};

use crate::dataset::{Mode, ObservationTable, Outcome};
use crate::error::{Error, Result};
use crate::spec::{CoefKind, Family, ModelSpec, CONSTANT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    /// Fixed coefficient or location of a random coefficient.
    Location,
    /// `ln s` for a random coefficient.
    LogScale,
    /// `ln α` of a count model.
    LogAlpha,
}

impl ParamRole {
    /// Estimated on a log scale and reported as `exp` of the raw value.
    pub fn is_log(self) -> bool {
        !matches!(self, ParamRole::Location)
    }
}

#[derive(Debug, Clone)]
pub struct TermLayout {
    pub variable: String,
    /// Index into [`DesignMatrix::variables`].
    pub var: usize,
    /// Outcome indices sharing the coefficient (`[0]` for count models).
    pub outcomes: Vec<usize>,
    pub kind: CoefKind,
    pub loc: usize,
    pub scale: Option<usize>,
    /// Position among the random terms, indexing simulation draws.
    pub random_slot: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum Response {
    Codes(Vec<usize>),
    Counts(Vec<u64>),
}

/// Override of one variable in selected equations, used for elasticities.
#[derive(Debug, Clone, Copy)]
pub struct Perturb {
    pub var: usize,
    /// Equation receiving the override; `None` means every equation.
    pub outcome: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    family: Family,
    outcome_labels: Vec<String>,
    base: usize,
    variables: Vec<String>,
    x: Vec<f64>,
    n_rows: usize,
    terms: Vec<TermLayout>,
    n_params: usize,
    alpha: Option<usize>,
    n_random: usize,
    response: Response,
    row_ids: Vec<usize>,
}

/// Build the design for `spec` over `table`.
pub fn build_design(table: &ObservationTable, spec: &ModelSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    if table.mode() != spec.mode() {
        return Err(Error::InvalidSpec(format!(
            "{} model needs {:?} data",
            spec.family.as_str(),
            spec.mode()
        )));
    }
    let mut variables: Vec<String> = Vec::new();
    let mut columns: Vec<Option<&[f64]>> = Vec::new();
    let mut terms = Vec::with_capacity(spec.terms.len());
    let mut next = 0usize;
    let mut n_random = 0usize;
    for term in &spec.terms {
        let var = match variables.iter().position(|v| *v == term.variable) {
            Some(i) => i,
            None => {
                let col = if term.variable == CONSTANT {
                    None
                } else {
                    Some(
                        table
                            .column(&term.variable)
                            .ok_or_else(|| Error::UnknownVariable(term.variable.clone()))?,
                    )
                };
                variables.push(term.variable.clone());
                columns.push(col);
                variables.len() - 1
            }
        };
        let outcomes = match spec.mode() {
            Mode::Severity => term
                .outcomes
                .iter()
                .map(|o| spec.outcomes.iter().position(|s| s == o).expect("validated"))
                .collect(),
            Mode::Frequency => vec![0],
        };
        let loc = next;
        next += 1;
        let (scale, random_slot) = if term.kind.is_random() {
            next += 1;
            n_random += 1;
            (Some(loc + 1), Some(n_random - 1))
        } else {
            (None, None)
        };
        terms.push(TermLayout {
            variable: term.variable.clone(),
            var,
            outcomes,
            kind: term.kind,
            loc,
            scale,
            random_slot,
        });
    }
    let alpha = match spec.mode() {
        Mode::Frequency => {
            next += 1;
            Some(next - 1)
        }
        Mode::Severity => None,
    };

    let n_rows = table.n_rows();
    let n_vars = variables.len();
    let mut x = vec![0.0; n_rows * n_vars];
    for (v, col) in columns.iter().enumerate() {
        for r in 0..n_rows {
            x[r * n_vars + v] = match col {
                Some(c) => c[r],
                None => 1.0,
            };
        }
    }

    let (outcome_labels, base, response) = match table.outcome() {
        Outcome::Severity { labels, codes } => {
            let map: Vec<usize> = labels
                .iter()
                .map(|l| {
                    spec.outcomes
                        .iter()
                        .position(|s| s == l)
                        .ok_or_else(|| Error::UnknownOutcome {
                            label: l.clone(),
                            row: 0,
                        })
                })
                .collect::<Result<_>>()?;
            let base_label = spec.base_outcome.as_ref().expect("validated");
            let base = spec.outcomes.iter().position(|s| s == base_label).expect("validated");
            (
                spec.outcomes.clone(),
                base,
                Response::Codes(codes.iter().map(|&c| map[c]).collect()),
            )
        }
        Outcome::Frequency { counts } => (Vec::new(), 0, Response::Counts(counts.clone())),
    };

    Ok(DesignMatrix {
        family: spec.family,
        outcome_labels,
        base,
        variables,
        x,
        n_rows,
        terms,
        n_params: next,
        alpha,
        n_random,
        response,
        row_ids: table.row_ids().to_vec(),
    })
}

impl DesignMatrix {
    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Number of outcome equations (1 for count models).
    pub fn n_outcomes(&self) -> usize {
        self.outcome_labels.len().max(1)
    }

    pub fn outcome_labels(&self) -> &[String] {
        &self.outcome_labels
    }

    pub fn base_outcome(&self) -> usize {
        self.base
    }

    pub fn terms(&self) -> &[TermLayout] {
        &self.terms
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    pub fn n_random(&self) -> usize {
        self.n_random
    }

    pub fn alpha_index(&self) -> Option<usize> {
        self.alpha
    }

    pub fn response(&self) -> &Response {
        &self.response
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    #[inline]
    pub fn x(&self, row: usize, var: usize) -> f64 {
        self.x[row * self.variables.len() + var]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let k = self.variables.len();
        &self.x[row * k..(row + 1) * k]
    }

    pub fn roles(&self) -> Vec<ParamRole> {
        let mut roles = vec![ParamRole::Location; self.n_params];
        for t in &self.terms {
            if let Some(s) = t.scale {
                roles[s] = ParamRole::LogScale;
            }
        }
        if let Some(a) = self.alpha {
            roles[a] = ParamRole::LogAlpha;
        }
        roles
    }

    /// Human-readable name for each packed parameter.
    pub fn param_labels(&self) -> Vec<String> {
        let mut labels = vec![String::new(); self.n_params];
        for t in &self.terms {
            let outs = if self.outcome_labels.is_empty() {
                String::new()
            } else {
                let names: Vec<&str> = t
                    .outcomes
                    .iter()
                    .map(|&o| self.outcome_labels[o].as_str())
                    .collect();
                format!(" [{}]", names.join(","))
            };
            labels[t.loc] = format!("{}{}", t.variable, outs);
            if let Some(s) = t.scale {
                let what = match t.kind {
                    CoefKind::RandomUniform => "spread",
                    _ => "sd",
                };
                labels[s] = format!("{}({}){}", what, t.variable, outs);
            }
        }
        if let Some(a) = self.alpha {
            labels[a] = "alpha".to_string();
        }
        labels
    }

    /// Coefficient of every term for one simulation draw. `draw` holds the
    /// standardized draw per random slot (`None` → locations only).
    pub fn term_coefficients(&self, theta: &[f64], draw: Option<&[f64]>, out: &mut [f64]) {
        for (t, c) in self.terms.iter().zip(out.iter_mut()) {
            *c = theta[t.loc];
            if let (Some(s), Some(slot), Some(d)) = (t.scale, t.random_slot, draw) {
                *c += theta[s].exp() * d[slot];
            }
        }
    }

    /// Linear predictors of every outcome for `row`. The base outcome's
    /// predictor is exactly zero.
    pub fn predictors(&self, coefs: &[f64], row: usize, perturb: Option<&Perturb>, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let xs = self.row(row);
        for (t, &c) in self.terms.iter().zip(coefs) {
            let xv = xs[t.var];
            for &o in &t.outcomes {
                let xv = match perturb {
                    Some(p) if p.var == t.var && p.outcome.is_none_or(|po| po == o) => p.value,
                    _ => xv,
                };
                out[o] += c * xv;
            }
        }
    }

    pub fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params {
            return Err(Error::Dimension {
                expected: self.n_params,
                got: theta.len(),
            });
        }
        Ok(())
    }
}
