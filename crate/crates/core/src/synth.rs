//! Known-parameter data-generating processes.
//!
//! A generator draws from a single xoshiro256** stream seeded by the config
//! seed: first every covariate, row by row in recipe order, then each row's
//! random coefficients and outcome. A random term whose true scale is zero
//! consumes no draw, so a mixed config with all scales at zero reproduces
//! the fixed-coefficient table bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use rand::RngCore;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{Mode, ObservationTable, Outcome};
use crate::design::{build_design, DesignMatrix, ParamRole};
use crate::error::{Error, Result};
use crate::mixed::softmax;
use crate::rng;
use crate::spec::{CoefKind, Family, ModelSpec, CONSTANT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum Recipe {
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
    Bernoulli { p: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    #[serde(flatten)]
    pub recipe: Recipe,
}

impl Covariate {
    pub fn new(name: &str, recipe: Recipe) -> Self {
        Covariate {
            name: name.to_string(),
            recipe,
        }
    }
}

/// Cap applied to a distance covariate inside the true linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceDgp {
    pub distance_column: String,
    pub true_d: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub spec: ModelSpec,
    /// True values keyed by parameter label (`x [a,b]`, `sd(x) [b]`,
    /// `alpha`, ...), in natural units: scales and α as positive numbers.
    pub true_params: BTreeMap<String, f64>,
    pub covariates: Vec<Covariate>,
    pub n: usize,
    pub seed: u64,
    #[serde(default)]
    pub influence: Option<InfluenceDgp>,
}

impl DgpConfig {
    /// Config from a parameter vector in packing order.
    pub fn from_vector(
        spec: ModelSpec,
        theta: &[f64],
        covariates: Vec<Covariate>,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        let labels = labels_for(&spec, &covariates)?;
        if labels.len() != theta.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: theta.len(),
            });
        }
        Ok(DgpConfig {
            spec,
            true_params: labels.into_iter().zip(theta.iter().copied()).collect(),
            covariates,
            n,
            seed,
            influence: None,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// True parameters in packing order (natural units).
    pub fn theta(&self) -> Result<Vec<f64>> {
        let labels = labels_for(&self.spec, &self.covariates)?;
        for name in self.true_params.keys() {
            if !labels.contains(name) {
                return Err(Error::Config(format!("true parameter `{name}` is not in the model")));
            }
        }
        labels
            .iter()
            .map(|l| {
                self.true_params
                    .get(l)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no true value for parameter `{l}`")))
            })
            .collect()
    }

    fn validate(&self) -> Result<Vec<f64>> {
        self.spec.validate()?;
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        let theta = self.theta()?;
        let roles = self.probe_design()?.roles();
        for (v, r) in theta.iter().zip(&roles) {
            let ok = match r {
                ParamRole::Location => v.is_finite(),
                ParamRole::LogScale => v.is_finite() && *v >= 0.0,
                ParamRole::LogAlpha => v.is_finite() && *v > 0.0,
            };
            if !ok {
                return Err(Error::Config(format!("invalid true value {v} for a {r:?} parameter")));
            }
        }
        for c in &self.covariates {
            let ok = match c.recipe {
                Recipe::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd >= 0.0,
                Recipe::Uniform { low, high } => low.is_finite() && high.is_finite() && low <= high,
                Recipe::Bernoulli { p } => (0.0..=1.0).contains(&p),
                Recipe::Constant { value } => value.is_finite(),
            };
            if !ok || c.name == CONSTANT {
                return Err(Error::Config(format!("invalid covariate recipe `{}`", c.name)));
            }
        }
        Ok(theta)
    }

    fn probe_design(&self) -> Result<DesignMatrix> {
        build_design(&placeholder_table(&self.spec, &self.covariates, 1)?, &self.spec)
    }
}

fn placeholder_table(spec: &ModelSpec, covariates: &[Covariate], n: usize) -> Result<ObservationTable> {
    let columns = covariates
        .iter()
        .map(|c| (c.name.clone(), vec![0.0; n]))
        .collect();
    ObservationTable::new(columns, &spec.outcome_column, empty_outcome(spec, n))
}

fn empty_outcome(spec: &ModelSpec, n: usize) -> Outcome {
    match spec.mode() {
        Mode::Severity => Outcome::Severity {
            labels: spec.outcomes.clone(),
            codes: vec![0; n],
        },
        Mode::Frequency => Outcome::Frequency { counts: vec![0; n] },
    }
}

fn labels_for(spec: &ModelSpec, covariates: &[Covariate]) -> Result<Vec<String>> {
    Ok(build_design(&placeholder_table(spec, covariates, 1)?, spec)?.param_labels())
}

fn draw_covariate<R: RngCore>(recipe: &Recipe, rng: &mut R) -> f64 {
    match *recipe {
        Recipe::Normal { mean, sd } => mean + sd * rng::std_normal(rng),
        Recipe::Uniform { low, high } => low + (high - low) * rng::open01(rng),
        Recipe::Bernoulli { p } => {
            if rng::open01(rng) < p {
                1.0
            } else {
                0.0
            }
        }
        Recipe::Constant { value } => value,
    }
}

/// Draws outcomes from a design at natural-unit parameters.
pub(crate) struct Sampler<'a> {
    design: &'a DesignMatrix,
    theta: &'a [f64],
    coefs: Vec<f64>,
    eta: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub(crate) fn new(design: &'a DesignMatrix, theta: &'a [f64]) -> Result<Self> {
        design.check_theta(theta)?;
        Ok(Sampler {
            design,
            theta,
            coefs: vec![0.0; design.terms().len()],
            eta: vec![0.0; design.n_outcomes()],
        })
    }

    /// Per-row coefficients; random terms draw only when their scale is
    /// positive.
    fn coefficients<R: RngCore>(&mut self, rng: &mut R) {
        for (t, c) in self.design.terms().iter().zip(self.coefs.iter_mut()) {
            *c = self.theta[t.loc];
            if let Some(s) = t.scale {
                let scale = self.theta[s];
                if scale > 0.0 {
                    let e = match t.kind {
                        CoefKind::RandomUniform => 2.0 * rng::open01(rng) - 1.0,
                        _ => rng::std_normal(rng),
                    };
                    *c += scale * e;
                }
            }
        }
    }

    fn category<R: RngCore>(&mut self, row: usize, rng: &mut R) -> usize {
        self.coefficients(rng);
        self.design.predictors(&self.coefs, row, None, &mut self.eta);
        softmax(&mut self.eta);
        let u = rng::open01(rng);
        let mut acc = 0.0;
        for (i, p) in self.eta.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left the cumulative sum just below one.
        self.eta.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }

    fn count<R: RngCore>(&mut self, row: usize, rng: &mut R) -> Result<u64> {
        self.coefficients(rng);
        self.design.predictors(&self.coefs, row, None, &mut self.eta);
        let lambda = self.eta[0].exp();
        let alpha = self.theta[self.design.alpha_index().expect("count design")];
        nb_draw(lambda, alpha, rng)
    }

    pub(crate) fn outcome<R: RngCore>(&mut self, rng: &mut R) -> Result<Outcome> {
        let n = self.design.n_rows();
        Ok(match self.design.family().mode() {
            Mode::Severity => Outcome::Severity {
                labels: self.design.outcome_labels().to_vec(),
                codes: (0..n).map(|r| self.category(r, rng)).collect(),
            },
            Mode::Frequency => Outcome::Frequency {
                counts: (0..n).map(|r| self.count(r, rng)).collect::<Result<_>>()?,
            },
        })
    }
}

/// Negative binomial draw as a gamma(1/α, αλ) mixture of Poissons.
pub fn nb_draw<R: RngCore>(lambda: f64, alpha: f64, rng: &mut R) -> Result<u64> {
    if !(lambda > 0.0 && lambda.is_finite() && alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!(
            "negative binomial draw needs λ > 0 and α > 0 (λ={lambda}, α={alpha})"
        )));
    }
    let gamma = Gamma::new(1.0 / alpha, alpha * lambda)
        .map_err(|e| Error::Domain(format!("gamma mixing: {e}")))?;
    let rate: f64 = gamma.sample(rng);
    if rate <= 0.0 {
        return Ok(0);
    }
    let pois = Poisson::new(rate).map_err(|e| Error::Domain(format!("poisson draw: {e}")))?;
    Ok(pois.sample(rng) as u64)
}

fn generate(config: &DgpConfig, expect: &[Family]) -> Result<ObservationTable> {
    if !expect.contains(&config.spec.family) {
        return Err(Error::Config(format!(
            "generator does not handle family {}",
            config.spec.family.as_str()
        )));
    }
    let theta = config.validate()?;
    let mut rng = rng::seeded(config.seed);
    let n = config.n;
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); config.covariates.len()];
    for _ in 0..n {
        for (col, c) in columns.iter_mut().zip(&config.covariates) {
            col.push(draw_covariate(&c.recipe, &mut rng));
        }
    }
    let named: Vec<(String, Vec<f64>)> = config
        .covariates
        .iter()
        .map(|c| c.name.clone())
        .zip(columns)
        .collect();
    let table = ObservationTable::new(named, &config.spec.outcome_column, empty_outcome(&config.spec, n))?;

    let model_table = match &config.influence {
        Some(inf) => {
            let d = table
                .column(&inf.distance_column)
                .ok_or_else(|| Error::MissingColumn(inf.distance_column.clone()))?;
            if !(inf.true_d > 0.0) {
                return Err(Error::Config("true influence distance must be positive".into()));
            }
            let capped = d.iter().map(|&v| v.min(inf.true_d)).collect();
            table.with_column(&inf.distance_column, capped)?
        }
        None => table.clone(),
    };
    let design = build_design(&model_table, &config.spec)?;
    let outcome = Sampler::new(&design, &theta)?.outcome(&mut rng)?;
    let outcome = match outcome {
        // Design outcome order is the spec order, matching the placeholder labels.
        Outcome::Severity { codes, .. } => Outcome::Severity {
            labels: config.spec.outcomes.clone(),
            codes,
        },
        other => other,
    };
    table.with_outcome(outcome)
}

pub fn gen_mnl(config: &DgpConfig) -> Result<ObservationTable> {
    generate(config, &[Family::Mnl])
}

pub fn gen_mixed_mnl(config: &DgpConfig) -> Result<ObservationTable> {
    generate(config, &[Family::MixedMnl])
}

pub fn gen_nb(config: &DgpConfig) -> Result<ObservationTable> {
    generate(config, &[Family::Nb])
}

pub fn gen_mixed_nb(config: &DgpConfig) -> Result<ObservationTable> {
    generate(config, &[Family::MixedNb])
}

/// Severity data whose true predictor uses `min(d, true_d)` for the
/// distance column; the table stores the uncapped distance.
pub fn gen_influence(config: &DgpConfig) -> Result<ObservationTable> {
    if config.influence.is_none() {
        return Err(Error::Config("influence generator needs an `influence` block".into()));
    }
    generate(config, &[Family::Mnl, Family::MixedMnl])
}

/// Dispatch on the config's family (and influence block).
pub fn simulate(config: &DgpConfig) -> Result<ObservationTable> {
    generate(
        config,
        &[Family::Mnl, Family::MixedMnl, Family::Nb, Family::MixedNb],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::Term;

    fn three_way(theta: &[f64], n: usize, seed: u64) -> DgpConfig {
        let spec = ModelSpec::severity(
            Family::Mnl,
            "y",
            &["a", "b", "c"],
            "c",
            vec![
                Term::fixed("constant", &["a"]),
                Term::fixed("constant", &["b"]),
                Term::fixed("x", &["a", "b"]),
            ],
        )
        .unwrap();
        DgpConfig::from_vector(
            spec,
            theta,
            vec![Covariate::new("x", Recipe::Normal { mean: 0.0, sd: 1.0 })],
            n,
            seed,
        )
        .unwrap()
    }

    fn shares(t: &ObservationTable) -> Vec<f64> {
        match t.outcome() {
            Outcome::Severity { labels, codes } => {
                let mut s = vec![0.0; labels.len()];
                codes.iter().for_each(|&c| s[c] += 1.0);
                s.iter().map(|v| v / codes.len() as f64).collect()
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn equal_shares_within_clt_bound() {
        let n = 30_000;
        let t = gen_mnl(&three_way(&[0.0, 0.0, 0.0], n, 11)).unwrap();
        let bound = 3.0 * (2.0 / 9.0 / n as f64).sqrt();
        for s in shares(&t) {
            assert!((s - 1.0 / 3.0).abs() < bound, "{s}");
        }
    }

    #[test]
    fn dominant_predictor_saturates() {
        let t = gen_mnl(&three_way(&[10.0, 0.0, 0.0], 5000, 2)).unwrap();
        assert!(shares(&t)[0] > 0.99);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let c = three_way(&[0.4, -0.3, 0.8], 500, 5);
        let a = gen_mnl(&c).unwrap();
        let b = gen_mnl(&c).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn config_validation() {
        let mut c = three_way(&[0.0, 0.0, 0.0], 10, 1);
        c.true_params.remove("x [a,b]");
        assert!(gen_mnl(&c).is_err());
        let mut c = three_way(&[0.0, 0.0, 0.0], 10, 1);
        c.true_params.insert("bogus".into(), 1.0);
        assert!(gen_mnl(&c).is_err());
        let c = three_way(&[0.0, 0.0, 0.0], 10, 1);
        assert!(gen_nb(&c).is_err());
    }

    #[test]
    fn geometric_zero_share_and_variance() {
        let mut rng = rng::seeded(4);
        let n = 200_000;
        let draws: Vec<u64> = (0..n).map(|_| nb_draw(1.0, 1.0, &mut rng).unwrap()).collect();
        let p0 = draws.iter().filter(|&&v| v == 0).count() as f64 / n as f64;
        assert!((p0 - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());

        let (lambda, alpha) = (4.0, 0.5);
        let draws: Vec<f64> = (0..n)
            .map(|_| nb_draw(lambda, alpha, &mut rng).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let target = lambda * (1.0 + alpha * lambda);
        // Var of the sample variance: μ₄/n − σ⁴(n−3)/(n(n−1)), with μ₄ estimated.
        let m4 = draws.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n as f64;
        let se = ((m4 - var * var) / n as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "{var} vs {target} (se {se})");
    }

    #[test]
    fn poisson_limit_variance_equals_mean() {
        let mut rng = rng::seeded(8);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| nb_draw(3.0, 1e-8, &mut rng).unwrap() as f64)
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / mean - 1.0).abs() < 0.03);
    }
}
