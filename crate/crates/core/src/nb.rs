//! Negative binomial count regression, fixed or with random coefficients.
//!
//! The log-pmf is evaluated as
//! `Σ_{j<A} ln(1+αj) − ln A! + A·η − (A + 1/α)·ln(1+αλ)`, which equals the
//! usual log-gamma form but stays accurate as α → 0 (the Poisson limit).

use crate::dataset::ObservationTable;
use crate::design::{DesignMatrix, Response};
use crate::effects::{lookup_variable, EffectEntry, EffectKind, EffectsReport};
use crate::error::{Error, Result};
use crate::fit::{self, FitOptions};
use crate::mixed::DrawMatrix;
use crate::mle::{maximize, FitResult, FnObjective, Objective, OptimSettings, RowModel, RowSum};
use crate::spec::{Family, ModelSpec};
use crate::special::{digamma, ln_factorial, ln_gamma};

/// Count above which (for α not tiny) the α-dependent sums switch from
/// direct summation to log-gamma / digamma differences.
const DIRECT_SUM_LIMIT: u64 = 256;

/// The parts of the log-pmf that depend on the count and α but not on λ:
/// `c = Σ_{j<A} ln(1+αj) − ln A!` and `s = Σ_{j<A} 1/(1+αj)`.
#[derive(Debug, Clone, Copy)]
struct CountTerms {
    c: f64,
    s: f64,
}

fn count_terms(count: u64, alpha: f64) -> CountTerms {
    let lf = ln_factorial(count);
    if count > DIRECT_SUM_LIMIT && alpha >= 1e-4 {
        let r = 1.0 / alpha;
        let a = count as f64;
        CountTerms {
            c: ln_gamma(a + r) - ln_gamma(r) + a * alpha.ln() - lf,
            s: r * (digamma(a + r) - digamma(r)),
        }
    } else {
        let mut c = 0.0;
        let mut s = 0.0;
        for j in 0..count {
            let aj = alpha * j as f64;
            c += aj.ln_1p();
            s += 1.0 / (1.0 + aj);
        }
        CountTerms { c: c - lf, s }
    }
}

/// Log-pmf with derivatives with respect to η = ln λ and ln α.
#[inline]
fn logpmf_parts(count: u64, eta: f64, alpha: f64, ct: CountTerms) -> (f64, f64, f64) {
    let a = count as f64;
    let lambda = eta.exp();
    let al = alpha * lambda;
    let l1p = al.ln_1p();
    let lp = ct.c + a * eta - (a + 1.0 / alpha) * l1p;
    let d_eta = (a - lambda) / (1.0 + al);
    let d_log_alpha = -ct.s + l1p / alpha + d_eta;
    (lp, d_eta, d_log_alpha)
}

/// `ln P(A = count)` for a negative binomial with mean `lambda` and
/// overdispersion `alpha` (variance `λ(1+αλ)`).
pub fn nb_logpmf(count: u64, lambda: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Domain(format!("overdispersion must be positive, got {alpha}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("mean must be positive, got {lambda}")));
    }
    Ok(logpmf_parts(count, lambda.ln(), alpha, count_terms(count, alpha)).0)
}

/// Row likelihood of a (mixed) negative binomial. Only β is mixed; α is
/// common to all draws.
pub struct CountModel<'a> {
    design: &'a DesignMatrix,
    draws: Option<&'a DrawMatrix>,
    counts: &'a [u64],
    alpha_index: usize,
}

pub struct CountScratch {
    coefs: Vec<f64>,
    eta: [f64; 1],
    lp: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> CountModel<'a> {
    pub fn new(design: &'a DesignMatrix, draws: Option<&'a DrawMatrix>) -> Result<Self> {
        let counts = match design.response() {
            Response::Counts(c) => c,
            Response::Codes(_) => {
                return Err(Error::InvalidSpec("count model needs count outcomes".into()))
            }
        };
        if design.n_random() > 0 && draws.is_none() {
            return Err(Error::Config("random coefficients need simulation draws".into()));
        }
        Ok(CountModel {
            design,
            draws: draws.filter(|_| design.n_random() > 0),
            counts,
            alpha_index: design.alpha_index().expect("count design has alpha"),
        })
    }
}

impl RowModel for CountModel<'_> {
    type Scratch = CountScratch;

    fn dim(&self) -> usize {
        self.design.n_params()
    }

    fn n_rows(&self) -> usize {
        self.design.n_rows()
    }

    fn scratch(&self) -> CountScratch {
        let r = self.draws.map_or(1, |d| d.n_draws());
        CountScratch {
            coefs: vec![0.0; self.design.terms().len()],
            eta: [0.0],
            lp: vec![0.0; r],
            g: vec![0.0; r * 2],
        }
    }

    fn row(&self, theta: &[f64], row: usize, s: &mut CountScratch, grad: &mut [f64]) -> f64 {
        let d = self.design;
        let count = self.counts[row];
        let alpha = theta[self.alpha_index].exp();
        let ct = count_terms(count, alpha);
        let xs = d.row(row);
        match self.draws {
            None => {
                d.term_coefficients(theta, None, &mut s.coefs);
                d.predictors(&s.coefs, row, None, &mut s.eta);
                let (lp, de, da) = logpmf_parts(count, s.eta[0], alpha, ct);
                for t in d.terms() {
                    grad[t.loc] += de * xs[t.var];
                }
                grad[self.alpha_index] += da;
                lp
            }
            Some(draws) => {
                let r_count = draws.n_draws();
                let mut max = f64::NEG_INFINITY;
                for r in 0..r_count {
                    d.term_coefficients(theta, Some(draws.draw(row, r)), &mut s.coefs);
                    d.predictors(&s.coefs, row, None, &mut s.eta);
                    let (lp, de, da) = logpmf_parts(count, s.eta[0], alpha, ct);
                    s.lp[r] = lp;
                    s.g[2 * r] = de;
                    s.g[2 * r + 1] = da;
                    max = max.max(lp);
                }
                let mut total = 0.0;
                for r in 0..r_count {
                    let w = (s.lp[r] - max).exp();
                    total += w;
                    s.lp[r] = w;
                }
                for r in 0..r_count {
                    let w = s.lp[r] / total;
                    let e = draws.draw(row, r);
                    let de = w * s.g[2 * r];
                    for t in d.terms() {
                        let v = de * xs[t.var];
                        grad[t.loc] += v;
                        if let (Some(sc), Some(slot)) = (t.scale, t.random_slot) {
                            grad[sc] += v * theta[sc].exp() * e[slot];
                        }
                    }
                    grad[self.alpha_index] += w * s.g[2 * r + 1];
                }
                max + (total / r_count as f64).ln()
            }
        }
    }
}

pub fn count_objective<'a>(
    design: &'a DesignMatrix,
    draws: Option<&'a DrawMatrix>,
) -> Result<RowSum<CountModel<'a>>> {
    Ok(RowSum(CountModel::new(design, draws)?))
}

/// Log-likelihood `Σ ln P(Aₙ)` and its gradient; the last parameter is ln α.
pub fn nb_loglik(theta: &[f64], design: &DesignMatrix) -> Result<(f64, Vec<f64>)> {
    design.check_theta(theta)?;
    let obj = count_objective(design, None)?;
    let mut g = vec![0.0; theta.len()];
    let ll = obj.value_grad(theta, &mut g);
    Ok((ll, g))
}

/// Simulated log-likelihood of a random-coefficient negative binomial.
pub fn simulated_nb_loglik(
    theta: &[f64],
    design: &DesignMatrix,
    draws: &DrawMatrix,
) -> Result<(f64, Vec<f64>)> {
    design.check_theta(theta)?;
    let obj = count_objective(design, Some(draws))?;
    let mut g = vec![0.0; theta.len()];
    let ll = obj.value_grad(theta, &mut g);
    Ok((ll, g))
}

/// Maximized log-likelihood of the intercept-only negative binomial, with
/// the fitted `(constant, ln α)`.
pub fn intercept_only(counts: &[u64], settings: &OptimSettings) -> Result<(f64, [f64; 2])> {
    if counts.is_empty() {
        return Err(Error::EmptyData);
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::Domain(
            "all counts are zero; the mean and overdispersion are not identified".into(),
        ));
    }
    let mut freq: Vec<(u64, f64)> = Vec::new();
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    for c in sorted {
        match freq.last_mut() {
            Some((v, n)) if *v == c => *n += 1.0,
            _ => freq.push((c, 1.0)),
        }
    }
    let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
    let obj = FnObjective::new(2, |t: &[f64], g: &mut [f64]| {
        let alpha = t[1].exp();
        g[0] = 0.0;
        g[1] = 0.0;
        let mut ll = 0.0;
        for &(c, n) in &freq {
            let (lp, de, da) = logpmf_parts(c, t[0], alpha, count_terms(c, alpha));
            ll += n * lp;
            g[0] += n * de;
            g[1] += n * da;
        }
        ll
    });
    let m = maximize(&obj, &[mean.ln(), 0.0], settings)?;
    Ok((m.ll, [m.theta[0], m.theta[1]]))
}

/// Maximum likelihood for a fixed-coefficient negative binomial.
pub fn fit_nb(table: &ObservationTable, spec: &ModelSpec, opts: &FitOptions) -> Result<FitResult> {
    if spec.family != Family::Nb {
        return Err(Error::InvalidSpec(format!(
            "expected family nb, got {}",
            spec.family.as_str()
        )));
    }
    fit::fit(table, spec, opts)
}

/// Simulated maximum likelihood for a random-coefficient negative binomial.
pub fn fit_mixed_nb(
    table: &ObservationTable,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    if spec.family != Family::MixedNb {
        return Err(Error::InvalidSpec(format!(
            "expected family mixed_nb, got {}",
            spec.family.as_str()
        )));
    }
    fit::fit(table, spec, opts)
}

/// Averaged marginal effects `⟨λₙ βₖ⟩`: the change in expected count per
/// unit change of each variable. With draws, λ and β are averaged over the
/// row's draws as well.
pub fn marginal_effects(
    theta: &[f64],
    design: &DesignMatrix,
    draws: Option<&DrawMatrix>,
    variables: &[String],
) -> Result<EffectsReport> {
    design.check_theta(theta)?;
    if design.alpha_index().is_none() {
        return Err(Error::Config("marginal effects apply to count models".into()));
    }
    let n = design.n_rows();
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let draws = draws.filter(|_| design.n_random() > 0);
    let r_count = draws.map_or(1, |d| d.n_draws());
    let vars: Vec<usize> = variables
        .iter()
        .map(|v| lookup_variable(design, v))
        .collect::<Result<_>>()?;
    let mut sums = vec![0.0; vars.len()];
    let mut coefs = vec![0.0; design.terms().len()];
    let mut eta = [0.0];
    for row in 0..n {
        for r in 0..r_count {
            design.term_coefficients(theta, draws.map(|d| d.draw(row, r)), &mut coefs);
            design.predictors(&coefs, row, None, &mut eta);
            let lambda = eta[0].exp();
            for (sum, &var) in sums.iter_mut().zip(&vars) {
                let beta: f64 = design
                    .terms()
                    .iter()
                    .zip(&coefs)
                    .filter(|(t, _)| t.var == var)
                    .map(|(_, c)| c)
                    .sum();
                *sum += lambda * beta;
            }
        }
    }
    let denom = (n * r_count) as f64;
    Ok(EffectsReport {
        family: design.family(),
        n_obs: n,
        entries: variables
            .iter()
            .zip(&sums)
            .map(|(v, s)| EffectEntry {
                variable: v.clone(),
                kind: EffectKind::MarginalEffect,
                x_outcome: None,
                p_outcome: None,
                value: s / denom,
                direct: None,
                elastic: None,
            })
            .collect(),
    })
}

/// Marginal effects of a fitted count model on `table`.
pub fn fitted_marginal_effects(
    fit: &FitResult,
    table: &ObservationTable,
    variables: &[String],
) -> Result<EffectsReport> {
    let spec = fit
        .spec
        .as_ref()
        .ok_or_else(|| Error::Config("fit carries no model spec".into()))?;
    let design = crate::design::build_design(table, spec)?;
    let draws = match fit.draws {
        Some(settings) if design.n_random() > 0 => Some(DrawMatrix::new(&design, settings)?),
        _ => None,
    };
    marginal_effects(&fit.theta_raw, &design, draws.as_ref(), variables)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::ln_factorial;

    fn poisson_logpmf(k: u64, lambda: f64) -> f64 {
        k as f64 * lambda.ln() - lambda - ln_factorial(k)
    }

    /// Log-gamma form of the pmf, evaluated independently.
    fn textbook(k: u64, lambda: f64, alpha: f64) -> f64 {
        let r = 1.0 / alpha;
        let a = k as f64;
        ln_gamma(a + r) - ln_gamma(r) - ln_factorial(k) - r * (1.0 + alpha * lambda).ln()
            + a * (alpha * lambda / (1.0 + alpha * lambda)).ln()
    }

    #[test]
    fn geometric_case() {
        assert!((nb_logpmf(0, 1.0, 1.0).unwrap() - 0.5f64.ln()).abs() < 1e-14);
        assert!((nb_logpmf(1, 1.0, 1.0).unwrap() - 0.25f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn poisson_limit() {
        let alpha = 1e-8;
        for k in 0..=20 {
            let a = nb_logpmf(k, 3.0, alpha).unwrap();
            let p = poisson_logpmf(k, 3.0);
            assert!((a - p).abs() < 1e-6 * p.abs().max(1.0), "k={k}");
            // First-order expansion in α of the gap between the two.
            let kf = k as f64;
            let gap = alpha * (kf * (kf - 1.0) / 2.0 - 3.0 * kf + 4.5);
            assert!((a - p - gap).abs() < 1e-10, "k={k}");
        }
    }

    #[test]
    fn matches_log_gamma_form() {
        for &(k, lambda, alpha) in &[
            (0u64, 2.5, 0.3),
            (7, 2.5, 0.3),
            (40, 40.0, 1.37),
            (300, 40.0, 1.37),
            (1000, 250.0, 0.05),
        ] {
            let a = nb_logpmf(k, lambda, alpha).unwrap();
            let b = textbook(k, lambda, alpha);
            assert!((a - b).abs() < 1e-9 * b.abs().max(1.0), "{k} {a} {b}");
        }
    }

    #[test]
    fn pmf_sums_to_one() {
        let total: f64 = (0..=2000).map(|k| nb_logpmf(k, 40.0, 1.37).unwrap().exp()).sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }

    #[test]
    fn domain_errors() {
        assert!(nb_logpmf(1, 1.0, 0.0).is_err());
        assert!(nb_logpmf(1, 0.0, 1.0).is_err());
        assert!(nb_logpmf(1, 1.0, -2.0).is_err());
    }

    #[test]
    fn direct_and_digamma_branches_agree() {
        for alpha in [1e-3, 0.2, 1.37, 5.0] {
            let k = DIRECT_SUM_LIMIT + 50;
            let direct = {
                let mut c = 0.0;
                let mut s = 0.0;
                for j in 0..k {
                    c += (alpha * j as f64).ln_1p();
                    s += 1.0 / (1.0 + alpha * j as f64);
                }
                (c - ln_factorial(k), s)
            };
            let ct = count_terms(k, alpha);
            assert!((ct.c - direct.0).abs() < 1e-8 * direct.0.abs());
            assert!((ct.s - direct.1).abs() < 1e-8 * direct.1.abs());
        }
    }

    #[test]
    fn intercept_only_recovers_mean() {
        let counts = [0u64, 3, 1, 7, 2, 0, 12, 4, 1, 5];
        let (_, theta) = intercept_only(&counts, &OptimSettings::default()).unwrap();
        let mean = counts.iter().sum::<u64>() as f64 / counts.len() as f64;
        assert!((theta[0].exp() - mean).abs() < 1e-5 * mean);
        assert!(intercept_only(&[0, 0, 0], &OptimSettings::default()).is_err());
    }
}
