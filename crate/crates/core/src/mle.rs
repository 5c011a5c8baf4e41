//! Generic likelihood maximization, covariance estimation and fit summaries.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::ParamRole;
use crate::error::{Error, Result};
use crate::mixed::DrawSettings;
use crate::spec::{Family, ModelSpec};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct OptimSettings {
    pub max_iterations: usize,
    /// Converged when `max |∇LL| <= gradient_tolerance * max(1, |LL|)`.
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// Relative step for the finite-difference Hessian.
    pub hessian_step: f64,
}

impl Default for OptimSettings {
    fn default() -> Self {
        OptimSettings {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            step_tolerance: 1e-10,
            hessian_step: 1e-5,
        }
    }
}

impl OptimSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_tolerance > 0.0 && self.step_tolerance > 0.0 && self.hessian_step > 0.0)
        {
            return Err(Error::Config("optimizer tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// A smooth log-likelihood with analytic gradient.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Returns the log-likelihood and writes its gradient into `grad`.
    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_grad(theta, &mut g)
    }

    /// Per-observation score vectors, if the objective is a sum over rows.
    fn scores(&self, _theta: &[f64]) -> Option<Vec<Vec<f64>>> {
        None
    }
}

/// Adapter turning a closure into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(theta, grad)
    }
}

/// A likelihood that is a sum of independent row contributions.
pub trait RowModel: Sync {
    type Scratch: Send;

    fn dim(&self) -> usize;
    fn n_rows(&self) -> usize;
    fn scratch(&self) -> Self::Scratch;

    /// Log-likelihood contribution of `row`; its gradient is *added* to `grad`.
    fn row(&self, theta: &[f64], row: usize, scratch: &mut Self::Scratch, grad: &mut [f64]) -> f64;
}

const CHUNK: usize = 256;

/// Sums a [`RowModel`] over fixed row chunks. Chunks may run on any thread;
/// partial sums are combined in chunk order, so the result does not depend
/// on scheduling.
pub struct RowSum<M>(pub M);

impl<M: RowModel> Objective for RowSum<M> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let model = &self.0;
        let n = model.n_rows();
        let k = model.dim();
        let n_chunks = n.div_ceil(CHUNK);
        let partial: Vec<(f64, Vec<f64>)> = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut scratch = model.scratch();
                let mut g = vec![0.0; k];
                let mut ll = 0.0;
                for r in c * CHUNK..((c + 1) * CHUNK).min(n) {
                    ll += model.row(theta, r, &mut scratch, &mut g);
                }
                (ll, g)
            })
            .collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ll = 0.0;
        for (l, g) in partial {
            ll += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        ll
    }

    fn scores(&self, theta: &[f64]) -> Option<Vec<Vec<f64>>> {
        let model = &self.0;
        let k = model.dim();
        let mut scratch = model.scratch();
        Some(
            (0..model.n_rows())
                .map(|r| {
                    let mut g = vec![0.0; k];
                    model.row(theta, r, &mut scratch, &mut g);
                    g
                })
                .collect(),
        )
    }
}

/// Re-expresses an objective in reporting coordinates: parameters estimated
/// on a log scale appear as `exp(raw)`.
pub struct Natural<'a, O: ?Sized> {
    inner: &'a O,
    log: Vec<bool>,
}

impl<'a, O: Objective + ?Sized> Natural<'a, O> {
    pub fn new(inner: &'a O, roles: &[ParamRole]) -> Self {
        Natural {
            inner,
            log: roles.iter().map(|r| r.is_log()).collect(),
        }
    }

    pub fn to_raw(&self, natural: &[f64]) -> Vec<f64> {
        natural
            .iter()
            .zip(&self.log)
            .map(|(&v, &l)| if l { v.ln() } else { v })
            .collect()
    }

    pub fn from_raw(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(&self.log)
            .map(|(&v, &l)| if l { v.exp() } else { v })
            .collect()
    }

    pub fn positive(&self) -> &[bool] {
        &self.log
    }
}

impl<O: Objective + ?Sized> Objective for Natural<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        if theta.iter().zip(&self.log).any(|(&v, &l)| l && v <= 0.0) {
            return f64::NAN;
        }
        let raw = self.to_raw(theta);
        let ll = self.inner.value_grad(&raw, grad);
        for ((g, &v), &l) in grad.iter_mut().zip(theta).zip(&self.log) {
            if l {
                *g /= v;
            }
        }
        ll
    }

    fn scores(&self, theta: &[f64]) -> Option<Vec<Vec<f64>>> {
        let raw = self.to_raw(theta);
        let mut s = self.inner.scores(&raw)?;
        for row in &mut s {
            for ((g, &v), &l) in row.iter_mut().zip(theta).zip(&self.log) {
                if l {
                    *g /= v;
                }
            }
        }
        Some(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    LineSearchFailure,
    IterationLimit,
    /// Set by estimators that detect coefficients escaping to infinity.
    Separation,
    NotRun,
}

#[derive(Debug, Clone)]
pub struct Maximum {
    pub theta: Vec<f64>,
    pub ll: f64,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
    pub gradient_norm: f64,
    pub start: Vec<f64>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// BFGS ascent with Armijo backtracking.
///
/// Returns the best point found. `converged` is true only when the gradient
/// tolerance is met; hitting the iteration cap or a failed line search is
/// reported through [`Maximum::termination`].
pub fn maximize<O: Objective + ?Sized>(
    obj: &O,
    theta0: &[f64],
    settings: &OptimSettings,
) -> Result<Maximum> {
    settings.validate()?;
    let n = obj.dim();
    if theta0.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: theta0.len(),
        });
    }
    let mut x = theta0.to_vec();
    let mut g = vec![0.0; n];
    let mut ll = obj.value_grad(&x, &mut g);
    if !ll.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "log-likelihood {ll} at the starting point"
        )));
    }

    // Inverse of the approximate negative Hessian.
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut iterations = 0;
    let mut termination = Termination::IterationLimit;
    let mut xn = vec![0.0; n];
    let mut gn = vec![0.0; n];
    let mut d = vec![0.0; n];

    while iterations < settings.max_iterations {
        if inf_norm(&g) <= settings.gradient_tolerance * ll.abs().max(1.0) {
            termination = Termination::GradientTolerance;
            break;
        }
        let gv = DMatrix::from_column_slice(n, 1, &g);
        let dv = &h * &gv;
        d.copy_from_slice(dv.as_slice());
        let mut slope = dot(&g, &d);
        if !(slope > 0.0) {
            h = DMatrix::identity(n, n);
            fresh = true;
            d.copy_from_slice(&g);
            slope = dot(&g, &d);
        }
        if fresh {
            let m = inf_norm(&d);
            if m > 1.0 {
                d.iter_mut().for_each(|v| *v /= m);
                slope /= m;
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..60 {
            for i in 0..n {
                xn[i] = x[i] + step * d[i];
            }
            let lln = obj.value_grad(&xn, &mut gn);
            if lln.is_finite() && gn.iter().all(|v| v.is_finite()) {
                any_finite = true;
                if lln >= ll + 1e-4 * step * slope {
                    accepted = Some(lln);
                    break;
                }
            }
            step *= 0.5;
        }
        let lln = match accepted {
            Some(v) => v,
            None if !any_finite => {
                return Err(Error::NonFinite(format!(
                    "log-likelihood not finite anywhere along the search direction (iteration {iterations})"
                )))
            }
            None if !fresh => {
                h = DMatrix::identity(n, n);
                fresh = true;
                iterations += 1;
                continue;
            }
            None => {
                termination = Termination::LineSearchFailure;
                break;
            }
        };
        iterations += 1;

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // Gradient change of the minimized function −LL.
        let y: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let yy = dot(&y, &y);
        if sy > 1e-12 * (dot(&s, &s) * yy).sqrt() && sy > 0.0 {
            if fresh {
                h = DMatrix::identity(n, n) * (sy / yy);
                fresh = false;
            }
            let rho = 1.0 / sy;
            let sv = DMatrix::from_column_slice(n, 1, &s);
            let yv = DMatrix::from_column_slice(n, 1, &y);
            let hy = &h * &yv;
            let yhy = (yv.transpose() * &hy)[(0, 0)];
            // H⁺ = H − ρ(s yᵀH + H y sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            h = &h - (&sv * hy.transpose() + &hy * sv.transpose()) * rho
                + (&sv * sv.transpose()) * (rho * rho * yhy + rho);
        }

        let small_step = inf_norm(&s) <= settings.step_tolerance * (1.0 + inf_norm(&x));
        let small_change = (lln - ll).abs() <= settings.step_tolerance * (1.0 + ll.abs());
        x.copy_from_slice(&xn);
        g.copy_from_slice(&gn);
        ll = lln;
        if small_step && small_change {
            termination = Termination::StepTolerance;
            break;
        }
    }

    let gradient_norm = inf_norm(&g);
    let converged = gradient_norm <= settings.gradient_tolerance * ll.abs().max(1.0);
    if converged {
        termination = Termination::GradientTolerance;
    }
    Ok(Maximum {
        theta: x,
        ll,
        converged,
        iterations,
        termination,
        gradient_norm,
        start: theta0.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMethod {
    /// Inverse of the negative finite-difference Hessian.
    Hessian,
    /// Inverse outer product of per-observation scores.
    Bhhh,
    /// Partially defined: parameters touching a degenerate direction have no
    /// standard error.
    Degenerate,
    NotComputed,
}

#[derive(Debug, Clone)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
    pub std_errors: Vec<Option<f64>>,
    pub method: CovMethod,
}

impl Covariance {
    pub fn not_computed(n: usize) -> Self {
        Covariance {
            matrix: DMatrix::from_element(n, n, f64::NAN),
            std_errors: vec![None; n],
            method: CovMethod::NotComputed,
        }
    }
}

/// Central-difference Hessian of the analytic gradient, symmetrized.
/// `positive[k]` keeps the perturbed coordinate above zero.
pub fn hessian<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    rel_step: f64,
    positive: Option<&[bool]>,
) -> DMatrix<f64> {
    let n = theta.len();
    let mut hm = DMatrix::<f64>::zeros(n, n);
    let mut tp = theta.to_vec();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for k in 0..n {
        let mut h = rel_step * theta[k].abs().max(1.0);
        if positive.is_some_and(|p| p[k]) {
            h = h.min(0.5 * theta[k]);
        }
        tp[k] = theta[k] + h;
        obj.value_grad(&tp, &mut gp);
        tp[k] = theta[k] - h;
        obj.value_grad(&tp, &mut gm);
        tp[k] = theta[k];
        for i in 0..n {
            hm[(i, k)] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    (&hm + hm.transpose()) * 0.5
}

/// Inverse of a symmetric information matrix through its eigen-decomposition.
/// Parameters loading on a non-positive eigen-direction get no standard error.
fn invert_information(info: &DMatrix<f64>) -> (DMatrix<f64>, Vec<Option<f64>>, bool) {
    let n = info.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), Vec::new(), true);
    }
    if info.iter().any(|v| !v.is_finite()) {
        return (DMatrix::from_element(n, n, f64::NAN), vec![None; n], false);
    }
    let eig = SymmetricEigen::new(info.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
    let tol = 1e-9 * lmax.max(f64::MIN_POSITIVE);
    let good: Vec<bool> = eig.eigenvalues.iter().map(|&l| l > tol).collect();
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for (j, &ok) in good.iter().enumerate() {
        if ok {
            let v = eig.eigenvectors.column(j);
            cov += (&v * v.transpose()) / eig.eigenvalues[j];
        }
    }
    let mut se = vec![None; n];
    let all_good = good.iter().all(|&g| g);
    for (k, slot) in se.iter_mut().enumerate() {
        let bad_load: f64 = good
            .iter()
            .enumerate()
            .filter(|(_, &ok)| !ok)
            .map(|(j, _)| eig.eigenvectors[(k, j)].powi(2))
            .sum();
        if bad_load < 1e-6 && cov[(k, k)] > 0.0 {
            *slot = Some(cov[(k, k)].sqrt());
        }
    }
    (cov, se, all_good)
}

/// Asymptotic covariance at a maximum: inverse negative Hessian, with the
/// BHHH outer-product estimate as fallback when the Hessian is not negative
/// definite.
pub fn covariance<O: Objective + ?Sized>(
    obj: &O,
    theta_hat: &[f64],
    settings: &OptimSettings,
    positive: Option<&[bool]>,
) -> Covariance {
    let h = hessian(obj, theta_hat, settings.hessian_step, positive);
    let (matrix, std_errors, ok) = invert_information(&(-h));
    if ok {
        return Covariance {
            matrix,
            std_errors,
            method: CovMethod::Hessian,
        };
    }
    if let Some(scores) = obj.scores(theta_hat) {
        let n = theta_hat.len();
        let mut b = DMatrix::<f64>::zeros(n, n);
        for s in &scores {
            let v = DMatrix::from_column_slice(n, 1, s);
            b += &v * v.transpose();
        }
        let (bm, bse, bok) = invert_information(&b);
        if bok {
            log::warn!("Hessian not negative definite; using BHHH covariance");
            return Covariance {
                matrix: bm,
                std_errors: bse,
                method: CovMethod::Bhhh,
            };
        }
    }
    log::warn!("Hessian not negative definite; some standard errors are undefined");
    Covariance {
        matrix,
        std_errors,
        method: CovMethod::Degenerate,
    }
}

/// Estimation output with the fields of a published results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Option<Family>,
    pub spec: Option<ModelSpec>,
    pub labels: Vec<String>,
    pub roles: Vec<ParamRole>,
    /// Estimates in reporting units (scales and α as positive numbers).
    pub theta_hat: Vec<f64>,
    pub standard_errors: Vec<Option<f64>>,
    pub t_ratios: Vec<Option<f64>>,
    /// Optimizer coordinates (log scales, `ln α`).
    pub theta_raw: Vec<f64>,
    pub ll_converged: f64,
    pub ll_restricted: f64,
    pub mcfadden_rho2: f64,
    pub n_params: usize,
    pub n_obs: usize,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
    pub covariance_method: CovMethod,
    pub draws: Option<DrawSettings>,
    pub warnings: Vec<String>,
}

pub const TRANSPOSED_LL_WARNING: &str =
    "log-likelihood at convergence is below the restricted log-likelihood; the two values look transposed and rho-squared uses them swapped";

/// McFadden ρ² = 1 − LL / LL_restricted.
pub fn mcfadden_rho2(ll: f64, ll_restricted: f64) -> f64 {
    1.0 - ll / ll_restricted
}

/// Assemble a [`FitResult`] from estimates, their covariance and the two
/// log-likelihoods. Context fields (spec, labels, diagnostics) are left at
/// neutral values for the caller to fill.
pub fn summarize(
    theta_hat: &[f64],
    cov: &Covariance,
    ll: f64,
    ll_restricted: f64,
) -> Result<FitResult> {
    let n = theta_hat.len();
    if cov.std_errors.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: cov.std_errors.len(),
        });
    }
    let t_ratios = theta_hat
        .iter()
        .zip(&cov.std_errors)
        .map(|(&b, se)| se.filter(|&s| s > 0.0).map(|s| b / s))
        .collect();
    let mut warnings = Vec::new();
    let mut rho2 = mcfadden_rho2(ll, ll_restricted);
    if ll < ll_restricted {
        // Read the pair the other way round; the fields keep the given values.
        rho2 = mcfadden_rho2(ll_restricted, ll);
        log::warn!("{TRANSPOSED_LL_WARNING} ({ll} < {ll_restricted})");
        warnings.push(TRANSPOSED_LL_WARNING.to_string());
    }
    Ok(FitResult {
        family: None,
        spec: None,
        labels: (0..n).map(|i| format!("theta{i}")).collect(),
        roles: vec![ParamRole::Location; n],
        theta_hat: theta_hat.to_vec(),
        standard_errors: cov.std_errors.clone(),
        t_ratios,
        theta_raw: theta_hat.to_vec(),
        ll_converged: ll,
        ll_restricted,
        mcfadden_rho2: rho2,
        n_params: n,
        n_obs: 0,
        converged: true,
        iterations: 0,
        termination: Termination::NotRun,
        covariance_method: cov.method,
        draws: None,
        warnings,
    })
}

impl FitResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn estimate(&self, label: &str) -> Option<f64> {
        self.labels
            .iter()
            .position(|l| l == label)
            .map(|i| self.theta_hat[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl() -> FnObjective<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnObjective::new(2, |t: &[f64], g: &mut [f64]| {
            g[0] = -2.0 * t[0];
            g[1] = -2.0 * t[1];
            -(t[0] * t[0] + t[1] * t[1])
        })
    }

    /// Bernoulli log-likelihood in the logit of the rate.
    fn bernoulli(n: f64, k: f64) -> FnObjective<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnObjective::new(1, move |t: &[f64], g: &mut [f64]| {
            let p = 1.0 / (1.0 + (-t[0]).exp());
            g[0] = k - n * p;
            k * p.ln() + (n - k) * (1.0 - p).ln()
        })
    }

    /// Bernoulli log-likelihood in the rate itself.
    fn bernoulli_rate(n: f64, k: f64) -> FnObjective<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnObjective::new(1, move |t: &[f64], g: &mut [f64]| {
            let p = t[0];
            g[0] = k / p - (n - k) / (1.0 - p);
            k * p.ln() + (n - k) * (1.0 - p).ln()
        })
    }

    #[test]
    fn quadratic_bowl() {
        let m = maximize(&bowl(), &[1.0, 1.0], &OptimSettings::default()).unwrap();
        assert!(m.converged);
        assert!(m.theta.iter().all(|v| v.abs() < 1e-8));
        assert!(m.ll.abs() < 1e-12);
    }

    #[test]
    fn bernoulli_rate_matches_sample_mean() {
        let (n, k) = (100.0, 30.0);
        let s = OptimSettings {
            gradient_tolerance: 1e-12,
            ..Default::default()
        };
        let m = maximize(&bernoulli(n, k), &[0.0], &s).unwrap();
        let p = 1.0 / (1.0 + (-m.theta[0]).exp());
        assert!((p - 0.3).abs() < 1e-8);
    }

    #[test]
    fn bernoulli_standard_error() {
        let obj = bernoulli_rate(100.0, 30.0);
        let cov = covariance(&obj, &[0.3], &OptimSettings::default(), Some(&[true]));
        let se = cov.std_errors[0].unwrap();
        assert!((se - (0.3f64 * 0.7 / 100.0).sqrt()).abs() < 1e-3);
        assert!((se - 0.0458).abs() < 1e-3);
        assert_eq!(cov.method, CovMethod::Hessian);
    }

    #[test]
    fn quadratic_covariance_is_inverse() {
        // LL = −½ θ'Aθ
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        let obj = FnObjective::new(3, move |t: &[f64], g: &mut [f64]| {
            let mut ll = 0.0;
            for i in 0..3 {
                g[i] = -(0..3).map(|j| a[i][j] * t[j]).sum::<f64>();
                ll += 0.5 * t[i] * g[i];
            }
            ll
        });
        let cov = covariance(&obj, &[0.0; 3], &OptimSettings::default(), None);
        let am = DMatrix::from_fn(3, 3, |i, j| a[i][j]);
        let inv = am.try_inverse().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((cov.matrix[(i, j)] - inv[(i, j)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn duplicated_parameter_gives_undefined_errors() {
        // Only θ0 + θ1 is identified; θ2 is separate.
        let obj = FnObjective::new(3, |t: &[f64], g: &mut [f64]| {
            let s = t[0] + t[1] - 1.0;
            g[0] = -2.0 * s;
            g[1] = -2.0 * s;
            g[2] = -2.0 * t[2];
            -(s * s) - t[2] * t[2]
        });
        let cov = covariance(&obj, &[0.4, 0.6, 0.0], &OptimSettings::default(), None);
        assert_eq!(cov.method, CovMethod::Degenerate);
        assert!(cov.std_errors[0].is_none());
        assert!(cov.std_errors[1].is_none());
        assert!((cov.std_errors[2].unwrap() - 0.5f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn two_modes_returns_local_optimum_and_records_start() {
        // LL = −(θ² − 1)², maxima at ±1.
        let obj = FnObjective::new(1, |t: &[f64], g: &mut [f64]| {
            let u = t[0] * t[0] - 1.0;
            g[0] = -4.0 * t[0] * u;
            -u * u
        });
        let m = maximize(&obj, &[0.3], &OptimSettings::default()).unwrap();
        assert!((m.theta[0].abs() - 1.0).abs() < 1e-6);
        assert_eq!(m.start, vec![0.3]);
        assert!(m.converged);
    }

    #[test]
    fn non_finite_objective_is_reported() {
        let obj = FnObjective::new(1, |_t: &[f64], g: &mut [f64]| {
            g[0] = 1.0;
            f64::NAN
        });
        assert!(matches!(
            maximize(&obj, &[0.0], &OptimSettings::default()),
            Err(Error::NonFinite(_))
        ));
        // Finite at the start, NaN everywhere else.
        let obj = FnObjective::new(1, |t: &[f64], g: &mut [f64]| {
            g[0] = 1.0;
            if t[0] == 0.0 {
                0.0
            } else {
                f64::NAN
            }
        });
        assert!(matches!(
            maximize(&obj, &[0.0], &OptimSettings::default()),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn iteration_cap() {
        let s = OptimSettings {
            max_iterations: 1,
            ..Default::default()
        };
        let obj = FnObjective::new(2, |t: &[f64], g: &mut [f64]| {
            // Rosenbrock, negated.
            let (a, b) = (t[0], t[1]);
            g[0] = -(-2.0 * (1.0 - a) - 400.0 * a * (b - a * a));
            g[1] = -(200.0 * (b - a * a));
            -((1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2))
        });
        let m = maximize(&obj, &[-1.2, 1.0], &s).unwrap();
        assert!(!m.converged);
        assert_eq!(m.termination, Termination::IterationLimit);
        let m = maximize(&obj, &[-1.2, 1.0], &OptimSettings::default()).unwrap();
        assert!(m.converged);
        assert!((m.theta[0] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn summary_fields() {
        let cov = Covariance {
            matrix: DMatrix::identity(2, 2),
            std_errors: vec![Some(0.5), None],
            method: CovMethod::Hessian,
        };
        let r = summarize(&[1.0, 2.0], &cov, -1828.38, -4027.51).unwrap();
        assert!((r.mcfadden_rho2 - 0.546).abs() < 1e-3);
        assert_eq!(r.t_ratios, vec![Some(2.0), None]);
        assert!(r.warnings.is_empty());
        let r = summarize(&[1.0, 2.0], &cov, -10.0, -10.0).unwrap();
        assert_eq!(r.mcfadden_rho2, 0.0);
        let r = summarize(&[1.0, 2.0], &cov, -1963.29, -472.77).unwrap();
        assert_eq!(r.warnings, vec![TRANSPOSED_LL_WARNING.to_string()]);
        assert!((r.mcfadden_rho2 - 0.759).abs() < 1e-3);
        let r = summarize(&[1.0, 2.0], &cov, -472.77, -1963.29).unwrap();
        assert!((r.mcfadden_rho2 - 0.759).abs() < 1e-3);
        assert!(r.warnings.is_empty());
        assert!(summarize(&[1.0], &cov, -1.0, -2.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn concave_ascent_never_decreases(a in 0.1f64..10.0, b in 0.1f64..10.0,
                                          x0 in -5.0f64..5.0, y0 in -5.0f64..5.0) {
            let obj = FnObjective::new(2, move |t: &[f64], g: &mut [f64]| {
                g[0] = -2.0 * a * (t[0] - 1.0);
                g[1] = -2.0 * b * (t[1] + 2.0);
                -(a * (t[0] - 1.0).powi(2) + b * (t[1] + 2.0).powi(2))
            });
            let start = obj.value(&[x0, y0]);
            let m = maximize(&obj, &[x0, y0], &OptimSettings::default()).unwrap();
            proptest::prop_assert!(m.ll >= start);
            let again = maximize(&obj, &[x0, y0], &OptimSettings::default()).unwrap();
            proptest::prop_assert_eq!(m.theta, again.theta);
        }
    }
}
