//! Random-coefficient machinery shared by the mixed logit and mixed negative
//! binomial models: Halton draws, mixing transforms and the simulated
//! severity probability.
//!
//! Draw block `r` of observation `n` uses Halton element `n·R + r` (after
//! the skip), one prime base per random term. `n` is the table's stable row
//! id, so a row keeps its draws when the data are split.

use serde::{Deserialize, Serialize};

use crate::dataset::ObservationTable;
use crate::design::{build_design, DesignMatrix};
use crate::effects::{self, EffectsReport};
use crate::error::{Error, Result};
use crate::fit::{self, FitOptions};
use crate::mle::FitResult;
use crate::rng;
use crate::spec::{CoefKind, Family, ModelSpec};
use crate::special::{norm_cdf, norm_ppf};

pub const MIN_DRAWS: usize = 25;
pub const DEFAULT_DRAWS: usize = 200;
pub const DEFAULT_SKIP: usize = 10;

pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

/// The first `k` primes.
pub fn primes(k: usize) -> Vec<u64> {
    (2u64..).filter(|&n| is_prime(n)).take(k).collect()
}

/// Radical inverse of `index` in `base`.
pub fn radical_inverse(base: u64, mut index: u64) -> f64 {
    let b = base as f64;
    let mut inv = 1.0 / b;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * inv;
        index /= base;
        inv /= b;
    }
    out
}

/// `count` Halton points in base `prime`, after discarding the first `skip`.
pub fn halton(prime: u64, count: usize, skip: usize) -> Result<Vec<f64>> {
    if !is_prime(prime) {
        return Err(Error::Domain(format!("Halton base {prime} is not prime")));
    }
    if count == 0 {
        return Err(Error::Domain("Halton count must be positive".into()));
    }
    Ok((0..count as u64)
        .map(|i| radical_inverse(prime, i + skip as u64 + 1))
        .collect())
}

/// Settings that reproduce a draw matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawSettings {
    pub count: usize,
    pub seed: u64,
    pub skip: usize,
    /// Randomized (Cranley–Patterson) shift of each Halton dimension.
    pub shift: bool,
}

impl Default for DrawSettings {
    fn default() -> Self {
        DrawSettings {
            count: DEFAULT_DRAWS,
            seed: 0,
            skip: DEFAULT_SKIP,
            shift: false,
        }
    }
}

/// Standardized draws per (row, draw, random term). Normal terms hold
/// Φ⁻¹(u); uniform terms hold 2u − 1, so a coefficient is `b + s·e`.
#[derive(Debug, Clone)]
pub struct DrawMatrix {
    n_draws: usize,
    n_random: usize,
    values: Vec<f64>,
    settings: DrawSettings,
}

impl DrawMatrix {
    pub fn new(design: &DesignMatrix, settings: DrawSettings) -> Result<Self> {
        if settings.count < MIN_DRAWS {
            return Err(Error::TooFewDraws(settings.count));
        }
        let k = design.n_random();
        let r = settings.count;
        let bases = primes(k);
        let kinds: Vec<CoefKind> = design
            .terms()
            .iter()
            .filter(|t| t.random_slot.is_some())
            .map(|t| t.kind)
            .collect();
        let shifts: Vec<f64> = (0..k)
            .map(|j| {
                if settings.shift {
                    rng::open01(&mut rng::stream(settings.seed, j as u64))
                } else {
                    0.0
                }
            })
            .collect();
        let mut values = vec![0.0; design.n_rows() * r * k];
        for (n, &id) in design.row_ids().iter().enumerate() {
            for d in 0..r {
                let element = (id * r + d + settings.skip + 1) as u64;
                for j in 0..k {
                    let mut u = radical_inverse(bases[j], element) + shifts[j];
                    if u >= 1.0 {
                        u -= 1.0;
                    }
                    if u <= 0.0 {
                        u = f64::EPSILON;
                    }
                    values[(n * r + d) * k + j] = standardize(kinds[j], u);
                }
            }
        }
        Ok(DrawMatrix {
            n_draws: r,
            n_random: k,
            values,
            settings,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn settings(&self) -> DrawSettings {
        self.settings
    }

    #[inline]
    pub fn draw(&self, row: usize, r: usize) -> &[f64] {
        let k = self.n_random;
        let start = (row * self.n_draws + r) * k;
        &self.values[start..start + k]
    }
}

fn standardize(kind: CoefKind, u: f64) -> f64 {
    match kind {
        CoefKind::RandomUniform => 2.0 * u - 1.0,
        _ => norm_ppf(u),
    }
}

/// Mixing distribution of one random coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mixing {
    pub kind: CoefKind,
    pub location: f64,
    /// Standard deviation (normal) or half-width (uniform).
    pub scale: f64,
}

/// Map a uniform base draw to a coefficient draw.
pub fn transform_draw(u: f64, mixing: &Mixing) -> f64 {
    mixing.location + mixing.scale * standardize(mixing.kind, u)
}

/// Share of the population whose coefficient is negative.
pub fn sign_share(mixing: &Mixing) -> f64 {
    let (b, s) = (mixing.location, mixing.scale);
    match mixing.kind {
        CoefKind::RandomUniform => ((s - b) / (2.0 * s)).clamp(0.0, 1.0),
        _ => norm_cdf(-b / s),
    }
}

/// Negative share of a uniform coefficient read both ways: with `scale` as
/// the half-width, and with `scale` as the true standard deviation
/// (half-width `scale·√3`).
pub fn uniform_sign_shares(location: f64, scale: f64) -> (f64, f64) {
    let as_spread = sign_share(&Mixing {
        kind: CoefKind::RandomUniform,
        location,
        scale,
    });
    let as_sd = sign_share(&Mixing {
        kind: CoefKind::RandomUniform,
        location,
        scale: scale * 3f64.sqrt(),
    });
    (as_spread, as_sd)
}

/// Fitted mixing distributions, one per random term, in term order.
pub fn fitted_mixing(fit: &FitResult, design: &DesignMatrix) -> Vec<(String, Mixing)> {
    let labels = design.param_labels();
    design
        .terms()
        .iter()
        .filter_map(|t| {
            t.scale.map(|s| {
                (
                    labels[t.loc].clone(),
                    Mixing {
                        kind: t.kind,
                        location: fit.theta_raw[t.loc],
                        scale: fit.theta_raw[s].exp(),
                    },
                )
            })
        })
        .collect()
}

/// Softmax in place, stabilized by subtracting the largest predictor.
pub(crate) fn softmax(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Simulated outcome probabilities of `row`: the average of logit
/// probabilities over the row's draws.
pub fn simulated_prob(
    theta: &[f64],
    design: &DesignMatrix,
    row: usize,
    draws: &DrawMatrix,
) -> Result<Vec<f64>> {
    design.check_theta(theta)?;
    let sim = effects::Simulator::new(design, theta, Some(draws));
    let p = sim.probabilities(row, None);
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("simulated probability in row {row}")));
    }
    Ok(p)
}

/// Simulated maximum likelihood for a mixed logit severity model.
pub fn fit_mixed_mnl(
    table: &ObservationTable,
    spec: &ModelSpec,
    opts: &FitOptions,
) -> Result<FitResult> {
    if spec.family != Family::MixedMnl {
        return Err(Error::InvalidSpec(format!(
            "expected family mixed_mnl, got {}",
            spec.family.as_str()
        )));
    }
    fit::fit(table, spec, opts)
}

/// Elasticities and pseudo-elasticities of a fitted mixed logit, using the
/// draws recorded in the fit.
pub fn mixed_effects(
    fit: &FitResult,
    table: &ObservationTable,
    continuous: &[String],
    indicators: &[String],
) -> Result<EffectsReport> {
    let spec = fit
        .spec
        .as_ref()
        .ok_or_else(|| Error::Config("fit carries no model spec".into()))?;
    let design = build_design(table, spec)?;
    let settings = fit
        .draws
        .ok_or_else(|| Error::Config("mixed fit carries no draw settings".into()))?;
    let draws = DrawMatrix::new(&design, settings)?;
    effects::severity_effects(&design, &fit.theta_raw, Some(&draws), continuous, indicators)
}
