#![allow(dead_code)]

use crashmle::spec::{CoefKind, Family, ModelSpec, Term};
use crashmle::synth::{Covariate, DgpConfig, InfluenceDgp, Recipe};

pub const OUTCOMES: [&str; 3] = ["fatal", "injury", "pdo"];

pub fn normal(name: &str, mean: f64, sd: f64) -> Covariate {
    Covariate::new(name, Recipe::Normal { mean, sd })
}

pub fn uniform(name: &str, low: f64, high: f64) -> Covariate {
    Covariate::new(name, Recipe::Uniform { low, high })
}

pub fn bernoulli(name: &str, p: f64) -> Covariate {
    Covariate::new(name, Recipe::Bernoulli { p })
}

pub fn severity(family: Family, terms: Vec<Term>) -> ModelSpec {
    ModelSpec::severity(family, "severity", &OUTCOMES, "pdo", terms).unwrap()
}

pub fn frequency(family: Family, terms: Vec<Term>) -> ModelSpec {
    ModelSpec::frequency(family, "accidents", terms).unwrap()
}

/// Six coefficients; `x3` is shared by the fatal and injury equations.
pub fn mnl_dgp(n: usize, seed: u64) -> DgpConfig {
    let spec = severity(
        Family::Mnl,
        vec![
            Term::fixed("constant", &["fatal"]),
            Term::fixed("constant", &["injury"]),
            Term::fixed("x1", &["fatal"]),
            Term::fixed("x2", &["injury"]),
            Term::fixed("x3", &["fatal", "injury"]),
            Term::fixed("x4", &["fatal"]),
        ],
    );
    DgpConfig::from_vector(
        spec,
        &[-0.5, 0.3, 0.8, -0.6, 0.5, 1.0],
        vec![
            normal("x1", 0.0, 1.0),
            normal("x2", 0.0, 1.0),
            uniform("x3", -1.0, 1.0),
            bernoulli("x4", 0.3),
        ],
        n,
        seed,
    )
    .unwrap()
}

/// One normally distributed coefficient on `z` in the fatal equation.
pub fn mixed_mnl_dgp(n: usize, seed: u64) -> DgpConfig {
    let spec = severity(
        Family::MixedMnl,
        vec![
            Term::fixed("constant", &["fatal"]),
            Term::fixed("constant", &["injury"]),
            Term::fixed("x1", &["fatal", "injury"]),
            Term::random("z", &["fatal"], CoefKind::RandomNormal),
        ],
    );
    DgpConfig::from_vector(
        spec,
        &[0.2, 0.4, 0.5, 1.0, 1.5],
        vec![normal("x1", 0.0, 1.0), normal("z", 0.0, 2.0)],
        n,
        seed,
    )
    .unwrap()
}

pub fn nb_dgp(n: usize, seed: u64) -> DgpConfig {
    let spec = frequency(
        Family::Nb,
        vec![
            Term::fixed("constant", &[]),
            Term::fixed("x1", &[]),
            Term::fixed("x2", &[]),
            Term::fixed("x3", &[]),
        ],
    );
    DgpConfig::from_vector(
        spec,
        &[1.0, 0.5, -0.4, 0.3, 1.37],
        vec![
            normal("x1", 0.0, 1.0),
            bernoulli("x2", 0.4),
            uniform("x3", -1.0, 1.0),
        ],
        n,
        seed,
    )
    .unwrap()
}

/// Mixed NB whose random coefficient has scale `sd`.
pub fn mixed_nb_dgp(n: usize, seed: u64, sd: f64) -> DgpConfig {
    let spec = frequency(
        Family::MixedNb,
        vec![
            Term::fixed("constant", &[]),
            Term::fixed("x1", &[]),
            Term::random("z", &[], CoefKind::RandomNormal),
        ],
    );
    DgpConfig::from_vector(
        spec,
        &[1.0, 0.5, 0.4, sd, 0.8],
        vec![normal("x1", 0.0, 1.0), normal("z", 0.0, 1.0)],
        n,
        seed,
    )
    .unwrap()
}

/// Counts on a constant and one covariate, plus a 0/1 `flag` column that
/// plays no part in the outcome.
pub fn null_split_dgp(n: usize, seed: u64) -> DgpConfig {
    let spec = frequency(
        Family::Nb,
        vec![Term::fixed("constant", &[]), Term::fixed("x1", &[])],
    );
    DgpConfig::from_vector(
        spec,
        &[1.0, 0.4, 0.6],
        vec![normal("x1", 0.0, 1.0), bernoulli("flag", 0.4)],
        n,
        seed,
    )
    .unwrap()
}

/// Severity outcomes driven by `min(d, true_d)`.
pub fn influence_dgp(n: usize, seed: u64, true_d: f64) -> DgpConfig {
    let spec = severity(
        Family::Mnl,
        vec![
            Term::fixed("constant", &["fatal"]),
            Term::fixed("constant", &["injury"]),
            Term::fixed("d", &["fatal"]),
            Term::fixed("d", &["injury"]),
        ],
    );
    let mut cfg = DgpConfig::from_vector(
        spec,
        &[0.5, 0.8, -4.0, -3.0],
        vec![uniform("d", 0.0, 1.5)],
        n,
        seed,
    )
    .unwrap();
    cfg.influence = Some(InfluenceDgp {
        distance_column: "d".into(),
        true_d,
    });
    cfg
}

/// Central differences of `f` at `x` with relative step `h`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|k| {
            let step = h * x[k].abs().max(1.0);
            xp[k] = x[k] + step;
            let up = f(&xp);
            xp[k] = x[k] - step;
            let down = f(&xp);
            xp[k] = x[k];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `max |a − b| / max(max |b|, 1)`.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / scale
}
