mod common;

use common::*;
use crashmle::dataset::{ObservationTable, Outcome};
use crashmle::design::build_design;
use crashmle::fit::{fit, FitOptions};
use crashmle::influence::{search_influence, Grid};
use crashmle::lrtest::{lr_statistic, mc_null_distribution, simulate_under_null, McOptions};
use crashmle::mnl::mnl_prob;
use crashmle::rng;
use crashmle::synth::{gen_influence, gen_mnl, gen_nb};
use crashmle::Error;

fn no_cov() -> FitOptions {
    FitOptions {
        covariance: false,
        ..FitOptions::default()
    }
}

/// `n` copies of row 0 of `table`.
fn repeat_first_row(table: &ObservationTable, n: usize) -> ObservationTable {
    table.select_rows(&vec![0; n]).unwrap()
}

#[test]
fn degenerate_pooled_fit_reproduces_its_outcome() {
    let cfg = mnl_dgp(200, 31);
    let table = gen_mnl(&cfg).unwrap();
    let mut pooled = fit(&table, &cfg.spec, &no_cov()).unwrap();
    pooled.theta_hat = vec![60.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let sim = simulate_under_null(&pooled, &table, &mut rng::seeded(1)).unwrap();
    match sim.outcome() {
        Outcome::Severity { labels, codes } => {
            let fatal = labels.iter().position(|l| l == "fatal").unwrap();
            assert!(codes.iter().all(|&c| c == fatal));
        }
        _ => unreachable!(),
    }
    for name in table.column_names() {
        assert_eq!(sim.column(name), table.column(name));
    }

    pooled.converged = false;
    assert!(matches!(
        simulate_under_null(&pooled, &table, &mut rng::seeded(1)),
        Err(Error::NotConverged(_))
    ));
}

#[test]
fn resampled_shares_match_fitted_probabilities() {
    let cfg = mnl_dgp(300, 32);
    let table = gen_mnl(&cfg).unwrap();
    let pooled = fit(&table, &cfg.spec, &no_cov()).unwrap();
    let n = 100_000;
    let rows = repeat_first_row(&table, n);
    let d = build_design(&rows, &cfg.spec).unwrap();
    let p = mnl_prob(&pooled.theta_raw, &d, 0).unwrap();
    let sim = simulate_under_null(&pooled, &rows, &mut rng::seeded(2)).unwrap();
    let Outcome::Severity { labels, codes } = sim.outcome() else {
        unreachable!()
    };
    for (i, label) in d.outcome_labels().iter().enumerate() {
        let code = labels.iter().position(|l| l == label).unwrap();
        let share = codes.iter().filter(|&&c| c == code).count() as f64 / n as f64;
        let se = (p[i] * (1.0 - p[i]) / n as f64).sqrt();
        assert!((share - p[i]).abs() <= 3.0 * se, "{label}: {share} vs {}", p[i]);
    }
}

#[test]
fn resampled_counts_match_nb_moments() {
    let cfg = nb_dgp(400, 33);
    let table = gen_nb(&cfg).unwrap();
    let pooled = fit(&table, &cfg.spec, &no_cov()).unwrap();
    let n = 100_000;
    let rows = repeat_first_row(&table, n);
    let x: Vec<f64> = ["x1", "x2", "x3"].iter().map(|c| rows.column(c).unwrap()[0]).collect();
    let b = &pooled.theta_hat;
    let lambda = (b[0] + b[1] * x[0] + b[2] * x[1] + b[3] * x[2]).exp();
    let alpha = b[4];
    let sim = simulate_under_null(&pooled, &rows, &mut rng::seeded(3)).unwrap();
    let Outcome::Frequency { counts } = sim.outcome() else {
        unreachable!()
    };
    let y: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let mean = y.iter().sum::<f64>() / n as f64;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let m4 = y.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n as f64;
    let want_var = lambda * (1.0 + alpha * lambda);
    assert!((mean - lambda).abs() <= 3.0 * (want_var / n as f64).sqrt(), "{mean} vs {lambda}");
    assert!(
        (var - want_var).abs() <= 3.0 * ((m4 - var * var) / n as f64).sqrt(),
        "{var} vs {want_var}"
    );
}

#[test]
fn statistic_echo_and_bounds() {
    let cfg = null_split_dgp(300, 34);
    let table = gen_nb(&cfg).unwrap();
    let r = mc_null_distribution(
        &table,
        &cfg.spec,
        "flag",
        &no_cov(),
        &McOptions {
            replicates: 100,
            seed: 5,
            ..McOptions::default()
        },
    )
    .unwrap();
    let (x2, dof) = lr_statistic(r.ll_all, r.ll_a, r.ll_b, 3, 3, 3).unwrap();
    assert_eq!((x2, dof), (r.x2, r.dof));
    assert!((0.0..=1.0).contains(&r.p_asymptotic));
    let p = r.p_mc.unwrap();
    assert!((0.0..=1.0).contains(&p));
    let k = r.null_statistics.iter().filter(|&&s| s >= r.x2).count();
    assert_eq!(p, k as f64 / r.null_statistics.len() as f64);
    let h = r.null_histogram.as_ref().unwrap();
    assert_eq!(h.counts.len(), 50);
    assert_eq!(h.counts.iter().sum::<usize>(), r.null_statistics.len());
    assert_eq!(r.n_a + r.n_b, 300);
}

#[test]
fn too_few_replicates_are_rejected() {
    let cfg = null_split_dgp(100, 35);
    let table = gen_nb(&cfg).unwrap();
    let mc = McOptions {
        replicates: 50,
        ..McOptions::default()
    };
    assert!(matches!(
        mc_null_distribution(&table, &cfg.spec, "flag", &no_cov(), &mc),
        Err(Error::Config(_))
    ));
}

#[test]
fn monte_carlo_p_value_ignores_thread_count() {
    let cfg = null_split_dgp(150, 36);
    let table = gen_nb(&cfg).unwrap();
    let mc = McOptions {
        replicates: 120,
        seed: 9,
        bias_corrected: true,
        ..McOptions::default()
    };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| mc_null_distribution(&table, &cfg.spec, "flag", &no_cov(), &mc).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let k = a.null_statistics.iter().filter(|&&s| s >= a.x2).count();
    assert_eq!(a.p_mc.unwrap(), (k + 1) as f64 / (a.null_statistics.len() + 1) as f64);
}

#[test]
fn design_exception_split_sizes() {
    let cfg = null_split_dgp(143, 37);
    let table = gen_nb(&cfg).unwrap();
    let flag = (0..143).map(|i| if i % 3 == 0 && i / 3 < 48 { 1.0 } else { 0.0 }).collect();
    let table = table.with_column("design_exception", flag).unwrap();
    let (a, b) = table.split_by_flag("design_exception").unwrap();
    assert_eq!((a.n_rows(), b.n_rows()), (48, 95));

    let empty = table.with_column("design_exception", vec![0.0; 143]).unwrap();
    let (a, _) = empty.split_by_flag("design_exception").unwrap();
    assert!(matches!(fit(&a, &cfg.spec, &no_cov()), Err(Error::EmptyData)));
}

#[test]
fn small_samples_inflate_the_simulated_p_value() {
    // At N = 122 the asymptotic test is anti-conservative, so the simulated
    // p-value tends to exceed the asymptotic one.
    let spec = nb_dgp(1, 0).spec;
    let mut diffs = Vec::new();
    for e in 0..20u64 {
        let mut cfg = nb_dgp(122, 3800 + e);
        cfg.covariates.push(bernoulli("flag", 0.4));
        let table = gen_nb(&cfg).unwrap();
        let r = mc_null_distribution(
            &table,
            &spec,
            "flag",
            &no_cov(),
            &McOptions {
                replicates: 200,
                seed: e,
                ..McOptions::default()
            },
        )
        .unwrap();
        diffs.push(r.p_mc.unwrap() - r.p_asymptotic);
    }
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    assert!(mean > 0.0, "mean p_mc - p_asymptotic = {mean}: {diffs:?}");
}

#[test]
fn zero_distance_effect_gives_a_flat_profile() {
    let mut cfg = influence_dgp(1500, 38, 0.5);
    for k in ["d [fatal]", "d [injury]"] {
        cfg.true_params.insert(k.into(), 0.0);
    }
    let table = gen_influence(&cfg).unwrap();
    let grid = Grid {
        d_min: 0.1,
        d_max: 2.0,
        step: 0.05,
    };
    let p = search_influence(&table, &cfg.spec, "d", &grid, &FitOptions::default()).unwrap();
    assert!(p.flat);
    assert!(p.warnings.iter().any(|w| w.contains("flat profile")));
    assert_eq!(p.grid.len(), 39);
    assert_eq!(p.segment_length, 2.0 * p.d_star);

    let mut csv = Vec::new();
    p.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("D,ll,converged\n"));
    assert_eq!(text.lines().count(), 40);
}

#[test]
fn influence_search_preconditions() {
    let cfg = influence_dgp(300, 39, 0.5);
    let table = gen_influence(&cfg).unwrap();
    let grid = Grid {
        d_min: 0.1,
        d_max: 1.0,
        step: 0.1,
    };
    let mut spec = cfg.spec.clone();
    spec.terms.retain(|t| t.variable != "d");
    assert!(matches!(
        search_influence(&table, &spec, "d", &grid, &FitOptions::default()),
        Err(Error::InvalidSpec(_))
    ));
    let counts = null_split_dgp(100, 1);
    let freq = gen_nb(&counts).unwrap();
    assert!(search_influence(&freq, &counts.spec, "x1", &grid, &FitOptions::default()).is_err());

    let negative = table
        .with_column("d", table.column("d").unwrap().iter().map(|v| v - 1.0).collect())
        .unwrap();
    assert!(search_influence(&negative, &cfg.spec, "d", &grid, &FitOptions::default()).is_err());
    let bad = Grid {
        d_min: 0.0,
        d_max: 1.0,
        step: 0.1,
    };
    assert!(search_influence(&table, &cfg.spec, "d", &bad, &FitOptions::default()).is_err());
}
