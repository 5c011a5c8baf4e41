//! Plain-text tables in the layout of published estimation results.

use std::fmt::Write as _;

use crate::design::ParamRole;
use crate::effects::{EffectKind, EffectsReport};
use crate::influence::InfluenceProfile;
use crate::lrtest::LrTestResult;
use crate::mixed::{sign_share, Mixing};
use crate::mle::FitResult;
use crate::spec::CoefKind;

/// Three significant figures, e.g. `0.609`, `-1.85`, `71.9`, `4028`.
pub fn sig3(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let mag = x.abs().log10().floor() as i32;
    let decimals = (2 - mag).max(0) as usize;
    let s = format!("{:.*}", decimals, x);
    // Rounding may carry into a new digit (9.996 → 10.00); redo once.
    let rounded: f64 = s.parse().unwrap_or(x);
    let mag2 = rounded.abs().log10().floor() as i32;
    if mag2 > mag && decimals > 0 {
        format!("{:.*}", decimals - 1, x)
    } else {
        s
    }
}

fn split_label(label: &str) -> (&str, &str) {
    match label.find(" [") {
        Some(i) => (&label[..i], label[i + 2..].trim_end_matches(']')),
        None => (label, ""),
    }
}

fn t_text(t: Option<f64>) -> String {
    t.map(|v| format!("({v:.2})")).unwrap_or_else(|| "(n/a)".into())
}

pub fn fit_table(fit: &FitResult) -> String {
    let mut out = String::new();
    let family = fit.family.map(|f| f.as_str()).unwrap_or("model");
    let _ = writeln!(out, "Estimation results: {family} (N = {})", fit.n_obs);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<34} {:<24} {:>10} {:>10}",
        "Variable", "Outcomes", "Estimate", "(t-ratio)"
    );
    let kinds = term_kinds(fit);
    for (i, label) in fit.labels.iter().enumerate() {
        let (var, outs) = split_label(label);
        let _ = writeln!(
            out,
            "{:<34} {:<24} {:>10} {:>10}",
            var,
            outs,
            sig3(fit.theta_hat[i]),
            t_text(fit.t_ratios[i])
        );
        if fit.roles[i] == ParamRole::LogScale && i > 0 {
            let mixing = Mixing {
                kind: kinds.get(&i).copied().unwrap_or(CoefKind::RandomNormal),
                location: fit.theta_hat[i - 1],
                scale: fit.theta_hat[i],
            };
            if mixing.kind == CoefKind::RandomUniform {
                let _ = writeln!(
                    out,
                    "{:<34} {:<24} {:>10}",
                    "  implied sd (spread/sqrt 3)",
                    "",
                    sig3(mixing.scale / 3f64.sqrt())
                );
                let as_sd = Mixing {
                    scale: mixing.scale * 3f64.sqrt(),
                    ..mixing
                };
                let _ = writeln!(
                    out,
                    "  share below zero: {:.1}% (scale read as spread), {:.1}% (scale read as sd)",
                    100.0 * sign_share(&mixing),
                    100.0 * sign_share(&as_sd)
                );
            } else if mixing.scale > 0.0 {
                let _ = writeln!(out, "  share below zero: {:.1}%", 100.0 * sign_share(&mixing));
            }
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<34} {:.2}", "Log-likelihood at convergence", fit.ll_converged);
    let _ = writeln!(out, "{:<34} {:.2}", "Restricted log-likelihood", fit.ll_restricted);
    let _ = writeln!(out, "{:<34} {}", "Number of parameters", fit.n_params);
    let _ = writeln!(out, "{:<34} {}", "Number of observations", fit.n_obs);
    let _ = writeln!(out, "{:<34} {:.3}", "McFadden rho-squared", fit.mcfadden_rho2);
    let _ = writeln!(
        out,
        "{:<34} {} ({:?}, {} iterations, covariance {:?})",
        "Converged", fit.converged, fit.termination, fit.iterations, fit.covariance_method
    );
    if let Some(d) = fit.draws {
        let _ = writeln!(
            out,
            "{:<34} {} Halton (seed {}, skip {}, shift {})",
            "Draws", d.count, d.seed, d.skip, d.shift
        );
    }
    for w in &fit.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// Coefficient kind of each scale parameter, keyed by its index.
fn term_kinds(fit: &FitResult) -> std::collections::HashMap<usize, CoefKind> {
    let mut map = std::collections::HashMap::new();
    if let Some(spec) = &fit.spec {
        let mut pos = 0;
        for t in &spec.terms {
            if t.kind.is_random() {
                map.insert(pos + 1, t.kind);
            }
            pos += t.kind.n_params();
        }
    }
    map
}

pub fn effects_table(report: &EffectsReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Averaged effects: {} (N = {})",
        report.family.as_str(),
        report.n_obs
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<24} {:<18} {:<14} {:<14} {:>10}  {}",
        "Variable", "Kind", "Equation", "Probability", "Value", "Notes"
    );
    for e in &report.entries {
        let kind = match e.kind {
            EffectKind::Elasticity => "elasticity",
            EffectKind::PseudoElasticity => "pseudo-elasticity",
            EffectKind::MarginalEffect => "marginal effect",
        };
        let mut notes = Vec::new();
        if let Some(d) = e.direct {
            notes.push(if d { "direct" } else { "cross" });
        }
        if let Some(el) = e.elastic {
            notes.push(if el { "elastic" } else { "inelastic" });
        }
        let _ = writeln!(
            out,
            "{:<24} {:<18} {:<14} {:<14} {:>10}  {}",
            e.variable,
            kind,
            e.x_outcome.as_deref().unwrap_or(""),
            e.p_outcome.as_deref().unwrap_or(""),
            sig3(e.value),
            notes.join(", ")
        );
    }
    out
}

pub fn lrtest_text(r: &LrTestResult) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Likelihood-ratio test, pooled versus split (N_A = {}, N_B = {})", r.n_a, r.n_b);
    let _ = writeln!(out, "{:<28} {:.2}", "LL pooled", r.ll_all);
    let _ = writeln!(out, "{:<28} {:.2}", "LL subsample A (flag = 1)", r.ll_a);
    let _ = writeln!(out, "{:<28} {:.2}", "LL subsample B (flag = 0)", r.ll_b);
    let _ = writeln!(out, "{:<28} {:.2}", "X2", r.x2);
    let _ = writeln!(out, "{:<28} {}", "Degrees of freedom", r.dof);
    let _ = writeln!(out, "{:<28} {:.4}", "p (asymptotic chi-square)", r.p_asymptotic);
    if let Some(p) = r.p_mc {
        let _ = writeln!(
            out,
            "{:<28} {:.4} ({} replicates, {} dropped, seed {}{})",
            "p (Monte-Carlo)",
            p,
            r.replicates,
            r.failed_replicates,
            r.seed,
            if r.bias_corrected { ", (k+1)/(R+1)" } else { "" }
        );
    }
    for w in &r.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

pub fn influence_text(p: &InfluenceProfile) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Influence-distance search on `{}`", p.distance_column);
    let _ = writeln!(out, "{:>8} {:>14}  converged", "D", "LL");
    for ((d, ll), c) in p.grid.iter().zip(&p.ll).zip(&p.converged) {
        let l = ll.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
        let mark = if *d == p.d_star { " *" } else { "" };
        let _ = writeln!(out, "{d:>8.3} {l:>14}  {c}{mark}");
    }
    let _ = writeln!(out, "D* = {} (segment length {})", p.d_star, p.segment_length);
    for w in &p.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_significant_figures() {
        assert_eq!(sig3(0.609), "0.609");
        assert_eq!(sig3(-1.8512), "-1.85");
        assert_eq!(sig3(71.94), "71.9");
        assert_eq!(sig3(0.050_94), "0.0509");
        assert_eq!(sig3(4027.51), "4028");
        assert_eq!(sig3(9.996), "10.0");
        assert_eq!(sig3(0.0), "0");
    }

    #[test]
    fn labels_split() {
        assert_eq!(split_label("snow [fatal,injury]"), ("snow", "fatal,injury"));
        assert_eq!(split_label("alpha"), ("alpha", ""));
    }
}
