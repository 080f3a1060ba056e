//! File-level experiment pipelines: read a config, run the requested
//! analysis, and write a `summary.json`, the pipeline's CSV tables, and a
//! `manifest.json` recording the seeds and code version. Outputs are
//! deterministic for a fixed config, so re-running a pipeline reproduces
//! byte-identical artifacts.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::asymptotics;
use crate::config::{matrix_to_rows, EstimatorKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::harness::{self, SweepSettings};
use crate::metastable;
use crate::model::ObservationModel;
use crate::numerics::{derive_seed, fmt_sig12};
use crate::optimizer::{self, LinearClass};

/// Which analysis a run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    /// Closed-form exponents, curvature, and threshold rules.
    Analyze,
    /// Monte Carlo cost at fixed thresholds.
    Simulate,
    /// Threshold sweep with gap report against the closed-form rules.
    Sweep,
    /// Convex program over a linear statistic class.
    Optimize,
    /// Metastable factorization of a hidden-chain model.
    Pomdp,
    /// Most-likely-path knots for plotting.
    Path,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Analyze => "analyze",
            Pipeline::Simulate => "simulate",
            Pipeline::Sweep => "sweep",
            Pipeline::Optimize => "optimize",
            Pipeline::Pomdp => "pomdp",
            Pipeline::Path => "path",
        }
    }
}

/// Run one pipeline and write its artifacts; returns the written paths.
pub fn run_experiment(
    pipeline: Pipeline,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", out_dir.display())))?;
    let (model, law, stat) = config.build_parts()?;

    let mut written = Vec::new();
    let write = |name: &str, contents: String| -> Result<PathBuf> {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    };

    let uses_sampling = matches!(pipeline, Pipeline::Simulate | Pipeline::Sweep)
        && !(pipeline == Pipeline::Sweep && config.estimator == EstimatorKind::ExactDp);
    let rep_seeds: Vec<u64> = if uses_sampling {
        (0..config.replications as u64)
            .map(|r| derive_seed(config.seed, r))
            .collect()
    } else {
        Vec::new()
    };

    let summary = match pipeline {
        Pipeline::Analyze => {
            let rho_a = harness::change_decay_rate(&model, &law)?;
            let profile = asymptotics::solve_exponents(&model, &stat, rho_a)?;
            let curve = asymptotics::eagerness_curve(&profile)?;
            let per_kappa: Vec<serde_json::Value> = config
                .kappas
                .iter()
                .map(|&kappa| -> Result<serde_json::Value> {
                    let rules = asymptotics::approx_optimal_threshold(&curve, kappa, profile.m1)?;
                    let mde = asymptotics::approx_mde(&curve, rules.h_star_inf)?;
                    Ok(json!({
                        "kappa": kappa,
                        "h_star_inf": rules.h_star_inf,
                        "h_star_1": rules.h_star_1,
                        "j_star_inf": rules.j_star_inf,
                        "h_numeric": rules.h_numeric,
                        "j_numeric": rules.j_numeric,
                        "mde1_at_h_inf": mde.mde1,
                        "mde2_at_h_inf": mde.mde2,
                    }))
                })
                .collect::<Result<_>>()?;
            let rules0 = asymptotics::approx_optimal_threshold(
                &curve,
                config.kappas.iter().copied().find(|&k| k > 1.0).unwrap_or(std::f64::consts::E),
                profile.m1,
            )?;
            json!({
                "rho_a": rho_a,
                "theta_0": profile.theta_0,
                "theta_plus": profile.theta_plus,
                "m0": profile.m0,
                "m1": profile.m1,
                "m_check_0": profile.m_check_0,
                "m_check_plus": profile.m_check_plus,
                "gamma_sq": curve.gamma_sq,
                "s_star": curve.s_star,
                "s_zero": curve.s_zero,
                "b": rules0.b,
                "per_kappa": per_kappa,
            })
        }
        Pipeline::Simulate => {
            let rows = simulate_rows(config, &model, &law, &stat)?;
            written.push(write("sweep.csv", sweep_csv(&rows))?);
            json!({ "rows": rows })
        }
        Pipeline::Sweep => {
            let settings = SweepSettings {
                kappas: config.kappas.clone(),
                thresholds: config.thresholds.clone(),
                estimator: config.estimator,
                replications: config.replications,
                base_seed: config.seed,
                horizon_multiplier: config.horizon_multiplier,
                use_tilting: config.use_tilting,
                lattice_denominator: config.lattice_denominator,
            };
            let report = harness::sweep_threshold(&model, &law, &stat, &settings)?;
            written.push(write("sweep.csv", sweep_csv(&report.rows))?);
            json!({ "gaps": report.gaps, "estimator": report.estimator })
        }
        Pipeline::Optimize => {
            let spec = config
                .class
                .as_ref()
                .ok_or_else(|| Error::Config("class: required by the optimize pipeline".into()))?;
            let features = spec
                .features
                .iter()
                .map(|f| f.build())
                .collect::<Result<Vec<_>>>()?;
            let class = LinearClass::new(features, spec.v.clone())?;
            let rho_a = harness::change_decay_rate(&model, &law)?;
            let res = optimizer::optimize_linear(&model, &class, rho_a)?;
            let costs: Vec<serde_json::Value> = config
                .kappas
                .iter()
                .map(|&k| json!({"kappa": k, "j_star_inf": res.cost(k)}))
                .collect();
            json!({
                "theta_circ": res.theta_circ,
                "r_circ": res.r_circ,
                "theta_star": res.theta_star,
                "theta_normalized": res.theta_normalized,
                "theta_plus": res.theta_plus,
                "m1": res.m1,
                "m_check_plus_drift": res.m_check_plus_drift,
                "objective": res.objective,
                "iterations": res.iterations,
                "converged": res.converged,
                "stationarity_residual": res.stationarity_residual,
                "drift_gap": res.drift_gap,
                "autocorrelation": res.autocorrelation,
                "per_kappa": costs,
                "trace": res.trace,
            })
        }
        Pipeline::Pomdp => {
            let report = metastable::survival_factorization(&model)?;
            let init = match &model {
                ObservationModel::Pomdp { init, .. } => *init,
                _ => unreachable!("survival_factorization validated the variant"),
            };
            let horizon = config.survival_horizon.unwrap_or(100);
            let curve = report.survival_curve(init, horizon)?;
            let (pi0, pi1) = report.induced_marginals()?;
            written.push(write("survival.csv", survival_csv(&curve))?);
            json!({
                "lambda": report.lambda,
                "decay_rate": report.decay_rate,
                "x0": report.x0,
                "u": report.u,
                "v": report.v,
                "twisted_kernel": matrix_to_rows(&report.twisted_kernel),
                "quasi_stationary": report.quasi_stationary,
                "conditional_law": report.conditional_law,
                "expected_absorption": report.expected_absorption,
                "b0": curve.b0,
                "eps_a_slope": curve.eps_a_slope,
                "eps_a_r2": curve.eps_a_r2,
                "eps_b_slope": curve.eps_b_slope,
                "eps_b_r2": curve.eps_b_r2,
                "induced_pre_marginal": pi0,
                "induced_post_marginal": pi1,
            })
        }
        Pipeline::Path => {
            let rho_a = harness::change_decay_rate(&model, &law)?;
            let profile = asymptotics::solve_exponents(&model, &stat, rho_a)?;
            let window = config
                .path_window
                .unwrap_or(1.0 / profile.m_check_0 + 1.0 / (-profile.m0));
            let (e0, path) = asymptotics::path_exponent(&profile, window)?;
            let mut csv = String::from("t,x\n");
            for (t, x) in &path.knots {
                csv.push_str(&format!("{},{}\n", fmt_sig12(*t), fmt_sig12(*x)));
            }
            written.push(write("path.csv", csv)?);
            json!({
                "window": window,
                "exponent": e0,
                "rise_slope": path.rise_slope,
                "decay_slope": path.decay_slope,
                "knots": path.knots,
            })
        }
    };

    written.push(write(
        "summary.json",
        serde_json::to_string_pretty(&summary).map_err(|e| Error::Io(e.to_string()))? + "\n",
    )?);

    let manifest = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "pipeline": pipeline.name(),
        "base_seed": config.seed,
        "replications": config.replications,
        "seed_scheme": "per-replication seed = splitmix64(base xor splitmix64(index + 0x5851F42D4C957F2D))",
        "rep_seeds": rep_seeds,
        "config": serde_json::to_value(config).map_err(|e| Error::Io(e.to_string()))?,
    });
    written.push(write(
        "manifest.json",
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))? + "\n",
    )?);

    Ok(written)
}

fn simulate_rows(
    config: &ExperimentConfig,
    model: &ObservationModel,
    law: &crate::model::ChangeTimeLaw,
    stat: &crate::model::Statistic,
) -> Result<Vec<harness::SweepRow>> {
    // fixed thresholds from the config, or the leading-order rule per kappa
    let mut rows = Vec::new();
    for &kappa in &config.kappas {
        let thresholds: Vec<f64> = match &config.thresholds {
            Some(ts) => ts.clone(),
            None => {
                let rho_a = harness::change_decay_rate(model, law)?;
                let profile = asymptotics::solve_exponents(model, stat, rho_a)?;
                let curve = asymptotics::eagerness_curve(&profile)?;
                let rules = asymptotics::approx_optimal_threshold(&curve, kappa.max(1.5), profile.m1)?;
                vec![rules.h_star_inf.max(0.5)]
            }
        };
        for &h in &thresholds {
            let est = harness::mc_estimate_cost(
                model,
                law,
                stat,
                h,
                kappa,
                config.replications,
                config.seed,
                config.horizon_multiplier,
            )?;
            rows.push(harness::SweepRow {
                kappa,
                h,
                j: est.j,
                j_stderr: est.j_stderr,
                mdd: est.mdd,
                mde: est.mde,
                censored: est.censored,
            });
        }
    }
    Ok(rows)
}

fn sweep_csv(rows: &[harness::SweepRow]) -> String {
    let mut out = String::from("kappa,H,J_hat,J_stderr,MDD,MDE,censored\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_sig12(r.kappa),
            fmt_sig12(r.h),
            fmt_sig12(r.j),
            fmt_sig12(r.j_stderr),
            fmt_sig12(r.mdd),
            fmt_sig12(r.mde),
            r.censored,
        ));
    }
    out
}

fn survival_csv(curve: &metastable::SurvivalCurve) -> String {
    let states = curve.rows.first().map(|r| r.conditional.len()).unwrap_or(0);
    let mut out = String::from("n,survival,scaled");
    for j in 0..states {
        out.push_str(&format!(",cond_{j}"));
    }
    out.push('\n');
    for r in &curve.rows {
        out.push_str(&format!("{},{},{}", r.n, fmt_sig12(r.survival), fmt_sig12(r.scaled)));
        for c in &r.conditional {
            out.push_str(&format!(",{}", fmt_sig12(*c)));
        }
        out.push('\n');
    }
    out
}
