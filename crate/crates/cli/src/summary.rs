//! JSON summaries: {config, derived, results, flags, version}.

use cavsqueeze::integrators::Diagnostics;
use cavsqueeze::models::{completion_rate, derive_params, reduced_jump_phase};
use cavsqueeze::observables::ScalingFit;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ScenarioConfig;
use crate::scenario::{RunOutput, CONFIDENCE};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn derived_json(cfg: &ScenarioConfig) -> Value {
    let p = cfg.model_params();
    let dp = derive_params(&p);
    json!({
        "epsilon": dp.epsilon,
        "d": dp.d,
        "n0": dp.n0,
        "alpha_re": dp.alpha.re,
        "alpha_im": dp.alpha.im,
        "alpha_sq": dp.alpha.norm_sqr(),
        "chi": dp.chi,
        "kappa_tilde": dp.kappa_tilde,
        "theta_s": reduced_jump_phase(dp.d),
        "phi": p.phi,
        "third_order_completion_rate": completion_rate(&p),
    })
}

fn diagnostics_json(d: &Diagnostics) -> Value {
    json!({
        "max_trace_error": d.max_trace_error,
        "max_hermiticity_error": d.max_hermiticity_error,
        "min_eigenvalue": d.min_eigenvalue,
        "steps": d.steps,
        "rejected_steps": d.rejected,
        "split_steps": d.retries,
    })
}

pub fn run_summary(out: &RunOutput) -> Value {
    let mut results = json!({
        "n_atoms": out.n_atoms,
        "t_m": out.optimum.t_m,
        "xi2_m": out.optimum.xi2_m,
        "optimum_index": out.optimum.index,
        "minimum_at_window_end": out.optimum.boundary,
        "minimum_at_start": out.optimum.at_start,
        "n_records": out.times.len(),
        "diagnostics": diagnostics_json(&out.diagnostics),
    });
    if let Some(n) = out.n_max {
        results["n_max"] = json!(n);
    }
    if let (Some(se), Some(hw)) = (out.optimum_stderr, out.optimum_half_width) {
        results["n_traj"] = json!(out.resolved.n_traj);
        results["xi2_m_stderr"] = json!(se);
        results["xi2_m_interval_half_width"] = json!(hw);
        results["confidence"] = json!(CONFIDENCE);
    }
    json!({
        "config": out.resolved,
        "derived": derived_json(&out.resolved),
        "results": results,
        "flags": out.flags,
        "version": VERSION,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub n_atoms: usize,
    pub t_m: f64,
    pub xi2_m: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi2_m_stderr: Option<f64>,
    pub t_end: f64,
    pub excluded_from_fit: bool,
    pub flags: Vec<String>,
}

pub fn fit_json(fit: &ScalingFit) -> Value {
    json!({
        "exponent": fit.exponent,
        "prefactor": fit.prefactor,
        "r_squared": fit.r_squared,
        "n_min": fit.n_range.0,
        "n_max": fit.n_range.1,
        "n_points": fit.n_points,
    })
}

pub fn sweep_summary(cfg: &ScenarioConfig, points: &[SweepPoint], fit: Option<&ScalingFit>, flags: &[String]) -> Value {
    let mut config = cfg.clone();
    config.phi = Some(cfg.phi());
    json!({
        "config": config,
        "derived": derived_json(cfg),
        "results": {
            "points": points,
            "fit": fit.map(fit_json),
        },
        "flags": flags,
        "version": VERSION,
    })
}

pub fn to_pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("summary serializes");
    s.push('\n');
    s
}
