//! Runs one (mode, N) scenario: deterministic master equation or trajectory
//! ensemble, with the observation window sized automatically.

use cavsqueeze::blocks::{BandedState, BlockModel};
use cavsqueeze::hilbert::css_x_state;
use cavsqueeze::integrators::{default_dt_step, evolve_samples, Diagnostics, TimeGrid, Tolerances};
use cavsqueeze::models::{
    build_full_model, build_reduced_model, convergence_warning, derive_params, DerivedParams, ModelOrder,
};
use cavsqueeze::montecarlo::{run_ensemble, summarize, EnsembleSpec};
use cavsqueeze::observables::{find_optimal_squeezing, OptimalSqueezing};

use crate::config::{Mode, ScenarioConfig};
use crate::table::Table;

/// Doublings of the window allowed while the minimum sits at its end.
pub const MAX_EXTENSIONS: usize = 6;

/// Confidence level of the reported optimum interval.
pub const CONFIDENCE: f64 = 0.95;

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub n_atoms: usize,
    /// κt
    pub times: Vec<f64>,
    pub xi2: Vec<f64>,
    pub sx: Vec<f64>,
    pub sy: Vec<f64>,
    pub sz: Vec<f64>,
    pub varmin: Vec<f64>,
    pub photon_number: Option<Vec<f64>>,
    /// In units of √κ.
    pub photocurrent: Option<Vec<f64>>,
    pub stderr: Option<Vec<f64>>,
    /// Optimum of the (mean) ξ² curve, t_m in units of 1/κ.
    pub optimum: OptimalSqueezing,
    pub optimum_stderr: Option<f64>,
    pub optimum_half_width: Option<f64>,
    pub n_max: Option<usize>,
    pub flags: Vec<String>,
    pub diagnostics: Diagnostics,
    /// Config with every automatic choice filled in; reruns reproduce this
    /// output exactly.
    pub resolved: ScenarioConfig,
}

impl RunOutput {
    pub fn to_table(&self) -> Table {
        let mut header = vec!["t", "xi2", "Sx", "Sy", "Sz", "varmin"];
        if self.photon_number.is_some() {
            header.push("photon_number");
        }
        if self.photocurrent.is_some() {
            header.push("mean_photocurrent");
        }
        if self.stderr.is_some() {
            header.push("stderr");
        }
        let mut table = Table::new(header);
        for r in 0..self.times.len() {
            let mut row = vec![self.times[r], self.xi2[r], self.sx[r], self.sy[r], self.sz[r], self.varmin[r]];
            for col in [&self.photon_number, &self.photocurrent, &self.stderr].into_iter().flatten() {
                row.push(col[r]);
            }
            table.push(row);
        }
        table
    }
}

/// First guess for the window (in units of 1/κ) from the model rates.
pub fn estimate_t_end(cfg: &ScenarioConfig, n_atoms: usize) -> f64 {
    let dp = derive_params(&cfg.model_params());
    let n = n_atoms as f64;
    let (kt, chi) = (dp.kappa_tilde / cfg.kappa, dp.chi.abs() / cfg.kappa);
    let t = if cfg.oat_only {
        if chi > 0.0 { 2.5 / (chi * n.powf(2.0 / 3.0)) } else { f64::INFINITY }
    } else if cfg.conditional {
        if kt > 0.0 { 8.0 / (kt * n.powf(2.0 / 3.0)) } else { f64::INFINITY }
    } else if kt > 0.0 {
        3.5 / (kt * n.powf(0.6))
    } else {
        f64::INFINITY
    };
    if t.is_finite() { t.max(1.0) } else { 10.0 }
}

fn build(cfg: &ScenarioConfig, n_atoms: usize) -> cavsqueeze::Result<(BlockModel, BandedState, Option<usize>)> {
    let p = cfg.model_params();
    let (model, rho, n_max) = match cfg.mode {
        Mode::Full => {
            let (model, state) = build_full_model(&p, n_atoms, cfg.n_max, cfg.initial_cavity.into())?;
            let n_max = state.space.cavity_dim() - 1;
            (model, state.rho, Some(n_max))
        }
        Mode::Reduced2 | Mode::Reduced3 => {
            let mut model = build_reduced_model(&p, n_atoms, cfg.mode.order())?;
            if cfg.oat_only {
                model = model.hamiltonian_only();
            }
            (model, css_x_state(n_atoms)?.rho, None)
        }
    };
    let bm = BlockModel::from_model(&model)?;
    let band = if bm.is_spin_blocked() { 2 } else { bm.n_spin - 1 };
    let start = BandedState::from_dense(&rho, bm.n_spin, bm.m, band.min(bm.n_spin - 1))?;
    Ok((bm, start, n_max))
}

fn attempt(
    cfg: &ScenarioConfig,
    n_atoms: usize,
    bm: &BlockModel,
    start: &BandedState,
    t_end: f64,
    dt_step: f64,
) -> cavsqueeze::Result<RunOutput> {
    let p = cfg.model_params();
    let photon_params = (cfg.mode == Mode::Full).then_some(&p);
    let kappa = cfg.kappa;
    let grid = TimeGrid::with_records(t_end / kappa, cfg.n_records)?;
    let mut resolved = cfg.clone();
    resolved.n_atoms = Some(n_atoms);
    resolved.n_list = None;
    resolved.t_end = Some(t_end);
    resolved.auto_extend = false;
    resolved.phi = Some(cfg.phi());
    if cfg.conditional {
        let grid = grid.with_step_at_most(dt_step / kappa)?;
        resolved.dt_step = Some(grid.dt_step.unwrap_or(dt_step / kappa) * kappa);
        let mut spec = EnsembleSpec::new(cfg.n_traj, cfg.base_seed, grid);
        spec.scheme = cfg.scheme.into();
        let r = run_ensemble(bm, start, &spec, photon_params)?;
        let s = summarize(&r, CONFIDENCE)?;
        let mut optimum = r.optimum;
        optimum.t_m *= kappa;
        let mut flags = Vec::new();
        if r.single_trajectory() {
            flags.push("single_trajectory".to_string());
        }
        Ok(RunOutput {
            n_atoms,
            times: r.times.iter().map(|t| t * kappa).collect(),
            xi2: r.mean_xi2,
            sx: r.mean_sx,
            sy: r.mean_sy,
            sz: r.mean_sz,
            varmin: r.mean_varmin,
            photon_number: r.mean_photon_number,
            photocurrent: Some(r.mean_photocurrent.iter().map(|i| i / kappa.sqrt()).collect()),
            stderr: Some(r.stderr_xi2),
            optimum,
            optimum_stderr: Some(s.optimum_stderr),
            optimum_half_width: Some(s.optimum_half_width),
            n_max: None,
            flags,
            diagnostics: r.diagnostics,
            resolved,
        })
    } else {
        resolved.dt_step = None;
        let tol = Tolerances { rtol: cfg.rtol, atol: cfg.atol };
        let (samples, diagnostics) = evolve_samples(bm, start, &grid, tol, photon_params)?;
        let times: Vec<f64> = samples.iter().map(|s| s.t * kappa).collect();
        let xi2: Vec<f64> = samples.iter().map(|s| s.xi2).collect();
        let optimum = find_optimal_squeezing(&times, &xi2)?;
        let varmin = samples
            .iter()
            .map(|s| s.moments.transverse_min_variance())
            .collect::<cavsqueeze::Result<Vec<f64>>>()?;
        Ok(RunOutput {
            n_atoms,
            xi2,
            sx: samples.iter().map(|s| s.moments.mean[0]).collect(),
            sy: samples.iter().map(|s| s.moments.mean[1]).collect(),
            sz: samples.iter().map(|s| s.moments.mean[2]).collect(),
            varmin,
            photon_number: photon_params.map(|_| samples.iter().map(|s| s.photon_number.unwrap_or(f64::NAN)).collect()),
            photocurrent: None,
            stderr: None,
            times,
            optimum,
            optimum_stderr: None,
            optimum_half_width: None,
            n_max: None,
            flags: Vec::new(),
            diagnostics,
            resolved,
        })
    }
}

/// Runs one atom number. The window is doubled (up to [`MAX_EXTENSIONS`]
/// times) while the minimum falls on its last sample and `auto_extend` is set.
pub fn run_single(cfg: &ScenarioConfig, n_atoms: usize) -> cavsqueeze::Result<RunOutput> {
    let (bm, start, n_max) = build(cfg, n_atoms)?;
    let p = cfg.model_params();
    let dt_step = cfg.dt_step.unwrap_or_else(|| {
        let order = if cfg.mode == Mode::Full { ModelOrder::Full } else { cfg.mode.order() };
        default_dt_step(&p, n_atoms, order) * cfg.kappa
    });
    let mut t_end = cfg.t_end.unwrap_or_else(|| estimate_t_end(cfg, n_atoms));
    let mut extensions = 0;
    let mut out = loop {
        let out = attempt(cfg, n_atoms, &bm, &start, t_end, dt_step)?;
        if out.optimum.boundary && cfg.auto_extend && extensions < MAX_EXTENSIONS {
            t_end *= 2.0;
            extensions += 1;
            continue;
        }
        break out;
    };
    out.n_max = n_max;
    if let Some(n) = n_max {
        out.resolved.n_max = Some(n);
    }
    if extensions > 0 {
        out.flags.push(format!("window_extended_x{}", 1 << extensions));
    }
    if out.optimum.boundary {
        out.flags.push("minimum_at_window_end".into());
    }
    if out.optimum.at_start {
        out.flags.push("minimum_at_start".into());
    }
    if cfg.mode != Mode::Full {
        if let Some(w) = convergence_warning(&p, n_atoms) {
            out.flags.push(format!("convergence_warning: {w}"));
        }
    }
    Ok(out)
}

/// Derived parameters of a config, for summaries.
pub fn derived(cfg: &ScenarioConfig) -> DerivedParams {
    derive_params(&cfg.model_params())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_spin_never_squeezes() {
        let mut cfg = ScenarioConfig::new(Mode::Reduced2, 0.033, 0.0);
        cfg.n_atoms = Some(1);
        cfg.n_records = 50;
        let out = run_single(&cfg, 1).unwrap();
        let kt = derived(&cfg).kappa_tilde;
        for (t, x) in out.times.iter().zip(&out.xi2) {
            // one spin: ξ² = 4 Var_⊥ / |2⟨s⟩|² = e^{κ̃t}
            assert!((x - (kt * t).exp()).abs() < 1e-7 * x);
        }
        assert_eq!(out.optimum.index, 0);
        assert!(out.flags.iter().any(|f| f == "minimum_at_start"));
    }

    #[test]
    fn uncoupled_full_model() {
        let mut cfg = ScenarioConfig::new(Mode::Full, 0.0, 0.6);
        cfg.t_end = Some(12.0);
        cfg.n_records = 60;
        cfg.auto_extend = false;
        let out = run_single(&cfg, 2).unwrap();
        assert!(out.xi2.iter().all(|x| (x - 1.0).abs() < 1e-9));
        let alpha = derived(&cfg).alpha;
        let n = out.photon_number.as_ref().unwrap();
        assert!(n[0].abs() < 1e-9);
        let decay = (cavsqueeze::C64::new(-0.5, 0.3) * 12.0).exp();
        let expected = (alpha * (1.0 - decay)).norm_sqr();
        assert!((n.last().unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn window_extends_until_interior() {
        let mut cfg = ScenarioConfig::new(Mode::Reduced2, 0.033, 1.0);
        cfg.t_end = Some(2.0);
        cfg.n_records = 40;
        let out = run_single(&cfg, 40).unwrap();
        assert!(!out.optimum.boundary);
        assert!(out.flags.iter().any(|f| f.starts_with("window_extended")));
        assert!(out.resolved.t_end.unwrap() > 2.0);
    }
}
