//! Self-check suite: elimination coefficients, generator assembly, jump
//! factorization, phases and integrator properties.

use std::f64::consts::{FRAC_PI_2, PI};

use cavsqueeze::blocks::{BandedState, BlockModel};
use cavsqueeze::elimination::{
    assemble_reduced_generator, closed_form_coefficients, coefficients_by_quadrature, CoefficientSet,
};
use cavsqueeze::hilbert::{cavity_operators, css_x_state, spin_operators};
use cavsqueeze::integrators::{evolve_master_equation, sme_step, TimeGrid, Tolerances};
use cavsqueeze::models::{
    build_full_model, build_reduced_model, completion_term, derive_params, optimal_homodyne_phase, reduced_jump_phase,
    superoperator_matrix, verify_jump_factorization, InitialCavity, ModelOrder, ModelParams,
};
use cavsqueeze::{max_abs, C64};

/// One named comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub observed: f64,
    pub bound: f64,
}

impl Check {
    /// Passes when `observed < bound`.
    pub fn below(name: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self { name: name.into(), passed: observed < bound, observed, bound }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: observed {:.3e}, bound {:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.observed,
            self.bound
        )
    }
}

pub const D_GRID: [f64; 6] = [0.0, 0.5, 0.8, 1.0, 1.67, 3.0];
pub const N0_GRID: [f64; 2] = [1.0, 4.0];
pub const EPS_GRID: [f64; 2] = [0.017, 0.033];

/// Cavity truncation for the coefficient quadrature.
const QUADRATURE_N_MAX: usize = 8;

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm()
}

/// Quadrature against closed forms on the (d, n0) grid, plus the resonant
/// values at κ = β = 1.
pub fn coefficient_checks() -> cavsqueeze::Result<Vec<Check>> {
    let cav = cavity_operators(QUADRATURE_N_MAX)?;
    let mut out = Vec::new();
    for d in D_GRID {
        for n0 in N0_GRID {
            let p = ModelParams::scaled(0.02, d, n0.sqrt() / 2.0);
            let rep = coefficients_by_quadrature(&cav, &p, 1e-10)?;
            let err = rep.coefficients.max_relative_error(&closed_form_coefficients(&p));
            out.push(Check::below(format!("coefficients d={d} n0={n0} relative error"), err, 1e-8));
            out.push(Check::below(format!("coefficients d={d} n0={n0} tail bound"), rep.tail_bound, 1e-6));
        }
    }
    let p = ModelParams::scaled(0.02, 0.0, 1.0);
    let CoefficientSet { c, d, f } = coefficients_by_quadrature(&cav, &p, 1e-12)?.coefficients;
    out.push(Check::below("resonant C = 8", rel(c, C64::from(8.0)), 1e-8));
    out.push(Check::below("resonant D = 12", rel(d, C64::from(12.0)), 1e-8));
    out.push(Check::below("resonant F = 4", rel(f, C64::from(4.0)), 1e-8));
    Ok(out)
}

/// Assembled reduced generators against the model generators, N ≤ 6.
pub fn generator_checks() -> cavsqueeze::Result<Vec<Check>> {
    let mut worst2: f64 = 0.0;
    let mut worst3: f64 = 0.0;
    for n in 1..=6 {
        for d in [0.0, 0.8, 1.0, 1.67] {
            for eps in EPS_GRID {
                let p = ModelParams::scaled(eps, d, 1.0);
                let spin = spin_operators(n)?;
                let coeffs = closed_form_coefficients(&p);
                let g2 = assemble_reduced_generator(&spin, coeffs, &p, ModelOrder::Second)?;
                let m2 = build_reduced_model(&p, n, ModelOrder::Second)?;
                worst2 = worst2.max(max_abs(&(g2.superoperator() - m2.superoperator())));
                let g3 = assemble_reduced_generator(&spin, coeffs, &p, ModelOrder::Third)?;
                let m3 = build_reduced_model(&p, n, ModelOrder::Third)?;
                let target = superoperator_matrix(n + 1, |r| m3.apply(r) - completion_term(&p, &spin.sz, r));
                worst3 = worst3.max(max_abs(&(g3.superoperator() - target)));
            }
        }
    }
    Ok(vec![
        Check::below("second-order generator equivalence (N <= 6)", worst2, 1e-12),
        Check::below("third-order generator equivalence minus completion (N <= 6)", worst3, 1e-12),
    ])
}

/// Rank-one Kossakowski matrix across the parameter grid.
pub fn factorization_checks() -> cavsqueeze::Result<Vec<Check>> {
    let mut out = Vec::new();
    for eps in EPS_GRID {
        for d in D_GRID {
            let p = ModelParams::scaled(eps, d, 1.0);
            let f = verify_jump_factorization(&p)?;
            let kt = derive_params(&p).kappa_tilde;
            out.push(Check::below(
                format!("Kossakowski determinant eps={eps} d={d} (relative to kappa_tilde^2)"),
                f.determinant.abs() / (kt * kt),
                1e-12,
            ));
            out.push(Check::below(
                format!("jump operator reconstruction eps={eps} d={d}"),
                f.jump_residual,
                1e-10,
            ));
        }
    }
    Ok(out)
}

pub fn phase_checks() -> Vec<Check> {
    vec![
        Check::below("theta_s(d=0) = pi", (reduced_jump_phase(0.0) - PI).abs(), 1e-15),
        Check::below("phi_opt(d=1) = -pi/2", (optimal_homodyne_phase(1.0) + FRAC_PI_2).abs(), 1e-15),
    ]
}

/// Small integrator property suite.
pub fn integrator_checks() -> cavsqueeze::Result<Vec<Check>> {
    let mut out = Vec::new();

    // single-spin dephasing
    let p = ModelParams::scaled(0.05, 0.0, 1.0);
    let kt = derive_params(&p).kappa_tilde;
    let bm = BlockModel::from_model(&build_reduced_model(&p, 1, ModelOrder::Second)?)?;
    let st = BandedState::from_dense(&css_x_state(1)?.rho, 2, 1, 1)?;
    let run = evolve_master_equation(&bm, &st, &TimeGrid::new(10.0 / kt, 1.0 / kt)?, Tolerances::default())?;
    let err = run
        .times
        .iter()
        .zip(&run.states)
        .map(|(t, s)| (s.block(0, 1)[0].re - 0.5 * (-kt * t / 2.0).exp()).abs())
        .fold(0.0, f64::max);
    out.push(Check::below("single-spin dephasing <sx>(t)", err, 1e-8));

    // free cavity relaxation
    let p = ModelParams::scaled(0.0, 0.6, 1.0);
    let (model, state) = build_full_model(&p, 1, Some(20), InitialCavity::LabVacuum)?;
    let bm = BlockModel::from_model(&model)?;
    let st = BandedState::from_dense(&state.rho, 2, 21, 1)?;
    let cav = cavity_operators(20)?;
    let alpha = derive_params(&p).alpha;
    let run = evolve_master_equation(&bm, &st, &TimeGrid::new(4.0, 0.5)?, Tolerances::default())?;
    let err = run
        .times
        .iter()
        .zip(&run.states)
        .map(|(t, s)| (s.block_expectation(&cav.b) + alpha * (C64::new(-0.5, p.delta) * *t).exp()).norm())
        .fold(0.0, f64::max);
    out.push(Check::below("free cavity <b>(t)", err, 1e-6));

    // trace, Hermiticity and positivity on a coupled full model
    let p = ModelParams::scaled(0.05, 1.0, 1.0);
    let (model, state) = build_full_model(&p, 3, Some(10), InitialCavity::LabVacuum)?;
    let bm = BlockModel::from_model(&model)?;
    let st = BandedState::from_dense(&state.rho, 4, 11, 3)?;
    let run = evolve_master_equation(&bm, &st, &TimeGrid::new(5.0, 1.0)?, Tolerances::default())?;
    let d = run.diagnostics;
    out.push(Check::below("full model trace error", d.max_trace_error, 1e-9));
    out.push(Check::below("full model Hermiticity error", d.max_hermiticity_error, 1e-12));
    out.push(Check::below("full model negative eigenvalue", (-d.min_eigenvalue).max(0.0), 1e-8));

    // zero-noise stochastic step is the Euler step
    let p = ModelParams::scaled(0.033, 0.7, 1.0);
    let bm = BlockModel::from_model(&build_reduced_model(&p, 4, ModelOrder::Third)?)?;
    let st = BandedState::from_dense(&css_x_state(4)?.rho, 5, 1, 4)?;
    let mut stepped = st.clone();
    sme_step(&bm, &st, 1e-2, 0.0, &mut stepped);
    let mut euler = st.clone();
    bm.lindblad(&st, &mut euler);
    for (e, x) in euler.data.iter_mut().zip(&st.data) {
        *e = x + *e * 1e-2;
    }
    euler.normalize();
    euler.hermitize();
    let diff = stepped.data.iter().zip(&euler.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    out.push(Check { name: "zero-noise stochastic step equals Euler step".into(), passed: diff == 0.0, observed: diff, bound: 0.0 });
    Ok(out)
}

/// Runs every group; `quick` skips the coefficient quadrature.
pub fn run_all(quick: bool) -> cavsqueeze::Result<Vec<Check>> {
    let mut all = Vec::new();
    if !quick {
        all.extend(coefficient_checks()?);
    }
    all.extend(generator_checks()?);
    all.extend(factorization_checks()?);
    all.extend(phase_checks());
    all.extend(integrator_checks()?);
    Ok(all)
}

