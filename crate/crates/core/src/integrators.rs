//! Deterministic master-equation propagation (Dormand-Prince 5(4)) and Itô
//! homodyne trajectories (Euler-Maruyama, plus an exact sampler for models
//! whose operators are all diagonal in Sz).

use crate::blocks::{BandedState, BlockModel, SpinBand};
use crate::hilbert::{partial_trace_cavity, QuantumState, SpaceTag};
use crate::models::{derive_params, LindbladModel, ModelOrder, ModelParams};
use crate::montecarlo::{trajectory_seed, GaussianStream};
use crate::observables::{
    default_polarization_tol, photon_number_banded, spin_moments_band, squeezing_parameter, SpinMoments,
};
use crate::{Error, Result, C64};

/// Output sampling grid on [0, t_end]; `dt_step` is used by stochastic runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub dt_record: f64,
    pub dt_step: Option<f64>,
}

impl TimeGrid {
    pub fn new(t_end: f64, dt_record: f64) -> Result<Self> {
        if !(t_end > 0.0 && dt_record > 0.0 && dt_record <= t_end) {
            return Err(Error::Domain(format!(
                "need 0 < dt_record <= t_end, got dt_record = {dt_record}, t_end = {t_end}"
            )));
        }
        let n = (t_end / dt_record).round();
        if (n * dt_record - t_end).abs() > 1e-9 * t_end {
            return Err(Error::Domain(format!(
                "t_end = {t_end} is not a multiple of dt_record = {dt_record}"
            )));
        }
        Ok(Self { t_end, dt_record, dt_step: None })
    }

    /// Evenly spaced grid with `n_records` intervals.
    pub fn with_records(t_end: f64, n_records: usize) -> Result<Self> {
        Self::new(t_end, t_end / n_records.max(1) as f64)
    }

    pub fn with_step(mut self, dt_step: f64) -> Result<Self> {
        if !(dt_step > 0.0 && dt_step <= self.dt_record) {
            return Err(Error::Domain(format!(
                "need 0 < dt_step <= dt_record, got dt_step = {dt_step}"
            )));
        }
        let ratio = self.dt_record / dt_step;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio {
            return Err(Error::Domain(format!(
                "dt_record = {} is not a multiple of dt_step = {dt_step}",
                self.dt_record
            )));
        }
        self.dt_step = Some(dt_step);
        Ok(self)
    }

    /// Largest step not above `dt_max` that divides dt_record evenly.
    pub fn with_step_at_most(self, dt_max: f64) -> Result<Self> {
        // the slack keeps an exact divisor from rounding up to the next one
        let k = (self.dt_record / dt_max * (1.0 - 1e-12)).ceil().max(1.0);
        self.with_step(self.dt_record / k)
    }

    pub fn n_records(&self) -> usize {
        (self.t_end / self.dt_record).round() as usize
    }

    pub fn record_times(&self) -> Vec<f64> {
        (0..=self.n_records()).map(|k| k as f64 * self.dt_record).collect()
    }

    pub fn steps_per_record(&self) -> Result<usize> {
        let dt = self
            .dt_step
            .ok_or_else(|| Error::Domain("stochastic propagation needs dt_step".into()))?;
        Ok((self.dt_record / dt).round() as usize)
    }
}

/// Default stochastic step: 2e-3 over the fastest reduced-model rate, or
/// 2e-3/κ for the full model.
pub fn default_dt_step(p: &ModelParams, n_atoms: usize, order: ModelOrder) -> f64 {
    let dp = derive_params(p);
    let n2 = (n_atoms * n_atoms) as f64;
    match order {
        ModelOrder::Full => 2e-3 / p.kappa,
        _ => 2e-3 / (dp.kappa_tilde * n2).max(p.kappa).max(dp.chi.abs() * n2),
    }
}

/// Error control for the adaptive integrator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-8, atol: 1e-11 }
    }
}

/// Worst values seen at record points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    /// max |Tr ρ - 1|
    pub max_trace_error: f64,
    /// largest anti-Hermitian entry before re-Hermitization
    pub max_hermiticity_error: f64,
    pub min_eigenvalue: f64,
    pub steps: usize,
    pub rejected: usize,
    /// stochastic steps that had to be split
    pub retries: usize,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            max_trace_error: 0.0,
            max_hermiticity_error: 0.0,
            min_eigenvalue: f64::INFINITY,
            steps: 0,
            rejected: 0,
            retries: 0,
        }
    }
}

impl Diagnostics {
    fn inspect(&mut self, state: &mut BandedState) {
        self.max_trace_error = self.max_trace_error.max((state.trace() - C64::from(1.0)).norm());
        self.max_hermiticity_error = self.max_hermiticity_error.max(state.hermiticity_error());
        state.hermitize();
        self.min_eigenvalue = self.min_eigenvalue.min(state.min_eigenvalue());
    }

    pub fn merge(&mut self, other: &Diagnostics) {
        self.max_trace_error = self.max_trace_error.max(other.max_trace_error);
        self.max_hermiticity_error = self.max_hermiticity_error.max(other.max_hermiticity_error);
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
        self.steps += other.steps;
        self.rejected += other.rejected;
        self.retries += other.retries;
    }
}

// Dormand-Prince 5(4) tableau
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

/// Integrates the master equation on the block representation, calling
/// `observe(index, t, state)` at every record time (state re-Hermitized).
pub fn evolve_master_equation_with<F>(
    model: &BlockModel,
    rho0: &BandedState,
    grid: &TimeGrid,
    tol: Tolerances,
    mut observe: F,
) -> Result<Diagnostics>
where
    F: FnMut(usize, f64, &BandedState) -> Result<()>,
{
    let times = grid.record_times();
    let mut diag = Diagnostics::default();
    let mut y = rho0.clone();
    diag.inspect(&mut y);
    observe(0, 0.0, &y)?;

    let len = y.data.len();
    let mut k: Vec<BandedState> = (0..7).map(|_| y.clone()).collect();
    let mut stage = y.clone();
    model.lindblad(&y, &mut k[0]);

    let mut t = 0.0;
    let mut h = {
        let fy = k[0].data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let yy = y.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if fy > 0.0 { (0.01 * yy / fy).min(grid.dt_record) } else { grid.dt_record }
    };

    for (r, &t_rec) in times.iter().enumerate().skip(1) {
        while t < t_rec {
            let remaining = t_rec - t;
            let clipped = h >= remaining;
            let h_try = if clipped { remaining } else { h };
            for s in 1..7 {
                let (done, rest) = k.split_at_mut(s);
                for i in 0..len {
                    let mut acc = C64::from(0.0);
                    for (j, kj) in done.iter().enumerate() {
                        if A[s][j] != 0.0 {
                            acc += kj.data[i] * A[s][j];
                        }
                    }
                    stage.data[i] = y.data[i] + acc * h_try;
                }
                model.lindblad(&stage, &mut rest[0]);
            }
            // stage now holds the 5th-order solution, k[6] its derivative
            let mut err: f64 = 0.0;
            for i in 0..len {
                let mut e = C64::from(0.0);
                for (j, kj) in k.iter().enumerate() {
                    if E[j] != 0.0 {
                        e += kj.data[i] * E[j];
                    }
                }
                let scale = tol.atol + tol.rtol * y.data[i].norm().max(stage.data[i].norm());
                err = err.max((e * h_try).norm() / scale);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                std::mem::swap(&mut y, &mut stage);
                k.swap(0, 6);
                t = if clipped { t_rec } else { t + h_try };
                diag.steps += 1;
                let proposal = h_try * factor.min(if err > 0.5 { 1.0 } else { 5.0 });
                h = if clipped { h.max(proposal) } else { proposal };
            } else {
                diag.rejected += 1;
                h = h_try * factor;
            }
            if h < 1e-13 * t.max(1.0) {
                return Err(Error::Stiffness { t, h });
            }
        }
        debug_assert!(C[6] == 1.0);
        diag.inspect(&mut y);
        model.lindblad(&y, &mut k[0]);
        observe(r, t_rec, &y)?;
    }
    Ok(diag)
}

/// Deterministic run returning the states at every record time.
pub struct MasterEquationRun {
    pub times: Vec<f64>,
    pub states: Vec<BandedState>,
    pub diagnostics: Diagnostics,
}

pub fn evolve_master_equation(
    model: &BlockModel,
    rho0: &BandedState,
    grid: &TimeGrid,
    tol: Tolerances,
) -> Result<MasterEquationRun> {
    let mut states = Vec::with_capacity(grid.n_records() + 1);
    let diagnostics = evolve_master_equation_with(model, rho0, grid, tol, |_, _, s| {
        states.push(s.clone());
        Ok(())
    })?;
    Ok(MasterEquationRun { times: grid.record_times(), states, diagnostics })
}

/// Dense convenience wrapper: full model and state in, dense states out.
pub fn evolve_dense(
    model: &LindbladModel,
    rho0: &QuantumState,
    grid: &TimeGrid,
    tol: Tolerances,
) -> Result<Vec<QuantumState>> {
    let bm = BlockModel::from_model(model)?;
    let start = BandedState::from_dense(&rho0.rho, bm.n_spin, bm.m, bm.n_spin)?;
    let run = evolve_master_equation(&bm, &start, grid, tol)?;
    run.states
        .iter()
        .map(|s| QuantumState::new(s.to_dense(), model.space))
        .collect()
}

/// Observables extracted at one record time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub moments: SpinMoments,
    pub xi2: f64,
    pub photon_number: Option<f64>,
}

/// Spin band of a state, also for models kept as a single dense block.
pub fn spin_band_of(space: &SpaceTag, state: &BandedState) -> Result<SpinBand> {
    if state.n_spin == space.spin_dim() {
        return state.spin_band();
    }
    let dense = QuantumState::new(state.to_dense(), *space)?;
    let spin = match space {
        SpaceTag::Composite { .. } => partial_trace_cavity(&dense)?.rho,
        SpaceTag::Spin { .. } => dense.rho,
    };
    Ok(SpinBand::from_dense(&spin))
}

/// Spin moments, ξ² and (for composite spaces, when parameters are given)
/// the lab-frame photon number.
pub fn sample_state(
    space: &SpaceTag,
    state: &BandedState,
    t: f64,
    photon_params: Option<&ModelParams>,
) -> Result<Sample> {
    let moments = spin_moments_band(&spin_band_of(space, state)?);
    let xi2 = squeezing_parameter(&moments, default_polarization_tol(moments.n_atoms))?;
    let photon_number = match (space, photon_params) {
        (SpaceTag::Composite { .. }, Some(p)) if state.n_spin == space.spin_dim() => {
            Some(photon_number_banded(state, p))
        }
        (SpaceTag::Composite { .. }, Some(p)) => {
            let banded = BandedState::from_dense(&state.to_dense(), space.spin_dim(), space.cavity_dim(), 0)?;
            Some(photon_number_banded(&banded, p))
        }
        _ => None,
    };
    Ok(Sample { t, moments, xi2, photon_number })
}

/// Deterministic run sampled at every record time.
pub fn evolve_samples(
    model: &BlockModel,
    rho0: &BandedState,
    grid: &TimeGrid,
    tol: Tolerances,
    photon_params: Option<&ModelParams>,
) -> Result<(Vec<Sample>, Diagnostics)> {
    let mut samples = Vec::with_capacity(grid.n_records() + 1);
    let diag = evolve_master_equation_with(model, rho0, grid, tol, |_, t, s| {
        samples.push(sample_state(&model.space, s, t, photon_params)?);
        Ok(())
    })?;
    Ok((samples, diag))
}

/// Negative diagonal entries below this trigger a step split.
pub const NEGATIVITY_TOL: f64 = 1e-4;
const MAX_SPLITS: u32 = 3;

struct SmeWork {
    drift: BandedState,
    back: BandedState,
}

impl SmeWork {
    fn new(like: &BandedState) -> Self {
        Self { drift: like.clone(), back: like.clone() }
    }
}

/// One Itô Euler-Maruyama step ρ + ℒρ dt + √η ℋ[L']ρ dW, renormalized and
/// Hermitized. Returns √η⟨L' + L'†⟩ dt, the deterministic part of the
/// photocurrent increment.
pub fn sme_step(model: &BlockModel, x: &BandedState, dt: f64, dw: f64, out: &mut BandedState) -> f64 {
    let mut work = SmeWork::new(x);
    sme_step_in(model, x, dt, dw, out, &mut work)
}

fn sme_step_in(model: &BlockModel, x: &BandedState, dt: f64, dw: f64, out: &mut BandedState, work: &mut SmeWork) -> f64 {
    model.lindblad(x, &mut work.drift);
    let mean = model.backaction(x, &mut work.back);
    let noise = model.eta.sqrt() * dw;
    for ((o, &xi), (&d, &b)) in out
        .data
        .iter_mut()
        .zip(&x.data)
        .zip(work.drift.data.iter().zip(&work.back.data))
    {
        *o = xi + d * dt + b * noise;
    }
    out.normalize();
    out.hermitize();
    model.eta.sqrt() * mean * dt
}

/// Step with Brownian-bridge splitting when the result has a significantly
/// negative diagonal. Returns the deterministic photocurrent increment.
#[allow(clippy::too_many_arguments)]
fn sme_step_checked(
    model: &BlockModel,
    x: &BandedState,
    t: f64,
    dt: f64,
    dw: f64,
    out: &mut BandedState,
    work: &mut SmeWork,
    noise: &mut GaussianStream,
    depth: u32,
    diag: &mut Diagnostics,
) -> Result<f64> {
    let signal = sme_step_in(model, x, dt, dw, out, work);
    let worst = out.min_diagonal();
    if worst >= -NEGATIVITY_TOL {
        return Ok(signal);
    }
    if depth >= MAX_SPLITS {
        return Err(Error::StepSize { t, min_eig: worst, retries: depth });
    }
    diag.retries += 1;
    let half = dt / 2.0;
    let dw1 = dw / 2.0 + 0.5 * dt.sqrt() * noise.next_normal();
    let mut mid = x.clone();
    let s1 = sme_step_checked(model, x, t, half, dw1, &mut mid, work, noise, depth + 1, diag)?;
    let s2 = sme_step_checked(model, &mid, t + half, half, dw - dw1, out, work, noise, depth + 1, diag)?;
    Ok(s1 + s2)
}

/// Per-record data of one trajectory that do not depend on the observer.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTrace {
    pub seed: u64,
    pub times: Vec<f64>,
    /// Mean photocurrent over each record interval (first entry: 0).
    pub photocurrent: Vec<f64>,
    /// Total Wiener increment W(t_end).
    pub wiener_sum: f64,
    pub diagnostics: Diagnostics,
}

/// Euler-Maruyama homodyne trajectory. Each step draws `refinement` standard
/// normals and sums them, so a run with twice the step and refinement 2 sees
/// the same Brownian path as one with refinement 1.
pub fn evolve_homodyne_trajectory_with<F>(
    model: &BlockModel,
    rho0: &BandedState,
    grid: &TimeGrid,
    seed: u64,
    refinement: u32,
    mut observe: F,
) -> Result<TrajectoryTrace>
where
    F: FnMut(usize, f64, &BandedState) -> Result<()>,
{
    if !model.is_monitored() {
        return Err(Error::Domain("homodyne trajectory needs a monitored channel".into()));
    }
    let steps = grid.steps_per_record()?;
    let dt = grid.dt_record / steps as f64;
    let times = grid.record_times();
    let mut noise = GaussianStream::new(seed);
    let mut diag = Diagnostics::default();
    let mut x = rho0.clone();
    diag.inspect(&mut x);
    observe(0, 0.0, &x)?;
    let mut next = x.clone();
    let mut work = SmeWork::new(&x);
    let mut photocurrent = vec![0.0; times.len()];
    let mut wiener_sum = 0.0;
    let sub_scale = (dt / refinement.max(1) as f64).sqrt();
    for r in 1..times.len() {
        let mut charge = 0.0;
        for s in 0..steps {
            let t = times[r - 1] + s as f64 * dt;
            let dw: f64 = (0..refinement.max(1)).map(|_| noise.next_normal()).sum::<f64>() * sub_scale;
            let signal =
                sme_step_checked(model, &x, t, dt, dw, &mut next, &mut work, &mut noise, 0, &mut diag)?;
            std::mem::swap(&mut x, &mut next);
            charge += signal + dw;
            wiener_sum += dw;
            diag.steps += 1;
        }
        photocurrent[r] = charge / grid.dt_record;
        diag.inspect(&mut x);
        observe(r, times[r], &x)?;
    }
    Ok(TrajectoryTrace { seed, times, photocurrent, wiener_sum, diagnostics: diag })
}

/// Trajectory with sampled observables.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub trace: TrajectoryTrace,
    pub samples: Vec<Sample>,
}

impl TrajectoryRecord {
    pub fn xi2(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.xi2).collect()
    }
}

pub fn evolve_homodyne_trajectory(
    model: &BlockModel,
    rho0: &BandedState,
    grid: &TimeGrid,
    seed: u64,
    photon_params: Option<&ModelParams>,
) -> Result<TrajectoryRecord> {
    let mut samples = Vec::with_capacity(grid.n_records() + 1);
    let trace = evolve_homodyne_trajectory_with(model, rho0, grid, seed, 1, |_, t, s| {
        samples.push(sample_state(&model.space, s, t, photon_params)?);
        Ok(())
    })?;
    Ok(TrajectoryRecord { trace, samples })
}

/// Exact conditional trajectory for models whose Hamiltonian and jumps are
/// all diagonal numbers. The record Y(t) = ∫I dt is drawn as a_k t + W(t)
/// with k sampled from the initial Sz populations; each retained element
/// then has the closed form
/// ρ_ij ∝ ρ_ij(0) exp(λ_ij t + c_ij Y - c_ij² t / 2),
/// normalized by the diagonal. No time step is involved.
pub fn sample_commuting_trajectory_with<F>(
    model: &BlockModel,
    rho0: &BandedState,
    grid: &TimeGrid,
    seed: u64,
    mut observe: F,
) -> Result<TrajectoryTrace>
where
    F: FnMut(usize, f64, &BandedState) -> Result<()>,
{
    let spec = model
        .scalar_spectrum()
        .ok_or_else(|| Error::Domain("exact sampling needs diagonal (1x1 block) operators".into()))?;
    let meas = spec
        .measured
        .as_ref()
        .ok_or_else(|| Error::Domain("homodyne trajectory needs a monitored channel".into()))?;
    let n = rho0.n_spin;
    let root_eta = spec.eta.sqrt();
    let times = grid.record_times();
    let mut noise = GaussianStream::new(seed);

    // outcome sector
    let u = noise.next_uniform();
    let mut acc = 0.0;
    let mut sector = n - 1;
    for i in 0..n {
        acc += rho0.block(i, 0)[0].re.max(0.0);
        if u < acc {
            sector = i;
            break;
        }
    }
    let drift_of = |i: usize| root_eta * 2.0 * meas[i].re;
    let a = drift_of(sector);

    let mut rate = rho0.clone();
    let mut coupling = rho0.clone();
    let mut log0 = rho0.clone();
    for off in 0..=rho0.band {
        for i in 0..n - off {
            let j = i + off;
            let mut lam = C64::new(0.0, -(spec.hamiltonian[i] - spec.hamiltonian[j]));
            for l in &spec.jumps {
                lam += l[i] * l[j].conj() - 0.5 * (l[i].norm_sqr() + l[j].norm_sqr());
            }
            let k = rho0.index(i, off);
            rate.data[k] = lam;
            coupling.data[k] = (meas[i] + meas[j].conj()) * root_eta;
            let z = rho0.data[k];
            log0.data[k] = if z == C64::from(0.0) { C64::new(f64::NEG_INFINITY, 0.0) } else { z.ln() };
        }
    }

    let mut diag = Diagnostics::default();
    let mut state = rho0.clone();
    diag.inspect(&mut state);
    observe(0, 0.0, &state)?;
    let mut photocurrent = vec![0.0; times.len()];
    let mut w = 0.0;
    for r in 1..times.len() {
        let t = times[r];
        let dt = t - times[r - 1];
        let dw = dt.sqrt() * noise.next_normal();
        w += dw;
        photocurrent[r] = a + dw / dt;
        let y = a * t + w;
        let mut log_state = log0.clone();
        for (k, l) in log_state.data.iter_mut().enumerate() {
            if l.re == f64::NEG_INFINITY {
                continue;
            }
            let c = coupling.data[k];
            *l += rate.data[k] * t + c * y - c * c * (0.5 * t);
        }
        let shift = (0..n)
            .map(|i| log_state.block(i, 0)[0].re)
            .fold(f64::NEG_INFINITY, f64::max);
        for (dst, l) in state.data.iter_mut().zip(&log_state.data) {
            *dst = if l.re == f64::NEG_INFINITY {
                C64::from(0.0)
            } else {
                (l - shift).exp()
            };
        }
        state.normalize();
        diag.steps += 1;
        diag.inspect(&mut state);
        observe(r, t, &state)?;
    }
    Ok(TrajectoryTrace { seed, times, photocurrent, wiener_sum: w, diagnostics: diag })
}

/// Result of [`unconditional_consistency_check`].
#[derive(Clone, Debug)]
pub struct ConsistencyReport {
    pub times: Vec<f64>,
    /// Trace distance ½‖ρ̄ - ρ‖₁ between the trajectory average and the
    /// deterministic solution at each record time.
    pub trace_distance: Vec<f64>,
    /// Frobenius deviation ‖ρ̄ - ρ‖_F at each record time.
    pub deviation: Vec<f64>,
    /// Standard error of ρ̄ in Frobenius norm, sqrt(Σ Var(ρ_ij) / n).
    pub stderr: Vec<f64>,
    pub n_traj: usize,
}

impl ConsistencyReport {
    pub fn max_trace_distance(&self) -> f64 {
        self.trace_distance.iter().cloned().fold(0.0, f64::max)
    }

    /// max_t deviation / stderr over times where the stderr is nonzero.
    pub fn max_deviation_ratio(&self) -> f64 {
        self.deviation
            .iter()
            .zip(&self.stderr)
            .filter(|(_, &s)| s > 0.0)
            .map(|(d, s)| d / s)
            .fold(0.0, f64::max)
    }
}

/// Averages Euler-Maruyama conditional states over `n_traj` trajectories and
/// compares with the deterministic master equation.
pub fn unconditional_consistency_check(
    model: &BlockModel,
    rho0: &BandedState,
    grid: &TimeGrid,
    n_traj: usize,
    base_seed: u64,
) -> Result<ConsistencyReport> {
    if n_traj < 100 {
        return Err(Error::Domain(format!("consistency check needs n_traj >= 100, got {n_traj}")));
    }
    if !rho0.is_full() {
        return Err(Error::Shape("consistency check needs a full-band state".into()));
    }
    let det = evolve_master_equation(model, rho0, grid, Tolerances { rtol: 1e-10, atol: 1e-13 })?;
    let n_rec = det.states.len();
    let len = rho0.data.len();
    let mut sum = vec![vec![C64::from(0.0); len]; n_rec];
    let mut sum_sq = vec![vec![0.0f64; len]; n_rec];

    let runs = crate::montecarlo::map_ordered(n_traj, |k| {
        let seed = trajectory_seed(base_seed, k as u64);
        let mut states = Vec::with_capacity(n_rec);
        evolve_homodyne_trajectory_with(model, rho0, grid, seed, 1, |_, _, s| {
            states.push(s.data.clone());
            Ok(())
        })
        .map_err(|e| Error::Ensemble { index: k, seed, source: Box::new(e) })?;
        Ok(states)
    }, |states: Vec<Vec<C64>>| {
        for (r, st) in states.iter().enumerate() {
            for (i, z) in st.iter().enumerate() {
                sum[r][i] += z;
                sum_sq[r][i] += z.norm_sqr();
            }
        }
    });
    runs?;

    let nf = n_traj as f64;
    let mut trace_distance = Vec::with_capacity(n_rec);
    let mut deviation = Vec::with_capacity(n_rec);
    let mut stderr = Vec::with_capacity(n_rec);
    for r in 0..n_rec {
        let mut mean = rho0.clone();
        let mut var_total = 0.0;
        for i in 0..len {
            let m = sum[r][i] / nf;
            mean.data[i] = m;
            let var = (sum_sq[r][i] / nf - m.norm_sqr()).max(0.0) * nf / (nf - 1.0);
            // off-diagonal blocks stand for two entries of the full matrix
            var_total += var * weight(rho0, i);
        }
        let diff_dense = mean.to_dense() - det.states[r].to_dense();
        let eig = nalgebra::SymmetricEigen::new((&diff_dense + diff_dense.adjoint()) * C64::from(0.5));
        trace_distance.push(0.5 * eig.eigenvalues.iter().map(|v| v.abs()).sum::<f64>());
        deviation.push(diff_dense.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt());
        stderr.push((var_total / nf).sqrt());
    }
    Ok(ConsistencyReport { times: det.times, trace_distance, deviation, stderr, n_traj })
}

/// 1 for entries of diagonal blocks, 2 for off-diagonal blocks.
fn weight(state: &BandedState, flat_index: usize) -> f64 {
    let mm = state.m * state.m;
    let block = flat_index / mm;
    if block < state.n_spin {
        1.0
    } else {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{css_x_state, spin_operators};
    use crate::models::{build_full_model, build_reduced_model, InitialCavity};
    use crate::max_abs;

    fn reduced(n: usize, d: f64, order: ModelOrder) -> (BlockModel, BandedState) {
        let p = ModelParams::scaled(0.033, d, 1.0);
        let model = build_reduced_model(&p, n, order).unwrap();
        let bm = BlockModel::from_model(&model).unwrap();
        let rho = css_x_state(n).unwrap().rho;
        let st = BandedState::from_dense(&rho, n + 1, 1, n).unwrap();
        (bm, st)
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 0.1).is_ok());
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 2.0).is_err());
        let g = TimeGrid::new(1.0, 0.1).unwrap();
        assert!(g.with_step(0.03).is_err());
        let g = g.with_step(0.025).unwrap();
        assert_eq!(g.steps_per_record().unwrap(), 4);
        assert_eq!(g.record_times().len(), 11);
        let g = TimeGrid::new(1.0, 0.1).unwrap().with_step_at_most(0.03).unwrap();
        assert_eq!(g.steps_per_record().unwrap(), 4);
    }

    #[test]
    fn single_spin_dephasing() {
        let p = ModelParams::scaled(0.05, 0.0, 1.0);
        let kt = derive_params(&p).kappa_tilde;
        let model = build_reduced_model(&p, 1, ModelOrder::Second).unwrap();
        let bm = BlockModel::from_model(&model).unwrap();
        let rho = css_x_state(1).unwrap().rho;
        let st = BandedState::from_dense(&rho, 2, 1, 1).unwrap();
        let grid = TimeGrid::new(10.0 / kt, 1.0 / kt).unwrap();
        let run = evolve_master_equation(&bm, &st, &grid, Tolerances::default()).unwrap();
        for (t, s) in run.times.iter().zip(&run.states) {
            let sx = s.block(0, 1)[0].re; // ⟨sx⟩ = Re ρ01 for one spin
            assert!((sx - 0.5 * (-kt * t / 2.0).exp()).abs() < 1e-8);
        }
        assert!(run.diagnostics.max_trace_error < 1e-9);
    }

    #[test]
    fn free_cavity_relaxes() {
        let p = ModelParams::scaled(0.0, 0.6, 1.0);
        let (model, st) = build_full_model(&p, 1, Some(20), InitialCavity::LabVacuum).unwrap();
        let bm = BlockModel::from_model(&model).unwrap();
        let rho = BandedState::from_dense(&st.rho, 2, 21, 1).unwrap();
        let grid = TimeGrid::new(4.0, 0.5).unwrap();
        let alpha = derive_params(&p).alpha;
        let cav = crate::hilbert::cavity_operators(20).unwrap();
        let run = evolve_master_equation(&bm, &rho, &grid, Tolerances::default()).unwrap();
        for (t, s) in run.times.iter().zip(&run.states) {
            let b = s.block_expectation(&cav.b);
            let expected = -alpha * (C64::new(-0.5, p.delta) * *t).exp();
            assert!((b - expected).norm() < 1e-6, "t = {t}");
            let n = photon_number_banded(s, &p);
            let lab = (alpha + b).norm_sqr();
            assert!((n - lab).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_hygiene_full_model() {
        let p = ModelParams::scaled(0.05, 1.0, 1.0);
        let (model, st) = build_full_model(&p, 3, Some(10), InitialCavity::LabVacuum).unwrap();
        let bm = BlockModel::from_model(&model).unwrap();
        let rho = BandedState::from_dense(&st.rho, 4, 11, 3).unwrap();
        let grid = TimeGrid::new(5.0, 1.0).unwrap();
        let run = evolve_master_equation(&bm, &rho, &grid, Tolerances::default()).unwrap();
        let d = run.diagnostics;
        assert!(d.max_trace_error < 1e-9);
        assert!(d.max_hermiticity_error < 1e-12);
        assert!(d.min_eigenvalue > -1e-8);
        // banded run agrees with the full-band run on the retained blocks
        let narrow = BandedState::from_dense(&st.rho, 4, 11, 1).unwrap();
        let run2 = evolve_master_equation(&bm, &narrow, &grid, Tolerances::default()).unwrap();
        let last = run.states.last().unwrap();
        let last2 = run2.states.last().unwrap();
        for i in 0..3 {
            let a = last.block(i, 1);
            let b = last2.block(i, 1);
            let diff = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(diff < 1e-7);
        }
    }

    #[test]
    fn zero_noise_step_is_euler() {
        let (bm, st) = reduced(4, 0.7, ModelOrder::Third);
        let dt = 1e-2;
        let mut out = st.clone();
        sme_step(&bm, &st, dt, 0.0, &mut out);
        let mut euler = st.clone();
        bm.lindblad(&st, &mut euler);
        for (e, x) in euler.data.iter_mut().zip(&st.data) {
            *e = x + *e * dt;
        }
        euler.normalize();
        euler.hermitize();
        assert_eq!(out, euler);
    }

    #[test]
    fn sme_matches_dense_formula() {
        let p = ModelParams::scaled(0.05, 0.8, 1.0).with_homodyne(0.6, 0.4);
        let model = build_reduced_model(&p, 3, ModelOrder::Third).unwrap();
        let bm = BlockModel::from_model(&model).unwrap();
        let rho = css_x_state(3).unwrap().rho;
        let st = BandedState::from_dense(&rho, 4, 1, 3).unwrap();
        let (dt, dw) = (1e-2, 0.07);
        let mut out = st.clone();
        sme_step(&bm, &st, dt, dw, &mut out);
        let (lp, eta) = model.measured_operator().unwrap();
        let mean = 2.0 * (&lp * &rho).trace().re;
        let h = &lp * &rho + &rho * lp.adjoint() - &rho * C64::from(mean);
        let mut dense = &rho + model.apply(&rho) * C64::from(dt) + h * C64::from(eta.sqrt() * dw);
        let tr = dense.trace();
        dense /= tr;
        assert!(max_abs(&(out.to_dense() - dense)) < 1e-15);
    }

    #[test]
    fn eta_zero_trajectory_tracks_master_equation() {
        let p = ModelParams::scaled(0.05, 1.0, 1.0).with_homodyne(0.0, 0.0);
        let model = build_reduced_model(&p, 6, ModelOrder::Second).unwrap();
        let bm = BlockModel::from_model(&model).unwrap();
        let rho = css_x_state(6).unwrap().rho;
        let st = BandedState::from_dense(&rho, 7, 1, 6).unwrap();
        let kt = derive_params(&p).kappa_tilde;
        let grid = TimeGrid::new(0.2 / kt, 0.05 / kt).unwrap().with_step_at_most(1e-3 / kt).unwrap();
        let det = evolve_master_equation(&bm, &st, &grid, Tolerances::default()).unwrap();
        let mut worst: f64 = 0.0;
        evolve_homodyne_trajectory_with(&bm, &st, &grid, 5, 1, |r, _, s| {
            let diff = s.data.iter().zip(&det.states[r].data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            worst = worst.max(diff);
            Ok(())
        })
        .unwrap();
        assert!(worst < 1e-3, "worst = {worst}");
    }

    #[test]
    fn qnd_variance_non_increasing() {
        let p = ModelParams::scaled(0.05, 0.0, 1.0);
        let model = build_reduced_model(&p, 10, ModelOrder::Second).unwrap();
        let bm = BlockModel::from_model(&model).unwrap();
        let spin = spin_operators(10).unwrap();
        let rho = css_x_state(10).unwrap().rho;
        let st = BandedState::from_dense(&rho, 11, 1, 10).unwrap();
        let kt = derive_params(&p).kappa_tilde;
        let grid = TimeGrid::new(0.5 / kt, 0.005 / kt).unwrap().with_step_at_most(2e-3 / (kt * 100.0)).unwrap();
        let mut last = f64::INFINITY;
        evolve_homodyne_trajectory_with(&bm, &st, &grid, 17, 1, |_, _, s| {
            let d = s.to_dense();
            let m = crate::observables::spin_moments(&d, &spin)?;
            assert!(m.covariance[2][2] <= last + 1e-9);
            last = m.covariance[2][2];
            Ok(())
        })
        .unwrap();
        assert!(last < 2.5 / 2.0);
    }

    #[test]
    fn commuting_sampler_is_reproducible_and_normalized() {
        let (bm, _) = reduced(30, 0.0, ModelOrder::Second);
        let rho = css_x_state(30).unwrap().rho;
        let st = BandedState::from_dense(&rho, 31, 1, 2).unwrap();
        let grid = TimeGrid::new(2.0, 0.1).unwrap();
        let mut first = Vec::new();
        let tr1 = sample_commuting_trajectory_with(&bm, &st, &grid, 99, |_, _, s| {
            assert!((s.trace().re - 1.0).abs() < 1e-12);
            first.push(s.clone());
            Ok(())
        })
        .unwrap();
        let mut k = 0;
        let tr2 = sample_commuting_trajectory_with(&bm, &st, &grid, 99, |_, _, s| {
            assert_eq!(s, &first[k]);
            k += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(tr1, tr2);
    }

    #[test]
    fn commuting_sampler_agrees_with_euler_maruyama_in_law() {
        // ensemble means of Sz² from both schemes agree within sampling error
        let (bm, _) = reduced(8, 0.0, ModelOrder::Second);
        let rho = css_x_state(8).unwrap().rho;
        let st = BandedState::from_dense(&rho, 9, 1, 8).unwrap();
        let kt = derive_params(&ModelParams::scaled(0.033, 0.0, 1.0)).kappa_tilde;
        let grid = TimeGrid::new(0.3 / kt, 0.3 / kt).unwrap().with_step_at_most(2e-3 / (kt * 100.0)).unwrap();
        let var_sz = |s: &BandedState| {
            let b = s.spin_band().unwrap();
            let (sz, sz2, ..) = b.ladder_moments();
            sz2 - sz * sz
        };
        let n = 300;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for k in 0..n {
            let mut last = 0.0;
            sample_commuting_trajectory_with(&bm, &st, &grid, 1000 + k, |_, _, s| {
                last = var_sz(s);
                Ok(())
            })
            .unwrap();
            a.push(last);
            evolve_homodyne_trajectory_with(&bm, &st, &grid, 5000 + k, 1, |_, _, s| {
                last = var_sz(s);
                Ok(())
            })
            .unwrap();
            b.push(last);
        }
        let stats = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            (m, (var / v.len() as f64).sqrt())
        };
        let (ma, sa) = stats(&a);
        let (mb, sb) = stats(&b);
        assert!((ma - mb).abs() < 4.0 * (sa * sa + sb * sb).sqrt() + 0.02 * ma, "{ma} vs {mb}");
        // QND variance formula Var = (N/4) / (1 + N κ̃ t) at η = 1
        let expected = 2.0 / (1.0 + 8.0 * 0.3);
        assert!((ma - expected).abs() < 0.1 * expected, "{ma} vs {expected}");
    }
}
