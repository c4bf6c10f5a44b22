//! Reproducible trajectory ensembles.
//!
//! Trajectory `k` of an ensemble with base seed `s` draws from a ChaCha8
//! stream seeded with `mix64(s ^ k·0x9E3779B97F4A7C15)`, where `mix64` is the
//! splitmix64 finalizer. Results are reduced in index order, so the worker
//! count never changes an output bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::blocks::{BandedState, BlockModel};
use crate::integrators::{
    evolve_homodyne_trajectory_with, sample_commuting_trajectory_with, sample_state, Diagnostics, TimeGrid,
};
use crate::models::ModelParams;
use crate::observables::{find_optimal_squeezing, OptimalSqueezing};
use crate::{Error, Result};

/// 2^64 / golden ratio.
pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trajectory_seed(base_seed: u64, k: u64) -> u64 {
    mix64(base_seed ^ GOLDEN_GAMMA.wrapping_mul(k))
}

/// Standard normals by Box-Muller on a ChaCha8 stream.
pub struct GaussianStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), spare: None }
    }

    /// Uniform on [0, 1).
    pub fn next_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.next_uniform(); // (0, 1]
        let u2 = self.next_uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

const CHUNK: usize = 32;

/// Runs `task(k)` for k in 0..n in parallel and feeds the results to
/// `reduce` in index order. Stops at the first failing chunk and returns the
/// error of the lowest failing index.
pub fn map_ordered<T, F, R>(n: usize, task: F, mut reduce: R) -> Result<()>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
    R: FnMut(T),
{
    let mut start = 0;
    while start < n {
        let end = (start + CHUNK).min(n);
        let results: Vec<Result<T>> = (start..end).into_par_iter().map(&task).collect();
        for r in results {
            reduce(r?);
        }
        start = end;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Exact sampler when every operator is diagonal, Euler-Maruyama otherwise.
    #[default]
    Auto,
    EulerMaruyama,
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSpec {
    pub n_traj: usize,
    pub base_seed: u64,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    /// Retained off-diagonal spin blocks of each conditional state; 2 is
    /// enough for all spin moments.
    pub band: usize,
    /// Normals summed per Euler-Maruyama step; a run at dt with refinement 2
    /// follows the same Brownian path as a run at dt/2 with refinement 1.
    pub noise_refinement: u32,
}

impl EnsembleSpec {
    pub fn new(n_traj: usize, base_seed: u64, grid: TimeGrid) -> Self {
        Self { n_traj, base_seed, grid, scheme: Scheme::Auto, band: 2, noise_refinement: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_traj == 0 {
            return Err(Error::InvalidParams("n_traj must be at least 1".into()));
        }
        if self.noise_refinement == 0 {
            return Err(Error::InvalidParams("noise_refinement must be at least 1".into()));
        }
        if self.band < 2 {
            return Err(Error::InvalidParams("band must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub mean_xi2: Vec<f64>,
    /// sample std / √n_traj; zero for a single trajectory
    pub stderr_xi2: Vec<f64>,
    pub mean_photocurrent: Vec<f64>,
    pub mean_sx: Vec<f64>,
    pub mean_sy: Vec<f64>,
    pub mean_sz: Vec<f64>,
    pub mean_varmin: Vec<f64>,
    pub mean_photon_number: Option<Vec<f64>>,
    pub xi2_curves: Vec<Vec<f64>>,
    pub per_traj_optima: Vec<OptimalSqueezing>,
    /// Minimum of the mean ξ² curve.
    pub optimum: OptimalSqueezing,
    pub n_traj: usize,
    pub diagnostics: Diagnostics,
}

impl EnsembleResult {
    pub fn single_trajectory(&self) -> bool {
        self.n_traj == 1
    }
}

struct TrajectoryOutput {
    xi2: Vec<f64>,
    photocurrent: Vec<f64>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    sz: Vec<f64>,
    varmin: Vec<f64>,
    photon: Vec<f64>,
    diagnostics: Diagnostics,
}

/// Band-limited copy of a full or wider state.
pub fn narrow_band(state: &BandedState, band: usize) -> BandedState {
    let band = band.min(state.n_spin - 1);
    let mut out = BandedState::zeros(state.n_spin, state.m, band);
    for off in 0..=band.min(state.band) {
        for i in 0..state.n_spin - off {
            out.block_mut(i, off).copy_from_slice(state.block(i, off));
        }
    }
    out
}

/// Runs the ensemble. `photon_params` enables photon-number recording for
/// full models.
pub fn run_ensemble(
    model: &BlockModel,
    rho0: &BandedState,
    spec: &EnsembleSpec,
    photon_params: Option<&ModelParams>,
) -> Result<EnsembleResult> {
    spec.validate()?;
    if !model.is_monitored() {
        return Err(Error::Domain("ensemble needs a monitored channel".into()));
    }
    let exact = match spec.scheme {
        Scheme::Auto => model.is_scalar(),
        Scheme::Exact => true,
        Scheme::EulerMaruyama => false,
    };
    let start = if model.is_spin_blocked() { narrow_band(rho0, spec.band) } else { rho0.clone() };
    let times = spec.grid.record_times();
    let n_rec = times.len();

    let task = |k: usize| -> Result<TrajectoryOutput> {
        let seed = trajectory_seed(spec.base_seed, k as u64);
        let mut out = TrajectoryOutput {
            xi2: Vec::with_capacity(n_rec),
            photocurrent: Vec::new(),
            sx: Vec::with_capacity(n_rec),
            sy: Vec::with_capacity(n_rec),
            sz: Vec::with_capacity(n_rec),
            varmin: Vec::with_capacity(n_rec),
            photon: Vec::new(),
            diagnostics: Diagnostics::default(),
        };
        let observe = |_: usize, t: f64, s: &BandedState| -> Result<()> {
            let sample = sample_state(&model.space, s, t, photon_params)?;
            out.xi2.push(sample.xi2);
            out.sx.push(sample.moments.mean[0]);
            out.sy.push(sample.moments.mean[1]);
            out.sz.push(sample.moments.mean[2]);
            out.varmin.push(sample.moments.transverse_min_variance()?);
            if let Some(n) = sample.photon_number {
                out.photon.push(n);
            }
            Ok(())
        };
        let trace = if exact {
            sample_commuting_trajectory_with(model, &start, &spec.grid, seed, observe)
        } else {
            evolve_homodyne_trajectory_with(model, &start, &spec.grid, seed, spec.noise_refinement, observe)
        }
        .map_err(|e| Error::Ensemble { index: k, seed, source: Box::new(e) })?;
        out.photocurrent = trace.photocurrent;
        out.diagnostics = trace.diagnostics;
        Ok(out)
    };

    let zeros = || vec![0.0; n_rec];
    let (mut s_xi2, mut s_xi2_sq, mut s_i) = (zeros(), zeros(), zeros());
    let (mut s_x, mut s_y, mut s_z, mut s_v, mut s_n) = (zeros(), zeros(), zeros(), zeros(), zeros());
    let mut has_photon = false;
    let mut curves = Vec::with_capacity(spec.n_traj);
    let mut optima = Vec::with_capacity(spec.n_traj);
    let mut diagnostics = Diagnostics::default();
    let mut first_err = None;
    map_ordered(spec.n_traj, task, |o| {
        for r in 0..n_rec {
            s_xi2[r] += o.xi2[r];
            s_xi2_sq[r] += o.xi2[r] * o.xi2[r];
            s_i[r] += o.photocurrent[r];
            s_x[r] += o.sx[r];
            s_y[r] += o.sy[r];
            s_z[r] += o.sz[r];
            s_v[r] += o.varmin[r];
        }
        if !o.photon.is_empty() {
            has_photon = true;
            for (acc, v) in s_n.iter_mut().zip(&o.photon) {
                *acc += v;
            }
        }
        diagnostics.merge(&o.diagnostics);
        match find_optimal_squeezing(&times, &o.xi2) {
            Ok(opt) => optima.push(opt),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
        curves.push(o.xi2);
    })?;
    if let Some(e) = first_err {
        return Err(e);
    }

    let nf = spec.n_traj as f64;
    let mean = |v: Vec<f64>| v.into_iter().map(|x| x / nf).collect::<Vec<_>>();
    let mean_xi2 = mean(s_xi2);
    let stderr_xi2 = if spec.n_traj < 2 {
        zeros()
    } else {
        mean_xi2
            .iter()
            .zip(&s_xi2_sq)
            .map(|(m, sq)| {
                let var = ((sq / nf - m * m) * nf / (nf - 1.0)).max(0.0);
                (var / nf).sqrt()
            })
            .collect()
    };
    let optimum = find_optimal_squeezing(&times, &mean_xi2)?;
    Ok(EnsembleResult {
        times,
        stderr_xi2,
        mean_photocurrent: mean(s_i),
        mean_sx: mean(s_x),
        mean_sy: mean(s_y),
        mean_sz: mean(s_z),
        mean_varmin: mean(s_v),
        mean_photon_number: has_photon.then(|| mean(s_n)),
        mean_xi2,
        xi2_curves: curves,
        per_traj_optima: optima,
        optimum,
        n_traj: spec.n_traj,
        diagnostics,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SummaryRow {
    pub t: f64,
    pub mean_xi2: f64,
    pub stderr: f64,
    pub mean_photocurrent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleSummary {
    pub rows: Vec<SummaryRow>,
    pub optimum: OptimalSqueezing,
    /// Batch-means standard error of ξ²_m.
    pub optimum_stderr: f64,
    /// Two-sided normal interval half-width at the requested confidence.
    pub optimum_half_width: f64,
    pub confidence: f64,
    pub batches: usize,
}

pub const SUMMARY_BATCHES: usize = 10;

/// Per-time rows plus the optimum with a batch-means error: trajectories are
/// split into (up to) 10 contiguous batches, the minimum of each batch-mean
/// curve is taken, and the spread of those minima gives the standard error.
pub fn summarize(result: &EnsembleResult, confidence: f64) -> Result<EnsembleSummary> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Domain(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    let rows = result
        .times
        .iter()
        .enumerate()
        .map(|(r, &t)| SummaryRow {
            t,
            mean_xi2: result.mean_xi2[r],
            stderr: result.stderr_xi2[r],
            mean_photocurrent: result.mean_photocurrent[r],
        })
        .collect();
    let n = result.xi2_curves.len();
    let batches = SUMMARY_BATCHES.min(n);
    let optimum_stderr = if batches < 2 {
        0.0
    } else {
        let mut minima = Vec::with_capacity(batches);
        for b in 0..batches {
            let (lo, hi) = (b * n / batches, (b + 1) * n / batches);
            let mut curve = vec![0.0; result.times.len()];
            for c in &result.xi2_curves[lo..hi] {
                for (acc, v) in curve.iter_mut().zip(c) {
                    *acc += v;
                }
            }
            let size = (hi - lo) as f64;
            curve.iter_mut().for_each(|v| *v /= size);
            minima.push(find_optimal_squeezing(&result.times, &curve)?.xi2_m);
        }
        let bf = batches as f64;
        let m = minima.iter().sum::<f64>() / bf;
        let var = minima.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (bf - 1.0);
        (var / bf).sqrt()
    };
    let z = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    Ok(EnsembleSummary {
        rows,
        optimum: result.optimum,
        optimum_stderr,
        optimum_half_width: z * optimum_stderr,
        confidence,
        batches,
    })
}
