//! Spin moments, the Wineland squeezing parameter, optimum extraction, photon
//! number and power-law fits.

use crate::blocks::{BandedState, SpinBand};
use crate::hilbert::{QuantumState, SpinAlgebra};
use crate::models::{derive_params, ModelParams};
use crate::{CMatrix, Error, Result, C64};

/// Mean spin vector and symmetrized covariance matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpinMoments {
    pub n_atoms: usize,
    pub mean: [f64; 3],
    pub covariance: [[f64; 3]; 3],
}

impl SpinMoments {
    pub fn polarization(&self) -> f64 {
        norm(&self.mean)
    }

    /// Smallest variance in the plane orthogonal to the mean spin.
    pub fn transverse_min_variance(&self) -> Result<f64> {
        let len = self.polarization();
        if len == 0.0 {
            return Err(Error::IllDefinedSqueezing { polarization: 0.0, tol: 0.0 });
        }
        let n = [self.mean[0] / len, self.mean[1] / len, self.mean[2] / len];
        let (u, v) = transverse_basis(&n);
        Ok(min_variance_in_plane(&self.covariance, &u, &v))
    }
}

fn norm(v: &[f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn quad_form(c: &[[f64; 3]; 3], a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i] * c[i][j] * b[j];
        }
    }
    s
}

/// Orthonormal pair spanning the plane orthogonal to unit vector `n`, built
/// from the coordinate axis least aligned with `n`.
pub fn transverse_basis(n: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let k = (0..3)
        .min_by(|&a, &b| n[a].abs().total_cmp(&n[b].abs()))
        .expect("three axes");
    let mut u = [0.0; 3];
    u[k] = 1.0;
    let proj = dot(&u, n);
    for i in 0..3 {
        u[i] -= proj * n[i];
    }
    let len = norm(&u);
    for x in &mut u {
        *x /= len;
    }
    let v = cross(n, &u);
    (u, v)
}

/// Smaller eigenvalue of the covariance restricted to span(u, v).
pub fn min_variance_in_plane(c: &[[f64; 3]; 3], u: &[f64; 3], v: &[f64; 3]) -> f64 {
    let a = quad_form(c, u, u);
    let b = 0.5 * (quad_form(c, u, v) + quad_form(c, v, u));
    let d = quad_form(c, v, v);
    let half_gap = (0.5 * (a - d)).hypot(b);
    0.5 * (a + d) - half_gap
}

/// Moments from a dense spin density matrix by direct operator traces.
pub fn spin_moments(rho: &CMatrix, spin: &SpinAlgebra) -> Result<SpinMoments> {
    if rho.shape() != (spin.dim, spin.dim) {
        return Err(Error::Shape(format!(
            "spin state is {:?}, algebra dimension {}",
            rho.shape(),
            spin.dim
        )));
    }
    let ops = [&spin.sx, &spin.sy, &spin.sz];
    let tr = |a: &CMatrix| (a * rho).trace().re;
    let mean = [tr(ops[0]), tr(ops[1]), tr(ops[2])];
    let mut covariance = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in a..3 {
            let sym = (ops[a] * ops[b] + ops[b] * ops[a]) * C64::from(0.5);
            let v = tr(&sym) - mean[a] * mean[b];
            covariance[a][b] = v;
            covariance[b][a] = v;
        }
    }
    Ok(SpinMoments { n_atoms: spin.n_atoms, mean, covariance })
}

/// Moments from the |i - j| ≤ 2 band of the spin density matrix.
pub fn spin_moments_band(band: &SpinBand) -> SpinMoments {
    let n = band.n_atoms();
    let s = n as f64 / 2.0;
    let (sz, sz2, sp, sp2, spz) = band.ladder_moments();
    let mean = [sp.re, sp.im, sz];
    // ⟨S+S- + S-S+⟩ = 2(S(S+1) - ⟨Sz²⟩)
    let k = 2.0 * (s * (s + 1.0) - sz2);
    let xx = 0.25 * (2.0 * sp2.re + k);
    let yy = 0.25 * (-2.0 * sp2.re + k);
    let xy = 0.5 * sp2.im;
    let xz = 0.5 * spz.re;
    let yz = 0.5 * spz.im;
    let second = [[xx, xy, xz], [xy, yy, yz], [xz, yz, sz2]];
    let mut covariance = [[0.0; 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            covariance[a][b] = second[a][b] - mean[a] * mean[b];
        }
    }
    SpinMoments { n_atoms: n, mean, covariance }
}

/// Default polarization threshold 1e-6·N.
pub fn default_polarization_tol(n_atoms: usize) -> f64 {
    1e-6 * n_atoms as f64
}

/// Wineland parameter ξ² = N min⊥Var / |⟨S⟩|².
pub fn squeezing_parameter(m: &SpinMoments, tol_polarization: f64) -> Result<f64> {
    let len = m.polarization();
    if !(len > tol_polarization) {
        return Err(Error::IllDefinedSqueezing { polarization: len, tol: tol_polarization });
    }
    Ok(m.n_atoms as f64 * m.transverse_min_variance()? / (len * len))
}

/// ξ² of a dense spin state with the default polarization threshold.
pub fn squeezing_of_state(rho: &CMatrix, spin: &SpinAlgebra) -> Result<f64> {
    squeezing_parameter(&spin_moments(rho, spin)?, default_polarization_tol(spin.n_atoms))
}

/// Location and value of the minimum of a sampled ξ²(t) curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimalSqueezing {
    pub t_m: f64,
    pub xi2_m: f64,
    /// Grid index of the sampled minimum.
    pub index: usize,
    /// Minimum at the last sample: the window is too short.
    pub boundary: bool,
    /// Minimum at the first sample with the curve rising right after it.
    pub at_start: bool,
}

/// Grid minimum (earliest on ties) refined by a parabola through the three
/// bracketing samples.
pub fn find_optimal_squeezing(times: &[f64], xi2: &[f64]) -> Result<OptimalSqueezing> {
    if times.len() != xi2.len() {
        return Err(Error::Shape(format!("{} times vs {} values", times.len(), xi2.len())));
    }
    if times.len() < 5 {
        return Err(Error::Domain(format!("need at least 5 samples, got {}", times.len())));
    }
    let mut k = 0;
    for (i, &v) in xi2.iter().enumerate() {
        if v < xi2[k] {
            k = i;
        }
    }
    let last = xi2.len() - 1;
    let grid = OptimalSqueezing {
        t_m: times[k],
        xi2_m: xi2[k],
        index: k,
        boundary: k == last,
        at_start: k == 0 && xi2[1] > xi2[0],
    };
    if k == 0 || k == last {
        return Ok(grid);
    }
    let (t0, t1, t2) = (times[k - 1], times[k], times[k + 1]);
    let (y0, y1, y2) = (xi2[k - 1], xi2[k], xi2[k + 1]);
    // Newton form: y = y0 + a (t - t0) + c (t - t0)(t - t1)
    let a = (y1 - y0) / (t1 - t0);
    let c = ((y2 - y1) / (t2 - t1) - a) / (t2 - t0);
    if !(c > 0.0) {
        return Ok(grid);
    }
    let t_star = 0.5 * (t0 + t1) - a / (2.0 * c);
    if !(t0..=t2).contains(&t_star) {
        return Ok(grid);
    }
    let y_star = y0 + a * (t_star - t0) + c * (t_star - t0) * (t_star - t1);
    Ok(OptimalSqueezing { t_m: t_star, xi2_m: y_star.min(y1), ..grid })
}

/// Lab-frame photon number ⟨(b† + α*)(b + α)⟩ of a composite state.
pub fn photon_number(state: &QuantumState, p: &ModelParams) -> Result<f64> {
    let n_spin = state.space.spin_dim();
    let m = state.space.cavity_dim();
    if m < 2 {
        return Err(Error::Shape("photon number needs a composite state".into()));
    }
    let banded = BandedState::from_dense(&state.rho, n_spin, m, 0)?;
    Ok(photon_number_banded(&banded, p))
}

/// As [`photon_number`] on the Sz-block representation.
pub fn photon_number_banded(state: &BandedState, p: &ModelParams) -> f64 {
    let alpha = derive_params(p).alpha;
    let m = state.m;
    let mut op = CMatrix::zeros(m, m);
    for n in 0..m {
        op[(n, n)] = C64::from(n as f64 + alpha.norm_sqr());
        if n + 1 < m {
            let r = ((n + 1) as f64).sqrt();
            op[(n + 1, n)] = alpha * r;
            op[(n, n + 1)] = alpha.conj() * r;
        }
    }
    state.block_expectation(&op).re
}

/// Least-squares power law ξ²_m = prefactor · N^exponent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub n_range: (f64, f64),
    pub n_points: usize,
}

pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 4 {
        return Err(Error::Domain(format!("scaling fit needs at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|&(n, x)| !(n > 0.0) || !(x > 0.0)) {
        return Err(Error::Domain("scaling fit needs positive N and xi2".into()));
    }
    let k = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("scaling fit needs distinct N values".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let n_min = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let n_max = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(ScalingFit {
        exponent: slope,
        prefactor: intercept.exp(),
        r_squared,
        n_range: (n_min, n_max),
        n_points: points.len(),
    })
}

/// Large-N optimum of the unconditional second-order model,
/// 5 / (2 (3d⁴)^{1/5}) N^{-2/5}.
pub fn unconditional_asymptote(n_atoms: f64, d: f64) -> f64 {
    unconditional_prefactor(d) * n_atoms.powf(-0.4)
}

pub fn unconditional_prefactor(d: f64) -> f64 {
    5.0 / (2.0 * (3.0 * d.powi(4)).powf(0.2))
}

/// Large-N optimum of the resonant conditional (QND) second-order model,
/// (3/2) N^{-2/3}.
pub fn qnd_asymptote(n_atoms: f64) -> f64 {
    1.5 * n_atoms.powf(-2.0 / 3.0)
}

/// Optimum of pure one-axis twisting to leading order, 3^{2/3} / (2 N^{2/3}).
pub fn oat_optimum(n_atoms: f64) -> f64 {
    3f64.powf(2.0 / 3.0) / (2.0 * n_atoms.powf(2.0 / 3.0))
}
