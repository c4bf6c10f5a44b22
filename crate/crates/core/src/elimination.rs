//! Adiabatic-elimination coefficients computed from the cavity's
//! Heisenberg-picture dynamics, and the reduced generators assembled from them.

use crate::hilbert::{trace_product, CavityAlgebra, SpinAlgebra};
use crate::models::{derive_params, ModelOrder, ModelParams};
use crate::{max_abs, CMatrix, CVector, Error, Result, C64, I};

/// Upper end of the time integrals, in units of 1/κ.
pub const INTEGRATION_WINDOW: f64 = 40.0;

/// Cavity Hamiltonian in the displaced frame, -δ b†b.
fn cavity_hamiltonian(cavity: &CavityAlgebra, p: &ModelParams) -> CMatrix {
    &cavity.number_op * C64::from(-p.delta)
}

/// Coupling operator B = b†b + α b† + α* b.
pub fn coupling_operator(cavity: &CavityAlgebra, p: &ModelParams) -> CMatrix {
    let alpha = derive_params(p).alpha;
    &cavity.number_op + cavity.b_dag() * alpha + &cavity.b * alpha.conj()
}

/// Vectorized ℒ_B (Schrödinger picture), column stacking.
pub fn cavity_generator(cavity: &CavityAlgebra, p: &ModelParams) -> CMatrix {
    let id = cavity.identity();
    let h = cavity_hamiltonian(cavity, p);
    let n = &cavity.number_op;
    let b = &cavity.b;
    let k = C64::from(p.kappa);
    let half = C64::from(0.5);
    (id.kronecker(&h) - h.transpose().kronecker(&id)) * (-I)
        + (b.conjugate().kronecker(b) - (id.kronecker(n) + n.transpose().kronecker(&id)) * half) * k
}

/// Vectorized adjoint ℒ*_B(X) = i[H_B, X] + κ(b†Xb - ½{b†b, X}).
pub fn adjoint_generator(cavity: &CavityAlgebra, p: &ModelParams) -> CMatrix {
    let id = cavity.identity();
    let h = cavity_hamiltonian(cavity, p);
    let n = &cavity.number_op;
    let b = &cavity.b;
    let k = C64::from(p.kappa);
    let half = C64::from(0.5);
    (id.kronecker(&h) - h.transpose().kronecker(&id)) * I
        + (b.transpose().kronecker(&cavity.b_dag())
            - (id.kronecker(n) + n.transpose().kronecker(&id)) * half)
            * k
}

fn vec_of(x: &CMatrix) -> CVector {
    CVector::from_column_slice(x.as_slice())
}

fn unvec(v: &CVector, dim: usize) -> CMatrix {
    CMatrix::from_column_slice(dim, dim, v.as_slice())
}

/// e^{tℒ*_B}(X) by exponentiating the vectorized adjoint generator.
pub fn heisenberg_propagate(
    cavity: &CavityAlgebra,
    p: &ModelParams,
    x: &CMatrix,
    t: f64,
) -> Result<CMatrix> {
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("propagation time must be >= 0, got {t}")));
    }
    let dim = cavity.dim();
    if x.shape() != (dim, dim) {
        return Err(Error::Shape(format!("operator is {:?}, cavity space is {dim}", x.shape())));
    }
    let prop = (adjoint_generator(cavity, p) * C64::from(t)).exp();
    Ok(unvec(&(prop * vec_of(x)), dim))
}

/// Unique stationary state of ℒ_B from the smallest singular vector.
#[derive(Clone, Debug)]
pub struct StationaryState {
    pub rho: CMatrix,
    /// ‖ℒ_B(ρ̄)‖ (max entry).
    pub residual: f64,
    /// Second-smallest singular value of the vectorized generator.
    pub gap: f64,
}

pub fn stationary_state(cavity: &CavityAlgebra, p: &ModelParams) -> Result<StationaryState> {
    let dim = cavity.dim();
    let gen = cavity_generator(cavity, p);
    let svd = gen.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let null = v_t.row(order[0]).adjoint();
    let gap = svd.singular_values[order[1]];
    // the generator is non-normal; its second singular value falls off
    // roughly as κ/√(n_max) while the eigenvalue gap stays at κ/2
    if gap <= p.kappa / (4.0 * dim as f64) {
        return Err(Error::Construction(format!(
            "cavity stationary state not unique (second singular value {gap:.3e})"
        )));
    }
    let mut rho = unvec(&null, dim);
    rho = (&rho + rho.adjoint()) * C64::from(0.5);
    let tr = rho.trace();
    rho /= tr;
    let residual = max_abs(&unvec(&(gen * vec_of(&rho)), dim));
    Ok(StationaryState { rho, residual, gap })
}

/// Closed-form two-time correlation functions of the cavity coupling operator.
#[derive(Clone, Copy, Debug)]
pub struct CorrelationFunctions {
    pub alpha_sq: f64,
    pub delta: f64,
    pub kappa: f64,
}

impl CorrelationFunctions {
    fn decay(&self, t: f64) -> C64 {
        (C64::new(-self.kappa / 2.0, self.delta) * t).exp()
    }

    pub fn c(&self, t: f64) -> C64 {
        self.decay(t) * self.alpha_sq
    }

    pub fn c_tilde(&self, t: f64) -> C64 {
        self.c(t).conj()
    }

    pub fn d(&self, t: f64, tp: f64) -> C64 {
        self.decay(t) * (C64::from((-self.kappa * tp).exp()) + self.decay(tp)) * (0.5 * self.alpha_sq)
    }

    pub fn f(&self, t: f64, tp: f64) -> C64 {
        self.decay(t) * (self.decay(tp) - (-self.kappa * tp).exp()) * (0.5 * self.alpha_sq)
    }

    pub fn d_tilde(&self, t: f64, tp: f64) -> C64 {
        self.d(t, tp).conj()
    }

    pub fn f_tilde(&self, t: f64, tp: f64) -> C64 {
        -self.f(t, tp).conj()
    }
}

pub fn closed_form_correlations(p: &ModelParams) -> CorrelationFunctions {
    CorrelationFunctions {
        alpha_sq: derive_params(p).alpha.norm_sqr(),
        delta: p.delta,
        kappa: p.kappa,
    }
}

/// Second- and third-order elimination coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoefficientSet {
    pub c: C64,
    pub d: C64,
    pub f: C64,
}

impl CoefficientSet {
    /// Largest relative deviation of the three coefficients from `other`.
    pub fn max_relative_error(&self, other: &CoefficientSet) -> f64 {
        [(self.c, other.c), (self.d, other.d), (self.f, other.f)]
            .iter()
            .map(|(a, b)| (a - b).norm() / b.norm().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max)
    }
}

/// Closed-form C, D, F.
pub fn closed_form_coefficients(p: &ModelParams) -> CoefficientSet {
    let dp = derive_params(p);
    let (d, n0, k) = (dp.d, dp.n0, p.kappa);
    let w = 1.0 + d * d;
    CoefficientSet {
        c: I * C64::new(d, -1.0) * (2.0 * n0 / (k * w * w)),
        d: C64::new(3.0 - d * d, d * (d * d + 5.0)) * (n0 / (k * k * w.powi(3))),
        f: C64::new(1.0 - 3.0 * d * d, d * (3.0 - d * d)) * (n0 / (k * k * w.powi(3))),
    }
}

/// Correlation functions evaluated as traces of Heisenberg-evolved operators.
pub struct HeisenbergCorrelations {
    dim: usize,
    adjoint: CMatrix,
    b: CMatrix,
    b0: CMatrix,
    right: CMatrix,
    left: CMatrix,
}

impl HeisenbergCorrelations {
    /// Uses the numerically determined stationary state of ℒ_B.
    pub fn new(cavity: &CavityAlgebra, p: &ModelParams) -> Result<Self> {
        let st = stationary_state(cavity, p)?;
        if st.residual > 1e-12 {
            return Err(Error::Construction(format!(
                "stationary residual {:.3e} too large",
                st.residual
            )));
        }
        Ok(Self::with_state(cavity, p, &st.rho))
    }

    pub fn with_state(cavity: &CavityAlgebra, p: &ModelParams, rho_bar: &CMatrix) -> Self {
        let b = coupling_operator(cavity, p);
        let mean = trace_product(&b, rho_bar);
        let b0 = &b - cavity.identity() * mean;
        Self {
            dim: cavity.dim(),
            adjoint: adjoint_generator(cavity, p),
            right: &b0 * rho_bar,
            left: rho_bar * &b0,
            b,
            b0,
        }
    }

    fn evolve(&self, x: &CMatrix, t: f64) -> CMatrix {
        let prop = (&self.adjoint * C64::from(t)).exp();
        unvec(&(prop * vec_of(x)), self.dim)
    }

    fn anti(&self, tp: f64) -> CMatrix {
        let bt = self.evolve(&self.b, tp);
        &bt * &self.b0 + &self.b0 * &bt
    }

    fn comm(&self, tp: f64) -> CMatrix {
        let bt = self.evolve(&self.b, tp);
        &bt * &self.b0 - &self.b0 * &bt
    }

    pub fn c(&self, t: f64) -> C64 {
        trace_product(&self.evolve(&self.b, t), &self.right)
    }

    pub fn c_tilde(&self, t: f64) -> C64 {
        trace_product(&self.evolve(&self.b, t), &self.left)
    }

    pub fn d(&self, t: f64, tp: f64) -> C64 {
        trace_product(&self.evolve(&self.anti(tp), t), &self.right) * 0.5
    }

    pub fn f(&self, t: f64, tp: f64) -> C64 {
        trace_product(&self.evolve(&self.comm(tp), t), &self.right) * 0.5
    }

    pub fn d_tilde(&self, t: f64, tp: f64) -> C64 {
        trace_product(&self.evolve(&self.anti(tp), t), &self.left) * 0.5
    }

    pub fn f_tilde(&self, t: f64, tp: f64) -> C64 {
        trace_product(&self.evolve(&self.comm(tp), t), &self.left) * 0.5
    }
}

/// Result of [`coefficients_by_quadrature`].
#[derive(Clone, Debug)]
pub struct QuadratureReport {
    pub coefficients: CoefficientSet,
    /// Largest estimated contribution of t > 40/κ, relative to the integral.
    pub tail_bound: f64,
    /// Relative change between the last two refinement levels.
    pub refinement_change: f64,
    pub panels: usize,
}

const GL_ORDER: usize = 10;
const MAX_LEVELS: usize = 12;

/// Gauss-Legendre nodes and weights on [0, 1].
fn gauss_legendre_unit(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push(((1.0 - x) / 2.0, 1.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Panel propagators for ∫₀ᵀ e^{tA} v dt, built once per panel count and
/// shared by every integrand with the same generator.
struct FlowRule<'a> {
    gen: &'a CMatrix,
    t_end: f64,
    nodes: Vec<(f64, f64)>,
    // (panels, e^{hA}, Σ_j w_j h e^{x_j hA}, e^{-hA})
    levels: Vec<(usize, CMatrix, CMatrix, CMatrix)>,
}

impl<'a> FlowRule<'a> {
    fn new(gen: &'a CMatrix, t_end: f64) -> Self {
        Self { gen, t_end, nodes: gauss_legendre_unit(GL_ORDER), levels: Vec::new() }
    }

    fn level(&mut self, panels: usize) -> usize {
        if let Some(i) = self.levels.iter().position(|l| l.0 == panels) {
            return i;
        }
        let h = self.t_end / panels as f64;
        let step = (self.gen * C64::from(h)).exp();
        let mut panel = CMatrix::zeros(self.gen.nrows(), self.gen.ncols());
        for &(x, w) in &self.nodes {
            panel += (self.gen * C64::from(x * h)).exp() * C64::from(w * h);
        }
        let back = (self.gen * C64::from(-h)).exp();
        self.levels.push((panels, step, panel, back));
        self.levels.len() - 1
    }

    /// Integral with `panels` Gauss-Legendre panels, marching the panel
    /// propagator; also returns the integrand at T.
    fn integrate(&mut self, v: &CVector, panels: usize) -> (CVector, CVector) {
        let i = self.level(panels);
        let (_, step, panel, _) = &self.levels[i];
        let mut acc = CVector::zeros(v.len());
        let mut cur = v.clone();
        for _ in 0..panels {
            acc += panel * &cur;
            cur = step * cur;
        }
        (acc, cur)
    }

    /// Doubles the panel count until two levels agree to relative `tol`,
    /// then adds the tail estimate.
    fn adaptive(&mut self, v: &CVector, tol: f64, min_rate: f64) -> Result<FlowIntegral> {
        let mut panels = 8;
        let (mut prev, _) = self.integrate(v, panels);
        for _ in 0..MAX_LEVELS {
            panels *= 2;
            let (next, at_end) = self.integrate(v, panels);
            let scale = next.norm().max(f64::MIN_POSITIVE);
            let change = (&next - &prev).norm() / scale;
            if change <= tol {
                let i = self.level(panels);
                let back = &self.levels[i].3 * &at_end;
                let tail = tail_estimate(&at_end, &back, self.t_end / panels as f64, min_rate);
                return Ok(FlowIntegral { body: next, tail, change, panels });
            }
            prev = next;
        }
        Err(Error::Tolerance(format!("no convergence to {tol:.1e} with {panels} panels")))
    }
}

/// Exponential-tail estimate ∫_T^∞ from the integrand at T and at T - Δ
/// (`back`). Components decaying slower than `min_rate` are treated as noise
/// or as stationary parts and left out.
fn tail_estimate(at_end: &CVector, back: &CVector, probe: f64, min_rate: f64) -> CVector {
    at_end.zip_map(back, |u, v| {
        if u.norm() == 0.0 || v.norm() == 0.0 {
            return C64::from(0.0);
        }
        let rate = (u / v).ln() / probe;
        if rate.re < -min_rate {
            -u / rate
        } else {
            C64::from(0.0)
        }
    })
}

struct FlowIntegral {
    body: CVector,
    tail: CVector,
    change: f64,
    panels: usize,
}

impl FlowIntegral {
    fn total(&self) -> CVector {
        &self.body + &self.tail
    }
}

/// C, D and F from traces of Heisenberg-evolved operators, integrated over
/// [0, 40/κ] (both times for D and F) with an exponential tail correction.
///
/// The double integrals are bilinear in e^{tℒ*} and B(t'), so they are taken
/// as ∫dt e^{tℒ*}({∫dt' B(t'), B₀}) and contracted with B₀ρ̄ afterwards.
pub fn coefficients_by_quadrature(cavity: &CavityAlgebra, p: &ModelParams, tol: f64) -> Result<QuadratureReport> {
    p.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    let st = stationary_state(cavity, p)?;
    if st.residual > 1e-12 {
        return Err(Error::Construction(format!(
            "b-frame vacuum is not stationary within truncation (residual {:.3e})",
            st.residual
        )));
    }
    let hc = HeisenbergCorrelations::with_state(cavity, p, &st.rho);
    let dim = cavity.dim();
    let t_end = INTEGRATION_WINDOW / p.kappa;
    // quadrature error is checked against the integral norms; aim lower so
    // the contracted scalars land inside `tol`
    let inner_tol = tol * 1e-2;

    let min_rate = p.kappa / 4.0;
    let mut rule = FlowRule::new(&hc.adjoint, t_end);
    let fb = rule.adaptive(&vec_of(&hc.b), inner_tol, min_rate)?;
    let ib = unvec(&fb.total(), dim);
    let anti = &ib * &hc.b0 + &hc.b0 * &ib;
    let comm = &ib * &hc.b0 - &hc.b0 * &ib;
    let fa = rule.adaptive(&vec_of(&anti), inner_tol, min_rate)?;
    let fc = rule.adaptive(&vec_of(&comm), inner_tol, min_rate)?;

    let contract = |v: &CVector, scale: f64| trace_product(&unvec(v, dim), &hc.right) * scale;
    let coefficients = CoefficientSet {
        c: contract(&fb.total(), 1.0),
        d: contract(&fa.total(), 0.5),
        f: contract(&fc.total(), 0.5),
    };
    // tail of C, and of D and F including the part inherited through ∫B(t')dt'
    let tb = unvec(&fb.tail, dim);
    let mut inherited = |sign: f64| {
        let x = &tb * &hc.b0 + &hc.b0 * &tb * C64::from(sign);
        let flow = rule.adaptive(&vec_of(&x), inner_tol, min_rate)?;
        Ok::<_, Error>(flow.total())
    };
    let tails = [
        (contract(&fb.tail, 1.0), coefficients.c),
        (contract(&(inherited(1.0)? + &fa.tail), 0.5), coefficients.d),
        (contract(&(inherited(-1.0)? + &fc.tail), 0.5), coefficients.f),
    ];
    let tail_bound = tails
        .iter()
        .map(|(t, c)| t.norm() / c.norm().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(QuadratureReport {
        coefficients,
        tail_bound,
        refinement_change: fb.change.max(fa.change).max(fc.change),
        panels: fb.panels.max(fa.panels).max(fc.panels),
    })
}

/// Tr(B ρ̄) for the numerical stationary state is zero to 1e-12.
pub fn first_order_vanishes(cavity: &CavityAlgebra, p: &ModelParams) -> Result<bool> {
    let st = stationary_state(cavity, p)?;
    Ok(first_order_vanishes_with(cavity, p, &st.rho))
}

/// As [`first_order_vanishes`] for a supplied cavity state.
pub fn first_order_vanishes_with(cavity: &CavityAlgebra, p: &ModelParams, rho_bar: &CMatrix) -> bool {
    trace_product(&coupling_operator(cavity, p), rho_bar).norm() < 1e-12
}

/// Reduced generator built from a coefficient set.
#[derive(Clone, Debug)]
pub struct ReducedGenerator {
    sz: CMatrix,
    g: f64,
    coefficients: CoefficientSet,
    order: ModelOrder,
}

pub fn assemble_reduced_generator(
    spin: &SpinAlgebra,
    coefficients: CoefficientSet,
    p: &ModelParams,
    order: ModelOrder,
) -> Result<ReducedGenerator> {
    if order == ModelOrder::Full {
        return Err(Error::Domain("reduced generators are second or third order".into()));
    }
    Ok(ReducedGenerator { sz: spin.sz.clone(), g: p.g, coefficients, order })
}

impl ReducedGenerator {
    /// ε²ℒ₂(ρ) = -g²(C[Sz, Szρ] - C*[Sz, ρSz]).
    pub fn second_order(&self, rho: &CMatrix) -> CMatrix {
        let sz = &self.sz;
        let c = self.coefficients.c;
        let comm = |a: &CMatrix, b: &CMatrix| a * b - b * a;
        (comm(sz, &(sz * rho)) * c - comm(sz, &(rho * sz)) * c.conj()) * C64::from(-self.g * self.g)
    }

    /// ε³ℒ₃(ρ) = ig³(D Sz[Sz,[Sz,ρ]] - D*[Sz,[Sz,ρ]]Sz + F Sz[Sz,{Sz,ρ}] + F*[Sz,{Sz,ρ}]Sz).
    pub fn third_order(&self, rho: &CMatrix) -> CMatrix {
        let sz = &self.sz;
        let CoefficientSet { d, f, .. } = self.coefficients;
        let c1 = sz * rho - rho * sz;
        let a1 = sz * rho + rho * sz;
        let cc = sz * &c1 - &c1 * sz;
        let ca = sz * &a1 - &a1 * sz;
        let out = sz * &cc * d - &cc * sz * d.conj() + sz * &ca * f + &ca * sz * f.conj();
        out * (I * self.g.powi(3))
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = self.second_order(rho);
        if self.order == ModelOrder::Third {
            out += self.third_order(rho);
        }
        out
    }

    pub fn superoperator(&self) -> CMatrix {
        crate::models::superoperator_matrix(self.sz.nrows(), |rho| self.apply(rho))
    }
}
