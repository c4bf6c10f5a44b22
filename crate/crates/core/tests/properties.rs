use cavsqueeze::blocks::{BandedState, BlockModel};
use cavsqueeze::hilbert::{
    css_x_state, partial_trace_cavity, spin_operators, tensor_embed, QuantumState, SpaceTag,
};
use cavsqueeze::integrators::{
    evolve_homodyne_trajectory, evolve_master_equation, sme_step, TimeGrid, Tolerances,
};
use cavsqueeze::models::{
    build_full_model, build_reduced_model, derive_params, optimal_homodyne_phase, reduced_coefficients,
    reduced_jump_phase, InitialCavity, ModelOrder, ModelParams,
};
use cavsqueeze::montecarlo::{map_ordered, GaussianStream};
use cavsqueeze::observables::{
    min_variance_in_plane, spin_moments, squeezing_of_state, transverse_basis,
};
use cavsqueeze::{max_abs, CMatrix, C64};
use proptest::prelude::*;

fn random_state(dim: usize, entries: &[(f64, f64)]) -> CMatrix {
    let a = CMatrix::from_fn(dim, dim, |i, j| {
        let (re, im) = entries[(i * dim + j) % entries.len()];
        C64::new(re + if i == j { 0.3 } else { 0.0 }, im * (1.0 + i as f64 - j as f64).sin())
    });
    let rho = &a * a.adjoint();
    let tr = rho.trace();
    rho / tr
}

fn entries() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 7..40)
}

fn params() -> impl Strategy<Value = ModelParams> {
    (0.001f64..0.1, -4.0f64..4.0, 0.2f64..3.0, 0.3f64..3.0).prop_map(|(eps, d, beta, kappa)| {
        let mut p = ModelParams::scaled(eps, d, beta);
        p.g *= kappa;
        p.delta *= kappa;
        p.beta *= kappa;
        p.kappa = kappa;
        p
    })
}

fn wrap(x: f64) -> f64 {
    let t = x.rem_euclid(2.0 * std::f64::consts::PI);
    t.min(2.0 * std::f64::consts::PI - t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spin_algebra(n in 1usize..30) {
        let s = spin_operators(n).unwrap();
        let i = C64::new(0.0, 1.0);
        let comm = |a: &CMatrix, b: &CMatrix| a * b - b * a;
        prop_assert!(max_abs(&(comm(&s.sx, &s.sy) - &s.sz * i)) < 1e-10);
        prop_assert!(max_abs(&(comm(&s.sy, &s.sz) - &s.sx * i)) < 1e-10);
        let casimir = &s.sx * &s.sx + &s.sy * &s.sy + &s.sz * &s.sz;
        let j = n as f64 / 2.0;
        prop_assert!(max_abs(&(casimir - s.identity() * C64::from(j * (j + 1.0)))) < 1e-9);
    }

    #[test]
    fn partial_trace_undoes_embedding(n in 1usize..5, n_max in 1usize..5, e in entries(), f in entries()) {
        let rho_s = random_state(n + 1, &e);
        let sigma = random_state(n_max + 1, &f);
        let joint = tensor_embed(&rho_s, &sigma).unwrap();
        let st = QuantumState::new(joint, SpaceTag::Composite { n_atoms: n, n_max }).unwrap();
        let reduced = partial_trace_cavity(&st).unwrap();
        prop_assert!(max_abs(&(reduced.rho - rho_s)) < 1e-13);
    }

    #[test]
    fn css_has_unit_squeezing(n in 1usize..120) {
        let s = spin_operators(n).unwrap();
        let xi2 = squeezing_of_state(&css_x_state(n).unwrap().rho, &s).unwrap();
        prop_assert!((xi2 - 1.0).abs() < 1e-10, "{}", xi2);
    }

    #[test]
    fn derived_sign_invariants(p in params()) {
        let dp = derive_params(&p);
        prop_assert!(dp.kappa_tilde >= 0.0);
        prop_assert!(dp.chi * p.delta >= 0.0);
        let d = 2.0 * p.delta / p.kappa;
        prop_assert!(wrap(reduced_jump_phase(d) - optimal_homodyne_phase(d)) < 1e-12);
    }

    #[test]
    fn second_order_is_truncated_third(p in params(), n in 1usize..8) {
        let c3 = reduced_coefficients(&p, ModelOrder::Third).unwrap();
        let m2 = build_reduced_model(&p, n, ModelOrder::Second).unwrap();
        let m3 = build_reduced_model(&p, n, ModelOrder::Third).unwrap();
        let sz = spin_operators(n).unwrap().sz;
        let sz2 = &sz * &sz;
        let h = &m3.hamiltonian - &sz2 * &sz * C64::from(c3.hamiltonian[3]);
        let l = &m3.jumps[0] - &sz2 * c3.jump[2];
        let scale = 1.0 + max_abs(&m2.hamiltonian);
        prop_assert!(max_abs(&(&m2.hamiltonian - h)) < 1e-14 * scale);
        prop_assert!(max_abs(&(&m2.jumps[0] - l)) < 1e-14 * (1.0 + max_abs(&m2.jumps[0])));
        for m in [&m2, &m3] {
            for i in 0..=n {
                for j in 0..=n {
                    let v = m.hamiltonian[(i, j)];
                    prop_assert!(v.im == 0.0 && (i == j || v.re == 0.0));
                }
            }
        }
    }

    #[test]
    fn full_hamiltonian_is_hermitian(p in params(), n in 1usize..4) {
        let (m, _) = build_full_model(&p, n, None, InitialCavity::LabVacuum).unwrap();
        prop_assert!(max_abs(&(&m.hamiltonian - m.hamiltonian.adjoint())) < 1e-12);
    }

    #[test]
    fn transverse_rotation_invariance(n in 2usize..8, e in entries(), angle in 0.0f64..6.3) {
        let s = spin_operators(n).unwrap();
        let m = spin_moments(&random_state(n + 1, &e), &s).unwrap();
        let len = m.polarization();
        prop_assume!(len > 1e-3);
        let unit = [m.mean[0] / len, m.mean[1] / len, m.mean[2] / len];
        let (u, v) = transverse_basis(&unit);
        let (c, sn) = (angle.cos(), angle.sin());
        let ur = [c * u[0] + sn * v[0], c * u[1] + sn * v[1], c * u[2] + sn * v[2]];
        let vr = [c * v[0] - sn * u[0], c * v[1] - sn * u[1], c * v[2] - sn * u[2]];
        let a = min_variance_in_plane(&m.covariance, &u, &v);
        let b = min_variance_in_plane(&m.covariance, &ur, &vr);
        prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn covariance_is_psd_and_obeys_uncertainty(n in 1usize..8, e in entries()) {
        let s = spin_operators(n).unwrap();
        let m = spin_moments(&random_state(n + 1, &e), &s).unwrap();
        let c = nalgebra::Matrix3::from_fn(|i, j| m.covariance[i][j]);
        let eig = nalgebra::SymmetricEigen::new(c).eigenvalues;
        prop_assert!(eig.min() > -1e-12);
        for (a, b, k) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
            prop_assert!(m.covariance[a][a] * m.covariance[b][b] + 1e-12 >= 0.25 * m.mean[k] * m.mean[k]);
        }
    }

    #[test]
    fn ordered_reduction_ignores_worker_count(n in 1usize..200, threads in 1usize..6) {
        let collect = |k: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(k).build().unwrap();
            pool.install(|| {
                let mut out = Vec::new();
                map_ordered(n, |i| {
                    let mut g = GaussianStream::new(i as u64);
                    Ok(g.next_normal())
                }, |x| out.push(x)).unwrap();
                out
            })
        };
        let a = collect(1);
        let b = collect(threads);
        prop_assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn deterministic_hygiene(eps in 0.01f64..0.08, d in -2.0f64..2.0, n in 1usize..4, order in 0usize..3) {
        let p = ModelParams::scaled(eps, d, 1.0);
        let (bm, st) = if order == 2 {
            let (m, s) = build_full_model(&p, n, Some(6), InitialCavity::LabVacuum).unwrap();
            let bm = BlockModel::from_model(&m).unwrap();
            let st = BandedState::from_dense(&s.rho, n + 1, bm.m, n).unwrap();
            (bm, st)
        } else {
            let o = if order == 0 { ModelOrder::Second } else { ModelOrder::Third };
            let bm = BlockModel::from_model(&build_reduced_model(&p, n, o).unwrap()).unwrap();
            (bm, BandedState::from_dense(&css_x_state(n).unwrap().rho, n + 1, 1, n).unwrap())
        };
        let run = evolve_master_equation(&bm, &st, &TimeGrid::new(6.0, 1.0).unwrap(), Tolerances::default()).unwrap();
        let dg = run.diagnostics;
        prop_assert!(dg.max_trace_error < 1e-9);
        prop_assert!(dg.max_hermiticity_error < 1e-12);
        prop_assert!(dg.min_eigenvalue > -1e-8);
    }

    #[test]
    fn zero_noise_step_is_euler(eps in 0.01f64..0.08, d in -2.0f64..2.0, n in 1usize..6, dt in 1e-4f64..1e-2) {
        let p = ModelParams::scaled(eps, d, 1.0).with_homodyne(0.7, 0.3);
        let bm = BlockModel::from_model(&build_reduced_model(&p, n, ModelOrder::Third).unwrap()).unwrap();
        let st = BandedState::from_dense(&css_x_state(n).unwrap().rho, n + 1, 1, n).unwrap();
        let mut stepped = st.clone();
        sme_step(&bm, &st, dt, 0.0, &mut stepped);
        let mut euler = st.clone();
        bm.lindblad(&st, &mut euler);
        for (e, x) in euler.data.iter_mut().zip(&st.data) {
            *e = x + *e * dt;
        }
        euler.normalize();
        euler.hermitize();
        prop_assert_eq!(stepped.data, euler.data);
    }

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>(), n in 1usize..5) {
        let p = ModelParams::scaled(0.05, 0.8, 1.0).with_homodyne(1.0, optimal_homodyne_phase(0.8));
        let bm = BlockModel::from_model(&build_reduced_model(&p, n, ModelOrder::Third).unwrap()).unwrap();
        let st = BandedState::from_dense(&css_x_state(n).unwrap().rho, n + 1, 1, n).unwrap();
        let grid = TimeGrid::new(2.0, 0.5).unwrap().with_step(1e-3).unwrap();
        let a = evolve_homodyne_trajectory(&bm, &st, &grid, seed, None).unwrap();
        let b = evolve_homodyne_trajectory(&bm, &st, &grid, seed, None).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.trace.photocurrent), bits(&b.trace.photocurrent));
        prop_assert_eq!(bits(&a.xi2()), bits(&b.xi2()));
    }

    #[test]
    fn unconditional_xi2_ignores_jump_phase(n in 2usize..12, d in 0.2f64..2.0) {
        let p = ModelParams::scaled(0.033, d, 1.0);
        let m = build_reduced_model(&p, n, ModelOrder::Second).unwrap();
        let mut rotated = m.clone();
        rotated.jumps[0] *= C64::from_polar(1.0, 1.234);
        let grid = TimeGrid::new(40.0, 10.0).unwrap();
        let st = BandedState::from_dense(&css_x_state(n).unwrap().rho, n + 1, 1, n).unwrap();
        let run = |m| evolve_master_equation(&BlockModel::from_model(m).unwrap(), &st, &grid, Tolerances::default()).unwrap();
        let (a, b) = (run(&m), run(&rotated));
        let s = spin_operators(n).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            let xa = squeezing_of_state(&x.to_dense(), &s).unwrap();
            let xb = squeezing_of_state(&y.to_dense(), &s).unwrap();
            prop_assert!((xa - xb).abs() < 1e-12);
        }
    }
}

#[test]
fn wiener_increments_are_standard() {
    let steps = 40_000;
    let mut g = GaussianStream::new(2718);
    let draws: Vec<f64> = (0..steps).map(|_| g.next_normal()).collect();
    let mean = draws.iter().sum::<f64>() / steps as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (steps - 1) as f64;
    assert!(mean.abs() < 4.0 / (steps as f64).sqrt());
    assert!((var - 1.0).abs() < 0.05);
}
