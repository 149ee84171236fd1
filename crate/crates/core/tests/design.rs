//! Randomized properties of controller synthesis, synchronization building
//! blocks and the simulator.

use std::sync::OnceLock;

use gammastab::generate::{gaussian, random_hurwitz, random_normal_form_system};
use gammastab::linalg::spectral_norm;
use gammastab::normal_form::normal_form;
use gammastab::sim::{integrate, integrate_forced, random_state, simulate_network, simulate_network_seeds, SimConfig};
use gammastab::sync::{
    build_augmented_system, build_internal_model, build_network, build_pattern_companion,
    build_steady_state_generator, default_internal_model, laplacian_and_spanning_tree, solve_regulator_equations,
    Digraph, ReferenceModel, SyncNetwork, SyncOptions,
};
use gammastab::synthesis::{synthesize_state_feedback, StateFeedbackResult};
use gammastab::{benchmark, Mat, Tolerance, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MARGIN: f64 = 1.0;

fn tol() -> Tolerance {
    Tolerance::default()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn oscillator(omega: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[0.0, omega, -omega, 0.0])
}

fn design(seed: u64, l: usize, gamma: f64) -> (gammastab::normal_form::LinearSystem, StateFeedbackResult) {
    let mut rng = rng(seed);
    let g = random_normal_form_system(&mut rng, l, 1, 1);
    let (_, nf) = normal_form(&g.system, &tol()).unwrap();
    let sf = synthesize_state_feedback(&nf, gamma, MARGIN, &tol()).unwrap();
    (g.system, sf)
}

fn permutation(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    Mat::from_fn(n, n, |i, j| if order[i] == j { 1.0 } else { 0.0 })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smaller_gamma_never_lowers_first_kappa(seed in any::<u64>(), l in 0usize..=2, gamma in 0.01f64..10.0, factor in 1.0f64..10.0) {
        let (_, tight) = design(seed, l, gamma);
        let (_, loose) = design(seed, l, gamma * factor);
        prop_assert!(tight.kappas[0] >= loose.kappas[0], "{} < {}", tight.kappas[0], loose.kappas[0]);
    }

    #[test]
    fn closed_loop_matches_target_cascade(seed in any::<u64>(), l in 0usize..=2, gamma in prop::sample::select(vec![0.01, 0.1, 1.0, 10.0])) {
        let (sys, sf) = design(seed, l, gamma);
        let s = &sf.composite_transform;
        let s_inv = s.clone().try_inverse().unwrap();
        let closed = &sys.a + &sys.b * &sf.k;
        let residual = (s * &closed * &s_inv - &sf.cascade).norm();
        let floor = f64::EPSILON * s.norm() * closed.norm() * s_inv.norm();
        prop_assert!(
            residual <= 1e-8 * sys.a.norm().max(1.0),
            "residual {residual:e}, rounding floor of the product {floor:e}"
        );
    }

    #[test]
    fn cascade_has_target_structure_and_certificate(seed in any::<u64>(), l in 0usize..=2, gamma in prop::sample::select(vec![0.01, 0.1, 1.0, 10.0])) {
        let (sys, sf) = design(seed, l, gamma);
        // target: -kappa_j I on the diagonal blocks, B_j above, nothing further right
        let n = sf.cascade.nrows();
        let mut target = Mat::zeros(n, n);
        let (_, nf) = normal_form(&sys, &tol()).unwrap();
        let off = nf.offsets();
        for (j, &h) in nf.heights.iter().enumerate() {
            target.view_mut((off[j], off[j]), (h, h)).fill_with_identity();
            target.view_mut((off[j], off[j]), (h, h)).scale_mut(-sf.kappas[j]);
            if j + 1 < nf.heights.len() {
                target.view_mut((off[j], off[j + 1]), (h, nf.heights[j + 1])).copy_from(&nf.b_blocks[j]);
            }
        }
        prop_assert!((&sf.cascade - target).norm() <= 1e-12 * sf.cascade.norm());
        prop_assert!(sf.closed_loop_abscissa < 0.0);
        prop_assert!(sf.certificate_max_eigenvalue <= 1e-8);
        prop_assert!(sf.certificate.gain() <= gamma);
    }

    #[test]
    fn synthesis_is_deterministic(seed in any::<u64>(), l in 0usize..=2, gamma in 0.1f64..5.0) {
        let (_, first) = design(seed, l, gamma);
        let (_, second) = design(seed, l, gamma);
        prop_assert_eq!(first.k, second.k);
        prop_assert_eq!(first.kappas, second.kappas);
    }

    #[test]
    fn regulator_solution_is_unique(seed in any::<u64>(), n in 2usize..=5, p in 1usize..=2, omega in 0.2f64..2.0) {
        let mut rng = rng(seed);
        let a = gaussian(&mut rng, n, n);
        let b = gaussian(&mut rng, n, p);
        let c = gaussian(&mut rng, p, n);
        let a_o = oscillator(omega);
        let c_o = gaussian(&mut rng, p, 2);
        let solved = solve_regulator_equations(&a, &b, &c, &a_o, &c_o, &tol());
        prop_assume!(solved.is_ok());
        let (x, u) = solved.unwrap();
        // well-posed instances only; near transmission zeros X blows up
        prop_assume!(x.norm() + u.norm() <= 100.0);
        prop_assert!((&x * &a_o - &a * &x - &b * &u).norm() <= 1e-10 * (1.0 + x.norm()));
        prop_assert!((&c * &x - &c_o).norm() <= 1e-10 * (1.0 + x.norm()));

        let again = solve_regulator_equations(&a, &b, &c, &a_o, &c_o, &tol()).unwrap();
        prop_assert_eq!(&again.0, &x);
        prop_assert_eq!(&again.1, &u);

        // the same problem with the states listed in another order
        let perm = permutation(&mut rng, n);
        let (xp, up) = solve_regulator_equations(
            &(&perm * &a * perm.transpose()),
            &(&perm * &b),
            &(&c * perm.transpose()),
            &a_o,
            &c_o,
            &tol(),
        )
        .unwrap();
        prop_assert!((xp - &perm * &x).amax() <= 1e-10);
        prop_assert!((up - &u).amax() <= 1e-10);
    }

    #[test]
    fn generator_identities_hold(seed in any::<u64>(), m in 1usize..=3, two in any::<bool>(), omega in 0.2f64..2.0) {
        let mut rng = rng(seed);
        let a_o = if two {
            let mut a = Mat::zeros(4, 4);
            a.view_mut((0, 0), (2, 2)).copy_from(&oscillator(omega));
            a.view_mut((2, 2), (2, 2)).copy_from(&oscillator(2.0 * omega + 0.3));
            a
        } else {
            oscillator(omega)
        };
        let lo = a_o.nrows();
        let c_o = gaussian(&mut rng, 1, lo);
        let pattern = build_pattern_companion(&a_o, &c_o, &tol()).unwrap();
        prop_assert_eq!(pattern.s, lo);
        let u = gaussian(&mut rng, m, lo);
        let g = build_steady_state_generator(&u, &pattern).unwrap();
        let scale = g.upsilon.norm().max(1.0) * a_o.norm().max(1.0);
        prop_assert!((&g.upsilon * &a_o - &g.phi * &g.upsilon).norm() <= 1e-10 * scale);
        prop_assert!((&u - &g.psi * &g.upsilon).norm() <= 1e-10 * u.norm().max(1.0));
    }

    #[test]
    fn laplacian_rows_sum_to_zero(seed in any::<u64>(), n in 1usize..=8, integer in any::<bool>()) {
        let mut rng = rng(seed);
        let adjacency = Mat::from_fn(n, n, |i, j| {
            if i == j || rng.random_bool(0.4) {
                0.0
            } else if integer {
                rng.random_range(1..=5) as f64
            } else {
                rng.random_range(0.0..1.0)
            }
        });
        let (lap, _) = laplacian_and_spanning_tree(&adjacency).unwrap();
        for row in lap.row_iter() {
            let sum: f64 = row.iter().sum();
            if integer {
                prop_assert_eq!(sum, 0.0);
            } else {
                prop_assert!(sum.abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn augmented_system_follows_template(seed in any::<u64>(), n in 2usize..=4, omega in 0.2f64..2.0) {
        let mut rng = rng(seed);
        let a = gaussian(&mut rng, n, n);
        let b = gaussian(&mut rng, n, 1);
        let c = gaussian(&mut rng, 1, n);
        let a_o = oscillator(omega);
        let c_o = gaussian(&mut rng, 1, 2);
        let reference = ReferenceModel {
            b_o: gaussian(&mut rng, 2, 1),
            a_zeta: random_hurwitz(&mut rng, 2, 0.5, 2.0),
            b_zeta: gaussian(&mut rng, 2, 1),
            c_zeta: gaussian(&mut rng, 1, 2),
            gamma_zeta: 0.1,
        };
        let solved = solve_regulator_equations(&a, &b, &c, &a_o, &c_o, &tol());
        prop_assume!(solved.is_ok());
        let (x, u) = solved.unwrap();
        prop_assume!(x.norm() + u.norm() <= 100.0);
        let pattern = build_pattern_companion(&a_o, &c_o, &tol()).unwrap();
        let generator = build_steady_state_generator(&u, &pattern).unwrap();
        let (m, nn) = default_internal_model(1, pattern.s);
        let im = build_internal_model(&b, &generator, &m, &nn, &x, &reference, &tol());
        prop_assume!(im.is_ok());
        let im = im.unwrap();
        let plant = build_augmented_system(&a, &b, &c, &im, &x, &reference, &tol());
        // stabilizability and detectability of the augmented pair are generic, not guaranteed
        prop_assume!(plant.is_ok());
        let plant = plant.unwrap();
        prop_assert_eq!(&plant.a, &a);
        prop_assert_eq!(&plant.b, &b);
        prop_assert_eq!(&plant.c, &c);
        prop_assert!((&plant.r + &x * &reference.b_o * &reference.c_zeta).norm() <= 1e-12 * x.norm().max(1.0));
        let a_bar = plant.a_bar();
        let nz = plant.nz();
        let expected = &im.m + &im.n * &im.q;
        prop_assert!((a_bar.view((n, n), (nz, nz)) - expected).norm() <= 1e-12 * a_bar.norm().max(1.0));
        prop_assert!(a_bar.view((n, 0), (nz, n)).norm() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn simulation_is_deterministic(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = rng(seed);
        let a = random_hurwitz(&mut rng, n, 0.1, 2.0);
        let c = gaussian(&mut rng, 1, n);
        let x0 = random_state(n, seed, 1.0);
        let cfg = SimConfig { record_states: true, ..SimConfig::new(0.01, 5.0, seed) };
        let first = integrate(&a, &c, &x0, &cfg).unwrap();
        let second = integrate(&a, &c, &x0, &cfg).unwrap();
        prop_assert_eq!(first, second);
    }

    #[test]
    fn halving_the_step_keeps_the_terminal_state(seed in any::<u64>(), n in 1usize..=6) {
        let mut rng = rng(seed);
        let a = random_hurwitz(&mut rng, n, 0.1, 1.0);
        let r = gaussian(&mut rng, n, 1);
        let c = gaussian(&mut rng, 1, n);
        let x0 = random_state(n, seed, 1.0);
        let input = |t: f64| Vector::from_element(1, (0.7 * t).sin());
        let coarse = integrate_forced(&a, &r, &c, &x0, input, &SimConfig::new(0.01, 5.0, seed)).unwrap();
        let fine = integrate_forced(&a, &r, &c, &x0, input, &SimConfig::new(0.005, 5.0, seed)).unwrap();
        let diff = (&coarse.final_state - &fine.final_state).norm();
        prop_assert!(diff <= 1e-6 * fine.final_state.norm(), "difference {diff:e}");
    }

    #[test]
    fn storage_function_decreases_along_certified_loops(seed in any::<u64>(), l in 0usize..=1, gamma in 0.5f64..5.0) {
        let (sys, sf) = design(seed, l, gamma);
        let closed = &sys.a + &sys.b * &sf.k;
        let cert = &sf.certificate;
        let n = closed.nrows();
        let mut x0 = random_state(n, seed, 1.0);
        x0 /= x0.dot(&(&cert.p * &x0)).sqrt();
        let input = |t: f64| Vector::from_element(1, (0.9 * t).sin() + 0.5 * (2.3 * t + 0.4).cos());
        let dt = 1e-2f64.min(0.2 / spectral_norm(&closed));
        let cfg = SimConfig { record_states: true, ..SimConfig::new(dt, 200.0 * dt, seed) };
        let trace = integrate_forced(&closed, &sys.r, &sys.c, &x0, input, &cfg).unwrap();
        let states = trace.states.as_ref().unwrap();
        let v = |k: usize| {
            let x = states.row(k).transpose();
            x.dot(&(&cert.p * &x))
        };
        let supply = |k: usize| {
            let y = trace.outputs.row(k).norm_squared();
            let z = input(trace.times[k]).norm_squared();
            -cert.alpha * y + cert.beta * z
        };
        for k in 0..trace.times.len() - 1 {
            let bound = 0.5 * (supply(k) + supply(k + 1)) * dt + 1e-3 * dt;
            prop_assert!(v(k + 1) - v(k) <= bound, "step {k}: {} > {bound}", v(k + 1) - v(k));
        }
    }
}

fn benchmark_network() -> &'static SyncNetwork {
    static NET: OnceLock<SyncNetwork> = OnceLock::new();
    NET.get_or_init(|| {
        let (a_o, c_o) = benchmark::pattern();
        let pattern = build_pattern_companion(&a_o, &c_o, &tol()).unwrap();
        let graph = Digraph::new(benchmark::adjacency()).unwrap();
        let agents = vec![benchmark::agent_model(); benchmark::AGENT_COUNT];
        build_network(agents, graph, pattern, benchmark::reference_model(), &SyncOptions::new(benchmark::GAMMA), &tol())
            .unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn parallel_runs_match_single_runs(base in any::<u64>(), count in 1usize..=4) {
        let net = benchmark_network();
        let ws: Vec<Vec<f64>> = net.agents.iter().map(|a| vec![0.0; a.entries.len()]).collect();
        let seeds: Vec<u64> = (0..count as u64).map(|k| base.wrapping_add(k)).collect();
        let cfg = SimConfig::new(1e-3, 0.5, 0);
        let runs = simulate_network_seeds(net, &ws, &seeds, &cfg, 1.0);
        prop_assert_eq!(runs.len(), seeds.len());
        for (run, &seed) in runs.into_iter().zip(&seeds) {
            let x0 = random_state(net.state_dim(), seed, 1.0);
            let single = simulate_network(net, &ws, &x0, &SimConfig { seed, ..cfg.clone() }).unwrap();
            prop_assert_eq!(run.unwrap(), single);
        }
    }
}
