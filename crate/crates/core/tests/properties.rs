use proptest::prelude::*;

use tnpq::divisibility::{choi_eigenvalues, report_from_maps};
use tnpq::ensemble::{even_split, largest_remainder, CanonicalKey, Ensemble};
use tnpq::exact::{self, TimeGrid};
use tnpq::linops::{self, c, CMatrix, CVector};
use tnpq::model::builders::pauli_ops;
use tnpq::model::{Decay, JumpChannel, TnpModel};
use tnpq::unravel::{mcwf, ro, Method, RoStrategy, StepSettings};

fn matrix(d: usize, scale: f64) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec(-scale..scale, 2 * d * d).prop_map(move |v| CMatrix::from_fn(d, d, |i, j| c(v[2 * (i * d + j)], v[2 * (i * d + j) + 1])))
}

fn hermitian(d: usize, scale: f64) -> impl Strategy<Value = CMatrix> {
    matrix(d, scale).prop_map(|m| linops::hermitian_part(&m))
}

fn state(d: usize) -> impl Strategy<Value = CVector> {
    prop::collection::vec(-1.0..1.0f64, 2 * d)
        .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
        .prop_map(move |v| {
            let s = CVector::from_fn(d, |i, _| c(v[2 * i], v[2 * i + 1]));
            let n = s.norm();
            s / c(n, 0.0)
        })
}

/// A qubit model with two positive channels and `Γ = Γ_L + extra`.
fn qubit_model() -> impl Strategy<Value = TnpModel> {
    (hermitian(2, 1.0), matrix(2, 0.7), matrix(2, 0.7), 0.0..1.0f64, 0.0..1.0f64, hermitian(2, 0.5)).prop_map(
        |(h, l1, l2, r1, r2, extra)| {
            TnpModel::new(2)
                .with_hamiltonian(h)
                .with_channel(JumpChannel::new("a", r1, l1))
                .with_channel(JumpChannel::new("b", r2, l2))
                .with_decay(Decay::LindbladPlus(extra.into()))
        },
    )
}

proptest! {
    #[test]
    fn eigendecomposition_reconstructs(a in hermitian(4, 2.0)) {
        let eig = linops::hermitian_eig(&a).unwrap();
        prop_assert!(eig.eigenvalues.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        prop_assert!(linops::max_abs(&(eig.reconstruct() - &a)) < 1e-10);
        for v in &eig.eigenvectors {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn positive_split_recombines(a in hermitian(3, 1.0)) {
        let s = linops::split_positive(&a).unwrap();
        prop_assert!(linops::max_abs(&(s.recombine(3) - &a)) < 1e-10);
        for w in [&s.plus, &s.minus].into_iter().flatten() {
            prop_assert!(w.weight > 0.0);
            prop_assert!((linops::trace(&w.rho).re - 1.0).abs() < 1e-10);
            prop_assert!(linops::hermitian_eig(&w.rho).unwrap().min() > -1e-12);
        }
    }

    #[test]
    fn key_ignores_global_phase(psi in state(3), theta in 0.0..std::f64::consts::TAU) {
        let rotated = &psi * c(theta.cos(), theta.sin());
        prop_assert_eq!(CanonicalKey::of(psi.as_slice()), CanonicalKey::of(rotated.as_slice()));
    }

    #[test]
    fn allocations_preserve_totals(n in 0u64..100_000, parts in 1usize..64, w in prop::collection::vec(0.0..1.0f64, 1..8)) {
        let split = even_split(n, parts);
        prop_assert_eq!(split.iter().sum::<u64>(), n);
        prop_assert!(split.iter().max().unwrap() - split.iter().min().unwrap() <= 1);
        if w.iter().sum::<f64>() > 0.0 {
            prop_assert_eq!(largest_remainder(&w, n).unwrap().iter().sum::<u64>(), n);
        }
    }

    #[test]
    fn step_probabilities_partition(model in qubit_model(), psi in state(2), dt in 1e-5..1e-2f64) {
        let p = mcwf::step_probabilities(&model, &psi, 0.0, dt).unwrap();
        prop_assert!((p.total() - 1.0).abs() < 1e-12);
        prop_assert!(p.p_d == 0.0 || p.p_c == 0.0);
        let x = model.at(0.0).trace_rate(psi.as_slice());
        prop_assert!((p.p_t() - (1.0 + x * dt)).abs() < 1e-12);
        let r = ro::ro_step_probabilities(&model, &RoStrategy::Zero, &psi, 0.0, &StepSettings::new(dt)).unwrap();
        prop_assert!((r.p_jump_total() - p.p_jump_total()).abs() < 1e-12);
    }

    #[test]
    fn expected_step_trace_follows_generator(model in qubit_model(), psi in state(2)) {
        let dt = 1e-4;
        let e = mcwf::expected_step(&model, &Method::Mcwf, &psi, 0.0, &StepSettings::new(dt), None).unwrap();
        let rho = linops::projector(&psi);
        let want = 1.0 + model.trace_derivative(0.0, &rho).unwrap() * dt;
        prop_assert!((linops::trace(&e).re - want).abs() < 1e-12);
        prop_assert!(linops::is_hermitian(&e, 1e-12));
    }

    #[test]
    fn checkpoint_round_trip(seed in any::<u64>(), n in 1u64..5000, batches in 1usize..8, psi in state(3), phi in state(3)) {
        let e = Ensemble::sample_initial_batched(&[(0.3, psi), (0.7, phi)], n, seed, batches).unwrap();
        let mut buf = Vec::new();
        e.write_checkpoint(&mut buf).unwrap();
        let back = Ensemble::from_checkpoint_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(back.total_count(), n);
        prop_assert_eq!(back.batch_refs(), e.batch_refs());
        prop_assert_eq!(back.seed(), seed);
        let a: Vec<_> = e.members().map(|m| m.to_trajectory()).collect();
        let b: Vec<_> = back.members().map(|m| m.to_trajectory()).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_parser_never_panics(text in "\\PC{0,400}") {
        let _ = Ensemble::from_checkpoint_str(&text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn lindblad_maps_are_cp_divisible(gm in 0.05..2.0f64, gp in 0.0..1.0f64, eps in -2.0..2.0f64) {
        let p = pauli_ops();
        let model = TnpModel::new(2)
            .with_hamiltonian(&p.x * c(eps, 0.0))
            .with_channel(JumpChannel::new("minus", gm, p.minus.clone()))
            .with_channel(JumpChannel::new("plus", gp, p.plus.clone()));
        let grid = TimeGrid::new(0.0, 0.05, 1e-2).unwrap();
        let maps = exact::propagate_map(&model, &grid).unwrap();
        for d in report_from_maps(&maps).unwrap() {
            prop_assert!(d.min_choi() >= -1e-8);
            prop_assert!((d.choi.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(d.max_bloch_norm.unwrap() <= 1.0 + 1e-6);
        }
        let last = choi_eigenvalues(maps.last().unwrap()).unwrap();
        prop_assert!(last[0] >= -1e-8);
    }
}
