use tnpq::exact::{self, TimeGrid};
use tnpq::experiments::{run_heisenberg, run_photon_counting, HeisenbergConfig, Observable, PhotonCountingConfig};
use tnpq::config::MatrixSpec;
use tnpq::linops::{self, c};
use tnpq::model::builders::{tilted_lindbladian, EMISSION_CHANNEL};
use tnpq::model::TimeScalar;

fn oscillator() -> PhotonCountingConfig {
    PhotonCountingConfig {
        n_max: 14,
        t_final: 1.0,
        record_points: 5,
        n_trajectories: 4000,
        k_max: 3,
        ..Default::default()
    }
}

#[test]
fn moment_series_sums_to_tilted_trace() {
    let cfg = oscillator();
    let grid = TimeGrid::new(0.0, 1.0, 1e-3).unwrap();
    let base = cfg.base_model().unwrap();
    let rho0 = linops::projector(&cfg.initial_state());
    let h = exact::solve_hierarchy(&base, EMISSION_CHANNEL, 4, &rho0, &grid).unwrap();
    let zeta: f64 = 0.02;
    let tilted = tilted_lindbladian(cfg.gamma, cfg.nbar, cfg.omega, cfg.phi, zeta, cfg.n_max).unwrap();
    let direct = exact::integrate(&tilted, &rho0, &grid).unwrap();
    let mut fact = 1.0;
    let mut series = vec![0.0; grid.steps() + 1];
    for (k, tau) in h.taus.iter().enumerate() {
        if k > 0 {
            fact *= k as f64;
        }
        for (s, x) in series.iter_mut().zip(&tau.values) {
            let mu = linops::trace(x);
            assert!(mu.im.abs() < 1e-10);
            *s += zeta.powi(k as i32) * mu.re / fact;
        }
    }
    for (s, x) in series.iter().zip(&direct.values) {
        assert!((s - linops::trace(x).re).abs() < 1e-6, "{s}");
    }
}

#[test]
fn pure_emission_counts_grow() {
    let cfg = PhotonCountingConfig {
        nbar: 0.0,
        zeta_list: vec![],
        k_max: 1,
        ..oscillator()
    };
    let s = run_photon_counting(&cfg).unwrap();
    assert!(s.exact[0].windows(2).all(|w| w[1] >= w[0] - 1e-12));
    for i in 1..s.times.len() {
        assert!((s.moments[0][i] - s.exact[0][i]).abs() <= 4.0 * s.se[0][i], "t = {}", s.times[i]);
    }
}

#[test]
fn unital_generator_keeps_identity() {
    let cfg = HeisenbergConfig {
        gamma_minus: TimeScalar::constant(1.0),
        gamma_plus: TimeScalar::constant(1.0),
        observables: vec![Observable {
            label: "id".into(),
            op: MatrixSpec::named("identity"),
        }],
        t_final: 0.5,
        n_trajectories: 1000,
        record_points: 5,
        ..Default::default()
    };
    let s = run_heisenberg(&cfg).unwrap();
    let o = &s.observables[0];
    for i in 0..s.times.len() {
        assert!((o.trace_est[i] - 2.0).abs() < 1e-12);
        assert!((o.est[i] - 1.0).abs() <= 4.0 * o.se[i] + 1e-12);
        assert!((o.trace_exact[i] - 2.0).abs() < 1e-9);
    }
}

#[test]
fn heisenberg_trace_matches_inverse_hs_pairing() {
    // tr X(t) = tr[X(0) Λ_S(𝟙)], with Λ_S the Schrödinger-picture map.
    let cfg = HeisenbergConfig {
        t_final: 0.3,
        ..Default::default()
    };
    let model = cfg.model().unwrap();
    let grid = cfg.grid().unwrap();
    let maps = exact::propagate_map(&model, &grid).unwrap();
    let x0 = tnpq::model::builders::pauli_ops().z;
    let xt = maps.last().unwrap().apply(&x0).unwrap();
    let adj = maps.last().unwrap().adjoint();
    let id_image = adj.apply(&linops::identity(2)).unwrap();
    let lhs = linops::trace(&xt);
    let rhs = linops::trace(&(x0 * id_image));
    assert!((lhs - rhs).norm() < 1e-10);
    assert!((lhs - c(0.0, 0.0)).norm() > 1e-3);
}
