use proptest::prelude::*;
use taskbench::fv::{
    physical_flux, pressure, rusanov_flux, update_patch, Axis, ConservedState, GridPos, InitialCondition,
    MeshConfig, Patch,
};
use taskbench::oracle::{first_difference, reference_field};
use taskbench::runtime::{RuntimeConfig, Strategy as Scheduling, StrategyKind};
use taskbench::solvers::{SolverConfig, SolverKind, SolverState};

const GAMMA: f64 = 1.4;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

/// Conserved state built from primitive variables.
fn from_primitive(rho: f64, u: f64, v: f64, p: f64) -> ConservedState {
    let e = p / (GAMMA - 1.0) + 0.5 * rho * (u * u + v * v);
    ConservedState::new(rho, rho * u, rho * v, e)
}

fn primitive() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.1f64..10.0, -3.0f64..3.0, -3.0f64..3.0, 0.1f64..10.0)
}

proptest! {
    #[test]
    fn pressure_recovers_primitive((rho, u, v, p) in primitive()) {
        let got = pressure(&from_primitive(rho, u, v, p), GAMMA).unwrap();
        prop_assert!(close(got, p), "{got} vs {p}");
    }

    #[test]
    fn flux_matches_primitive_form((rho, u, v, p) in primitive()) {
        let s = from_primitive(rho, u, v, p);
        let e = s.energy;
        let fx = physical_flux(&s, Axis::X, GAMMA).unwrap();
        let fy = physical_flux(&s, Axis::Y, GAMMA).unwrap();
        let ex = [rho * u, rho * u * u + p, rho * u * v, u * (e + p)];
        let ey = [rho * v, rho * u * v, rho * v * v + p, v * (e + p)];
        for k in 0..4 {
            prop_assert!(close(fx[k], ex[k]), "x[{k}] {} vs {}", fx[k], ex[k]);
            prop_assert!(close(fy[k], ey[k]), "y[{k}] {} vs {}", fy[k], ey[k]);
        }
    }

    #[test]
    fn rusanov_is_consistent((rho, u, v, p) in primitive()) {
        let s = from_primitive(rho, u, v, p);
        for axis in [Axis::X, Axis::Y] {
            let a = rusanov_flux(&s, &s, axis, GAMMA).unwrap();
            let b = physical_flux(&s, axis, GAMMA).unwrap();
            prop_assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn non_positive_density_rejected(rho in -5.0f64..=0.0, e in 0.1f64..5.0) {
        prop_assert!(pressure(&ConservedState::new(rho, 0.0, 0.0, e), GAMMA).is_err());
    }

    #[test]
    fn update_is_pure(n in 1usize..6, dt in 1e-5f64..1e-3) {
        let u = ConservedState::at_rest(1.0, 1.0, GAMMA);
        let mut p = Patch::uniform(n, GridPos::new(0, 0), 1, u);
        p.set_halo(std::array::from_fn(|_| vec![u; n]));
        let a = update_patch(&p, dt, 0.1, GAMMA).unwrap();
        let b = update_patch(&p, dt, 0.1, GAMMA).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.interior.iter().all(|v| *v == u));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn one_step_matches_reference(
        n in 1usize..7,
        amplitude in 0.0f64..2.0,
        width in 0.005f64..0.2,
        threads in 1usize..4,
        kind in prop::sample::select(StrategyKind::ALL.to_vec()),
        solver in prop::sample::select(vec![SolverKind::Bsp, SolverKind::Enclave]),
    ) {
        let mesh = MeshConfig {
            initial: InitialCondition { amplitude, width, pressure: 1.0 },
            ..MeshConfig::new(1, n)
        };
        let config = SolverConfig::new(solver, mesh, RuntimeConfig::new(threads, Scheduling::new(kind)));
        let mut state = SolverState::new(config).unwrap();
        state.time_step().unwrap();
        let expected = reference_field(&mesh, 1);
        prop_assert_eq!(first_difference(&state.mesh().global_field(), &expected), None);
    }
}

#[test]
fn several_steps_match_reference() {
    let mesh = MeshConfig::new(2, 4);
    let config = SolverConfig::new(
        SolverKind::Enclave,
        mesh,
        RuntimeConfig::new(3, Scheduling::new(StrategyKind::MergeAndBackfill)),
    );
    let mut state = SolverState::new(config).unwrap();
    for _ in 0..6 {
        state.time_step().unwrap();
    }
    assert_eq!(first_difference(&state.mesh().global_field(), &reference_field(&mesh, 6)), None);
}

#[test]
fn reference_detects_a_flipped_bit() {
    let mesh = MeshConfig::new(1, 3);
    let mut field = reference_field(&mesh, 1);
    let expected = field.clone();
    field[40].energy = f64::from_bits(field[40].energy.to_bits() ^ 1);
    assert_eq!(first_difference(&field, &expected), Some(40));
}
