use mpm_thermal::grid::{build_grid, grid_enclosing};
use mpm_thermal::particles::{apply_rigid_rotation, generate_box_points};
use mpm_thermal::scenario::{build_state, config_from_value};
use mpm_thermal::solver::{SolverOptions, SolverState};
use proptest::prelude::*;
use serde_json::json;

fn rod_state(method: &str, bc: serde_json::Value) -> SolverState {
    let mut bc = bc;
    bc["method"] = json!(method);
    let cfg = config_from_value(json!({
        "scenario": "rod-constant",
        "geometry": {"length": 3.0},
        "bc": bc,
        "reference": null,
    }))
    .unwrap();
    build_state(&cfg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn shape_functions_partition_unity(
        dim in 2usize..=3,
        h in 0.05f64..1.0,
        u in prop::array::uniform3(0.0f64..1.0),
    ) {
        let grid = build_grid(&[-1.0, -2.0, 0.5], &[3.0, 3.0, 3.0], h, dim).unwrap();
        let x: Vec<f64> = (0..dim).map(|d| [-1.0, -2.0, 0.5][d] + 3.0 * u[d]).collect();
        let s = grid.node_stencil(&x).unwrap();
        let (mut w, mut g) = (0.0, [0.0f64; 3]);
        for (_, wi, gi) in s.iter() {
            prop_assert!(wi >= -1e-15);
            w += wi;
            for d in 0..3 {
                g[d] += gi[d];
            }
        }
        prop_assert!((w - 1.0).abs() < 1e-12);
        prop_assert!(g.iter().all(|c| c.abs() < 1e-9 / h));
    }

    #[test]
    fn rotation_preserves_distances(
        omega in -4.0f64..4.0,
        dt in 1e-4f64..0.1,
        cx in -1.0f64..1.0,
    ) {
        let mut p = generate_box_points(&[0.0, 0.0], &[1.0, 0.5], 0.25).unwrap();
        let before = p.position.clone();
        apply_rigid_rotation(&mut p, [cx, 0.3], omega, dt).unwrap();
        for i in 0..p.len() {
            for j in 0..i {
                let d = |x: &[[f64; 3]]| (x[i][0] - x[j][0]).hypot(x[i][1] - x[j][1]);
                prop_assert!((d(&p.position) - d(&before)).abs() < 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn conforming_vhfm_matches_node_every_step(
        q_s in -5.0f64..5.0,
        gamma in 0.1f64..5.0,
        ambient in -2.0f64..2.0,
        // cells behind a conforming face have smoothed fraction 0.75
        eta in 0.3f64..0.74,
        convective in any::<bool>(),
    ) {
        let bc = if convective {
            json!({"kind": "convective", "gamma": gamma, "T_a": ambient, "eta": eta})
        } else {
            json!({"kind": "constant_flux", "q_s": q_s, "eta": eta})
        };
        let (mut a, mut b) = (rod_state("vhfm", bc.clone()), rod_state("node", bc));
        for _ in 0..100 {
            a.step(1e-3).unwrap();
            b.step(1e-3).unwrap();
            for (x, y) in a.particles.temperature.iter().zip(&b.particles.temperature) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_flux_conserves_energy(a in -3.0f64..3.0, k in 1.0f64..8.0, pic in any::<bool>()) {
        let mut p = generate_box_points(&[0.0, 0.0], &[1.0, 0.6], 0.05).unwrap();
        for i in 0..p.len() {
            let x = p.position[i];
            p.temperature[i] = a * x[0] + (k * x[1]).cos();
        }
        let grid = grid_enclosing(&[0.0; 3], &[1.0, 0.6, 0.0], 0.1, 2, 1).unwrap();
        let mut options = SolverOptions::default();
        if pic {
            options.transfer = mpm_thermal::solver::TransferScheme::Pic;
        }
        let mut s = SolverState::new(grid, p, options).unwrap();
        let e0 = s.particles.thermal_energy();
        let scale: f64 = s.particles.temperature.iter().zip(&s.particles.volume).map(|(t, v)| t.abs() * v).sum();
        for _ in 0..1000 {
            s.step(2e-3).unwrap();
        }
        let drift = (s.particles.thermal_energy() - e0).abs() / scale;
        prop_assert!(drift <= 1e-10, "drift {}", drift);
        let (lo, hi) = (-a.abs() - 1.0, a.abs() + 1.0);
        prop_assert!(s.particles.temperature.iter().all(|t| (lo - 1e-9..=hi + 1e-9).contains(t)));
    }

    #[test]
    fn convective_heating_stays_between_initial_and_ambient(
        gamma in 0.1f64..4.0,
        ambient in 0.5f64..3.0,
        shift in 0.0f64..1.0,
    ) {
        let cfg = config_from_value(json!({
            "scenario": "rod-convective-nc",
            "geometry": {"length": 3.0, "shift": shift},
            "bc": {"gamma": gamma, "T_a": ambient},
            "reference": null,
        }))
        .unwrap();
        let mut s = build_state(&cfg).unwrap();
        for _ in 0..300 {
            s.step(1e-3).unwrap();
            prop_assert!(s.particles.temperature.iter().all(|&t| (-1e-12..=ambient + 1e-12).contains(&t)));
        }
    }
}
