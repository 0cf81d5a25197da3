use std::ops::ControlFlow;

use morse_functor::complex::build_morse_complex;
use morse_functor::critical::find_critical_points;
use morse_functor::dynamics::{integrate, trajectory};
use morse_functor::functor::{chain_map_by_intersection, MapProblem, SmoothMap};
use morse_functor::geometry::{builtin_system, MorseSystem, Point, SystemSpec};
use morse_functor::invariants::unstable_disk;
use morse_functor::Tolerances;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rotation() -> impl Strategy<Value = [f64; 3]> {
    [-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0]
}

fn spec() -> impl Strategy<Value = SystemSpec> {
    prop_oneof![
        (0.0f64..1.0).prop_map(SystemSpec::circle),
        (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| SystemSpec::torus2(a, b)),
        (0.0f64..1.0, 0.0f64..1.0, 0.6f64..1.6, 0.6f64..1.6).prop_map(|(a, b, c, d)| SystemSpec::Torus { offsets: vec![a, b], amplitudes: Some(vec![c, d]) }),
        rotation().prop_map(|rotation| SystemSpec::SphereHeight { rotation }),
        (0.7f64..2.0, rotation()).prop_map(|(lambda, rotation)| SystemSpec::Peanut { lambda, rotation }),
        (0.0f64..1.0, rotation()).prop_map(|(a, rotation)| SystemSpec::Product { factors: vec![SystemSpec::circle(a), SystemSpec::SphereHeight { rotation }] }),
    ]
}

fn system(spec: &SystemSpec) -> MorseSystem {
    builtin_system(spec).unwrap()
}

fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn charts_cover_and_round_trip(s in spec(), seed in any::<u64>()) {
        let sys = system(&s);
        let m = &sys.manifold;
        let p = m.random_point(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(m.contains(&p));
        let mut covered = false;
        for c in 0..m.chart_count() {
            let Some((coords, _)) = m.to_chart(&p, c) else { continue };
            let q = Point { chart: c, coords };
            if !m.contains(&q) {
                continue;
            }
            covered = true;
            let (back, _) = m.to_chart(&q, p.chart).unwrap();
            let scale = 1.0 + p.coords.amax();
            prop_assert!((back - &p.coords).amax() <= 1e-10 * scale);
            prop_assert!((sys.value(&q) - sys.value(&p)).abs() <= 1e-10);
        }
        prop_assert!(covered);
    }

    #[test]
    fn metric_is_positive_definite(s in spec(), seed in any::<u64>()) {
        let sys = system(&s);
        let p = sys.manifold.random_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let g = sys.manifold.metric(&p);
        prop_assert!((&g - g.transpose()).amax() < 1e-12);
        prop_assert!(symmetric_eigenvalues(&g).min() > 0.0);
    }

    #[test]
    fn function_decreases_along_trajectories(s in spec(), seed in any::<u64>(), t in 0.1f64..5.0) {
        let sys = system(&s);
        let p = sys.manifold.random_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let sample = trajectory(&sys, &p, t, &Tolerances::default().flow).unwrap();
        let values: Vec<f64> = sample.points.iter().map(|q| sys.value(q)).collect();
        prop_assert!(values.windows(2).all(|w| w[1] <= w[0] + 1e-8));
    }

    #[test]
    fn tolerances_reject_nonpositive_entries(v in -1.0f64..=0.0, which in 0usize..4) {
        let mut tol = Tolerances::default();
        prop_assert!(tol.validate().is_ok());
        match which {
            0 => tol.crit_tol = v,
            1 => tol.tau = v,
            2 => tol.epsilon = v,
            _ => tol.flow.r_conv = v,
        }
        prop_assert!(tol.validate().is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn critical_points_are_classified_consistently(s in spec()) {
        let tol = Tolerances::default();
        let sys = system(&s);
        let cps = find_critical_points(&sys, &tol).unwrap();
        for cp in &cps {
            prop_assert!(sys.gradient_norm(&cp.point) <= tol.crit_tol);
            prop_assert!(cp.eigenvalues.iter().all(|l| l.abs() > tol.degeneracy_tol));
            let h = sys.hessian(&cp.point, tol.crit_tol).unwrap();
            let negative = symmetric_eigenvalues(&h).iter().filter(|l| **l < 0.0).count();
            prop_assert_eq!(cp.index, negative);
            prop_assert_eq!(cp.unstable_frame.matrix().ncols(), cp.index);
            let c = cp.stable_coframe.matrix();
            for v in &cp.stable_frame {
                prop_assert!((c * v).amax() < 1e-10);
            }
            if cp.index > 0 {
                prop_assert!((c * cp.unstable_frame.matrix()).determinant() > 0.0);
            }
        }
    }

    #[test]
    fn unstable_disks_are_anchored_and_repelling(s in spec(), angle in 0.0f64..std::f64::consts::TAU) {
        let tol = Tolerances::default();
        let sys = system(&s);
        let cps = find_critical_points(&sys, &tol).unwrap();
        for cp in cps.iter().filter(|c| c.index > 0) {
            let disk = unstable_disk(&sys, &cps, cp, 1e-3).unwrap();
            let k = disk.dim();
            let (p0, dp) = disk.point(&sys, &DVector::zeros(k));
            prop_assert!(sys.distance(&p0, &cp.point) < 1e-12);
            prop_assert!((cp.stable_coframe.matrix() * dp).determinant() > 0.0);
            let mut u = DVector::zeros(k);
            u[0] = angle.cos();
            if k > 1 {
                u[1] = angle.sin();
            }
            let (p, _) = disk.point(&sys, &u);
            let d0 = sys.distance(&p, &cp.point);
            // the linear disk is O(ε²) off the unstable manifold, so backward
            // flow approaches x before drifting away along stable directions
            let mut closest = d0;
            integrate(&sys, &p, -50.0, false, &tol.flow, |st| {
                closest = closest.min(sys.distance(&st.point, &cp.point));
                if closest < 0.75 * d0 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) }
            })
            .unwrap();
            prop_assert!(closest < 0.75 * d0, "{} vs {}", closest, d0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn comparison_maps_are_chain_maps(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0, d in 0.0f64..1.0) {
        let tol = Tolerances::default();
        let build = |s: SystemSpec| {
            let sys = system(&s);
            let cps = find_critical_points(&sys, &tol).unwrap();
            let complex = build_morse_complex(&sys, &cps, &tol).unwrap();
            (sys, cps, complex)
        };
        let (s1, c1, k1) = build(SystemSpec::torus2(a, b));
        let (s2, c2, k2) = build(SystemSpec::torus2(c, d));
        let problem = MapProblem { src: &s1, src_cps: &c1, dst: &s2, dst_cps: &c2, map: &SmoothMap::Identity };
        // a draw that is not transverse is rejected, not miscounted
        let Ok(phi) = chain_map_by_intersection(&problem, &k1, &k2, &tol) else { return Ok(()) };
        for k in 1..=2 {
            prop_assert_eq!(&k2.boundaries[k] * &phi.matrices[k], &phi.matrices[k - 1] * &k1.boundaries[k]);
        }
    }
}
