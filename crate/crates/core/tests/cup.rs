use morse_functor::critical::CriticalPoint;
use morse_functor::cup::{check_bichain, check_unit, cup_product, cup_tensor, h1_pairing, seeded_triple, triple_intersection, TripleSystem};
use morse_functor::functor::{chain_map_by_intersection, MapProblem, SmoothMap};
use morse_functor::geometry::SystemSpec;
use morse_functor::Tolerances;

fn near(a: f64, b: f64) -> bool {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d) < 1e-6
}

fn at<'a>(cps: &'a [CriticalPoint], x: f64, y: f64) -> &'a CriticalPoint {
    cps.iter().find(|c| near(c.point.coords[0], x) && near(c.point.coords[1], y)).unwrap()
}

const A: (f64, f64) = (0.11, 0.23);
const B: (f64, f64) = (0.37, 0.61);
const C: (f64, f64) = (0.71, 0.83);

fn torus_triple(tol: &Tolerances) -> TripleSystem {
    TripleSystem::new([SystemSpec::torus2(A.0, A.1), SystemSpec::torus2(B.0, B.1), SystemSpec::torus2(C.0, C.1)], tol).unwrap()
}

#[test]
fn torus_triple_counts() {
    let tol = Tolerances::default();
    let ts = torus_triple(&tol);
    let [m1, m2, m3] = &ts.members;
    let max3 = at(&m3.cps, C.0, C.1);
    // stable circles {θ₁ = a₁} and {θ₂ = b₂} meet once
    let vertical1 = at(&m1.cps, A.0, A.1 + 0.5);
    let horizontal2 = at(&m2.cps, B.0 + 0.5, B.1);
    let r = triple_intersection(&ts, vertical1, horizontal2, max3, &tol).unwrap();
    assert_eq!(r.points.len(), 1);
    assert_eq!(r.count.abs(), 1);
    let p = &r.points[0].location.coords;
    assert!(near(p[0], A.0) && near(p[1], B.1), "{p:?}");
    // {θ₁ = a₁} and {θ₁ = b₁} are disjoint
    let vertical2 = at(&m2.cps, B.0, B.1 + 0.5);
    assert_eq!(triple_intersection(&ts, vertical1, vertical2, max3, &tol).unwrap().count, 0);
    let mins = (at(&m1.cps, A.0 + 0.5, A.1 + 0.5), at(&m2.cps, B.0 + 0.5, B.1 + 0.5), at(&m3.cps, C.0 + 0.5, C.1 + 0.5));
    assert_eq!(triple_intersection(&ts, mins.0, mins.1, mins.2, &tol).unwrap().count, 1);
    assert!(triple_intersection(&ts, vertical1, mins.1, max3, &tol).is_err());
}

#[test]
fn torus_cup_product_ring() {
    let tol = Tolerances::default();
    let ts = torus_triple(&tol);
    let tensor = cup_tensor(&ts, &tol).unwrap();
    let [_, m2, m3] = &ts.members;
    assert!(check_bichain(&ts, &tensor).unwrap().pass);
    let zero = vec![0; m2.ids(1).len()];
    assert!(cup_product(&ts, &tensor, 1, &[1, -3], 1, &zero).unwrap().iter().all(|v| *v == 0));
    // bilinearity in the first slot
    let b = vec![2, -1];
    let sum = cup_product(&ts, &tensor, 1, &[1, 1], 1, &b).unwrap();
    let parts: Vec<i64> = cup_product(&ts, &tensor, 1, &[1, 0], 1, &b).unwrap().iter().zip(cup_product(&ts, &tensor, 1, &[0, 1], 1, &b).unwrap()).map(|(x, y)| x + y).collect();
    assert_eq!(sum, parts);
    let pairing = h1_pairing(&ts, &tensor, &tol).unwrap();
    assert!(pairing.antisymmetric && pairing.squares_vanish && pairing.unimodular, "{:?}", pairing.matrix);
    // the unit of system 1 acts through the comparison map from system 3 to system 2
    let problem = MapProblem { src: &m3.sys, src_cps: &m3.cps, dst: &m2.sys, dst_cps: &m2.cps, map: &SmoothMap::Identity };
    let phi = chain_map_by_intersection(&problem, &m3.complex, &m2.complex, &tol).unwrap();
    assert!(check_unit(&ts, &tensor, &phi.matrices).unwrap().iter().all(|u| u.equal));
}

#[test]
fn pairing_is_stable_under_reseeding() {
    let tol = Tolerances::default();
    let mut seen = Vec::new();
    for seed in [1, 2, 3] {
        let (ts, tensor) = seeded_triple(&SystemSpec::torus2(0.0, 0.0), seed, 12, &tol).unwrap();
        let pairing = h1_pairing(&ts, &tensor, &tol).unwrap();
        assert!(pairing.antisymmetric && pairing.unimodular, "{:?}", pairing.matrix);
        seen.push(pairing.matrix);
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]), "{seen:?}");
}

#[test]
fn peanut_triple_is_a_bichain_map() {
    let tol = Tolerances::default();
    let (ts, tensor) = seeded_triple(&SystemSpec::peanut(1.0), 5, 6, &tol).unwrap();
    let report = check_bichain(&ts, &tensor).unwrap();
    assert!(report.pass, "{:?}", report.failures);
    assert!(report.checked > 0);
}
