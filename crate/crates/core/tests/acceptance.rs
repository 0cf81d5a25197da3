use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use morse_functor::complex::{build_morse_complex, homology, ChainComplex, IntMatrix};
use morse_functor::critical::{find_critical_points, CriticalPoint};
use morse_functor::cup::{h1_pairing, seeded_triple};
use morse_functor::dynamics::{flow, flow_with_jacobian, trajectory};
use morse_functor::functor::{
    attaching_degree, chain_map_by_flow, chain_map_by_flow_at, chain_map_by_intersection, check_stably_regular, compose_experiment, induced_on_homology, ChainMap, Composition,
    MapProblem, SmoothMap,
};
use morse_functor::geometry::{builtin_system, MorseSystem, Point, SystemSpec};
use morse_functor::invariants::count_trajectories;
use morse_functor::Tolerances;

type Outcome = Result<String, String>;

struct Sys {
    spec: SystemSpec,
    sys: MorseSystem,
    cps: Vec<CriticalPoint>,
    complex: ChainComplex,
}

fn setup(spec: SystemSpec) -> Result<Sys, String> {
    let tol = Tolerances::default();
    let sys = builtin_system(&spec).map_err(|e| format!("{spec:?}: {e}"))?;
    let cps = find_critical_points(&sys, &tol).map_err(|e| format!("{spec:?}: {e}"))?;
    let complex = build_morse_complex(&sys, &cps, &tol).map_err(|e| format!("{spec:?}: {e}"))?;
    Ok(Sys { spec, sys, cps, complex })
}

fn problem<'a>(a: &'a Sys, b: &'a Sys, map: &'a SmoothMap) -> MapProblem<'a> {
    MapProblem { src: &a.sys, src_cps: &a.cps, dst: &b.sys, dst_cps: &b.cps, map }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn indices(cps: &[CriticalPoint]) -> Vec<usize> {
    let mut v: Vec<usize> = cps.iter().map(|c| c.index).collect();
    v.sort();
    v
}

fn circ(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

// plain integer product, kept apart from the library's checked arithmetic
fn matmul(a: &IntMatrix, b: &IntMatrix) -> IntMatrix {
    let mut out = IntMatrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            out[(i, j)] = (0..a.ncols()).map(|k| a[(i, k)] * b[(k, j)]).sum();
        }
    }
    out
}

fn is_zero(m: &IntMatrix) -> bool {
    m.iter().all(|v| *v == 0)
}

fn boundary_squared_vanishes(c: &ChainComplex) -> bool {
    (2..=c.top_degree()).all(|k| is_zero(&matmul(&c.boundary(k - 1), &c.boundary(k))))
}

// ∂_k Φ_k = Φ_{k-1} ∂_k for every k ≥ 1
fn commutes(phi: &ChainMap, src: &ChainComplex, dst: &ChainComplex) -> bool {
    (1..phi.matrices.len()).all(|k| {
        let dk = dst.boundary(k);
        let sk = src.boundary(k);
        let (l, r) = (matmul(&dk, &phi.matrices[k]), matmul(&phi.matrices[k - 1], &sk));
        l == r
    })
}

fn circle_map(d: i64, c: f64) -> SmoothMap {
    SmoothMap::TorusAffine { matrix: vec![vec![d]], shift: vec![c], waves: vec![] }
}

fn angles(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.2..2.9), rng.gen_range(0.0..std::f64::consts::TAU)]
}

fn perturbed(family: &str, rng: &mut ChaCha8Rng) -> SystemSpec {
    let torus = |n: usize, rng: &mut ChaCha8Rng| SystemSpec::Torus {
        offsets: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
        amplitudes: Some((0..n).map(|_| rng.gen_range(0.6..1.6)).collect()),
    };
    match family {
        "circle" => SystemSpec::circle(rng.gen_range(0.0..1.0)),
        "torus" => torus(2, rng),
        "torus3" => torus(3, rng),
        "sphere" => SystemSpec::SphereHeight { rotation: angles(rng) },
        _ => SystemSpec::Peanut { lambda: rng.gen_range(0.7..2.0), rotation: angles(rng) },
    }
}

fn builtin(family: &str) -> SystemSpec {
    match family {
        "circle" => SystemSpec::circle(0.0),
        "torus" => SystemSpec::torus2(0.0, 0.0),
        "torus3" => SystemSpec::Torus { offsets: vec![0.0; 3], amplitudes: None },
        "sphere" => SystemSpec::sphere_height(),
        _ => SystemSpec::peanut(1.0),
    }
}

const FAMILIES: [(&str, i64); 5] = [("circle", 0), ("torus", 0), ("sphere", 2), ("peanut", 2), ("torus3", 0)];

fn generated_systems() -> Vec<(&'static str, i64, SystemSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = Vec::new();
    for (family, chi) in FAMILIES {
        out.push((family, chi, builtin(family)));
        for _ in 0..20 {
            out.push((family, chi, perturbed(family, &mut rng)));
        }
    }
    out
}

fn torus_reference() -> Outcome {
    let s = setup(SystemSpec::torus2(0.0, 0.0))?;
    // sin 2πθ = 0 on each axis: θ ∈ {0, 1/2}, and cos has a maximum at 0
    let mut expected = Vec::new();
    for a in [0.0, 0.5] {
        for b in [0.0, 0.5] {
            expected.push(((a, b), (a == 0.0) as usize + (b == 0.0) as usize));
        }
    }
    ensure(s.cps.len() == 4, || format!("{} critical points", s.cps.len()))?;
    for ((a, b), index) in expected {
        let found = s.cps.iter().find(|c| circ(c.point.coords[0], a) < 1e-8 && circ(c.point.coords[1], b) < 1e-8);
        let c = found.ok_or_else(|| format!("no critical point at ({a}, {b})"))?;
        ensure(c.index == index, || format!("index {} at ({a}, {b}), expected {index}", c.index))?;
    }
    ensure(indices(&s.cps) == vec![0, 1, 1, 2], || format!("indices {:?}", indices(&s.cps)))?;
    for k in 1..=2 {
        ensure(is_zero(&s.complex.boundary(k)), || format!("boundary {k} is {}", s.complex.boundary(k)))?;
    }
    let h = homology(&s.complex).map_err(|e| e.to_string())?;
    ensure(h.betti == vec![1, 2, 1], || format!("betti {:?}", h.betti))?;
    ensure(h.torsion.iter().all(|t| t.is_empty()), || format!("torsion {:?}", h.torsion))?;
    Ok("4 points, indices {0,1,1,2}, zero boundaries, betti (1,2,1)".into())
}

fn peanut_reference() -> Outcome {
    let lambda = 1.0;
    let s = setup(SystemSpec::peanut(lambda))?;
    // ∇(z + λx²) = μ∇|x|²: y = 0, and either x = 0, z = ±1 or z = 1/2λ
    let x = (1.0 - 1.0 / (4.0 * lambda * lambda)).sqrt();
    let z = 1.0 / (2.0 * lambda);
    let expected = [(Vector3::new(0.0, 0.0, -1.0), 0), (Vector3::new(0.0, 0.0, 1.0), 1), (Vector3::new(x, 0.0, z), 2), (Vector3::new(-x, 0.0, z), 2)];
    ensure(s.cps.len() == 4, || format!("{} critical points", s.cps.len()))?;
    for (q, index) in expected {
        let found = s.cps.iter().find(|c| s.sys.manifold.embed(&c.point).is_some_and(|e| (e - q).norm() < 1e-7));
        let c = found.ok_or_else(|| format!("no critical point at {q:?}"))?;
        ensure(c.index == index, || format!("index {} at {q:?}, expected {index}", c.index))?;
        let value = q.z + lambda * q.x * q.x;
        ensure((c.value - value).abs() < 1e-9, || format!("value {} at {q:?}, expected {value}", c.value))?;
    }
    let d2 = s.complex.boundary(2);
    ensure(d2.shape() == (1, 2), || format!("∂₂ has shape {:?}", d2.shape()))?;
    let (a, b) = (d2[(0, 0)], d2[(0, 1)]);
    ensure(a * b < 0 && a.abs() == 1 && b.abs() == 1, || format!("∂₂ = [{a}, {b}]"))?;
    ensure(is_zero(&s.complex.boundary(1)), || format!("∂₁ = {}", s.complex.boundary(1)))?;
    let h = homology(&s.complex).map_err(|e| e.to_string())?;
    ensure(h.betti == vec![1, 0, 1], || format!("betti {:?}", h.betti))?;
    Ok(format!("indices {{0,1,2,2}}, ∂₂ = [{a}, {b}], betti (1,0,1)"))
}

fn boundary_squared(systems: &[(&str, i64, Result<Sys, String>)]) -> Outcome {
    let mut checked = 0;
    for (family, _, s) in systems {
        let s = s.as_ref().map_err(|e| format!("{family}: {e}"))?;
        ensure(boundary_squared_vanishes(&s.complex), || format!("∂² ≠ 0 for {:?}", s.spec))?;
        checked += 1;
    }
    Ok(format!("{checked} complexes"))
}

fn euler(systems: &[(&str, i64, Result<Sys, String>)]) -> Outcome {
    let mut checked = 0;
    for (family, chi, s) in systems {
        let s = s.as_ref().map_err(|e| format!("{family}: {e}"))?;
        let sum: i64 = s.cps.iter().map(|c| if c.index % 2 == 0 { 1 } else { -1 }).sum();
        ensure(sum == *chi, || format!("χ = {sum} for {:?}, expected {chi}", s.spec))?;
        checked += 1;
    }
    Ok(format!("{checked} systems"))
}

// signed number of θ ∈ [0,1) with dθ + c ≡ a (mod 1)
fn signed_roots(d: i64, c: f64, a: f64) -> i64 {
    let mut count = 0;
    for j in -d.abs() - 2..=d.abs() + 2 {
        let theta = (a - c + j as f64) / d as f64;
        if (0.0..1.0).contains(&theta) {
            count += d.signum();
        }
    }
    count
}

fn circle_degrees() -> Outcome {
    let tol = Tolerances::default();
    let (a, target) = (setup(SystemSpec::circle(0.0))?, 0.13);
    let b = setup(SystemSpec::circle(target))?;
    let c = 0.291;
    for d in [-2, -1, 1, 2, 3] {
        let phi = chain_map_by_intersection(&problem(&a, &b, &circle_map(d, c)), &a.complex, &b.complex, &tol).map_err(|e| format!("d = {d}: {e}"))?;
        // the 1-cell of the source is the maximum; the target maximum sits at its offset
        let oracle = signed_roots(d, c, target);
        ensure(phi.degree(1)[(0, 0)] == oracle, || format!("d = {d}: M₁ = {}, oracle {oracle}", phi.degree(1)))?;
        let h = induced_on_homology(&phi, &a.complex, &b.complex, 1).map_err(|e| e.to_string())?;
        ensure(h.shape() == (1, 1) && h[(0, 0)] == d, || format!("d = {d}: H₁ = {h}"))?;
    }
    Ok("d ∈ {-2,-1,1,2,3}".into())
}

fn chain_identities() -> Outcome {
    let tol = Tolerances::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut checked = Vec::new();
    let mut record = |name: String, phi: ChainMap, a: &Sys, b: &Sys| -> Result<(), String> {
        ensure(commutes(&phi, &a.complex, &b.complex), || format!("{name}: ∂Φ ≠ Φ∂"))?;
        checked.push(name);
        Ok(())
    };
    for spec in [SystemSpec::circle(0.0), SystemSpec::torus2(0.0, 0.0), SystemSpec::peanut(1.0)] {
        let s = setup(spec)?;
        let phi = chain_map_by_intersection(&problem(&s, &s, &SmoothMap::Identity), &s.complex, &s.complex, &tol).map_err(|e| e.to_string())?;
        record(format!("identity {:?}", s.spec), phi, &s, &s)?;
    }
    let a = setup(SystemSpec::circle(0.0))?;
    let b = setup(SystemSpec::circle(0.13))?;
    for d in [-2, -1, 1, 2, 3] {
        let phi = chain_map_by_intersection(&problem(&a, &b, &circle_map(d, 0.291)), &a.complex, &b.complex, &tol).map_err(|e| e.to_string())?;
        record(format!("degree {d}"), phi, &a, &b)?;
    }
    let t = setup(SystemSpec::torus2(0.0, 0.0))?;
    let self_maps = [SmoothMap::Identity, SmoothMap::TorusAffine { matrix: vec![vec![1, 1], vec![0, 1]], shift: vec![0.0, 0.0], waves: vec![] }];
    let mut done = 0;
    for _ in 0..20 {
        if done == 4 {
            break;
        }
        let target = setup(SystemSpec::torus2(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)))?;
        let map = &self_maps[done % 2];
        // draws too close to a non-transverse configuration are skipped
        let Ok(phi) = chain_map_by_intersection(&problem(&t, &target, map), &t.complex, &target.complex, &tol) else { continue };
        record(format!("torus self-map {:?}", target.spec), phi, &t, &target)?;
        done += 1;
    }
    ensure(done == 4, || format!("only {done} seeded torus self-maps were transverse"))?;
    let embed = SmoothMap::TorusAffine { matrix: vec![vec![1], vec![0]], shift: vec![0.0, 0.37], waves: vec![] };
    let phi = chain_map_by_intersection(&problem(&a, &t, &embed), &a.complex, &t.complex, &tol).map_err(|e| e.to_string())?;
    record("S¹ → T² embedding".into(), phi, &a, &t)?;
    Ok(format!("{} chain maps", checked.len()))
}

fn flow_matches_intersection() -> Outcome {
    let tol = Tolerances::default();
    let circle = setup(SystemSpec::circle(0.0))?;
    let circle2 = setup(SystemSpec::circle(0.13))?;
    let torus = setup(SystemSpec::torus2(0.0, 0.0))?;
    let torus2 = setup(SystemSpec::torus2(0.21, 0.34))?;
    let peanut = setup(SystemSpec::peanut(1.0))?;
    let min_of = |s: &Sys| {
        let m = s.cps.iter().find(|c| c.index == 0).expect("a minimum");
        SmoothMap::Constant { point: m.point.coords_vec(), chart: m.point.chart }
    };
    let cases: Vec<(&str, &Sys, &Sys, SmoothMap)> = vec![
        ("S¹→S¹ degree -2", &circle, &circle2, circle_map(-2, 0.291)),
        ("S¹→S¹ degree -1", &circle, &circle2, circle_map(-1, 0.291)),
        ("S¹→S¹ degree 1", &circle, &circle2, circle_map(1, 0.291)),
        ("S¹→S¹ degree 2", &circle, &circle2, circle_map(2, 0.291)),
        ("S¹→S¹ degree 3", &circle, &circle2, circle_map(3, 0.291)),
        ("S¹→T² embedding", &circle, &torus, SmoothMap::TorusAffine { matrix: vec![vec![1], vec![0]], shift: vec![0.0, 0.37], waves: vec![] }),
        ("S¹→S²", &circle, &peanut, SmoothMap::CircleToSphere { rotation: [0.3, 1.1, 0.2], height: 0.1 }),
        ("T²→S¹ projection", &torus, &circle2, SmoothMap::TorusAffine { matrix: vec![vec![1, 0]], shift: vec![0.0], waves: vec![] }),
        ("T²→T² identity", &torus, &torus2, SmoothMap::Identity),
        ("T²→T² shear", &torus, &torus2, SmoothMap::TorusAffine { matrix: vec![vec![1, 1], vec![0, 1]], shift: vec![0.0, 0.0], waves: vec![] }),
        ("T²→S² constant", &torus, &peanut, min_of(&peanut)),
        ("S²→S¹ constant", &peanut, &circle, min_of(&circle)),
        ("S²→T² constant", &peanut, &torus, min_of(&torus)),
        ("S²→S² rotation", &peanut, &peanut, SmoothMap::SphereRotation { angles: [0.4, 0.3, 0.9] }),
    ];
    for (name, a, b, map) in &cases {
        let p = problem(a, b, map);
        let inter = chain_map_by_intersection(&p, &a.complex, &b.complex, &tol).map_err(|e| format!("{name}: intersection: {e}"))?;
        let fm = chain_map_by_flow(&p, &a.complex, &b.complex, &tol, 1).map_err(|e| format!("{name}: flow: {e}"))?;
        ensure(fm.map == inter, || format!("{name}: flow {:?} vs intersection {:?}", fm.map.matrices, inter.matrices))?;
        ensure(commutes(&inter, &a.complex, &b.complex), || format!("{name}: ∂Φ ≠ Φ∂"))?;
        let at = |t: f64| chain_map_by_flow_at(&p, &a.complex, &b.complex, t, &tol, 1).map_err(|e| format!("{name}: flow at {t}: {e}"));
        let (once, twice) = (at(fm.time)?, at(2.0 * fm.time)?);
        ensure(once.as_ref() == Some(&inter) && twice.as_ref() == Some(&inter), || format!("{name}: unstable between t = {} and 2t", fm.time))?;
    }
    Ok(format!("{} maps", cases.len()))
}

fn attaching_degrees() -> Outcome {
    let tol = Tolerances::default();
    let mut pairs = 0;
    for spec in [SystemSpec::torus2(0.0, 0.0), SystemSpec::peanut(1.0), SystemSpec::torus2(0.17, 0.62), SystemSpec::Peanut { lambda: 1.3, rotation: [0.5, 0.8, 1.9] }] {
        let s = setup(spec)?;
        for x in &s.cps {
            for y in s.cps.iter().filter(|y| y.index + 1 == x.index) {
                let a = attaching_degree(&s.sys, &s.cps, x, y, &tol).map_err(|e| format!("{:?} {}→{}: {e}", s.spec, x.id, y.id))?;
                let n = count_trajectories(&s.sys, &s.cps, x, y, &tol).map_err(|e| format!("{:?} {}→{}: {e}", s.spec, x.id, y.id))?;
                ensure(a == n, || format!("{:?} {}→{}: degree {a}, count {n}", s.spec, x.id, y.id))?;
                pairs += 1;
            }
        }
    }
    Ok(format!("{pairs} pairs"))
}

fn cup_pairing() -> Outcome {
    let tol = Tolerances::default();
    let mut seen = Vec::new();
    for seed in [1, 2, 3] {
        let (ts, tensor) = seeded_triple(&SystemSpec::torus2(0.0, 0.0), seed, 12, &tol).map_err(|e| format!("seed {seed}: {e}"))?;
        let m = h1_pairing(&ts, &tensor, &tol).map_err(|e| format!("seed {seed}: {e}"))?.matrix;
        // recheck the ring relations directly on the matrix
        ensure(m.len() == 2 && m.iter().all(|r| r.len() == 2), || format!("seed {seed}: shape {m:?}"))?;
        ensure(m[0][0] == 0 && m[1][1] == 0, || format!("seed {seed}: squares {m:?}"))?;
        ensure(m[0][1] == -m[1][0] && m[0][1].abs() == 1, || format!("seed {seed}: {m:?}"))?;
        seen.push(m);
    }
    ensure(seen.windows(2).all(|w| w[0] == w[1]), || format!("reseeding changed the pairing: {seen:?}"))?;
    Ok(format!("pairing {:?} for seeds 1, 2, 3", seen[0]))
}

fn composition() -> Outcome {
    let tol = Tolerances::default();
    let c = setup(SystemSpec::circle(0.0))?;
    let t = setup(SystemSpec::torus2(0.0, 0.0))?;
    let phi = SmoothMap::TorusAffine { matrix: vec![vec![1], vec![0]], shift: vec![0.0, 0.37], waves: vec![] };
    let psi = SmoothMap::TorusAffine { matrix: vec![vec![1, 0]], shift: vec![0.0], waves: vec![] };
    let report = compose_experiment(&Composition { x: (&c.sys, &c.cps, &c.complex), y: (&t.sys, &t.cps, &t.complex), z: (&c.sys, &c.cps, &c.complex) }, &phi, &psi, &tol);
    ensure(report.errors.is_empty(), || format!("{:?}", report.errors))?;
    ensure(report.equal, || format!("composite {:?} vs product {:?}", report.composite, report.product))?;
    let m_phi = chain_map_by_intersection(&problem(&c, &t, &phi), &c.complex, &t.complex, &tol).map_err(|e| e.to_string())?;
    let m_psi = chain_map_by_intersection(&problem(&t, &c, &psi), &t.complex, &c.complex, &tol).map_err(|e| e.to_string())?;
    let composite = report.composite.ok_or("no composite")?;
    for k in 0..composite.len() {
        let product = matmul(&m_psi.matrices[k], &m_phi.matrices[k]);
        let rows: Vec<Vec<i64>> = product.row_iter().map(|r| r.iter().cloned().collect()).collect();
        ensure(rows == composite[k], || format!("degree {k}: {rows:?} vs {:?}", composite[k]))?;
    }
    let stable = check_stably_regular(&t.sys, &c.sys, &c.cps, &psi, 200, 10, &tol).map_err(|e| e.to_string())?;
    ensure(stable.pass && stable.samples == 200, || format!("{} violations", stable.violations.len()))?;
    Ok(format!("M(ψ∘φ) = M(ψ)·M(φ); 200 samples, {} untrusted", stable.untrusted))
}

fn jacobians_and_monotonicity() -> Outcome {
    let tol = Tolerances::default();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut rise: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (family, _) in FAMILIES {
        let s = setup(builtin(family))?;
        let n = s.sys.dim();
        let rate = s.cps.iter().flat_map(|c| c.eigenvalues.iter().map(|l| l.abs())).fold(1.0, f64::max);
        for _ in 0..50 {
            let p = s.sys.manifold.random_point(&mut rng);
            let t = rng.gen_range(0.1..2.0) / rate;
            let (q, j) = flow_with_jacobian(&s.sys, &p, t, &tol.flow).map_err(|e| e.to_string())?;
            let mut fd = DMatrix::zeros(n, n);
            for i in 0..n {
                let mut column = DVector::zeros(n);
                for (sign, weight) in [(1.0, 0.5 / h), (-1.0, -0.5 / h)] {
                    let mut coords = p.coords.clone();
                    coords[i] += sign * h;
                    let r = flow(&s.sys, &Point { chart: p.chart, coords }, t, &tol.flow).map_err(|e| e.to_string())?;
                    let (d, _) = s.sys.manifold.local_displacement(&r, &q).ok_or("displaced image left the chart")?;
                    column += d * weight;
                }
                fd.set_column(i, &column);
            }
            worst = worst.max((&j - &fd).norm() / j.norm());
        }
        for _ in 0..10 {
            let p = s.sys.manifold.random_point(&mut rng);
            let tr = trajectory(&s.sys, &p, 5.0, &tol.flow).map_err(|e| e.to_string())?;
            for w in tr.points.windows(2) {
                rise = rise.max(s.sys.value(&w[1]) - s.sys.value(&w[0]));
            }
        }
    }
    ensure(worst <= 1e-4, || format!("relative Jacobian error {worst:.2e}"))?;
    ensure(rise <= 1e-8, || format!("F increased by {rise:.2e}"))?;
    Ok(format!("Jacobian error {worst:.1e}, largest rise of F {rise:.1e}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("peanut.toml");
    std::fs::write(&config, "seed = 7\ncommands = [\"verify\"]\n\n[system]\nfamily = \"peanut\"\nlambda = 1.2\n").map_err(|e| e.to_string())?;
    let run = |name: &str| -> Result<Vec<u8>, String> {
        let out: PathBuf = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_morsefn"))
            .arg("verify")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(&out)
            .status()
            .map_err(|e| e.to_string())?;
        ensure(status.code() == Some(0), || format!("verify exited with {status}"))?;
        std::fs::read(out.join("verify.json")).map_err(|e| e.to_string())
    };
    let (a, b) = (run("first")?, run("second")?);
    ensure(a == b, || "reports differ".into())?;
    Ok(format!("{} identical bytes", a.len()))
}

fn main() {
    // optional criterion numbers select a subset, e.g. `cargo test --test acceptance -- 3 7`
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let systems: OnceLock<Vec<(&str, i64, Result<Sys, String>)>> = OnceLock::new();
    let generated = || systems.get_or_init(|| generated_systems().into_iter().map(|(f, chi, spec)| (f, chi, setup(spec))).collect());
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("torus reference system", Box::new(torus_reference)),
        ("peanut reference system", Box::new(peanut_reference)),
        ("boundary squared vanishes", Box::new(|| boundary_squared(generated()))),
        ("euler characteristic", Box::new(|| euler(generated()))),
        ("circle degree maps", Box::new(circle_degrees)),
        ("chain map identity", Box::new(chain_identities)),
        ("flow equals intersection", Box::new(flow_matches_intersection)),
        ("attaching degree equals trajectory count", Box::new(attaching_degrees)),
        ("cup pairing on the torus", Box::new(cup_pairing)),
        ("stably regular composition", Box::new(composition)),
        ("variational jacobians and monotone descent", Box::new(jacobians_and_monotonicity)),
        ("deterministic verify report", Box::new(determinism)),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} ({secs:.1}s)", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
