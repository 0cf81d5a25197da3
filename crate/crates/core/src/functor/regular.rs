use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{compose_experiment, CompositionReport, Composition, SmoothMap};
use crate::complex::{build_morse_complex, ChainComplex};
use crate::critical::{find_critical_points, CriticalPoint};
use crate::dynamics::{integrate, limit_point, FlowState};
use crate::geometry::{builtin_system, MorseSystem, Point, SystemSpec};
use crate::invariants::{tube_radius, Section};
use crate::linalg::condition_number;
use crate::settings::Tolerances;
use crate::{Error, Result};

/// Backward and forward sampling horizon.
const HORIZON: f64 = 20.0;
/// Error amplification beyond which a backward sample is not trusted.
const AMPLIFICATION: f64 = 1e12;

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub sample: usize,
    pub start: Point,
    pub times: (f64, f64),
    pub detail: String,
}

/// Sampled evidence for stable regularity.
#[derive(Debug, Clone, Serialize)]
pub struct StableRegularity {
    pub samples: usize,
    pub seed: u64,
    /// Samples dropped because errors are amplified too much: backward flow
    /// with a large Jacobian, or images within `r_conv` of a non-minimum.
    pub untrusted: usize,
    pub violations: Vec<Violation>,
    pub pass: bool,
}

struct PathPoint {
    time: f64,
    image: Point,
}

/// Trusted samples of `t ↦ ψ(f^t(x))` for `t ∈ [−20, 20]`, ordered in time.
fn sample_path(src: &MorseSystem, dst: &MorseSystem, map: &SmoothMap, x: &Point, tol: &Tolerances) -> Result<(Vec<PathPoint>, usize)> {
    let mut backward: Vec<FlowState> = Vec::new();
    let mut untrusted = 0;
    integrate(src, x, -HORIZON, true, &tol.flow, |s| {
        let j = s.jacobian.as_ref().expect("requested");
        let sv = j.singular_values();
        // the forward map from this sample back to x has Jacobian J⁻¹
        if condition_number(j).max(1.0 / sv.min()) > AMPLIFICATION {
            untrusted += 1;
            return ControlFlow::Break(());
        }
        backward.push(FlowState { point: s.point.clone(), jacobian: None, time: s.time });
        ControlFlow::Continue(())
    })?;
    let mut forward: Vec<FlowState> = Vec::new();
    integrate(src, x, HORIZON, false, &tol.flow, |s| {
        forward.push(s.clone());
        ControlFlow::Continue(())
    })?;
    let mut states: Vec<(f64, Point)> = backward.into_iter().rev().map(|s| (s.time, s.point)).collect();
    states.push((0.0, x.clone()));
    states.extend(forward.into_iter().map(|s| (s.time, s.point)));
    let path = states
        .into_iter()
        .map(|(time, p)| Ok(PathPoint { time, image: map.apply(&src.manifold, &dst.manifold, &p)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok((path, untrusted))
}

/// Time-indexed checks along one path: the target limit must not change, and
/// the path must not cross a codimension-one stable manifold.
fn path_violations(dst: &MorseSystem, dst_cps: &[CriticalPoint], sections: &[Section], spacing: f64, path: &[PathPoint], sample: usize, tol: &Tolerances) -> Result<(Vec<Violation>, usize)> {
    let mut out = Vec::new();
    let mut untrusted = 0;
    let start = path.iter().find(|p| p.time == 0.0).map(|p| p.image.clone()).expect("time zero is sampled");
    let grid = [-20.0, -10.0, -5.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0];
    let mut limits: Vec<(f64, usize)> = Vec::new();
    for t in grid {
        let Some(p) = path.iter().min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs())) else { continue };
        if (p.time - t).abs() > 0.25 * t.abs().max(0.5) || limits.iter().any(|l| l.0 == p.time) {
            continue;
        }
        // exponentially close to a non-minimum the limit is decided by rounding
        if dst_cps.iter().any(|c| c.index > 0 && dst.distance(&c.point, &p.image) < tol.flow.r_conv) {
            untrusted += 1;
            continue;
        }
        match limit_point(dst, dst_cps, &p.image, tol) {
            Ok(id) => limits.push((p.time, id)),
            Err(Error::NoConvergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    for w in limits.windows(2) {
        if w[0].1 != w[1].1 {
            out.push(Violation { sample, start: start.clone(), times: (w[0].0, w[1].0), detail: format!("limit changes from {} to {}", w[0].1, w[1].1) });
        }
    }
    // keep samples at least `spacing` apart in the target
    let mut kept: Vec<&PathPoint> = Vec::new();
    for p in path {
        if kept.last().is_none_or(|q| dst.distance(&q.image, &p.image) >= spacing) {
            kept.push(p);
        }
    }
    for section in sections {
        let mut prev: Option<(f64, f64)> = None;
        for p in &kept {
            let Some(v) = section.eval(&p.image, false)? else {
                prev = None;
                continue;
            };
            let r = v.residual[0];
            if let Some((t0, r0)) = prev {
                if r0 * r < 0.0 {
                    out.push(Violation { sample, start: start.clone(), times: (t0, p.time), detail: format!("path crosses the stable manifold of {}", section.target_id()) });
                }
            }
            if r != 0.0 {
                prev = Some((p.time, r));
            }
        }
    }
    Ok((out, untrusted))
}

/// Sampled test that `ψ` carries whole source trajectories into single target
/// stable manifolds. A pass is evidence, not proof.
pub fn check_stably_regular(
    src: &MorseSystem,
    dst: &MorseSystem,
    dst_cps: &[CriticalPoint],
    map: &SmoothMap,
    samples: usize,
    seed: u64,
    tol: &Tolerances,
) -> Result<StableRegularity> {
    map.check(&src.manifold, &dst.manifold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<Point> = (0..samples).map(|_| src.manifold.random_point(&mut rng)).collect();
    let sections: Vec<Section> = dst_cps.iter().filter(|c| c.index == 1).map(|c| Section::new(dst, dst_cps, c, tol)).collect();
    let spacing = 0.25 * tube_radius(dst, dst_cps);
    let results = starts
        .par_iter()
        .enumerate()
        .map(|(i, x)| -> Result<(Vec<Violation>, usize)> {
            let (path, untrusted) = sample_path(src, dst, map, x, tol)?;
            let (v, skipped) = path_violations(dst, dst_cps, &sections, spacing, &path, i, tol)?;
            Ok((v, untrusted + skipped))
        })
        .collect::<Result<Vec<_>>>()?;
    let untrusted = results.iter().map(|r| r.1).sum();
    let violations: Vec<Violation> = results.into_iter().flat_map(|r| r.0).collect();
    Ok(StableRegularity { samples, seed, untrusted, pass: violations.is_empty(), violations })
}

/// A composition where `M(ψ∘φ) ≠ M(ψ)·M(φ)`.
#[derive(Debug, Clone, Serialize)]
pub struct Counterexample {
    pub seed: u64,
    pub phi: SmoothMap,
    pub psi: SmoothMap,
    pub report: CompositionReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleSearch {
    pub attempts: usize,
    /// Attempts where some chain map could not be computed.
    pub skipped: usize,
    pub found: Option<Counterexample>,
}

fn setup(spec: &SystemSpec, tol: &Tolerances) -> Result<(MorseSystem, Vec<CriticalPoint>, ChainComplex)> {
    let sys = builtin_system(spec)?;
    let cps = find_critical_points(&sys, tol)?;
    let c = build_morse_complex(&sys, &cps, tol)?;
    Ok((sys, cps, c))
}

/// Search seeded compositions `S¹ → T² → S²` (an embedded circle followed by
/// a fold of the torus over the peanut sphere) for a failure of functoriality.
pub fn search_counterexample(seed: u64, attempts: usize, tol: &Tolerances) -> Result<CounterexampleSearch> {
    let x = setup(&SystemSpec::circle(0.0), tol)?;
    let y = setup(&SystemSpec::torus2(0.0, 0.0), tol)?;
    let z = setup(&SystemSpec::peanut(1.0), tol)?;
    let systems = Composition { x: (&x.0, &x.1, &x.2), y: (&y.0, &y.1, &y.2), z: (&z.0, &z.1, &z.2) };
    let mut skipped = 0;
    for attempt in 0..attempts {
        let s = seed.wrapping_add(attempt as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let phi = SmoothMap::TorusAffine { matrix: vec![vec![1], vec![rng.gen_range(-1..=1)]], shift: vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)], waves: vec![] };
        let psi = SmoothMap::TorusToSphere { rotation: [rng.gen_range(0.0..6.2), rng.gen_range(0.2..2.9), rng.gen_range(0.0..6.2)], twist: rng.gen_range(-0.5..0.5) };
        let report = compose_experiment(&systems, &phi, &psi, tol);
        if !report.errors.is_empty() {
            skipped += 1;
            continue;
        }
        if !report.equal {
            return Ok(CounterexampleSearch { attempts: attempt + 1, skipped, found: Some(Counterexample { seed: s, phi, psi, report }) });
        }
    }
    Ok(CounterexampleSearch { attempts, skipped, found: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn aligned_projection_is_stably_regular() {
        let t = tol();
        let (src, _, _) = setup(&SystemSpec::torus2(0.0, 0.0), &t).unwrap();
        let (dst, dcps, _) = setup(&SystemSpec::circle(0.0), &t).unwrap();
        let map = SmoothMap::TorusAffine { matrix: vec![vec![1, 0]], shift: vec![0.0], waves: vec![] };
        let r = check_stably_regular(&src, &dst, &dcps, &map, 40, 3, &t).unwrap();
        assert!(r.pass, "{:?}", r.violations.first());
    }

    #[test]
    fn perturbed_projection_violates() {
        let t = tol();
        let (src, _, _) = setup(&SystemSpec::torus2(0.0, 0.0), &t).unwrap();
        let (dst, dcps, _) = setup(&SystemSpec::circle(0.0), &t).unwrap();
        let map = SmoothMap::TorusAffine { matrix: vec![vec![1, 0]], shift: vec![0.0], waves: vec![super::super::Wave { component: 0, amplitude: 0.2, frequency: vec![0, 1], phase: 0.0 }] };
        let r = check_stably_regular(&src, &dst, &dcps, &map, 40, 3, &t).unwrap();
        assert!(!r.pass);
    }

    #[test]
    fn identity_is_stably_regular() {
        let t = tol();
        let (src, cps, _) = setup(&SystemSpec::peanut(1.0), &t).unwrap();
        let r = check_stably_regular(&src, &src, &cps, &SmoothMap::Identity, 20, 9, &t).unwrap();
        assert!(r.pass, "{:?}", r.violations.first());
    }
}
