use std::f64::consts::PI;
use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_regularity, labelled, ChainMap, MapProblem, MappedFamily};
use crate::complex::ChainComplex;
use crate::critical::CriticalPoint;
use crate::dynamics::{flow, flow_with_jacobian, integrate};
use crate::geometry::{MorseSystem, Point};
use crate::invariants::{roots, search_options, tube_radius, unstable_disk, CellFamily, Domain, Family, SphereFamily};
use crate::linalg::det;
use crate::settings::{FlowSettings, Tolerances};
use crate::{Error, Result};

/// Product neighbourhood `|u| < r, |s| < r` of a critical point in its
/// eigen-coordinates.
#[derive(Debug, Clone)]
pub struct TubeCoords {
    pub id: usize,
    pub index: usize,
    pub radius: f64,
    center: Point,
    inverse: DMatrix<f64>,
}

/// Eigen-coordinates of one point.
pub struct TubePosition {
    pub u: DVector<f64>,
    pub s: DVector<f64>,
    /// `∂u/∂q` in the chart of `q`.
    pub du: DMatrix<f64>,
}

impl TubePosition {
    pub fn inside(&self, r: f64) -> bool {
        self.u.norm() < r && self.s.norm() < r
    }
}

impl TubeCoords {
    pub fn new(sys: &MorseSystem, cps: &[CriticalPoint], cp: &CriticalPoint) -> Self {
        let n = sys.dim();
        let mut cols: Vec<DVector<f64>> = (0..cp.index).map(|i| cp.unstable_frame.vector(i)).collect();
        cols.extend(cp.stable_frame.iter().cloned());
        let frame = DMatrix::from_columns(&cols);
        let inverse = if n == 0 { frame } else { frame.try_inverse().expect("eigenframe is a basis") };
        TubeCoords { id: cp.id, index: cp.index, radius: tube_radius(sys, cps), center: cp.point.clone(), inverse }
    }

    pub fn position(&self, sys: &MorseSystem, q: &Point) -> Option<TubePosition> {
        let (d, tr) = sys.manifold.local_displacement(q, &self.center)?;
        let full = &self.inverse * d;
        let k = self.index;
        let n = full.len();
        Some(TubePosition { u: full.rows(0, k).into_owned(), s: full.rows(k, n - k).into_owned(), du: self.inverse.rows(0, k) * tr })
    }

    pub fn contains(&self, sys: &MorseSystem, q: &Point) -> bool {
        self.position(sys, q).is_some_and(|p| p.inside(self.radius))
    }
}

/// A family followed by the time-`t` flow.
pub struct FlowedFamily<'a> {
    pub sys: &'a MorseSystem,
    pub inner: &'a dyn Family,
    pub time: f64,
    pub settings: FlowSettings,
}

impl Family for FlowedFamily<'_> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn domain(&self) -> Domain {
        self.inner.domain()
    }

    fn eval(&self, z: &DVector<f64>) -> Result<Point> {
        flow(self.sys, &self.inner.eval(z)?, self.time, &self.settings)
    }

    fn eval_jac(&self, z: &DVector<f64>) -> Result<(Point, DMatrix<f64>)> {
        let (p, dp) = self.inner.eval_jac(z)?;
        let (q, j) = flow_with_jacobian(self.sys, &p, self.time, &self.settings)?;
        Ok((q, j * dp))
    }
}

/// Lattice of a parameter domain with its axis neighbours (periodic axes wrap).
fn lattice(domain: &Domain, per_axis: usize) -> (Vec<DVector<f64>>, Vec<(usize, usize)>, Vec<bool>) {
    let k = domain.dim();
    let counts: Vec<usize> = (0..k).map(|i| if domain.periodic[i] { per_axis } else { per_axis + 1 }).collect();
    let total: usize = counts.iter().product();
    let mut points = Vec::with_capacity(total);
    let mut on_boundary = Vec::with_capacity(total);
    let mut edges = Vec::new();
    for idx in 0..total {
        let mut rem = idx;
        let mut stride = 1;
        let mut z = DVector::zeros(k);
        let mut boundary = false;
        for i in 0..k {
            let j = rem % counts[i];
            rem /= counts[i];
            z[i] = domain.lo[i] + (domain.hi[i] - domain.lo[i]) * j as f64 / per_axis as f64;
            boundary |= !domain.periodic[i] && (j == 0 || j == per_axis);
            if j + 1 < counts[i] {
                edges.push((idx, idx + stride));
            } else if domain.periodic[i] {
                edges.push((idx, idx - j * stride));
            }
            stride *= counts[i];
        }
        points.push(z);
        on_boundary.push(boundary);
    }
    (points, edges, on_boundary)
}

fn admissibility_density(k: usize) -> usize {
    match k {
        1 => 64,
        2 => 16,
        _ => 6,
    }
}

/// Mesh test that the collapse onto `D_y/∂D_y` is continuous on the family:
/// no inside sample is adjacent to a sample leaving through the stable side,
/// and (for cells) the boundary stays outside the tube.
fn admissible(sys: &MorseSystem, tube: &TubeCoords, family: &dyn Family, closed: bool) -> Result<bool> {
    let (points, edges, boundary) = lattice(&family.domain(), admissibility_density(family.param_dim()));
    let r = tube.radius;
    let states = points
        .par_iter()
        .map(|z| -> Result<(bool, f64)> {
            let q = family.eval(z)?;
            Ok(match tube.position(sys, &q) {
                Some(p) => (p.inside(r), p.u.norm()),
                None => (false, f64::INFINITY),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if !closed && states.iter().zip(&boundary).any(|(s, b)| *b && s.0) {
        return Ok(false);
    }
    Ok(edges.iter().all(|&(a, b)| {
        let (sa, sb) = (states[a], states[b]);
        match (sa.0, sb.0) {
            (true, false) => sb.1 >= r,
            (false, true) => sa.1 >= r,
            _ => true,
        }
    }))
}

/// Signed count of preimages of `target` under the collapse, `None` when
/// `target` is not a regular value.
fn degree_at_value(sys: &MorseSystem, tube: &TubeCoords, family: &dyn Family, target: &DVector<f64>, tol: &Tolerances) -> Result<Option<i64>> {
    let k = family.param_dim();
    let r = tube.radius;
    let f = |z: &DVector<f64>| -> Result<Option<DVector<f64>>> { Ok(tube.position(sys, &family.eval(z)?).map(|p| p.u - target)) };
    let jac = |z: &DVector<f64>| -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
        let (q, dq) = family.eval_jac(z)?;
        Ok(tube.position(sys, &q).map(|p| (p.u - target, p.du * dq)))
    };
    let sign = |z: &roots::Zero| if det(&z.jacobian) > 0.0 { 1 } else { -1 };
    let zeros = match roots::find_zeros(&family.domain(), &f, &jac, &sign, &search_options(k, tol)) {
        Ok(z) => z,
        Err(Error::MeshTooCoarse(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let mut degree = 0;
    for z in &zeros {
        let q = family.eval(&z.z)?;
        let Some(p) = tube.position(sys, &q) else { continue };
        let s = p.s.norm();
        if s >= r * 1.01 {
            continue;
        }
        let sv = z.jacobian.singular_values();
        if s > r * 0.99 || !(sv.min() > 1e-9 * sv.max()) {
            return Ok(None);
        }
        degree += sign(z) as i64;
    }
    Ok(Some(degree))
}

/// Degree of the family composed with the collapse `T_y → D_y/∂D_y`, as a
/// signed preimage count of a regular value: the centre first, then seeded
/// fallbacks in the half-radius ball.
fn collapse_degree(sys: &MorseSystem, tube: &TubeCoords, family: &dyn Family, tol: &Tolerances, seed: u64) -> Result<i64> {
    let k = family.param_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const FALLBACKS: usize = 20;
    for attempt in 0..=FALLBACKS {
        let w = if attempt == 0 {
            DVector::zeros(k)
        } else {
            loop {
                let v = DVector::from_fn(k, |_, _| rng.gen_range(-0.5..0.5));
                if v.norm() < 0.5 {
                    break v;
                }
            }
        };
        if let Some(d) = degree_at_value(sys, tube, family, &(w * tube.radius), tol)? {
            return Ok(d);
        }
    }
    Err(Error::NoRegularValue(FALLBACKS + 1))
}

/// Chain map from the flow method together with the flow time that was accepted.
#[derive(Debug, Clone)]
pub struct FlowChainMap {
    pub map: ChainMap,
    pub time: f64,
}

fn flow_time_limit(cps: &[CriticalPoint], tol: &Tolerances) -> (f64, f64) {
    let lambda = cps.iter().map(|c| c.spectral_gap()).fold(f64::INFINITY, f64::min);
    (2.0 / lambda, (40.0 / lambda).min(tol.flow.t_max))
}

fn flow_matrices(problem: &MapProblem, src: &ChainComplex, dst: &ChainComplex, t: f64, tol: &Tolerances, seed: u64) -> Result<Option<ChainMap>> {
    let mut phi = ChainMap::zero(src, dst);
    let tubes: Vec<TubeCoords> = problem.dst_cps.iter().map(|c| TubeCoords::new(problem.dst, problem.dst_cps, c)).collect();
    for k in 0..phi.matrices.len() {
        let xs = labelled(problem.src_cps, src.labels.get(k).map_or(&[][..], |v| v));
        let ys = labelled(problem.dst_cps, dst.labels.get(k).map_or(&[][..], |v| v));
        let pairs: Vec<(usize, usize)> = (0..ys.len()).flat_map(|i| (0..xs.len()).map(move |j| (i, j))).collect();
        let entries = pairs
            .par_iter()
            .map(|&(i, j)| -> Result<Option<i64>> {
                let (x, y) = (xs[j], ys[i]);
                let cell = CellFamily::new(problem.src, problem.src_cps, x, tol)?;
                let mapped = MappedFamily { inner: &cell, map: problem.map, src: &problem.src.manifold, dst: &problem.dst.manifold };
                let pushed = FlowedFamily { sys: problem.dst, inner: &mapped, time: t, settings: tol.flow };
                let tube = &tubes[y.id];
                if k == 0 {
                    let q = pushed.eval(&DVector::zeros(0))?;
                    if !tubes.iter().any(|c| c.index == 0 && c.contains(problem.dst, &q)) {
                        return Ok(None);
                    }
                    return Ok(Some(tube.contains(problem.dst, &q) as i64));
                }
                if !admissible(problem.dst, tube, &pushed, false)? {
                    return Ok(None);
                }
                if k == 1 {
                    return winding(problem.dst, tube, &mapped, t, &tol.flow);
                }
                // the tube of a top-index point is a neighbourhood of a fixed
                // repeller, so preimages of its centre do not depend on t
                if k == problem.dst.dim() {
                    if let Some(d) = degree_at_value(problem.dst, tube, &mapped, &DVector::zeros(k), tol)? {
                        return Ok(Some(d));
                    }
                }
                collapse_degree(problem.dst, tube, &pushed, tol, seed ^ ((x.id as u64) << 32 | y.id as u64)).map(Some)
            })
            .collect::<Result<Vec<_>>>()?;
        for (&(i, j), c) in pairs.iter().zip(entries) {
            let Some(c) = c else { return Ok(None) };
            phi.matrices[k][(i, j)] = c;
        }
    }
    Ok(Some(phi))
}

/// Flow matrices at a fixed time `t`; `None` when some collapse is not admissible.
pub fn chain_map_by_flow_at(problem: &MapProblem, src: &ChainComplex, dst: &ChainComplex, t: f64, tol: &Tolerances, seed: u64) -> Result<Option<ChainMap>> {
    check_regularity(problem, tol)?;
    flow_matrices(problem, src, dst, t, tol, seed)
}

/// `Φ_k(x) = Σ_y deg(π_y ∘ f^t ∘ φ|cell x)·y`, with `t` doubled until the
/// collapse is admissible and the matrices at `t` and `2t` agree.
pub fn chain_map_by_flow(problem: &MapProblem, src: &ChainComplex, dst: &ChainComplex, tol: &Tolerances, seed: u64) -> Result<FlowChainMap> {
    check_regularity(problem, tol)?;
    let (mut t, limit) = flow_time_limit(problem.dst_cps, tol);
    let mut prev = flow_matrices(problem, src, dst, t, tol, seed)?;
    while 2.0 * t <= limit {
        let cur = flow_matrices(problem, src, dst, 2.0 * t, tol, seed)?;
        if let (Some(a), Some(b)) = (&prev, &cur) {
            if a == b {
                a.verify(src, dst)?;
                return Ok(FlowChainMap { map: a.clone(), time: t });
            }
        }
        prev = cur;
        t *= 2.0;
    }
    Err(Error::NotAdmissible(t))
}

/// Image of a loop point after flowing for `t`: its collapsed angle and the
/// sign of `u` when the trajectory last left the tube (0 if it never entered).
struct LoopSample {
    angle: f64,
    side: i8,
    inside: bool,
    /// Closest approach of the trajectory to the tube's centre.
    closest: f64,
}

impl LoopSample {
    /// The angle lifted to `[-π, 0]` or `[0, π]` according to the exit side.
    /// The two trajectories left the tube on opposite sides of the stable manifold.
    fn crosses(&self, other: &LoopSample) -> bool {
        self.side * other.side < 0 && !(self.inside && other.inside)
    }

    fn lifted(&self) -> f64 {
        if self.inside {
            self.angle
        } else {
            PI * f64::from(self.side)
        }
    }
}

fn loop_sample(sys: &MorseSystem, tube: &TubeCoords, p: &Point, t: f64, settings: &FlowSettings) -> Result<LoopSample> {
    let r = tube.radius;
    let mut side = 0i8;
    let mut closest = sys.distance(p, &tube.center);
    let end = integrate(sys, p, t, false, settings, |state| {
        closest = closest.min(sys.distance(&state.point, &tube.center));
        if let Some(pos) = tube.position(sys, &state.point) {
            if pos.u.norm() < 3.0 * r && pos.s.norm() < r {
                side = if pos.u[0] < 0.0 { -1 } else { 1 };
            }
        }
        ControlFlow::Continue(())
    })?;
    let (angle, inside) = match tube.position(sys, &end.point) {
        Some(pos) if pos.inside(r) => (PI * pos.u[0] / r, true),
        _ => (PI, false),
    };
    Ok(LoopSample { angle, side, inside, closest })
}

/// Winding number of the loop `z ↦ π·u(f^t(γ(z)))/r` (collapsed to `π`
/// outside the tube), over the one-parameter domain of `family`. Intervals
/// whose endpoints left the tube on opposite sides are bisected; one too
/// narrow to resolve contributes the lifted angle difference.
/// `None` when the loop leaves the tube through its stable side.
fn winding(sys: &MorseSystem, tube: &TubeCoords, family: &dyn Family, t: f64, settings: &FlowSettings) -> Result<Option<i64>> {
    let domain = family.domain();
    let (lo, hi) = (domain.lo[0], domain.hi[0]);
    let sample = |z: f64| -> Result<LoopSample> { loop_sample(sys, tube, &family.eval(&DVector::from_element(1, lo + z * (hi - lo)))?, t, settings) };
    let wrap = |a: f64| a - 2.0 * PI * (a / (2.0 * PI)).round();
    fn walk(sample: &dyn Fn(f64) -> Result<LoopSample>, wrap: &dyn Fn(f64) -> f64, a: f64, b: f64, sa: &LoopSample, sb: &LoopSample) -> Result<Option<f64>> {
        let d = wrap(sb.angle - sa.angle);
        let crossing = sa.crosses(sb);
        if d.abs() <= PI / 3.0 && !crossing {
            return Ok(Some(d));
        }
        if b - a < 1e-9 {
            // once both trajectories have passed the tube the exit sides fix the lift
            if sa.side != 0 && sb.side != 0 {
                return Ok(Some(sb.lifted() - sa.lifted()));
            }
            return Ok(None);
        }
        let m = 0.5 * (a + b);
        let sm = sample(m)?;
        let Some(left) = walk(sample, wrap, a, m, sa, &sm)? else { return Ok(None) };
        let Some(right) = walk(sample, wrap, m, b, &sm, sb)? else { return Ok(None) };
        Ok(Some(left + right))
    }
    const N: usize = 128;
    const LIMIT: f64 = 1e-9;
    let grid: Vec<f64> = (0..=N).map(|i| i as f64 / N as f64).collect();
    let mut samples = grid.par_iter().map(|z| Ok((*z, sample(*z)?))).collect::<Result<Vec<(f64, LoopSample)>>>()?;
    // trajectories skirting the stable manifold of the centre come close to
    // it; refine around each such approach until the crossing is bracketed
    loop {
        let mut inserts = Vec::new();
        for i in 1..samples.len() - 1 {
            let ((za, a), (z, c), (zb, b)) = (&samples[i - 1], &samples[i], &samples[i + 1]);
            if c.closest >= 3.0 * tube.radius || c.closest > a.closest || c.closest > b.closest || a.crosses(c) || c.crosses(b) {
                continue;
            }
            for (lo, hi) in [(*za, *z), (*z, *zb)] {
                if hi - lo > LIMIT {
                    inserts.push(0.5 * (lo + hi));
                }
            }
        }
        inserts.sort_by(f64::total_cmp);
        inserts.dedup();
        if inserts.is_empty() {
            break;
        }
        let extra = inserts.par_iter().map(|z| Ok((*z, sample(*z)?))).collect::<Result<Vec<_>>>()?;
        samples.extend(extra);
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    let parts = samples
        .par_windows(2)
        .map(|w| walk(&sample, &wrap, w[0].0, w[1].0, &w[0].1, &w[1].1))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for p in parts {
        let Some(p) = p else { return Ok(None) };
        total += p;
    }
    Ok(Some((total / (2.0 * PI)).round() as i64))
}

/// Degree of the attaching map of the cell of `x` onto `D_y/∂D_y`
/// (`ind y = ind x − 1`): the boundary sphere of the unstable disk is flowed
/// forward until the collapse is admissible and stable under doubling time.
/// On failure the disk radius is halved once and the computation retried.
pub fn attaching_degree(sys: &MorseSystem, cps: &[CriticalPoint], x: &CriticalPoint, y: &CriticalPoint, tol: &Tolerances) -> Result<i64> {
    match attaching_degree_at(sys, cps, x, y, tol, tol.epsilon) {
        Err(Error::NotAdmissible(_)) | Err(Error::RadiusTooLarge { .. }) => attaching_degree_at(sys, cps, x, y, tol, 0.5 * tol.epsilon),
        other => other,
    }
}

fn attaching_degree_at(sys: &MorseSystem, cps: &[CriticalPoint], x: &CriticalPoint, y: &CriticalPoint, tol: &Tolerances, epsilon: f64) -> Result<i64> {
    if x.index != y.index + 1 {
        return Err(Error::IndexMismatch(format!("attaching degree needs an index gap of one, got {} -> {}", x.index, y.index)));
    }
    let k = x.index;
    if k > 3 {
        return Err(Error::InvalidParameter(format!("boundary spheres of {k}-disks are not supported")));
    }
    let disk = unstable_disk(sys, cps, x, epsilon)?;
    let tube = TubeCoords::new(sys, cps, y);
    let minima: Vec<TubeCoords> = cps.iter().filter(|c| c.index == 0).map(|c| TubeCoords::new(sys, cps, c)).collect();
    let lambda = x.eigenvalues.iter().filter(|l| **l < 0.0).map(|l| l.abs()).fold(f64::INFINITY, f64::min);
    let mut t = ((tube.radius / epsilon).ln() + 2.0) / lambda;
    let limit = tol.flow.t_max.min(t + 40.0 / cps.iter().map(|c| c.spectral_gap()).fold(f64::INFINITY, f64::min));
    let degree_at = |t: f64| -> Result<Option<i64>> {
        match k {
            1 => {
                let mut d = 0;
                for s in [1.0, -1.0] {
                    let q = flow(sys, &disk.point(sys, &DVector::from_element(1, s)).0, t, &tol.flow)?;
                    if !minima.iter().any(|m| m.contains(sys, &q)) {
                        return Ok(None);
                    }
                    if tube.contains(sys, &q) {
                        d += s as i64;
                    }
                }
                Ok(Some(d))
            }
            2 => {
                let sphere = SphereFamily::balanced(sys, disk.clone(), x, tube.radius);
                winding(sys, &tube, &sphere, t, &tol.flow)
            }
            _ => {
                let sphere = SphereFamily::round(sys, disk.clone());
                let pushed = FlowedFamily { sys, inner: &sphere, time: t, settings: tol.flow };
                if !admissible(sys, &tube, &pushed, true)? {
                    return Ok(None);
                }
                collapse_degree(sys, &tube, &pushed, tol, (x.id as u64) << 32 | y.id as u64).map(Some)
            }
        }
    };
    let mut prev = degree_at(t)?;
    while 2.0 * t <= limit {
        let cur = degree_at(2.0 * t)?;
        if prev.is_some() && prev == cur {
            return Ok(prev.expect("checked"));
        }
        prev = cur;
        t *= 2.0;
    }
    Err(Error::NotAdmissible(t))
}
