//! Zero sets of maps `R^d ⊇ box → R^m` located by piecewise-linear
//! interpolation on a Kuhn triangulation followed by Newton refinement.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::{Error, Result};

/// Parameter box; periodic axes identify `lo` with `hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl Domain {
    pub fn cube(k: usize) -> Self {
        Domain { lo: vec![-1.0; k], hi: vec![1.0; k], periodic: vec![false; k] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Per-axis difference `a - b`, wrapped on periodic axes.
    pub fn diff(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(a.len(), |i, _| {
            let d = a[i] - b[i];
            if self.periodic[i] {
                let w = self.hi[i] - self.lo[i];
                d - w * (d / w).round()
            } else {
                d
            }
        })
    }

    pub fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.diff(a, b).norm()
    }

    /// Wrap periodic axes into range; `None` if a bounded axis is left by more than `slack`.
    pub fn canonical(&self, z: &DVector<f64>, slack: f64) -> Option<DVector<f64>> {
        let mut out = z.clone();
        for i in 0..z.len() {
            let (lo, hi) = (self.lo[i], self.hi[i]);
            if self.periodic[i] {
                let w = hi - lo;
                out[i] = lo + (z[i] - lo).rem_euclid(w);
            } else if z[i] < lo - slack || z[i] > hi + slack {
                return None;
            } else {
                out[i] = z[i].clamp(lo, hi);
            }
        }
        Some(out)
    }
}

/// A located zero with the map's Jacobian there.
#[derive(Debug, Clone)]
pub struct Zero {
    pub z: DVector<f64>,
    pub residual: f64,
    pub jacobian: DMatrix<f64>,
}

struct Mesh {
    counts: Vec<usize>,
    values: Vec<Option<DVector<f64>>>,
    points: Vec<DVector<f64>>,
}

fn grid_point(domain: &Domain, counts: &[usize], idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| domain.lo[i] + (domain.hi[i] - domain.lo[i]) * idx[i] as f64 / counts[i] as f64)
}

fn unflatten(mut flat: usize, sizes: &[usize]) -> Vec<usize> {
    sizes
        .iter()
        .map(|s| {
            let i = flat % s;
            flat /= s;
            i
        })
        .collect()
}

fn flatten(idx: &[usize], sizes: &[usize]) -> usize {
    let mut flat = 0;
    for i in (0..idx.len()).rev() {
        flat = flat * sizes[i] + idx[i];
    }
    flat
}

impl Mesh {
    /// Vertex sizes: periodic axes reuse the first vertex.
    fn sizes(domain: &Domain, counts: &[usize]) -> Vec<usize> {
        counts.iter().zip(&domain.periodic).map(|(c, p)| if *p { *c } else { c + 1 }).collect()
    }

    fn build<F>(domain: &Domain, counts: &[usize], f: &F) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> Result<Option<DVector<f64>>> + Sync,
    {
        let sizes = Self::sizes(domain, counts);
        let total: usize = sizes.iter().product();
        let points: Vec<DVector<f64>> = (0..total).map(|flat| grid_point(domain, counts, &unflatten(flat, &sizes))).collect();
        let values = points.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        Ok(Mesh { counts: counts.to_vec(), values, points })
    }

    /// Vertex id of grid index `idx` (wrapping periodic axes).
    fn vertex(&self, domain: &Domain, idx: &[usize]) -> usize {
        let sizes = Self::sizes(domain, &self.counts);
        let wrapped: Vec<usize> = idx.iter().zip(&sizes).map(|(i, s)| i % s).collect();
        flatten(&wrapped, &sizes)
    }

    /// All Kuhn simplices as (vertex ids, parameter points with periodic unwrapping).
    fn simplices(&self, domain: &Domain) -> Vec<(Vec<usize>, Vec<DVector<f64>>)> {
        let d = domain.dim();
        let cells: usize = self.counts.iter().product();
        let perms = permutations(d);
        let mut out = Vec::with_capacity(cells * perms.len());
        for flat in 0..cells {
            let base = unflatten(flat, &self.counts);
            for perm in &perms {
                let mut idx = base.clone();
                let mut ids = vec![self.vertex(domain, &idx)];
                let mut pts = vec![grid_point(domain, &self.counts, &idx)];
                for &axis in perm {
                    idx[axis] += 1;
                    ids.push(self.vertex(domain, &idx));
                    pts.push(grid_point(domain, &self.counts, &idx));
                }
                out.push((ids, pts));
            }
        }
        out
    }
}

fn permutations(d: usize) -> Vec<Vec<usize>> {
    if d == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(d - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, d - 1);
            out.push(q);
        }
    }
    out
}

/// Barycentric weights of the zero set of the affine interpolant (minimum
/// norm solution), if the affine system is solvable and the point lies in
/// the simplex up to `slack`.
fn affine_zero(values: &[&DVector<f64>], slack: f64) -> Option<Vec<f64>> {
    let m = values[0].len();
    let kp1 = values.len();
    let mut a = DMatrix::zeros(m + 1, kp1);
    for (j, v) in values.iter().enumerate() {
        a.view_mut((0, j), (m, 1)).copy_from(*v);
        a[(m, j)] = 1.0;
    }
    let mut b = DVector::zeros(m + 1);
    b[m] = 1.0;
    let scale = values.iter().map(|v| v.amax()).fold(0.0, f64::max).max(1e-300);
    for i in 0..m {
        a.row_mut(i).scale_mut(1.0 / scale);
    }
    let svd = a.clone().svd(true, true);
    let lambda = svd.solve(&b, 1e-12).ok()?;
    if (&a * &lambda - &b).norm() > 1e-8 {
        return None;
    }
    lambda.iter().all(|l| *l >= -slack).then(|| lambda.iter().cloned().collect())
}

/// Newton (Gauss-Newton with minimum-norm steps when underdetermined) with
/// backtracking on the residual alone. Returns the converged point.
pub fn newton<F, J>(domain: &Domain, z0: &DVector<f64>, f: &F, jac: &J, tol: f64, accept: f64) -> Result<Option<Zero>>
where
    F: Fn(&DVector<f64>) -> Result<Option<DVector<f64>>>,
    J: Fn(&DVector<f64>) -> Result<Option<(DVector<f64>, DMatrix<f64>)>>,
{
    let Some(mut z) = domain.canonical(z0, 1e-9) else { return Ok(None) };
    let Some((mut r, mut jm)) = jac(&z)? else { return Ok(None) };
    for _ in 0..40 {
        if r.norm() <= tol {
            break;
        }
        let svd = jm.clone().svd(true, true);
        let Ok(step) = svd.solve(&r, 1e-14 * svd.singular_values.max().max(1e-300)) else { return Ok(None) };
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..12 {
            if let Some(cand) = domain.canonical(&(&z - &step * t), 1e-6) {
                if f(&cand)?.is_some_and(|rc| rc.norm() < r.norm()) {
                    next = Some(cand);
                    break;
                }
            }
            t *= 0.5;
        }
        let Some(cand) = next else { break };
        let Some((rc, jc)) = jac(&cand)? else { break };
        z = cand;
        r = rc;
        jm = jc;
        if step.norm() * t < 1e-15 {
            break;
        }
    }
    let res = r.norm();
    Ok((res <= accept).then_some(Zero { z, residual: res, jacobian: jm }))
}

/// Options for [`find_zeros`].
#[derive(Debug, Clone, Copy)]
pub struct ZeroSearch {
    pub density: usize,
    /// Refinement levels (the mesh doubles each level) before giving up.
    pub max_levels: usize,
    pub newton_tol: f64,
    pub accept: f64,
    pub dedup: f64,
    /// Require agreement of consecutive refinement levels (isolated zeros only).
    pub confirm: bool,
    /// Also start Newton from valid vertices next to invalid ones whose
    /// residual is at most this large (sup norm).
    pub frontier: Option<f64>,
}

impl Default for ZeroSearch {
    fn default() -> Self {
        ZeroSearch { density: 24, max_levels: 4, newton_tol: 1e-11, accept: 1e-8, dedup: 1e-5, confirm: true, frontier: Some(f64::INFINITY) }
    }
}

fn search_level<F, J>(domain: &Domain, counts: &[usize], f: &F, jac: &J, opts: &ZeroSearch) -> Result<Vec<Zero>>
where
    F: Fn(&DVector<f64>) -> Result<Option<DVector<f64>>> + Sync,
    J: Fn(&DVector<f64>) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> + Sync,
{
    let mesh = Mesh::build(domain, counts, f)?;
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    let mut frontier = vec![false; mesh.points.len()];
    for (ids, pts) in mesh.simplices(domain) {
        let vals: Option<Vec<&DVector<f64>>> = ids.iter().map(|&i| mesh.values[i].as_ref()).collect();
        let Some(vals) = vals else {
            // zeros close to the edge of the valid region: start Newton from the valid side
            for &i in &ids {
                frontier[i] |= mesh.values[i].is_some();
            }
            continue;
        };
        // cheap rejection: some component has a fixed sign over the simplex
        let m = vals[0].len();
        if (0..m).any(|c| vals.iter().all(|v| v[c] > 0.0) || vals.iter().all(|v| v[c] < 0.0)) {
            continue;
        }
        if let Some(lambda) = affine_zero(&vals, 0.05) {
            let mut z = DVector::zeros(domain.dim());
            for (l, p) in lambda.iter().zip(&pts) {
                z += p * *l;
            }
            candidates.push(z);
        }
    }
    // exact vertex zeros have no sign change in any strict sense; add them explicitly
    for (i, v) in mesh.values.iter().enumerate() {
        if let Some(v) = v {
            let near_edge = frontier[i] && opts.frontier.is_some_and(|r| v.amax() <= r);
            if near_edge || v.norm() <= opts.accept {
                candidates.push(mesh.points[i].clone());
            }
        }
    }
    let refined: Vec<Option<Zero>> = candidates.par_iter().map(|z| newton(domain, z, f, jac, opts.newton_tol, opts.accept)).collect::<Result<Vec<_>>>()?;
    let mut zeros: Vec<Zero> = Vec::new();
    for z in refined.into_iter().flatten() {
        if !zeros.iter().any(|w| domain.distance(&w.z, &z.z) < opts.dedup) {
            zeros.push(z);
        }
    }
    zeros.sort_by(|a, b| a.z.iter().zip(b.z.iter()).map(|(x, y)| x.partial_cmp(y).unwrap()).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    Ok(zeros)
}

fn same_zero_sets(domain: &Domain, a: &[Zero], b: &[Zero], sign: &dyn Fn(&Zero) -> i32) -> bool {
    a.len() == b.len() && a.iter().all(|x| b.iter().any(|y| domain.distance(&x.z, &y.z) < 1e-6 && sign(x) == sign(y)))
}

/// Isolated zeros of `f` over `domain`. The mesh doubles until two
/// consecutive levels agree on locations and on `sign`.
pub fn find_zeros<F, J>(domain: &Domain, f: &F, jac: &J, sign: &dyn Fn(&Zero) -> i32, opts: &ZeroSearch) -> Result<Vec<Zero>>
where
    F: Fn(&DVector<f64>) -> Result<Option<DVector<f64>>> + Sync,
    J: Fn(&DVector<f64>) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> + Sync,
{
    let d = domain.dim();
    if d == 0 {
        return Err(Error::InvalidParameter("zero search needs at least one parameter".into()));
    }
    let mut counts = vec![opts.density.max(2); d];
    let mut prev = search_level(domain, &counts, f, jac, opts)?;
    if !opts.confirm {
        return Ok(prev);
    }
    for _ in 0..opts.max_levels {
        counts.iter_mut().for_each(|c| *c *= 2);
        let next = search_level(domain, &counts, f, jac, opts)?;
        if same_zero_sets(domain, &prev, &next, sign) {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::MeshTooCoarse(counts[0]))
}

/// Sample points of a (possibly positive-dimensional) zero set; one per
/// simplex that the affine interpolant says is crossed, deduplicated at `spacing`.
pub fn sample_zero_set<F, J>(domain: &Domain, f: &F, jac: &J, opts: &ZeroSearch, spacing: f64) -> Result<Vec<Zero>>
where
    F: Fn(&DVector<f64>) -> Result<Option<DVector<f64>>> + Sync,
    J: Fn(&DVector<f64>) -> Result<Option<(DVector<f64>, DMatrix<f64>)>> + Sync,
{
    let counts = vec![opts.density.max(2); domain.dim()];
    let zeros = search_level(domain, &counts, f, jac, &ZeroSearch { dedup: spacing, ..*opts })?;
    Ok(zeros)
}
