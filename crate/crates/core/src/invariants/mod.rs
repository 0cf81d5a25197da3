//! Unstable disks, stable-manifold residuals, coorientation transport,
//! signed intersections and trajectory counts.

pub mod roots;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::Serialize;

use crate::critical::{separation, CriticalPoint};
use crate::dynamics::{flow, flow_to_level, flow_with_jacobian, limit_point};
use crate::geometry::{rotation_matrix, MorseSystem, Point};
use crate::linalg::{condition_number, det, normalized_margin};
use crate::settings::{FlowSettings, Tolerances};
use crate::{Error, Result};

pub use roots::{Domain, Zero, ZeroSearch};

/// Frontier vertices seed Newton only below this residual (sup norm).
pub const FRONTIER_RESIDUAL: f64 = 0.15;

/// Landing distance up to which section residuals stay defined.
pub const SECTION_REACH: f64 = 0.4;

/// Time slab for staged Jacobian transport.
const SLAB: f64 = 5.0;

/// Tube radius around critical points: half the minimal separation, capped at 0.1.
pub fn tube_radius(sys: &MorseSystem, cps: &[CriticalPoint]) -> f64 {
    (0.5 * separation(sys, cps)).min(0.1)
}

/// Linear unstable disk `x + ε·E_u·u`, `|u| ≤ 1`.
#[derive(Debug, Clone)]
pub struct UnstableDisk {
    pub id: usize,
    pub epsilon: f64,
    pub center: Point,
    /// `n × k`, columns are the oriented unstable eigenvectors.
    pub frame: DMatrix<f64>,
}

impl UnstableDisk {
    pub fn dim(&self) -> usize {
        self.frame.ncols()
    }

    /// The disk point at parameter `u` and the parametrization's Jacobian.
    pub fn point(&self, sys: &MorseSystem, u: &DVector<f64>) -> (Point, DMatrix<f64>) {
        let mut q = Point { chart: self.center.chart, coords: &self.center.coords + &self.frame * u * self.epsilon };
        let jac = &self.frame * self.epsilon;
        match sys.manifold.normalize(&mut q) {
            Some(tr) => (q, tr * jac),
            None => (q, jac),
        }
    }
}

pub fn unstable_disk(sys: &MorseSystem, cps: &[CriticalPoint], cp: &CriticalPoint, epsilon: f64) -> Result<UnstableDisk> {
    let limit = 0.1 * cps.iter().filter(|c| c.id != cp.id).map(|c| sys.distance(&c.point, &cp.point)).fold(f64::INFINITY, f64::min);
    if !(epsilon > 0.0) || epsilon > limit {
        return Err(Error::RadiusTooLarge { eps: epsilon, limit });
    }
    Ok(UnstableDisk { id: cp.id, epsilon, center: cp.point.clone(), frame: cp.unstable_frame.matrix().clone() })
}

/// A located, signed transverse intersection.
#[derive(Debug, Clone, Serialize)]
pub struct IntersectionRecord {
    pub parameter: Vec<f64>,
    pub location: Point,
    pub sign: i32,
    pub margin: f64,
    pub target: usize,
}

/// Membership test for `S^y` of a non-minimum `y`: the flow is stopped on the
/// level `F(y) + η` and the unstable eigen-coordinates relative to `y` are read off.
pub struct Section<'a> {
    sys: &'a MorseSystem,
    target: &'a CriticalPoint,
    level: f64,
    rho: f64,
    valid: f64,
    reach: f64,
    metric: DMatrix<f64>,
    settings: FlowSettings,
}

/// Residual evaluation at one point.
pub struct SectionValue {
    pub residual: DVector<f64>,
    /// `k × n` derivative with respect to chart coordinates at the input point.
    pub derivative: Option<DMatrix<f64>>,
    /// Metric distance of the landing point from the target.
    pub landing_distance: f64,
}

impl<'a> Section<'a> {
    pub fn new(sys: &'a MorseSystem, cps: &[CriticalPoint], target: &'a CriticalPoint, tol: &Tolerances) -> Self {
        let r_tube = tube_radius(sys, cps);
        let rho = 0.25 * r_tube;
        let mu = target.eigenvalues.iter().filter(|l| **l > 0.0).cloned().fold(f64::INFINITY, f64::min);
        let mu = if mu.is_finite() { mu } else { target.spectral_gap() };
        Section { sys, target, level: target.value + 0.5 * mu * rho * rho, rho, valid: r_tube, reach: r_tube, metric: sys.manifold.metric(&target.point), settings: tol.flow }
    }

    pub fn level(&self) -> f64 {
        self.level
    }

    /// Keep the residual defined for landing points up to `reach` from the
    /// target. Zeros are only meaningful within `valid_radius`.
    pub fn widened(mut self, reach: f64) -> Self {
        self.reach = reach.max(self.valid);
        // a higher level shortens the approach and thickens the residual band
        let rho = 0.5 * self.valid;
        self.level = self.target.value + (self.level - self.target.value) * (rho / self.rho).powi(2);
        self.rho = rho;
        self
    }

    pub fn valid_radius(&self) -> f64 {
        self.valid
    }

    pub fn target_id(&self) -> usize {
        self.target.id
    }

    fn coords(&self, q: &Point) -> Option<(DVector<f64>, DMatrix<f64>, f64)> {
        let (d, tr) = self.sys.manifold.local_displacement(q, &self.target.point)?;
        let dist = d.dot(&(&self.metric * &d)).sqrt();
        (dist <= self.reach).then(|| (self.target.stable_coframe.matrix() * d, self.target.stable_coframe.matrix() * tr, dist))
    }

    /// `None` when the point does not pass through the target's tube.
    pub fn eval(&self, p: &Point, with_jac: bool) -> Result<Option<SectionValue>> {
        if self.sys.value(p) <= self.level {
            let Some((r, c, dist)) = self.coords(p) else { return Ok(None) };
            return Ok(Some(SectionValue { residual: r, derivative: with_jac.then_some(c), landing_distance: dist }));
        }
        let Some(state) = flow_to_level(self.sys, p, self.level, with_jac, &self.settings)? else { return Ok(None) };
        let Some((r, c, dist)) = self.coords(&state.point) else { return Ok(None) };
        let derivative = state.jacobian.map(|j| c * self.hitting_projection(&state.point) * j);
        Ok(Some(SectionValue { residual: r, derivative, landing_distance: dist }))
    }

    /// `I − v·dF/(dF·v)` at a point of the level set.
    fn hitting_projection(&self, q: &Point) -> DMatrix<f64> {
        let n = self.sys.dim();
        let v = self.sys.flow_field(q);
        let df = self.sys.jet(q).differential;
        DMatrix::identity(n, n) - &v * df.transpose() / df.dot(&v)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Pull back the target's coorientation to `p` in slabs, orthonormalizing
    /// rows between slabs. The result has orthonormal rows and the same
    /// orientation class as the exact pullback.
    pub fn transport(&self, p: &Point) -> Result<DMatrix<f64>> {
        let mut slabs: Vec<DMatrix<f64>> = Vec::new();
        let mut cur = p.clone();
        let mut elapsed = 0.0;
        let slab_settings = FlowSettings { t_max: SLAB, ..self.settings };
        let tail = loop {
            if self.sys.value(&cur) <= self.level {
                break None;
            }
            if let Some(state) = flow_to_level(self.sys, &cur, self.level, true, &slab_settings)? {
                break Some(state);
            }
            if elapsed > self.settings.t_max {
                return Err(Error::NotNearTarget { target: self.target.id });
            }
            let (next, j) = flow_with_jacobian(self.sys, &cur, SLAB, &self.settings)?;
            let cond = condition_number(&j);
            if cond > 1e12 {
                return Err(Error::IllConditioned(cond));
            }
            slabs.push(j);
            cur = next;
            elapsed += SLAB;
        };
        let (landing, last) = match tail {
            Some(state) => {
                let j = state.jacobian.clone().expect("jacobian requested");
                (state.point.clone(), Some(self.hitting_projection(&state.point) * j))
            }
            None => (cur.clone(), None),
        };
        let Some((_, c, _)) = self.coords(&landing) else { return Err(Error::NotNearTarget { target: self.target.id }) };
        let mut alpha = orthonormal_rows(&c);
        if let Some(j) = last {
            alpha = orthonormal_rows(&(alpha * j));
        }
        for j in slabs.iter().rev() {
            alpha = orthonormal_rows(&(alpha * j));
        }
        Ok(alpha)
    }
}

/// Rows orthonormalized by a positive-determinant lower-triangular change.
fn orthonormal_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return a.clone();
    }
    let qr = a.transpose().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut qt = q.transpose();
    for i in 0..r.nrows() {
        if r[(i, i)] < 0.0 {
            qt.row_mut(i).neg_mut();
        }
    }
    qt
}

/// Unstable eigen-coordinates of the landing point; zero iff `p ∈ S^target`.
pub fn stable_residual(sys: &MorseSystem, cps: &[CriticalPoint], target: &CriticalPoint, p: &Point, tol: &Tolerances) -> Result<DVector<f64>> {
    if target.index == 0 {
        return Ok(DVector::zeros(0));
    }
    let section = Section::new(sys, cps, target, tol);
    section.eval(p, false)?.map(|v| v.residual).ok_or(Error::NotNearTarget { target: target.id })
}

/// The coorientation of `S^target` transported to `p` (orthonormal rows).
pub fn transport_coorientation(sys: &MorseSystem, cps: &[CriticalPoint], target: &CriticalPoint, p: &Point, tol: &Tolerances) -> Result<DMatrix<f64>> {
    if target.index == 0 {
        return Ok(DMatrix::zeros(0, sys.dim()));
    }
    Section::new(sys, cps, target, tol).transport(p)
}

/// An oriented `k`-parameter family of points in a target manifold.
pub trait Family: Sync {
    fn param_dim(&self) -> usize;
    fn domain(&self) -> Domain;
    fn eval(&self, z: &DVector<f64>) -> Result<Point>;
    /// Point and `n × k` Jacobian.
    fn eval_jac(&self, z: &DVector<f64>) -> Result<(Point, DMatrix<f64>)>;
}

/// The closed cell of a critical point: a linear unstable cube of half-width
/// `ε` for `|z|∞ ≤ s0`, pushed by the flow for time growing linearly to
/// `t_cell` at `|z|∞ = 1`.
pub struct CellFamily<'a> {
    pub sys: &'a MorseSystem,
    pub disk: UnstableDisk,
    pub s0: f64,
    pub t_cell: f64,
    pub settings: FlowSettings,
}

impl<'a> CellFamily<'a> {
    pub fn new(sys: &'a MorseSystem, cps: &[CriticalPoint], cp: &CriticalPoint, tol: &Tolerances) -> Result<Self> {
        let disk = unstable_disk(sys, cps, cp, tol.epsilon)?;
        let lambda = cp.eigenvalues.iter().filter(|l| **l < 0.0).map(|l| l.abs()).fold(f64::INFINITY, f64::min);
        let t_cell = if lambda.is_finite() { ((1.0 / tol.epsilon).ln() + 8.0) / lambda } else { 0.0 };
        Ok(CellFamily { sys, disk, s0: 0.3, t_cell, settings: tol.flow })
    }

    fn eval_inner(&self, z: &DVector<f64>, with_jac: bool) -> Result<(Point, Option<DMatrix<f64>>)> {
        let k = z.len();
        if k == 0 {
            return Ok((self.disk.center.clone(), with_jac.then(|| DMatrix::zeros(self.sys.dim(), 0))));
        }
        let (m, rho) = z.iter().enumerate().map(|(i, v)| (i, v.abs())).fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if rho <= self.s0 {
            let (q, j) = self.disk.point(self.sys, &(z / self.s0));
            return Ok((q, with_jac.then(|| j / self.s0)));
        }
        let sm = z[m].signum();
        let (p0, dp0_du) = self.disk.point(self.sys, &(z / rho));
        let tau = self.t_cell * (rho - self.s0) / (1.0 - self.s0);
        if !with_jac {
            return Ok((flow(self.sys, &p0, tau, &self.settings)?, None));
        }
        let mut du_dz = DMatrix::identity(k, k) / rho;
        for i in 0..k {
            du_dz[(i, m)] -= z[i] * sm / (rho * rho);
        }
        let (q, jf) = flow_with_jacobian(self.sys, &p0, tau, &self.settings)?;
        let mut jac = jf * dp0_du * du_dz;
        let v = self.sys.flow_field(&q);
        let dtau = self.t_cell / (1.0 - self.s0) * sm;
        let mut col = jac.column_mut(m);
        col.axpy(dtau, &v, 1.0);
        Ok((q, Some(jac)))
    }
}

impl Family for CellFamily<'_> {
    fn param_dim(&self) -> usize {
        self.disk.dim()
    }

    fn domain(&self) -> Domain {
        Domain::cube(self.disk.dim())
    }

    fn eval(&self, z: &DVector<f64>) -> Result<Point> {
        Ok(self.eval_inner(z, false)?.0)
    }

    fn eval_jac(&self, z: &DVector<f64>) -> Result<(Point, DMatrix<f64>)> {
        let (p, j) = self.eval_inner(z, true)?;
        Ok((p, j.expect("requested")))
    }
}

/// Fixed generic rotation placing the 2-sphere's coordinate poles away from
/// the eigen-axes.
fn sphere_rotation() -> Matrix3<f64> {
    rotation_matrix([0.37, 1.13, 0.71])
}

/// The `(k−1)`-sphere bounding an unstable disk, oriented as the boundary
/// (outward normal first). Supported for `k = 2, 3`.
pub struct SphereFamily<'a> {
    pub sys: &'a MorseSystem,
    pub disk: UnstableDisk,
    /// Positive weights applied to the round directions before normalizing.
    pub weights: Option<DVector<f64>>,
}

impl<'a> SphereFamily<'a> {
    pub fn round(sys: &'a MorseSystem, disk: UnstableDisk) -> Self {
        SphereFamily { sys, disk, weights: None }
    }

    /// The sphere whose image under the linearized flow for time `T` is round,
    /// `T` being the time the slowest unstable direction needs to grow from
    /// `ε` to `reach`. Isotopic to the round sphere inside the disk.
    pub fn balanced(sys: &'a MorseSystem, disk: UnstableDisk, cp: &CriticalPoint, reach: f64) -> Self {
        let rates: Vec<f64> = cp.eigenvalues[..cp.index].iter().map(|l| l.abs()).collect();
        let slow = rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let time = (reach / disk.epsilon).ln().max(0.0) / slow;
        let weights = DVector::from_iterator(rates.len(), rates.iter().map(|l| (-(l - slow) * time).exp()));
        SphereFamily { sys, disk, weights: Some(weights) }
    }

    fn direction(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (d, dd) = self.round_direction(z);
        let Some(w) = &self.weights else { return (d, dd) };
        let v = d.component_mul(w);
        let norm = v.norm();
        let out = v / norm;
        let k = out.len();
        let proj = (DMatrix::identity(k, k) - &out * out.transpose()) / norm;
        let jac = proj * DMatrix::from_diagonal(w) * dd;
        (out, jac)
    }

    fn round_direction(&self, z: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        use std::f64::consts::PI;
        match self.disk.dim() {
            2 => {
                let a = 2.0 * PI * z[0];
                (DVector::from_vec(vec![a.cos(), a.sin()]), DMatrix::from_column_slice(2, 1, &[-2.0 * PI * a.sin(), 2.0 * PI * a.cos()]))
            }
            3 => {
                let (t, f) = (PI * z[0], 2.0 * PI * z[1]);
                let r = sphere_rotation();
                let s = r * Vector3::new(t.sin() * f.cos(), t.sin() * f.sin(), t.cos());
                let dt = r * Vector3::new(t.cos() * f.cos(), t.cos() * f.sin(), -t.sin()) * PI;
                let df = r * Vector3::new(-t.sin() * f.sin(), t.sin() * f.cos(), 0.0) * (2.0 * PI);
                (DVector::from_column_slice(s.as_slice()), DMatrix::from_columns(&[DVector::from_column_slice(dt.as_slice()), DVector::from_column_slice(df.as_slice())]))
            }
            k => panic!("boundary sphere of a {k}-disk is not parametrized"),
        }
    }
}

impl Family for SphereFamily<'_> {
    fn param_dim(&self) -> usize {
        self.disk.dim() - 1
    }

    fn domain(&self) -> Domain {
        match self.disk.dim() {
            2 => Domain { lo: vec![0.0], hi: vec![1.0], periodic: vec![true] },
            _ => Domain { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0], periodic: vec![false, true] },
        }
    }

    fn eval(&self, z: &DVector<f64>) -> Result<Point> {
        Ok(self.disk.point(self.sys, &self.direction(z).0).0)
    }

    fn eval_jac(&self, z: &DVector<f64>) -> Result<(Point, DMatrix<f64>)> {
        let (s, ds) = self.direction(z);
        let (p, j) = self.disk.point(self.sys, &s);
        Ok((p, j * ds))
    }
}

fn sign_of(m: &DMatrix<f64>) -> i32 {
    if det(m) > 0.0 { 1 } else { -1 }
}

/// Mesh density per axis for a `k`-parameter search. Frontier seeding is
/// bounded only where it is expensive.
pub fn search_options(k: usize, tol: &Tolerances) -> ZeroSearch {
    let density = if k >= 3 { (tol.mesh_density / 2).max(6) } else { tol.mesh_density };
    let frontier = if k >= 2 { FRONTIER_RESIDUAL } else { f64::INFINITY };
    ZeroSearch { density, newton_tol: tol.newton_tol, frontier: Some(frontier), ..ZeroSearch::default() }
}

/// Search options for cells pushed through maps. One-parameter cells cross
/// most of the manifold in a short stretch of parameter, so residual bands
/// along them are thin and the mesh is made much finer.
pub fn cell_search_options(k: usize, tol: &Tolerances) -> ZeroSearch {
    let opts = search_options(k, tol);
    if k == 1 {
        ZeroSearch { density: 8 * opts.density, ..opts }
    } else {
        opts
    }
}

/// Signed intersections of `family` with `S^target` (`ind target = k`).
pub fn signed_intersections(sys: &MorseSystem, cps: &[CriticalPoint], family: &dyn Family, target: &CriticalPoint, tol: &Tolerances) -> Result<Vec<IntersectionRecord>> {
    signed_intersections_with(sys, cps, family, target, tol, &search_options(family.param_dim(), tol))
}

pub fn signed_intersections_with(
    sys: &MorseSystem,
    cps: &[CriticalPoint],
    family: &dyn Family,
    target: &CriticalPoint,
    tol: &Tolerances,
    opts: &ZeroSearch,
) -> Result<Vec<IntersectionRecord>> {
    let k = family.param_dim();
    if k != target.index {
        return Err(Error::IndexMismatch(format!("family of dimension {k} against a stable manifold of codimension {}", target.index)));
    }
    if k == 0 {
        let p = family.eval(&DVector::zeros(0))?;
        return Ok(if limit_point(sys, cps, &p, tol)? == target.id {
            vec![IntersectionRecord { parameter: vec![], location: p, sign: 1, margin: 1.0, target: target.id }]
        } else {
            vec![]
        });
    }
    let section = Section::new(sys, cps, target, tol).widened(SECTION_REACH);
    let f = |z: &DVector<f64>| -> Result<Option<DVector<f64>>> {
        let p = family.eval(z)?;
        Ok(section.eval(&p, false)?.map(|v| v.residual))
    };
    let jac = |z: &DVector<f64>| -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
        let (p, dp) = family.eval_jac(z)?;
        Ok(section.eval(&p, true)?.map(|v| (v.residual, v.derivative.expect("requested") * dp)))
    };
    let sign = |z: &Zero| sign_of(&z.jacobian);
    let zeros = roots::find_zeros(&family.domain(), &f, &jac, &sign, opts)?;
    let mut out = Vec::with_capacity(zeros.len());
    for z in zeros {
        let (p, dp) = family.eval_jac(&z.z)?;
        if section.eval(&p, false)?.is_none_or(|v| v.landing_distance > section.valid_radius()) {
            continue;
        }
        let alpha = section.transport(&p)?;
        let margin = normalized_margin(&alpha, &dp);
        if margin < tol.tau {
            return Err(Error::Transversality { margin, threshold: tol.tau });
        }
        out.push(IntersectionRecord { parameter: z.z.iter().cloned().collect(), location: p, sign: sign_of(&(alpha * dp)), margin, target: target.id });
    }
    Ok(out)
}

/// Connecting trajectories from `x` to `y` (`ind y = ind x − 1`), detected on
/// the boundary sphere of the unstable disk of `x`, with their signs.
pub fn trajectories(sys: &MorseSystem, cps: &[CriticalPoint], x: &CriticalPoint, y: &CriticalPoint, tol: &Tolerances) -> Result<Vec<IntersectionRecord>> {
    if x.index != y.index + 1 {
        return Err(Error::IndexMismatch(format!("trajectory count needs an index gap of one, got {} -> {}", x.index, y.index)));
    }
    let disk = unstable_disk(sys, cps, x, tol.epsilon)?;
    if x.index == 1 {
        let mut out = Vec::new();
        for s in [1.0, -1.0] {
            let (p, _) = disk.point(sys, &DVector::from_element(1, s));
            if limit_point(sys, cps, &p, tol)? == y.id {
                out.push(IntersectionRecord { parameter: vec![s], location: p, sign: s as i32, margin: 1.0, target: y.id });
            }
        }
        return Ok(out);
    }
    if x.index > 3 {
        return Err(Error::InvalidParameter(format!("boundary spheres of {}-disks are not supported", x.index)));
    }
    signed_intersections(sys, cps, &SphereFamily::balanced(sys, disk, x, tube_radius(sys, cps)), y, tol)
}

/// `#M̃(x, y)`: the signed count of connecting trajectories.
pub fn count_trajectories(sys: &MorseSystem, cps: &[CriticalPoint], x: &CriticalPoint, y: &CriticalPoint, tol: &Tolerances) -> Result<i64> {
    Ok(trajectories(sys, cps, x, y, tol)?.iter().map(|r| r.sign as i64).sum())
}

/// Transversality margins at points sampled along `family ∩ S^target`,
/// including non-isolated intersections. Works for any family dimension.
pub fn intersection_margins(sys: &MorseSystem, cps: &[CriticalPoint], family: &dyn Family, target: &CriticalPoint, tol: &Tolerances) -> Result<Vec<f64>> {
    if target.index == 0 || family.param_dim() == 0 {
        return Ok(vec![]);
    }
    let section = Section::new(sys, cps, target, tol);
    let f = |z: &DVector<f64>| -> Result<Option<DVector<f64>>> { Ok(section.eval(&family.eval(z)?, false)?.map(|v| v.residual)) };
    let jac = |z: &DVector<f64>| -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
        let (p, dp) = family.eval_jac(z)?;
        Ok(section.eval(&p, true)?.map(|v| (v.residual, v.derivative.expect("requested") * dp)))
    };
    let samples = roots::sample_zero_set(&family.domain(), &f, &jac, &search_options(family.param_dim(), tol), 0.02)?;
    let mut out = Vec::new();
    for z in samples {
        let (p, dp) = family.eval_jac(&z.z)?;
        let alpha = section.transport(&p)?;
        out.push(normalized_margin(&alpha, &dp));
    }
    Ok(out)
}

/// Transversality margins of `U^x ⋔ S^y`, sampled on the boundary sphere of
/// `x`. Used by Morse-Smale checks.
pub fn connection_margins(sys: &MorseSystem, cps: &[CriticalPoint], x: &CriticalPoint, y: &CriticalPoint, tol: &Tolerances) -> Result<Vec<f64>> {
    if y.index == 0 || x.index < 2 || x.index > 3 {
        return Ok(vec![]);
    }
    let disk = unstable_disk(sys, cps, x, tol.epsilon)?;
    // the sphere is transverse to the flow, so U^x ⋔ S^y reduces to the sphere against S^y
    intersection_margins(sys, cps, &SphereFamily::balanced(sys, disk, x, tube_radius(sys, cps)), y, tol)
}
