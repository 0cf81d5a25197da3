//! Cup products of Morse cochains from triple intersection numbers
//! `#U^{x₃} ∩ S^{x₁} ∩ S^{x₂}` across three systems on one manifold.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::complex::{build_morse_complex, cohomology_presentation, dualize, mul_checked, smith_normal_form, to_rows, ChainComplex, CochainComplex, IntMatrix};
use crate::critical::{find_critical_points, CriticalPoint};
use crate::dynamics::limit_point;
use crate::exterior::{contract, CovectorFrame, Multivector};
use crate::geometry::{builtin_system, Manifold, MorseSystem, Point, SystemSpec};
use crate::invariants::roots::{find_zeros, Domain, Zero, ZeroSearch};
use crate::invariants::{cell_search_options, signed_intersections, signed_intersections_with, CellFamily, Family, Section, SECTION_REACH};
use crate::linalg::{det, normalized_margin};
use crate::settings::Tolerances;
use crate::{Error, Result};

/// One Morse system with its catalogue and complexes.
#[derive(Debug, Clone)]
pub struct Member {
    pub sys: MorseSystem,
    pub cps: Vec<CriticalPoint>,
    pub complex: ChainComplex,
    pub cochains: CochainComplex,
}

impl Member {
    pub fn new(spec: &SystemSpec, tol: &Tolerances) -> Result<Self> {
        let sys = builtin_system(spec)?;
        let cps = find_critical_points(&sys, tol)?;
        let complex = build_morse_complex(&sys, &cps, tol)?;
        let cochains = dualize(&complex);
        Ok(Member { sys, cps, complex, cochains })
    }

    pub fn critical(&self, id: usize) -> Result<&CriticalPoint> {
        self.cps.iter().find(|c| c.id == id).ok_or_else(|| Error::InvalidParameter(format!("no critical point with id {id}")))
    }

    /// Critical point ids of degree `k`, in cochain order.
    pub fn ids(&self, k: usize) -> &[usize] {
        self.cochains.labels.get(k).map_or(&[], |v| v.as_slice())
    }
}

/// Three Morse-Smale systems on the same manifold.
#[derive(Debug, Clone)]
pub struct TripleSystem {
    pub members: [Member; 3],
    /// Draws consumed before a transverse triple was found.
    pub draws: usize,
}

impl TripleSystem {
    pub fn new(specs: [SystemSpec; 3], tol: &Tolerances) -> Result<Self> {
        let [a, b, c] = specs;
        let members = [Member::new(&a, tol)?, Member::new(&b, tol)?, Member::new(&c, tol)?];
        if members[1].sys.manifold != members[0].sys.manifold || members[2].sys.manifold != members[0].sys.manifold {
            return Err(Error::InvalidParameter("the three systems must live on the same manifold".into()));
        }
        Ok(TripleSystem { members, draws: 1 })
    }

    pub fn specs(&self) -> Vec<SystemSpec> {
        self.members.iter().map(|m| m.sys.spec.clone()).collect()
    }

    pub fn manifold(&self) -> &Manifold {
        &self.members[0].sys.manifold
    }
}

/// A copy of `base` with freshly drawn generic offsets or rotation.
pub fn draw_offsets<R: Rng + ?Sized>(base: &SystemSpec, rng: &mut R) -> SystemSpec {
    let mut angles = || [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.2..2.9), rng.gen_range(0.0..std::f64::consts::TAU)];
    match base {
        SystemSpec::Circle { .. } => SystemSpec::Circle { offset: rng.gen_range(0.0..1.0) },
        SystemSpec::Torus { offsets, amplitudes } => SystemSpec::Torus { offsets: offsets.iter().map(|_| rng.gen_range(0.0..1.0)).collect(), amplitudes: amplitudes.clone() },
        SystemSpec::SphereHeight { .. } => SystemSpec::SphereHeight { rotation: angles() },
        SystemSpec::Peanut { lambda, .. } => SystemSpec::Peanut { lambda: *lambda, rotation: angles() },
        SystemSpec::Product { factors } => SystemSpec::Product { factors: factors.iter().map(|f| draw_offsets(f, rng)).collect() },
    }
}

/// Torus offsets on a common axis closer than this (modulo ½) are redrawn:
/// the invariant circles of different systems nearly coincide and triple
/// points crowd the critical points.
const OFFSET_GAP: f64 = 0.04;

fn offsets_generic(specs: &[SystemSpec]) -> bool {
    let offsets: Vec<&Vec<f64>> = specs.iter().filter_map(|s| if let SystemSpec::Torus { offsets, .. } = s { Some(offsets) } else { None }).collect();
    for i in 0..offsets.len() {
        for j in 0..i {
            for (a, b) in offsets[i].iter().zip(offsets[j]) {
                let d = (a - b).rem_euclid(0.5);
                if d.min(0.5 - d) < OFFSET_GAP {
                    return false;
                }
            }
        }
    }
    true
}

/// A located point of a triple intersection.
#[derive(Debug, Clone, Serialize)]
pub struct TriplePoint {
    pub parameter: Vec<f64>,
    pub location: Point,
    pub sign: i32,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TripleRecord {
    pub x1: usize,
    pub x2: usize,
    pub x3: usize,
    pub count: i64,
    pub points: Vec<TriplePoint>,
}

fn in_basin(m: &Member, p: &Point, target: &CriticalPoint, tol: &Tolerances) -> Result<bool> {
    Ok(limit_point(&m.sys, &m.cps, p, tol)? == target.id)
}

/// Sign of the disk orientation `dp` contracted first with `a1`, then with `a2`.
fn iterated_sign(dp: &DMatrix<f64>, a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> Result<i32> {
    let n = dp.nrows();
    let cols: Vec<DVector<f64>> = dp.column_iter().map(|c| c.into_owned()).collect();
    let o = Multivector::from_vectors(n, &cols)?;
    let o = contract(&o, &CovectorFrame::new(a1.clone())?)?;
    let o = contract(&o, &CovectorFrame::new(a2.clone())?)?;
    Ok(if o.coeffs()[0] > 0.0 { 1 } else { -1 })
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    m.rows_mut(0, a.nrows()).copy_from(a);
    m.rows_mut(a.nrows(), b.nrows()).copy_from(b);
    m
}

/// Options for the intersections filtered by a basin: every frontier
/// vertex seeds Newton.
fn basin_search_options(k: usize, tol: &Tolerances) -> ZeroSearch {
    ZeroSearch { frontier: Some(f64::INFINITY), ..cell_search_options(k, tol) }
}

/// `n^{x₁,x₂}_{x₃}` with `xᵢ` a critical point of system `i`.
pub fn triple_intersection(ts: &TripleSystem, x1: &CriticalPoint, x2: &CriticalPoint, x3: &CriticalPoint, tol: &Tolerances) -> Result<TripleRecord> {
    let (k1, k2, k3) = (x1.index, x2.index, x3.index);
    if k3 != k1 + k2 {
        return Err(Error::IndexMismatch(format!("triple needs ind x3 = ind x1 + ind x2, got {k1} + {k2} vs {k3}")));
    }
    let [m1, m2, m3] = &ts.members;
    let record = |points: Vec<TriplePoint>| TripleRecord { x1: x1.id, x2: x2.id, x3: x3.id, count: points.iter().map(|p| p.sign as i64).sum(), points };
    if k3 == 0 {
        let p = x3.point.clone();
        let hit = in_basin(m1, &p, x1, tol)? && in_basin(m2, &p, x2, tol)?;
        return Ok(record(if hit { vec![TriplePoint { parameter: vec![], location: p, sign: 1, margin: 1.0 }] } else { vec![] }));
    }
    let cell = CellFamily::new(&m3.sys, &m3.cps, x3, tol)?;
    if k1 == 0 || k2 == 0 {
        // an open stable set only filters the intersections with the other one
        let (open, open_cp, closed, closed_cp) = if k1 == 0 { (m1, x1, m2, x2) } else { (m2, x2, m1, x1) };
        let mut points = Vec::new();
        for r in signed_intersections_with(&closed.sys, &closed.cps, &cell, closed_cp, tol, &basin_search_options(k3, tol))? {
            if in_basin(open, &r.location, open_cp, tol)? {
                points.push(TriplePoint { parameter: r.parameter, location: r.location, sign: r.sign, margin: r.margin });
            }
        }
        return Ok(record(points));
    }
    // the joint residual band is thin; widen both and filter zeros afterwards
    let s1 = Section::new(&m1.sys, &m1.cps, x1, tol).widened(SECTION_REACH);
    let s2 = Section::new(&m2.sys, &m2.cps, x2, tol).widened(SECTION_REACH);
    let f = |z: &DVector<f64>| -> Result<Option<DVector<f64>>> {
        let p = cell.eval(z)?;
        let Some(a) = s1.eval(&p, false)? else { return Ok(None) };
        let Some(b) = s2.eval(&p, false)? else { return Ok(None) };
        Ok(Some(DVector::from_iterator(k3, a.residual.iter().chain(b.residual.iter()).cloned())))
    };
    let jac = |z: &DVector<f64>| -> Result<Option<(DVector<f64>, DMatrix<f64>)>> {
        let (p, dp) = cell.eval_jac(z)?;
        let Some(a) = s1.eval(&p, true)? else { return Ok(None) };
        let Some(b) = s2.eval(&p, true)? else { return Ok(None) };
        let r = DVector::from_iterator(k3, a.residual.iter().chain(b.residual.iter()).cloned());
        let d = stack(&a.derivative.expect("requested"), &b.derivative.expect("requested"));
        Ok(Some((r, d * dp)))
    };
    let sign = |z: &Zero| if det(&z.jacobian) > 0.0 { 1 } else { -1 };
    let opts = cell_search_options(k3, tol);
    let zeros = find_zeros(&cell.domain(), &f, &jac, &sign, &opts)?;
    let mut points = Vec::with_capacity(zeros.len());
    for z in zeros {
        let (p, dp) = cell.eval_jac(&z.z)?;
        let inside = |s: &Section| -> Result<bool> { Ok(s.eval(&p, false)?.is_some_and(|v| v.landing_distance <= s.valid_radius())) };
        if !inside(&s1)? || !inside(&s2)? {
            continue;
        }
        let a1 = s1.transport(&p)?;
        let a2 = s2.transport(&p)?;
        let both = stack(&a1, &a2);
        let pairwise = both.singular_values().min();
        let margin = normalized_margin(&both, &dp).min(pairwise);
        if margin < tol.tau {
            return Err(Error::Transversality { margin, threshold: tol.tau });
        }
        points.push(TriplePoint { parameter: z.z.iter().cloned().collect(), location: p, sign: iterated_sign(&dp, &a1, &a2)?, margin });
    }
    Ok(record(points))
}

/// All triple intersection numbers with `ind x₁ + ind x₂ ≤ dim M`.
#[derive(Debug, Clone, Default)]
pub struct CupTensor {
    pub records: Vec<TripleRecord>,
    counts: BTreeMap<(usize, usize, usize), i64>,
}

impl CupTensor {
    pub fn get(&self, x1: usize, x2: usize, x3: usize) -> i64 {
        self.counts.get(&(x1, x2, x3)).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let entries: Vec<serde_json::Value> = self
            .records
            .iter()
            .map(|r| serde_json::json!({ "x1": r.x1, "x2": r.x2, "x3": r.x3, "count": r.count, "points": r.points }))
            .collect();
        serde_json::Value::Array(entries)
    }
}

pub fn cup_tensor(ts: &TripleSystem, tol: &Tolerances) -> Result<CupTensor> {
    let [m1, m2, m3] = &ts.members;
    let mut triples = Vec::new();
    for a in &m1.cps {
        for b in &m2.cps {
            for c in m3.cps.iter().filter(|c| c.index == a.index + b.index) {
                triples.push((a, b, c));
            }
        }
    }
    let records = triples.par_iter().map(|(a, b, c)| triple_intersection(ts, a, b, c, tol)).collect::<Result<Vec<_>>>()?;
    let counts = records.iter().map(|r| ((r.x1, r.x2, r.x3), r.count)).collect();
    Ok(CupTensor { records, counts })
}

/// Draw offset triples from `seed` until every triple intersection is
/// transverse, at most `max_draws` times.
pub fn seeded_triple(base: &SystemSpec, seed: u64, max_draws: usize, tol: &Tolerances) -> Result<(TripleSystem, CupTensor)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = Error::InvalidParameter("no draws requested".into());
    for draw in 1..=max_draws {
        let specs = [draw_offsets(base, &mut rng), draw_offsets(base, &mut rng), draw_offsets(base, &mut rng)];
        if !offsets_generic(&specs) {
            last = Error::InvalidParameter("offset draws are not generic".into());
            continue;
        }
        let attempt = TripleSystem::new(specs, tol).and_then(|mut ts| {
            ts.draws = draw;
            let tensor = cup_tensor(&ts, tol)?;
            Ok((ts, tensor))
        });
        match attempt {
            Ok(found) => return Ok(found),
            Err(e @ (Error::Transversality { .. } | Error::MeshTooCoarse(_) | Error::NotNearTarget { .. } | Error::NotMorse { .. })) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// `α ⌣ β` for `α ∈ C^{k₁}` of system 1 and `β ∈ C^{k₂}` of system 2.
pub fn cup_product(ts: &TripleSystem, tensor: &CupTensor, k1: usize, alpha: &[i64], k2: usize, beta: &[i64]) -> Result<Vec<i64>> {
    let [m1, m2, m3] = &ts.members;
    let n = ts.manifold().dim();
    if k1 + k2 > n {
        return Err(Error::DegreeOverflow(k1 + k2, n));
    }
    let (i1, i2, i3) = (m1.ids(k1), m2.ids(k2), m3.ids(k1 + k2));
    if alpha.len() != i1.len() {
        return Err(Error::DimensionMismatch { expected: i1.len(), got: alpha.len() });
    }
    if beta.len() != i2.len() {
        return Err(Error::DimensionMismatch { expected: i2.len(), got: beta.len() });
    }
    i3.iter()
        .map(|&c| {
            let mut acc = 0i64;
            for (a, &x1) in alpha.iter().zip(i1) {
                for (b, &x2) in beta.iter().zip(i2) {
                    let term = a.checked_mul(*b).and_then(|v| v.checked_mul(tensor.get(x1, x2, c))).ok_or(Error::Overflow)?;
                    acc = acc.checked_add(term).ok_or(Error::Overflow)?;
                }
            }
            Ok(acc)
        })
        .collect()
}

fn apply(m: &IntMatrix, v: &[i64]) -> Result<Vec<i64>> {
    let col = IntMatrix::from_column_slice(v.len(), 1, v);
    Ok(mul_checked(m, &col)?.iter().cloned().collect())
}

fn basis(n: usize, i: usize) -> Vec<i64> {
    let mut v = vec![0; n];
    v[i] = 1;
    v
}

#[derive(Debug, Clone, Serialize)]
pub struct BiChainFailure {
    pub k1: usize,
    pub k2: usize,
    pub x1: usize,
    pub x2: usize,
    pub lhs: Vec<i64>,
    pub rhs: Vec<i64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiChainReport {
    pub checked: usize,
    pub failures: Vec<BiChainFailure>,
    pub pass: bool,
}

/// `δ(α⌣β) = (δα)⌣β + (−1)^{k₁} α⌣(δβ)` on all pairs of basis cochains.
pub fn check_bichain(ts: &TripleSystem, tensor: &CupTensor) -> Result<BiChainReport> {
    let [m1, m2, m3] = &ts.members;
    let n = ts.manifold().dim();
    let mut checked = 0;
    let mut failures = Vec::new();
    for k1 in 0..n {
        for k2 in 0..n - k1 {
            let (r1, r2) = (m1.ids(k1).len(), m2.ids(k2).len());
            for i in 0..r1 {
                for j in 0..r2 {
                    let (a, b) = (basis(r1, i), basis(r2, j));
                    let lhs = apply(&m3.cochains.coboundaries[k1 + k2], &cup_product(ts, tensor, k1, &a, k2, &b)?)?;
                    let left = cup_product(ts, tensor, k1 + 1, &apply(&m1.cochains.coboundaries[k1], &a)?, k2, &b)?;
                    let right = cup_product(ts, tensor, k1, &a, k2 + 1, &apply(&m2.cochains.coboundaries[k2], &b)?)?;
                    let s = if k1 % 2 == 0 { 1 } else { -1 };
                    let rhs: Vec<i64> = left.iter().zip(&right).map(|(l, r)| l + s * r).collect();
                    checked += 1;
                    if lhs != rhs {
                        failures.push(BiChainFailure { k1, k2, x1: m1.ids(k1)[i], x2: m2.ids(k2)[j], lhs, rhs });
                    }
                }
            }
        }
    }
    Ok(BiChainReport { checked, pass: failures.is_empty(), failures })
}

const LOOP_SHIFT: f64 = 0.0137;

/// Closed straight loop `s ↦ base + s·e_axis` on a flat torus.
struct AxisLoop<'a> {
    manifold: &'a Manifold,
    base: Vec<f64>,
    axis: usize,
}

impl Family for AxisLoop<'_> {
    fn param_dim(&self) -> usize {
        1
    }

    fn domain(&self) -> Domain {
        Domain { lo: vec![0.0], hi: vec![1.0], periodic: vec![true] }
    }

    fn eval(&self, z: &DVector<f64>) -> Result<Point> {
        let mut c = self.base.clone();
        c[self.axis] += z[0];
        Ok(self.manifold.normalized(&Point::new(0, c)))
    }

    fn eval_jac(&self, z: &DVector<f64>) -> Result<(Point, DMatrix<f64>)> {
        let mut j = DMatrix::zeros(self.base.len(), 1);
        j[(self.axis, 0)] = 1.0;
        Ok((self.eval(z)?, j))
    }
}

/// Cochains of degree one representing the classes dual to the coordinate
/// loops: column `j` pairs to `δ_{ij}` with the loop along axis `i`.
fn dual_loop_cochains(m: &Member, tol: &Tolerances) -> Result<IntMatrix> {
    let n = m.sys.manifold.dim();
    let ids = m.ids(1);
    let mut pairing = IntMatrix::zeros(n, ids.len());
    for axis in 0..n {
        for (j, id) in ids.iter().enumerate() {
            // all loops along one axis are homologous; one passing close to
            // the saddle meets its stable manifold inside a wide residual band
            let base = m.critical(*id)?.point.coords.iter().map(|c| c + LOOP_SHIFT).collect();
            let family = AxisLoop { manifold: &m.sys.manifold, base, axis };
            pairing[(axis, j)] = signed_intersections(&m.sys, &m.cps, &family, m.critical(*id)?, tol)?.iter().map(|r| r.sign as i64).sum();
        }
    }
    let gens = cohomology_presentation(&m.cochains, 1)?.generators;
    let r = mul_checked(&pairing, &gens)?;
    if r.nrows() != r.ncols() {
        return Err(Error::InvalidParameter("coordinate loops do not match the first cohomology".into()));
    }
    let snf = smith_normal_form(&r)?;
    if snf.rank() != r.nrows() || snf.factors.iter().any(|f| *f != 1) {
        return Err(Error::InvalidParameter("coordinate loops do not span the first homology".into()));
    }
    // U·R·V = I, so R⁻¹ = V·U
    mul_checked(&gens, &mul_checked(&snf.v, &snf.u)?)
}

/// The `H¹ × H¹ → H²` pairing on a 2-torus in the basis dual to the
/// coordinate loops, evaluated on the fundamental class.
#[derive(Debug, Clone, Serialize)]
pub struct Pairing {
    pub matrix: Vec<Vec<i64>>,
    pub antisymmetric: bool,
    pub squares_vanish: bool,
    pub unimodular: bool,
}

pub fn h1_pairing(ts: &TripleSystem, tensor: &CupTensor, tol: &Tolerances) -> Result<Pairing> {
    if !matches!(ts.manifold(), Manifold::Torus { n: 2 }) {
        return Err(Error::InvalidParameter("the cohomology pairing is computed on the 2-torus only".into()));
    }
    let [m1, m2, m3] = &ts.members;
    let c1 = dual_loop_cochains(m1, tol)?;
    let c2 = dual_loop_cochains(m2, tol)?;
    // fundamental cycle: top cells weighted by the orientation of their frames
    let top: Vec<i64> = m3
        .ids(2)
        .iter()
        .map(|id| Ok(if det(m3.critical(*id)?.unstable_frame.matrix()) > 0.0 { 1 } else { -1 }))
        .collect::<Result<_>>()?;
    let mut matrix = vec![vec![0i64; 2]; 2];
    for (i, row) in matrix.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let a: Vec<i64> = c1.column(i).iter().cloned().collect();
            let b: Vec<i64> = c2.column(j).iter().cloned().collect();
            let g = cup_product(ts, tensor, 1, &a, 1, &b)?;
            *v = g.iter().zip(&top).map(|(x, e)| x * e).sum();
        }
    }
    let m = &matrix;
    Ok(Pairing {
        antisymmetric: m[0][1] == -m[1][0] && m[0][0] == 0 && m[1][1] == 0,
        squares_vanish: m[0][0] == 0 && m[1][1] == 0,
        unimodular: m[0][1].abs() == 1,
        matrix,
    })
}

/// Cup products with the unit of system 1 against the comparison chain map
/// from system 3 to system 2: both give the same cochain of system 3.
#[derive(Debug, Clone, Serialize)]
pub struct UnitCheck {
    pub degree: usize,
    pub x2: usize,
    pub product: Vec<i64>,
    pub pulled_back: Vec<i64>,
    pub equal: bool,
}

pub fn check_unit(ts: &TripleSystem, tensor: &CupTensor, comparison: &[IntMatrix]) -> Result<Vec<UnitCheck>> {
    let [m1, m2, _] = &ts.members;
    let unit = vec![1; m1.ids(0).len()];
    let mut out = Vec::new();
    for (k, phi) in comparison.iter().enumerate() {
        for (j, x2) in m2.ids(k).iter().enumerate() {
            let b = basis(m2.ids(k).len(), j);
            let product = cup_product(ts, tensor, 0, &unit, k, &b)?;
            let pulled_back = apply(&phi.transpose(), &b)?;
            out.push(UnitCheck { degree: k, x2: *x2, equal: product == pulled_back, product, pulled_back });
        }
    }
    Ok(out)
}

/// JSON summary of a triple: systems, the tensor and, on 2-tori, the pairing.
pub fn cup_report(ts: &TripleSystem, tensor: &CupTensor, tol: &Tolerances) -> Result<serde_json::Value> {
    let bichain = check_bichain(ts, tensor)?;
    let pairing = match ts.manifold() {
        Manifold::Torus { n: 2 } => Some(h1_pairing(ts, tensor, tol)?),
        _ => None,
    };
    let complexes: Vec<serde_json::Value> = ts.members.iter().map(|m| m.complex.to_json()).collect();
    let coboundaries: Vec<Vec<Vec<Vec<i64>>>> = ts.members.iter().map(|m| m.cochains.coboundaries.iter().map(to_rows).collect()).collect();
    Ok(serde_json::json!({
        "systems": ts.specs(),
        "draws": ts.draws,
        "complexes": complexes,
        "coboundaries": coboundaries,
        "tensor": tensor.to_json(),
        "bichain": bichain,
        "pairing": pairing,
    }))
}

