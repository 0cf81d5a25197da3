//! Chain maps induced by smooth maps between Morse systems.

mod flow;
mod maps;
mod regular;

pub use flow::{attaching_degree, chain_map_by_flow, chain_map_by_flow_at, FlowChainMap, TubeCoords};
pub use maps::{SmoothMap, Wave};
pub use regular::{check_stably_regular, search_counterexample, CounterexampleSearch, StableRegularity, Violation};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::complex::{homology_presentation, mul_checked, to_rows, ChainComplex, IntMatrix};
use crate::critical::{CriticalPoint, PairMargin, TransversalityReport};
use crate::dynamics::limit_point;
use crate::geometry::{Manifold, MorseSystem, Point};
use crate::invariants::{cell_search_options, intersection_margins, signed_intersections_with, CellFamily, Domain, Family, IntersectionRecord};
use crate::settings::Tolerances;
use crate::{Error, Result};

/// A family pushed forward by a smooth map.
pub struct MappedFamily<'a> {
    pub inner: &'a dyn Family,
    pub map: &'a SmoothMap,
    pub src: &'a Manifold,
    pub dst: &'a Manifold,
}

impl Family for MappedFamily<'_> {
    fn param_dim(&self) -> usize {
        self.inner.param_dim()
    }

    fn domain(&self) -> Domain {
        self.inner.domain()
    }

    fn eval(&self, z: &DVector<f64>) -> Result<Point> {
        self.map.apply(self.src, self.dst, &self.inner.eval(z)?)
    }

    fn eval_jac(&self, z: &DVector<f64>) -> Result<(Point, DMatrix<f64>)> {
        let (p, dp) = self.inner.eval_jac(z)?;
        let (q, dq) = self.map.eval(self.src, self.dst, &p)?;
        Ok((q, dq * dp))
    }
}

/// Source and target systems with a map between them.
#[derive(Clone, Copy)]
pub struct MapProblem<'a> {
    pub src: &'a MorseSystem,
    pub src_cps: &'a [CriticalPoint],
    pub dst: &'a MorseSystem,
    pub dst_cps: &'a [CriticalPoint],
    pub map: &'a SmoothMap,
}

impl MapProblem<'_> {
    pub fn check(&self) -> Result<()> {
        self.map.check(&self.src.manifold, &self.dst.manifold)
    }

    fn cell(&self, x: &CriticalPoint, tol: &Tolerances) -> Result<CellFamily<'_>> {
        CellFamily::new(self.src, self.src_cps, x, tol)
    }
}

/// Integer matrices `Φ_k : C_k(src) → C_k(dst)`, one per degree.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainMap {
    pub matrices: Vec<IntMatrix>,
}

impl ChainMap {
    pub fn zero(src: &ChainComplex, dst: &ChainComplex) -> Self {
        let top = src.top_degree().max(dst.top_degree());
        ChainMap { matrices: (0..=top).map(|k| IntMatrix::zeros(dst.rank(k), src.rank(k))).collect() }
    }

    pub fn degree(&self, k: usize) -> &IntMatrix {
        &self.matrices[k]
    }

    /// `∂Φ_k = Φ_{k−1}∂_k` in every degree; the first failure is reported.
    pub fn verify(&self, src: &ChainComplex, dst: &ChainComplex) -> Result<()> {
        for k in 1..self.matrices.len() {
            let lhs = mul_checked(&dst.boundary(k), &self.matrices[k])?;
            let rhs = mul_checked(&self.matrices[k - 1], &src.boundary(k))?;
            if lhs != rhs {
                return Err(Error::ChainMapIdentity(k));
            }
        }
        Ok(())
    }

    pub fn compose(&self, after: &ChainMap) -> Result<ChainMap> {
        let mut matrices: Vec<IntMatrix> = self.matrices.iter().zip(&after.matrices).map(|(a, b)| mul_checked(b, a)).collect::<Result<_>>()?;
        // degrees above both end complexes carry only empty blocks
        while matrices.len() > 1 && matrices.last().is_some_and(|m| m.nrows() == 0 && m.ncols() == 0) {
            matrices.pop();
        }
        Ok(ChainMap { matrices })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::Value::Array(self.matrices.iter().map(|m| serde_json::json!(to_rows(m))).collect())
    }
}

/// The induced map on free homology in degree `k`, in presentation coordinates.
pub fn induced_on_homology(phi: &ChainMap, src: &ChainComplex, dst: &ChainComplex, k: usize) -> Result<IntMatrix> {
    let ps = homology_presentation(src, k)?;
    let pd = homology_presentation(dst, k)?;
    let image = mul_checked(phi.degree(k), &ps.generators)?;
    mul_checked(&pd.projection, &image)
}

fn cube_samples(k: usize, per_axis: usize) -> Vec<DVector<f64>> {
    let mut out = vec![DVector::zeros(k)];
    if k == 0 {
        return out;
    }
    out.clear();
    let total = per_axis.pow(k as u32);
    for idx in 0..total {
        let mut rem = idx;
        let z = DVector::from_fn(k, |_, _| {
            let i = rem % per_axis;
            rem /= per_axis;
            -1.0 + 2.0 * i as f64 / (per_axis - 1) as f64
        });
        out.push(z);
    }
    out
}

/// Every sample of a `k`-cell must be carried by the map into the basin of a
/// target critical point of index at most `k`.
pub fn check_regularity(problem: &MapProblem, tol: &Tolerances) -> Result<()> {
    problem.check()?;
    for x in problem.src_cps {
        let k = x.index;
        let cell = problem.cell(x, tol)?;
        let per_axis = match k {
            0 => 1,
            1 => 17,
            2 => 9,
            _ => 5,
        };
        let worst = cube_samples(k, per_axis)
            .par_iter()
            .map(|z| -> Result<Option<(Vec<f64>, usize)>> {
                let p = problem.map.apply(&problem.src.manifold, &problem.dst.manifold, &cell.eval(z)?)?;
                match limit_point(problem.dst, problem.dst_cps, &p, tol) {
                    Ok(id) if problem.dst_cps[id].index > k => Ok(Some((z.iter().cloned().collect(), id))),
                    Ok(_) | Err(Error::NoConvergence { .. }) => Ok(None),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some((z, id)) = worst.into_iter().flatten().next() {
            return Err(Error::Regularity(format!(
                "cell of source point {} (index {k}) at parameter {z:?} lands in the basin of target point {id} (index {})",
                x.id, problem.dst_cps[id].index
            )));
        }
    }
    Ok(())
}

fn labelled<'a>(cps: &'a [CriticalPoint], labels: &[usize]) -> Vec<&'a CriticalPoint> {
    labels.iter().map(|&i| &cps[i]).collect()
}

/// Signed intersections of the mapped cell of `x` with `S^y`.
pub fn mapped_intersections(problem: &MapProblem, x: &CriticalPoint, y: &CriticalPoint, tol: &Tolerances) -> Result<Vec<IntersectionRecord>> {
    let cell = problem.cell(x, tol)?;
    let family = MappedFamily { inner: &cell, map: problem.map, src: &problem.src.manifold, dst: &problem.dst.manifold };
    signed_intersections_with(problem.dst, problem.dst_cps, &family, y, tol, &cell_search_options(x.index, tol))
}

/// `Φ_k(x) = Σ_y #(φ(cell x) ∩ S^y)·y`, verified to be a chain map.
pub fn chain_map_by_intersection(problem: &MapProblem, src: &ChainComplex, dst: &ChainComplex, tol: &Tolerances) -> Result<ChainMap> {
    check_regularity(problem, tol)?;
    let mut phi = ChainMap::zero(src, dst);
    for k in 0..phi.matrices.len() {
        let (xs, ys) = (labelled(problem.src_cps, src.labels.get(k).map_or(&[][..], |v| v)), labelled(problem.dst_cps, dst.labels.get(k).map_or(&[][..], |v| v)));
        let pairs: Vec<(usize, usize)> = (0..ys.len()).flat_map(|i| (0..xs.len()).map(move |j| (i, j))).collect();
        let counts = pairs
            .par_iter()
            .map(|&(i, j)| Ok(mapped_intersections(problem, xs[j], ys[i], tol)?.iter().map(|r| r.sign as i64).sum::<i64>()))
            .collect::<Result<Vec<_>>>()?;
        for (&(i, j), c) in pairs.iter().zip(counts) {
            phi.matrices[k][(i, j)] = c;
        }
    }
    phi.verify(src, dst)?;
    Ok(phi)
}

/// Transversality of every mapped cell against the target stable manifolds of
/// the same index, plus regularity. Degenerate pairs are reported, not raised.
pub fn check_transverse_map(problem: &MapProblem, tol: &Tolerances) -> Result<TransversalityReport> {
    let mut pairs = Vec::new();
    if let Err(e) = check_regularity(problem, tol) {
        match e {
            Error::Regularity(msg) => pairs.push(PairMargin { source: "cells".into(), target: "basins".into(), margin: None, note: msg }),
            other => return Err(other),
        }
    }
    for x in problem.src_cps.iter().filter(|x| x.index > 0) {
        for y in problem.dst_cps.iter().filter(|y| y.index == x.index) {
            let cell = problem.cell(x, tol)?;
            let family = MappedFamily { inner: &cell, map: problem.map, src: &problem.src.manifold, dst: &problem.dst.manifold };
            let (margin, note) = match signed_intersections_with(problem.dst, problem.dst_cps, &family, y, tol, &cell_search_options(family.param_dim(), tol)) {
                Ok(recs) => (recs.iter().map(|r| r.margin).reduce(f64::min), String::new()),
                Err(Error::Transversality { margin, .. }) => (Some(margin), String::new()),
                Err(Error::MeshTooCoarse(_)) => {
                    let margins = intersection_margins(problem.dst, problem.dst_cps, &family, y, tol)?;
                    (margins.into_iter().reduce(f64::min), "intersection set is not isolated".into())
                }
                Err(e) => return Err(e),
            };
            pairs.push(PairMargin { source: format!("cell {}", x.id), target: format!("S^{}", y.id), margin, note });
        }
    }
    Ok(TransversalityReport::new(pairs, tol.tau))
}

/// Morse-Smale check: margins of `U^x ⋔ S^y` for all pairs with `ind x > ind y > 0`.
pub fn check_morse_smale(sys: &MorseSystem, cps: &[CriticalPoint], tol: &Tolerances) -> Result<TransversalityReport> {
    let mut pairs = Vec::new();
    for x in cps {
        for y in cps.iter().filter(|y| y.index > 0 && y.index < x.index) {
            let margins = crate::invariants::connection_margins(sys, cps, x, y, tol)?;
            pairs.push(PairMargin {
                source: format!("U^{}", x.id),
                target: format!("S^{}", y.id),
                margin: margins.into_iter().reduce(f64::min),
                note: String::new(),
            });
        }
    }
    Ok(TransversalityReport::new(pairs, tol.tau))
}

/// Outcome of comparing `M(ψ∘φ)` with `M(ψ)·M(φ)`.
#[derive(Debug, Clone, Serialize)]
pub struct CompositionReport {
    pub composite: Option<Vec<Vec<Vec<i64>>>>,
    pub product: Option<Vec<Vec<Vec<i64>>>>,
    pub equal: bool,
    pub errors: Vec<String>,
}

/// The three systems of a composition experiment `X → Y → Z`.
pub struct Composition<'a> {
    pub x: (&'a MorseSystem, &'a [CriticalPoint], &'a ChainComplex),
    pub y: (&'a MorseSystem, &'a [CriticalPoint], &'a ChainComplex),
    pub z: (&'a MorseSystem, &'a [CriticalPoint], &'a ChainComplex),
}

pub fn compose_experiment(systems: &Composition, phi: &SmoothMap, psi: &SmoothMap, tol: &Tolerances) -> CompositionReport {
    let (x, y, z) = (systems.x, systems.y, systems.z);
    let both = SmoothMap::compose(phi.clone(), psi.clone(), y.0.manifold.clone());
    let mut errors = Vec::new();
    let mut run = |label: &str, p: MapProblem, a: &ChainComplex, b: &ChainComplex| match chain_map_by_intersection(&p, a, b, tol) {
        Ok(m) => Some(m),
        Err(e) => {
            errors.push(format!("{label}: {e}"));
            None
        }
    };
    let m_phi = run("phi", MapProblem { src: x.0, src_cps: x.1, dst: y.0, dst_cps: y.1, map: phi }, x.2, y.2);
    let m_psi = run("psi", MapProblem { src: y.0, src_cps: y.1, dst: z.0, dst_cps: z.1, map: psi }, y.2, z.2);
    let m_both = run("psi o phi", MapProblem { src: x.0, src_cps: x.1, dst: z.0, dst_cps: z.1, map: &both }, x.2, z.2);
    let product = match (&m_phi, &m_psi) {
        (Some(a), Some(b)) => match a.compose(b) {
            Ok(m) => Some(m),
            Err(e) => {
                errors.push(format!("product: {e}"));
                None
            }
        },
        _ => None,
    };
    let equal = matches!((&m_both, &product), (Some(a), Some(b)) if a == b);
    let rows = |m: &ChainMap| m.matrices.iter().map(to_rows).collect();
    CompositionReport { composite: m_both.as_ref().map(rows), product: product.as_ref().map(rows), equal, errors }
}
