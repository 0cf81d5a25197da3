//! Critical-point search, Morse classification and canonical frames.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::exterior::{induced_coorientation, CovectorFrame, OrientedFrame};
use crate::geometry::{Manifold, MorseSystem, Point};
use crate::linalg::wrap_unit;
use crate::settings::Tolerances;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalPoint {
    pub id: usize,
    pub point: Point,
    pub value: f64,
    pub index: usize,
    /// Eigenvalues of `g⁻¹·Hess`, ascending.
    pub eigenvalues: Vec<f64>,
    pub unstable_frame: OrientedFrame,
    pub stable_frame: Vec<DVector<f64>>,
    pub stable_coframe: CovectorFrame,
}

#[derive(Debug, Clone, Serialize)]
pub struct CatalogueEntry {
    pub id: usize,
    pub chart: usize,
    pub coords: Vec<f64>,
    pub value: f64,
    pub index: usize,
    pub eigenvalues: Vec<f64>,
}

impl CriticalPoint {
    pub fn entry(&self) -> CatalogueEntry {
        CatalogueEntry { id: self.id, chart: self.point.chart, coords: self.point.coords_vec(), value: self.value, index: self.index, eigenvalues: self.eigenvalues.clone() }
    }

    /// Smallest `|λ|` of the linearization.
    pub fn spectral_gap(&self) -> f64 {
        self.eigenvalues.iter().map(|l| l.abs()).fold(f64::INFINITY, f64::min)
    }
}

/// Per-pair transversality margins with an overall verdict.
#[derive(Debug, Clone, Serialize)]
pub struct TransversalityReport {
    pub pairs: Vec<PairMargin>,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairMargin {
    pub source: String,
    pub target: String,
    /// Smallest margin among detected intersections; `None` when there are none.
    pub margin: Option<f64>,
    pub note: String,
}

impl TransversalityReport {
    pub fn new(pairs: Vec<PairMargin>, threshold: f64) -> Self {
        let pass = pairs.iter().all(|p| p.margin.is_none_or(|m| m >= threshold) && p.note.is_empty());
        TransversalityReport { pairs, threshold, pass }
    }

    pub fn min_margin(&self) -> Option<f64> {
        self.pairs.iter().filter_map(|p| p.margin).reduce(f64::min)
    }
}

/// Chart-independent representative: torus coordinates in `[0,1)`, sphere
/// points in the hemisphere chart, products factorwise.
pub fn canonical_point(manifold: &Manifold, p: &Point) -> Point {
    match manifold {
        Manifold::Torus { .. } => {
            let coords = p.coords.map(|c| {
                let w = wrap_unit(c);
                if w > 1.0 - 1e-10 { 0.0 } else { w }
            });
            Point { chart: 0, coords }
        }
        Manifold::Sphere => Manifold::sphere_point(&manifold.embed(p).expect("sphere embeds")),
        Manifold::Product(a, b) => {
            let (pa, pb) = manifold.split(p);
            manifold.join(&canonical_point(a, &pa), &canonical_point(b, &pb))
        }
    }
}

fn sort_key(manifold: &Manifold, p: &Point) -> Vec<f64> {
    match manifold {
        Manifold::Torus { .. } => p.coords_vec(),
        Manifold::Sphere => {
            let x = manifold.embed(p).unwrap();
            vec![-x[2], x[0], x[1]]
        }
        Manifold::Product(a, b) => {
            let (pa, pb) = manifold.split(p);
            let mut k = sort_key(a, &pa);
            k.extend(sort_key(b, &pb));
            k
        }
    }
}

/// Grid seeds: `density` per dimension per chart-covering box.
fn seeds(manifold: &Manifold, density: usize) -> Vec<Point> {
    match manifold {
        Manifold::Torus { n } => {
            let mut out = vec![vec![]];
            for _ in 0..*n {
                out = out.into_iter().flat_map(|v: Vec<f64>| (0..density).map(move |i| [v.clone(), vec![(i as f64 + 0.5) / density as f64]].concat())).collect();
            }
            out.into_iter().map(|c| Point::new(0, c)).collect()
        }
        Manifold::Sphere => {
            let mut out = Vec::new();
            for chart in 0..2 {
                for i in 0..density {
                    for j in 0..density {
                        let a = -1.1 + 2.2 * (i as f64 + 0.5) / density as f64;
                        let b = -1.1 + 2.2 * (j as f64 + 0.5) / density as f64;
                        out.push(Point::new(chart, vec![a, b]));
                    }
                }
            }
            out
        }
        Manifold::Product(a, b) => {
            let sa = seeds(a, density);
            let sb = seeds(b, density);
            sa.iter().flat_map(|pa| sb.iter().map(move |pb| manifold.join(pa, pb))).collect()
        }
    }
}

fn newton(sys: &MorseSystem, seed: &Point, tol: &Tolerances) -> Option<Point> {
    let mut p = seed.clone();
    for _ in 0..60 {
        let jet = sys.jet(&p);
        let step = jet.hessian.clone().lu().solve(&jet.differential)?;
        // damp wild steps so seeds stay in their own region
        let scale = (0.25 / step.norm().max(1e-300)).min(1.0);
        p.coords -= step * scale;
        sys.manifold.normalize(&mut p);
        if !sys.manifold.contains(&p) {
            return None;
        }
        if sys.gradient_norm(&p) <= 1e-3 * tol.crit_tol || (scale == 1.0 && jet.differential.norm() < 1e-14) {
            break;
        }
    }
    (sys.gradient_norm(&p) <= tol.crit_tol).then_some(p)
}

/// Generalized symmetric eigenproblem `H v = λ G v`, eigenvalues ascending,
/// eigenvectors `G`-orthonormal.
fn metric_eigen(h: &DMatrix<f64>, g: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let l = g.clone().cholesky().expect("metric is positive definite").l();
    let linv = l.clone().try_inverse().expect("triangular factor invertible");
    let m = &linv * h * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap_or(Ordering::Equal));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = DMatrix::from_columns(&order.iter().map(|&i| linv.transpose() * eig.eigenvectors.column(i)).collect::<Vec<_>>());
    (vals, vecs)
}

fn sign_normalize(v: &mut DVector<f64>) {
    let scale = v.amax();
    if let Some(first) = v.iter().find(|c| c.abs() > 1e-9 * scale) {
        if *first < 0.0 {
            *v *= -1.0;
        }
    }
}

/// Canonical basis of an eigenspace: coordinate vectors projected onto it,
/// in coordinate order, Gram-Schmidt'ed in the metric.
fn tie_basis(space: &DMatrix<f64>, g: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let m = space.ncols();
    if m == 1 {
        let mut v = space.column(0).into_owned();
        sign_normalize(&mut v);
        return vec![v];
    }
    let n = space.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(m);
    for i in 0..n {
        if basis.len() == m {
            break;
        }
        // G-orthogonal projection of e_i onto the G-orthonormal columns
        let mut e = DVector::zeros(n);
        e[i] = 1.0;
        let ge = g * &e;
        let mut v = space * (space.transpose() * ge);
        for b in &basis {
            let c = b.dot(&(g * &v));
            v -= b * c;
        }
        let norm = v.dot(&(g * &v)).sqrt();
        if norm > 1e-6 {
            basis.push(v / norm);
        }
    }
    for v in basis.iter_mut() {
        sign_normalize(v);
    }
    basis
}

/// Populate eigenvalues, index and frames of a located critical point.
pub fn classify(sys: &MorseSystem, p: &Point, tol: &Tolerances) -> Result<CriticalPoint> {
    let h = sys.hessian(p, tol.crit_tol)?;
    let g = sys.manifold.metric(p);
    let (vals, vecs) = metric_eigen(&h, &g);
    if let Some(l) = vals.iter().find(|l| l.abs() < tol.degeneracy_tol) {
        return Err(Error::NotMorse { eigenvalue: *l, location: p.coords_vec() });
    }
    let n = vals.len();
    let scale = vals.iter().map(|l| l.abs()).fold(0.0, f64::max);
    let mut frame: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && (vals[j] - vals[i]).abs() <= 1e-9 * scale {
            j += 1;
        }
        frame.extend(tie_basis(&vecs.columns(i, j - i).into_owned(), &g));
        i = j;
    }
    let index = vals.iter().filter(|l| **l < 0.0).count();
    let unstable_frame = OrientedFrame::from_vectors(n, &frame[..index])?;
    let stable_frame = frame[index..].to_vec();
    let stable_coframe = induced_coorientation(&unstable_frame, &stable_frame)?;
    Ok(CriticalPoint { id: 0, point: p.clone(), value: sys.value(p), index, eigenvalues: vals, unstable_frame, stable_frame, stable_coframe })
}

/// Recompute frames for a classified point, e.g. after moving it to another chart.
pub fn canonical_frames(sys: &MorseSystem, cp: &CriticalPoint, tol: &Tolerances) -> Result<CriticalPoint> {
    let mut out = classify(sys, &cp.point, tol)?;
    out.id = cp.id;
    Ok(out)
}

/// All critical points, ordered by index, then value, then location, with ids
/// assigned in that order.
pub fn find_critical_points(sys: &MorseSystem, tol: &Tolerances) -> Result<Vec<CriticalPoint>> {
    tol.validate()?;
    let found: Vec<Point> = seeds(&sys.manifold, tol.grid_density).par_iter().filter_map(|s| newton(sys, s, tol)).collect();
    let mut unique: Vec<Point> = Vec::new();
    for p in found {
        let p = canonical_point(&sys.manifold, &p);
        if !unique.iter().any(|q| sys.distance(q, &p) < 1e-6) {
            unique.push(p);
        }
    }
    if unique.is_empty() {
        return Err(Error::NoCriticalPoints);
    }
    let mut cps = unique.iter().map(|p| classify(sys, p, tol)).collect::<Result<Vec<_>>>()?;
    let m = &sys.manifold;
    cps.sort_by(|a, b| {
        a.index.cmp(&b.index).then_with(|| {
            if (a.value - b.value).abs() > 1e-7 {
                a.value.partial_cmp(&b.value).unwrap()
            } else {
                let (ka, kb) = (sort_key(m, &a.point), sort_key(m, &b.point));
                ka.iter().zip(&kb).map(|(x, y)| if (x - y).abs() < 1e-7 { Ordering::Equal } else { x.partial_cmp(y).unwrap() }).find(|o| *o != Ordering::Equal).unwrap_or(Ordering::Equal)
            }
        })
    });
    for (i, cp) in cps.iter_mut().enumerate() {
        cp.id = i;
    }
    let euler: i64 = cps.iter().map(|c| if c.index % 2 == 0 { 1 } else { -1 }).sum();
    if euler != m.euler_characteristic() {
        return Err(Error::IndexMismatch(format!("alternating count {euler} differs from Euler characteristic {}; critical points were missed", m.euler_characteristic())));
    }
    Ok(cps)
}

pub fn by_index(cps: &[CriticalPoint], k: usize) -> Vec<&CriticalPoint> {
    cps.iter().filter(|c| c.index == k).collect()
}

/// The catalogue as JSON.
pub fn catalogue_json(cps: &[CriticalPoint]) -> serde_json::Value {
    serde_json::to_value(cps.iter().map(|c| c.entry()).collect::<Vec<_>>()).expect("plain data serializes")
}

/// Minimal distance between distinct critical points.
pub fn separation(sys: &MorseSystem, cps: &[CriticalPoint]) -> f64 {
    let mut d = f64::INFINITY;
    for (i, a) in cps.iter().enumerate() {
        for b in &cps[i + 1..] {
            d = d.min(sys.distance(&a.point, &b.point));
        }
    }
    d
}
