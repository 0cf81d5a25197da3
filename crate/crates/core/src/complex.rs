//! Integer chain complexes, Smith normal form and homology.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::critical::CriticalPoint;
use crate::geometry::MorseSystem;
use crate::invariants::count_trajectories;
use crate::settings::Tolerances;
use crate::{Error, Result};

pub type IntMatrix = DMatrix<i64>;

/// Graded free complex. `boundaries[k]` maps degree `k` to degree `k - 1`
/// and has shape `labels[k-1].len() × labels[k].len()` (`0 × n₀` for `k = 0`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainComplex {
    pub labels: Vec<Vec<usize>>,
    pub boundaries: Vec<IntMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HomologySummary {
    pub betti: Vec<usize>,
    pub torsion: Vec<Vec<i64>>,
}

/// Coboundaries `δ_k: C^k → C^{k+1}` are transposed boundaries.
#[derive(Debug, Clone, PartialEq)]
pub struct CochainComplex {
    pub labels: Vec<Vec<usize>>,
    pub coboundaries: Vec<IntMatrix>,
}

pub fn to_rows(m: &IntMatrix) -> Vec<Vec<i64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub fn mul_checked(a: &IntMatrix, b: &IntMatrix) -> Result<IntMatrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.nrows() });
    }
    let mut out = IntMatrix::zeros(a.nrows(), b.ncols());
    for i in 0..a.nrows() {
        for j in 0..b.ncols() {
            let mut s: i128 = 0;
            for k in 0..a.ncols() {
                s = s.checked_add(a[(i, k)] as i128 * b[(k, j)] as i128).ok_or(Error::Overflow)?;
            }
            out[(i, j)] = i64::try_from(s).map_err(|_| Error::Overflow)?;
        }
    }
    Ok(out)
}

impl ChainComplex {
    pub fn new(labels: Vec<Vec<usize>>, boundaries: Vec<IntMatrix>) -> Result<Self> {
        if boundaries.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: labels.len(), got: boundaries.len() });
        }
        for (k, b) in boundaries.iter().enumerate() {
            let rows = if k == 0 { 0 } else { labels[k - 1].len() };
            if b.nrows() != rows || b.ncols() != labels[k].len() {
                return Err(Error::DimensionMismatch { expected: rows * labels[k].len(), got: b.nrows() * b.ncols() });
            }
        }
        let c = ChainComplex { labels, boundaries };
        c.check_boundary_squared()?;
        Ok(c)
    }

    pub fn top_degree(&self) -> usize {
        self.labels.len().saturating_sub(1)
    }

    pub fn rank(&self, k: usize) -> usize {
        self.labels.get(k).map_or(0, |l| l.len())
    }

    /// `∂_k`, with zero-size matrices outside the stored range.
    pub fn boundary(&self, k: usize) -> IntMatrix {
        if k < self.boundaries.len() {
            self.boundaries[k].clone()
        } else {
            IntMatrix::zeros(self.rank(k.wrapping_sub(1)), self.rank(k))
        }
    }

    /// `∂_{k-1} ∂_k = 0` for every `k`; the first failing degree is reported.
    pub fn check_boundary_squared(&self) -> Result<()> {
        for k in 2..self.boundaries.len() {
            if mul_checked(&self.boundaries[k - 1], &self.boundaries[k])?.iter().any(|v| *v != 0) {
                return Err(Error::BoundarySquared(k));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "generators": self.labels,
            "boundaries": self.boundaries.iter().map(to_rows).collect::<Vec<_>>(),
        })
    }
}

/// `M_*(M, F, ρ)`: generators are critical points by index, boundary entries
/// are signed trajectory counts.
pub fn build_morse_complex(sys: &MorseSystem, cps: &[CriticalPoint], tol: &Tolerances) -> Result<ChainComplex> {
    let n = sys.dim();
    let labels: Vec<Vec<usize>> = (0..=n).map(|k| cps.iter().filter(|c| c.index == k).map(|c| c.id).collect()).collect();
    let mut boundaries = vec![IntMatrix::zeros(0, labels[0].len())];
    for k in 1..=n {
        let pairs: Vec<(usize, usize)> = (0..labels[k - 1].len()).flat_map(|i| (0..labels[k].len()).map(move |j| (i, j))).collect();
        let counts = pairs
            .par_iter()
            .map(|&(i, j)| count_trajectories(sys, cps, &cps[labels[k][j]], &cps[labels[k - 1][i]], tol))
            .collect::<Result<Vec<_>>>()?;
        let mut m = IntMatrix::zeros(labels[k - 1].len(), labels[k].len());
        for (&(i, j), c) in pairs.iter().zip(counts) {
            m[(i, j)] = c;
        }
        boundaries.push(m);
    }
    ChainComplex::new(labels, boundaries)
}

/// `U·A·V = D` with `U`, `V` unimodular and `D` diagonal, `dᵢ | dᵢ₊₁`.
#[derive(Debug, Clone)]
pub struct Snf {
    pub factors: Vec<i64>,
    pub d: IntMatrix,
    pub u: IntMatrix,
    pub u_inv: IntMatrix,
    pub v: IntMatrix,
    pub v_inv: IntMatrix,
}

impl Snf {
    pub fn rank(&self) -> usize {
        self.factors.len()
    }
}

struct Wide {
    rows: usize,
    cols: usize,
    a: Vec<Vec<i128>>,
}

impl Wide {
    fn identity(n: usize) -> Self {
        Wide { rows: n, cols: n, a: (0..n).map(|i| (0..n).map(|j| (i == j) as i128).collect()).collect() }
    }

    fn from(m: &IntMatrix) -> Self {
        Wide { rows: m.nrows(), cols: m.ncols(), a: (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)] as i128).collect()).collect() }
    }

    fn narrow(&self) -> Result<IntMatrix> {
        let mut out = IntMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(i, j)] = i64::try_from(self.a[i][j]).map_err(|_| Error::Overflow)?;
            }
        }
        Ok(out)
    }

    /// row_i += c·row_j
    fn add_row(&mut self, i: usize, j: usize, c: i128) -> Result<()> {
        for k in 0..self.cols {
            let t = self.a[j][k].checked_mul(c).ok_or(Error::Overflow)?;
            self.a[i][k] = self.a[i][k].checked_add(t).ok_or(Error::Overflow)?;
        }
        Ok(())
    }

    fn add_col(&mut self, i: usize, j: usize, c: i128) -> Result<()> {
        for k in 0..self.rows {
            let t = self.a[k][j].checked_mul(c).ok_or(Error::Overflow)?;
            self.a[k][i] = self.a[k][i].checked_add(t).ok_or(Error::Overflow)?;
        }
        Ok(())
    }

    fn swap_rows(&mut self, i: usize, j: usize) {
        self.a.swap(i, j);
    }

    fn swap_cols(&mut self, i: usize, j: usize) {
        for r in self.a.iter_mut() {
            r.swap(i, j);
        }
    }

    fn negate_row(&mut self, i: usize) {
        for v in self.a[i].iter_mut() {
            *v = -*v;
        }
    }
}

/// Tracks `U·A·V` together with both inverses.
struct Reducer {
    a: Wide,
    u: Wide,
    u_inv: Wide,
    v: Wide,
    v_inv: Wide,
}

impl Reducer {
    // row_i += c·row_j on A and U; U⁻¹ gets col_j -= c·col_i
    fn add_row(&mut self, i: usize, j: usize, c: i128) -> Result<()> {
        self.a.add_row(i, j, c)?;
        self.u.add_row(i, j, c)?;
        self.u_inv.add_col(j, i, -c)
    }

    fn add_col(&mut self, i: usize, j: usize, c: i128) -> Result<()> {
        self.a.add_col(i, j, c)?;
        self.v.add_col(i, j, c)?;
        self.v_inv.add_row(j, i, -c)
    }

    fn swap_rows(&mut self, i: usize, j: usize) {
        self.a.swap_rows(i, j);
        self.u.swap_rows(i, j);
        self.u_inv.swap_cols(i, j);
    }

    fn swap_cols(&mut self, i: usize, j: usize) {
        self.a.swap_cols(i, j);
        self.v.swap_cols(i, j);
        self.v_inv.swap_rows(i, j);
    }

    fn negate_row(&mut self, i: usize) {
        self.a.negate_row(i);
        self.u.negate_row(i);
        // U⁻¹ column i negated
        for r in self.u_inv.a.iter_mut() {
            r[i] = -r[i];
        }
    }
}

pub fn smith_normal_form(m: &IntMatrix) -> Result<Snf> {
    let (rows, cols) = (m.nrows(), m.ncols());
    let mut r = Reducer { a: Wide::from(m), u: Wide::identity(rows), u_inv: Wide::identity(rows), v: Wide::identity(cols), v_inv: Wide::identity(cols) };
    let mut t = 0;
    while t < rows.min(cols) {
        // smallest nonzero entry in the trailing block
        let mut best: Option<(usize, usize)> = None;
        for i in t..rows {
            for j in t..cols {
                let x = r.a.a[i][j];
                if x != 0 && best.is_none_or(|(bi, bj)| x.abs() < r.a.a[bi][bj].abs()) {
                    best = Some((i, j));
                }
            }
        }
        let Some((pi, pj)) = best else { break };
        r.swap_rows(t, pi);
        r.swap_cols(t, pj);
        loop {
            let p = r.a.a[t][t];
            let mut dirty = false;
            for i in t + 1..rows {
                let q = r.a.a[i][t].div_euclid(p);
                if q != 0 {
                    r.add_row(i, t, -q)?;
                }
                if r.a.a[i][t] != 0 {
                    dirty = true;
                }
            }
            for j in t + 1..cols {
                let q = r.a.a[t][j].div_euclid(p);
                if q != 0 {
                    r.add_col(j, t, -q)?;
                }
                if r.a.a[t][j] != 0 {
                    dirty = true;
                }
            }
            if dirty {
                // move the smallest remainder into the pivot and repeat
                let mut best = (t, t);
                for i in t..rows {
                    let x = r.a.a[i][t];
                    if x != 0 && x.abs() < r.a.a[best.0][best.1].abs() {
                        best = (i, t);
                    }
                }
                for j in t..cols {
                    let x = r.a.a[t][j];
                    if x != 0 && x.abs() < r.a.a[best.0][best.1].abs() {
                        best = (t, j);
                    }
                }
                r.swap_rows(t, best.0);
                r.swap_cols(t, best.1);
                continue;
            }
            // divisibility of the remaining block
            let p = r.a.a[t][t];
            let offender = (t + 1..rows).find(|&i| (t + 1..cols).any(|j| r.a.a[i][j] % p != 0));
            match offender {
                Some(i) => {
                    r.add_row(t, i, 1)?;
                }
                None => break,
            }
        }
        if r.a.a[t][t] < 0 {
            r.negate_row(t);
        }
        t += 1;
    }
    let d = r.a.narrow()?;
    let factors = (0..rows.min(cols)).map(|i| d[(i, i)]).filter(|x| *x != 0).collect();
    Ok(Snf { factors, d, u: r.u.narrow()?, u_inv: r.u_inv.narrow()?, v: r.v.narrow()?, v_inv: r.v_inv.narrow()? })
}

pub fn homology(c: &ChainComplex) -> Result<HomologySummary> {
    let top = c.top_degree();
    let mut ranks = vec![0; top + 2];
    for k in 1..=top {
        ranks[k] = smith_normal_form(&c.boundaries[k])?.rank();
    }
    let mut betti = Vec::with_capacity(top + 1);
    let mut torsion = Vec::with_capacity(top + 1);
    for k in 0..=top {
        let incoming = if k < top { Some(smith_normal_form(&c.boundaries[k + 1])?) } else { None };
        let r_in = incoming.as_ref().map_or(0, |s| s.rank());
        betti.push(c.rank(k) - ranks[k] - r_in);
        torsion.push(incoming.map_or(vec![], |s| s.factors.into_iter().filter(|f| *f > 1).collect()));
    }
    Ok(HomologySummary { betti, torsion })
}

pub fn dualize(c: &ChainComplex) -> CochainComplex {
    let top = c.top_degree();
    let coboundaries = (0..=top).map(|k| if k < top { c.boundaries[k + 1].transpose() } else { IntMatrix::zeros(0, c.rank(k)) }).collect();
    CochainComplex { labels: c.labels.clone(), coboundaries }
}

impl CochainComplex {
    pub fn check_delta_squared(&self) -> Result<()> {
        for k in 1..self.coboundaries.len() {
            if mul_checked(&self.coboundaries[k], &self.coboundaries[k - 1])?.iter().any(|v| *v != 0) {
                return Err(Error::BoundarySquared(k));
            }
        }
        Ok(())
    }

    /// Recover the chain complex (transposes again).
    pub fn dualize(&self) -> ChainComplex {
        let top = self.labels.len() - 1;
        let mut boundaries = vec![IntMatrix::zeros(0, self.labels[0].len())];
        for k in 1..=top {
            boundaries.push(self.coboundaries[k - 1].transpose());
        }
        ChainComplex { labels: self.labels.clone(), boundaries }
    }
}

/// Free part of one homology group: integer generators as chain columns and
/// the integer projection of cycles onto them.
#[derive(Debug, Clone, PartialEq)]
pub struct Presentation {
    /// `n × b`
    pub generators: IntMatrix,
    /// `b × n`, defined on cycles
    pub projection: IntMatrix,
    pub torsion: Vec<i64>,
}

/// Presentation of `ker d_out / im d_in` at a group of rank `n`.
pub fn presentation(n: usize, d_out: &IntMatrix, d_in: &IntMatrix) -> Result<Presentation> {
    let s_out = smith_normal_form(d_out)?;
    let r = s_out.rank();
    let z = n - r;
    // kernel basis: trailing columns of V; cycle coordinates: trailing rows of V⁻¹
    let kernel = s_out.v.columns(r, z).into_owned();
    let coords = s_out.v_inv.rows(r, z).into_owned();
    let b_in = mul_checked(&coords, d_in)?;
    let s_in = smith_normal_form(&b_in)?;
    let s = s_in.rank();
    let torsion = s_in.factors.iter().cloned().filter(|f| *f > 1).collect();
    let generators = mul_checked(&kernel, &s_in.u_inv)?.columns(s, z - s).into_owned();
    let projection = mul_checked(&s_in.u, &coords)?.rows(s, z - s).into_owned();
    Ok(Presentation { generators, projection, torsion })
}

pub fn homology_presentation(c: &ChainComplex, k: usize) -> Result<Presentation> {
    presentation(c.rank(k), &c.boundary(k), &c.boundary(k + 1))
}

pub fn cohomology_presentation(c: &CochainComplex, k: usize) -> Result<Presentation> {
    let n = c.labels[k].len();
    let d_out = c.coboundaries[k].clone();
    let d_in = if k == 0 { IntMatrix::zeros(n, 0) } else { c.coboundaries[k - 1].clone() };
    presentation(n, &d_out, &d_in)
}
