//! Exterior algebra on `R^n`: wedge products, the determinant pairing between
//! `Λ^k V*` and `Λ^k V`, the contraction `⌢ : Λ^l V ⊗ Λ^k V* → Λ^{l-k} V`, and
//! the orientation / coorientation bookkeeping used for intersection signs.
//!
//! Basis elements of `Λ^k` are indexed by strictly increasing index subsets
//! in lexicographic order. The same type stores forms (elements of `Λ^k V*`)
//! in the dual basis `e*_I`, so that `det_pair(e*_I, e_J) = δ_IJ`.

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::{Error, Result};

/// Lexicographically ordered `k`-subsets of `{0, .., n-1}`.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut r: usize = 1;
    for i in 0..k {
        r = r * (n - i) / (i + 1);
    }
    r
}

/// Position of a sorted subset in the lexicographic enumeration.
fn subset_rank(n: usize, subset: &[usize]) -> usize {
    let k = subset.len();
    let mut rank = 0;
    let mut prev: usize = 0;
    for (pos, &s) in subset.iter().enumerate() {
        let start = if pos == 0 { 0 } else { prev + 1 };
        for skipped in start..s {
            rank += binomial(n - skipped - 1, k - pos - 1);
        }
        prev = s;
    }
    rank
}

#[derive(Debug, Clone, PartialEq)]
pub struct Multivector {
    ambient_dim: usize,
    degree: usize,
    coeffs: Vec<f64>,
}

impl Multivector {
    pub fn zero(ambient_dim: usize, degree: usize) -> Result<Self> {
        if degree > ambient_dim {
            return Err(Error::DegreeOverflow(degree, ambient_dim));
        }
        Ok(Multivector { ambient_dim, degree, coeffs: vec![0.0; binomial(ambient_dim, degree)] })
    }

    pub fn from_coeffs(ambient_dim: usize, degree: usize, coeffs: Vec<f64>) -> Result<Self> {
        if degree > ambient_dim {
            return Err(Error::DegreeOverflow(degree, ambient_dim));
        }
        let expected = binomial(ambient_dim, degree);
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch { expected, got: coeffs.len() });
        }
        Ok(Multivector { ambient_dim, degree, coeffs })
    }

    pub fn scalar(ambient_dim: usize, value: f64) -> Self {
        Multivector { ambient_dim, degree: 0, coeffs: vec![value] }
    }

    /// `e_{i_1} ∧ .. ∧ e_{i_k}` for a strictly increasing index list.
    pub fn basis(ambient_dim: usize, subset: &[usize]) -> Result<Self> {
        let mut m = Multivector::zero(ambient_dim, subset.len())?;
        if subset.windows(2).any(|w| w[0] >= w[1]) || subset.iter().any(|&i| i >= ambient_dim) {
            return Err(Error::InvalidParameter(format!("basis subset {subset:?} not increasing in 0..{ambient_dim}")));
        }
        m.coeffs[subset_rank(ambient_dim, subset)] = 1.0;
        Ok(m)
    }

    pub fn vector(v: &DVector<f64>) -> Self {
        Multivector { ambient_dim: v.len(), degree: 1, coeffs: v.iter().cloned().collect() }
    }

    /// Wedge of the given vectors in order; the empty list gives the scalar 1.
    pub fn from_vectors(ambient_dim: usize, vectors: &[DVector<f64>]) -> Result<Self> {
        let mut acc = Multivector::scalar(ambient_dim, 1.0);
        for v in vectors {
            if v.len() != ambient_dim {
                return Err(Error::DimensionMismatch { expected: ambient_dim, got: v.len() });
            }
            acc = wedge(&acc, &Multivector::vector(v))?;
        }
        Ok(acc)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, subset: &[usize]) -> f64 {
        if subset.len() != self.degree {
            return 0.0;
        }
        self.coeffs[subset_rank(self.ambient_dim, subset)]
    }

    pub fn scale(&self, s: f64) -> Self {
        Multivector { coeffs: self.coeffs.iter().map(|c| c * s).collect(), ..self.clone() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.ambient_dim != other.ambient_dim {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim, got: other.ambient_dim });
        }
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch(self.degree, other.degree));
        }
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        Ok(Multivector { coeffs, ..self.clone() })
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Sign of the shuffle merging two disjoint sorted subsets, or `None` when
/// they overlap.
fn merge_sign(a: &[usize], b: &[usize]) -> Option<(f64, Vec<usize>)> {
    let mut inversions = 0usize;
    for &x in a {
        for &y in b {
            if x == y {
                return None;
            }
            if x > y {
                inversions += 1;
            }
        }
    }
    let mut merged: Vec<usize> = a.iter().chain(b).cloned().collect();
    merged.sort_unstable();
    Some((if inversions % 2 == 0 { 1.0 } else { -1.0 }, merged))
}

pub fn wedge(a: &Multivector, b: &Multivector) -> Result<Multivector> {
    if a.ambient_dim != b.ambient_dim {
        return Err(Error::DimensionMismatch { expected: a.ambient_dim, got: b.ambient_dim });
    }
    let n = a.ambient_dim;
    let deg = a.degree + b.degree;
    if deg > n {
        return Err(Error::DegreeOverflow(deg, n));
    }
    let mut out = Multivector::zero(n, deg)?;
    let sa = subsets(n, a.degree);
    let sb = subsets(n, b.degree);
    for (i, ia) in sa.iter().enumerate() {
        let ca = a.coeffs[i];
        if ca == 0.0 {
            continue;
        }
        for (j, jb) in sb.iter().enumerate() {
            let cb = b.coeffs[j];
            if cb == 0.0 {
                continue;
            }
            if let Some((sign, merged)) = merge_sign(ia, jb) {
                out.coeffs[subset_rank(n, &merged)] += sign * ca * cb;
            }
        }
    }
    Ok(out)
}

/// The determinant pairing `Λ^k V* ⊗ Λ^k V → R`.
pub fn det_pair(c: &Multivector, o: &Multivector) -> Result<f64> {
    if c.ambient_dim != o.ambient_dim {
        return Err(Error::DimensionMismatch { expected: c.ambient_dim, got: o.ambient_dim });
    }
    if c.degree != o.degree {
        return Err(Error::DegreeMismatch(c.degree, o.degree));
    }
    Ok(c.coeffs.iter().zip(&o.coeffs).map(|(x, y)| x * y).sum())
}

/// `o ⌢ c`: the multivector `v` of degree `l - k` with
/// `det_pair(β, v) = det_pair(c ∧ β, o)` for every form `β` of degree `l - k`.
pub fn contract_form(o: &Multivector, c: &Multivector) -> Result<Multivector> {
    if o.ambient_dim != c.ambient_dim {
        return Err(Error::DimensionMismatch { expected: o.ambient_dim, got: c.ambient_dim });
    }
    if c.degree > o.degree {
        return Err(Error::DegreeOverflow(c.degree, o.degree));
    }
    let n = o.ambient_dim;
    let deg = o.degree - c.degree;
    let mut out = Multivector::zero(n, deg)?;
    for (j, subset) in subsets(n, deg).iter().enumerate() {
        let beta = Multivector::basis(n, subset)?;
        out.coeffs[j] = det_pair(&wedge(c, &beta)?, o)?;
    }
    Ok(out)
}

pub fn contract(o: &Multivector, c: &CovectorFrame) -> Result<Multivector> {
    if c.len() > o.degree {
        return Err(Error::DegreeOverflow(c.len(), o.degree));
    }
    contract_form(o, &c.to_multivector())
}

/// Ordered linearly independent vectors spanning an oriented subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientedFrame {
    matrix: DMatrix<f64>,
}

impl OrientedFrame {
    /// Columns of `matrix` are the frame vectors.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() > matrix.nrows() {
            return Err(Error::RankDeficient);
        }
        if matrix.ncols() > 0 && linalg::rank(&matrix, 1e-12) < matrix.ncols() {
            return Err(Error::RankDeficient);
        }
        Ok(OrientedFrame { matrix })
    }

    pub fn from_vectors(ambient_dim: usize, vectors: &[DVector<f64>]) -> Result<Self> {
        for v in vectors {
            if v.len() != ambient_dim {
                return Err(Error::DimensionMismatch { expected: ambient_dim, got: v.len() });
            }
        }
        OrientedFrame::new(linalg::columns_to_matrix(ambient_dim, vectors))
    }

    pub fn empty(ambient_dim: usize) -> Self {
        OrientedFrame { matrix: DMatrix::zeros(ambient_dim, 0) }
    }

    pub fn ambient_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.matrix.column(i).into_owned()
    }

    pub fn to_multivector(&self) -> Multivector {
        let vs: Vec<DVector<f64>> = (0..self.len()).map(|i| self.vector(i)).collect();
        Multivector::from_vectors(self.ambient_dim(), &vs).expect("frame dimensions checked at construction")
    }
}

/// Ordered linearly independent covectors representing a coorientation.
#[derive(Debug, Clone, PartialEq)]
pub struct CovectorFrame {
    /// One covector per row.
    matrix: DMatrix<f64>,
}

impl CovectorFrame {
    /// Rows of `matrix` are the covectors.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() > matrix.ncols() {
            return Err(Error::RankDeficient);
        }
        if matrix.nrows() > 0 && linalg::rank(&matrix, 1e-12) < matrix.nrows() {
            return Err(Error::RankDeficient);
        }
        Ok(CovectorFrame { matrix })
    }

    pub fn empty(ambient_dim: usize) -> Self {
        CovectorFrame { matrix: DMatrix::zeros(0, ambient_dim) }
    }

    pub fn ambient_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.nrows() == 0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Pull back through a linear map `j` (covectors become `α ∘ j`).
    pub fn pull_back(&self, j: &DMatrix<f64>) -> Result<Self> {
        CovectorFrame::new(&self.matrix * j)
    }

    pub fn stack(&self, other: &CovectorFrame) -> Result<Self> {
        if self.ambient_dim() != other.ambient_dim() {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim(), got: other.ambient_dim() });
        }
        let n = self.ambient_dim();
        let mut m = DMatrix::zeros(self.len() + other.len(), n);
        m.rows_mut(0, self.len()).copy_from(&self.matrix);
        m.rows_mut(self.len(), other.len()).copy_from(&other.matrix);
        CovectorFrame::new(m)
    }

    pub fn to_multivector(&self) -> Multivector {
        let vs: Vec<DVector<f64>> = (0..self.len()).map(|i| self.matrix.row(i).transpose()).collect();
        Multivector::from_vectors(self.ambient_dim(), &vs).expect("frame dimensions checked at construction")
    }
}

/// The coorientation of a complement `S` induced by an oriented `U` with
/// `U ⊕ S = V`: covectors annihilating `S` whose pairing with `u` is the identity.
pub fn induced_coorientation(u: &OrientedFrame, s: &[DVector<f64>]) -> Result<CovectorFrame> {
    let n = u.ambient_dim();
    if u.len() + s.len() != n {
        return Err(Error::NotABasis);
    }
    let mut basis = DMatrix::zeros(n, n);
    basis.columns_mut(0, u.len()).copy_from(u.matrix());
    for (j, v) in s.iter().enumerate() {
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        basis.set_column(u.len() + j, v);
    }
    if n > 0 && linalg::rank(&basis, 1e-12) < n {
        return Err(Error::NotABasis);
    }
    let inv = basis.try_inverse().ok_or(Error::NotABasis)?;
    CovectorFrame::new(inv.rows(0, u.len()).into_owned())
}

/// Evaluation matrix `[α_i(v_j)]`.
pub fn evaluation_matrix(u: &OrientedFrame, c: &CovectorFrame) -> Result<DMatrix<f64>> {
    if u.ambient_dim() != c.ambient_dim() {
        return Err(Error::DimensionMismatch { expected: u.ambient_dim(), got: c.ambient_dim() });
    }
    if u.len() != c.len() {
        return Err(Error::DegreeMismatch(u.len(), c.len()));
    }
    Ok(c.matrix() * u.matrix())
}

/// Sign of the zero-dimensional oriented intersection of `span(u)` with the
/// subspace cooriented by `c`. Fails when the scale-free margin is below `tau`.
pub fn intersection_sign(u: &OrientedFrame, c: &CovectorFrame, tau: f64) -> Result<i32> {
    let m = evaluation_matrix(u, c)?;
    if m.nrows() == 0 {
        return Ok(1);
    }
    let margin = linalg::normalized_margin(c.matrix(), u.matrix());
    if margin < tau {
        return Err(Error::Transversality { margin, threshold: tau });
    }
    Ok(if linalg::det(&m) > 0.0 { 1 } else { -1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    /// Leibniz expansion, independent of nalgebra's LU.
    fn leibniz(m: &[Vec<f64>]) -> f64 {
        let n = m.len();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        fn rec(m: &[Vec<f64>], perm: &mut Vec<usize>, k: usize, total: &mut f64) {
            let n = perm.len();
            if k == n {
                let mut inv = 0;
                for i in 0..n {
                    for j in i + 1..n {
                        if perm[i] > perm[j] {
                            inv += 1;
                        }
                    }
                }
                let sign = if inv % 2 == 0 { 1.0 } else { -1.0 };
                *total += sign * (0..n).map(|i| m[i][perm[i]]).product::<f64>();
                return;
            }
            for i in k..n {
                perm.swap(k, i);
                rec(m, perm, k + 1, total);
                perm.swap(k, i);
            }
        }
        rec(m, &mut perm, 0, &mut total);
        total
    }

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(subsets(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(subsets(4, 0), vec![Vec::<usize>::new()]);
        for n in 0..6 {
            for k in 0..=n {
                let s = subsets(n, k);
                assert_eq!(s.len(), binomial(n, k));
                for (i, sub) in s.iter().enumerate() {
                    assert_eq!(subset_rank(n, sub), i);
                }
            }
        }
    }

    #[test]
    fn wedge_basis_cases() {
        let e1 = Multivector::vector(&e(2, 0));
        let e2 = Multivector::vector(&e(2, 1));
        let w = wedge(&e1, &e2).unwrap();
        assert_eq!(w.coeffs(), &[1.0]);
        assert_eq!(wedge(&e1, &e1).unwrap().coeffs(), &[0.0]);

        let a = Multivector::vector(&DVector::from_vec(vec![1.0, 1.0, 0.0]));
        let b = Multivector::vector(&e(3, 1));
        let w = wedge(&a, &b).unwrap();
        // (e1 + e2) ∧ e2 = e1 ∧ e2
        assert_eq!(w.coeff(&[0, 1]), 1.0);
        assert_eq!(w.coeff(&[0, 2]), 0.0);
        assert_eq!(w.coeff(&[1, 2]), 0.0);
    }

    #[test]
    fn wedge_errors() {
        let a = Multivector::vector(&e(2, 0));
        let b = Multivector::vector(&e(3, 0));
        assert!(matches!(wedge(&a, &b), Err(Error::DimensionMismatch { .. })));
        let top = Multivector::basis(2, &[0, 1]).unwrap();
        assert!(matches!(wedge(&top, &a), Err(Error::DegreeOverflow(3, 2))));
    }

    #[test]
    fn det_pair_cases() {
        let c = Multivector::from_vectors(2, &[e(2, 0), e(2, 1)]).unwrap();
        let o = Multivector::from_vectors(2, &[e(2, 0), e(2, 1)]).unwrap();
        assert_eq!(det_pair(&c, &o).unwrap(), 1.0);
        let o = Multivector::from_vectors(2, &[e(2, 1), e(2, 0)]).unwrap();
        assert_eq!(det_pair(&c, &o).unwrap(), -1.0);
        let bad = Multivector::scalar(2, 1.0);
        assert!(matches!(det_pair(&bad, &o), Err(Error::DegreeMismatch(0, 2))));
    }

    #[test]
    fn det_pair_matches_leibniz_for_decomposables() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for k in 1..=4 {
            for _ in 0..20 {
                let alphas: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0))).collect();
                let vs: Vec<DVector<f64>> = (0..k).map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0))).collect();
                let m: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| alphas[i].dot(&vs[j])).collect()).collect();
                let c = Multivector::from_vectors(4, &alphas).unwrap();
                let o = Multivector::from_vectors(4, &vs).unwrap();
                assert!((det_pair(&c, &o).unwrap() - leibniz(&m)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn contract_cases() {
        let o = Multivector::from_vectors(2, &[e(2, 0), e(2, 1)]).unwrap();
        let c = CovectorFrame::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0])).unwrap();
        let v = contract(&o, &c).unwrap();
        assert_eq!(v.degree(), 1);
        assert_eq!(v.coeffs(), &[0.0, 1.0]);

        let empty = CovectorFrame::empty(2);
        assert_eq!(contract(&o, &empty).unwrap(), o);

        let o3 = Multivector::from_vectors(3, &[e(3, 0), e(3, 1), e(3, 2)]).unwrap();
        let c = CovectorFrame::new(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0])).unwrap();
        let v = contract(&o3, &c).unwrap();
        assert_eq!(v.coeffs(), &[0.0, 0.0, 1.0]);

        let line = Multivector::vector(&e(3, 0));
        assert!(matches!(contract(&line, &c), Err(Error::DegreeOverflow(2, 1))));
    }

    #[test]
    fn contract_defining_identity_exhaustive() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in 1..=4 {
            for l in 0..=n {
                for k in 0..=l {
                    let o = Multivector::from_coeffs(n, l, (0..binomial(n, l)).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
                    let cm = DMatrix::from_fn(k, n, |_, _| rng.gen_range(-1.0..1.0));
                    let c = CovectorFrame::new(cm).unwrap();
                    let v = contract(&o, &c).unwrap();
                    for subset in subsets(n, l - k) {
                        let beta = Multivector::basis(n, &subset).unwrap();
                        let lhs = det_pair(&beta, &v).unwrap();
                        let rhs = det_pair(&wedge(&c.to_multivector(), &beta).unwrap(), &o).unwrap();
                        assert!((lhs - rhs).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn iterated_contraction_is_stacked_determinant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let u = DMatrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let c1 = CovectorFrame::new(DMatrix::from_fn(1, 3, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
            let c2 = CovectorFrame::new(DMatrix::from_fn(2, 3, |_, _| rng.gen_range(-1.0..1.0))).unwrap();
            let o = OrientedFrame::new(u.clone()).unwrap().to_multivector();
            let step = contract(&contract(&o, &c1).unwrap(), &c2).unwrap();
            let stacked = c1.stack(&c2).unwrap();
            let d = (stacked.matrix() * &u).determinant();
            assert!((step.coeffs()[0] - d).abs() < 1e-12);
        }
    }

    #[test]
    fn induced_coorientation_cases() {
        let u = OrientedFrame::from_vectors(2, &[e(2, 0)]).unwrap();
        let c = induced_coorientation(&u, &[e(2, 1)]).unwrap();
        assert_eq!(c.matrix().as_slice(), &[1.0, 0.0]);

        let u = OrientedFrame::from_vectors(2, &[e(2, 1)]).unwrap();
        let c = induced_coorientation(&u, &[e(2, 0)]).unwrap();
        assert_eq!(c.matrix().row(0).iter().cloned().collect::<Vec<_>>(), vec![0.0, 1.0]);

        let u = OrientedFrame::from_vectors(2, &[DVector::from_vec(vec![1.0, 1.0])]).unwrap();
        let c = induced_coorientation(&u, &[e(2, 1)]).unwrap();
        // α(e2) = 0, α(e1 + e2) = 1  =>  α = e1*
        assert!((c.matrix()[(0, 0)] - 1.0).abs() < 1e-14);
        assert!(c.matrix()[(0, 1)].abs() < 1e-14);

        let u = OrientedFrame::from_vectors(2, &[e(2, 0)]).unwrap();
        assert!(matches!(induced_coorientation(&u, &[e(2, 0)]), Err(Error::NotABasis)));
    }

    #[test]
    fn intersection_sign_cases() {
        let u = OrientedFrame::from_vectors(1, &[e(1, 0)]).unwrap();
        let c = CovectorFrame::new(DMatrix::from_row_slice(1, 1, &[1.0])).unwrap();
        assert_eq!(intersection_sign(&u, &c, 1e-6).unwrap(), 1);
        let c = CovectorFrame::new(DMatrix::from_row_slice(1, 1, &[-1.0])).unwrap();
        assert_eq!(intersection_sign(&u, &c, 1e-6).unwrap(), -1);

        let u = OrientedFrame::from_vectors(2, &[e(2, 0), e(2, 1)]).unwrap();
        let c = CovectorFrame::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
        assert_eq!(intersection_sign(&u, &c, 1e-6).unwrap(), -1);

        assert_eq!(intersection_sign(&OrientedFrame::empty(2), &CovectorFrame::empty(2), 1e-6).unwrap(), 1);

        let u = OrientedFrame::from_vectors(2, &[e(2, 0)]).unwrap();
        let c = CovectorFrame::new(DMatrix::from_row_slice(1, 2, &[1e-9, 1.0])).unwrap();
        match intersection_sign(&u, &c, 1e-6) {
            Err(Error::Transversality { margin, .. }) => assert!(margin < 1e-6),
            other => panic!("expected transversality error, got {other:?}"),
        }
    }

    fn random_multivector(n: usize, k: usize, vals: &[f64]) -> Multivector {
        let len = binomial(n, k);
        Multivector::from_coeffs(n, k, vals.iter().cycle().take(len).cloned().collect()).unwrap()
    }

    proptest! {
        #[test]
        fn wedge_graded_anticommutative(n in 1usize..=5, i in 0usize..=5, j in 0usize..=5,
                                        va in proptest::collection::vec(-1.0f64..1.0, 10),
                                        vb in proptest::collection::vec(-1.0f64..1.0, 10)) {
            prop_assume!(i + j <= n);
            let a = random_multivector(n, i, &va);
            let b = random_multivector(n, j, &vb);
            let ab = wedge(&a, &b).unwrap();
            let ba = wedge(&b, &a).unwrap();
            let sign = if (i * j) % 2 == 0 { 1.0 } else { -1.0 };
            for (x, y) in ab.coeffs().iter().zip(ba.coeffs()) {
                prop_assert!((x - sign * y).abs() < 1e-12);
            }
        }

        #[test]
        fn wedge_associative(n in 1usize..=5, i in 0usize..=2, j in 0usize..=2, k in 0usize..=2,
                             va in proptest::collection::vec(-1.0f64..1.0, 10),
                             vb in proptest::collection::vec(-1.0f64..1.0, 10),
                             vc in proptest::collection::vec(-1.0f64..1.0, 10)) {
            prop_assume!(i + j + k <= n);
            let a = random_multivector(n, i, &va);
            let b = random_multivector(n, j, &vb);
            let c = random_multivector(n, k, &vc);
            let l = wedge(&wedge(&a, &b).unwrap(), &c).unwrap();
            let r = wedge(&a, &wedge(&b, &c).unwrap()).unwrap();
            for (x, y) in l.coeffs().iter().zip(r.coeffs()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn sign_invariant_under_rescaling_and_flips_under_swap(
            vals in proptest::collection::vec(-1.0f64..1.0, 18), scale in 0.01f64..100.0, col in 0usize..3) {
            let u = DMatrix::from_row_slice(3, 3, &vals[0..9]);
            let c = DMatrix::from_row_slice(3, 3, &vals[9..18]);
            prop_assume!(crate::linalg::normalized_margin(&c, &u) > 1e-3);
            let cf = CovectorFrame::new(c).unwrap();
            let s0 = intersection_sign(&OrientedFrame::new(u.clone()).unwrap(), &cf, 1e-6).unwrap();
            let mut scaled = u.clone();
            scaled.column_mut(col).scale_mut(scale);
            prop_assert_eq!(intersection_sign(&OrientedFrame::new(scaled).unwrap(), &cf, 1e-6).unwrap(), s0);
            let mut swapped = u.clone();
            swapped.swap_columns(col, (col + 1) % 3);
            prop_assert_eq!(intersection_sign(&OrientedFrame::new(swapped).unwrap(), &cf, 1e-6).unwrap(), -s0);
        }

        #[test]
        fn induced_coorientation_is_positive(vals in proptest::collection::vec(-1.0f64..1.0, 16), k in 0usize..=4) {
            let b = DMatrix::from_row_slice(4, 4, &vals);
            prop_assume!(crate::linalg::smallest_singular_value(&b) > 1e-3);
            let u = OrientedFrame::new(b.columns(0, k).into_owned()).unwrap();
            let s: Vec<DVector<f64>> = (k..4).map(|j| b.column(j).into_owned()).collect();
            let c = induced_coorientation(&u, &s).unwrap();
            prop_assert_eq!(intersection_sign(&u, &c, 1e-9).unwrap(), 1);
            for v in &s {
                prop_assert!((c.matrix() * v).amax() < 1e-9);
            }
        }
    }
}
