//! Small dense helpers shared by the numerical modules.

use nalgebra::{DMatrix, DVector};

/// Orthonormal basis (columns) of the column span of `a`.
pub fn orthonormal_columns(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    a.clone().qr().q().columns(0, a.ncols()).into_owned()
}

/// Smallest singular value; zero-sized matrices count as perfectly conditioned.
pub fn smallest_singular_value(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 1.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    sv.iter().cloned().fold(f64::INFINITY, f64::min)
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 1.0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Scale-free transversality margin: the smallest singular value of the
/// pairing between orthonormalized covector rows and orthonormalized vectors.
pub fn normalized_margin(coframe: &DMatrix<f64>, frame: &DMatrix<f64>) -> f64 {
    if coframe.nrows() == 0 && frame.ncols() == 0 {
        return 1.0;
    }
    let q_u = orthonormal_columns(frame);
    let q_c = orthonormal_columns(&coframe.transpose()).transpose();
    smallest_singular_value(&(q_c * q_u))
}

pub fn det(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().determinant()
}

pub fn columns_to_matrix(n: usize, cols: &[DVector<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

pub fn rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > rel_tol * max.max(1e-300)).count()
}

/// Wrap to the representative in (-1/2, 1/2].
pub fn wrap_half(x: f64) -> f64 {
    let mut y = x - x.round();
    if y <= -0.5 {
        y += 1.0;
    }
    y
}

pub fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}
