use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::Serialize;
use std::f64::consts::PI;

use super::manifold::{block_diag, sphere, Manifold, Point};

/// Value, coordinate differential and coordinate second derivatives of a
/// function at a point, in the chart of that point.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: f64,
    pub differential: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ScalarField {
    /// `Σ c_i cos 2π(θ_i - a_i)` on a torus chart.
    TorusCos { amplitudes: Vec<f64>, offsets: Vec<f64> },
    /// Restriction of `b·X + Xᵀ Q X` to the unit sphere.
    SphereQuadratic { linear: [f64; 3], quadratic: [[f64; 3]; 3] },
    /// `F_a(a) + F_b(b)` on a product.
    Sum(Box<ScalarField>, Box<ScalarField>),
}

impl ScalarField {
    pub fn jet(&self, manifold: &Manifold, p: &Point) -> Jet {
        match (self, manifold) {
            (ScalarField::TorusCos { amplitudes, offsets }, Manifold::Torus { n }) => {
                let mut value = 0.0;
                let mut differential = DVector::zeros(*n);
                let mut hessian = DMatrix::zeros(*n, *n);
                for i in 0..*n {
                    let arg = 2.0 * PI * (p.coords[i] - offsets[i]);
                    let c = amplitudes[i];
                    value += c * arg.cos();
                    differential[i] = -2.0 * PI * c * arg.sin();
                    hessian[(i, i)] = -4.0 * PI * PI * c * arg.cos();
                }
                Jet { value, differential, hessian }
            }
            (ScalarField::SphereQuadratic { linear, quadratic }, Manifold::Sphere) => {
                let b = Vector3::from_row_slice(linear);
                let q = Matrix3::from_fn(|i, j| quadratic[i][j]);
                let u = Vector2::new(p.coords[0], p.coords[1]);
                let x = sphere::embed(p.chart, &u);
                let dx = sphere::d_embed(p.chart, &u);
                let d2x = sphere::d2_embed(p.chart, &u);
                let value = b.dot(&x) + x.dot(&(q * x));
                let grad_a = b + (q + q.transpose()) * x;
                let hess_a = q + q.transpose();
                let diff = dx.transpose() * grad_a;
                let mut hess = dx.transpose() * hess_a * dx;
                for i in 0..2 {
                    for j in 0..2 {
                        for a in 0..3 {
                            hess[(i, j)] += grad_a[a] * d2x[a][i][j];
                        }
                    }
                }
                Jet {
                    value,
                    differential: DVector::from_vec(vec![diff[0], diff[1]]),
                    hessian: DMatrix::from_fn(2, 2, |i, j| hess[(i, j)]),
                }
            }
            (ScalarField::Sum(fa, fb), Manifold::Product(ma, mb)) => {
                let (pa, pb) = manifold.split(p);
                let ja = fa.jet(ma, &pa);
                let jb = fb.jet(mb, &pb);
                let mut differential = DVector::zeros(manifold.dim());
                differential.rows_mut(0, ma.dim()).copy_from(&ja.differential);
                differential.rows_mut(ma.dim(), mb.dim()).copy_from(&jb.differential);
                Jet { value: ja.value + jb.value, differential, hessian: block_diag(&ja.hessian, &jb.hessian) }
            }
            _ => panic!("scalar field does not match manifold {}", manifold.describe()),
        }
    }

    pub fn value(&self, manifold: &Manifold, p: &Point) -> f64 {
        match (self, manifold) {
            (ScalarField::TorusCos { amplitudes, offsets }, Manifold::Torus { n }) => {
                (0..*n).map(|i| amplitudes[i] * (2.0 * PI * (p.coords[i] - offsets[i])).cos()).sum()
            }
            (ScalarField::SphereQuadratic { linear, quadratic }, Manifold::Sphere) => {
                let x = manifold.embed(p).unwrap();
                let b = Vector3::from_row_slice(linear);
                let q = Matrix3::from_fn(|i, j| quadratic[i][j]);
                b.dot(&x) + x.dot(&(q * x))
            }
            (ScalarField::Sum(fa, fb), Manifold::Product(ma, mb)) => {
                let (pa, pb) = manifold.split(p);
                fa.value(ma, &pa) + fb.value(mb, &pb)
            }
            _ => panic!("scalar field does not match manifold {}", manifold.describe()),
        }
    }
}
