use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{rotation_matrix, Manifold, Point};
use crate::geometry::manifold_sphere as sphere;
use crate::{Error, Result};

/// `amplitude · sin 2π(frequency·θ + phase)` added to one output component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub component: usize,
    pub amplitude: f64,
    pub frequency: Vec<i64>,
    #[serde(default)]
    pub phase: f64,
}

/// Smooth maps between the built-in manifolds, with chart Jacobians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmoothMap {
    Identity,
    /// `θ ↦ Aθ + c + waves` from `T^n` to `T^m` (`A` is `m × n`, integer).
    TorusAffine {
        matrix: Vec<Vec<i64>>,
        shift: Vec<f64>,
        #[serde(default)]
        waves: Vec<Wave>,
    },
    /// Rotation of the 2-sphere by ZYZ Euler angles.
    SphereRotation { angles: [f64; 3] },
    /// `θ ↦ R·(cos 2πθ, sin 2πθ, height)/|·|`.
    CircleToSphere {
        #[serde(default)]
        rotation: [f64; 3],
        #[serde(default)]
        height: f64,
    },
    /// A fold of `T²` over the sphere: polar angle `π(1 − cos 2πθ₂)/2`,
    /// azimuth `2πθ₁ + twist·sin 2πθ₂`, then rotated.
    TorusToSphere {
        #[serde(default)]
        rotation: [f64; 3],
        #[serde(default)]
        twist: f64,
    },
    /// Every point goes to `point` (coordinates in `chart` of the target).
    Constant {
        point: Vec<f64>,
        #[serde(default)]
        chart: usize,
    },
    /// `second ∘ first`, through the intermediate manifold `mid`.
    Composite { first: Box<SmoothMap>, second: Box<SmoothMap>, mid: Manifold },
}

fn invalid(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

/// Ambient vector (any nonzero length) and its `3 × n` derivative, pushed to the sphere.
fn to_sphere(x: &Vector3<f64>, dx: &DMatrix<f64>) -> Result<(Point, DMatrix<f64>)> {
    let r = x.norm();
    if !(r > 1e-12) {
        return Err(invalid("map hits the origin of R^3".into()));
    }
    let xh = x / r;
    let q = Manifold::sphere_point(x);
    let dp = sphere::d_project(q.chart, &xh);
    let tangent = (Matrix3::identity() - xh * xh.transpose()) / r;
    let m = dp * tangent;
    let m = DMatrix::from_fn(2, 3, |i, j| m[(i, j)]);
    Ok((q, m * dx))
}

fn from_sphere(p: &Point) -> (Vector3<f64>, DMatrix<f64>) {
    let u = Vector2::new(p.coords[0], p.coords[1]);
    let d = sphere::d_embed(p.chart, &u);
    (sphere::embed(p.chart, &u), DMatrix::from_fn(3, 2, |i, j| d[(i, j)]))
}

fn rot(angles: [f64; 3]) -> DMatrix<f64> {
    let r = rotation_matrix(angles);
    DMatrix::from_fn(3, 3, |i, j| r[(i, j)])
}

impl SmoothMap {
    pub fn compose(first: SmoothMap, second: SmoothMap, mid: Manifold) -> SmoothMap {
        SmoothMap::Composite { first: Box::new(first), second: Box::new(second), mid }
    }

    /// Check that the map is defined from `src` to `dst`.
    pub fn check(&self, src: &Manifold, dst: &Manifold) -> Result<()> {
        let torus = |m: &Manifold| match m {
            Manifold::Torus { n } => Some(*n),
            _ => None,
        };
        match self {
            SmoothMap::Identity => {
                if src != dst {
                    return Err(invalid(format!("identity from {} to {}", src.describe(), dst.describe())));
                }
            }
            SmoothMap::TorusAffine { matrix, shift, waves } => {
                let (Some(n), Some(m)) = (torus(src), torus(dst)) else {
                    return Err(invalid("torus_affine needs tori on both sides".into()));
                };
                if matrix.len() != m || matrix.iter().any(|r| r.len() != n) || shift.len() != m {
                    return Err(invalid(format!("torus_affine shape must be {m}x{n} with {m} shifts")));
                }
                for w in waves {
                    if w.component >= m || w.frequency.len() != n || !w.amplitude.is_finite() {
                        return Err(invalid("malformed wave".into()));
                    }
                }
                if shift.iter().any(|s| !s.is_finite()) {
                    return Err(invalid("non-finite shift".into()));
                }
            }
            SmoothMap::SphereRotation { .. } => {
                if *src != Manifold::Sphere || *dst != Manifold::Sphere {
                    return Err(invalid("sphere_rotation maps S2 to S2".into()));
                }
            }
            SmoothMap::CircleToSphere { .. } => {
                if torus(src) != Some(1) || *dst != Manifold::Sphere {
                    return Err(invalid("circle_to_sphere maps S1 to S2".into()));
                }
            }
            SmoothMap::TorusToSphere { .. } => {
                if torus(src) != Some(2) || *dst != Manifold::Sphere {
                    return Err(invalid("torus_to_sphere maps T2 to S2".into()));
                }
            }
            SmoothMap::Constant { point, chart } => {
                if !dst.contains(&Point::new(*chart, point.clone())) {
                    return Err(invalid(format!("constant value {point:?} is not a point of {}", dst.describe())));
                }
            }
            SmoothMap::Composite { first, second, mid } => {
                first.check(src, mid)?;
                second.check(mid, dst)?;
            }
        }
        Ok(())
    }

    /// Image of `p` and the Jacobian (`dim dst × dim src`) in the charts of `p` and the image.
    pub fn eval(&self, src: &Manifold, dst: &Manifold, p: &Point) -> Result<(Point, DMatrix<f64>)> {
        let n = src.dim();
        match self {
            SmoothMap::Identity => Ok((p.clone(), DMatrix::identity(n, n))),
            SmoothMap::TorusAffine { matrix, shift, waves } => {
                let m = matrix.len();
                let a = DMatrix::from_fn(m, n, |i, j| matrix[i][j] as f64);
                let mut y = &a * &p.coords;
                let mut jac = a;
                for i in 0..m {
                    y[i] += shift[i];
                }
                for w in waves {
                    let phase: f64 = w.frequency.iter().zip(p.coords.iter()).map(|(f, t)| *f as f64 * t).sum::<f64>() + w.phase;
                    y[w.component] += w.amplitude * (2.0 * PI * phase).sin();
                    let c = w.amplitude * 2.0 * PI * (2.0 * PI * phase).cos();
                    for j in 0..n {
                        jac[(w.component, j)] += c * w.frequency[j] as f64;
                    }
                }
                let mut q = Point { chart: 0, coords: y };
                dst.normalize(&mut q);
                Ok((q, jac))
            }
            SmoothMap::SphereRotation { angles } => {
                let (x, dx) = from_sphere(p);
                let r = rot(*angles);
                let rx = &r * DMatrix::from_column_slice(3, 1, x.as_slice());
                to_sphere(&Vector3::new(rx[0], rx[1], rx[2]), &(r * dx))
            }
            SmoothMap::CircleToSphere { rotation, height } => {
                let a = 2.0 * PI * p.coords[0];
                let r = rot(*rotation);
                let x = &r * DMatrix::from_column_slice(3, 1, &[a.cos(), a.sin(), *height]);
                let dx = &r * DMatrix::from_column_slice(3, 1, &[-2.0 * PI * a.sin(), 2.0 * PI * a.cos(), 0.0]);
                to_sphere(&Vector3::new(x[0], x[1], x[2]), &dx)
            }
            SmoothMap::TorusToSphere { rotation, twist } => {
                let (t1, t2) = (p.coords[0], p.coords[1]);
                let theta = 0.5 * PI * (1.0 - (2.0 * PI * t2).cos());
                let dtheta = PI * PI * (2.0 * PI * t2).sin();
                let phi = 2.0 * PI * t1 + twist * (2.0 * PI * t2).sin();
                let dphi2 = twist * 2.0 * PI * (2.0 * PI * t2).cos();
                let (st, ct, sp, cp) = (theta.sin(), theta.cos(), phi.sin(), phi.cos());
                let x = [st * cp, st * sp, ct];
                let d_phi = [-st * sp, st * cp, 0.0];
                let d_theta = [ct * cp, ct * sp, -st];
                let mut dx = DMatrix::zeros(3, 2);
                for i in 0..3 {
                    dx[(i, 0)] = 2.0 * PI * d_phi[i];
                    dx[(i, 1)] = dtheta * d_theta[i] + dphi2 * d_phi[i];
                }
                let r = rot(*rotation);
                let rx = &r * DMatrix::from_column_slice(3, 1, &x);
                to_sphere(&Vector3::new(rx[0], rx[1], rx[2]), &(r * dx))
            }
            SmoothMap::Constant { point, chart } => {
                let mut q = Point::new(*chart, point.clone());
                dst.normalize(&mut q);
                Ok((q, DMatrix::zeros(dst.dim(), n)))
            }
            SmoothMap::Composite { first, second, mid } => {
                let (q, j1) = first.eval(src, mid, p)?;
                let (r, j2) = second.eval(mid, dst, &q)?;
                Ok((r, j2 * j1))
            }
        }
    }

    pub fn apply(&self, src: &Manifold, dst: &Manifold, p: &Point) -> Result<Point> {
        Ok(self.eval(src, dst, p)?.0)
    }
}
