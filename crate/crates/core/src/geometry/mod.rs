//! Closed manifolds, metrics and the built-in Morse function families.

mod field;
mod manifold;

pub use field::{Jet, ScalarField};
pub use manifold::{Manifold, Point};
pub(crate) use manifold::sphere as manifold_sphere;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Names a built-in system and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SystemSpec {
    /// `cos 2π(θ - offset)` on the circle.
    Circle {
        #[serde(default)]
        offset: f64,
    },
    /// `Σ c_i cos 2π(θ_i - a_i)` on the flat `n`-torus, `n = offsets.len()`.
    Torus {
        offsets: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        amplitudes: Option<Vec<f64>>,
    },
    /// Height `z` on the round sphere, after rotating by ZYZ Euler angles.
    SphereHeight {
        #[serde(default)]
        rotation: [f64; 3],
    },
    /// `z + λ x²` on the round sphere, after rotating by ZYZ Euler angles.
    Peanut {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        rotation: [f64; 3],
    },
    /// Product manifold with the sum function and the product metric.
    Product { factors: Vec<SystemSpec> },
}

fn default_lambda() -> f64 {
    1.0
}

impl SystemSpec {
    pub fn torus2(a: f64, b: f64) -> Self {
        SystemSpec::Torus { offsets: vec![a, b], amplitudes: None }
    }

    pub fn circle(a: f64) -> Self {
        SystemSpec::Circle { offset: a }
    }

    pub fn peanut(lambda: f64) -> Self {
        SystemSpec::Peanut { lambda, rotation: [0.0; 3] }
    }

    pub fn sphere_height() -> Self {
        SystemSpec::SphereHeight { rotation: [0.0; 3] }
    }
}

/// A manifold with a Morse function and a metric: the triple (M, F, ρ).
/// The metric is the one carried by the manifold model (flat on tori, round
/// on the sphere, product on products).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MorseSystem {
    pub spec: SystemSpec,
    pub manifold: Manifold,
    pub field: ScalarField,
}

/// ZYZ rotation matrix.
pub fn rotation_matrix(angles: [f64; 3]) -> Matrix3<f64> {
    let rz = |a: f64| Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0);
    let ry = |a: f64| Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos());
    rz(angles[0]) * ry(angles[1]) * rz(angles[2])
}

fn check_finite(name: &str, vals: &[f64]) -> Result<()> {
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("{name} must be finite")));
    }
    Ok(())
}

fn build(spec: &SystemSpec) -> Result<(Manifold, ScalarField)> {
    match spec {
        SystemSpec::Circle { offset } => {
            check_finite("offset", &[*offset])?;
            Ok((Manifold::Torus { n: 1 }, ScalarField::TorusCos { amplitudes: vec![1.0], offsets: vec![*offset] }))
        }
        SystemSpec::Torus { offsets, amplitudes } => {
            let n = offsets.len();
            if !(1..=4).contains(&n) {
                return Err(Error::InvalidParameter(format!("torus dimension {n} outside 1..=4")));
            }
            check_finite("offsets", offsets)?;
            let amplitudes = amplitudes.clone().unwrap_or_else(|| vec![1.0; n]);
            if amplitudes.len() != n {
                return Err(Error::InvalidParameter("amplitudes and offsets differ in length".into()));
            }
            check_finite("amplitudes", &amplitudes)?;
            if amplitudes.iter().any(|c| c.abs() < 1e-3) {
                return Err(Error::InvalidParameter("torus amplitudes must be bounded away from zero".into()));
            }
            Ok((Manifold::Torus { n }, ScalarField::TorusCos { amplitudes, offsets: offsets.clone() }))
        }
        SystemSpec::SphereHeight { rotation } => {
            check_finite("rotation", rotation)?;
            let r = rotation_matrix(*rotation);
            let b = r.transpose() * Vector3::z();
            Ok((Manifold::Sphere, ScalarField::SphereQuadratic { linear: [b[0], b[1], b[2]], quadratic: [[0.0; 3]; 3] }))
        }
        SystemSpec::Peanut { lambda, rotation } => {
            check_finite("lambda", &[*lambda])?;
            check_finite("rotation", rotation)?;
            // λ = ±1/2 is where the poles degenerate; λ = 0 collapses to the height function.
            if (lambda.abs() - 0.5).abs() < 0.05 || lambda.abs() < 1e-3 {
                return Err(Error::InvalidParameter(format!("peanut lambda {lambda} lies in a degeneracy window")));
            }
            let r = rotation_matrix(*rotation);
            let b = r.transpose() * Vector3::z();
            let ex = r.transpose() * Vector3::x();
            let q = ex * ex.transpose() * *lambda;
            Ok((
                Manifold::Sphere,
                ScalarField::SphereQuadratic { linear: [b[0], b[1], b[2]], quadratic: [[q[(0, 0)], q[(0, 1)], q[(0, 2)]], [q[(1, 0)], q[(1, 1)], q[(1, 2)]], [q[(2, 0)], q[(2, 1)], q[(2, 2)]]] },
            ))
        }
        SystemSpec::Product { factors } => {
            if factors.len() < 2 {
                return Err(Error::InvalidParameter("a product needs at least two factors".into()));
            }
            let mut parts = factors.iter().map(build).collect::<Result<Vec<_>>>()?;
            let (mut m, mut f) = parts.pop().unwrap();
            while let Some((pm, pf)) = parts.pop() {
                m = Manifold::Product(Box::new(pm), Box::new(m));
                f = ScalarField::Sum(Box::new(pf), Box::new(f));
            }
            if m.dim() > 4 {
                return Err(Error::InvalidParameter(format!("dimension {} exceeds 4", m.dim())));
            }
            Ok((m, f))
        }
    }
}

/// Assemble a built-in system from its spec.
pub fn builtin_system(spec: &SystemSpec) -> Result<MorseSystem> {
    let (manifold, field) = build(spec)?;
    Ok(MorseSystem { spec: spec.clone(), manifold, field })
}

/// Parse a family name with a flat parameter list, e.g. `("torus", [0.0, 0.0])`.
pub fn system_from_name(name: &str, params: &[f64]) -> Result<MorseSystem> {
    let spec = match name {
        "circle" => SystemSpec::Circle { offset: params.first().copied().unwrap_or(0.0) },
        "torus" | "torus2" => SystemSpec::torus2(params.first().copied().unwrap_or(0.0), params.get(1).copied().unwrap_or(0.0)),
        "torus3" => SystemSpec::Torus { offsets: (0..3).map(|i| params.get(i).copied().unwrap_or(0.0)).collect(), amplitudes: None },
        "sphere_height" | "height" => SystemSpec::sphere_height(),
        "peanut" => SystemSpec::peanut(params.first().copied().unwrap_or(1.0)),
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    builtin_system(&spec)
}

impl MorseSystem {
    pub fn dim(&self) -> usize {
        self.manifold.dim()
    }

    pub fn value(&self, p: &Point) -> f64 {
        self.field.value(&self.manifold, p)
    }

    pub fn jet(&self, p: &Point) -> Jet {
        self.field.jet(&self.manifold, p)
    }

    fn check_point(&self, p: &Point) -> Result<()> {
        if !self.manifold.contains(p) {
            return Err(Error::InvalidPoint(format!("{:?} in chart {}", p.coords_vec(), p.chart)));
        }
        Ok(())
    }

    /// `∇_ρ F`: the inverse metric applied to the differential.
    pub fn gradient(&self, p: &Point) -> Result<DVector<f64>> {
        self.check_point(p)?;
        let jet = self.jet(p);
        let g = self.manifold.metric(p);
        Ok(g.cholesky().expect("metric is positive definite").solve(&jet.differential))
    }

    /// `|∇_ρ F|_ρ`.
    pub fn gradient_norm(&self, p: &Point) -> f64 {
        let jet = self.jet(p);
        let g = self.manifold.metric(p);
        let grad = g.cholesky().expect("metric is positive definite").solve(&jet.differential);
        jet.differential.dot(&grad).max(0.0).sqrt()
    }

    /// The flow field `-∇_ρ F` and its coordinate Jacobian.
    pub fn flow_field_with_jacobian(&self, p: &Point) -> (DVector<f64>, DMatrix<f64>) {
        let jet = self.jet(p);
        let chol = self.manifold.metric(p).cholesky().expect("metric is positive definite");
        let grad = chol.solve(&jet.differential);
        let mut a = -chol.solve(&jet.hessian);
        for (j, dg) in self.manifold.metric_derivatives(p).iter().enumerate() {
            if dg.iter().all(|x| *x == 0.0) {
                continue;
            }
            let col = chol.solve(&(dg * &grad));
            let mut cj = a.column_mut(j);
            cj += col;
        }
        (-grad, a)
    }

    pub fn flow_field(&self, p: &Point) -> DVector<f64> {
        let jet = self.jet(p);
        let chol = self.manifold.metric(p).cholesky().expect("metric is positive definite");
        -chol.solve(&jet.differential)
    }

    /// Coordinate Hessian at a numerically critical point.
    pub fn hessian(&self, p: &Point, crit_tol: f64) -> Result<DMatrix<f64>> {
        self.check_point(p)?;
        let norm = self.gradient_norm(p);
        if norm > crit_tol {
            return Err(Error::NotCritical(norm));
        }
        Ok(self.jet(p).hessian)
    }

    pub fn distance(&self, p: &Point, q: &Point) -> f64 {
        self.manifold.distance(p, q)
    }
}
