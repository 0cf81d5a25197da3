use nalgebra::{DMatrix, DVector, Matrix3x2, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{wrap_half, wrap_unit};

/// A point in chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub chart: usize,
    pub coords: DVector<f64>,
}

impl Point {
    pub fn new(chart: usize, coords: Vec<f64>) -> Self {
        Point { chart, coords: DVector::from_vec(coords) }
    }

    pub fn coords_vec(&self) -> Vec<f64> {
        self.coords.iter().cloned().collect()
    }
}

impl Serialize for Point {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Point", 2)?;
        st.serialize_field("chart", &self.chart)?;
        st.serialize_field("coords", &self.coords_vec())?;
        st.end()
    }
}

/// Closed manifolds with explicit atlases.
///
/// * `Torus { n }`: one periodic chart with coordinates in `[0, 1)^n`.
/// * `Sphere`: the unit sphere in `R^3` with two stereographic charts, both
///   compatible with the outward orientation. Chart 0 projects from the south
///   pole, chart 1 from the north pole (with `y` reflected).
/// * `Product(a, b)`: charts are pairs, id `ca * charts(b) + cb`, coordinates
///   concatenated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Manifold {
    Torus { n: usize },
    Sphere,
    Product(Box<Manifold>, Box<Manifold>),
}

/// Chart switch threshold on `|u|` for the stereographic charts.
const SPHERE_SWITCH: f64 = 1.5;
/// Half-width of the stereographic chart boxes.
const SPHERE_BOX: f64 = 3.0;

impl Manifold {
    pub fn dim(&self) -> usize {
        match self {
            Manifold::Torus { n } => *n,
            Manifold::Sphere => 2,
            Manifold::Product(a, b) => a.dim() + b.dim(),
        }
    }

    pub fn chart_count(&self) -> usize {
        match self {
            Manifold::Torus { .. } => 1,
            Manifold::Sphere => 2,
            Manifold::Product(a, b) => a.chart_count() * b.chart_count(),
        }
    }

    pub fn euler_characteristic(&self) -> i64 {
        match self {
            Manifold::Torus { .. } => 0,
            Manifold::Sphere => 2,
            Manifold::Product(a, b) => a.euler_characteristic() * b.euler_characteristic(),
        }
    }

    /// Betti numbers of the underlying manifold.
    pub fn betti_numbers(&self) -> Vec<usize> {
        match self {
            Manifold::Torus { n } => (0..=*n).map(|k| crate::exterior::binomial(*n, k)).collect(),
            Manifold::Sphere => vec![1, 0, 1],
            Manifold::Product(a, b) => {
                let (ba, bb) = (a.betti_numbers(), b.betti_numbers());
                let mut out = vec![0; ba.len() + bb.len() - 1];
                for (i, x) in ba.iter().enumerate() {
                    for (j, y) in bb.iter().enumerate() {
                        out[i + j] += x * y;
                    }
                }
                out
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Manifold::Torus { n: 1 } => "S1".into(),
            Manifold::Torus { n } => format!("T{n}"),
            Manifold::Sphere => "S2".into(),
            Manifold::Product(a, b) => format!("{}x{}", a.describe(), b.describe()),
        }
    }

    pub(crate) fn split(&self, p: &Point) -> (Point, Point) {
        match self {
            Manifold::Product(a, b) => {
                let nb = b.chart_count();
                let da = a.dim();
                let pa = Point { chart: p.chart / nb, coords: p.coords.rows(0, da).into_owned() };
                let pb = Point { chart: p.chart % nb, coords: p.coords.rows(da, b.dim()).into_owned() };
                (pa, pb)
            }
            _ => panic!("split called on a non-product manifold"),
        }
    }

    pub(crate) fn join(&self, pa: &Point, pb: &Point) -> Point {
        match self {
            Manifold::Product(_, b) => {
                let mut coords = DVector::zeros(pa.coords.len() + pb.coords.len());
                coords.rows_mut(0, pa.coords.len()).copy_from(&pa.coords);
                coords.rows_mut(pa.coords.len(), pb.coords.len()).copy_from(&pb.coords);
                Point { chart: pa.chart * b.chart_count() + pb.chart, coords }
            }
            _ => panic!("join called on a non-product manifold"),
        }
    }

    /// Whether `p` is a valid point: known chart, finite coordinates inside the chart box.
    pub fn contains(&self, p: &Point) -> bool {
        if p.coords.len() != self.dim() || p.chart >= self.chart_count() || p.coords.iter().any(|c| !c.is_finite()) {
            return false;
        }
        match self {
            Manifold::Torus { .. } => true,
            Manifold::Sphere => p.coords.iter().all(|c| c.abs() < SPHERE_BOX),
            Manifold::Product(a, b) => {
                let (pa, pb) = self.split(p);
                a.contains(&pa) && b.contains(&pb)
            }
        }
    }

    /// Bring a point to its canonical representative: torus coordinates into
    /// `[0,1)`, sphere points into the chart where `|u| <= 1.5`. Returns the
    /// Jacobian of the chart transition when the chart changed.
    pub fn normalize(&self, p: &mut Point) -> Option<DMatrix<f64>> {
        match self {
            Manifold::Torus { .. } => {
                for c in p.coords.iter_mut() {
                    *c = wrap_unit(*c);
                }
                None
            }
            Manifold::Sphere => {
                let u = Vector2::new(p.coords[0], p.coords[1]);
                if u.norm() <= SPHERE_SWITCH {
                    return None;
                }
                let other = 1 - p.chart;
                let (coords, jac) = self.to_chart(p, other)?;
                *p = Point { chart: other, coords };
                Some(jac)
            }
            Manifold::Product(a, b) => {
                let (mut pa, mut pb) = self.split(p);
                let ja = a.normalize(&mut pa);
                let jb = b.normalize(&mut pb);
                *p = self.join(&pa, &pb);
                if ja.is_none() && jb.is_none() {
                    return None;
                }
                let ja = ja.unwrap_or_else(|| DMatrix::identity(a.dim(), a.dim()));
                let jb = jb.unwrap_or_else(|| DMatrix::identity(b.dim(), b.dim()));
                Some(block_diag(&ja, &jb))
            }
        }
    }

    pub fn normalized(&self, p: &Point) -> Point {
        let mut q = p.clone();
        self.normalize(&mut q);
        q
    }

    /// Express `p` in `chart`, with the Jacobian of the transition map.
    pub fn to_chart(&self, p: &Point, chart: usize) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match self {
            Manifold::Torus { n } => {
                if chart != 0 {
                    return None;
                }
                Some((p.coords.clone(), DMatrix::identity(*n, *n)))
            }
            Manifold::Sphere => {
                if chart == p.chart {
                    return Some((p.coords.clone(), DMatrix::identity(2, 2)));
                }
                let u = Vector2::new(p.coords[0], p.coords[1]);
                let x = sphere::embed(p.chart, &u);
                let v = sphere::project(chart, &x)?;
                if v.norm() > 1e6 {
                    return None;
                }
                let jac = sphere::d_project(chart, &x) * sphere::d_embed(p.chart, &u);
                Some((DVector::from_vec(vec![v[0], v[1]]), DMatrix::from_fn(2, 2, |i, j| jac[(i, j)])))
            }
            Manifold::Product(a, b) => {
                let nb = b.chart_count();
                let (pa, pb) = self.split(p);
                let (ca, ja) = a.to_chart(&pa, chart / nb)?;
                let (cb, jb) = b.to_chart(&pb, chart % nb)?;
                let mut coords = DVector::zeros(self.dim());
                coords.rows_mut(0, a.dim()).copy_from(&ca);
                coords.rows_mut(a.dim(), b.dim()).copy_from(&cb);
                Some((coords, block_diag(&ja, &jb)))
            }
        }
    }

    /// Coordinates of `q` in the chart of `base`, minus those of `base`, with
    /// torus components wrapped to the nearest image. The matrix is the
    /// Jacobian of the transition from the chart of `q` to the chart of `base`.
    pub fn local_displacement(&self, q: &Point, base: &Point) -> Option<(DVector<f64>, DMatrix<f64>)> {
        match self {
            Manifold::Torus { .. } => {
                let d = DVector::from_iterator(q.coords.len(), q.coords.iter().zip(base.coords.iter()).map(|(a, b)| wrap_half(a - b)));
                Some((d, DMatrix::identity(q.coords.len(), q.coords.len())))
            }
            Manifold::Sphere => {
                let (c, j) = self.to_chart(q, base.chart)?;
                Some((c - &base.coords, j))
            }
            Manifold::Product(a, b) => {
                let (qa, qb) = self.split(q);
                let (ba, bb) = self.split(base);
                let (da, ja) = a.local_displacement(&qa, &ba)?;
                let (db, jb) = b.local_displacement(&qb, &bb)?;
                let mut d = DVector::zeros(self.dim());
                d.rows_mut(0, a.dim()).copy_from(&da);
                d.rows_mut(a.dim(), b.dim()).copy_from(&db);
                Some((d, block_diag(&ja, &jb)))
            }
        }
    }

    /// The point `base + v` (chart-wise), normalized.
    pub fn offset(&self, base: &Point, v: &DVector<f64>) -> Point {
        let mut q = Point { chart: base.chart, coords: &base.coords + v };
        self.normalize(&mut q);
        q
    }

    /// Riemannian metric coefficients in the chart of `p`.
    pub fn metric(&self, p: &Point) -> DMatrix<f64> {
        match self {
            Manifold::Torus { n } => DMatrix::identity(*n, *n),
            Manifold::Sphere => {
                let r = p.coords.norm_squared();
                DMatrix::identity(2, 2) * (4.0 / ((1.0 + r) * (1.0 + r)))
            }
            Manifold::Product(a, b) => {
                let (pa, pb) = self.split(p);
                block_diag(&a.metric(&pa), &b.metric(&pb))
            }
        }
    }

    /// Partial derivatives `∂_j G` of the metric coefficients.
    pub fn metric_derivatives(&self, p: &Point) -> Vec<DMatrix<f64>> {
        match self {
            Manifold::Torus { n } => vec![DMatrix::zeros(*n, *n); *n],
            Manifold::Sphere => {
                let r = p.coords.norm_squared();
                let d3 = (1.0 + r).powi(3);
                (0..2).map(|j| DMatrix::identity(2, 2) * (-16.0 * p.coords[j] / d3)).collect()
            }
            Manifold::Product(a, b) => {
                let (pa, pb) = self.split(p);
                let n = self.dim();
                let da = a.dim();
                let mut out = Vec::with_capacity(n);
                for m in a.metric_derivatives(&pa) {
                    out.push(block_diag(&m, &DMatrix::zeros(b.dim(), b.dim())));
                }
                for m in b.metric_derivatives(&pb) {
                    out.push(block_diag(&DMatrix::zeros(da, da), &m));
                }
                out
            }
        }
    }

    /// Ambient position for embedded spheres.
    pub fn embed(&self, p: &Point) -> Option<Vector3<f64>> {
        match self {
            Manifold::Sphere => Some(sphere::embed(p.chart, &Vector2::new(p.coords[0], p.coords[1]))),
            _ => None,
        }
    }

    /// Point of the sphere from an ambient (not necessarily unit) vector.
    pub fn sphere_point(x: &Vector3<f64>) -> Point {
        let x = x.normalize();
        let chart = if x[2] >= 0.0 { 0 } else { 1 };
        let u = sphere::project(chart, &x).expect("hemisphere chart always covers");
        Point::new(chart, vec![u[0], u[1]])
    }

    /// Distance equivalent to the Riemannian one: wrapped Euclidean on tori,
    /// chordal on the sphere, root-sum-square on products.
    pub fn distance(&self, p: &Point, q: &Point) -> f64 {
        match self {
            Manifold::Torus { .. } => p.coords.iter().zip(q.coords.iter()).map(|(a, b)| wrap_half(a - b).powi(2)).sum::<f64>().sqrt(),
            Manifold::Sphere => (self.embed(p).unwrap() - self.embed(q).unwrap()).norm(),
            Manifold::Product(a, b) => {
                let (pa, pb) = self.split(p);
                let (qa, qb) = self.split(q);
                (a.distance(&pa, &qa).powi(2) + b.distance(&pb, &qb).powi(2)).sqrt()
            }
        }
    }

    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        match self {
            Manifold::Torus { n } => Point::new(0, (0..*n).map(|_| rng.gen_range(0.0..1.0)).collect()),
            Manifold::Sphere => loop {
                let v = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                let n = v.norm();
                if n > 0.1 && n <= 1.0 {
                    return Manifold::sphere_point(&v);
                }
            },
            Manifold::Product(a, b) => {
                let pa = a.random_point(rng);
                let pb = b.random_point(rng);
                self.join(&pa, &pb)
            }
        }
    }
}

pub(crate) fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    m.view_mut((a.nrows(), a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    m
}

/// Stereographic charts of the unit sphere.
pub(crate) mod sphere {
    use super::*;

    fn signs(chart: usize) -> (f64, f64) {
        // (reflection of y, sign of z)
        if chart == 0 {
            (1.0, 1.0)
        } else {
            (-1.0, -1.0)
        }
    }

    pub fn embed(chart: usize, u: &Vector2<f64>) -> Vector3<f64> {
        let (sy, sz) = signs(chart);
        let r = u.norm_squared();
        let d = 1.0 + r;
        Vector3::new(2.0 * u[0] / d, sy * 2.0 * u[1] / d, sz * (1.0 - r) / d)
    }

    pub fn project(chart: usize, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        let (sy, sz) = signs(chart);
        let den = 1.0 + sz * x[2];
        if den < 1e-14 {
            return None;
        }
        Some(Vector2::new(x[0] / den, sy * x[1] / den))
    }

    pub fn d_project(chart: usize, x: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
        let (sy, sz) = signs(chart);
        let den = 1.0 + sz * x[2];
        nalgebra::Matrix2x3::new(
            1.0 / den, 0.0, -sz * x[0] / (den * den),
            0.0, sy / den, -sy * sz * x[1] / (den * den),
        )
    }

    pub fn d_embed(chart: usize, u: &Vector2<f64>) -> Matrix3x2<f64> {
        let (sy, sz) = signs(chart);
        let r = u.norm_squared();
        let d = 1.0 + r;
        let d2 = d * d;
        let mut m = Matrix3x2::zeros();
        for i in 0..2 {
            // ∂_i (2 u_m / D) = 2 δ_mi / D - 4 u_m u_i / D²
            for mcomp in 0..2 {
                let delta = if mcomp == i { 1.0 } else { 0.0 };
                let s = if mcomp == 1 { sy } else { 1.0 };
                m[(mcomp, i)] = s * (2.0 * delta / d - 4.0 * u[mcomp] * u[i] / d2);
            }
            // ∂_i (2/D - 1) = -4 u_i / D²
            m[(2, i)] = sz * (-4.0 * u[i] / d2);
        }
        m
    }

    /// Second derivatives `∂_i ∂_j X_a`, indexed `[a][i][j]`.
    pub fn d2_embed(chart: usize, u: &Vector2<f64>) -> [[[f64; 2]; 2]; 3] {
        let (sy, sz) = signs(chart);
        let r = u.norm_squared();
        let d = 1.0 + r;
        let d2 = d * d;
        let d3 = d2 * d;
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        let mut out = [[[0.0; 2]; 2]; 3];
        for i in 0..2 {
            for j in 0..2 {
                for mcomp in 0..2 {
                    let s = if mcomp == 1 { sy } else { 1.0 };
                    out[mcomp][i][j] = s
                        * (-4.0 * delta(mcomp, i) * u[j] / d2 - 4.0 * (delta(mcomp, j) * u[i] + u[mcomp] * delta(i, j)) / d2
                            + 16.0 * u[mcomp] * u[i] * u[j] / d3);
                }
                out[2][i][j] = sz * (-4.0 * delta(i, j) / d2 + 16.0 * u[i] * u[j] / d3);
            }
        }
        out
    }
}
