//! Negative gradient flow, its variational equation and forward limits.

use std::io::Write;
use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::critical::CriticalPoint;
use crate::geometry::{MorseSystem, Point};
use crate::settings::{FlowSettings, Tolerances};
use crate::{Error, Result};

/// Longest backward flow we are willing to integrate.
pub const BACKWARD_LIMIT: f64 = 50.0;

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// State of an integration: position, optionally the flow differential, elapsed time.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub point: Point,
    pub jacobian: Option<DMatrix<f64>>,
    pub time: f64,
}

fn rhs(sys: &MorseSystem, chart: usize, y: &DVector<f64>, n: usize, with_jac: bool, dir: f64) -> DVector<f64> {
    let p = Point { chart, coords: y.rows(0, n).into_owned() };
    let mut out = DVector::zeros(y.len());
    if with_jac {
        let (v, a) = sys.flow_field_with_jacobian(&p);
        out.rows_mut(0, n).copy_from(&(v * dir));
        let j = DMatrix::from_column_slice(n, n, &y.as_slice()[n..]);
        let aj = a * j * dir;
        out.rows_mut(n, n * n).copy_from_slice(aj.as_slice());
    } else {
        out.rows_mut(0, n).copy_from(&(sys.flow_field(&p) * dir));
    }
    out
}

/// Integrate the flow from `p` for signed time `t`, calling `observer` after
/// every accepted step. The observer may stop the integration early.
pub fn integrate<O>(sys: &MorseSystem, p: &Point, t: f64, with_jac: bool, settings: &FlowSettings, mut observer: O) -> Result<FlowState>
where
    O: FnMut(&FlowState) -> ControlFlow<()>,
{
    if !t.is_finite() {
        return Err(Error::InvalidParameter(format!("flow time {t}")));
    }
    if t < -BACKWARD_LIMIT {
        return Err(Error::BackwardHorizon(t));
    }
    if !sys.manifold.contains(p) {
        return Err(Error::InvalidPoint(format!("{:?}", p.coords_vec())));
    }
    let n = sys.dim();
    let dir = if t < 0.0 { -1.0 } else { 1.0 };
    let total = t.abs();
    let mut state = FlowState { point: sys.manifold.normalized(p), jacobian: with_jac.then(|| DMatrix::identity(n, n)), time: 0.0 };
    if let Some(jac) = state.jacobian.as_mut() {
        // `normalized` may have switched charts
        if state.point.chart != p.chart {
            let (_, tr) = sys.manifold.to_chart(p, state.point.chart).expect("normalized chart covers the point");
            *jac = tr;
        }
    }
    if total == 0.0 {
        return Ok(state);
    }
    let pack = |s: &FlowState| -> DVector<f64> {
        let mut y = DVector::zeros(if with_jac { n + n * n } else { n });
        y.rows_mut(0, n).copy_from(&s.point.coords);
        if let Some(j) = &s.jacobian {
            y.rows_mut(n, n * n).copy_from_slice(j.as_slice());
        }
        y
    };
    let mut y = pack(&state);
    let mut k1 = rhs(sys, state.point.chart, &y, n, with_jac, dir);
    let speed = k1.rows(0, n).norm();
    let mut h = (0.01 / speed.max(1e-12)).clamp(1e-6, settings.max_step).min(total);
    let mut elapsed = 0.0f64;
    let mut ks: Vec<DVector<f64>> = Vec::with_capacity(7);
    while elapsed < total {
        let last = elapsed + h >= total * (1.0 - 1e-14);
        if last {
            h = total - elapsed;
        }
        ks.clear();
        ks.push(k1.clone());
        for s in 1..7 {
            let mut ys = y.clone();
            for (r, kr) in ks.iter().enumerate() {
                if A[s][r] != 0.0 {
                    ys.axpy(h * A[s][r], kr, 1.0);
                }
            }
            ks.push(rhs(sys, state.point.chart, &ys, n, with_jac, dir));
        }
        let mut y5 = y.clone();
        let mut y4 = y.clone();
        for s in 0..7 {
            if B5[s] != 0.0 {
                y5.axpy(h * B5[s], &ks[s], 1.0);
            }
            if B4[s] != 0.0 {
                y4.axpy(h * B4[s], &ks[s], 1.0);
            }
        }
        let err = (0..y.len())
            .map(|i| {
                let sc = settings.abs_tol + settings.rel_tol * y[i].abs().max(y5[i].abs());
                ((y5[i] - y4[i]) / sc).abs()
            })
            .fold(0.0f64, f64::max);
        if err.is_finite() && err <= 1.0 {
            elapsed = if last { total } else { elapsed + h };
            state.point.coords = y5.rows(0, n).into_owned();
            if let Some(j) = state.jacobian.as_mut() {
                j.copy_from_slice(&y5.as_slice()[n..]);
            }
            let transition = sys.manifold.normalize(&mut state.point);
            let mut switched = false;
            if let Some(tr) = transition {
                switched = true;
                if let Some(j) = state.jacobian.as_mut() {
                    *j = &tr * &*j;
                }
            }
            state.time = dir * elapsed;
            y = pack(&state);
            // FSAL; torus wrapping leaves the field unchanged
            k1 = if switched { rhs(sys, state.point.chart, &y, n, with_jac, dir) } else { ks[6].clone() };
            if let ControlFlow::Break(()) = observer(&state) {
                return Ok(state);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * factor).min(settings.max_step);
        } else {
            h *= if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            if h < 1e-14 * (1.0 + elapsed) {
                return Err(Error::StepUnderflow { time: dir * elapsed, location: state.point.coords_vec() });
            }
        }
    }
    Ok(state)
}

/// `f^t(p)`. Negative `t` flows backward, limited to `|t| <= 50`.
pub fn flow(sys: &MorseSystem, p: &Point, t: f64, settings: &FlowSettings) -> Result<Point> {
    Ok(integrate(sys, p, t, false, settings, |_| ControlFlow::Continue(()))?.point)
}

/// `f^t(p)` with its differential, mapping chart coordinates at `p` to chart
/// coordinates at the image.
pub fn flow_with_jacobian(sys: &MorseSystem, p: &Point, t: f64, settings: &FlowSettings) -> Result<(Point, DMatrix<f64>)> {
    let s = integrate(sys, p, t, true, settings, |_| ControlFlow::Continue(()))?;
    Ok((s.point, s.jacobian.expect("jacobian requested")))
}

/// A recorded trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectorySample {
    pub times: Vec<f64>,
    pub points: Vec<Point>,
    pub limit: Option<usize>,
}

impl TrajectorySample {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.points.first().map_or(0, |p| p.coords.len());
        let header: Vec<String> = ["t".to_string(), "chart".to_string()].into_iter().chain((0..n).map(|i| format!("x{i}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, p) in self.times.iter().zip(&self.points) {
            let coords: Vec<String> = p.coords.iter().map(|c| format!("{c:.12e}")).collect();
            writeln!(w, "{t:.12e},{},{}", p.chart, coords.join(","))?;
        }
        Ok(())
    }
}

/// Record the accepted steps of a forward flow.
pub fn trajectory(sys: &MorseSystem, p: &Point, t: f64, settings: &FlowSettings) -> Result<TrajectorySample> {
    let mut times = vec![0.0];
    let mut points = vec![sys.manifold.normalized(p)];
    integrate(sys, p, t, false, settings, |s| {
        times.push(s.time);
        points.push(s.point.clone());
        ControlFlow::Continue(())
    })?;
    Ok(TrajectorySample { times, points, limit: None })
}

/// Whether `p` sits in the basin of `cp` by the local linear model: close, and
/// on the stable side to within `saddle_tol` in the unstable eigen-coordinates.
pub fn in_local_basin(sys: &MorseSystem, cp: &CriticalPoint, p: &Point, tol: &Tolerances) -> bool {
    if sys.distance(p, &cp.point) > tol.flow.r_conv {
        return false;
    }
    let Some((d, _)) = sys.manifold.local_displacement(p, &cp.point) else { return false };
    if cp.index > 0 {
        let u = cp.stable_coframe.matrix() * &d;
        if u.norm() > tol.saddle_tol {
            return false;
        }
    }
    // the flow must point into the quadratic model's sublevel sets
    let s = &d - cp.unstable_frame.matrix() * (cp.stable_coframe.matrix() * &d);
    let h = sys.jet(&cp.point).hessian;
    s.dot(&(&h * &s)) >= 0.0
}

/// `φ^∞(p)`: the id of the critical point the forward flow of `p` converges to.
pub fn limit_point(sys: &MorseSystem, cps: &[CriticalPoint], p: &Point, tol: &Tolerances) -> Result<usize> {
    let hit = |q: &Point| cps.iter().find(|cp| in_local_basin(sys, cp, q, tol)).map(|cp| cp.id);
    if let Some(id) = hit(p) {
        return Ok(id);
    }
    let mut found = None;
    let end = integrate(sys, p, tol.flow.t_max, false, &tol.flow, |s| match hit(&s.point) {
        Some(id) => {
            found = Some(id);
            ControlFlow::Break(())
        }
        None => ControlFlow::Continue(()),
    })?;
    found.ok_or(Error::NoConvergence { horizon: tol.flow.t_max, location: end.point.coords_vec() })
}

const STALL_GRADIENT: f64 = 1e-12;

/// Flow until `F` drops to `level`, landing on the level set by Newton
/// iteration on the stopping time. Returns `None` if `F(p) <= level` already,
/// or the flow stalls at a critical point or runs past the horizon first.
pub fn flow_to_level(sys: &MorseSystem, p: &Point, level: f64, with_jac: bool, settings: &FlowSettings) -> Result<Option<FlowState>> {
    if sys.value(p) <= level {
        return Ok(None);
    }
    let mut before: Option<FlowState> = None;
    let mut prev = FlowState { point: sys.manifold.normalized(p), jacobian: None, time: 0.0 };
    let mut crossed = false;
    let end = integrate(sys, p, settings.t_max, with_jac, settings, |s| {
        if sys.value(&s.point) <= level {
            crossed = true;
            before = Some(prev.clone());
            return ControlFlow::Break(());
        }
        if sys.gradient_norm(&s.point) < STALL_GRADIENT {
            // parked on another critical point above the level
            return ControlFlow::Break(());
        }
        prev = s.clone();
        ControlFlow::Continue(())
    })?;
    if !crossed {
        return Ok(None);
    }
    let before = before.expect("set on crossing");
    // Newton on tau, flowing from the last state above the level.
    let mut tau = 0.5 * (end.time - before.time);
    let mut best = end;
    for _ in 0..30 {
        let q = integrate(sys, &before.point, tau, with_jac, settings, |_| ControlFlow::Continue(()))?;
        let f = sys.value(&q.point) - level;
        let jet = sys.jet(&q.point);
        let v = sys.flow_field(&q.point);
        let slope = jet.differential.dot(&v);
        best = q;
        if slope >= 0.0 {
            break;
        }
        let step = -f / slope;
        tau += step;
        if step.abs() < 1e-14 * (1.0 + tau.abs()) || f.abs() < 1e-15 {
            break;
        }
    }
    let jacobian = match (best.jacobian, before.jacobian) {
        (Some(a), Some(b)) => Some(a * b),
        (a, _) => a,
    };
    Ok(Some(FlowState { point: best.point, jacobian, time: before.time + tau }))
}
