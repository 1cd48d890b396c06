//! Null bicharacteristics of the space-time symbol: ray tracing in a moving
//! medium, angle shooting between boundary points, and the interference
//! phase accumulated by two rays passing an obstacle on opposite sides.
//!
//! Rays are integrated in physical time with the classic fourth order
//! scheme.  The momentum convention follows the (+,-,-) signature, so the
//! spatial group velocity points opposite to the momentum covector; the
//! launching helper hides that from callers by taking a momentum angle.

use crate::error::{Error, Result};
use crate::geometry::{ObstacleSpec, OuterSpec};
use crate::media::AnalyticMetric;
use crate::util::rk4_step;
use nalgebra::Matrix3;

/// Point on a ray: position, spatial momentum covector, elapsed time and
/// the accumulated eikonal increment (integral of the momentum against the
/// position increment).
#[derive(Debug, Clone, Copy)]
pub struct RayState {
    pub x: [f64; 2],
    pub xi: [f64; 2],
    pub t: f64,
    pub phase: f64,
}

fn symbol(g: &Matrix3<f64>, xi: [f64; 2]) -> f64 {
    g[(0, 0)]
        + 2.0 * (g[(0, 1)] * xi[0] + g[(0, 2)] * xi[1])
        + g[(1, 1)] * xi[0] * xi[0]
        + 2.0 * g[(1, 2)] * xi[0] * xi[1]
        + g[(2, 2)] * xi[1] * xi[1]
}

/// Spatial momentum making the symbol null in the given momentum direction:
/// the positive root of the quadratic the null condition becomes along that
/// ray of covectors.
pub fn null_momentum(metric: &AnalyticMetric, x: [f64; 2], dir: [f64; 2]) -> [f64; 2] {
    let len = dir[0].hypot(dir[1]);
    let d = [dir[0] / len, dir[1] / len];
    let g = metric.at(x[0], x[1]);
    let c2 = g[(1, 1)] * d[0] * d[0] + 2.0 * g[(1, 2)] * d[0] * d[1] + g[(2, 2)] * d[1] * d[1];
    let c1 = 2.0 * (g[(0, 1)] * d[0] + g[(0, 2)] * d[1]);
    let c0 = g[(0, 0)];
    let r = (c1 + (c1 * c1 - 4.0 * c2 * c0).sqrt()) / (-2.0 * c2);
    [r * d[0], r * d[1]]
}

/// Ray starting at `x` with a null momentum at the given momentum angle.
/// The group velocity points roughly opposite, so aim the angle at the
/// direction the ray should come FROM.
pub fn launch(metric: &AnalyticMetric, x: [f64; 2], t0: f64, angle: f64) -> RayState {
    let xi = null_momentum(metric, x, [angle.cos(), angle.sin()]);
    RayState { x, xi, t: t0, phase: 0.0 }
}

fn inside_outer(outer: &OuterSpec, x: f64, y: f64) -> bool {
    match *outer {
        OuterSpec::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        OuterSpec::Disk { cx, cy, r } => (x - cx).hypot(y - cy) <= r,
    }
}

/// Integrate the bicharacteristic system in physical time until `t_span`
/// elapses or the ray leaves the outer boundary (the path then ends at the
/// crossing).  Entering an obstacle is an error; the null symbol is checked
/// along the way and excessive drift is refused.
pub fn trace_ray(
    metric: &AnalyticMetric,
    outer: &OuterSpec,
    obstacles: &[ObstacleSpec],
    start: RayState,
    t_span: f64,
    dt: f64,
) -> Result<Vec<RayState>> {
    let deriv = |_t: f64, y: &[f64], out: &mut [f64]| {
        let g = metric.at(y[0], y[1]);
        let [dgx, dgy] = metric.grad(y[0], y[1]);
        let xi = [y[2], y[3]];
        let vx = 2.0 * (g[(0, 1)] + g[(1, 1)] * xi[0] + g[(1, 2)] * xi[1]);
        let vy = 2.0 * (g[(0, 2)] + g[(1, 2)] * xi[0] + g[(2, 2)] * xi[1]);
        let tdot = 2.0 * (g[(0, 0)] + g[(0, 1)] * xi[0] + g[(0, 2)] * xi[1]);
        let tdot = tdot.max(1e-12);
        out[0] = vx / tdot;
        out[1] = vy / tdot;
        out[2] = -symbol(&dgx, xi) / tdot;
        out[3] = -symbol(&dgy, xi) / tdot;
        out[4] = (xi[0] * vx + xi[1] * vy) / tdot;
    };

    let scale = {
        let g = metric.at(start.x[0], start.x[1]);
        g[(0, 0)].abs() + start.xi[0] * start.xi[0] + start.xi[1] * start.xi[1]
    };
    let mut path = Vec::with_capacity((t_span / dt).ceil() as usize + 1);
    path.push(start);
    let mut state = [start.x[0], start.x[1], start.xi[0], start.xi[1], start.phase];
    let mut next = [0.0f64; 5];
    let steps = (t_span / dt).ceil() as usize;
    for step in 0..steps {
        let t = step as f64 * dt;
        let h = dt.min(t_span - t);
        if h <= 0.0 {
            break;
        }
        rk4_step(&deriv, t, &state, h, &mut next);
        if !inside_outer(outer, next[0], next[1]) {
            // Bisect the final step onto the boundary.
            let mut lo = 0.0;
            let mut hi = h;
            let mut probe = next;
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                rk4_step(&deriv, t, &state, mid, &mut probe);
                if inside_outer(outer, probe[0], probe[1]) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            rk4_step(&deriv, t, &state, lo, &mut probe);
            path.push(RayState {
                x: [probe[0], probe[1]],
                xi: [probe[2], probe[3]],
                t: start.t + t + lo,
                phase: probe[4],
            });
            return Ok(path);
        }
        for (idx, obs) in obstacles.iter().enumerate() {
            if obs.contains(next[0], next[1]) {
                return Err(Error::ObstacleHit { obstacle: idx, x: next[0], y: next[1] });
            }
        }
        let g = metric.at(next[0], next[1]);
        let drift = symbol(&g, [next[2], next[3]]).abs() / scale;
        if drift > 1e-8 {
            return Err(Error::Degenerate(format!(
                "null symbol drifted to {drift:.3e} of scale; shrink the ray step"
            )));
        }
        state = next;
        path.push(RayState {
            x: [state[0], state[1]],
            xi: [state[2], state[3]],
            t: start.t + t + h,
            phase: state[4],
        });
    }
    Ok(path)
}

/// Lateral miss of a traced path at the plane through `target` orthogonal
/// to the source-target axis `u`, linearly interpolated at the crossing.
fn crossing_miss(path: &[RayState], target: [f64; 2], u: [f64; 2]) -> Option<f64> {
    let along = |p: &RayState| (p.x[0] - target[0]) * u[0] + (p.x[1] - target[1]) * u[1];
    let lateral = |p: &RayState| -(p.x[0] - target[0]) * u[1] + (p.x[1] - target[1]) * u[0];
    let mut prev = path.first()?;
    for p in path.iter().skip(1) {
        let a0 = along(prev);
        let a1 = along(p);
        if a0 < 0.0 && a1 >= 0.0 {
            let w = -a0 / (a1 - a0);
            return Some(lateral(prev) * (1.0 - w) + lateral(p) * w);
        }
        prev = p;
    }
    None
}

/// Cut a traced path at its crossing of the target plane, appending an
/// interpolated state on the plane, so a shot path ends at the receiver.
fn truncate_at_crossing(path: &[RayState], target: [f64; 2], u: [f64; 2]) -> Vec<RayState> {
    let along = |p: &RayState| (p.x[0] - target[0]) * u[0] + (p.x[1] - target[1]) * u[1];
    for i in 1..path.len() {
        let a0 = along(&path[i - 1]);
        let a1 = along(&path[i]);
        if a0 < 0.0 && a1 >= 0.0 {
            let w = -a0 / (a1 - a0);
            let p = &path[i - 1];
            let q = &path[i];
            let lerp = |a: f64, b: f64| a * (1.0 - w) + b * w;
            let mut out = path[..i].to_vec();
            out.push(RayState {
                x: [lerp(p.x[0], q.x[0]), lerp(p.x[1], q.x[1])],
                xi: [lerp(p.xi[0], q.xi[0]), lerp(p.xi[1], q.xi[1])],
                t: lerp(p.t, q.t),
                phase: lerp(p.phase, q.phase),
            });
            return out;
        }
    }
    path.to_vec()
}

/// Shoot a ray from `from` to `target` by bisecting the momentum angle in
/// the given bracket.  The target plane passes through `target` with the
/// given normal; a hit is an ascending crossing of that plane with a small
/// lateral offset.  Pick a normal the connecting ray crosses steeply: for a
/// straight shot the source-target direction, for a guided arc the travel
/// direction where it sweeps past the receiver.  Angles whose rays fail to
/// reach the plane (obstacle hits included) are skipped during the scan.
/// The returned path ends on the plane.
#[allow(clippy::too_many_arguments)]
pub fn shoot_to(
    metric: &AnalyticMetric,
    outer: &OuterSpec,
    obstacles: &[ObstacleSpec],
    from: [f64; 2],
    target: [f64; 2],
    normal: [f64; 2],
    angle_bracket: (f64, f64),
    t_span: f64,
    dt: f64,
    tol: f64,
) -> Result<Vec<RayState>> {
    let len = normal[0].hypot(normal[1]);
    let u = [normal[0] / len, normal[1] / len];
    let probe = |angle: f64| -> Option<(Vec<RayState>, f64)> {
        let ray = trace_ray(metric, outer, obstacles, launch(metric, from, 0.0, angle), t_span, dt)
            .ok()?;
        let miss = crossing_miss(&ray, target, u)?;
        Some((ray, miss))
    };

    let nscan = 33;
    let (a0, a1) = angle_bracket;
    let mut bracket: Option<((f64, f64), (f64, f64))> = None;
    let mut last: Option<(f64, f64)> = None;
    for i in 0..nscan {
        let ang = a0 + (a1 - a0) * i as f64 / (nscan - 1) as f64;
        if let Some((_, miss)) = probe(ang) {
            if let Some((pa, pm)) = last {
                if pm.signum() != miss.signum() {
                    bracket = Some(((pa, pm), (ang, miss)));
                    break;
                }
            }
            last = Some((ang, miss));
        } else {
            last = None;
        }
    }
    let Some(((mut lo, mut mlo), (mut hi, _mhi))) = bracket else {
        let best = last.map(|(_, m)| m.abs()).unwrap_or(f64::INFINITY);
        return Err(Error::RayMismatch { miss: best, allowed: tol });
    };
    let mut best: Option<(Vec<RayState>, f64)> = None;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match probe(mid) {
            Some((ray, miss)) => {
                if miss.signum() == mlo.signum() {
                    lo = mid;
                    mlo = miss;
                } else {
                    hi = mid;
                }
                if best.as_ref().map(|(_, m)| miss.abs() < m.abs()).unwrap_or(true) {
                    best = Some((ray, miss));
                }
            }
            None => break,
        }
    }
    match best {
        Some((ray, miss)) if miss.abs() <= tol => Ok(truncate_at_crossing(&ray, target, u)),
        Some((_, miss)) => Err(Error::RayMismatch { miss: miss.abs(), allowed: tol }),
        None => Err(Error::RayMismatch { miss: f64::INFINITY, allowed: tol }),
    }
}

/// Interference phase of two rays joining the same source and receiver on
/// opposite sides of an obstacle: the wavenumber times the difference of
/// their eikonal increments.  `allowed` bounds how far the endpoints may
/// disagree.
pub fn ab_phase(over: &[RayState], under: &[RayState], k: f64, allowed: f64) -> Result<f64> {
    let ends = |a: &RayState, b: &RayState| {
        ((a.x[0] - b.x[0]).powi(2) + (a.x[1] - b.x[1]).powi(2)).sqrt()
    };
    let (Some(of), Some(ol), Some(uf), Some(ul)) =
        (over.first(), over.last(), under.first(), under.last())
    else {
        return Err(Error::RayMismatch { miss: f64::INFINITY, allowed });
    };
    let miss = ends(of, uf).max(ends(ol, ul));
    if miss > allowed {
        return Err(Error::RayMismatch { miss, allowed });
    }
    Ok(k * (ol.phase - ul.phase))
}

/// Line integral of a plane field around the closed loop formed by one path
/// forward and the other reversed, midpoint rule per segment.
pub fn circulation(
    over: &[RayState],
    under: &[RayState],
    field: &dyn Fn(f64, f64) -> [f64; 2],
) -> f64 {
    let mut pts: Vec<[f64; 2]> = over.iter().map(|p| p.x).collect();
    pts.extend(under.iter().rev().map(|p| p.x));
    let mut acc = 0.0;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        let v = field(0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]));
        acc += v[0] * (b[0] - a[0]) + v[1] * (b[1] - a[1]);
    }
    acc
}
