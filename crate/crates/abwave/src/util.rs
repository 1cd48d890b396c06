//! Small numeric helpers shared across modules.

/// C2 step: 0 for t <= 0, 1 for t >= 1, 6t^5 - 15t^4 + 10t^3 in between.
pub fn smootherstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }
}

/// Derivative of [`smootherstep`].
pub fn smootherstep_d(t: f64) -> f64 {
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else {
        30.0 * t * t * (t - 1.0) * (t - 1.0)
    }
}

/// Compactly supported bump: exp(1 - 1/(1-q)) for q in [0,1), 0 for q >= 1,
/// where q = r^2.  Value 1 at r = 0, identically zero outside the unit ball,
/// smooth everywhere.
pub fn bump_profile(q: f64) -> f64 {
    if q >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - q)).exp()
    }
}

/// d/dq of [`bump_profile`].
pub fn bump_profile_d(q: f64) -> f64 {
    if q >= 1.0 {
        0.0
    } else {
        let w = 1.0 - q;
        -(1.0 - 1.0 / w).exp() / (w * w)
    }
}

/// Classic RK4 step for a first order system dy/dt = f(t, y).
pub fn rk4_step<F>(f: &F, t: f64, y: &[f64], h: f64, out: &mut [f64])
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    f(t, y, &mut k1);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k1[i];
    }
    f(t + 0.5 * h, &tmp, &mut k2);
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * h * k2[i];
    }
    f(t + 0.5 * h, &tmp, &mut k3);
    for i in 0..n {
        tmp[i] = y[i] + h * k3[i];
    }
    f(t + h, &tmp, &mut k4);
    for i in 0..n {
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Four point Lagrange interpolation of uniformly spaced samples `v` at
/// fractional index `x` (0 <= x <= len-1).  Exact on cubics; the stencil is
/// shifted inward near the ends.
pub fn interp_cubic(v: &[f64], x: f64) -> f64 {
    let n = v.len();
    assert!(n >= 2);
    let x = x.clamp(0.0, (n - 1) as f64);
    if n < 4 {
        let i = (x.floor() as usize).min(n - 2);
        let t = x - i as f64;
        return v[i] * (1.0 - t) + v[i + 1] * t;
    }
    let i = (x.floor() as usize).min(n - 2);
    let base = i.saturating_sub(1).min(n - 4);
    let t = x - base as f64;
    let mut acc = 0.0;
    for (k, &vk) in v[base..base + 4].iter().enumerate() {
        let mut w = 1.0;
        for m in 0..4 {
            if m != k {
                w *= (t - m as f64) / (k as f64 - m as f64);
            }
        }
        acc += w * vk;
    }
    acc
}

/// Linear interpolation of uniformly spaced samples at fractional index.
pub fn interp_linear(v: &[f64], x: f64) -> f64 {
    let n = v.len();
    let x = x.clamp(0.0, (n - 1) as f64);
    let i = (x.floor() as usize).min(n - 2);
    let t = x - i as f64;
    v[i] * (1.0 - t) + v[i + 1] * t
}

/// First derivative on a uniform lattice, 4th order centered with 2nd/3rd
/// order one-sided rows at the ends.
pub fn deriv1_4th(v: &[f64], h: f64, out: &mut [f64]) {
    let n = v.len();
    assert!(n >= 5);
    out[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * h);
    out[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / (12.0 * h);
    for i in 2..n - 2 {
        out[i] = (v[i - 2] - 8.0 * v[i - 1] + 8.0 * v[i + 1] - v[i + 2]) / (12.0 * h);
    }
    out[n - 2] =
        (3.0 * v[n - 1] + 10.0 * v[n - 2] - 18.0 * v[n - 3] + 6.0 * v[n - 4] - v[n - 5]) / (12.0 * h);
    out[n - 1] = (25.0 * v[n - 1] - 48.0 * v[n - 2] + 36.0 * v[n - 3] - 16.0 * v[n - 4]
        + 3.0 * v[n - 5])
        / (12.0 * h);
}

/// Least squares slope of log(err) against log(h): the observed order of a
/// sequence of errors at mesh sizes `h`.
pub fn observed_order(h: &[f64], err: &[f64]) -> f64 {
    assert_eq!(h.len(), err.len());
    let pts: Vec<(f64, f64)> = h
        .iter()
        .zip(err.iter())
        .filter(|(_, e)| **e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Wrap an angle-like quantity into (-pi, pi].
pub fn wrap_to_pi(x: f64) -> f64 {
    use std::f64::consts::PI;
    let mut y = x % (2.0 * PI);
    if y <= -PI {
        y += 2.0 * PI;
    } else if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Distance between arclength positions on a closed loop of length `len`.
pub fn periodic_distance(a: f64, b: f64, len: f64) -> f64 {
    let d = (a - b).rem_euclid(len);
    d.min(len - d)
}
