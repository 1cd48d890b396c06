//! Closed form scalar fields, flow fields and planar diffeomorphisms.
//!
//! These are the building blocks configs refer to.  Values and first
//! derivatives are analytic so that downstream consumers (media, charts,
//! transformed operators) are not polluted by interpolation error.

use crate::util::{bump_profile, bump_profile_d, smootherstep, smootherstep_d};
use serde::{Deserialize, Serialize};

/// Scalar field given in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ScalarSpec {
    Constant { value: f64 },
    Linear { gx: f64, gy: f64, offset: f64 },
    /// Smooth bump supported on the open disk of the given radius; infinitely
    /// differentiable, identically zero outside.
    RadialBump { cx: f64, cy: f64, radius: f64, amplitude: f64 },
    Sum(Vec<ScalarSpec>),
    Scaled { factor: f64, inner: Box<ScalarSpec> },
}

impl ScalarSpec {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match self {
            ScalarSpec::Constant { value } => *value,
            ScalarSpec::Linear { gx, gy, offset } => gx * x + gy * y + offset,
            ScalarSpec::RadialBump { cx, cy, radius, amplitude } => {
                let q = ((x - cx).powi(2) + (y - cy).powi(2)) / (radius * radius);
                amplitude * bump_profile(q)
            }
            ScalarSpec::Sum(parts) => parts.iter().map(|p| p.value(x, y)).sum(),
            ScalarSpec::Scaled { factor, inner } => factor * inner.value(x, y),
        }
    }

    pub fn grad(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            ScalarSpec::Constant { .. } => [0.0, 0.0],
            ScalarSpec::Linear { gx, gy, .. } => [*gx, *gy],
            ScalarSpec::RadialBump { cx, cy, radius, amplitude } => {
                let wx = x - cx;
                let wy = y - cy;
                let r2 = radius * radius;
                let q = (wx * wx + wy * wy) / r2;
                let d = amplitude * bump_profile_d(q) * 2.0 / r2;
                [d * wx, d * wy]
            }
            ScalarSpec::Sum(parts) => {
                let mut g = [0.0, 0.0];
                for p in parts {
                    let gp = p.grad(x, y);
                    g[0] += gp[0];
                    g[1] += gp[1];
                }
                g
            }
            ScalarSpec::Scaled { factor, inner } => {
                let g = inner.grad(x, y);
                [factor * g[0], factor * g[1]]
            }
        }
    }

    /// Largest |value| over the support, coarse bound from the structure.
    pub fn amplitude_bound(&self) -> f64 {
        match self {
            ScalarSpec::Constant { value } => value.abs(),
            ScalarSpec::Linear { .. } => f64::INFINITY,
            ScalarSpec::RadialBump { amplitude, .. } => amplitude.abs(),
            ScalarSpec::Sum(parts) => parts.iter().map(|p| p.amplitude_bound()).sum(),
            ScalarSpec::Scaled { factor, inner } => factor.abs() * inner.amplitude_bound(),
        }
    }
}

/// Flow field given in closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VectorSpec {
    Zero,
    Constant { vx: f64, vy: f64 },
    /// Irrotational vortex of the given circulation around its center, with
    /// the singular core regularized below `r_core` (the cores sit inside
    /// obstacles, so the fluid region never sees the regularization).
    Vortex { cx: f64, cy: f64, circulation: f64, r_core: f64 },
    /// Gradient flow of a scalar potential.
    Gradient(Box<ScalarSpec>),
    Sum(Vec<VectorSpec>),
    Scaled { factor: f64, inner: Box<VectorSpec> },
}

impl VectorSpec {
    pub fn value(&self, x: f64, y: f64) -> [f64; 2] {
        match self {
            VectorSpec::Zero => [0.0, 0.0],
            VectorSpec::Constant { vx, vy } => [*vx, *vy],
            VectorSpec::Vortex { cx, cy, circulation, r_core } => {
                let wx = x - cx;
                let wy = y - cy;
                let r2 = (wx * wx + wy * wy).max(r_core * r_core);
                let c = circulation / (2.0 * std::f64::consts::PI * r2);
                [-c * wy, c * wx]
            }
            VectorSpec::Gradient(a) => a.grad(x, y),
            VectorSpec::Sum(parts) => {
                let mut v = [0.0, 0.0];
                for p in parts {
                    let vp = p.value(x, y);
                    v[0] += vp[0];
                    v[1] += vp[1];
                }
                v
            }
            VectorSpec::Scaled { factor, inner } => {
                let v = inner.value(x, y);
                [factor * v[0], factor * v[1]]
            }
        }
    }
}

/// Planar diffeomorphism with analytic inverse and Jacobian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DiffeoSpec {
    Identity,
    /// Rotate the disk r <= r0 about the center by `angle`, blend smoothly to
    /// the identity across r0 < r < r1.  Area preserving, exact inverse.
    AnnulusShear { cx: f64, cy: f64, r0: f64, r1: f64, angle: f64 },
}

impl DiffeoSpec {
    fn shear_angle(r0: f64, r1: f64, angle: f64, r: f64) -> (f64, f64) {
        if r <= r0 {
            (angle, 0.0)
        } else if r >= r1 {
            (0.0, 0.0)
        } else {
            let t = (r - r0) / (r1 - r0);
            (
                angle * (1.0 - smootherstep(t)),
                -angle * smootherstep_d(t) / (r1 - r0),
            )
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            DiffeoSpec::Identity => [x, y],
            DiffeoSpec::AnnulusShear { cx, cy, r0, r1, angle } => {
                let wx = x - cx;
                let wy = y - cy;
                let r = wx.hypot(wy);
                let (th, _) = Self::shear_angle(r0, r1, angle, r);
                let (s, c) = th.sin_cos();
                [cx + c * wx - s * wy, cy + s * wx + c * wy]
            }
        }
    }

    /// Exact inverse: rotations preserve the radius, so inverting the angle
    /// at the same radius undoes the map.
    pub fn apply_inverse(&self, x: f64, y: f64) -> [f64; 2] {
        match *self {
            DiffeoSpec::Identity => [x, y],
            DiffeoSpec::AnnulusShear { cx, cy, r0, r1, angle } => {
                let wx = x - cx;
                let wy = y - cy;
                let r = wx.hypot(wy);
                let (th, _) = Self::shear_angle(r0, r1, angle, r);
                let (s, c) = (-th).sin_cos();
                [cx + c * wx - s * wy, cy + s * wx + c * wy]
            }
        }
    }

    /// Jacobian matrix d(apply)/d(x,y), row major.
    pub fn jacobian(&self, x: f64, y: f64) -> [[f64; 2]; 2] {
        match *self {
            DiffeoSpec::Identity => [[1.0, 0.0], [0.0, 1.0]],
            DiffeoSpec::AnnulusShear { cx, cy, r0, r1, angle } => {
                let wx = x - cx;
                let wy = y - cy;
                let r = wx.hypot(wy);
                let (th, dth) = Self::shear_angle(r0, r1, angle, r);
                let (s, c) = th.sin_cos();
                if dth == 0.0 || r == 0.0 {
                    return [[c, -s], [s, c]];
                }
                // d/dx [R(th(r)) w] = R(th) + th'(r) R'(th) w (w/r)^T
                let rp = [-s * wx - c * wy, c * wx - s * wy];
                let f = dth / r;
                [
                    [c + f * rp[0] * wx, -s + f * rp[0] * wy],
                    [s + f * rp[1] * wx, c + f * rp[1] * wy],
                ]
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, DiffeoSpec::Identity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_bump_gradient_matches_differences() {
        let a = ScalarSpec::RadialBump { cx: 0.4, cy: 0.6, radius: 0.3, amplitude: 2.0 };
        let h = 1e-6;
        for (x, y) in [(0.4, 0.6), (0.5, 0.55), (0.3, 0.75), (0.62, 0.6)] {
            let g = a.grad(x, y);
            let gx = (a.value(x + h, y) - a.value(x - h, y)) / (2.0 * h);
            let gy = (a.value(x, y + h) - a.value(x, y - h)) / (2.0 * h);
            assert!((g[0] - gx).abs() < 1e-7, "at ({x},{y})");
            assert!((g[1] - gy).abs() < 1e-7, "at ({x},{y})");
        }
        // Vanishes identically outside its support.
        assert_eq!(a.value(0.8, 0.6), 0.0);
        assert_eq!(a.grad(0.8, 0.6), [0.0, 0.0]);
    }

    #[test]
    fn vortex_has_stated_circulation() {
        let v = VectorSpec::Vortex { cx: 0.0, cy: 0.0, circulation: 0.7, r_core: 0.05 };
        // Midpoint rule around a circle well outside the core.
        let n = 4096;
        let r = 0.8;
        let mut total = 0.0;
        for k in 0..n {
            let th = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
            let (x, y) = (r * th.cos(), r * th.sin());
            let val = v.value(x, y);
            let dl = 2.0 * std::f64::consts::PI * r / n as f64;
            total += (-val[0] * th.sin() + val[1] * th.cos()) * dl;
        }
        assert!((total - 0.7).abs() < 1e-10, "got {total}");
    }

    #[test]
    fn gradient_spec_agrees_with_scalar_grad() {
        let a = ScalarSpec::RadialBump { cx: 0.5, cy: 0.5, radius: 0.25, amplitude: 1.0 };
        let v = VectorSpec::Gradient(Box::new(a.clone()));
        let g = a.grad(0.55, 0.45);
        assert_eq!(v.value(0.55, 0.45), g);
    }

    #[test]
    fn annulus_shear_inverse_and_jacobian() {
        let phi = DiffeoSpec::AnnulusShear { cx: 0.5, cy: 0.5, r0: 0.2, r1: 0.45, angle: 0.6 };
        for (x, y) in [(0.55, 0.5), (0.75, 0.6), (0.5, 0.85), (0.98, 0.02), (0.5, 0.5)] {
            let fwd = phi.apply(x, y);
            let back = phi.apply_inverse(fwd[0], fwd[1]);
            assert!((back[0] - x).abs() < 1e-14 && (back[1] - y).abs() < 1e-14);
            let j = phi.jacobian(x, y);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            assert!((det - 1.0).abs() < 1e-12, "det {det} at ({x},{y})");
            let h = 1e-6;
            let px = phi.apply(x + h, y);
            let mx = phi.apply(x - h, y);
            let py = phi.apply(x, y + h);
            let my = phi.apply(x, y - h);
            assert!((j[0][0] - (px[0] - mx[0]) / (2.0 * h)).abs() < 1e-6);
            assert!((j[1][0] - (px[1] - mx[1]) / (2.0 * h)).abs() < 1e-6);
            assert!((j[0][1] - (py[0] - my[0]) / (2.0 * h)).abs() < 1e-6);
            assert!((j[1][1] - (py[1] - my[1]) / (2.0 * h)).abs() < 1e-6);
        }
        // Identity outside the outer radius.
        assert_eq!(phi.apply(0.99, 0.99), [0.99, 0.99]);
    }

    #[test]
    fn specs_round_trip_through_json() {
        let v = VectorSpec::Sum(vec![
            VectorSpec::Vortex { cx: 0.5, cy: 0.5, circulation: 0.3, r_core: 0.1 },
            VectorSpec::Scaled {
                factor: 0.05,
                inner: Box::new(VectorSpec::Gradient(Box::new(ScalarSpec::RadialBump {
                    cx: 0.3,
                    cy: 0.3,
                    radius: 0.2,
                    amplitude: 1.0,
                }))),
            },
        ]);
        let s = serde_json::to_string(&v).unwrap();
        let back: VectorSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
