//! Physical media and their space-time metrics.
//!
//! A medium is a refraction index n(x) and a flow velocity w(x), both given in
//! closed form; the drag field v = (n^2-1) w / c is derived on the fly, never
//! cached.  Two contravariant metrics are built from a medium: the full
//! dragged-light metric and its slow-flow simplification that keeps the
//! spatial block Euclidean.  Metrics are sampled per node together with their
//! covariant inverses, and a separate closure-backed form serves consumers
//! that need values and derivatives at arbitrary points.

use crate::analytic::{ScalarSpec, VectorSpec};
use crate::error::{Error, Result};
use crate::field::{ScalarField, VectorField2D};
use crate::geometry::Grid2D;
use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

fn default_c() -> f64 {
    1.0
}

/// Medium given in closed form.  Immutable; the drag field is recomputed from
/// `refr` and `flow` on every call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub refr: ScalarSpec,
    pub flow: VectorSpec,
    #[serde(default = "default_c")]
    pub c: f64,
}

impl MediumSpec {
    pub fn still(refr: ScalarSpec) -> Self {
        MediumSpec { refr, flow: VectorSpec::Zero, c: 1.0 }
    }

    #[inline]
    pub fn n(&self, x: f64, y: f64) -> f64 {
        self.refr.value(x, y)
    }

    #[inline]
    pub fn w(&self, x: f64, y: f64) -> [f64; 2] {
        self.flow.value(x, y)
    }

    /// Drag field v = (n^2 - 1) w / c.
    #[inline]
    pub fn v(&self, x: f64, y: f64) -> [f64; 2] {
        let n = self.n(x, y);
        let w = self.w(x, y);
        let f = (n * n - 1.0) / self.c;
        [f * w[0], f * w[1]]
    }

    pub fn sample_n(&self, grid: &Grid2D) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| self.n(x, y))
    }

    pub fn sample_v(&self, grid: &Grid2D) -> VectorField2D {
        VectorField2D::from_fn(grid, |x, y| self.v(x, y))
    }

    /// Validate on the fluid nodes of a grid: positive index, subluminal
    /// flow, and the drag bounded by the flow-speed guard |v|^2 <= n^2 / 4.
    /// The guard is stricter than hyperbolicity alone so that time steps stay
    /// comfortable.
    pub fn validate(&self, grid: &Grid2D) -> Result<()> {
        let (mx, my) = grid.node_count();
        let mut worst_ratio = 0.0f64;
        for iy in 0..my {
            for ix in 0..mx {
                if grid.is_masked(ix, iy) {
                    continue;
                }
                let x = grid.node_x(ix);
                let y = grid.node_y(iy);
                let n = self.n(x, y);
                if n <= 0.0 || !n.is_finite() {
                    return Err(Error::Signature {
                        node: (ix, iy),
                        eigs: vec![n * n, -1.0, -1.0],
                    });
                }
                let w = self.w(x, y);
                let speed = w[0].hypot(w[1]);
                if speed >= self.c {
                    return Err(Error::Superluminal { speed, c: self.c });
                }
                let v = self.v(x, y);
                let ratio = (v[0] * v[0] + v[1] * v[1]) / (n * n);
                worst_ratio = worst_ratio.max(ratio);
            }
        }
        if worst_ratio > 0.25 {
            return Err(Error::Hyperbolicity { ratio: worst_ratio, limit: 0.25 });
        }
        Ok(())
    }
}

/// Node-sampled symmetric space-time metric with covariant inverse.  Indices
/// run (time, x, y); coefficients are time independent.
#[derive(Debug, Clone)]
pub struct MetricTensor {
    pub mx: usize,
    pub my: usize,
    pub g_up: Vec<Matrix3<f64>>,
    pub g_dn: Vec<Matrix3<f64>>,
    /// det of the covariant metric, 1 / det(g_up).
    pub det_g: Vec<f64>,
    /// Closure form when the metric came from an analytic construction.
    pub analytic: Option<AnalyticMetric>,
}

impl MetricTensor {
    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> &Matrix3<f64> {
        &self.g_up[iy * self.mx + ix]
    }

    #[inline]
    pub fn dn_at(&self, ix: usize, iy: usize) -> &Matrix3<f64> {
        &self.g_dn[iy * self.mx + ix]
    }

    /// Volume weight sqrt(|det g_dn|) of the divergence form.
    #[inline]
    pub fn weight(&self, ix: usize, iy: usize) -> f64 {
        self.det_g[iy * self.mx + ix].abs().sqrt()
    }

    /// Sample a closure metric on a grid, inverting per node and verifying
    /// the (+,-,-) signature on fluid nodes.
    pub fn sample(metric: &AnalyticMetric, grid: &Grid2D) -> Result<MetricTensor> {
        let (mx, my) = grid.node_count();
        let mut g_up = Vec::with_capacity(mx * my);
        let mut g_dn = Vec::with_capacity(mx * my);
        let mut det_g = Vec::with_capacity(mx * my);
        for iy in 0..my {
            for ix in 0..mx {
                let g = metric.at(grid.node_x(ix), grid.node_y(iy));
                let masked = grid.is_masked(ix, iy);
                if !masked {
                    let eigs = g.symmetric_eigenvalues();
                    let pos = eigs.iter().filter(|e| **e > 0.0).count();
                    if pos != 1 || eigs.iter().any(|e| *e == 0.0) {
                        return Err(Error::Signature {
                            node: (ix, iy),
                            eigs: eigs.iter().copied().collect(),
                        });
                    }
                }
                let det = g.determinant();
                let inv = g.try_inverse().ok_or(Error::Signature {
                    node: (ix, iy),
                    eigs: vec![det],
                })?;
                if !masked {
                    let id_err = (g * inv - Matrix3::identity()).abs().max();
                    if id_err > 1e-12 {
                        return Err(Error::Signature {
                            node: (ix, iy),
                            eigs: vec![id_err],
                        });
                    }
                }
                g_up.push(g);
                g_dn.push(inv);
                det_g.push(1.0 / det);
            }
        }
        Ok(MetricTensor {
            mx,
            my,
            g_up,
            g_dn,
            det_g,
            analytic: Some(metric.clone()),
        })
    }
}

/// Metric as a closure over the plane, with derivatives by tight central
/// differences.  Chart construction and ray tracing evaluate off-node, where
/// interpolation error would dominate; the closure keeps them clean.
#[derive(Clone)]
pub struct AnalyticMetric {
    f: Arc<dyn Fn(f64, f64) -> Matrix3<f64> + Send + Sync>,
    /// Step for derivative differences, scaled to the feature size.
    pub step: f64,
}

impl std::fmt::Debug for AnalyticMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticMetric").field("step", &self.step).finish()
    }
}

impl AnalyticMetric {
    pub fn new(f: impl Fn(f64, f64) -> Matrix3<f64> + Send + Sync + 'static) -> Self {
        AnalyticMetric { f: Arc::new(f), step: 1e-6 }
    }

    #[inline]
    pub fn at(&self, x: f64, y: f64) -> Matrix3<f64> {
        (self.f)(x, y)
    }

    /// d/dx and d/dy of every entry.
    pub fn grad(&self, x: f64, y: f64) -> [Matrix3<f64>; 2] {
        let h = self.step;
        let dx = (self.at(x + h, y) - self.at(x - h, y)) / (2.0 * h);
        let dy = (self.at(x, y + h) - self.at(x, y - h)) / (2.0 * h);
        [dx, dy]
    }

    /// Dragged-light metric of a medium: eta^{pq} + (n^2-1) u^p u^q with u
    /// the normalized flow four-velocity.
    pub fn gordon(medium: &MediumSpec) -> Self {
        let m = medium.clone();
        AnalyticMetric::new(move |x, y| {
            let n = m.n(x, y);
            let w = m.w(x, y);
            let b2 = (w[0] * w[0] + w[1] * w[1]) / (m.c * m.c);
            let gamma2 = 1.0 / (1.0 - b2);
            let u = [1.0, w[0] / m.c, w[1] / m.c];
            let f = (n * n - 1.0) * gamma2;
            let mut g = Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, -1.0, -1.0));
            for p in 0..3 {
                for q in 0..3 {
                    g[(p, q)] += f * u[p] * u[q];
                }
            }
            g
        })
    }

    /// Slow-flow metric: g^{00} = n^2, g^{0j} = v_j, spatial block exactly
    /// minus the identity.
    pub fn slow(medium: &MediumSpec) -> Self {
        let m = medium.clone();
        AnalyticMetric::new(move |x, y| {
            let n = m.n(x, y);
            let v = m.v(x, y);
            Matrix3::new(
                n * n,
                v[0],
                v[1],
                v[0],
                -1.0,
                0.0,
                v[1],
                0.0,
                -1.0,
            )
        })
    }
}

/// Dragged-light metric sampled on a grid.
pub fn gordon_metric(medium: &MediumSpec, grid: &Grid2D) -> Result<MetricTensor> {
    let (mx, my) = grid.node_count();
    for iy in 0..my {
        for ix in 0..mx {
            if grid.is_masked(ix, iy) {
                continue;
            }
            let w = medium.w(grid.node_x(ix), grid.node_y(iy));
            let speed = w[0].hypot(w[1]);
            if speed >= medium.c {
                return Err(Error::Superluminal { speed, c: medium.c });
            }
        }
    }
    MetricTensor::sample(&AnalyticMetric::gordon(medium), grid)
}

/// Slow-flow metric sampled on a grid.
pub fn slow_metric(medium: &MediumSpec, grid: &Grid2D) -> Result<MetricTensor> {
    let (mx, my) = grid.node_count();
    for iy in 0..my {
        for ix in 0..mx {
            if grid.is_masked(ix, iy) {
                continue;
            }
            let x = grid.node_x(ix);
            let y = grid.node_y(iy);
            let n = medium.n(x, y);
            let v = medium.v(x, y);
            let v2 = v[0] * v[0] + v[1] * v[1];
            if v2 >= n * n {
                return Err(Error::Signature {
                    node: (ix, iy),
                    eigs: vec![n * n - v2, -1.0, -1.0],
                });
            }
        }
    }
    MetricTensor::sample(&AnalyticMetric::slow(medium), grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicityReport {
    /// Coordinate time is timelike: g^{00} > 0 everywhere.
    pub timelike_ok: bool,
    /// Negated spatial block is positive definite everywhere.
    pub elliptic_ok: bool,
    /// Smallest eigenvalue of the negated spatial block over fluid nodes.
    pub worst_margin: f64,
}

/// Diagnostic pass over fluid nodes; never fails.
pub fn check_hyperbolicity(metric: &MetricTensor, grid: &Grid2D) -> HyperbolicityReport {
    let mut timelike_ok = true;
    let mut elliptic_ok = true;
    let mut worst = f64::INFINITY;
    let (mx, my) = grid.node_count();
    for iy in 0..my {
        for ix in 0..mx {
            if grid.is_masked(ix, iy) {
                continue;
            }
            let g = metric.at(ix, iy);
            if g[(0, 0)] <= 0.0 {
                timelike_ok = false;
            }
            let s = nalgebra::Matrix2::new(-g[(1, 1)], -g[(1, 2)], -g[(2, 1)], -g[(2, 2)]);
            let eigs = s.symmetric_eigenvalues();
            let min_eig = eigs[0].min(eigs[1]);
            worst = worst.min(min_eig);
            if min_eig <= 0.0 {
                elliptic_ok = false;
            }
        }
    }
    HyperbolicityReport {
        timelike_ok,
        elliptic_ok,
        worst_margin: if worst.is_finite() { worst } else { 0.0 },
    }
}
