//! Space-time coordinate changes of the wave operator.
//!
//! The admissible maps combine a time shift generated by a scalar a(x)
//! vanishing on the outer boundary with a spatial diffeomorphism fixing the
//! outer boundary. Contravariant metric components transform as J g J^T
//! with J the space-time Jacobi matrix of the map.

use nalgebra::Matrix3;

use crate::analytic::{DiffeoSpec, ScalarSpec};
use crate::error::{Error, Result};
use crate::geometry::Grid2D;
use crate::media::{AnalyticMetric, MetricTensor};

/// Pull the metric through (t, x) -> (t + a(x), phi(x)).
///
/// The returned metric carries its own analytic closure, so it can be
/// resampled or fed to chart construction. Fails if the map moves the outer
/// boundary, if the spatial Jacobian determinant is not positive on fluid
/// nodes, or if the transformed metric loses its signature.
pub fn transform_operator(
    metric: &MetricTensor,
    gauge: &ScalarSpec,
    phi: &DiffeoSpec,
    grid: &Grid2D,
) -> Result<MetricTensor> {
    let base = metric
        .analytic
        .clone()
        .ok_or_else(|| Error::Chart("coordinate transform needs an analytic metric".into()))?;

    let tol = 1e-10 * (1.0 + gauge.amplitude_bound());
    let mut spread = 0.0_f64;
    for bn in &grid.outer_boundary {
        let (x, y) = (grid.node_x(bn.ix), grid.node_y(bn.iy));
        let [px, py] = phi.apply(x, y);
        spread = spread
            .max(gauge.value(x, y).abs())
            .max((px - x).hypot(py - y));
    }
    if spread > tol {
        return Err(Error::Boundary { spread });
    }

    let (mx, my) = grid.node_count();
    for iy in 0..my {
        for ix in 0..mx {
            if grid.is_masked(ix, iy) {
                continue;
            }
            let (x, y) = (grid.node_x(ix), grid.node_y(iy));
            let j = phi.jacobian(x, y);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det <= 0.0 {
                return Err(Error::Jacobian { x, y, det });
            }
        }
    }

    let gauge = gauge.clone();
    let phi_c = phi.clone();
    let mapped = AnalyticMetric::new(move |xh, yh| {
        let [x, y] = phi_c.apply_inverse(xh, yh);
        let g = base.at(x, y);
        let [ax, ay] = gauge.grad(x, y);
        let dj = phi_c.jacobian(x, y);
        let j = Matrix3::new(
            1.0, ax, ay, //
            0.0, dj[0][0], dj[0][1], //
            0.0, dj[1][0], dj[1][1],
        );
        j * g * j.transpose()
    });
    MetricTensor::sample(&mapped, grid)
}

/// Covariant slow-form metric entries built from (n, v):
/// g_00 = n^-2, g_0j = n^-2 v_j, g_jk = -delta.
fn slow_covariant(n: f64, v: [f64; 2]) -> Matrix3<f64> {
    let ni = 1.0 / (n * n);
    Matrix3::new(
        ni,
        ni * v[0],
        ni * v[1],
        ni * v[0],
        -1.0,
        0.0,
        ni * v[1],
        0.0,
        -1.0,
    )
}

/// Quadratic-form difference of the slow line elements under the time shift
/// dt -> dt + grad a . dx, as a symmetric 3x3 matrix in (dt, dx1, dx2).
///
/// Entry (0,0) vanishing is the matching of the n coefficients; entries
/// (0,j) vanishing match the flow components; the spatial block is the
/// residual obstruction, zero only when grad a . (grad a - 2 v_hat) = 0.
pub fn line_element_mismatch(
    n: f64,
    v: [f64; 2],
    n_hat: f64,
    v_hat: [f64; 2],
    grad_a: [f64; 2],
) -> Matrix3<f64> {
    let g = slow_covariant(n, v);
    let gh = slow_covariant(n_hat, v_hat);
    // dt_hat = dt + a_x dx + a_y dy pulls the hatted form back to (dt, dx).
    let j = Matrix3::new(
        1.0, grad_a[0], grad_a[1], //
        0.0, 1.0, 0.0, //
        0.0, 0.0, 1.0,
    );
    j.transpose() * gh * j - g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::VectorSpec;
    use crate::geometry::{build_domain, DomainSpec, ObstacleSpec};
    use crate::media::{slow_metric, MediumSpec};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn annulus_domain(res: usize) -> Grid2D {
        let spec = DomainSpec::unit_square(res).with_obstacle(ObstacleSpec::Disk {
            cx: 0.5,
            cy: 0.5,
            r: 0.14,
        });
        build_domain(&spec).unwrap()
    }

    fn vortex_medium() -> MediumSpec {
        MediumSpec {
            refr: ScalarSpec::Constant { value: 1.3 },
            flow: VectorSpec::Vortex {
                cx: 0.5,
                cy: 0.5,
                circulation: 0.25,
                r_core: 0.14,
            },
            c: 1.0,
        }
    }

    #[test]
    fn identity_map_keeps_metric_bitwise() {
        let grid = annulus_domain(48);
        let metric = slow_metric(&vortex_medium(), &grid).unwrap();
        let moved = transform_operator(
            &metric,
            &ScalarSpec::Constant { value: 0.0 },
            &DiffeoSpec::Identity,
            &grid,
        )
        .unwrap();
        for i in 0..metric.g_up.len() {
            assert_eq!(metric.g_up[i], moved.g_up[i], "node {i}");
        }
    }

    #[test]
    fn time_shift_moves_only_the_flow_row() {
        let grid = annulus_domain(48);
        let medium = vortex_medium();
        let metric = slow_metric(&medium, &grid).unwrap();
        let a = ScalarSpec::RadialBump {
            cx: 0.42,
            cy: 0.58,
            radius: 0.22,
            amplitude: 0.04,
        };
        let moved = transform_operator(&metric, &a, &DiffeoSpec::Identity, &grid).unwrap();
        for iy in 0..metric.my {
            for ix in 0..metric.mx {
                if grid.is_masked(ix, iy) {
                    continue;
                }
                let (x, y) = (grid.node_x(ix), grid.node_y(iy));
                let [ax, ay] = a.grad(x, y);
                let g = metric.at(ix, iy);
                let gh = moved.at(ix, iy);
                assert!((gh[(0, 1)] - (g[(0, 1)] - ax)).abs() < 1e-12);
                assert!((gh[(0, 2)] - (g[(0, 2)] - ay)).abs() < 1e-12);
                for j in 1..3 {
                    for k in 1..3 {
                        assert!((gh[(j, k)] - g[(j, k)]).abs() < 1e-15, "spatial block");
                    }
                }
                let want00 = g[(0, 0)] + 2.0 * (ax * g[(0, 1)] + ay * g[(0, 2)])
                    - (ax * ax + ay * ay);
                assert!((gh[(0, 0)] - want00).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shear_pullback_preserves_line_element() {
        let grid = annulus_domain(48);
        let medium = vortex_medium();
        let metric = slow_metric(&medium, &grid).unwrap();
        let a = ScalarSpec::RadialBump {
            cx: 0.5,
            cy: 0.5,
            radius: 0.3,
            amplitude: 0.02,
        };
        let phi = DiffeoSpec::AnnulusShear {
            cx: 0.5,
            cy: 0.5,
            r0: 0.17,
            r1: 0.4,
            angle: 0.5,
        };
        let moved = transform_operator(&metric, &a, &phi, &grid).unwrap();
        let base = metric.analytic.as_ref().unwrap();
        let mapped = moved.analytic.as_ref().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tried = 0;
        while tried < 20 {
            let x = rng.gen_range(0.1..0.9);
            let y = rng.gen_range(0.1..0.9);
            if !grid.fluid_point(x, y) {
                continue;
            }
            tried += 1;
            let g_dn = base.at(x, y).try_inverse().unwrap();
            let [xh, yh] = phi.apply(x, y);
            let gh_dn = mapped.at(xh, yh).try_inverse().unwrap();
            let [ax, ay] = a.grad(x, y);
            let dj = phi.jacobian(x, y);
            let j = Matrix3::new(
                1.0, ax, ay, //
                0.0, dj[0][0], dj[0][1], //
                0.0, dj[1][0], dj[1][1],
            );
            for _ in 0..3 {
                let d = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                );
                let dh = j * d;
                let lhs = (dh.transpose() * gh_dn * dh)[(0, 0)];
                let rhs = (d.transpose() * g_dn * d)[(0, 0)];
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()),
                    "pullback mismatch at ({x:.3},{y:.3}): {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn moving_the_outer_boundary_is_rejected() {
        let grid = annulus_domain(32);
        let metric = slow_metric(&vortex_medium(), &grid).unwrap();
        // Shear band extends past the outer boundary corners.
        let phi = DiffeoSpec::AnnulusShear {
            cx: 0.5,
            cy: 0.5,
            r0: 0.2,
            r1: 1.2,
            angle: 0.4,
        };
        match transform_operator(&metric, &ScalarSpec::Constant { value: 0.0 }, &phi, &grid) {
            Err(Error::Boundary { .. }) => {}
            other => panic!("expected boundary error, got {other:?}"),
        }
    }

    #[test]
    fn line_element_matching_pins_down_flow_and_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let n = rng.gen_range(1.0..2.0);
            let v = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            let ga = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];

            // Independent hatted fields: the mismatch entries must equal the
            // generic matching expressions.
            let nh = rng.gen_range(1.0..2.0);
            let vh = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
            let m = line_element_mismatch(n, v, nh, vh, ga);
            let (ni, nhi) = (1.0 / (n * n), 1.0 / (nh * nh));
            assert!((m[(0, 0)] - (nhi - ni)).abs() < 1e-12);
            for j in 0..2 {
                let want = nhi * ga[j] + nhi * vh[j] - ni * v[j];
                assert!((m[(0, j + 1)] - want).abs() < 1e-12);
                for k in 0..2 {
                    let want_jk = nhi * ga[j] * ga[k] + nhi * (vh[j] * ga[k] + vh[k] * ga[j]);
                    assert!((m[(j + 1, k + 1)] - want_jk).abs() < 1e-12);
                }
            }

            // The gauge choice v_hat = v - grad a matches the time row but
            // leaves the spatial obstruction unless grad a.(grad a - 2 v_hat)
            // vanishes.
            let vg = [v[0] - ga[0], v[1] - ga[1]];
            let mg = line_element_mismatch(n, v, n, vg, ga);
            assert!(mg[(0, 0)].abs() < 1e-15);
            assert!(mg[(0, 1)].abs() < 1e-15 && mg[(0, 2)].abs() < 1e-15);

            // Flipping a gradient flow closes the full system: v = grad b,
            // a = 2b gives v_hat = -v and a zero mismatch matrix.
            let mf = line_element_mismatch(n, v, n, [-v[0], -v[1]], [2.0 * v[0], 2.0 * v[1]]);
            assert!(mf.abs().max() < 1e-14, "sign flip must close: {mf}");
        }
    }
}
