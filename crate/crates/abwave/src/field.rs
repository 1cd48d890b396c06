//! Node-valued fields and path integrals over them.

use crate::error::{Error, Result};
use crate::geometry::{CellKind, Grid2D, LoopPath};

/// Scalar samples on the nodes of a grid, row major from the lower left.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub mx: usize,
    pub my: usize,
    pub data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid2D) -> Self {
        let (mx, my) = grid.node_count();
        ScalarField { mx, my, data: vec![0.0; mx * my] }
    }

    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> f64) -> Self {
        let (mx, my) = grid.node_count();
        let mut data = Vec::with_capacity(mx * my);
        for iy in 0..my {
            for ix in 0..mx {
                data.push(f(grid.node_x(ix), grid.node_y(iy)));
            }
        }
        ScalarField { mx, my, data }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.mx + ix]
    }

    #[inline]
    pub fn at_mut(&mut self, ix: usize, iy: usize) -> &mut f64 {
        &mut self.data[iy * self.mx + ix]
    }

    /// Bilinear value at a point.  The point must lie in a fluid cell or in a
    /// cell adjacent to the boundary staircase; obstacle and exterior cells
    /// are an error.
    pub fn bilinear(&self, grid: &Grid2D, x: f64, y: f64) -> Result<f64> {
        let (ix, iy) = grid
            .locate_cell(x, y)
            .ok_or(Error::Interpolation { x, y })?;
        match grid.cell(ix, iy) {
            CellKind::Fluid => {}
            _ => return Err(Error::Interpolation { x, y }),
        }
        let fx = ((x - grid.node_x(ix)) / grid.dx).clamp(0.0, 1.0);
        let fy = ((y - grid.node_y(iy)) / grid.dy).clamp(0.0, 1.0);
        let v00 = self.at(ix, iy);
        let v10 = self.at(ix + 1, iy);
        let v01 = self.at(ix, iy + 1);
        let v11 = self.at(ix + 1, iy + 1);
        Ok(v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Vector field stored as two scalar components.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2D {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField2D {
    pub fn zeros(grid: &Grid2D) -> Self {
        VectorField2D { x: ScalarField::zeros(grid), y: ScalarField::zeros(grid) }
    }

    pub fn from_fn(grid: &Grid2D, f: impl Fn(f64, f64) -> [f64; 2]) -> Self {
        let fx = ScalarField::from_fn(grid, |x, y| f(x, y)[0]);
        let fy = ScalarField::from_fn(grid, |x, y| f(x, y)[1]);
        VectorField2D { x: fx, y: fy }
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize) -> [f64; 2] {
        [self.x.at(ix, iy), self.y.at(ix, iy)]
    }

    pub fn bilinear(&self, grid: &Grid2D, x: f64, y: f64) -> Result<[f64; 2]> {
        Ok([self.x.bilinear(grid, x, y)?, self.y.bilinear(grid, x, y)?])
    }

    pub fn max_norm(&self) -> f64 {
        self.x
            .data
            .iter()
            .zip(&self.y.data)
            .fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)))
    }
}

/// Trapezoid quadrature of a vector field along a polyline, with bilinear
/// evaluation at the vertices.  Every vertex must be interpolable.
pub fn line_integral(field: &VectorField2D, grid: &Grid2D, path: &LoopPath) -> Result<f64> {
    let n = path.vertices.len();
    let mut vals = Vec::with_capacity(n);
    for v in &path.vertices {
        vals.push(field.bilinear(grid, v[0], v[1])?);
    }
    let nseg = if path.closed { n } else { n - 1 };
    let mut total = 0.0;
    for k in 0..nseg {
        let a = path.vertices[k];
        let b = path.vertices[(k + 1) % n];
        let d = [b[0] - a[0], b[1] - a[1]];
        let fa = vals[k];
        let fb = vals[(k + 1) % n];
        total += 0.5 * ((fa[0] + fb[0]) * d[0] + (fa[1] + fb[1]) * d[1]);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, DomainSpec, ObstacleSpec};

    #[test]
    fn bilinear_reproduces_bilinear_functions() {
        let g = build_domain(&DomainSpec::unit_square(16)).unwrap();
        let f = ScalarField::from_fn(&g, |x, y| 2.0 + 3.0 * x - y + 0.5 * x * y);
        let exact = |x: f64, y: f64| 2.0 + 3.0 * x - y + 0.5 * x * y;
        for (x, y) in [(0.13, 0.72), (0.5, 0.5), (0.0, 0.0), (1.0, 1.0), (0.999, 0.001)] {
            assert!((f.bilinear(&g, x, y).unwrap() - exact(x, y)).abs() < 1e-12);
        }
    }

    #[test]
    fn interpolation_fails_inside_obstacle_and_outside() {
        let spec = DomainSpec::unit_square(64).with_obstacle(ObstacleSpec::Disk {
            cx: 0.5,
            cy: 0.5,
            r: 0.2,
        });
        let g = build_domain(&spec).unwrap();
        let f = ScalarField::zeros(&g);
        match f.bilinear(&g, 0.5, 0.5) {
            Err(Error::Interpolation { .. }) => {}
            other => panic!("expected Interpolation, got {other:?}"),
        }
        match f.bilinear(&g, 1.5, 0.5) {
            Err(Error::Interpolation { .. }) => {}
            other => panic!("expected Interpolation, got {other:?}"),
        }
    }

    #[test]
    fn line_integral_of_constant_field_closes_to_zero() {
        let g = build_domain(&DomainSpec::unit_square(32)).unwrap();
        let v = VectorField2D::from_fn(&g, |_, _| [0.7, -0.3]);
        let path = LoopPath::circle([0.5, 0.5], 0.3, 256, 1);
        let got = line_integral(&v, &g, &path).unwrap();
        assert!(got.abs() < 1e-12, "got {got}");
    }

    #[test]
    fn line_integral_along_segment_of_uniform_field() {
        let g = build_domain(&DomainSpec::unit_square(32)).unwrap();
        let v = VectorField2D::from_fn(&g, |_, _| [2.0, 1.0]);
        let path = LoopPath::segment([0.1, 0.2], [0.9, 0.6], 33);
        let got = line_integral(&v, &g, &path).unwrap();
        // Straight segment, displacement (0.8, 0.4).
        assert!((got - (2.0 * 0.8 + 1.0 * 0.4)).abs() < 1e-12);
    }

    #[test]
    fn line_integral_rejects_path_through_obstacle() {
        let spec = DomainSpec::unit_square(64).with_obstacle(ObstacleSpec::Disk {
            cx: 0.5,
            cy: 0.5,
            r: 0.2,
        });
        let g = build_domain(&spec).unwrap();
        let v = VectorField2D::zeros(&g);
        let path = LoopPath::segment([0.1, 0.5], [0.9, 0.5], 65);
        match line_integral(&v, &g, &path) {
            Err(Error::Interpolation { .. }) => {}
            other => panic!("expected Interpolation, got {other:?}"),
        }
    }
}
