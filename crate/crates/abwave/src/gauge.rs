//! Equivalence-class machinery for drag fields.
//!
//! Two drag fields describe the same physics when they differ by the gradient
//! of a potential that vanishes on the outer boundary.  This module applies
//! such shifts, reconstructs the potential from a field difference when one
//! exists (the witness), and provides the coarser phase comparator that only
//! looks at loop integrals modulo 2 pi.
//!
//! Gradients here are discrete (centered differences, one sided at the grid
//! edge).  Centered curl annihilates centered gradients identically, so for a
//! difference produced by `apply_gauge` the witness checks are exact up to
//! rounding; analytically sampled fields carry an O(h^2) consistency error
//! instead, and the tolerances accept either.

use crate::error::{Error, Result};
use crate::field::{line_integral, ScalarField, VectorField2D};
use crate::geometry::{Grid2D, LoopPath, NodeKind};

/// Potential with its derived discrete gradient.  The potential vanishes on
/// the outer boundary up to the tolerance it was constructed with.
#[derive(Debug, Clone)]
pub struct GaugeFunction {
    pub a: ScalarField,
    pub grad_a: VectorField2D,
}

/// Centered-difference gradient, second-order one-sided at the grid edge.
pub fn discrete_gradient(grid: &Grid2D, a: &ScalarField) -> VectorField2D {
    let (mx, my) = grid.node_count();
    let mut gx = ScalarField { mx, my, data: vec![0.0; mx * my] };
    let mut gy = ScalarField { mx, my, data: vec![0.0; mx * my] };
    let (dx, dy) = (grid.dx, grid.dy);
    for iy in 0..my {
        for ix in 0..mx {
            let vx = if ix == 0 {
                (-3.0 * a.at(0, iy) + 4.0 * a.at(1, iy) - a.at(2, iy)) / (2.0 * dx)
            } else if ix == mx - 1 {
                (3.0 * a.at(mx - 1, iy) - 4.0 * a.at(mx - 2, iy) + a.at(mx - 3, iy))
                    / (2.0 * dx)
            } else {
                (a.at(ix + 1, iy) - a.at(ix - 1, iy)) / (2.0 * dx)
            };
            let vy = if iy == 0 {
                (-3.0 * a.at(ix, 0) + 4.0 * a.at(ix, 1) - a.at(ix, 2)) / (2.0 * dy)
            } else if iy == my - 1 {
                (3.0 * a.at(ix, my - 1) - 4.0 * a.at(ix, my - 2) + a.at(ix, my - 3))
                    / (2.0 * dy)
            } else {
                (a.at(ix, iy + 1) - a.at(ix, iy - 1)) / (2.0 * dy)
            };
            *gx.at_mut(ix, iy) = vx;
            *gy.at_mut(ix, iy) = vy;
        }
    }
    VectorField2D { x: gx, y: gy }
}

impl GaugeFunction {
    /// Wrap a sampled potential, requiring it to vanish on the outer boundary
    /// within `boundary_tol`.
    pub fn from_field(grid: &Grid2D, a: ScalarField, boundary_tol: f64) -> Result<Self> {
        let worst = grid
            .outer_boundary
            .iter()
            .fold(0.0f64, |m, bn| m.max(a.at(bn.ix, bn.iy).abs()));
        if worst > boundary_tol {
            return Err(Error::Boundary { spread: worst });
        }
        let grad_a = discrete_gradient(grid, &a);
        Ok(GaugeFunction { a, grad_a })
    }

    /// Sample a closed-form potential onto the grid.
    pub fn from_spec(grid: &Grid2D, spec: &crate::analytic::ScalarSpec) -> Result<Self> {
        let a = ScalarField::from_fn(grid, |x, y| spec.value(x, y));
        Self::from_field(grid, a, 1e-12 * (1.0 + spec.amplitude_bound()))
    }

    pub fn negated(&self) -> Self {
        let mut a = self.a.clone();
        for v in &mut a.data {
            *v = -*v;
        }
        let mut g = self.grad_a.clone();
        for v in &mut g.x.data {
            *v = -*v;
        }
        for v in &mut g.y.data {
            *v = -*v;
        }
        GaugeFunction { a, grad_a: g }
    }
}

/// Shift a drag field by the gradient of the potential, keeping it inside the
/// hyperbolicity bound of the ambient index.
pub fn apply_gauge(
    grid: &Grid2D,
    v: &VectorField2D,
    gauge: &GaugeFunction,
    refr: &ScalarField,
) -> Result<VectorField2D> {
    let (mx, my) = grid.node_count();
    let mut out = v.clone();
    for iy in 0..my {
        for ix in 0..mx {
            *out.x.at_mut(ix, iy) -= gauge.grad_a.x.at(ix, iy);
            *out.y.at_mut(ix, iy) -= gauge.grad_a.y.at(ix, iy);
        }
    }
    let mut worst = 0.0f64;
    for iy in 0..my {
        for ix in 0..mx {
            if grid.is_masked(ix, iy) {
                continue;
            }
            let [vx, vy] = out.at(ix, iy);
            let n = refr.at(ix, iy);
            worst = worst.max((vx * vx + vy * vy) / (n * n));
        }
    }
    if worst >= 1.0 {
        return Err(Error::Hyperbolicity { ratio: worst, limit: 1.0 });
    }
    Ok(out)
}

/// Tolerances for the class witness.  `None` picks a default scaled to the
/// field size and, where discretization error enters, to h^2.
#[derive(Debug, Clone, Copy, Default)]
pub struct WitnessOptions {
    pub tol_curl: Option<f64>,
    pub tol_closure: Option<f64>,
    pub tol_boundary: Option<f64>,
    pub tol_holonomy: Option<f64>,
}

/// Representative loop around one obstacle, clear of the staircase.
pub fn loop_around_obstacle(grid: &Grid2D, k: usize) -> LoopPath {
    let obs = &grid.obstacles[k];
    let r = obs.enclosing_radius() + 4.0 * grid.dx.max(grid.dy);
    LoopPath::circle(obs.centroid(), r, 512, 1)
}

fn eligible(kind: NodeKind) -> bool {
    matches!(
        kind,
        NodeKind::Interior | NodeKind::OuterBoundary | NodeKind::ObstacleBoundary
    )
}

/// Decide whether two drag fields differ by an admissible potential gradient,
/// and if so return that potential (normalized to zero boundary mean).
///
/// Checks run in order: pointwise curl of the difference, loop integrals
/// around every obstacle, single-valuedness of the integrated potential, and
/// constancy on the outer boundary.  Each failure maps to its own error so
/// callers can tell "genuinely different class" from "not a gradient at all".
pub fn same_class_witness(
    grid: &Grid2D,
    v: &VectorField2D,
    vhat: &VectorField2D,
    opts: WitnessOptions,
) -> Result<GaugeFunction> {
    let (mx, my) = grid.node_count();
    let mut d = v.clone();
    for i in 0..d.x.data.len() {
        d.x.data[i] -= vhat.x.data[i];
        d.y.data[i] -= vhat.y.data[i];
    }
    let max_d = d.max_norm();
    let h = grid.dx.max(grid.dy);
    let tol_curl = opts.tol_curl.unwrap_or(1e-6 * max_d + 1e-14);
    let tol_closure = opts
        .tol_closure
        .unwrap_or(100.0 * h * h * max_d + 1e-12);
    let tol_boundary = opts
        .tol_boundary
        .unwrap_or(100.0 * h * h * max_d * (1.0 + grid.diameter()) + 1e-12);
    let tol_holonomy = opts
        .tol_holonomy
        .unwrap_or(100.0 * h * h * max_d * (1.0 + grid.diameter()) + 1e-12);

    // Pointwise closedness on full interior stencils.
    let mut max_curl = 0.0f64;
    for iy in 1..my - 1 {
        for ix in 1..mx - 1 {
            if grid.node(ix, iy) != NodeKind::Interior {
                continue;
            }
            if [(ix + 1, iy), (ix - 1, iy), (ix, iy + 1), (ix, iy - 1)]
                .iter()
                .any(|&(jx, jy)| !eligible(grid.node(jx, jy)))
            {
                continue;
            }
            let curl = (d.y.at(ix + 1, iy) - d.y.at(ix - 1, iy)) / (2.0 * grid.dx)
                - (d.x.at(ix, iy + 1) - d.x.at(ix, iy - 1)) / (2.0 * grid.dy);
            max_curl = max_curl.max(curl.abs());
        }
    }
    if max_curl > tol_curl {
        return Err(Error::Curl { max_curl, tol: tol_curl });
    }

    // One representative loop per obstacle.
    for k in 0..grid.obstacles.len() {
        let path = loop_around_obstacle(grid, k);
        let hol = line_integral(&d, grid, &path)?;
        if hol.abs() > tol_holonomy {
            return Err(Error::Holonomy { obstacle: k, value: hol });
        }
    }

    // Integrate the potential over a spanning tree from a boundary anchor.
    let anchor = (grid.outer_boundary[0].ix, grid.outer_boundary[0].iy);
    let mut a = ScalarField { mx, my, data: vec![0.0; mx * my] };
    let mut seen = vec![false; mx * my];
    let mut queue = std::collections::VecDeque::new();
    seen[grid.node_idx(anchor.0, anchor.1)] = true;
    queue.push_back(anchor);
    while let Some((ix, iy)) = queue.pop_front() {
        let here = a.at(ix, iy);
        let push = |jx: usize, jy: usize, step: f64, seen: &mut Vec<bool>,
                        queue: &mut std::collections::VecDeque<(usize, usize)>,
                        a: &mut ScalarField| {
            if !eligible(grid.node(jx, jy)) {
                return;
            }
            let idx = grid.node_idx(jx, jy);
            if seen[idx] {
                return;
            }
            seen[idx] = true;
            *a.at_mut(jx, jy) = here + step;
            queue.push_back((jx, jy));
        };
        if ix + 1 < mx {
            let step = 0.5 * (d.x.at(ix, iy) + d.x.at(ix + 1, iy)) * grid.dx;
            push(ix + 1, iy, step, &mut seen, &mut queue, &mut a);
        }
        if ix > 0 {
            let step = -0.5 * (d.x.at(ix, iy) + d.x.at(ix - 1, iy)) * grid.dx;
            push(ix - 1, iy, step, &mut seen, &mut queue, &mut a);
        }
        if iy + 1 < my {
            let step = 0.5 * (d.y.at(ix, iy) + d.y.at(ix, iy + 1)) * grid.dy;
            push(ix, iy + 1, step, &mut seen, &mut queue, &mut a);
        }
        if iy > 0 {
            let step = -0.5 * (d.y.at(ix, iy) + d.y.at(ix, iy - 1)) * grid.dy;
            push(ix, iy - 1, step, &mut seen, &mut queue, &mut a);
        }
    }

    // Every remaining edge must agree with the integrated values: a large
    // residual means the "potential" is multivalued.
    let mut worst_closure = 0.0f64;
    for iy in 0..my {
        for ix in 0..mx {
            if !seen[grid.node_idx(ix, iy)] {
                continue;
            }
            if ix + 1 < mx && seen[grid.node_idx(ix + 1, iy)] {
                let step = 0.5 * (d.x.at(ix, iy) + d.x.at(ix + 1, iy)) * grid.dx;
                worst_closure =
                    worst_closure.max((a.at(ix + 1, iy) - a.at(ix, iy) - step).abs());
            }
            if iy + 1 < my && seen[grid.node_idx(ix, iy + 1)] {
                let step = 0.5 * (d.y.at(ix, iy) + d.y.at(ix, iy + 1)) * grid.dy;
                worst_closure =
                    worst_closure.max((a.at(ix, iy + 1) - a.at(ix, iy) - step).abs());
            }
        }
    }
    if worst_closure > tol_closure {
        return Err(Error::Holonomy { obstacle: usize::MAX, value: worst_closure });
    }

    // Constant on the outer boundary; normalize that constant away.
    let mut mean = 0.0;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for bn in &grid.outer_boundary {
        let val = a.at(bn.ix, bn.iy);
        mean += val;
        lo = lo.min(val);
        hi = hi.max(val);
    }
    mean /= grid.outer_boundary.len() as f64;
    if hi - lo > tol_boundary {
        return Err(Error::Boundary { spread: hi - lo });
    }
    for iy in 0..my {
        for ix in 0..mx {
            if seen[grid.node_idx(ix, iy)] {
                *a.at_mut(ix, iy) -= mean;
            }
        }
    }
    GaugeFunction::from_field(grid, a, tol_boundary)
}

/// Phase comparator: true when every supplied loop sees the same circulation
/// modulo 2 pi, i.e. the exponentiated loop phases agree within `tol`.
pub fn wu_yang_equal(
    grid: &Grid2D,
    a: &VectorField2D,
    aprime: &VectorField2D,
    loops: &[LoopPath],
    tol: f64,
) -> Result<bool> {
    for path in loops {
        let delta = line_integral(a, grid, path)? - line_integral(aprime, grid, path)?;
        let turns = delta / std::f64::consts::TAU;
        let defect = (turns - turns.round()) * std::f64::consts::TAU;
        if defect.abs() > tol {
            return Ok(false);
        }
    }
    Ok(true)
}
