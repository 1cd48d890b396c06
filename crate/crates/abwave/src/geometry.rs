//! Grids on multiply connected planar domains.
//!
//! A domain is an outer rectangle or disk minus a set of circular or
//! rectangular obstacles.  Cells are classified fluid / obstacle / exterior by
//! their centers; obstacles are therefore staircase approximations, while a
//! rectangular outer boundary is grid aligned and exact.  Fields live on grid
//! nodes.  The outer boundary is an ordered, counterclockwise list of nodes
//! carrying arclength, outward normal and tangent; the same structure is what
//! the DN extraction samples.

use crate::error::{Error, Result};
use crate::util::wrap_to_pi;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObstacleSpec {
    Disk { cx: f64, cy: f64, r: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl ObstacleSpec {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            ObstacleSpec::Disk { cx, cy, r } => {
                (x - cx) * (x - cx) + (y - cy) * (y - cy) < r * r
            }
            ObstacleSpec::Rect { x0, y0, x1, y1 } => x > x0 && x < x1 && y > y0 && y < y1,
        }
    }

    pub fn centroid(&self) -> [f64; 2] {
        match *self {
            ObstacleSpec::Disk { cx, cy, .. } => [cx, cy],
            ObstacleSpec::Rect { x0, y0, x1, y1 } => [0.5 * (x0 + x1), 0.5 * (y0 + y1)],
        }
    }

    /// Radius of a circle around the centroid that encloses the obstacle.
    pub fn enclosing_radius(&self) -> f64 {
        match *self {
            ObstacleSpec::Disk { r, .. } => r,
            ObstacleSpec::Rect { x0, y0, x1, y1 } => 0.5 * ((x1 - x0).hypot(y1 - y0)),
        }
    }

    fn min_span(&self) -> f64 {
        match *self {
            ObstacleSpec::Disk { r, .. } => 2.0 * r,
            ObstacleSpec::Rect { x0, y0, x1, y1 } => (x1 - x0).min(y1 - y0),
        }
    }

    /// Distance between obstacle boundaries, negative on overlap.
    fn gap_to(&self, other: &ObstacleSpec) -> f64 {
        // Conservative: distance of enclosing circles for mixed shapes.
        match (*self, *other) {
            (ObstacleSpec::Disk { cx, cy, r }, ObstacleSpec::Disk { cx: cx2, cy: cy2, r: r2 }) => {
                (cx - cx2).hypot(cy - cy2) - r - r2
            }
            _ => {
                let a = self.centroid();
                let b = other.centroid();
                (a[0] - b[0]).hypot(a[1] - b[1]) - self.enclosing_radius() - other.enclosing_radius()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OuterSpec {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
}

impl OuterSpec {
    pub fn bounding_box(&self) -> [f64; 4] {
        match *self {
            OuterSpec::Rect { x0, y0, x1, y1 } => [x0, y0, x1, y1],
            OuterSpec::Disk { cx, cy, r } => [cx - r, cy - r, cx + r, cy + r],
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            OuterSpec::Rect { x0, y0, x1, y1 } => x > x0 && x < x1 && y > y0 && y < y1,
            OuterSpec::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) < r * r,
        }
    }

    /// Distance from an obstacle boundary to the outer boundary, negative if
    /// the obstacle pokes out.
    fn clearance(&self, obs: &ObstacleSpec) -> f64 {
        let c = obs.centroid();
        let re = obs.enclosing_radius();
        match *self {
            OuterSpec::Rect { x0, y0, x1, y1 } => {
                let d = (c[0] - x0).min(x1 - c[0]).min(c[1] - y0).min(y1 - c[1]);
                d - re
            }
            OuterSpec::Disk { cx, cy, r } => r - ((c[0] - cx).hypot(c[1] - cy) + re),
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            OuterSpec::Rect { x0, y0, x1, y1 } => (x1 - x0).hypot(y1 - y0),
            OuterSpec::Disk { r, .. } => 2.0 * r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub outer: OuterSpec,
    pub obstacles: Vec<ObstacleSpec>,
    /// Nodes per side along x; cell size is isotropic.
    pub resolution: usize,
}

impl DomainSpec {
    pub fn unit_square(resolution: usize) -> Self {
        DomainSpec {
            outer: OuterSpec::Rect { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 },
            obstacles: Vec::new(),
            resolution,
        }
    }

    pub fn with_obstacle(mut self, obs: ObstacleSpec) -> Self {
        self.obstacles.push(obs);
        self
    }

    /// Same domain with the mesh width halved (nodes 2N-1: coarse nodes are a
    /// subset of the fine nodes).
    pub fn refined(&self) -> Self {
        DomainSpec { resolution: 2 * self.resolution - 1, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Fluid,
    Obstacle(usize),
    Exterior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Fluid node updated by the solver.
    Interior,
    /// Node on the outer boundary: Dirichlet data lives here.
    OuterBoundary,
    /// Staircase node adjacent to an obstacle cell: homogeneous Dirichlet.
    ObstacleBoundary,
    /// Node surrounded by obstacle cells.
    ObstacleInterior,
    /// Node outside the domain (disk outer boundary only).
    Exterior,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundaryNode {
    pub ix: usize,
    pub iy: usize,
    /// Arclength from the traversal start, counterclockwise.
    pub s: f64,
    /// Outward unit normal (averaged at staircase corners).
    pub normal: [f64; 2],
    /// Unit tangent in traversal direction.
    pub tangent: [f64; 2],
    /// Inward unit step along the dominant normal axis.
    pub inward: (i32, i32),
    pub corner: bool,
}

#[derive(Debug, Clone)]
pub struct Grid2D {
    /// Cell counts; node counts are nx+1, ny+1.
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub origin: [f64; 2],
    pub outer: OuterSpec,
    pub obstacles: Vec<ObstacleSpec>,
    cells: Vec<CellKind>,
    nodes: Vec<NodeKind>,
    pub outer_boundary: Vec<BoundaryNode>,
    /// Total length of the outer boundary polygon.
    pub boundary_len: f64,
    /// Ordered node rings around each obstacle.
    pub obstacle_boundaries: Vec<Vec<(usize, usize)>>,
    /// Node index -> position in `outer_boundary`, if any.
    outer_index: Vec<Option<u32>>,
}

/// Rasterize and classify a domain.  Preconditions: obstacles keep at least a
/// two cell gap from each other and from the outer boundary, and every
/// obstacle spans at least four cells across.
pub fn build_domain(spec: &DomainSpec) -> Result<Grid2D> {
    if spec.resolution < 8 {
        return Err(Error::Resolution(format!(
            "resolution {} too small",
            spec.resolution
        )));
    }
    let bb = spec.outer.bounding_box();
    let nx = spec.resolution - 1;
    let dx = (bb[2] - bb[0]) / nx as f64;
    let ny = ((bb[3] - bb[1]) / dx).round().max(1.0) as usize;
    let dy = (bb[3] - bb[1]) / ny as f64;
    let h = dx.max(dy);

    for (i, obs) in spec.obstacles.iter().enumerate() {
        if obs.min_span() < 4.0 * h {
            return Err(Error::Resolution(format!(
                "obstacle {i} spans {:.4} < 4 cells ({:.4})",
                obs.min_span(),
                4.0 * h
            )));
        }
        let cl = spec.outer.clearance(obs);
        if cl < 2.0 * h {
            return Err(Error::Overlap(format!(
                "obstacle {i} clearance {cl:.4} to the outer boundary < 2 cells"
            )));
        }
        for (j, other) in spec.obstacles.iter().enumerate().skip(i + 1) {
            let gap = obs.gap_to(other);
            if gap < 2.0 * h {
                return Err(Error::Overlap(format!(
                    "obstacles {i} and {j} gap {gap:.4} < 2 cells"
                )));
            }
        }
    }

    let mut cells = vec![CellKind::Fluid; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let x = bb[0] + (ix as f64 + 0.5) * dx;
            let y = bb[1] + (iy as f64 + 0.5) * dy;
            let kind = if !spec.outer.contains(x, y) {
                CellKind::Exterior
            } else if let Some(k) = spec.obstacles.iter().position(|o| o.contains(x, y)) {
                CellKind::Obstacle(k)
            } else {
                CellKind::Fluid
            };
            cells[iy * nx + ix] = kind;
        }
    }

    let mut grid = Grid2D {
        nx,
        ny,
        dx,
        dy,
        origin: [bb[0], bb[1]],
        outer: spec.outer,
        obstacles: spec.obstacles.clone(),
        cells,
        nodes: Vec::new(),
        outer_boundary: Vec::new(),
        boundary_len: 0.0,
        obstacle_boundaries: Vec::new(),
        outer_index: Vec::new(),
    };
    grid.classify_nodes();
    grid.trace_outer_boundary()?;
    grid.trace_obstacle_boundaries()?;
    Ok(grid)
}

impl Grid2D {
    #[inline]
    pub fn node_count(&self) -> (usize, usize) {
        (self.nx + 1, self.ny + 1)
    }

    #[inline]
    pub fn node_x(&self, ix: usize) -> f64 {
        self.origin[0] + ix as f64 * self.dx
    }

    #[inline]
    pub fn node_y(&self, iy: usize) -> f64 {
        self.origin[1] + iy as f64 * self.dy
    }

    #[inline]
    pub fn node_idx(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    #[inline]
    pub fn cell(&self, ix: usize, iy: usize) -> CellKind {
        self.cells[iy * self.nx + ix]
    }

    #[inline]
    pub fn node(&self, ix: usize, iy: usize) -> NodeKind {
        self.nodes[self.node_idx(ix, iy)]
    }

    pub fn outer_position(&self, ix: usize, iy: usize) -> Option<usize> {
        self.outer_index[self.node_idx(ix, iy)].map(|v| v as usize)
    }

    /// Whether a solution value is pinned to zero at this node.
    #[inline]
    pub fn is_masked(&self, ix: usize, iy: usize) -> bool {
        matches!(
            self.node(ix, iy),
            NodeKind::ObstacleBoundary | NodeKind::ObstacleInterior | NodeKind::Exterior
        )
    }

    pub fn obstacle_cell_count(&self, k: usize) -> usize {
        self.cells
            .iter()
            .filter(|c| **c == CellKind::Obstacle(k))
            .count()
    }

    pub fn diameter(&self) -> f64 {
        self.outer.diameter()
    }

    /// Locate the cell containing a point; points on the outer edge of the
    /// bounding box are clamped inward.
    pub fn locate_cell(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = (x - self.origin[0]) / self.dx;
        let fy = (y - self.origin[1]) / self.dy;
        let eps = 1e-9;
        if fx < -eps || fy < -eps || fx > self.nx as f64 + eps || fy > self.ny as f64 + eps {
            return None;
        }
        let ix = (fx.floor() as isize).clamp(0, self.nx as isize - 1) as usize;
        let iy = (fy.floor() as isize).clamp(0, self.ny as isize - 1) as usize;
        Some((ix, iy))
    }

    /// Check that a point lies in the fluid region (fluid cell of the grid).
    pub fn fluid_point(&self, x: f64, y: f64) -> bool {
        match self.locate_cell(x, y) {
            Some((ix, iy)) => self.cell(ix, iy) == CellKind::Fluid,
            None => false,
        }
    }

    fn classify_nodes(&mut self) {
        let (mx, my) = self.node_count();
        let mut nodes = vec![NodeKind::Interior; mx * my];
        for iy in 0..my {
            for ix in 0..mx {
                let mut any_fluid = false;
                let mut any_obst = false;
                let mut all_obst = true;
                let mut any_ext = false;
                let mut all_ext = true;
                for (cx, cy) in [
                    (ix as isize - 1, iy as isize - 1),
                    (ix as isize, iy as isize - 1),
                    (ix as isize - 1, iy as isize),
                    (ix as isize, iy as isize),
                ] {
                    if cx < 0 || cy < 0 || cx >= self.nx as isize || cy >= self.ny as isize {
                        // Outside the array counts as exterior only for disk
                        // outers; for rectangles the perimeter handles it.
                        continue;
                    }
                    match self.cell(cx as usize, cy as usize) {
                        CellKind::Fluid => {
                            any_fluid = true;
                            all_obst = false;
                            all_ext = false;
                        }
                        CellKind::Obstacle(_) => {
                            any_obst = true;
                            all_ext = false;
                        }
                        CellKind::Exterior => {
                            any_ext = true;
                            all_obst = false;
                        }
                    }
                }
                let on_perimeter = ix == 0 || iy == 0 || ix == mx - 1 || iy == my - 1;
                let kind = if any_ext && any_fluid {
                    NodeKind::OuterBoundary
                } else if any_ext && !any_fluid {
                    NodeKind::Exterior
                } else if any_obst && any_fluid {
                    NodeKind::ObstacleBoundary
                } else if all_obst && any_obst {
                    NodeKind::ObstacleInterior
                } else if on_perimeter {
                    match self.outer {
                        OuterSpec::Rect { .. } => NodeKind::OuterBoundary,
                        OuterSpec::Disk { .. } => NodeKind::Exterior,
                    }
                } else if all_ext {
                    NodeKind::Exterior
                } else {
                    NodeKind::Interior
                };
                nodes[iy * mx + ix] = kind;
            }
        }
        self.nodes = nodes;
    }

    fn region_contains(&self, ix: isize, iy: isize, obstacle: Option<usize>) -> bool {
        if ix < 0 || iy < 0 || ix >= self.nx as isize || iy >= self.ny as isize {
            return false;
        }
        match (self.cell(ix as usize, iy as usize), obstacle) {
            (CellKind::Exterior, None) => false,
            (_, None) => true,
            (CellKind::Obstacle(k), Some(want)) => k == want,
            _ => false,
        }
    }

    /// Walk the polygonal interface of a cell region, region kept on the left.
    /// Returns the closed vertex ring (first node not repeated).
    fn trace_region(&self, obstacle: Option<usize>) -> Result<Vec<(usize, usize)>> {
        // Directed boundary edges: from_node -> to_node with region on left.
        use std::collections::HashMap;
        let mut out: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        let mut nedges = 0usize;
        // Horizontal edges (ix,iy) -> (ix+1,iy): above cell (ix,iy), below (ix,iy-1).
        for iy in 0..=self.ny {
            for ix in 0..self.nx {
                let above = self.region_contains(ix as isize, iy as isize, obstacle);
                let below = self.region_contains(ix as isize, iy as isize - 1, obstacle);
                if above && !below {
                    out.entry((ix, iy)).or_default().push((ix + 1, iy));
                    nedges += 1;
                } else if below && !above {
                    out.entry((ix + 1, iy)).or_default().push((ix, iy));
                    nedges += 1;
                }
            }
        }
        // Vertical edges (ix,iy) -> (ix,iy+1): left cell (ix-1,iy), right (ix,iy).
        for iy in 0..self.ny {
            for ix in 0..=self.nx {
                let left = self.region_contains(ix as isize - 1, iy as isize, obstacle);
                let right = self.region_contains(ix as isize, iy as isize, obstacle);
                if left && !right {
                    out.entry((ix, iy)).or_default().push((ix, iy + 1));
                    nedges += 1;
                } else if right && !left {
                    out.entry((ix, iy + 1)).or_default().push((ix, iy));
                    nedges += 1;
                }
            }
        }
        if nedges == 0 {
            return Err(Error::Mask("region has no boundary".into()));
        }
        // Start at the lexicographically smallest node (by iy then ix).
        let start = *out
            .keys()
            .min_by_key(|(ix, iy)| (*iy, *ix))
            .expect("nonempty");
        let mut ring = vec![start];
        let mut prev_dir = (0i32, 0i32);
        let mut cur = start;
        loop {
            let nexts = out
                .get(&cur)
                .ok_or_else(|| Error::Mask("open boundary walk".into()))?;
            // On pinch points take the rightmost turn to stay on one ring.
            let next = if nexts.len() == 1 {
                nexts[0]
            } else {
                *nexts
                    .iter()
                    .max_by(|a, b| {
                        let da = (a.0 as i32 - cur.0 as i32, a.1 as i32 - cur.1 as i32);
                        let db = (b.0 as i32 - cur.0 as i32, b.1 as i32 - cur.1 as i32);
                        let cross_a = (prev_dir.0 * da.1 - prev_dir.1 * da.0) as f64;
                        let cross_b = (prev_dir.0 * db.1 - prev_dir.1 * db.0) as f64;
                        cross_b.partial_cmp(&cross_a).unwrap()
                    })
                    .expect("nonempty")
            };
            prev_dir = (next.0 as i32 - cur.0 as i32, next.1 as i32 - cur.1 as i32);
            if next == start {
                break;
            }
            ring.push(next);
            cur = next;
            if ring.len() > nedges + 1 {
                return Err(Error::Mask("boundary walk did not close".into()));
            }
        }
        Ok(ring)
    }

    fn trace_outer_boundary(&mut self) -> Result<()> {
        let ring = self.trace_region(None)?;
        let n = ring.len();
        let mut nodes = Vec::with_capacity(n);
        let mut s = 0.0;
        for k in 0..n {
            let (ix, iy) = ring[k];
            let (px, py) = ring[(k + n - 1) % n];
            let (qx, qy) = ring[(k + 1) % n];
            let din = (
                (ix as f64 - px as f64) * self.dx,
                (iy as f64 - py as f64) * self.dy,
            );
            let dout = (
                (qx as f64 - ix as f64) * self.dx,
                (qy as f64 - iy as f64) * self.dy,
            );
            let lin = din.0.hypot(din.1);
            let lout = dout.0.hypot(dout.1);
            let tx = din.0 / lin + dout.0 / lout;
            let ty = din.1 / lin + dout.1 / lout;
            let tl = tx.hypot(ty);
            let tangent = [tx / tl, ty / tl];
            // Region is on the left; outward points right of the tangent.
            let normal = [tangent[1], -tangent[0]];
            let corner = normal[0].abs() > 1e-12 && normal[1].abs() > 1e-12;
            let inward = if normal[0].abs() >= normal[1].abs() {
                (-normal[0].signum() as i32, 0)
            } else {
                (0, -normal[1].signum() as i32)
            };
            nodes.push(BoundaryNode {
                ix,
                iy,
                s,
                normal,
                tangent,
                inward,
                corner,
            });
            s += lout;
        }
        self.boundary_len = s;
        let (mx, my) = self.node_count();
        let mut index = vec![None; mx * my];
        for (k, bn) in nodes.iter().enumerate() {
            index[bn.iy * mx + bn.ix] = Some(k as u32);
        }
        self.outer_boundary = nodes;
        self.outer_index = index;
        Ok(())
    }

    fn trace_obstacle_boundaries(&mut self) -> Result<()> {
        let mut rings = Vec::with_capacity(self.obstacles.len());
        for k in 0..self.obstacles.len() {
            rings.push(self.trace_region(Some(k))?);
        }
        self.obstacle_boundaries = rings;
        Ok(())
    }
}

/// Closed or open polyline used for loop integrals and winding numbers.
#[derive(Debug)]
pub struct LoopPath {
    pub vertices: Vec<[f64; 2]>,
    pub closed: bool,
    windings: OnceLock<Vec<i32>>,
}

impl Clone for LoopPath {
    fn clone(&self) -> Self {
        LoopPath {
            vertices: self.vertices.clone(),
            closed: self.closed,
            windings: OnceLock::new(),
        }
    }
}

impl LoopPath {
    pub fn new(vertices: Vec<[f64; 2]>, closed: bool) -> Self {
        LoopPath { vertices, closed, windings: OnceLock::new() }
    }

    /// Circle traversed counterclockwise `turns` times (negative = clockwise).
    pub fn circle(center: [f64; 2], r: f64, verts_per_turn: usize, turns: i32) -> Self {
        let total = verts_per_turn * turns.unsigned_abs() as usize;
        let sign = if turns >= 0 { 1.0 } else { -1.0 };
        let vertices = (0..total)
            .map(|k| {
                let th = sign * 2.0 * std::f64::consts::PI * k as f64 / verts_per_turn as f64;
                [center[0] + r * th.cos(), center[1] + r * th.sin()]
            })
            .collect();
        LoopPath { vertices, closed: true, windings: OnceLock::new() }
    }

    pub fn segment(a: [f64; 2], b: [f64; 2], nverts: usize) -> Self {
        let vertices = (0..nverts)
            .map(|k| {
                let t = k as f64 / (nverts - 1) as f64;
                [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
            })
            .collect();
        LoopPath { vertices, closed: false, windings: OnceLock::new() }
    }

    pub fn length(&self) -> f64 {
        let mut len = 0.0;
        for k in 1..self.vertices.len() {
            len += (self.vertices[k][0] - self.vertices[k - 1][0])
                .hypot(self.vertices[k][1] - self.vertices[k - 1][1]);
        }
        if self.closed {
            let a = self.vertices[self.vertices.len() - 1];
            let b = self.vertices[0];
            len += (b[0] - a[0]).hypot(b[1] - a[1]);
        }
        len
    }

    /// Winding numbers around all obstacles, computed once and cached.
    pub fn windings(&self, grid: &Grid2D) -> Result<&[i32]> {
        if let Some(w) = self.windings.get() {
            return Ok(w);
        }
        let mut w = Vec::with_capacity(grid.obstacles.len());
        for k in 0..grid.obstacles.len() {
            w.push(winding_number(self, grid, k)?);
        }
        let _ = self.windings.set(w);
        Ok(self.windings.get().expect("just set"))
    }
}

/// Signed winding of a closed path around a point, by angle accumulation.
pub fn winding_about(path: &LoopPath, point: [f64; 2]) -> Result<i32> {
    if !path.closed {
        let a = path.vertices[0];
        let b = path.vertices[path.vertices.len() - 1];
        return Err(Error::OpenPath { gap: (b[0] - a[0]).hypot(b[1] - a[1]) });
    }
    let n = path.vertices.len();
    let mut total = 0.0;
    for k in 0..n {
        let a = path.vertices[k];
        let b = path.vertices[(k + 1) % n];
        let t0 = (a[1] - point[1]).atan2(a[0] - point[0]);
        let t1 = (b[1] - point[1]).atan2(b[0] - point[0]);
        total += wrap_to_pi(t1 - t0);
    }
    Ok((total / (2.0 * std::f64::consts::PI)).round() as i32)
}

/// Signed winding of a closed path around obstacle `k` (+1 counterclockwise).
pub fn winding_number(path: &LoopPath, grid: &Grid2D, k: usize) -> Result<i32> {
    let obs = grid
        .obstacles
        .get(k)
        .ok_or_else(|| Error::Mask(format!("obstacle {k} out of range")))?;
    winding_about(path, obs.centroid())
}
