//! Characteristic (Goursat) charts near a boundary patch.
//!
//! A chart straightens the two families of characteristic surfaces that
//! graze a patch of the outer boundary.  Working in a collar 0 <= xn <= delta
//! over the patch, we solve the stationary eiconal equation for two phase
//! functions phi+ and phi- vanishing on the patch, transport a transversal
//! label along the minus family, and change to coordinates in which the
//! boundary sits at yn = 0 and the evolution becomes a one dimensional wave
//! operator with a drift coefficient, a tangential coefficient and a zeroth
//! order potential.  The flow map generated by the drift coefficient then
//! gives the leading geometric optics amplitude in closed form.
//!
//! Everything here evaluates the metric through its closure form; collar
//! fields live on structured lattices and are interpolated with quartic
//! (four point Lagrange) rules, so the advertised residual tolerances are
//! not limited by grid sampling error.

mod rays;

pub use rays::{ab_phase, circulation, launch, null_momentum, shoot_to, trace_ray, RayState};

use crate::error::{Error, Result};
use crate::geometry::OuterSpec;
use crate::media::AnalyticMetric;
use crate::util::{deriv1_4th, interp_cubic, rk4_step};
use nalgebra::Matrix3;
use std::cell::Cell;

/// Side of a rectangular outer boundary a chart is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeSide {
    Bottom,
    Top,
    Left,
    Right,
}

/// Straight boundary patch: an interval [lo, hi] of the tangential physical
/// coordinate along one edge (x for Bottom/Top, y for Left/Right).
#[derive(Debug, Clone, Copy)]
pub struct PatchSpec {
    pub edge: EdgeSide,
    pub lo: f64,
    pub hi: f64,
}

/// Orthonormal patch frame: plane position is origin + x1*tang + xn*inward,
/// with x1 the tangential coordinate and xn the inward distance.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub origin: [f64; 2],
    pub tang: [f64; 2],
    pub inward: [f64; 2],
}

impl Frame {
    pub fn to_plane(&self, x1: f64, xn: f64) -> [f64; 2] {
        [
            self.origin[0] + x1 * self.tang[0] + xn * self.inward[0],
            self.origin[1] + x1 * self.tang[1] + xn * self.inward[1],
        ]
    }
}

impl PatchSpec {
    /// Frame of the patch on a rectangular outer boundary.
    pub fn frame(&self, outer: &OuterSpec) -> Result<Frame> {
        let &OuterSpec::Rect { x0, y0, x1, y1 } = outer else {
            return Err(Error::Chart("charts require a rectangular outer boundary".into()));
        };
        if !(self.hi > self.lo) {
            return Err(Error::Chart("patch interval is empty".into()));
        }
        let f = match self.edge {
            EdgeSide::Bottom => Frame { origin: [0.0, y0], tang: [1.0, 0.0], inward: [0.0, 1.0] },
            EdgeSide::Top => Frame { origin: [0.0, y1], tang: [1.0, 0.0], inward: [0.0, -1.0] },
            EdgeSide::Left => Frame { origin: [x0, 0.0], tang: [0.0, 1.0], inward: [1.0, 0.0] },
            EdgeSide::Right => Frame { origin: [x1, 0.0], tang: [0.0, 1.0], inward: [-1.0, 0.0] },
        };
        Ok(f)
    }
}

/// Collar and lattice parameters for chart construction.
#[derive(Debug, Clone, Copy)]
pub struct ChartParams {
    /// Collar depth measured inward from the patch.
    pub delta: f64,
    /// Time horizon of the chart coordinates.
    pub t_horizon: f64,
    /// Tangential lattice nodes over the patch.
    pub n1: usize,
    /// Depth levels including the boundary level.
    pub nn: usize,
    /// Extra tangential seeding beyond each end of the patch, so that
    /// characteristics that drift sideways still cover the lattice.
    pub pad: f64,
}

impl ChartParams {
    /// Defaults: collar depth a tenth of the domain diameter, horizon twice
    /// the depth, lattice fine enough that interpolation error sits well
    /// below the residual tolerances.
    pub fn default_for(outer: &OuterSpec, patch: &PatchSpec) -> Self {
        let delta = 0.1 * outer.diameter();
        ChartParams {
            delta,
            t_horizon: 2.0 * delta,
            n1: 49,
            nn: 41,
            pad: 0.25 * (patch.hi - patch.lo),
        }
    }
}

/// Contravariant metric seen from a patch frame, with first derivatives in
/// the frame directions.  Index order is (time, tangential, inward).
pub struct FrameMetric<'a> {
    pub metric: &'a AnalyticMetric,
    pub frame: Frame,
}

impl<'a> FrameMetric<'a> {
    pub fn new(metric: &'a AnalyticMetric, frame: Frame) -> Self {
        FrameMetric { metric, frame }
    }

    fn rotate(&self, g: &Matrix3<f64>) -> Matrix3<f64> {
        let t = self.frame.tang;
        let nv = self.frame.inward;
        let g01 = t[0] * g[(0, 1)] + t[1] * g[(0, 2)];
        let g0n = nv[0] * g[(0, 1)] + nv[1] * g[(0, 2)];
        let sxx = g[(1, 1)];
        let sxy = g[(1, 2)];
        let syy = g[(2, 2)];
        let quad = |a: [f64; 2], b: [f64; 2]| {
            a[0] * sxx * b[0] + (a[0] * b[1] + a[1] * b[0]) * sxy + a[1] * syy * b[1]
        };
        Matrix3::new(
            g[(0, 0)],
            g01,
            g0n,
            g01,
            quad(t, t),
            quad(t, nv),
            g0n,
            quad(t, nv),
            quad(nv, nv),
        )
    }

    /// Metric components in the frame at patch coordinates (x1, xn).
    pub fn at(&self, x1: f64, xn: f64) -> Matrix3<f64> {
        let p = self.frame.to_plane(x1, xn);
        self.rotate(&self.metric.at(p[0], p[1]))
    }

    /// Frame-direction derivatives [d/dx1, d/dxn] of the components.
    pub fn grad(&self, x1: f64, xn: f64) -> [Matrix3<f64>; 2] {
        let p = self.frame.to_plane(x1, xn);
        let [gx, gy] = self.metric.grad(p[0], p[1]);
        let t = self.frame.tang;
        let nv = self.frame.inward;
        [
            self.rotate(&(gx * t[0] + gy * t[1])),
            self.rotate(&(gx * nv[0] + gy * nv[1])),
        ]
    }
}

/// Collar fields on the (x1, xn) lattice: the two phase functions, their
/// gradients carried exactly by the characteristic momenta, and the seed
/// label transported along the minus family.
#[derive(Debug, Clone)]
pub struct Collar {
    pub x1_lo: f64,
    pub x1_hi: f64,
    pub delta: f64,
    pub n1: usize,
    pub nn: usize,
    pub h1: f64,
    pub hn: f64,
    pub phi_plus: Vec<f64>,
    pub d1_plus: Vec<f64>,
    pub dn_plus: Vec<f64>,
    pub phi_minus: Vec<f64>,
    pub d1_minus: Vec<f64>,
    pub dn_minus: Vec<f64>,
    /// Tangential seed of the minus characteristic through each node; this
    /// is the transversal coordinate, constant along that family.
    pub label: Vec<f64>,
}

impl Collar {
    #[inline]
    pub fn idx(&self, i1: usize, level: usize) -> usize {
        level * self.n1 + i1
    }
}

/// Inward slope of the phase at the boundary, the root of the quadratic the
/// eiconal equation becomes when the tangential derivative vanishes.
/// `branch` is +1 for phi+ and -1 for phi-.
fn boundary_slope(g: &Matrix3<f64>, branch: f64) -> Result<f64> {
    let disc = g[(0, 2)] * g[(0, 2)] - g[(0, 0)] * g[(2, 2)];
    if disc <= 0.0 {
        return Err(Error::Chart(format!(
            "characteristic slope is not real on the patch (discriminant {disc:.3e})"
        )));
    }
    Ok((-branch * g[(0, 2)] + disc.sqrt()) / g[(2, 2)])
}

struct Fan {
    /// Per level, per seed: (x1, p1, pn, phi).
    levels: Vec<Vec<[f64; 4]>>,
    seeds: Vec<f64>,
}

/// March one characteristic family inward, seeds spaced `h1` apart over
/// [lo - pad, hi + pad], depth levels 0..nn at spacing hn.
fn march_family(
    fm: &FrameMetric,
    branch: f64,
    lo: f64,
    hi: f64,
    pad: f64,
    h1: f64,
    hn: f64,
    nn: usize,
) -> Result<Fan> {
    let npad = (pad / h1).ceil().max(2.0) as usize;
    let ns = ((hi - lo) / h1).round() as usize + 1 + 2 * npad;
    let seeds: Vec<f64> = (0..ns).map(|i| lo - npad as f64 * h1 + i as f64 * h1).collect();

    let mut state = vec![0.0f64; 4 * ns];
    for (i, &a) in seeds.iter().enumerate() {
        let g = fm.at(a, 0.0);
        state[4 * i] = a;
        state[4 * i + 1] = 0.0;
        state[4 * i + 2] = boundary_slope(&g, branch)?;
        state[4 * i + 3] = 0.0;
    }

    // A turning characteristic (inward speed collapsing) is reported at the
    // depth where it happens, like a fan crossing.
    let stall: Cell<Option<f64>> = Cell::new(None);
    let deriv = |xn: f64, y: &[f64], out: &mut [f64]| {
        for i in 0..ns {
            let x1 = y[4 * i];
            let p1 = y[4 * i + 1];
            let pn = y[4 * i + 2];
            let g = fm.at(x1, xn);
            let dg = fm.grad(x1, xn);
            let hp1 = 2.0 * (branch * g[(0, 1)] + g[(1, 1)] * p1 + g[(1, 2)] * pn);
            let hpn = 2.0 * (branch * g[(0, 2)] + g[(1, 2)] * p1 + g[(2, 2)] * pn);
            if hpn <= 1e-12 {
                if stall.get().is_none() {
                    stall.set(Some(xn));
                }
                out[4 * i] = 0.0;
                out[4 * i + 1] = 0.0;
                out[4 * i + 2] = 0.0;
                out[4 * i + 3] = 0.0;
                continue;
            }
            let hx = |d: &Matrix3<f64>| {
                d[(0, 0)]
                    + 2.0 * branch * (d[(0, 1)] * p1 + d[(0, 2)] * pn)
                    + d[(1, 1)] * p1 * p1
                    + 2.0 * d[(1, 2)] * p1 * pn
                    + d[(2, 2)] * pn * pn
            };
            out[4 * i] = hp1 / hpn;
            out[4 * i + 1] = -hx(&dg[0]) / hpn;
            out[4 * i + 2] = -hx(&dg[1]) / hpn;
            out[4 * i + 3] = (p1 * hp1 + pn * hpn) / hpn;
        }
    };

    let mut levels = Vec::with_capacity(nn);
    levels.push(state.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect::<Vec<_>>());
    let mut next = vec![0.0f64; 4 * ns];
    for level in 1..nn {
        let xn = (level - 1) as f64 * hn;
        rk4_step(&deriv, xn, &state, hn, &mut next);
        if let Some(depth) = stall.get() {
            return Err(Error::Caustic { depth });
        }
        for i in 0..ns - 1 {
            if next[4 * (i + 1)] - next[4 * i] < 0.3 * h1 {
                return Err(Error::Caustic { depth: xn + hn });
            }
        }
        state.copy_from_slice(&next);
        levels.push(state.chunks(4).map(|c| [c[0], c[1], c[2], c[3]]).collect());
    }
    Ok(Fan { levels, seeds })
}

/// Four point Lagrange interpolation on arbitrary ascending abscissas.
fn lag4n(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), 4);
    let mut acc = 0.0;
    for k in 0..4 {
        let mut w = 1.0;
        for m in 0..4 {
            if m != k {
                w *= (x - xs[m]) / (xs[k] - xs[m]);
            }
        }
        acc += w * ys[k];
    }
    acc
}

/// Interpolate one fan quantity onto a lattice abscissa.
fn fan_sample(fan_x1: &[f64], vals: &[f64], x: f64) -> Result<f64> {
    let ns = fan_x1.len();
    if x < fan_x1[0] || x > fan_x1[ns - 1] {
        return Err(Error::Chart(
            "characteristics drifted beyond the seeded padding; widen the patch padding".into(),
        ));
    }
    let i = fan_x1.partition_point(|v| *v <= x).saturating_sub(1);
    let base = i.saturating_sub(1).min(ns - 4);
    Ok(lag4n(&fan_x1[base..base + 4], &vals[base..base + 4], x))
}

/// Solve the stationary eiconal for both phase functions on the collar over
/// [lo, hi], marching characteristics inward from the patch and regridding
/// each depth level onto the uniform lattice.
pub fn solve_eiconal(fm: &FrameMetric, lo: f64, hi: f64, params: &ChartParams) -> Result<Collar> {
    let n1 = params.n1;
    let nn = params.nn;
    if n1 < 9 || nn < 5 {
        return Err(Error::Resolution("chart lattice needs n1 >= 9 and nn >= 5".into()));
    }
    let h1 = (hi - lo) / (n1 - 1) as f64;
    let hn = params.delta / (nn - 1) as f64;

    let mut collar = Collar {
        x1_lo: lo,
        x1_hi: hi,
        delta: params.delta,
        n1,
        nn,
        h1,
        hn,
        phi_plus: vec![0.0; n1 * nn],
        d1_plus: vec![0.0; n1 * nn],
        dn_plus: vec![0.0; n1 * nn],
        phi_minus: vec![0.0; n1 * nn],
        d1_minus: vec![0.0; n1 * nn],
        dn_minus: vec![0.0; n1 * nn],
        label: vec![0.0; n1 * nn],
    };

    for branch in [1.0, -1.0] {
        let fan = march_family(fm, branch, lo, hi, params.pad, h1, hn, nn)?;
        let ns = fan.seeds.len();
        let mut xs = vec![0.0; ns];
        let mut col = vec![0.0; ns];
        for level in 0..nn {
            let pts = &fan.levels[level];
            for (i, p) in pts.iter().enumerate() {
                xs[i] = p[0];
            }
            for i1 in 0..n1 {
                let x = lo + i1 as f64 * h1;
                let at = collar.idx(i1, level);
                if level == 0 {
                    // Boundary level is exact: zero phase, slope from the
                    // quadratic root, label equal to the position.
                    let g = fm.at(x, 0.0);
                    let pn0 = boundary_slope(&g, branch)?;
                    if branch > 0.0 {
                        collar.dn_plus[at] = pn0;
                    } else {
                        collar.dn_minus[at] = pn0;
                        collar.label[at] = x;
                    }
                    continue;
                }
                for (i, p) in pts.iter().enumerate() {
                    col[i] = p[1];
                }
                let p1 = fan_sample(&xs, &col, x)?;
                for (i, p) in pts.iter().enumerate() {
                    col[i] = p[2];
                }
                let pn = fan_sample(&xs, &col, x)?;
                for (i, p) in pts.iter().enumerate() {
                    col[i] = p[3];
                }
                let phi = fan_sample(&xs, &col, x)?;
                if branch > 0.0 {
                    collar.phi_plus[at] = phi;
                    collar.d1_plus[at] = p1;
                    collar.dn_plus[at] = pn;
                } else {
                    collar.phi_minus[at] = phi;
                    collar.d1_minus[at] = p1;
                    collar.dn_minus[at] = pn;
                    collar.label[at] = fan_sample(&xs, &fan.seeds, x)?;
                }
            }
        }
    }
    Ok(collar)
}

/// Transversal coordinate and its lattice gradient.  The coordinate itself
/// is the transported seed label, already exact along the minus family; the
/// gradient comes from fourth order lattice differences.
#[derive(Debug, Clone)]
pub struct Transversal {
    pub phi: Vec<f64>,
    pub d1: Vec<f64>,
    pub dn: Vec<f64>,
}

pub fn solve_transversal(collar: &Collar) -> Transversal {
    let phi = collar.label.clone();
    let d1 = d_rows(&phi, collar.n1, collar.nn, collar.h1);
    let dn = d_cols(&phi, collar.n1, collar.nn, collar.hn);
    Transversal { phi, d1, dn }
}

pub(crate) fn d_rows(f: &[f64], n1: usize, nn: usize, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    for level in 0..nn {
        deriv1_4th(&f[level * n1..(level + 1) * n1], h, &mut out[level * n1..(level + 1) * n1]);
    }
    out
}

pub(crate) fn d_cols(f: &[f64], n1: usize, nn: usize, h: f64) -> Vec<f64> {
    let mut out = vec![0.0; f.len()];
    let mut col = vec![0.0; nn];
    let mut der = vec![0.0; nn];
    for i1 in 0..n1 {
        for level in 0..nn {
            col[level] = f[level * n1 + i1];
        }
        deriv1_4th(&col, h, &mut der);
        for level in 0..nn {
            out[level * n1 + i1] = der[level];
        }
    }
    out
}

/// Uniform four point Lagrange at fractional offset t from the first node.
fn lag4(v: &[f64; 4], t: f64) -> f64 {
    let mut acc = 0.0;
    for (k, &vk) in v.iter().enumerate() {
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

/// Bicubic interpolation of a lattice field at fractional indices.
pub(crate) fn interp2(f: &[f64], n1: usize, nn: usize, fx: f64, fy: f64) -> f64 {
    let fy = fy.clamp(0.0, (nn - 1) as f64);
    let jb = ((fy.floor() as isize) - 1).clamp(0, nn as isize - 4) as usize;
    let ty = fy - jb as f64;
    let mut rows = [0.0; 4];
    for (r, row) in rows.iter_mut().enumerate() {
        *row = interp_cubic(&f[(jb + r) * n1..(jb + r + 1) * n1], fx);
    }
    lag4(&rows, ty)
}

/// Coordinate change between collar coordinates (x0, x1, xn) and the two
/// chart systems: the characteristic pair (s, tau, y1) with s, tau the phase
/// functions offset by time, and the straightened system (y0, y1, yn) in
/// which the patch is yn = 0.
#[derive(Debug, Clone)]
pub struct ChartMap {
    pub x1_lo: f64,
    pub h1: f64,
    pub n1: usize,
    pub hn: f64,
    pub nn: usize,
    pub delta: f64,
    pub t_horizon: f64,
    phi_plus: Vec<f64>,
    phi_minus: Vec<f64>,
    /// yn as a collar field, minus half the phase sum.
    depth: Vec<f64>,
    /// y1 as a collar field.
    label: Vec<f64>,
    label_d1: Vec<f64>,
    label_dn: Vec<f64>,
    /// Lattice gradient rows of `depth`.
    depth_d1: Vec<f64>,
    depth_dn: Vec<f64>,
}

pub fn goursat_coords(collar: &Collar, trans: &Transversal, t_horizon: f64) -> ChartMap {
    let m = collar.n1 * collar.nn;
    let mut depth = vec![0.0; m];
    let mut depth_d1 = vec![0.0; m];
    let mut depth_dn = vec![0.0; m];
    for i in 0..m {
        depth[i] = -0.5 * (collar.phi_plus[i] + collar.phi_minus[i]);
        depth_d1[i] = -0.5 * (collar.d1_plus[i] + collar.d1_minus[i]);
        depth_dn[i] = -0.5 * (collar.dn_plus[i] + collar.dn_minus[i]);
    }
    ChartMap {
        x1_lo: collar.x1_lo,
        h1: collar.h1,
        n1: collar.n1,
        hn: collar.hn,
        nn: collar.nn,
        delta: collar.delta,
        t_horizon,
        phi_plus: collar.phi_plus.clone(),
        phi_minus: collar.phi_minus.clone(),
        depth,
        label: trans.phi.clone(),
        label_d1: trans.d1.clone(),
        label_dn: trans.dn.clone(),
        depth_d1,
        depth_dn,
    }
}

impl ChartMap {
    fn sample(&self, f: &[f64], x1: f64, xn: f64) -> f64 {
        let fx = (x1 - self.x1_lo) / self.h1;
        let fy = xn / self.hn;
        interp2(f, self.n1, self.nn, fx, fy)
    }

    /// Characteristic coordinates (s, tau, y1).
    pub fn to_char(&self, x0: f64, x1: f64, xn: f64) -> [f64; 3] {
        let s = x0 + self.sample(&self.phi_plus, x1, xn);
        let tau = self.t_horizon - x0 + self.sample(&self.phi_minus, x1, xn);
        [s, tau, self.sample(&self.label, x1, xn)]
    }

    /// Straightened coordinates (y0, y1, yn).
    pub fn to_flat(&self, x0: f64, x1: f64, xn: f64) -> [f64; 3] {
        let pp = self.sample(&self.phi_plus, x1, xn);
        let pm = self.sample(&self.phi_minus, x1, xn);
        [x0 + 0.5 * (pp - pm), self.sample(&self.label, x1, xn), -0.5 * (pp + pm)]
    }

    /// Newton solve of label = y1, depth = yn for the collar position.
    pub fn invert_spatial(&self, y1: f64, yn: f64) -> Result<(f64, f64)> {
        if yn == 0.0 {
            return Ok((y1, 0.0));
        }
        let rate = self.sample(&self.depth_dn, y1, 0.0);
        let mut x1 = y1;
        let mut xn = (yn / rate.max(1e-6)).clamp(0.0, self.delta);
        let scale = 1.0 + y1.abs() + yn.abs();
        for _ in 0..60 {
            let r1 = self.sample(&self.label, x1, xn) - y1;
            let r2 = self.sample(&self.depth, x1, xn) - yn;
            let j11 = self.sample(&self.label_d1, x1, xn);
            let j12 = self.sample(&self.label_dn, x1, xn);
            let j21 = self.sample(&self.depth_d1, x1, xn);
            let j22 = self.sample(&self.depth_dn, x1, xn);
            let det = j11 * j22 - j12 * j21;
            if det.abs() < 1e-12 * scale {
                return Err(Error::NonInvertible { x: x1, y: xn });
            }
            let dx1 = (r1 * j22 - r2 * j12) / det;
            let dxn = (r2 * j11 - r1 * j21) / det;
            x1 -= dx1;
            xn -= dxn;
            let lo = self.x1_lo;
            let hi = self.x1_lo + (self.n1 - 1) as f64 * self.h1;
            x1 = x1.clamp(lo, hi);
            xn = xn.clamp(0.0, self.delta);
            if dx1.abs() + dxn.abs() < 1e-13 * scale {
                let r1 = self.sample(&self.label, x1, xn) - y1;
                let r2 = self.sample(&self.depth, x1, xn) - yn;
                if r1.abs() + r2.abs() > 1e-9 * scale {
                    return Err(Error::NonInvertible { x: x1, y: xn });
                }
                return Ok((x1, xn));
            }
        }
        Err(Error::NonInvertible { x: x1, y: xn })
    }

    pub fn from_flat(&self, y0: f64, y1: f64, yn: f64) -> Result<[f64; 3]> {
        let (x1, xn) = self.invert_spatial(y1, yn)?;
        let pp = self.sample(&self.phi_plus, x1, xn);
        let pm = self.sample(&self.phi_minus, x1, xn);
        Ok([y0 - 0.5 * (pp - pm), x1, xn])
    }

    pub fn from_char(&self, s: f64, tau: f64, y1: f64) -> Result<[f64; 3]> {
        let yn = 0.5 * (self.t_horizon - s - tau);
        let (x1, xn) = self.invert_spatial(y1, yn)?;
        let pp = self.sample(&self.phi_plus, x1, xn);
        Ok([s - pp, x1, xn])
    }
}

/// Reduced operator coefficients on the straightened (y1, yn) lattice.
///
/// In these coordinates the wave operator divides by the characteristic
/// pairing `scale` and, after multiplying the unknown by exp of `log_amp`,
/// becomes d^2/dy0^2 - d^2/dyn^2 plus a tangential divergence term with
/// coefficient `coef_tan`, a mixed drift term with coefficient `coef_mix`
/// and multiplication by `potential`.
#[derive(Debug, Clone)]
pub struct ChartCoeffs {
    pub n1: usize,
    pub nn: usize,
    pub y1_lo: f64,
    pub h1: f64,
    pub hn: f64,
    pub yn_max: f64,
    pub coef_tan: Vec<f64>,
    pub coef_mix: Vec<f64>,
    /// Pairing of the two characteristic gradients; positive on a valid chart.
    pub scale: Vec<f64>,
    pub log_amp: Vec<f64>,
    pub potential: Vec<f64>,
    /// Determinant of d(y1, yn)/d(x1, xn) at the preimage.
    pub jac: Vec<f64>,
    /// Collar preimage of each lattice node.
    pub pre_x1: Vec<f64>,
    pub pre_xn: Vec<f64>,
}

impl ChartCoeffs {
    #[inline]
    pub fn idx(&self, i1: usize, level: usize) -> usize {
        level * self.n1 + i1
    }

    /// Worst margin of negative definiteness of the spatial part of the
    /// reduced operator: min over nodes of -(coef_tan + coef_mix^2).
    /// Positive means the form is definite on the whole chart.
    pub fn definite_margin(&self) -> f64 {
        self.coef_tan
            .iter()
            .zip(self.coef_mix.iter())
            .map(|(q, m)| -(q + m * m))
            .fold(f64::INFINITY, f64::min)
    }
}

fn bil(g: &Matrix3<f64>, a: [f64; 3], b: [f64; 3]) -> f64 {
    let mut acc = 0.0;
    for j in 0..3 {
        for k in 0..3 {
            acc += g[(j, k)] * a[j] * b[k];
        }
    }
    acc
}

/// Potential of the reduced operator from the log-amplitude and the two
/// coefficient fields, by fourth order lattice differences.
fn potential_field(
    q: &[f64],
    m: &[f64],
    a: &[f64],
    n1: usize,
    nn: usize,
    h1: f64,
    hn: f64,
) -> Vec<f64> {
    let a1 = d_rows(a, n1, nn, h1);
    let an = d_cols(a, n1, nn, hn);
    let ann = d_cols(&an, n1, nn, hn);
    let qa1: Vec<f64> = q.iter().zip(&a1).map(|(q, a)| q * a).collect();
    let ma1: Vec<f64> = m.iter().zip(&a1).map(|(m, a)| m * a).collect();
    let man: Vec<f64> = m.iter().zip(&an).map(|(m, a)| m * a).collect();
    let d_qa1 = d_rows(&qa1, n1, nn, h1);
    let dn_ma1 = d_cols(&ma1, n1, nn, hn);
    let d_man = d_rows(&man, n1, nn, h1);
    let mut v = vec![0.0; q.len()];
    for i in 0..v.len() {
        v[i] = ann[i] + an[i] * an[i] - d_qa1[i] - q[i] * a1[i] * a1[i]
            + dn_ma1[i]
            + d_man[i]
            + 2.0 * m[i] * a1[i] * an[i];
    }
    v
}

/// Build the reduced coefficients by pulling every lattice node of the
/// straightened system back to the collar and contracting the phase and
/// transversal gradients with the metric.
pub fn transformed_coeffs(
    fm: &FrameMetric,
    collar: &Collar,
    trans: &Transversal,
    map: &ChartMap,
) -> Result<ChartCoeffs> {
    // Shrink tangentially so every node inverts strictly inside the collar
    // lattice, by the largest observed label drift plus stencil room.
    let mut drift = 0.0f64;
    for level in 0..collar.nn {
        for i1 in 0..collar.n1 {
            let x = collar.x1_lo + i1 as f64 * collar.h1;
            drift = drift.max((trans.phi[collar.idx(i1, level)] - x).abs());
        }
    }
    let m_cells = ((drift / collar.h1).ceil() as usize) + 2;
    if collar.n1 <= 2 * m_cells + 8 {
        return Err(Error::Chart("patch too narrow for its characteristic drift".into()));
    }
    let n1 = collar.n1 - 2 * m_cells;
    let y1_lo = collar.x1_lo + m_cells as f64 * collar.h1;
    let h1 = collar.h1;

    // Depth reachable from every tangential column.
    let mut yn_max = f64::INFINITY;
    for i1 in 0..collar.n1 {
        let x = collar.x1_lo + i1 as f64 * collar.h1;
        let d = -0.5
            * (map.sample(&collar.phi_plus, x, collar.delta)
                + map.sample(&collar.phi_minus, x, collar.delta));
        yn_max = yn_max.min(d);
    }
    if !(yn_max > 0.0) {
        return Err(Error::Chart("collar depth collapses under the phase sum".into()));
    }
    let yn_max = 0.98 * yn_max;
    let nn = collar.nn;
    let hn = yn_max / (nn - 1) as f64;

    let mut ch = ChartCoeffs {
        n1,
        nn,
        y1_lo,
        h1,
        hn,
        yn_max,
        coef_tan: vec![0.0; n1 * nn],
        coef_mix: vec![0.0; n1 * nn],
        scale: vec![0.0; n1 * nn],
        log_amp: vec![0.0; n1 * nn],
        potential: vec![0.0; n1 * nn],
        jac: vec![0.0; n1 * nn],
        pre_x1: vec![0.0; n1 * nn],
        pre_xn: vec![0.0; n1 * nn],
    };

    for level in 0..nn {
        let yn = level as f64 * hn;
        for i1 in 0..n1 {
            let y1 = y1_lo + i1 as f64 * h1;
            let (x1, xn) = map.invert_spatial(y1, yn)?;
            let at = ch.idx(i1, level);
            ch.pre_x1[at] = x1;
            ch.pre_xn[at] = xn;
            let g = fm.at(x1, xn);
            let psi_p = [1.0, map.sample(&collar.d1_plus, x1, xn), map.sample(&collar.dn_plus, x1, xn)];
            let psi_m = [
                -1.0,
                map.sample(&collar.d1_minus, x1, xn),
                map.sample(&collar.dn_minus, x1, xn),
            ];
            let w = [0.0, map.sample(&trans.d1, x1, xn), map.sample(&trans.dn, x1, xn)];
            let pair = -0.5 * bil(&g, psi_p, psi_m);
            if pair <= 1e-8 {
                return Err(Error::Chart(format!(
                    "characteristic pairing degenerates ({pair:.3e}) at y1 = {y1:.4}, yn = {yn:.4}"
                )));
            }
            let g11 = bil(&g, w, w);
            if g11 >= -1e-12 {
                return Err(Error::Chart(format!(
                    "transversal direction is not spacelike ({g11:.3e}) at y1 = {y1:.4}"
                )));
            }
            let gp1 = 0.5 * bil(&g, psi_p, w);
            ch.scale[at] = pair;
            ch.coef_tan[at] = g11 / pair;
            ch.coef_mix[at] = gp1 / pair;
            ch.log_amp[at] = -0.5 * (2.0f64).ln() - 0.25 * (-g11).ln();
            let l1 = map.sample(&map.label_d1, x1, xn);
            let ln_ = map.sample(&map.label_dn, x1, xn);
            let d1 = map.sample(&map.depth_d1, x1, xn);
            let dn = map.sample(&map.depth_dn, x1, xn);
            ch.jac[at] = l1 * dn - ln_ * d1;
        }
    }
    ch.potential = potential_field(&ch.coef_tan, &ch.coef_mix, &ch.log_amp, n1, nn, h1, hn);
    Ok(ch)
}

/// A fully built chart.
#[derive(Debug, Clone)]
pub struct GoursatChart {
    pub frame: Frame,
    pub delta: f64,
    pub t_horizon: f64,
    pub collar: Collar,
    pub trans: Transversal,
    pub map: ChartMap,
    pub coeffs: ChartCoeffs,
}

/// Build a chart over a boundary patch.  On a caustic the collar depth is
/// halved once and the construction retried; a second caustic is final.
pub fn build_chart(
    metric: &AnalyticMetric,
    outer: &OuterSpec,
    patch: &PatchSpec,
    params: &ChartParams,
) -> Result<GoursatChart> {
    let frame = patch.frame(outer)?;
    let fm = FrameMetric::new(metric, frame);
    let mut p = *params;
    let collar = match solve_eiconal(&fm, patch.lo, patch.hi, &p) {
        Ok(c) => c,
        Err(Error::Caustic { .. }) => {
            p.delta *= 0.5;
            solve_eiconal(&fm, patch.lo, patch.hi, &p)?
        }
        Err(e) => return Err(e),
    };
    let trans = solve_transversal(&collar);
    let map = goursat_coords(&collar, &trans, p.t_horizon);
    let coeffs = transformed_coeffs(&fm, &collar, &trans, &map)?;
    Ok(GoursatChart {
        frame,
        delta: p.delta,
        t_horizon: p.t_horizon,
        collar,
        trans,
        map,
        coeffs,
    })
}

/// Characteristic flow of the drift coefficient on the straightened lattice:
/// trajectories of d(beta)/d(yn) = 2 coef_mix(beta, yn) seeded at every
/// tangential node, with the inverse recovered by bisection.
#[derive(Debug, Clone)]
pub struct FlowMap {
    pub y1_lo: f64,
    pub h1: f64,
    pub n1: usize,
    pub hn: f64,
    pub nn: usize,
    /// Trajectory positions, level major like the coefficient fields.
    pub beta_lattice: Vec<f64>,
}

pub fn flow_map(ch: &ChartCoeffs) -> Result<FlowMap> {
    // Trajectories are stored on a depth lattice four times finer than the
    // coefficient lattice so that interpolating between stored levels does
    // not dominate the transport error.
    let refine = 4usize;
    let n1 = ch.n1;
    let nn = (ch.nn - 1) * refine + 1;
    let hn = ch.hn / refine as f64;
    let lo = ch.y1_lo;
    let width = (n1 - 1) as f64 * ch.h1;
    let mut beta = vec![0.0; n1 * nn];
    for i1 in 0..n1 {
        beta[i1] = lo + i1 as f64 * ch.h1;
    }
    // Edge seeds may drift out of the tangential window; they keep evolving
    // with the clamped edge coefficient, and requests that depend on data
    // from outside come back as escapes from alpha.  Only a runaway by a
    // full window width aborts the march itself.
    let deriv = |yn: f64, y: &[f64], out: &mut [f64]| {
        let fx = (y[0] - lo) / ch.h1;
        let fy = yn / ch.hn;
        out[0] = 2.0 * interp2(&ch.coef_mix, n1, ch.nn, fx, fy);
    };
    let mut cur = [0.0f64];
    let mut next = [0.0f64];
    for i1 in 0..n1 {
        cur[0] = beta[i1];
        for level in 1..nn {
            let yn = (level - 1) as f64 * hn;
            rk4_step(&deriv, yn, &cur, hn, &mut next);
            if next[0] < lo - width || next[0] > lo + 2.0 * width {
                return Err(Error::Escape { depth: yn + hn, y1: next[0] });
            }
            cur[0] = next[0];
            beta[level * n1 + i1] = cur[0];
        }
    }
    Ok(FlowMap { y1_lo: lo, h1: ch.h1, n1, hn, nn, beta_lattice: beta })
}

impl FlowMap {
    /// Trajectory position at depth yn for the seed at y1 = a.
    pub fn beta(&self, yn: f64, a: f64) -> f64 {
        let fx = (a - self.y1_lo) / self.h1;
        let fy = yn / self.hn;
        interp2(&self.beta_lattice, self.n1, self.nn, fx, fy)
    }

    /// Seed whose trajectory passes through y1 at depth yn.
    pub fn alpha(&self, yn: f64, y1: f64) -> Result<f64> {
        let hi = self.y1_lo + (self.n1 - 1) as f64 * self.h1;
        let mut a = self.y1_lo;
        let mut b = hi;
        let fa = self.beta(yn, a) - y1;
        let fb = self.beta(yn, b) - y1;
        if fa > 0.0 || fb < 0.0 {
            return Err(Error::Escape { depth: yn, y1 });
        }
        for _ in 0..70 {
            let mid = 0.5 * (a + b);
            if self.beta(yn, mid) - y1 > 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
        let _ = (fa, fb);
        Ok(0.5 * (a + b))
    }
}

/// Leading geometric optics amplitude for boundary data factored as
/// chi1(s) * chi2(y1): the transport equation moves the tangential factor
/// along the drift flow, so the amplitude is chi1(s) * chi2(alpha(yn, y1)).
pub struct GoAmplitude<'a> {
    pub flow: &'a FlowMap,
    pub t_horizon: f64,
    pub yn_max: f64,
    chi1: Box<dyn Fn(f64) -> f64 + 'a>,
    chi2: Box<dyn Fn(f64) -> f64 + 'a>,
}

pub fn go_amplitude<'a>(
    ch: &ChartCoeffs,
    flow: &'a FlowMap,
    t_horizon: f64,
    chi1: impl Fn(f64) -> f64 + 'a,
    chi2: impl Fn(f64) -> f64 + 'a,
) -> GoAmplitude<'a> {
    GoAmplitude {
        flow,
        t_horizon,
        yn_max: ch.yn_max,
        chi1: Box::new(chi1),
        chi2: Box::new(chi2),
    }
}

impl GoAmplitude<'_> {
    /// Amplitude at characteristic coordinates (s, tau, y1).
    pub fn eval(&self, s: f64, tau: f64, y1: f64) -> Result<f64> {
        let yn = 0.5 * (self.t_horizon - s - tau);
        if !(0.0..=self.yn_max).contains(&yn) {
            return Err(Error::Escape { depth: yn, y1 });
        }
        Ok((self.chi1)(s) * (self.chi2)(self.flow.alpha(yn, y1)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::ScalarSpec;
    use crate::media::MediumSpec;
    use crate::util::observed_order;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_outer() -> OuterSpec {
        OuterSpec::Rect { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 }
    }

    fn bottom_patch() -> PatchSpec {
        PatchSpec { edge: EdgeSide::Bottom, lo: 0.2, hi: 0.8 }
    }

    fn constant_metric(n: f64) -> AnalyticMetric {
        AnalyticMetric::slow(&MediumSpec::still(ScalarSpec::Constant { value: n }))
    }

    /// Smoothly varying index and weak drag over the patch collar.  Built
    /// from trigonometric profiles: their high order derivatives stay
    /// moderate, so collar interpolation error sits far below the residual
    /// tolerances being asserted.
    fn generic_metric() -> AnalyticMetric {
        AnalyticMetric::new(|x, y| {
            let n = 1.0 + 0.12 * (1.9 * x + 0.3).sin() * (1.4 * y + 0.2).cos();
            let vx = 0.05 * (1.1 * x + 0.7).sin() * (1.6 * y).cos();
            let vy = 0.04 * (1.5 * x).cos() * (1.2 * y + 0.4).sin();
            Matrix3::new(n * n, vx, vy, vx, -1.0, 0.0, vy, 0.0, -1.0)
        })
    }

    fn build(metric: &AnalyticMetric, params: Option<ChartParams>) -> GoursatChart {
        let outer = unit_outer();
        let patch = bottom_patch();
        let p = params.unwrap_or_else(|| ChartParams::default_for(&outer, &patch));
        build_chart(metric, &outer, &patch, &p).unwrap()
    }

    #[test]
    fn flat_space_phases_are_minus_depth() {
        let chart = build(&constant_metric(1.0), None);
        let c = &chart.collar;
        let mut worst = 0.0f64;
        for level in 0..c.nn {
            let xn = level as f64 * c.hn;
            for i1 in 0..c.n1 {
                let at = c.idx(i1, level);
                worst = worst.max((c.phi_plus[at] + xn).abs());
                worst = worst.max((c.phi_minus[at] + xn).abs());
                worst = worst.max((c.dn_plus[at] + 1.0).abs());
                worst = worst.max((c.dn_minus[at] + 1.0).abs());
                worst = worst.max(c.d1_plus[at].abs());
                let x = c.x1_lo + i1 as f64 * c.h1;
                worst = worst.max((c.label[at] - x).abs());
            }
        }
        assert!(worst <= 1e-8, "flat collar deviates by {worst:.3e}");
    }

    #[test]
    fn constant_index_doubles_the_slope() {
        let chart = build(&constant_metric(2.0), None);
        let c = &chart.collar;
        let mut worst = 0.0f64;
        for level in 0..c.nn {
            let xn = level as f64 * c.hn;
            for i1 in 0..c.n1 {
                let at = c.idx(i1, level);
                worst = worst.max((c.phi_plus[at] + 2.0 * xn).abs());
                worst = worst.max((c.phi_minus[at] + 2.0 * xn).abs());
            }
        }
        assert!(worst <= 1e-8, "n = 2 collar deviates by {worst:.3e}");
        // Straightening stretches the normal direction so the tangential
        // propagation speed 1/2 shows up as a quarter strength coefficient.
        let ch = &chart.coeffs;
        for i in 0..ch.coef_tan.len() {
            assert!((ch.coef_tan[i] + 0.25).abs() < 1e-8);
            assert!(ch.coef_mix[i].abs() < 1e-10);
            assert!((ch.scale[i] - 4.0).abs() < 1e-8);
        }
    }

    #[test]
    fn eiconal_residual_is_small_on_a_generic_collar() {
        let metric = generic_metric();
        let chart = build(&metric, None);
        let fm = FrameMetric::new(&metric, chart.frame);
        let c = &chart.collar;
        let mut worst = 0.0f64;
        for level in 0..c.nn {
            let xn = level as f64 * c.hn;
            for i1 in 0..c.n1 {
                let at = c.idx(i1, level);
                let x1 = c.x1_lo + i1 as f64 * c.h1;
                let g = fm.at(x1, xn);
                for (branch, p1, pn) in [
                    (1.0, c.d1_plus[at], c.dn_plus[at]),
                    (-1.0, c.d1_minus[at], c.dn_minus[at]),
                ] {
                    let r = g[(0, 0)]
                        + 2.0 * branch * (g[(0, 1)] * p1 + g[(0, 2)] * pn)
                        + g[(1, 1)] * p1 * p1
                        + 2.0 * g[(1, 2)] * p1 * pn
                        + g[(2, 2)] * pn * pn;
                    worst = worst.max(r.abs());
                }
            }
        }
        assert!(worst <= 1e-6, "eiconal residual {worst:.3e}");
    }

    #[test]
    fn eiconal_marching_converges_at_fourth_order() {
        let metric = generic_metric();
        let outer = unit_outer();
        let patch = bottom_patch();
        let frame = patch.frame(&outer).unwrap();
        let fm = FrameMetric::new(&metric, frame);
        let base = ChartParams::default_for(&outer, &patch);
        let probe = |nn: usize| {
            let p = ChartParams { nn, ..base };
            let c = solve_eiconal(&fm, patch.lo, patch.hi, &p).unwrap();
            let mut out = Vec::with_capacity(c.n1);
            for i1 in 0..c.n1 {
                out.push(c.phi_plus[c.idx(i1, c.nn - 1)]);
            }
            out
        };
        let reference = probe(129);
        let errs: Vec<f64> = [5usize, 9, 17]
            .iter()
            .map(|&nn| {
                let v = probe(nn);
                v.iter()
                    .zip(&reference)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .collect();
        let hs: Vec<f64> = [5usize, 9, 17].iter().map(|&nn| 1.0 / (nn - 1) as f64).collect();
        let order = observed_order(&hs, &errs);
        assert!(order >= 3.0, "step order {order:.2} from errors {errs:?}");
    }

    #[test]
    fn focusing_index_triggers_the_caustic_guard() {
        // A strong tangential lens focuses the inward characteristics; a
        // deep collar crosses the focus even after the one retry at half
        // depth, while a moderate collar survives exactly through that
        // retry.
        let lens = AnalyticMetric::new(|x, _y| {
            let n = 1.0 + 0.6 * (-((x - 0.5) / 0.1).powi(2)).exp();
            Matrix3::new(n * n, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
        });
        let outer = unit_outer();
        let patch = bottom_patch();
        let mut params = ChartParams::default_for(&outer, &patch);
        params.delta = 0.56;
        let err = build_chart(&lens, &outer, &patch, &params).unwrap_err();
        match err {
            Error::Caustic { depth } => assert!(depth > 0.0 && depth <= 0.28),
            other => panic!("expected a caustic, got {other:?}"),
        }
        params.delta = 0.26;
        let chart = build_chart(&lens, &outer, &patch, &params).unwrap();
        assert!((chart.delta - 0.13).abs() < 1e-12, "collar depth {}", chart.delta);
        let frame = patch.frame(&outer).unwrap();
        let fm = FrameMetric::new(&lens, frame);
        assert!(matches!(
            solve_eiconal(&fm, patch.lo, patch.hi, &params),
            Err(Error::Caustic { .. })
        ));
    }

    #[test]
    fn transversal_drift_matches_the_constant_coefficient_solution() {
        let drift = AnalyticMetric::new(|_x, _y| {
            Matrix3::new(1.0, 0.2, 0.0, 0.2, -1.0, 0.0, 0.0, 0.0, -1.0)
        });
        let chart = build(&drift, None);
        let c = &chart.collar;
        let mut worst = 0.0f64;
        for level in 0..c.nn {
            let xn = level as f64 * c.hn;
            for i1 in 0..c.n1 {
                let x = c.x1_lo + i1 as f64 * c.h1;
                worst = worst.max((chart.trans.phi[c.idx(i1, level)] - (x + 0.2 * xn)).abs());
            }
        }
        assert!(worst <= 1e-10, "transversal drift off by {worst:.3e}");
    }

    #[test]
    fn transversal_residual_is_small_on_a_generic_collar() {
        let metric = generic_metric();
        let chart = build(&metric, None);
        let fm = FrameMetric::new(&metric, chart.frame);
        let c = &chart.collar;
        let t = &chart.trans;
        let mut worst = 0.0f64;
        for level in 0..c.nn {
            let xn = level as f64 * c.hn;
            for i1 in 0..c.n1 {
                let at = c.idx(i1, level);
                let x1 = c.x1_lo + i1 as f64 * c.h1;
                let g = fm.at(x1, xn);
                let psi_m = [-1.0, c.d1_minus[at], c.dn_minus[at]];
                let w = [0.0, t.d1[at], t.dn[at]];
                worst = worst.max(bil(&g, psi_m, w).abs());
            }
        }
        assert!(worst <= 1e-6, "transversal residual {worst:.3e}");
    }

    #[test]
    fn coordinate_round_trip_and_boundary_identity() {
        let chart = build(&generic_metric(), None);
        let map = &chart.map;
        let ch = &chart.coeffs;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let y0 = rng.gen_range(-0.2..0.2);
            let y1 = rng.gen_range(ch.y1_lo..ch.y1_lo + (ch.n1 - 1) as f64 * ch.h1);
            let yn = rng.gen_range(0.0..ch.yn_max);
            let x = map.from_flat(y0, y1, yn).unwrap();
            let back = map.to_flat(x[0], x[1], x[2]);
            worst = worst.max((back[0] - y0).abs() + (back[1] - y1).abs() + (back[2] - yn).abs());

            let s = rng.gen_range(0.0..0.1);
            let tau = rng.gen_range(0.0..map.t_horizon - s - 2.0 * yn.min(0.01));
            let yn_c = 0.5 * (map.t_horizon - s - tau);
            if (0.0..ch.yn_max).contains(&yn_c) {
                let x = map.from_char(s, tau, y1).unwrap();
                let b = map.to_char(x[0], x[1], x[2]);
                worst = worst.max((b[0] - s).abs() + (b[1] - tau).abs() + (b[2] - y1).abs());
            }
        }
        assert!(worst <= 1e-10, "round trip error {worst:.3e}");
        // On the patch itself the straightened map is the identity.
        for i1 in 0..chart.collar.n1 {
            let x1 = chart.collar.x1_lo + i1 as f64 * chart.collar.h1;
            let f = map.to_flat(0.37, x1, 0.0);
            assert!((f[0] - 0.37).abs() < 1e-14);
            assert!((f[1] - x1).abs() < 1e-14);
            assert!(f[2].abs() < 1e-14);
        }
    }

    #[test]
    fn flat_space_map_is_the_identity_everywhere() {
        let chart = build(&constant_metric(1.0), None);
        let map = &chart.map;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let x0 = rng.gen_range(-0.3..0.3);
            let x1 = rng.gen_range(0.25..0.75);
            let xn = rng.gen_range(0.0..chart.delta);
            let f = map.to_flat(x0, x1, xn);
            assert!((f[0] - x0).abs() < 1e-12);
            assert!((f[1] - x1).abs() < 1e-12);
            assert!((f[2] - xn).abs() < 1e-12);
        }
        let ch = &chart.coeffs;
        for i in 0..ch.coef_tan.len() {
            assert!((ch.coef_tan[i] + 1.0).abs() < 1e-10);
            assert!(ch.coef_mix[i].abs() < 1e-11);
            assert!((ch.scale[i] - 1.0).abs() < 1e-10);
            assert!((ch.log_amp[i] + 0.5 * (2.0f64).ln()).abs() < 1e-10);
            assert!(ch.potential[i].abs() < 1e-9);
            assert!((ch.jac[i] - 1.0).abs() < 1e-10);
        }
    }

    /// The pairing, tangential block and full transformed metric must tie
    /// together through a fixed determinant identity; the three by three
    /// contraction matrix makes that check independent of the coefficient
    /// assembly.
    #[test]
    fn transformed_metric_determinant_identity_holds() {
        for (metric, tol) in [
            (
                AnalyticMetric::new(|_x, _y| {
                    Matrix3::new(1.1, 0.15, 0.1, 0.15, -1.0, 0.0, 0.1, 0.0, -1.0)
                }),
                1e-10,
            ),
            (generic_metric(), 1e-7),
        ] {
            let chart = build(&metric, None);
            let fm = FrameMetric::new(&metric, chart.frame);
            let c = &chart.collar;
            let t = &chart.trans;
            let mut worst = 0.0f64;
            for level in 0..c.nn {
                let xn = level as f64 * c.hn;
                for i1 in 0..c.n1 {
                    let at = c.idx(i1, level);
                    let x1 = c.x1_lo + i1 as f64 * c.h1;
                    let g = fm.at(x1, xn);
                    let psi_p = [1.0, c.d1_plus[at], c.dn_plus[at]];
                    let psi_m = [-1.0, c.d1_minus[at], c.dn_minus[at]];
                    let w = [0.0, t.d1[at], t.dn[at]];
                    let m = Matrix3::new(
                        bil(&g, psi_p, psi_p),
                        bil(&g, psi_p, psi_m),
                        bil(&g, psi_p, w),
                        bil(&g, psi_p, psi_m),
                        bil(&g, psi_m, psi_m),
                        bil(&g, psi_m, w),
                        bil(&g, psi_p, w),
                        bil(&g, psi_m, w),
                        bil(&g, w, w),
                    );
                    let pair = -0.5 * bil(&g, psi_p, psi_m);
                    let g11 = bil(&g, w, w);
                    let lhs = m.determinant();
                    let rhs = -4.0 * pair * pair * g11;
                    worst = worst.max((lhs - rhs).abs() / rhs.abs());
                }
            }
            assert!(worst <= tol, "determinant identity off by {worst:.3e} (tol {tol:.0e})");
        }
    }

    #[test]
    fn potential_assembly_is_exact_on_polynomial_fields() {
        let n1 = 33;
        let nn = 29;
        let h1 = 0.031;
        let hn = 0.017;
        let mut q = vec![0.0; n1 * nn];
        let mut m = vec![0.0; n1 * nn];
        let mut a = vec![0.0; n1 * nn];
        let mut expect = vec![0.0; n1 * nn];
        for level in 0..nn {
            let w = level as f64 * hn;
            for i1 in 0..n1 {
                let u = i1 as f64 * h1;
                let at = level * n1 + i1;
                q[at] = -1.0 + 0.2 * u + 0.1 * w + 0.05 * u * w;
                m[at] = 0.03 + 0.02 * u - 0.01 * w;
                a[at] = 0.1 + 0.05 * u - 0.04 * w + 0.03 * u * u + 0.02 * w * w + 0.01 * u * w;
                let a1 = 0.05 + 0.06 * u + 0.01 * w;
                let an = -0.04 + 0.04 * w + 0.01 * u;
                let ann = 0.04;
                let q1 = 0.2 + 0.05 * w;
                let a11 = 0.06;
                let a1n = 0.01;
                let mn = -0.01;
                let m1 = 0.02;
                expect[at] = ann + an * an
                    - (q1 * a1 + q[at] * a11)
                    - q[at] * a1 * a1
                    + (mn * a1 + m[at] * a1n)
                    + (m1 * an + m[at] * a1n)
                    + 2.0 * m[at] * a1 * an;
            }
        }
        let got = potential_field(&q, &m, &a, n1, nn, h1, hn);
        let worst = got
            .iter()
            .zip(&expect)
            .map(|(g, e)| (g - e).abs())
            .fold(0.0f64, f64::max);
        assert!(worst <= 1e-9, "potential deviates by {worst:.3e}");
    }

    /// Static part of the reduced operator assembled with flux differences
    /// and centered cross terms; the matrix must come out symmetric.
    #[test]
    fn reduced_operator_matrix_is_symmetric() {
        let n1 = 17;
        let nn = 13;
        let h1 = 0.05;
        let hn = 0.03;
        let mut q = vec![0.0; n1 * nn];
        let mut m = vec![0.0; n1 * nn];
        let mut v = vec![0.0; n1 * nn];
        for level in 0..nn {
            for i1 in 0..n1 {
                let u = i1 as f64 * h1;
                let w = level as f64 * hn;
                let at = level * n1 + i1;
                q[at] = -1.0 + 0.3 * (2.0 * u + w).sin() * 0.2;
                m[at] = 0.1 * (u - w).cos() * 0.3;
                v[at] = 0.2 * (u * w).sin();
            }
        }
        let rows = (n1 - 2) * (nn - 2);
        let at_in = |i1: usize, lv: usize| (lv - 1) * (n1 - 2) + (i1 - 1);
        let mut d1 = vec![0.0; rows * rows];
        let mut dn = vec![0.0; rows * rows];
        for lv in 1..nn - 1 {
            for i1 in 1..n1 - 1 {
                let r = at_in(i1, lv);
                if i1 > 1 {
                    d1[r * rows + at_in(i1 - 1, lv)] = -0.5 / h1;
                }
                if i1 < n1 - 2 {
                    d1[r * rows + at_in(i1 + 1, lv)] = 0.5 / h1;
                }
                if lv > 1 {
                    dn[r * rows + at_in(i1, lv - 1)] = -0.5 / hn;
                }
                if lv < nn - 2 {
                    dn[r * rows + at_in(i1, lv + 1)] = 0.5 / hn;
                }
            }
        }
        let mut l = vec![0.0; rows * rows];
        for lv in 1..nn - 1 {
            for i1 in 1..n1 - 1 {
                let r = at_in(i1, lv);
                let at = lv * n1 + i1;
                // -d^2/dyn^2 part.
                l[r * rows + r] += 2.0 / (hn * hn);
                if lv > 1 {
                    l[r * rows + at_in(i1, lv - 1)] -= 1.0 / (hn * hn);
                }
                if lv < nn - 2 {
                    l[r * rows + at_in(i1, lv + 1)] -= 1.0 / (hn * hn);
                }
                // Tangential flux term with half point coefficients.
                let qp = 0.5 * (q[at] + q[at + 1]);
                let qm = 0.5 * (q[at] + q[at - 1]);
                l[r * rows + r] -= (qp + qm) / (h1 * h1);
                if i1 < n1 - 2 {
                    l[r * rows + at_in(i1 + 1, lv)] += qp / (h1 * h1);
                }
                if i1 > 1 {
                    l[r * rows + at_in(i1 - 1, lv)] += qm / (h1 * h1);
                }
                l[r * rows + r] += v[at];
            }
        }
        // Mixed part -(Dn M D1 + D1 M Dn) with M the drift diagonal.
        let mut md1 = vec![0.0; rows * rows];
        let mut mdn = vec![0.0; rows * rows];
        for lv in 1..nn - 1 {
            for i1 in 1..n1 - 1 {
                let r = at_in(i1, lv);
                let coef = m[lv * n1 + i1];
                for c in 0..rows {
                    md1[r * rows + c] = coef * d1[r * rows + c];
                    mdn[r * rows + c] = coef * dn[r * rows + c];
                }
            }
        }
        for r in 0..rows {
            for c in 0..rows {
                let mut acc = 0.0;
                for k in 0..rows {
                    acc += dn[r * rows + k] * md1[k * rows + c] + d1[r * rows + k] * mdn[k * rows + c];
                }
                l[r * rows + c] -= acc;
            }
        }
        let scale = l.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut asym = 0.0f64;
        for r in 0..rows {
            for c in 0..rows {
                asym = asym.max((l[r * rows + c] - l[c * rows + r]).abs());
            }
        }
        assert!(asym <= 1e-10 * scale, "asymmetry {asym:.3e} against scale {scale:.3e}");
    }

    #[test]
    fn flow_map_identity_and_constant_drift() {
        let chart = build(&constant_metric(1.0), None);
        let flow = flow_map(&chart.coeffs).unwrap();
        for level in 0..flow.nn {
            for i1 in 0..flow.n1 {
                let a = flow.y1_lo + i1 as f64 * flow.h1;
                assert!((flow.beta_lattice[level * flow.n1 + i1] - a).abs() < 1e-12);
            }
        }
        // Constant drift integrates to a linear shift with slope twice the
        // coefficient.
        let mut ch = chart.coeffs.clone();
        for v in ch.coef_mix.iter_mut() {
            *v = 0.07;
        }
        let flow = flow_map(&ch).unwrap();
        let a0 = ch.y1_lo + 3.0 * ch.h1;
        for level in 0..ch.nn {
            let yn = level as f64 * ch.hn;
            let b = flow.beta(yn, a0);
            assert!((b - (a0 + 0.14 * yn)).abs() < 1e-12, "level {level}");
        }
    }

    #[test]
    fn flow_inverse_round_trips_and_escape_is_reported() {
        let chart = build(&generic_metric(), None);
        let flow = flow_map(&chart.coeffs).unwrap();
        let ch = &chart.coeffs;
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let span = (ch.n1 - 1) as f64 * ch.h1;
        let mut worst = 0.0f64;
        for _ in 0..300 {
            let a = ch.y1_lo + rng.gen_range(0.1..0.9) * span;
            let yn = rng.gen_range(0.0..ch.yn_max);
            let b = flow.beta(yn, a);
            let back = flow.alpha(yn, b).unwrap();
            worst = worst.max((back - a).abs());
        }
        assert!(worst <= 1e-9, "flow round trip {worst:.3e}");

        let mut strong = chart.coeffs.clone();
        for v in strong.coef_mix.iter_mut() {
            *v = 3.0;
        }
        assert!(matches!(flow_map(&strong), Err(Error::Escape { .. })));
    }

    #[test]
    fn amplitude_reduces_to_the_data_without_drift_and_on_the_patch() {
        let chart = build(&constant_metric(1.0), None);
        let flow = flow_map(&chart.coeffs).unwrap();
        let chi1 = |s: f64| (1.3 * s).sin() + 2.0;
        let chi2 = |y: f64| (2.0 * y).cos() + 1.5;
        let amp = go_amplitude(&chart.coeffs, &flow, chart.t_horizon, chi1, chi2);
        let ch = &chart.coeffs;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let y1 = ch.y1_lo + rng.gen_range(0.0..1.0) * (ch.n1 - 1) as f64 * ch.h1;
            let yn = rng.gen_range(0.0..ch.yn_max);
            let s = rng.gen_range(0.0..0.05);
            let tau = chart.t_horizon - s - 2.0 * yn;
            let got = amp.eval(s, tau, y1).unwrap();
            assert!((got - chi1(s) * chi2(y1)).abs() < 1e-9);
        }
        // On the patch (yn = 0) any chart reproduces the data exactly.
        let chart = build(&generic_metric(), None);
        let flow = flow_map(&chart.coeffs).unwrap();
        let amp = go_amplitude(&chart.coeffs, &flow, chart.t_horizon, chi1, chi2);
        for i1 in 0..chart.coeffs.n1 {
            let y1 = chart.coeffs.y1_lo + i1 as f64 * chart.coeffs.h1;
            let s = 0.02 + 0.001 * i1 as f64;
            let tau = chart.t_horizon - s;
            let got = amp.eval(s, tau, y1).unwrap();
            assert!((got - chi1(s) * chi2(y1)).abs() < 1e-10);
        }
    }

    #[test]
    fn amplitude_satisfies_the_transport_equation() {
        let chart = build(&generic_metric(), None);
        let flow = flow_map(&chart.coeffs).unwrap();
        let chi1 = |s: f64| (0.7 * s).cos() + 2.0;
        let chi2 = |y: f64| (3.0 * y).sin() + 2.0;
        let amp = go_amplitude(&chart.coeffs, &flow, chart.t_horizon, chi1, chi2);
        let ch = &chart.coeffs;
        let span = (ch.n1 - 1) as f64 * ch.h1;
        let h = 1e-3;
        let d4 = |f: &dyn Fn(f64) -> f64, x: f64| {
            (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut worst = 0.0f64;
        for _ in 0..60 {
            let y1 = ch.y1_lo + rng.gen_range(0.25..0.75) * span;
            let yn = rng.gen_range(0.25..0.75) * ch.yn_max;
            let s = 0.03;
            let tau = chart.t_horizon - s - 2.0 * yn;
            let da_dtau = d4(&|t| amp.eval(s, t, y1).unwrap(), tau);
            let da_dy1 = d4(&|y| amp.eval(s, tau, y).unwrap(), y1);
            let fx = (y1 - ch.y1_lo) / ch.h1;
            let fy = yn / ch.hn;
            let mix = interp2(&ch.coef_mix, ch.n1, ch.nn, fx, fy);
            worst = worst.max((4.0 * da_dtau - 4.0 * mix * da_dy1).abs());
        }
        assert!(worst <= 1e-6, "transport residual {worst:.3e}");
    }

    #[test]
    fn side_patches_share_the_flat_space_behaviour() {
        // The frame machinery must make every edge look like the bottom one.
        let outer = unit_outer();
        let metric = constant_metric(2.0);
        for edge in [EdgeSide::Top, EdgeSide::Left, EdgeSide::Right] {
            let patch = PatchSpec { edge, lo: 0.2, hi: 0.8 };
            let params = ChartParams::default_for(&outer, &patch);
            let chart = build_chart(&metric, &outer, &patch, &params).unwrap();
            let c = &chart.collar;
            let mut worst = 0.0f64;
            for level in 0..c.nn {
                let xn = level as f64 * c.hn;
                for i1 in 0..c.n1 {
                    worst = worst.max((c.phi_plus[c.idx(i1, level)] + 2.0 * xn).abs());
                }
            }
            assert!(worst <= 1e-8, "edge {edge:?} deviates by {worst:.3e}");
        }
    }
}
