//! Integral identities of the reduced operator on a straightened chart.
//!
//! Two identities are checked by quadrature against analytic test fields
//! that carry their own derivatives, so the measured residual is quadrature
//! error plus the identity itself, with no finite differencing of the
//! fields.  The first pairs two fields through the boundary conormal; the
//! second is the energy identity whose interior part is the quadratic form
//! `q_form`.  For fields annihilated by the operator the interior integrals
//! drop out and the identities tie the characteristic-plane data to the
//! boundary data alone.
//!
//! Geometry: the slab {0 <= y0 <= T - yn, 0 <= yn <= cap} over the chart's
//! tangential window, with cap the covered depth.  Test fields must vanish
//! on y0 = 0 and at the tangential window edges, and on yn = cap whenever
//! cap < T; the energy identity additionally needs the time derivative to
//! vanish on y0 = 0.

use crate::goursat::{d_cols, d_rows, interp2, ChartCoeffs};

/// Value, gradient (d0, d1, dn) and second derivatives packed as
/// (d00, d01, d0n, d11, d1n, dnn) of a field at a point of the
/// straightened half-space.
#[derive(Debug, Clone, Copy, Default)]
pub struct FieldJet {
    pub v: f64,
    pub d: [f64; 3],
    pub dd: [f64; 6],
}

/// One dimensional profile value with two derivatives.
#[derive(Debug, Clone, Copy)]
pub struct Prof1 {
    pub v: f64,
    pub d: f64,
    pub dd: f64,
}

impl Prof1 {
    pub fn sin(w: f64, phase: f64, x: f64) -> Prof1 {
        let s = (w * x + phase).sin();
        let c = (w * x + phase).cos();
        Prof1 { v: s, d: w * c, dd: -w * w * s }
    }

    pub fn one() -> Prof1 {
        Prof1 { v: 1.0, d: 0.0, dd: 0.0 }
    }

    /// 1 - cos ramp: vanishes with its derivative at x = 0.
    pub fn ramp(w: f64, x: f64) -> Prof1 {
        Prof1 { v: 1.0 - (w * x).cos(), d: w * (w * x).sin(), dd: w * w * (w * x).cos() }
    }
}

/// Jet of a separated product a(y0) b(y1) c(yn).
pub fn jet_product(a: Prof1, b: Prof1, c: Prof1) -> FieldJet {
    FieldJet {
        v: a.v * b.v * c.v,
        d: [a.d * b.v * c.v, a.v * b.d * c.v, a.v * b.v * c.d],
        dd: [
            a.dd * b.v * c.v,
            a.d * b.d * c.v,
            a.d * b.v * c.d,
            a.v * b.dd * c.v,
            a.v * b.d * c.d,
            a.v * b.v * c.dd,
        ],
    }
}

/// Coefficient values of the reduced operator at a point, with the
/// derivatives its divergence-form terms need.
#[derive(Debug, Clone, Copy)]
pub struct CoeffSample {
    pub q: f64,
    pub m: f64,
    pub pot: f64,
    pub q1: f64,
    pub m1: f64,
    pub mn: f64,
}

/// Interpolating sampler over a chart's coefficient lattices; the
/// derivative lattices are built once by fourth order differences.
pub struct CoeffField<'a> {
    ch: &'a ChartCoeffs,
    q1: Vec<f64>,
    m1: Vec<f64>,
    mn: Vec<f64>,
}

impl<'a> CoeffField<'a> {
    pub fn new(ch: &'a ChartCoeffs) -> Self {
        CoeffField {
            ch,
            q1: d_rows(&ch.coef_tan, ch.n1, ch.nn, ch.h1),
            m1: d_rows(&ch.coef_mix, ch.n1, ch.nn, ch.h1),
            mn: d_cols(&ch.coef_mix, ch.n1, ch.nn, ch.hn),
        }
    }

    pub fn at(&self, y1: f64, yn: f64) -> CoeffSample {
        let ch = self.ch;
        let fx = (y1 - ch.y1_lo) / ch.h1;
        let fy = yn / ch.hn;
        let pick = |f: &[f64]| interp2(f, ch.n1, ch.nn, fx, fy);
        CoeffSample {
            q: pick(&ch.coef_tan),
            m: pick(&ch.coef_mix),
            pot: pick(&ch.potential),
            q1: pick(&self.q1),
            m1: pick(&self.m1),
            mn: pick(&self.mn),
        }
    }
}

/// The reduced operator applied to a field jet: the two plain second
/// derivatives, the tangential divergence term, both drift terms expanded,
/// and the potential.
pub fn reduced_apply(c: &CoeffSample, j: &FieldJet) -> f64 {
    j.dd[0] - j.dd[5]
        + c.q * j.dd[3]
        + c.q1 * j.d[1]
        + 2.0 * c.m * (j.dd[1] - j.dd[4])
        + c.m1 * (j.d[0] - j.d[2])
        - c.mn * j.d[1]
        + c.pot * j.v
}

/// Boundary conormal of the reduced operator on yn = 0: the normal
/// derivative plus the drift coefficient times the tangential one.  This is
/// the flux the integration by parts actually produces, so the drift enters
/// with a plus sign.
pub fn conormal(c: &CoeffSample, j: &FieldJet) -> f64 {
    j.d[2] + c.m * j.d[1]
}

/// Matrix of the spatial part of the reduced symbol in (xi_1, xi_n);
/// hyperbolic charts make it negative definite.
pub fn symbol_matrix(q: f64, m: f64) -> [[f64; 2]; 2] {
    [[q, -m], [-m, -1.0]]
}

/// Matrix of the quadratic-form integrand in (2 u_s, u_1); congruent to
/// minus the symbol matrix, so it is positive definite exactly when the
/// symbol matrix is negative definite.
pub fn integrand_matrix(q: f64, m: f64) -> [[f64; 2]; 2] {
    [[1.0, -m], [-m, -q]]
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn eig2(a: [[f64; 2]; 2]) -> [f64; 2] {
    let tr = 0.5 * (a[0][0] + a[1][1]);
    let det = ((a[0][0] - a[1][1]) * 0.5).hypot(a[0][1]);
    [tr - det, tr + det]
}

#[inline]
fn trap(i: usize, n: usize) -> f64 {
    if i == 0 || i == n - 1 {
        0.5
    } else {
        1.0
    }
}

fn window(ch: &ChartCoeffs) -> (f64, f64) {
    (ch.y1_lo, ch.y1_lo + (ch.n1 - 1) as f64 * ch.h1)
}

/// Quadratic form of the energy identity over the chart-covered part of the
/// characteristic plane y0 + yn = T, in the plane measure ds dy1 with
/// s = y0 - yn.  The s-derivative along the plane is (d0 - dn)/2.
pub fn q_form(
    ch: &ChartCoeffs,
    t_horizon: f64,
    nq: usize,
    u: &dyn Fn(f64, f64, f64) -> FieldJet,
    v: &dyn Fn(f64, f64, f64) -> FieldJet,
) -> f64 {
    let cf = CoeffField::new(ch);
    let (w_lo, w_hi) = window(ch);
    let cap = ch.yn_max.min(t_horizon);
    let hn = cap / (nq - 1) as f64;
    let h1 = (w_hi - w_lo) / (nq - 1) as f64;
    let mut acc = 0.0;
    for iy in 0..nq {
        let yn = iy as f64 * hn;
        let y0 = t_horizon - yn;
        for i1 in 0..nq {
            let y1 = w_lo + i1 as f64 * h1;
            let c = cf.at(y1, yn);
            let ju = u(y0, y1, yn);
            let jv = v(y0, y1, yn);
            let us = 0.5 * (ju.d[0] - ju.d[2]);
            let vs = 0.5 * (jv.d[0] - jv.d[2]);
            let integrand = 4.0 * us * vs - c.q * ju.d[1] * jv.d[1]
                - 2.0 * c.m * (us * jv.d[1] + ju.d[1] * vs)
                + c.pot * ju.v * jv.v;
            // One half from the identity, ds = 2 dyn from the slant.
            acc += trap(iy, nq) * trap(i1, nq) * integrand * hn * h1;
        }
    }
    acc
}

/// Residuals of the two integral identities.
#[derive(Debug, Clone, Copy)]
pub struct GreenResiduals {
    /// Interior pairing minus plane pairing minus boundary pairing.
    pub pairing: f64,
    /// Energy interior term minus quadratic form minus boundary term.
    pub energy: f64,
}

/// Evaluate both identities for a pair of analytic test fields and return
/// the absolute defects.  Fields obeying the slab's vanishing conditions
/// make both defects pure quadrature error, of second order in 1/nq; fields
/// annihilated by the operator make the interior integrals vanish as well.
pub fn green_residual(
    ch: &ChartCoeffs,
    t_horizon: f64,
    nq: usize,
    u: &dyn Fn(f64, f64, f64) -> FieldJet,
    v: &dyn Fn(f64, f64, f64) -> FieldJet,
) -> GreenResiduals {
    let cf = CoeffField::new(ch);
    let (w_lo, w_hi) = window(ch);
    let cap = ch.yn_max.min(t_horizon);
    let hn = cap / (nq - 1) as f64;
    let h1 = (w_hi - w_lo) / (nq - 1) as f64;

    // Interior integrals over the slab, column by column in y0 with a fixed
    // node count, so the last node lands exactly on the slanted face and the
    // column spacing varies smoothly with depth.  A spacing that jumps with
    // the rounded column length would pollute the h^2 error expansion.
    let mut ix_pair = 0.0;
    let mut ix_en = 0.0;
    for iy in 0..nq {
        let yn = iy as f64 * hn;
        let h0 = (t_horizon - yn) / (nq - 1) as f64;
        for i1 in 0..nq {
            let y1 = w_lo + i1 as f64 * h1;
            let c = cf.at(y1, yn);
            let w_out = trap(iy, nq) * trap(i1, nq) * hn * h1 * h0;
            for i0 in 0..nq {
                let y0 = i0 as f64 * h0;
                let w = w_out * trap(i0, nq);
                let ju = u(y0, y1, yn);
                let jv = v(y0, y1, yn);
                let lu = reduced_apply(&c, &ju);
                let lv = reduced_apply(&c, &jv);
                ix_pair += w * (lu * jv.v - ju.v * lv);
                ix_en += w * (lu * jv.d[0] + ju.d[0] * lv);
            }
        }
    }

    // Characteristic-plane integrals, ds = 2 dyn.
    let mut iy_pair = 0.0;
    for iy in 0..nq {
        let yn = iy as f64 * hn;
        let y0 = t_horizon - yn;
        for i1 in 0..nq {
            let y1 = w_lo + i1 as f64 * h1;
            let ju = u(y0, y1, yn);
            let jv = v(y0, y1, yn);
            let us = 0.5 * (ju.d[0] - ju.d[2]);
            let vs = 0.5 * (jv.d[0] - jv.d[2]);
            iy_pair +=
                trap(iy, nq) * trap(i1, nq) * 2.0 * (us * jv.v - ju.v * vs) * hn * h1;
        }
    }
    let q = q_form(ch, t_horizon, nq, u, v);

    // Boundary-plane integrals over yn = 0, y0 in [0, T].
    let h0 = t_horizon / (nq - 1) as f64;
    let mut ib_pair = 0.0;
    let mut ib_en = 0.0;
    for i0 in 0..nq {
        let y0 = i0 as f64 * h0;
        for i1 in 0..nq {
            let y1 = w_lo + i1 as f64 * h1;
            let c = cf.at(y1, 0.0);
            let ju = u(y0, y1, 0.0);
            let jv = v(y0, y1, 0.0);
            let bu = conormal(&c, &ju);
            let bv = conormal(&c, &jv);
            let w = trap(i0, nq) * trap(i1, nq) * h0 * h1;
            ib_pair += w * (bu * jv.v - ju.v * bv);
            ib_en += w * (bu * jv.d[0] + ju.d[0] * bv);
        }
    }

    GreenResiduals {
        pairing: (ix_pair - iy_pair - ib_pair).abs(),
        energy: (ix_en - q - ib_en).abs(),
    }
}
