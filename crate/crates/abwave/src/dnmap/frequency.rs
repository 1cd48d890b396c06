//! Fixed-frequency slices of time-domain DN responses.
//!
//! A windowed transform of the response family can be checked against a
//! direct Helmholtz solve at the same wavenumber.  That comparison ties the
//! time stepper and the trace extraction to an independent elliptic solver
//! with no shared code path beyond the grid.

use num_complex::Complex;

use super::{BoundarySignal, DNMatrix};
use crate::error::{Error, Result};
use crate::geometry::{Grid2D, NodeKind};

/// Trailing share of the record inspected for unfinished reverberation.
const TAIL_SHARE: f64 = 0.10;
/// Tail energy fraction above which an unwindowed transform is refused.
const TAIL_LIMIT: f64 = 1e-6;
/// Share of the record over which the taper falls from one to zero.
const TAPER_SHARE: f64 = 0.35;

/// One frequency slice of a DN response family.
#[derive(Debug, Clone)]
pub struct FrequencyDn {
    pub k: f64,
    pub nb: usize,
    /// One complex boundary profile per response, row major.
    pub coeffs: Vec<Complex<f64>>,
    /// Per response share of raw signal energy in the record tail.
    pub tail_fractions: Vec<f64>,
    pub windowed: bool,
}

impl FrequencyDn {
    pub fn response(&self, i: usize) -> &[Complex<f64>] {
        &self.coeffs[i * self.nb..(i + 1) * self.nb]
    }
}

/// Smooth step: 0 below 0, 1 above 1, with every derivative vanishing at
/// both ends.  The flat ends keep truncation leakage below any power of the
/// window length, which a polynomial taper cannot do.
fn flat_step(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / x).exp();
    let b = (-1.0 / (1.0 - x)).exp();
    a / (a + b)
}

fn taper(t: f64, t_last: f64) -> f64 {
    let span = TAPER_SHARE * t_last;
    if span <= 0.0 {
        return 1.0;
    }
    flat_step((t_last - t) / span)
}

fn tail_fraction(sig: &BoundarySignal) -> f64 {
    let tail_len = ((TAIL_SHARE * sig.nt as f64).ceil() as usize).clamp(1, sig.nt);
    let mut total = 0.0;
    let mut tail = 0.0;
    for it in 0..sig.nt {
        for ib in 0..sig.nb {
            let v = sig.at(it, ib);
            total += v * v;
            if it >= sig.nt - tail_len {
                tail += v * v;
            }
        }
    }
    if total > 0.0 {
        tail / total
    } else {
        0.0
    }
}

/// Transform every response to a single wavenumber, sum of v(t) w(t) e^{-ikt} dt.
///
/// Without a window the record must already be quiet near its end; a loud
/// tail means the run stopped while energy was still arriving and the slice
/// would alias it, so that case is an error rather than a wrong number.
/// With `window` set, a smooth taper (identically one over the leading part
/// of the record) suppresses the truncation instead.
pub fn frequency_dn(d: &DNMatrix, k: f64, window: bool) -> Result<FrequencyDn> {
    let nb = d.responses.first().map(|r| r.nb).unwrap_or(0);
    let mut coeffs = Vec::with_capacity(d.responses.len() * nb);
    let mut tail_fractions = Vec::with_capacity(d.responses.len());
    for r in &d.responses {
        if r.nb != nb {
            return Err(Error::ShapeMismatch(format!(
                "response widths {} vs {}",
                r.nb, nb
            )));
        }
        let fraction = tail_fraction(r);
        if !window && fraction > TAIL_LIMIT {
            return Err(Error::Leakage { fraction });
        }
        tail_fractions.push(fraction);
        let t_last = (r.nt.max(1) - 1) as f64 * r.dt;
        let mut acc = vec![Complex::new(0.0, 0.0); nb];
        for it in 0..r.nt {
            let t = it as f64 * r.dt;
            let w = if window { taper(t, t_last) } else { 1.0 };
            if w == 0.0 {
                continue;
            }
            let phase = Complex::new((k * t).cos(), -(k * t).sin());
            let scale = w * r.dt;
            for (ib, a) in acc.iter_mut().enumerate() {
                *a += phase * (r.at(it, ib) * scale);
            }
        }
        coeffs.extend(acc);
    }
    Ok(FrequencyDn {
        k,
        nb,
        coeffs,
        tail_fractions,
        windowed: window,
    })
}

/// Solve (-laplace - k^2) u = 0 with Dirichlet data on the outer ring and
/// zero on obstacles, then return the one-sided normal-derivative trace in
/// ring order.  Valid below the first cavity resonance, where the shifted
/// operator stays positive definite and conjugate gradients applies.
///
/// The trace uses the same one-sided stencil as the time-domain extraction,
/// so the leading discretization bias cancels when the two are compared.
pub fn helmholtz_reference(grid: &Grid2D, k: f64, data: &[f64]) -> Result<Vec<f64>> {
    let ring = &grid.outer_boundary;
    if data.len() != ring.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} data values for {} ring nodes",
            data.len(),
            ring.len()
        )));
    }
    let (mx, my) = grid.node_count();
    let mut field = vec![0.0; mx * my];
    for (i, bn) in ring.iter().enumerate() {
        field[bn.iy * mx + bn.ix] = data[i];
    }

    // Unknowns are the interior fluid nodes.
    let mut slot = vec![usize::MAX; mx * my];
    let mut nodes = Vec::new();
    for iy in 0..my {
        for ix in 0..mx {
            if grid.node(ix, iy) == NodeKind::Interior {
                slot[iy * mx + ix] = nodes.len();
                nodes.push((ix, iy));
            }
        }
    }
    let n = nodes.len();
    let cx = 1.0 / (grid.dx * grid.dx);
    let cy = 1.0 / (grid.dy * grid.dy);
    let diag = 2.0 * cx + 2.0 * cy - k * k;

    let neighbors = |ix: usize, iy: usize| {
        [
            (ix.wrapping_sub(1), iy, cx),
            (ix + 1, iy, cx),
            (ix, iy.wrapping_sub(1), cy),
            (ix, iy + 1, cy),
        ]
    };
    let matvec = |x: &[f64], y: &mut [f64]| {
        for (i, &(ix, iy)) in nodes.iter().enumerate() {
            let mut v = diag * x[i];
            for (jx, jy, c) in neighbors(ix, iy) {
                if jx < mx && jy < my {
                    let s = slot[jy * mx + jx];
                    if s != usize::MAX {
                        v -= c * x[s];
                    }
                }
            }
            y[i] = v;
        }
    };

    // Dirichlet values move to the right-hand side.
    let mut b = vec![0.0; n];
    for (i, &(ix, iy)) in nodes.iter().enumerate() {
        for (jx, jy, c) in neighbors(ix, iy) {
            if jx < mx && jy < my && grid.node(jx, jy) == NodeKind::OuterBoundary {
                b[i] += c * field[jy * mx + jx];
            }
        }
    }

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dot(&b, &b).sqrt();
    let mut u = vec![0.0; n];
    if b_norm > 0.0 {
        let tol = 1e-12 * b_norm;
        let mut r = b.clone();
        let mut p = b;
        let mut ap = vec![0.0; n];
        let mut rs = dot(&r, &r);
        let mut converged = false;
        for _ in 0..(20 * n).max(2000) {
            matvec(&p, &mut ap);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "helmholtz operator not positive definite at k = {k}"
                )));
            }
            let alpha = rs / pap;
            for i in 0..n {
                u[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rs_new = dot(&r, &r);
            if rs_new.sqrt() <= tol {
                converged = true;
                break;
            }
            let beta = rs_new / rs;
            rs = rs_new;
            for i in 0..n {
                p[i] = r[i] + beta * p[i];
            }
        }
        if !converged {
            return Err(Error::Degenerate(
                "helmholtz solve did not converge".into(),
            ));
        }
    }
    for (i, &(ix, iy)) in nodes.iter().enumerate() {
        field[iy * mx + ix] = u[i];
    }

    // Same one-sided trace as the time-domain path, static case.
    let at = |ix: i32, iy: i32| field[iy as usize * mx + ix as usize];
    let mut tr = vec![0.0; ring.len()];
    for (i, bn) in ring.iter().enumerate() {
        let (ix, iy) = (bn.ix as i32, bn.iy as i32);
        let (sx, sy) = bn.inward;
        let ux = if sx != 0 {
            let d1 = (-3.0 * at(ix, iy) + 4.0 * at(ix + sx, iy) - at(ix + 2 * sx, iy))
                / (2.0 * grid.dx);
            sx as f64 * d1
        } else {
            0.0
        };
        let uy = if sy != 0 {
            let d1 = (-3.0 * at(ix, iy) + 4.0 * at(ix, iy + sy) - at(ix, iy + 2 * sy))
                / (2.0 * grid.dy);
            sy as f64 * d1
        } else {
            0.0
        };
        tr[i] = bn.normal[0] * ux + bn.normal[1] * uy;
    }
    Ok(tr)
}
