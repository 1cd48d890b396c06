//! Dirichlet-to-Neumann operators sampled on pulse bases.
//!
//! A DN matrix is the collection of boundary responses to a family of smooth
//! Dirichlet pulses. Two media are compared by the weighted L2 distance
//! between their response families; every "equal" claim downstream states
//! its threshold relative to solver self-convergence at the same resolution.

mod frequency;
mod green;

pub use frequency::{frequency_dn, helmholtz_reference, FrequencyDn};
pub use green::{
    conormal, eig2, green_residual, integrand_matrix, jet_product, q_form, reduced_apply,
    symbol_matrix, CoeffField, CoeffSample, FieldJet, GreenResiduals, Prof1,
};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{BoundaryNode, Grid2D};
use crate::solver::{
    simulate, BoundaryDrive, BoundaryRecord, CoefficientBundle, EquationKind, SimConfig,
};
use crate::util::{bump_profile, interp_cubic, periodic_distance};

/// Samples of a function on (time, outer boundary node).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundarySignal {
    pub nt: usize,
    pub nb: usize,
    pub dt: f64,
    /// Arclength coordinate per boundary node, ring ordered.
    pub s: Vec<f64>,
    pub perimeter: f64,
    /// nt x nb row-major.
    pub values: Vec<f64>,
}

impl BoundarySignal {
    pub fn from_parts(
        nt: usize,
        nb: usize,
        dt: f64,
        s: Vec<f64>,
        perimeter: f64,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != nt * nb || s.len() != nb {
            return Err(Error::ShapeMismatch(format!(
                "signal values {} for nt {} x nb {}",
                values.len(),
                nt,
                nb
            )));
        }
        Ok(BoundarySignal {
            nt,
            nb,
            dt,
            s,
            perimeter,
            values,
        })
    }

    #[inline]
    pub fn at(&self, it: usize, ib: usize) -> f64 {
        self.values[it * self.nb + ib]
    }

    /// Trapezoid-style arclength weight per node on the closed ring.
    pub fn ds_weights(&self) -> Vec<f64> {
        ds_weights(&self.s, self.perimeter)
    }

    /// Weighted L2 norm with dt x ds quadrature.
    pub fn norm(&self) -> f64 {
        let ds = self.ds_weights();
        let mut sum = 0.0;
        for it in 0..self.nt {
            for ib in 0..self.nb {
                let v = self.at(it, ib);
                sum += v * v * ds[ib];
            }
        }
        (sum * self.dt).sqrt()
    }

    /// Enforce the compact-support contract for input signals: the leading
    /// and trailing 5% of time samples must vanish identically.
    pub fn check_compact_support(&self) -> Result<()> {
        let guard = (self.nt as f64 * 0.05).floor() as usize;
        for it in (0..guard).chain(self.nt - guard..self.nt) {
            for ib in 0..self.nb {
                if self.at(it, ib) != 0.0 {
                    return Err(Error::Degenerate(format!(
                        "input signal not compactly supported: sample ({it}, {ib}) nonzero"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cubic resampling onto a target time step count and arclength layout.
    /// Arclength alignment uses the normalized fraction s / perimeter, which
    /// is exact when outer boundaries coincide.
    pub fn resample_to(&self, nt: usize, dt: f64, s: &[f64], perimeter: f64) -> BoundarySignal {
        // Time pass: all source columns at the target times.
        let nb_src = self.nb;
        let mut mid = vec![0.0; nt * nb_src];
        let mut col = vec![0.0; self.nt];
        for ib in 0..nb_src {
            for it in 0..self.nt {
                col[it] = self.at(it, ib);
            }
            for it in 0..nt {
                let tau = (it as f64 * dt) / self.dt;
                mid[it * nb_src + ib] = interp_cubic(&col, tau);
            }
        }
        // Arclength pass: periodic 4-point Lagrange in the source ring.
        let nb = s.len();
        let mut values = vec![0.0; nt * nb];
        for (jb, &sj) in s.iter().enumerate() {
            let frac = sj / perimeter * self.perimeter;
            // Closest source node at or before frac (ring wraps below s[0]).
            let k = match self
                .s
                .binary_search_by(|p| p.partial_cmp(&frac).unwrap())
            {
                Ok(i) => i,
                Err(0) => nb_src - 1,
                Err(i) => i - 1,
            };
            let idx = [
                (k + nb_src - 1) % nb_src,
                k,
                (k + 1) % nb_src,
                (k + 2) % nb_src,
            ];
            // Unwrap abscissas into an ascending chain, then slide the chain
            // so the query sits in its central interval.
            let mut xs = [0.0; 4];
            for (m, &i) in idx.iter().enumerate() {
                xs[m] = self.s[i];
            }
            for m in 1..4 {
                while xs[m] < xs[m - 1] {
                    xs[m] += self.perimeter;
                }
            }
            if xs[1] > frac {
                for x in &mut xs {
                    *x -= self.perimeter;
                }
            }
            for it in 0..nt {
                let mut acc = 0.0;
                for m in 0..4 {
                    let mut l = 1.0;
                    for p in 0..4 {
                        if p != m {
                            l *= (frac - xs[p]) / (xs[m] - xs[p]);
                        }
                    }
                    acc += l * mid[it * nb_src + idx[m]];
                }
                values[it * nb + jb] = acc;
            }
        }
        BoundarySignal {
            nt,
            nb,
            dt,
            s: s.to_vec(),
            perimeter,
            values,
        }
    }
}

fn ds_weights(s: &[f64], perimeter: f64) -> Vec<f64> {
    let nb = s.len();
    let mut ds = vec![0.0; nb];
    for i in 0..nb {
        let next = s[(i + 1) % nb];
        let prev = s[(i + nb - 1) % nb];
        let fwd = (next - s[i]).rem_euclid(perimeter);
        let back = (s[i] - prev).rem_euclid(perimeter);
        ds[i] = 0.5 * (fwd + back);
    }
    ds
}

/// Smooth pulse in (t, s): compactly supported bump profiles in both
/// variables, peak value one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub center_s: f64,
    pub onset: f64,
    pub sigma_t: f64,
    pub sigma_s: f64,
}

impl PulseSpec {
    /// Support in time is [onset, onset + 8 sigma_t]; in arclength the pulse
    /// reaches 4 sigma_s to each side of the center.
    pub fn value(&self, t: f64, s: f64, perimeter: f64) -> f64 {
        let half_t = 4.0 * self.sigma_t;
        let qt = ((t - self.onset - half_t) / half_t).powi(2);
        let d = periodic_distance(s, self.center_s, perimeter);
        let qs = (d / (4.0 * self.sigma_s)).powi(2);
        bump_profile(qt) * bump_profile(qs)
    }

    pub fn t_end(&self) -> f64 {
        self.onset + 8.0 * self.sigma_t
    }
}

/// A pulse bound to a concrete boundary, usable as Dirichlet data.
pub struct PulseDrive {
    pub pulse: PulseSpec,
    pub perimeter: f64,
}

impl BoundaryDrive for PulseDrive {
    fn value(&self, t: f64, node: &BoundaryNode) -> f64 {
        self.pulse.value(t, node.s, self.perimeter)
    }
    fn support(&self) -> (f64, f64) {
        (self.pulse.onset, self.pulse.t_end())
    }
}

/// Input family: a grid of pulse centers and onsets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub n_centers: usize,
    pub n_onsets: usize,
    pub sigma_t: f64,
    pub sigma_s: f64,
    pub onset0: f64,
    pub onset_step: f64,
    pub t_final: f64,
}

impl BasisSpec {
    /// Default basis: 8 centers x 3 onsets, record two domain diameters long.
    pub fn default_for(grid: &Grid2D) -> Self {
        let t_final = 2.0 * grid.diameter();
        BasisSpec {
            n_centers: 8,
            n_onsets: 3,
            sigma_t: t_final / 40.0,
            sigma_s: grid.boundary_len / 32.0,
            onset0: 0.06 * t_final,
            onset_step: 0.10 * t_final,
            t_final,
        }
    }

    pub fn pulses(&self, perimeter: f64) -> Vec<PulseSpec> {
        let mut out = Vec::with_capacity(self.n_centers * self.n_onsets);
        for ic in 0..self.n_centers {
            let center_s = (ic as f64 + 0.5) * perimeter / self.n_centers as f64;
            for io in 0..self.n_onsets {
                out.push(PulseSpec {
                    center_s,
                    onset: self.onset0 + io as f64 * self.onset_step,
                    sigma_t: self.sigma_t,
                    sigma_s: self.sigma_s,
                });
            }
        }
        out
    }

    fn check_window(&self) -> Result<()> {
        let last_end = self.onset0 + (self.n_onsets - 1) as f64 * self.onset_step
            + 8.0 * self.sigma_t;
        if self.onset0 <= 0.05 * self.t_final || last_end >= 0.95 * self.t_final {
            return Err(Error::Config(format!(
                "pulse window [{:.3}, {last_end:.3}] leaves no 5% quiet margin in [0, {:.3}]",
                self.onset0, self.t_final
            )));
        }
        Ok(())
    }
}

/// Responses of one medium to a pulse basis.
#[derive(Debug, Clone)]
pub struct DNMatrix {
    pub basis: BasisSpec,
    pub inputs: Vec<PulseSpec>,
    pub responses: Vec<BoundarySignal>,
    pub kind: EquationKind,
    /// Hash of grid, coefficients and basis, for pairing artifacts.
    pub fingerprint: String,
}

impl DNMatrix {
    pub fn norm(&self) -> f64 {
        self.responses
            .iter()
            .map(|r| {
                let n = r.norm();
                n * n
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Resample every response onto the time/arclength layout of `like`.
    pub fn resample_to(&self, like: &DNMatrix) -> DNMatrix {
        let proto = &like.responses[0];
        let responses = self
            .responses
            .iter()
            .map(|r| r.resample_to(proto.nt, proto.dt, &proto.s, proto.perimeter))
            .collect();
        DNMatrix {
            basis: self.basis.clone(),
            inputs: self.inputs.clone(),
            responses,
            kind: self.kind,
            fingerprint: self.fingerprint.clone(),
        }
    }
}

/// Fingerprint binding a DN matrix to its exact inputs.
pub fn config_fingerprint(
    coeffs: &CoefficientBundle,
    grid: &Grid2D,
    basis: &BasisSpec,
) -> String {
    let mut h = Sha256::new();
    h.update(format!(
        "{:?}|{}x{}|{:.17e}|{:.17e}|{:.17e}|{:.17e}|",
        coeffs.kind, grid.nx, grid.ny, grid.dx, grid.dy, grid.origin[0], grid.origin[1]
    ));
    h.update(serde_json::to_string(basis).unwrap_or_default());
    for arr in [
        &coeffs.a_t,
        &coeffs.bx,
        &coeffs.by,
        &coeffs.a11,
        &coeffs.a12,
        &coeffs.a22,
        &coeffs.w,
    ] {
        for v in arr.iter() {
            h.update(v.to_le_bytes());
        }
    }
    format!("{:x}", h.finalize())
}

/// Extract the boundary trace from a recorded run.
///
/// For the slow forms the trace is du/dnu - (b . nu) du/dt with the normal
/// derivative one sided into the fluid. The general form adds the full
/// conormal contraction and the tangential-direction normalization; its sign
/// is oriented to agree with the slow forms on matching media.
pub fn dn_trace(
    record: &BoundaryRecord,
    coeffs: &CoefficientBundle,
    grid: &Grid2D,
) -> Result<BoundarySignal> {
    let (nt, nb) = (record.nt, record.nb);
    if record.layers.len() != nt * nb * 5 {
        return Err(Error::MissingLayers(format!(
            "record holds {} layer values, expected {}",
            record.layers.len(),
            nt * nb * 5
        )));
    }
    let mx = coeffs.mx;
    let general = coeffs.kind == EquationKind::GeneralMetric;
    let mut values = vec![0.0; nt * nb];

    // Per-node static data.
    struct NodeCoef {
        nu: [f64; 2],
        bt: f64,
        a: [f64; 3],
        normfac: f64,
        /// Record columns of the two grid-axis neighbors used for
        /// tangential derivatives, when the general form needs them.
        tang_x: Option<(usize, usize)>,
        tang_y: Option<(usize, usize)>,
    }
    let mut per_node = Vec::with_capacity(nb);
    for bn in &record.nodes {
        let i = bn.iy * mx + bn.ix;
        let nu = bn.normal;
        let bt = coeffs.bx[i] * nu[0] + coeffs.by[i] * nu[1];
        let a = [coeffs.a11[i], coeffs.a12[i], coeffs.a22[i]];
        let quad = a[0] * nu[0] * nu[0] + 2.0 * a[1] * nu[0] * nu[1] + a[2] * nu[1] * nu[1];
        let normfac = if general { quad.abs().powf(-0.5) } else { 1.0 };
        let mut tang_x = None;
        let mut tang_y = None;
        if general && a[1] != 0.0 {
            if bn.inward.0 == 0 {
                tang_x = Some(tangential_columns(grid, bn, 1, 0)?);
            }
            if bn.inward.1 == 0 {
                tang_y = Some(tangential_columns(grid, bn, 0, 1)?);
            }
        }
        per_node.push(NodeCoef {
            nu,
            bt,
            a,
            normfac,
            tang_x,
            tang_y,
        });
    }

    let (dx, dy) = (grid.dx, grid.dy);
    for it in 0..nt {
        for (ib, nc) in per_node.iter().enumerate() {
            let u0 = record.layer(it, ib, 0);
            let bn = &record.nodes[ib];
            // One-sided first derivatives along the grid axes, signed by the
            // inward direction; zero when the boundary runs along that axis.
            let mut ux = if bn.inward.0 != 0 {
                let d1 = (-3.0 * u0 + 4.0 * record.layer(it, ib, 1) - record.layer(it, ib, 2))
                    / (2.0 * dx);
                bn.inward.0 as f64 * d1
            } else {
                0.0
            };
            let mut uy = if bn.inward.1 != 0 {
                let d1 = (-3.0 * u0 + 4.0 * record.layer(it, ib, 3) - record.layer(it, ib, 4))
                    / (2.0 * dy);
                bn.inward.1 as f64 * d1
            } else {
                0.0
            };
            if let Some((ip, im)) = nc.tang_x {
                ux = (record.layer(it, ip, 0) - record.layer(it, im, 0)) / (2.0 * dx);
            }
            if let Some((ip, im)) = nc.tang_y {
                uy = (record.layer(it, ip, 0) - record.layer(it, im, 0)) / (2.0 * dy);
            }
            // Centered time derivative, one sided at the record ends.
            let ut = if it == 0 {
                (-3.0 * u0 + 4.0 * record.layer(1, ib, 0) - record.layer(2, ib, 0))
                    / (2.0 * record.dt)
            } else if it == nt - 1 {
                (3.0 * u0 - 4.0 * record.layer(nt - 2, ib, 0) + record.layer(nt - 3, ib, 0))
                    / (2.0 * record.dt)
            } else {
                (record.layer(it + 1, ib, 0) - record.layer(it - 1, ib, 0)) / (2.0 * record.dt)
            };
            let lam = if general {
                let an_x = nc.a[0] * nc.nu[0] + nc.a[1] * nc.nu[1];
                let an_y = nc.a[1] * nc.nu[0] + nc.a[2] * nc.nu[1];
                (an_x * ux + an_y * uy - nc.bt * ut) * nc.normfac
            } else {
                nc.nu[0] * ux + nc.nu[1] * uy - nc.bt * ut
            };
            values[it * nb + ib] = lam;
        }
    }
    BoundarySignal::from_parts(nt, nb, record.dt, record.s.clone(), record.perimeter, values)
}

/// Record columns of the two neighbors of `bn` along one grid axis.
fn tangential_columns(
    grid: &Grid2D,
    bn: &BoundaryNode,
    ex: usize,
    ey: usize,
) -> Result<(usize, usize)> {
    let plus = grid.outer_position(bn.ix + ex, bn.iy + ey);
    let minus = if bn.ix >= ex && bn.iy >= ey {
        grid.outer_position(bn.ix - ex, bn.iy - ey)
    } else {
        None
    };
    match (plus, minus) {
        (Some(p), Some(m)) => Ok((p, m)),
        _ => Err(Error::MissingLayers(format!(
            "no tangential neighbors on the ring at node ({}, {})",
            bn.ix, bn.iy
        ))),
    }
}

/// Run one simulation per basis pulse and collect the traces.
///
/// `jobs` bounds concurrency; results are ordered by pulse index regardless,
/// so a single-threaded rerun is byte identical.
pub fn assemble_dn(
    coeffs: &CoefficientBundle,
    grid: &Grid2D,
    basis: &BasisSpec,
    jobs: usize,
) -> Result<DNMatrix> {
    basis.check_window()?;
    let inputs = basis.pulses(grid.boundary_len);
    let run_one = |pulse: &PulseSpec| -> Result<BoundarySignal> {
        let drive = PulseDrive {
            pulse: pulse.clone(),
            perimeter: grid.boundary_len,
        };
        let cfg = SimConfig::new(coeffs, grid, &drive, basis.t_final);
        let out = simulate(&cfg)?;
        dn_trace(&out.boundary, coeffs, grid)
    };
    let responses: Result<Vec<BoundarySignal>> = if jobs <= 1 {
        inputs.iter().map(run_one).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| inputs.par_iter().map(run_one).collect())
    };
    Ok(DNMatrix {
        basis: basis.clone(),
        inputs,
        responses: responses?,
        kind: coeffs.kind,
        fingerprint: config_fingerprint(coeffs, grid, basis),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DnDistance {
    pub abs: f64,
    pub rel: f64,
}

/// Weighted L2 distance between two response families on the same basis.
pub fn dn_distance(d1: &DNMatrix, d2: &DNMatrix) -> Result<DnDistance> {
    if d1.responses.len() != d2.responses.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} vs {} responses",
            d1.responses.len(),
            d2.responses.len()
        )));
    }
    let mut abs2 = 0.0;
    for (r1, r2) in d1.responses.iter().zip(&d2.responses) {
        if r1.nt != r2.nt || r1.nb != r2.nb {
            return Err(Error::ShapeMismatch(format!(
                "response shapes ({}, {}) vs ({}, {})",
                r1.nt, r1.nb, r2.nt, r2.nb
            )));
        }
        if (r1.dt - r2.dt).abs() > 1e-12 * r1.dt {
            return Err(Error::ShapeMismatch(format!(
                "time steps {} vs {}",
                r1.dt, r2.dt
            )));
        }
        let ds = r1.ds_weights();
        for it in 0..r1.nt {
            for ib in 0..r1.nb {
                let d = r1.at(it, ib) - r2.at(it, ib);
                abs2 += d * d * ds[ib] * r1.dt;
            }
        }
    }
    let abs = abs2.sqrt();
    let denom = d1.norm().max(1e-300);
    Ok(DnDistance {
        abs,
        rel: abs / denom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{ScalarSpec, VectorSpec};
    use crate::geometry::{build_domain, DomainSpec};
    use crate::media::MediumSpec;
    use crate::solver::FnDrive;

    fn unit_grid(res: usize) -> Grid2D {
        build_domain(&DomainSpec::unit_square(res)).unwrap()
    }

    fn small_basis(grid: &Grid2D) -> BasisSpec {
        let mut b = BasisSpec::default_for(grid);
        b.n_centers = 2;
        b.n_onsets = 1;
        b
    }

    // Drive the whole boundary with the exact values of a rightward plane
    // pulse; at the right edge the unified trace orientation gives
    // -g'(t - 1), and the mismatch must shrink with resolution.
    #[test]
    fn plane_wave_trace_matches_derivative() {
        let width = 1.6;
        let g = move |tau: f64| bump_profile(((tau / width - 0.5) / 0.5).powi(2));
        let gp = move |tau: f64| {
            crate::util::bump_profile_d(((tau / width - 0.5) / 0.5).powi(2))
                * 2.0
                * (tau / width - 0.5)
                / (0.5 * 0.5 * width)
        };
        let run = |res: usize| -> f64 {
            let grid = unit_grid(res);
            let medium = MediumSpec::still(ScalarSpec::Constant { value: 1.0 });
            let c = CoefficientBundle::slow_divergence(&medium, &grid).unwrap();
            let n = (res - 1) as f64;
            let drive = FnDrive {
                f: move |t: f64, bn: &BoundaryNode| g(t - bn.ix as f64 / n),
                t_on: 0.0,
                t_off: f64::INFINITY,
            };
            let cfg = SimConfig::new(&c, &grid, &drive, 2.8);
            let out = simulate(&cfg).unwrap();
            let tr = dn_trace(&out.boundary, &c, &grid).unwrap();
            let ib = tr
                .s
                .iter()
                .position(|&s| (s - 1.5).abs() < 1e-9)
                .expect("midpoint of the right edge at s = 1.5");
            let mut err2 = 0.0;
            let mut ref2 = 0.0;
            for it in 0..tr.nt {
                let t = it as f64 * tr.dt;
                let want = -gp(t - 1.0);
                err2 += (tr.at(it, ib) - want).powi(2) * tr.dt;
                ref2 += want * want * tr.dt;
            }
            (err2 / ref2).sqrt()
        };
        let coarse = run(49);
        let fine = run(97);
        assert!(fine <= 0.05, "trace off by {fine:.3} at the fine grid");
        assert!(
            fine <= 0.4 * coarse,
            "trace error must shrink with resolution: {coarse:.4} -> {fine:.4}"
        );
    }

    #[test]
    fn tangent_flow_drops_the_time_term() {
        // v parallel to the bottom edge: the trace there is du/dnu alone.
        let grid = unit_grid(49);
        let medium = MediumSpec {
            refr: ScalarSpec::Constant { value: 1.5 },
            flow: VectorSpec::Constant { vx: 0.16, vy: 0.0 },
            c: 1.0,
        };
        let c = CoefficientBundle::slow_divergence(&medium, &grid).unwrap();
        let perim = grid.boundary_len;
        let drive = FnDrive {
            f: move |t: f64, bn: &BoundaryNode| {
                let st = crate::util::smootherstep((t - 0.05) / 0.2)
                    * crate::util::smootherstep((0.6 - t) / 0.2);
                st * bump_profile(
                    (periodic_distance(bn.s, 0.125 * perim, perim) / (0.1 * perim)).powi(2),
                )
            },
            t_on: 0.0,
            t_off: 0.7,
        };
        let cfg = SimConfig::new(&c, &grid, &drive, 1.0);
        let out = simulate(&cfg).unwrap();
        let tr = dn_trace(&out.boundary, &c, &grid).unwrap();
        let rec = &out.boundary;
        // Pick a node on the bottom edge away from corners.
        let ib = rec
            .nodes
            .iter()
            .position(|bn| bn.iy == 0 && bn.ix == 24)
            .unwrap();
        assert_eq!(rec.nodes[ib].normal, [0.0, -1.0]);
        for it in 1..tr.nt - 1 {
            let manual = -(-3.0 * rec.layer(it, ib, 0) + 4.0 * rec.layer(it, ib, 3)
                - rec.layer(it, ib, 4))
                / (2.0 * grid.dy);
            assert!((tr.at(it, ib) - manual).abs() < 1e-13);
        }
    }

    #[test]
    fn minkowski_conormal_equals_normal_derivative() {
        let grid = unit_grid(41);
        let medium = MediumSpec::still(ScalarSpec::Constant { value: 1.0 });
        let slow = CoefficientBundle::slow_divergence(&medium, &grid).unwrap();
        let metric = crate::media::slow_metric(&medium, &grid).unwrap();
        let gen = CoefficientBundle::from_metric(&metric, &grid).unwrap();
        let perim = grid.boundary_len;
        let drive = FnDrive {
            f: move |t: f64, bn: &BoundaryNode| {
                let st = crate::util::smootherstep((t - 0.05) / 0.2)
                    * crate::util::smootherstep((0.55 - t) / 0.2);
                st * bump_profile(
                    (periodic_distance(bn.s, 0.125 * perim, perim) / (0.1 * perim)).powi(2),
                )
            },
            t_on: 0.0,
            t_off: 0.6,
        };
        let cfg = SimConfig::new(&slow, &grid, &drive, 0.9);
        let out = simulate(&cfg).unwrap();
        let t_slow = dn_trace(&out.boundary, &slow, &grid).unwrap();
        let t_gen = dn_trace(&out.boundary, &gen, &grid).unwrap();
        for i in 0..t_slow.values.len() {
            assert!(
                (t_slow.values[i] - t_gen.values[i]).abs() < 1e-12,
                "at flat index {i}"
            );
        }
    }

    #[test]
    fn assemble_is_deterministic_and_shaped() {
        let grid = unit_grid(33);
        let medium = MediumSpec::still(ScalarSpec::Constant { value: 1.0 });
        let c = CoefficientBundle::slow_divergence(&medium, &grid).unwrap();
        let mut basis = small_basis(&grid);
        basis.n_centers = 1;
        let d1 = assemble_dn(&c, &grid, &basis, 1).unwrap();
        let d2 = assemble_dn(&c, &grid, &basis, 1).unwrap();
        assert_eq!(d1.responses.len(), 1);
        assert_eq!(d1.responses[0].values, d2.responses[0].values);
        assert_eq!(d1.fingerprint, d2.fingerprint);
        let dist = dn_distance(&d1, &d2).unwrap();
        assert_eq!(dist.abs, 0.0);
        assert_eq!(dist.rel, 0.0);
    }

    fn synthetic_matrix(grid: &Grid2D, seed: f64) -> DNMatrix {
        let basis = small_basis(grid);
        let nb = grid.outer_boundary.len();
        let s: Vec<f64> = grid.outer_boundary.iter().map(|b| b.s).collect();
        let nt = 64;
        let dt = basis.t_final / (nt - 1) as f64;
        let perim = grid.boundary_len;
        let mut responses = Vec::new();
        for r in 0..2 {
            let mut values = vec![0.0; nt * nb];
            for it in 0..nt {
                for ib in 0..nb {
                    let t = it as f64 * dt;
                    let arg = std::f64::consts::TAU * s[ib] / perim;
                    values[it * nb + ib] =
                        (seed + r as f64 + t).sin() * (arg * (r + 1) as f64).cos();
                }
            }
            responses
                .push(BoundarySignal::from_parts(nt, nb, dt, s.clone(), perim, values).unwrap());
        }
        DNMatrix {
            basis: basis.clone(),
            inputs: basis.pulses(perim),
            responses,
            kind: EquationKind::SlowDivergence,
            fingerprint: format!("synthetic-{seed}"),
        }
    }

    #[test]
    fn distance_is_a_metric_on_triples() {
        let grid = unit_grid(17);
        let a = synthetic_matrix(&grid, 0.0);
        let b = synthetic_matrix(&grid, 1.3);
        let c = synthetic_matrix(&grid, 2.6);
        let dab = dn_distance(&a, &b).unwrap().abs;
        let dba = dn_distance(&b, &a).unwrap().abs;
        let dac = dn_distance(&a, &c).unwrap().abs;
        let dbc = dn_distance(&b, &c).unwrap().abs;
        assert!((dab - dba).abs() < 1e-12 * dab.max(1.0));
        assert!(dab > 0.0 && dac > 0.0 && dbc > 0.0);
        assert!(dac <= dab + dbc + 1e-12);
    }

    #[test]
    fn scaled_response_distance_cross_checked() {
        let grid = unit_grid(17);
        let a = synthetic_matrix(&grid, 0.7);
        let mut b = a.clone();
        for v in &mut b.responses[0].values {
            *v *= 2.0;
        }
        let dist = dn_distance(&a, &b).unwrap();
        // Difference is exactly the first response, so abs = its norm.
        let want = a.responses[0].norm();
        assert!((dist.abs - want).abs() < 1e-12 * want);
        assert!((dist.rel - want / a.norm()).abs() < 1e-12);
    }

    #[test]
    fn resampling_reproduces_smooth_fields() {
        let fine = unit_grid(65);
        let coarse = unit_grid(33);
        let f = |t: f64, s: f64, p: f64| {
            (2.0 * t).sin() * (std::f64::consts::TAU * s / p).cos()
                + 0.3 * (3.0 * t).cos() * (2.0 * std::f64::consts::TAU * s / p).sin()
        };
        let build = |grid: &Grid2D, nt: usize| {
            let s: Vec<f64> = grid.outer_boundary.iter().map(|b| b.s).collect();
            let nb = s.len();
            let dt = 2.0 / (nt - 1) as f64;
            let p = grid.boundary_len;
            let mut values = vec![0.0; nt * nb];
            for it in 0..nt {
                for ib in 0..nb {
                    values[it * nb + ib] = f(it as f64 * dt, s[ib], p);
                }
            }
            BoundarySignal::from_parts(nt, nb, dt, s, p, values).unwrap()
        };
        let hi = build(&fine, 257);
        let lo_direct = build(&coarse, 65);
        let lo = hi.resample_to(65, lo_direct.dt, &lo_direct.s, lo_direct.perimeter);
        let mut worst = 0.0_f64;
        for i in 0..lo.values.len() {
            worst = worst.max((lo.values[i] - lo_direct.values[i]).abs());
        }
        assert!(worst < 2e-4, "resampling error {worst:.3e}");
    }

    #[test]
    fn compact_support_guard_trips() {
        let grid = unit_grid(17);
        let m = synthetic_matrix(&grid, 0.2);
        assert!(m.responses[0].check_compact_support().is_err());
        let quiet = BoundarySignal::from_parts(
            40,
            m.responses[0].nb,
            0.05,
            m.responses[0].s.clone(),
            m.responses[0].perimeter,
            vec![0.0; 40 * m.responses[0].nb],
        )
        .unwrap();
        assert!(quiet.check_compact_support().is_ok());
    }

    #[test]
    fn record_run_simulates_with_boundary_mode() {
        // Full pipeline smoke test on a moving medium with an obstacle.
        use crate::geometry::ObstacleSpec;
        let spec = DomainSpec::unit_square(41).with_obstacle(ObstacleSpec::Disk {
            cx: 0.5,
            cy: 0.5,
            r: 0.15,
        });
        let grid = build_domain(&spec).unwrap();
        let medium = MediumSpec {
            refr: ScalarSpec::Constant { value: 1.0 },
            flow: VectorSpec::Vortex {
                cx: 0.5,
                cy: 0.5,
                circulation: 0.15,
                r_core: 0.15,
            },
            c: 1.0,
        };
        let c = CoefficientBundle::slow_divergence(&medium, &grid).unwrap();
        let basis = small_basis(&grid);
        let d = assemble_dn(&c, &grid, &basis, 2).unwrap();
        assert_eq!(d.responses.len(), 2);
        assert!(d.norm() > 0.0);
        let d_seq = assemble_dn(&c, &grid, &basis, 1).unwrap();
        for (a, b) in d.responses.iter().zip(&d_seq.responses) {
            assert_eq!(a.values, b.values, "thread count must not change bits");
        }
    }
}
