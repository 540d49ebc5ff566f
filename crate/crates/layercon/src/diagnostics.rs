//! Measurements over a flow state and invariant checks over a trajectory.
//!
//! `measure` condenses a state into one record: energy, dissipation, the
//! energy-balance residual carried by the stepper, norm surrogates, total
//! concentration extrema, interface continuity residuals, a normalized
//! divergence defect, and the horizontally averaged vertical flux profile.
//! `assert_trajectory` grades a sequence of records against a policy and
//! reports pass/fail per invariant class with the worst offender's time.

use ndarray::Array2;
use num_complex::Complex64;

use crate::domain::LayerStack;
use crate::error::Result;
use crate::transport::{FlowState, Transport};

/// Continuity residuals at one interior interface, relative to the global
/// magnitude of each quantity (0 when the quantity vanishes).
#[derive(Debug, Clone, PartialEq)]
pub struct InterfaceResidual {
    pub z: f64,
    /// concentration jump
    pub phi: f64,
    /// diffusive flux jump (bD dphi/dz)
    pub flux: f64,
    /// vertical velocity jump
    pub uz: f64,
    /// pressure jump
    pub pressure: f64,
}

/// Horizontally averaged vertical flux at one depth.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxSample {
    pub z: f64,
    pub value: f64,
}

/// One measurement of a flow state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub step: u64,
    /// porosity-weighted squared concentration
    pub energy: f64,
    pub dissipation: f64,
    /// discrete energy-balance residual of the step that produced the state
    pub energy_residual: f64,
    pub l2: f64,
    pub v_norm: f64,
    pub l4: f64,
    pub linf: f64,
    /// extrema of the total nodal concentration (lift included)
    pub min_phi: f64,
    pub max_phi: f64,
    pub w_norm: f64,
    /// norm of the diffusion operator applied to the concentration
    pub l_norm: f64,
    pub w_over_l: f64,
    pub div_defect: f64,
    pub cfl: f64,
    pub cfl_exceeded: bool,
    pub interfaces: Vec<InterfaceResidual>,
    pub flux: Vec<FluxSample>,
}

/// Fixed depths the flux profile is reported at: 32 interval midpoints from
/// top to bottom, then the interior interfaces in descending order.
pub fn flux_sample_depths(stack: &LayerStack) -> Vec<f64> {
    let h = stack.depth();
    let mut zs: Vec<f64> = (0..32).map(|s| -h * (s as f64 + 0.5) / 32.0).collect();
    zs.extend(stack.interior_interfaces().iter().copied());
    zs
}

/// Horizontally averaged vertical flux of the total concentration,
/// F(z) = mean_x(u_z phi - bD dphi/dz), from the modal closed forms.
pub fn flux_profile(tr: &Transport, state: &FlowState, depths: &[f64]) -> Result<Vec<f64>> {
    let grid = tr.grid();
    let stack = grid.stack();
    let coeffs = state.phi.require_modal()?;
    let ny = grid.nx() / 2;
    let kmax = grid.kmax();
    let c_b = tr.constants().buoyancy();
    let mu = tr.constants().mu;

    // pressure coefficients split for real evaluation
    let parts: Vec<(Vec<f64>, Vec<f64>, bool, bool)> = (0..=ny)
        .map(|m| {
            let re: Vec<f64> = state.pressure.row(m).iter().map(|c| c.re).collect();
            let im: Vec<f64> = state.pressure.row(m).iter().map(|c| c.im).collect();
            let has_re = re.iter().any(|&v| v != 0.0);
            let has_im = im.iter().any(|&v| v != 0.0);
            (re, im, has_re, has_im)
        })
        .collect();

    depths
        .iter()
        .map(|&z| {
            let (layer, mat) = stack.material_at(z)?;
            let km = mat.permeability / mu;
            let bd = mat.bd();
            let lift_v = tr.lift().value(z);
            let lift_s = tr.lift().slope_in_layer(layer);
            let mut flux = 0.0;
            for m in 0..=ny {
                let basis = grid.basis(m);
                let mut phi = Complex64::default();
                let mut dphi = Complex64::default();
                for k in 0..kmax {
                    let c = coeffs[[m, k]];
                    if c != Complex64::default() {
                        let (v, dv) = basis.mode(k).eval(z);
                        phi += c * v;
                        dphi += c * dv;
                    }
                }
                let (re, im, has_re, has_im) = &parts[m];
                let dp_re = if *has_re { tr.solver(m).eval(re, z).1 } else { 0.0 };
                let dp_im = if *has_im { tr.solver(m).eval(im, z).1 } else { 0.0 };
                let mut phi_tot = phi;
                if m == 0 {
                    phi_tot.re += lift_v;
                }
                let uz = -km * (Complex64::new(dp_re, dp_im) + c_b * phi_tot);
                flux += grid.hermitian_weight(m) * (uz * phi_tot.conj()).re;
                if m == 0 {
                    flux -= bd * (dphi.re + lift_s);
                }
            }
            Ok(flux)
        })
        .collect()
}

/// Wall residuals of the total concentration against the boundary data:
/// (|phi(0) - top|, |phi(-H) - bottom|), maximized over wavenumbers.
pub fn boundary_trace(tr: &Transport, state: &FlowState) -> Result<(f64, f64)> {
    let grid = tr.grid();
    let coeffs = state.phi.require_modal()?;
    let ny = grid.nx() / 2;
    let kmax = grid.kmax();
    let h = grid.stack().depth();
    let mut top = 0.0f64;
    let mut bottom = 0.0f64;
    for m in 0..=ny {
        let basis = grid.basis(m);
        let mut vt = Complex64::default();
        let mut vb = Complex64::default();
        for k in 0..kmax {
            let c = coeffs[[m, k]];
            if c != Complex64::default() {
                vt += c * basis.mode(k).eval(0.0).0;
                vb += c * basis.mode(k).eval(-h).0;
            }
        }
        // the lift carries the boundary data exactly, so only the
        // homogeneous part can leave a residual
        top = top.max(vt.norm());
        bottom = bottom.max(vb.norm());
    }
    Ok((top, bottom))
}

/// Degree-3 Lagrange extrapolation through four samples.
fn extrapolate4(zs: &[f64; 4], vals: &[Complex64; 4], z: f64) -> Complex64 {
    let mut acc = Complex64::default();
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (z - zs[b]) / (zs[a] - zs[b]);
            }
        }
        acc += vals[a] * w;
    }
    acc
}

/// Indices of the four Gauss nodes of `layer` nearest to its top (`from_top`)
/// or its bottom edge, in ascending z order.
fn edge_nodes(grid: &crate::fields::Grid, layer: usize, from_top: bool) -> [usize; 4] {
    let idx: Vec<usize> = grid
        .z_layers()
        .iter()
        .enumerate()
        .filter_map(|(q, &j)| (j == layer).then_some(q))
        .collect();
    let mut out = [0usize; 4];
    if from_top {
        out.copy_from_slice(&idx[idx.len() - 4..]);
    } else {
        out.copy_from_slice(&idx[..4]);
    }
    out
}

/// One-sided limits of per-wavenumber profiles at an interface, by cubic
/// extrapolation from the nearest four Gauss nodes on each side. Returns the
/// largest jump over all wavenumbers, relative to the global magnitude.
fn profile_jump(
    grid: &crate::fields::Grid,
    rows: &Array2<Complex64>,
    z_iface: f64,
    below: &[usize; 4],
    above: &[usize; 4],
) -> f64 {
    let ny = grid.nx() / 2;
    let z = grid.z();
    let scale = rows.iter().fold(0.0f64, |a, c| a.max(c.norm()));
    if scale == 0.0 {
        return 0.0;
    }
    let zb = [z[below[0]], z[below[1]], z[below[2]], z[below[3]]];
    let za = [z[above[0]], z[above[1]], z[above[2]], z[above[3]]];
    let mut worst = 0.0f64;
    for m in 0..=ny {
        let vb = [
            rows[[m, below[0]]],
            rows[[m, below[1]]],
            rows[[m, below[2]]],
            rows[[m, below[3]]],
        ];
        let va = [
            rows[[m, above[0]]],
            rows[[m, above[1]]],
            rows[[m, above[2]]],
            rows[[m, above[3]]],
        ];
        let jump = (extrapolate4(&zb, &vb, z_iface) - extrapolate4(&za, &va, z_iface)).norm();
        worst = worst.max(jump);
    }
    worst / scale
}

/// Relative continuity residuals at every interior interface.
fn interface_residuals(tr: &Transport, state: &FlowState) -> Result<Vec<InterfaceResidual>> {
    let grid = tr.grid();
    let stack = grid.stack();
    let interior = stack.interior_interfaces();
    if interior.is_empty() {
        return Ok(Vec::new());
    }
    let coeffs = state.phi.require_modal()?;
    let ny = grid.nx() / 2;
    let nz = grid.z().len();

    // total concentration and diffusive flux profiles at the Gauss nodes
    let mut phi_rows = grid.modal_profiles(coeffs, false);
    let mut flux_rows = grid.modal_profiles(coeffs, true);
    let bd = grid.bd_nodes();
    for q in 0..nz {
        phi_rows[[0, q]] += tr.lift_values()[q];
        for m in 0..=ny {
            flux_rows[[m, q]] *= bd[q];
        }
        flux_rows[[0, q]] += bd[q] * tr.lift_slopes()[q];
    }

    // pressure sampled at the Gauss nodes
    let mut p_rows = Array2::zeros((ny + 1, nz));
    for m in 0..=ny {
        let re: Vec<f64> = state.pressure.row(m).iter().map(|c| c.re).collect();
        let im: Vec<f64> = state.pressure.row(m).iter().map(|c| c.im).collect();
        let has_re = re.iter().any(|&v| v != 0.0);
        let has_im = im.iter().any(|&v| v != 0.0);
        if !has_re && !has_im {
            continue;
        }
        for q in 0..nz {
            let z = grid.z()[q];
            let p_re = if has_re { tr.solver(m).eval(&re, z).0 } else { 0.0 };
            let p_im = if has_im { tr.solver(m).eval(&im, z).0 } else { 0.0 };
            p_rows[[m, q]] = Complex64::new(p_re, p_im);
        }
    }

    interior
        .iter()
        .enumerate()
        .map(|(i, &zi)| {
            // interface i separates layer i (above) from layer i + 1 (below)
            let below = edge_nodes(grid, i + 1, true);
            let above = edge_nodes(grid, i, false);
            Ok(InterfaceResidual {
                z: zi,
                phi: profile_jump(grid, &phi_rows, zi, &below, &above),
                flux: profile_jump(grid, &flux_rows, zi, &below, &above),
                uz: profile_jump(grid, &state.uz_rows, zi, &below, &above),
                pressure: profile_jump(grid, &p_rows, zi, &below, &above),
            })
        })
        .collect()
}

/// Largest weak-divergence residual of the velocity against the basis,
/// normalized by velocity and test-gradient magnitudes. The integrand is
/// piecewise polynomial on the pressure mesh, so it is integrated with the
/// element-local quadrature rather than the grid's smooth-function rule.
/// Returns 0 when the velocity is indistinguishable from zero at working
/// precision.
fn divergence_defect(tr: &Transport, state: &FlowState) -> Result<f64> {
    let grid = tr.grid();
    let ny = grid.nx() / 2;
    let kmax = grid.kmax();
    let coeffs = state.phi.require_modal()?;

    // natural velocity magnitude of the configuration
    let phi_ref = state
        .phi
        .nodal()
        .map(|n| n.iter().fold(0.0f64, |a, &v| a.max(v.abs())))
        .unwrap_or(0.0);
    let lift_ref = tr
        .lift_values()
        .iter()
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let km_ref = tr.mobility().iter().fold(0.0f64, |a, &v| a.max(v));
    let u_ref = tr.constants().buoyancy() * km_ref * (phi_ref + lift_ref + 1.0);
    if state.max_speed <= 1e-13 * u_ref.max(1e-300) {
        return Ok(0.0);
    }

    let c_b = tr.constants().buoyancy();
    let (lift_q, km_q) = tr.lift_quad();
    let qpts = tr.solver(0).quadrature_points();
    let qwts = tr.solver(0).quadrature_weights();
    let nq = qpts.len();

    // velocity of each wavenumber at the element quadrature points
    let mut modes: Vec<(Vec<Complex64>, Vec<Complex64>, f64)> = Vec::with_capacity(ny + 1);
    for m in 0..=ny {
        let (vq, _) = tr.basis_quad_tables(m);
        let kappa = grid.kappa(m);
        let solver = tr.solver(m);
        let re: Vec<f64> = state.pressure.row(m).iter().map(|c| c.re).collect();
        let im: Vec<f64> = state.pressure.row(m).iter().map(|c| c.im).collect();
        let has_re = re.iter().any(|&v| v != 0.0);
        let has_im = im.iter().any(|&v| v != 0.0);
        let mut uxq = vec![Complex64::default(); nq];
        let mut uzq = vec![Complex64::default(); nq];
        let mut unorm = 0.0;
        for (p, &z) in qpts.iter().enumerate() {
            let (p_re, dp_re) = if has_re { solver.eval(&re, z) } else { (0.0, 0.0) };
            let (p_im, dp_im) = if has_im { solver.eval(&im, z) } else { (0.0, 0.0) };
            let mut phi = Complex64::default();
            for k in 0..kmax {
                let c = coeffs[[m, k]];
                if c != Complex64::default() {
                    phi += c * vq[[k, p]];
                }
            }
            if m == 0 {
                phi.re += lift_q[p];
            }
            let km = km_q[p];
            // the Nyquist row cannot carry its sine partner, matching the
            // velocity the transport actually uses
            if m != ny {
                uxq[p] = Complex64::new(0.0, -kappa) * km * Complex64::new(p_re, p_im);
            }
            uzq[p] = -km * (Complex64::new(dp_re, dp_im) + c_b * phi);
            unorm += qwts[p] * (uxq[p].norm_sqr() + uzq[p].norm_sqr());
        }
        modes.push((uxq, uzq, unorm.sqrt()));
    }
    let u_scale = modes.iter().fold(0.0f64, |a, m| a.max(m.2));
    if u_scale == 0.0 {
        return Ok(0.0);
    }

    let mut worst = 0.0f64;
    for (m, (uxq, uzq, unorm)) in modes.iter().enumerate() {
        if *unorm <= 1e-13 * u_scale {
            continue;
        }
        let (vq, dvq) = tr.basis_quad_tables(m);
        let kappa = grid.kappa(m);
        for k in 0..kmax {
            let mut acc = Complex64::default();
            let mut gnorm = 0.0;
            for p in 0..nq {
                let v = vq[[k, p]];
                let dv = dvq[[k, p]];
                acc += qwts[p]
                    * (Complex64::new(0.0, -kappa) * uxq[p] * v + uzq[p] * dv);
                gnorm += qwts[p] * (kappa * kappa * v * v + dv * dv);
            }
            let scale = unorm * gnorm.sqrt();
            if scale > 0.0 {
                worst = worst.max(acc.norm() / scale);
            }
        }
    }
    Ok(worst)
}

/// Norm of the vertical diffusion operator applied to the concentration.
fn operator_norm(tr: &Transport, coeffs: &Array2<Complex64>) -> f64 {
    let grid = tr.grid();
    let ny = grid.nx() / 2;
    let kmax = grid.kmax();
    let mut total = 0.0;
    for m in 0..=ny {
        let evs = grid.basis(m).eigenvalues();
        let mut row = 0.0;
        for k in 0..kmax {
            row += evs[k] * evs[k] * coeffs[[m, k]].norm_sqr();
        }
        total += grid.hermitian_weight(m) * row;
    }
    (grid.stack().width() * total).sqrt()
}

/// Condense a flow state into one diagnostics record.
pub fn measure(tr: &Transport, state: &FlowState) -> Result<DiagnosticsRecord> {
    let grid = tr.grid();
    let coeffs = state.phi.require_modal()?;
    let norms = grid.norms(&state.phi)?;
    let energy = tr.energy(coeffs);
    let dissipation = tr.dissipation(coeffs);
    let l_norm = operator_norm(tr, coeffs);
    let w_over_l = if l_norm > 0.0 { norms.w / l_norm } else { 0.0 };

    let total = tr.total_nodal(state)?;
    let mut min_phi = f64::INFINITY;
    let mut max_phi = f64::NEG_INFINITY;
    for &v in total.iter() {
        min_phi = min_phi.min(v);
        max_phi = max_phi.max(v);
    }

    let depths = flux_sample_depths(grid.stack());
    let flux_vals = flux_profile(tr, state, &depths)?;
    let flux = depths
        .into_iter()
        .zip(flux_vals)
        .map(|(z, value)| FluxSample { z, value })
        .collect();

    Ok(DiagnosticsRecord {
        t: state.t,
        step: state.step,
        energy,
        dissipation,
        energy_residual: state.energy_residual,
        l2: norms.l2,
        v_norm: norms.v,
        l4: norms.l4,
        linf: norms.linf,
        min_phi,
        max_phi,
        w_norm: norms.w,
        l_norm,
        w_over_l,
        div_defect: divergence_defect(tr, state)?,
        cfl: state.cfl,
        cfl_exceeded: state.cfl_exceeded,
        interfaces: interface_residuals(tr, state)?,
        flux,
    })
}

/// Tolerances for grading a trajectory of records.
#[derive(Debug, Clone)]
pub struct TrajectoryPolicy {
    /// allowed nodal overshoot beyond the admissible range, relative to it
    pub overshoot_tol: f64,
    /// admissible concentration range; None derives it from the first record
    pub bounds: Option<(f64, f64)>,
    /// allowed relative L4 growth per unit time
    pub l4_growth_tol: f64,
    /// L4 values at or below this floor are treated as zero
    pub l4_floor: f64,
    /// absolute bound on the per-step energy-balance residual
    pub residual_tol: f64,
    /// bound on relative interface jumps
    pub interface_tol: f64,
    /// bound on the normalized divergence defect
    pub div_tol: f64,
    /// admissible band for W/L, checked when the operator norm is resolvable
    pub w_over_l_band: (f64, f64),
    /// operator norms at or below this floor skip the W/L check
    pub norm_floor: f64,
    /// keep only the checks that stay meaningful with layered porosity
    pub reduced: bool,
}

impl Default for TrajectoryPolicy {
    fn default() -> Self {
        TrajectoryPolicy {
            overshoot_tol: 1e-4,
            bounds: None,
            l4_growth_tol: 1e-6,
            l4_floor: 1e-10,
            residual_tol: 1e-2,
            interface_tol: 1e-2,
            div_tol: 0.5,
            w_over_l_band: (1e-8, 1e8),
            norm_floor: 1e-10,
            reduced: false,
        }
    }
}

impl TrajectoryPolicy {
    /// Layered porosity keeps the energy law and the max principle; the
    /// remaining monitors are only reported, not graded.
    pub fn layered() -> Self {
        TrajectoryPolicy {
            reduced: true,
            ..TrajectoryPolicy::default()
        }
    }
}

/// Outcome of one invariant class over a trajectory.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// worst observed value of the graded quantity
    pub worst: f64,
    /// the limit it was graded against
    pub limit: f64,
    /// time of the worst offender
    pub worst_t: f64,
}

/// Machine-readable grading of a trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryReport {
    pub reduced: bool,
    pub checks: Vec<CheckOutcome>,
}

impl TrajectoryReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckOutcome> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

fn finite_fields(r: &DiagnosticsRecord) -> bool {
    let mut vals = vec![
        r.t,
        r.energy,
        r.dissipation,
        r.energy_residual,
        r.l2,
        r.v_norm,
        r.l4,
        r.linf,
        r.min_phi,
        r.max_phi,
        r.w_norm,
        r.l_norm,
        r.w_over_l,
        r.div_defect,
        r.cfl,
    ];
    vals.extend(r.flux.iter().map(|f| f.value));
    for i in &r.interfaces {
        vals.extend([i.phi, i.flux, i.uz, i.pressure]);
    }
    vals.into_iter().all(f64::is_finite)
}

/// Grade a trajectory of records against a policy: pass/fail per invariant
/// class, each with its worst offender's value and time.
pub fn assert_trajectory(
    records: &[DiagnosticsRecord],
    policy: &TrajectoryPolicy,
) -> TrajectoryReport {
    let mut checks = Vec::new();
    if records.is_empty() {
        checks.push(CheckOutcome {
            name: "records present",
            passed: false,
            worst: 0.0,
            limit: 1.0,
            worst_t: 0.0,
        });
        return TrajectoryReport {
            reduced: policy.reduced,
            checks,
        };
    }

    // a worst-offender fold: larger is worse
    let fold = |name: &'static str, limit: f64, vals: &[(f64, f64)]| -> CheckOutcome {
        let (worst, worst_t) = vals
            .iter()
            .fold((f64::NEG_INFINITY, records[0].t), |acc, &(v, t)| {
                if v > acc.0 {
                    (v, t)
                } else {
                    acc
                }
            });
        let worst = if worst == f64::NEG_INFINITY { 0.0 } else { worst };
        CheckOutcome {
            name,
            passed: worst <= limit,
            worst,
            limit,
            worst_t,
        }
    };

    let bad: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (if finite_fields(r) { 0.0 } else { 1.0 }, r.t))
        .collect();
    checks.push(fold("finite values", 0.0, &bad));

    let neg: Vec<(f64, f64)> = records
        .iter()
        .map(|r| {
            let worst = [r.energy, r.dissipation, r.l2, r.l4, r.linf, r.w_norm]
                .into_iter()
                .fold(0.0f64, |a, v| a.max(-v));
            (worst, r.t)
        })
        .collect();
    checks.push(fold("nonnegative norms", 0.0, &neg));

    let res: Vec<(f64, f64)> = records
        .iter()
        .map(|r| (r.energy_residual.abs(), r.t))
        .collect();
    checks.push(fold("energy balance", policy.residual_tol, &res));

    let (lo, hi) = policy
        .bounds
        .unwrap_or((records[0].min_phi, records[0].max_phi));
    let range = (hi - lo).max(1e-300);
    let over: Vec<(f64, f64)> = records
        .iter()
        .map(|r| {
            let below = (lo - r.min_phi).max(0.0);
            let above = (r.max_phi - hi).max(0.0);
            (below.max(above) / range, r.t)
        })
        .collect();
    checks.push(fold("max principle", policy.overshoot_tol, &over));

    if !policy.reduced {
        let mut rates = Vec::new();
        for w in records.windows(2) {
            let dt = w[1].t - w[0].t;
            if dt <= 0.0 || w[0].l4.max(w[1].l4) <= policy.l4_floor {
                continue;
            }
            let rate = (w[1].l4 - w[0].l4) / (dt * w[0].l4.max(policy.l4_floor));
            rates.push((rate, w[1].t));
        }
        checks.push(fold("L4 growth", policy.l4_growth_tol, &rates));

        let iface: Vec<(f64, f64)> = records
            .iter()
            .map(|r| {
                let worst = r
                    .interfaces
                    .iter()
                    .fold(0.0f64, |a, i| a.max(i.phi).max(i.flux).max(i.uz).max(i.pressure));
                (worst, r.t)
            })
            .collect();
        checks.push(fold("interface continuity", policy.interface_tol, &iface));

        let div: Vec<(f64, f64)> = records.iter().map(|r| (r.div_defect, r.t)).collect();
        checks.push(fold("divergence defect", policy.div_tol, &div));

        let band: Vec<(f64, f64)> = records
            .iter()
            .filter(|r| r.l_norm > policy.norm_floor)
            .map(|r| {
                let (lo, hi) = policy.w_over_l_band;
                let out = if r.w_over_l < lo {
                    lo / r.w_over_l.max(1e-300)
                } else if r.w_over_l > hi {
                    r.w_over_l / hi
                } else {
                    1.0
                };
                (out, r.t)
            })
            .collect();
        checks.push(fold("W/L band", 1.0, &band));

        let cfl: Vec<(f64, f64)> = records
            .iter()
            .map(|r| (if r.cfl_exceeded { 1.0 } else { 0.0 }, r.t))
            .collect();
        checks.push(fold("CFL respected", 0.0, &cfl));
    }

    TrajectoryReport {
        reduced: policy.reduced,
        checks,
    }
}

/// Least-squares decay rate r from E(t) ~ exp(-r t) over records with
/// positive energy. None when fewer than two usable records exist.
pub fn fitted_decay_rate(records: &[DiagnosticsRecord]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.energy > 0.0)
        .map(|r| (r.t, r.energy.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let st: f64 = pts.iter().map(|p| p.0).sum();
    let se: f64 = pts.iter().map(|p| p.1).sum();
    let stt: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let ste: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * stt - st * st;
    if denom <= 0.0 {
        return None;
    }
    Some(-(n * ste - st * se) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundaryData, LayerStack, PhysicalConstants};
    use crate::fields::Grid;
    use crate::transport::{Scheme, StepperConfig, Transport};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conduction_stack() -> LayerStack {
        // resistances 0.5 and 0.25; unit concentration difference drives
        // flux 4/3 with interface value 2/3
        LayerStack::new(
            &[0.0, -0.5, -1.0],
            &[1.0, 1.0],
            &[1.0, 1.0],
            &[1.0, 2.0],
            2.0,
        )
        .unwrap()
    }

    fn contrast_stack() -> LayerStack {
        LayerStack::new(
            &[0.0, -0.5, -1.0],
            &[1.0, 2.0],
            &[1.0, 1.0],
            &[1.0, 3.0],
            2.0,
        )
        .unwrap()
    }

    fn buoyant() -> PhysicalConstants {
        PhysicalConstants::new(1.0, 1.0, 1.0, 1.0).unwrap()
    }

    fn inert() -> PhysicalConstants {
        PhysicalConstants::new(1.0, 1.0, 0.0, 1.0).unwrap()
    }

    fn cn(dt: f64) -> StepperConfig {
        StepperConfig {
            dt,
            scheme: Scheme::ImexCn,
            cfl_target: 0.5,
            adaptive: false,
        }
    }

    fn random_coeffs(grid: &Grid, seed: u64, amp: f64) -> Array2<Complex64> {
        let ny = grid.nx() / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Array2::zeros((ny + 1, grid.kmax()));
        for m in 0..=grid.dealias_limit() {
            for k in 0..grid.kmax() {
                let decay = amp / (1.0 + (m * m + k * k) as f64);
                let re = rng.gen_range(-1.0..1.0) * decay;
                let im = if m == 0 || m == ny {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0) * decay
                };
                c[[m, k]] = Complex64::new(re, im);
            }
        }
        c
    }

    #[test]
    fn zero_state_measures_nothing() {
        let stack = contrast_stack();
        let grid = Grid::new(&stack, 8, 4, 16).unwrap();
        let tr = Transport::new(&grid, buoyant(), BoundaryData::default(), 2, 8, cn(1e-3))
            .unwrap();
        let state = tr
            .state_at(Array2::zeros((grid.nx() / 2 + 1, grid.kmax())), 0.0, 0)
            .unwrap();
        let rec = measure(&tr, &state).unwrap();
        assert_eq!(rec.energy, 0.0);
        assert_eq!(rec.l2, 0.0);
        assert_eq!(rec.linf, 0.0);
        assert_eq!(rec.min_phi, 0.0);
        assert_eq!(rec.max_phi, 0.0);
        assert_eq!(rec.div_defect, 0.0);
        assert!(rec.flux.iter().all(|f| f.value == 0.0));
        assert!(rec
            .interfaces
            .iter()
            .all(|i| i.phi == 0.0 && i.flux == 0.0 && i.uz == 0.0 && i.pressure == 0.0));
        assert_eq!(rec.flux.len(), 32 + 1);
    }

    #[test]
    fn conduction_state_reports_constant_flux_and_lift_extrema() {
        let stack = conduction_stack();
        let grid = Grid::new(&stack, 8, 4, 16).unwrap();
        // no buoyancy: the conduction profile is an exact steady state
        let tr = Transport::new(&grid, inert(), BoundaryData::new(0.0, 1.0), 2, 8, cn(1e-3))
            .unwrap();
        let state = tr
            .state_at(Array2::zeros((grid.nx() / 2 + 1, grid.kmax())), 0.0, 0)
            .unwrap();
        let rec = measure(&tr, &state).unwrap();

        let q = tr.lift().flux();
        assert!((q - 4.0 / 3.0).abs() <= 1e-12);
        for f in &rec.flux {
            assert!(
                (f.value - q).abs() <= 1e-10 * q,
                "flux {} at z = {}",
                f.value,
                f.z
            );
        }
        assert!((tr.lift().value(-0.5) - 2.0 / 3.0).abs() <= 1e-12);
        // nodal extrema are the lift's values at the Gauss nodes, which sit
        // slightly inside the walls
        let lift_min = tr.lift_values().iter().cloned().fold(f64::INFINITY, f64::min);
        let lift_max = tr
            .lift_values()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((rec.min_phi - lift_min).abs() <= 1e-12);
        assert!((rec.max_phi - lift_max).abs() <= 1e-12);
        assert!(rec.min_phi >= 0.0 && rec.min_phi <= 5e-3);
        assert!(rec.max_phi <= 1.0 && rec.max_phi >= 1.0 - 5e-3);
        assert_eq!(rec.energy, 0.0);
    }

    #[test]
    fn single_eigenmode_reports_unit_energy_and_eigenvalue_dissipation() {
        let stack = LayerStack::new(&[0.0, -1.0], &[1.0], &[1.0], &[1.0], 1.0).unwrap();
        let grid = Grid::new(&stack, 8, 4, 12).unwrap();
        let tr = Transport::new(&grid, buoyant(), BoundaryData::default(), 2, 8, cn(1e-3))
            .unwrap();
        let mut c = Array2::zeros((grid.nx() / 2 + 1, grid.kmax()));
        c[[0, 0]] = Complex64::new(1.0, 0.0);
        let state = tr.state_at(c, 0.0, 0).unwrap();
        let rec = measure(&tr, &state).unwrap();
        let lambda1 = grid.basis(0).eigenvalue(0);
        assert!((rec.energy - 1.0).abs() <= 1e-12, "energy {}", rec.energy);
        assert!(
            (rec.dissipation - lambda1).abs() <= 1e-10 * lambda1,
            "dissipation {}",
            rec.dissipation
        );
        assert!(
            (rec.l_norm - lambda1).abs() <= 1e-10 * lambda1,
            "operator norm {}",
            rec.l_norm
        );
        // the nodal sup is the eigenfunction's largest Gauss-node value
        let expect = grid
            .v_table(0)
            .row(0)
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!((rec.linf - expect).abs() <= 1e-12 * expect);
        assert!(rec.w_over_l > 0.0);
    }

    #[test]
    fn interface_jumps_stay_small_on_random_states() {
        let stack = contrast_stack();
        let grid = Grid::new(&stack, 8, 4, 48).unwrap();
        let tr = Transport::new(&grid, buoyant(), BoundaryData::new(0.0, 1.0), 3, 32, cn(1e-3))
            .unwrap();
        let state = tr.state_at(random_coeffs(&grid, 5, 1.0), 0.0, 0).unwrap();
        let rec = measure(&tr, &state).unwrap();
        assert_eq!(rec.interfaces.len(), 1);
        let i = &rec.interfaces[0];
        // concentration and diffusive flux are spectrally continuous
        assert!(i.phi <= 1e-6, "phi jump {}", i.phi);
        assert!(i.flux <= 1e-6, "flux jump {}", i.flux);
        // velocity carries element-level error; pressure is continuous by
        // construction
        assert!(i.uz <= 1e-3, "uz jump {}", i.uz);
        assert!(i.pressure <= 1e-8, "pressure jump {}", i.pressure);
        assert!(rec.div_defect <= 0.5, "divergence defect {}", rec.div_defect);
    }

    #[test]
    fn boundary_trace_vanishes_on_random_states() {
        let stack = contrast_stack();
        let grid = Grid::new(&stack, 8, 4, 16).unwrap();
        let tr = Transport::new(&grid, buoyant(), BoundaryData::new(0.0, 1.0), 2, 8, cn(1e-3))
            .unwrap();
        let state = tr.state_at(random_coeffs(&grid, 9, 1.0), 0.0, 0).unwrap();
        let (top, bottom) = boundary_trace(&tr, &state).unwrap();
        assert!(top <= 1e-10, "top trace {top}");
        assert!(bottom <= 1e-10, "bottom trace {bottom}");
    }

    #[test]
    fn pure_diffusion_decay_rate_fits_the_leading_eigenvalue() {
        let stack = LayerStack::new(&[0.0, -1.0], &[1.0], &[1.0], &[1.0], 1.0).unwrap();
        let grid = Grid::new(&stack, 8, 4, 12).unwrap();
        let lambda1 = grid.basis(0).eigenvalue(0);
        let dt = 3e-4 / lambda1;
        let tr = Transport::new(&grid, inert(), BoundaryData::default(), 2, 8, cn(dt)).unwrap();
        let mut c = Array2::zeros((grid.nx() / 2 + 1, grid.kmax()));
        c[[0, 0]] = Complex64::new(1.0, 0.0);
        let mut state = tr.state_at(c, 0.0, 0).unwrap();
        let mut records = vec![measure(&tr, &state).unwrap()];
        for _ in 0..50 {
            tr.step(&mut state, dt).unwrap();
            records.push(measure(&tr, &state).unwrap());
        }
        let rate = fitted_decay_rate(&records).unwrap();
        let want = 2.0 * lambda1;
        assert!(
            (rate - want).abs() <= 1e-4 * want,
            "rate {rate} vs {want}"
        );
    }

    #[test]
    fn trajectory_grading_flags_violations_with_their_times() {
        let stack = conduction_stack();
        let grid = Grid::new(&stack, 8, 4, 12).unwrap();
        let tr = Transport::new(&grid, inert(), BoundaryData::new(0.0, 1.0), 2, 8, cn(1e-3))
            .unwrap();
        let mut state = tr
            .state_at(random_coeffs(&grid, 3, 1e-3), 0.0, 0)
            .unwrap();
        let mut records = vec![measure(&tr, &state).unwrap()];
        for _ in 0..5 {
            tr.step(&mut state, 1e-3).unwrap();
            records.push(measure(&tr, &state).unwrap());
        }
        let policy = TrajectoryPolicy {
            residual_tol: 1e-8,
            bounds: Some((-2.0, 2.0)),
            ..TrajectoryPolicy::default()
        };
        let report = assert_trajectory(&records, &policy);
        assert!(report.all_passed(), "failures: {:?}", report.failures());

        // inject an overshoot and an L4 bump
        let bad_t = records[3].t;
        records[3].max_phi = 5.0;
        records[3].l4 += 1.0;
        let report = assert_trajectory(&records, &policy);
        assert!(!report.all_passed());
        let max_check = report
            .checks
            .iter()
            .find(|c| c.name == "max principle")
            .unwrap();
        assert!(!max_check.passed);
        assert_eq!(max_check.worst_t, bad_t);
        let l4_check = report.checks.iter().find(|c| c.name == "L4 growth").unwrap();
        assert!(!l4_check.passed);

        // the reduced policy keeps the energy law and max principle only
        let reduced = assert_trajectory(
            &records,
            &TrajectoryPolicy {
                residual_tol: 1e-8,
                bounds: Some((-2.0, 2.0)),
                ..TrajectoryPolicy::layered()
            },
        );
        assert!(reduced.reduced);
        assert!(reduced.checks.iter().all(|c| c.name != "L4 growth"));
        assert!(!reduced
            .checks
            .iter()
            .find(|c| c.name == "max principle")
            .unwrap()
            .passed);

        // empty trajectories never pass
        assert!(!assert_trajectory(&[], &policy).all_passed());
    }

    #[test]
    fn measurement_is_deterministic() {
        let stack = contrast_stack();
        let grid = Grid::new(&stack, 8, 4, 16).unwrap();
        let tr = Transport::new(&grid, buoyant(), BoundaryData::new(0.0, 1.0), 2, 8, cn(1e-3))
            .unwrap();
        let state = tr.state_at(random_coeffs(&grid, 11, 0.7), 0.0, 0).unwrap();
        let a = measure(&tr, &state).unwrap();
        let b = measure(&tr, &state).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn decay_fit_needs_two_positive_records() {
        assert!(fitted_decay_rate(&[]).is_none());
        let stack = conduction_stack();
        let grid = Grid::new(&stack, 8, 4, 12).unwrap();
        let tr = Transport::new(&grid, inert(), BoundaryData::default(), 2, 8, cn(1e-3))
            .unwrap();
        let state = tr
            .state_at(Array2::zeros((grid.nx() / 2 + 1, grid.kmax())), 0.0, 0)
            .unwrap();
        let rec = measure(&tr, &state).unwrap();
        assert!(fitted_decay_rate(&[rec.clone(), rec]).is_none());
    }
}
