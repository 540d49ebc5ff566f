//! Built-in verification suite.
//!
//! Ten numbered checks cover the solver end to end: analytic spectra,
//! oracle-checked layered spectra, discrete structure (orthonormality, flux
//! transmission, hydrostatic equilibrium), time integration (exact decay
//! rates, energy-residual convergence order, maximum principle), the
//! pressure solve under a manufactured solution, conduction steady states,
//! and bitwise determinism of full runs including checkpoint restarts.
//! The `verify` subcommand and the `acceptance` integration test both
//! drive this module.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::diagnostics::measure;
use crate::domain::{conduction_profile, BoundaryData, LayerStack, PhysicalConstants};
use crate::error::{Error, Result};
use crate::fields::Grid;
use crate::output::RunEmitter;
use crate::runner::{self, NoHooks, Schedule};
use crate::spectra::elliptic::{EllipticBc, ModeEllipticSolver};
use crate::spectra::fem::fem_oracle_richardson;
use crate::spectra::find_eigenpairs;
use crate::transport::{Scheme, StepperConfig, Transport};

/// Number of checks in the suite.
pub const COUNT: usize = 10;

pub const NAMES: [&str; COUNT] = [
    "single-layer analytic spectrum",
    "layered spectrum against the FEM oracle",
    "orthonormality and interface flux transmission",
    "hydrostatic equilibrium produces no flow",
    "eigenmode decays at the exact diffusive rate",
    "energy-residual convergence order",
    "maximum principle and L4 monotonicity",
    "manufactured pressure solution convergence",
    "two-layer conduction steady state",
    "bitwise deterministic runs and restart",
];

/// Wall-clock budgets in seconds; None means untimed.
const BUDGETS: [Option<f64>; COUNT] = [
    Some(1.0),
    Some(30.0),
    None,
    Some(5.0),
    Some(60.0),
    None,
    None,
    None,
    None,
    None,
];

/// Outcome of one check: pass/fail plus one detail line per measurement.
#[derive(Debug)]
pub struct CriterionResult {
    pub index: usize,
    pub name: &'static str,
    pub passed: bool,
    pub seconds: f64,
    pub details: Vec<String>,
}

/// Run check `index` (1-based). `binary` is the solver executable used by
/// the determinism check to drive real subprocesses; None falls back to an
/// in-process equivalent of the `run` subcommand.
pub fn run_criterion(index: usize, binary: Option<&Path>) -> CriterionResult {
    assert!(
        (1..=COUNT).contains(&index),
        "check index {index} outside 1..={COUNT}"
    );
    let mut check = Check::new();
    let start = Instant::now();
    let body = match index {
        1 => spectrum_analytic(&mut check),
        2 => spectrum_fem_oracle(&mut check),
        3 => basis_structure(&mut check),
        4 => hydrostatic_null(&mut check),
        5 => eigenmode_decay(&mut check),
        6 => residual_order(&mut check),
        7 => maximum_principle(&mut check),
        8 => manufactured_pressure(&mut check),
        9 => conduction_steady(&mut check),
        10 => determinism(&mut check, binary),
        _ => unreachable!(),
    };
    let seconds = start.elapsed().as_secs_f64();
    if let Err(e) = body {
        check.passed = false;
        check.details.push(format!("[FAIL] aborted: {e}"));
    }
    if let Some(budget) = BUDGETS[index - 1] {
        check.budget(seconds, budget);
    }
    CriterionResult {
        index,
        name: NAMES[index - 1],
        passed: check.passed,
        seconds,
        details: check.details,
    }
}

/// Run the whole suite in order.
pub fn run_all(binary: Option<&Path>) -> Vec<CriterionResult> {
    (1..=COUNT).map(|i| run_criterion(i, binary)).collect()
}

struct Check {
    passed: bool,
    details: Vec<String>,
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

impl Check {
    fn new() -> Self {
        Check {
            passed: true,
            details: Vec::new(),
        }
    }

    fn le(&mut self, what: &str, measured: f64, limit: f64) {
        let ok = measured.is_finite() && measured <= limit;
        self.passed &= ok;
        self.details
            .push(format!("[{}] {what}: {measured:.3e} <= {limit:.1e}", mark(ok)));
    }

    fn within(&mut self, what: &str, measured: f64, lo: f64, hi: f64) {
        let ok = measured.is_finite() && measured >= lo && measured <= hi;
        self.passed &= ok;
        self.details.push(format!(
            "[{}] {what}: {measured:.3} in [{lo}, {hi}]",
            mark(ok)
        ));
    }

    fn at_least(&mut self, what: &str, measured: f64, lo: f64) {
        let ok = measured.is_finite() && measured >= lo;
        self.passed &= ok;
        self.details
            .push(format!("[{}] {what}: {measured:.3} >= {lo}", mark(ok)));
    }

    fn ok(&mut self, what: &str, good: bool) {
        self.passed &= good;
        self.details.push(format!("[{}] {what}", mark(good)));
    }

    fn budget(&mut self, seconds: f64, limit: f64) {
        let ok = seconds <= limit;
        self.passed &= ok;
        self.details.push(format!(
            "[{}] wall clock: {seconds:.2} s (budget {limit:.0} s)",
            mark(ok)
        ));
    }
}

/// Evaluate at `target` the cubic through four profile samples (Lagrange).
fn extrapolate(z: &[f64], value: impl Fn(usize) -> f64, idx: &[usize; 4], target: f64) -> f64 {
    let mut acc = 0.0;
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (target - z[idx[b]]) / (z[idx[a]] - z[idx[b]]);
            }
        }
        acc += value(idx[a]) * w;
    }
    acc
}

/// Least-squares slope of ln(error) against ln(h): the observed order.
fn fit_order(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(h, e) in points {
        let x = h.ln();
        let y = e.max(1e-300).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// Band-limited random modal coefficients, deterministic in the seed.
fn seeded_coeffs(grid: &Grid, seed: u64, band: usize, amplitude: f64) -> Array2<Complex64> {
    let ny = grid.nx() / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = Array2::zeros((ny + 1, grid.kmax()));
    for m in 0..=band.min(grid.dealias_limit()) {
        for k in 0..=band.min(grid.kmax().saturating_sub(1)) {
            let decay = amplitude / (1.0 + (m * m + k * k) as f64);
            let re = rng.gen_range(-1.0..1.0) * decay;
            let raw = rng.gen_range(-1.0..1.0) * decay;
            let im = if m == 0 || m == ny { 0.0 } else { raw };
            coeffs[[m, k]] = Complex64::new(re, im);
        }
    }
    coeffs
}

/// Check 1: Uniform unit-coefficient layer: the spectrum is kappa^2 + (k pi)^2.
fn spectrum_analytic(check: &mut Check) -> Result<()> {
    let stack = LayerStack::new(&[0.0, -1.0], &[1.0], &[1.0], &[1.0], 1.0)?;
    for (kappa, label) in [(0.0, "kappa = 0"), (2.0 * PI, "kappa = 2*pi")] {
        let basis = find_eigenpairs(&stack, kappa, 8)?;
        let mut worst = 0.0f64;
        for k in 0..8 {
            let exact = kappa * kappa + ((k as f64 + 1.0) * PI).powi(2);
            worst = worst.max((basis.eigenvalue(k) - exact).abs() / exact);
        }
        check.le(
            &format!("{label}: first 8 eigenvalues, relative error"),
            worst,
            1e-10,
        );
    }
    Ok(())
}

/// Check 2: Layered stacks with diffusivity contrasts up to 100x: the transfer
/// matrix spectrum matches a Richardson-extrapolated P1 FEM reference, and
/// the FEM errors shrink at their theoretical second order.
fn spectrum_fem_oracle(check: &mut Check) -> Result<()> {
    let two = LayerStack::new(
        &[0.0, -0.4, -1.0],
        &[1.0, 1.0],
        &[1.0, 1.0],
        &[1.0, 100.0],
        1.0,
    )?;
    let four = LayerStack::new(
        &[0.0, -0.2, -0.5, -0.8, -1.0],
        &[1.0; 4],
        &[1.0; 4],
        &[1.0, 10.0, 0.1, 5.0],
        1.0,
    )?;
    let kmax = 9;
    for (stack, label) in [(&two, "two layers"), (&four, "four layers")] {
        for kappa in [0.0, 2.0 * PI] {
            let basis = find_eigenpairs(stack, kappa, kmax)?;
            let fem = fem_oracle_richardson(stack, kappa, kmax, 256)?;
            let mut worst = 0.0f64;
            let mut order_lo = f64::INFINITY;
            let mut order_hi = f64::NEG_INFINITY;
            for k in 0..kmax {
                let rel = (basis.eigenvalue(k) - fem.lambdas[k]).abs() / fem.lambdas[k];
                worst = worst.max(rel);
                order_lo = order_lo.min(fem.orders[k]);
                order_hi = order_hi.max(fem.orders[k]);
            }
            check.le(
                &format!("{label}, kappa = {kappa:.3}: eigenvalues vs FEM reference, relative"),
                worst,
                1e-8,
            );
            check.within(
                &format!("{label}, kappa = {kappa:.3}: slowest FEM order"),
                order_lo,
                1.8,
                2.2,
            );
            check.within(
                &format!("{label}, kappa = {kappa:.3}: fastest FEM order"),
                order_hi,
                1.8,
                2.2,
            );
        }
    }
    Ok(())
}

/// Check 3: Contrast-10 stack: the basis is orthonormal on the quadrature to
/// rounding, and extrapolated one-sided traces show the weighted flux
/// continuous across the interface while the bare slope jumps by the
/// diffusivity ratio.
fn basis_structure(check: &mut Check) -> Result<()> {
    let stack = LayerStack::new(
        &[0.0, -0.5, -1.0],
        &[1.0, 1.0],
        &[1.0, 1.0],
        &[1.0, 10.0],
        1.0,
    )?;
    let kmax = 9;
    let grid = Grid::new(&stack, 4, kmax, 96)?;

    let mut gram_dev = 0.0f64;
    for m in 0..=grid.nx() / 2 {
        let tab = grid.v_table(m);
        for k in 0..kmax {
            for l in k..kmax {
                let mut s = 0.0;
                for (q, &w) in grid.z_weights().iter().enumerate() {
                    s += w * tab[[k, q]] * tab[[l, q]];
                }
                let target = if k == l { 1.0 } else { 0.0 };
                gram_dev = gram_dev.max((s - target).abs());
            }
        }
    }
    check.le("Gram matrix deviation from identity", gram_dev, 1e-10);

    // one-sided cubic stencils hugging the interface z = -0.5; the bottom
    // layer (index 1) owns the first nq nodes of the ascending grid
    let below: Vec<usize> = (0..grid.z().len())
        .filter(|&q| grid.z_layers()[q] == 1)
        .collect();
    let above: Vec<usize> = (0..grid.z().len())
        .filter(|&q| grid.z_layers()[q] == 0)
        .collect();
    let below: [usize; 4] = below[below.len() - 4..].try_into().unwrap();
    let above: [usize; 4] = above[..4].try_into().unwrap();
    let (bd_below, bd_above) = (10.0, 1.0);

    let mut jump = 0.0f64;
    let mut scale = 0.0f64;
    let mut sided: Vec<(f64, f64, f64)> = Vec::new();
    for m in 0..=grid.nx() / 2 {
        let dv = grid.dv_table(m);
        for k in 0..kmax {
            let s_lo = extrapolate(grid.z(), |q| dv[[k, q]], &below, -0.5);
            let s_hi = extrapolate(grid.z(), |q| dv[[k, q]], &above, -0.5);
            let (f_lo, f_hi) = (bd_below * s_lo, bd_above * s_hi);
            jump = jump.max((f_lo - f_hi).abs());
            scale = scale.max(f_lo.abs()).max(f_hi.abs());
            sided.push((f_lo.abs(), s_lo, s_hi));
        }
    }
    check.le(
        "extrapolated weighted-flux jump at the interface, relative",
        jump / scale,
        1e-6,
    );

    let contrast = bd_below / bd_above;
    let mut ratio_dev = 0.0f64;
    let mut active = 0usize;
    for &(f, s_lo, s_hi) in &sided {
        if f >= 0.05 * scale {
            active += 1;
            ratio_dev = ratio_dev.max((s_hi / s_lo - contrast).abs() / contrast);
        }
    }
    check.ok(
        &format!("{active} basis profiles carry interface flux (need >= 5)"),
        active >= 5,
    );
    check.le(
        "one-sided slope ratio vs diffusivity contrast 10, relative",
        ratio_dev,
        1e-3,
    );
    Ok(())
}

/// Check 4: Horizontally uniform concentration over a three-layer stack is in
/// exact hydrostatic balance: the discrete velocity vanishes to rounding.
fn hydrostatic_null(check: &mut Check) -> Result<()> {
    let stack = LayerStack::new(
        &[0.0, -0.3, -0.7, -1.0],
        &[1.0, 3.0, 0.5],
        &[0.8, 1.0, 0.6],
        &[1.0, 2.0, 0.7],
        1.0,
    )?;
    let grid = Grid::new(&stack, 8, 6, 10)?;
    let constants = PhysicalConstants::new(1.0, 1.2, 0.7, 9.81)?;
    let c_b = constants.buoyancy();
    for (boundary, label) in [
        (BoundaryData::new(1.0, 1.0), "uniform concentration"),
        (BoundaryData::new(0.0, 1.0), "conduction profile"),
    ] {
        let tr = Transport::new(&grid, constants, boundary, 2, 10, StepperConfig::default())?;
        let zero = Array2::zeros((grid.nx() / 2 + 1, grid.kmax()));
        let state = tr.state_at(zero, 0.0, 0)?;
        let phi_max = tr.lift_values().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        check.le(
            &format!("{label}: max nodal speed / (c * max|phi|)"),
            state.max_speed / (c_b * phi_max),
            1e-8,
        );
    }
    Ok(())
}

/// Check 5: A pure vertical eigenmode with buoyancy switched on decays at exactly
/// its diffusive rate; Crank-Nicolson at dt = 1e-4 / lambda_1 tracks the
/// energy to 1e-6 relative over one e-folding time of the energy pair.
fn eigenmode_decay(check: &mut Check) -> Result<()> {
    let stack = LayerStack::new(
        &[0.0, -0.4, -1.0],
        &[1.0, 0.5],
        &[1.0, 1.0],
        &[1.0, 3.0],
        2.0,
    )?;
    let grid = Grid::new(&stack, 8, 6, 8)?;
    let lambda1 = grid.basis(0).eigenvalue(0);
    let dt = 1e-4 / lambda1;
    let stepper = StepperConfig {
        dt,
        scheme: Scheme::ImexCn,
        cfl_target: 0.5,
        adaptive: false,
    };
    let tr = Transport::new(
        &grid,
        PhysicalConstants::new(1.0, 1.0, 1.0, 1.0)?,
        BoundaryData::new(0.0, 0.0),
        3,
        24,
        stepper,
    )?;
    let mut c0: Array2<Complex64> = Array2::zeros((grid.nx() / 2 + 1, grid.kmax()));
    c0[[0, 0]] = Complex64::new(1.0, 0.0);
    let state = tr.state_at(c0, 0.0, 0)?;
    let e0 = tr.energy(state.phi.require_modal()?);
    let schedule = Schedule {
        t_end: 1.0 / lambda1,
        cadence: 10_000,
        checkpoint_every: 0,
    };
    let outcome = runner::run(&tr, state, &schedule, &mut NoHooks)?;
    let e_end = tr.energy(outcome.state.phi.require_modal()?);
    let want = e0 * (-2.0 * lambda1 * outcome.state.t).exp();
    check.le(
        "energy vs exact decay at t = 1/lambda_1, relative",
        (e_end - want).abs() / want,
        1e-6,
    );
    Ok(())
}

/// Check 6: Five seeded buoyant runs: the per-step energy-balance residual of the
/// Crank-Nicolson scheme converges at second order under dt halving. Every
/// refinement level steps to the same physical time and the residual of the
/// step arriving there is compared, so the stiff startup transient (whose
/// residual is not yet in the asymptotic regime) does not pollute the fit.
fn residual_order(check: &mut Check) -> Result<()> {
    let stack = LayerStack::new(
        &[0.0, -0.5, -1.0],
        &[1.0, 2.0],
        &[0.5, 1.0],
        &[2.0, 1.0],
        1.0,
    )?;
    let grid = Grid::new(&stack, 16, 8, 16)?;
    let constants = PhysicalConstants::new(1.0, 1.0, 1.0, 1.0)?;
    let boundary = BoundaryData::new(0.0, 1.0);
    let dt0 = 2e-3;
    for seed in 1..=5u64 {
        let c0 = seeded_coeffs(&grid, seed, 3, 0.05);
        let mut points = Vec::new();
        for level in 0..4u32 {
            let dt = dt0 / f64::powi(2.0, level as i32);
            let stepper = StepperConfig {
                dt,
                scheme: Scheme::ImexCn,
                cfl_target: 0.5,
                adaptive: false,
            };
            let tr = Transport::new(&grid, constants, boundary, 2, 12, stepper)?;
            let mut state = tr.state_at(c0.clone(), 0.0, 0)?;
            for _ in 0..(16u32 << level) {
                tr.step(&mut state, dt)?;
            }
            points.push((dt, state.energy_residual.abs()));
        }
        let order = fit_order(&points);
        check.within(
            &format!("seed {seed}: residual order under dt halving"),
            order,
            1.7,
            2.3,
        );
    }
    Ok(())
}

/// Check 7: The same five seeds with constant porosity and homogeneous walls:
/// nodal values never overshoot the initial extrema (widened by the wall
/// value 0) and the quartic norm never grows, over five decay times.
fn maximum_principle(check: &mut Check) -> Result<()> {
    let stack = LayerStack::new(
        &[0.0, -0.5, -1.0],
        &[1.0, 2.0],
        &[1.0, 1.0],
        &[1.0, 3.0],
        1.0,
    )?;
    let grid = Grid::new(&stack, 16, 8, 16)?;
    let lambda1 = grid.basis(0).eigenvalue(0);
    let constants = PhysicalConstants::new(1.0, 1.0, 1.0, 1.0)?;
    let stepper = StepperConfig {
        dt: 2e-3,
        scheme: Scheme::ImexCn,
        cfl_target: 0.5,
        adaptive: false,
    };
    let tr = Transport::new(&grid, constants, BoundaryData::new(0.0, 0.0), 2, 12, stepper)?;
    let schedule = Schedule {
        t_end: 5.0 / lambda1,
        cadence: 1,
        checkpoint_every: 0,
    };
    for seed in 1..=5u64 {
        let c0 = seeded_coeffs(&grid, seed, 3, 0.2);
        let state = tr.state_at(c0, 0.0, 0)?;
        let outcome = runner::run(&tr, state, &schedule, &mut NoHooks)?;
        let first = &outcome.records[0];
        let hi = first.max_phi.max(0.0);
        let lo = first.min_phi.min(0.0);
        let range = hi - lo;
        let mut overshoot = 0.0f64;
        let mut growth = 0.0f64;
        for pair in outcome.records.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            overshoot = overshoot.max(b.max_phi - hi).max(lo - b.min_phi);
            if a.l4 > 1e-12 && b.t > a.t {
                growth = growth.max((b.l4 - a.l4) / ((b.t - a.t) * a.l4));
            }
        }
        check.le(
            &format!("seed {seed}: nodal overshoot / initial range"),
            overshoot.max(0.0) / range,
            1e-4,
        );
        check.le(
            &format!("seed {seed}: quartic-norm growth rate, relative"),
            growth,
            1e-6,
        );
    }
    Ok(())
}

/// Check 8: Manufactured pressure over a permeability jump: the finite element
/// solution converges at (at least) second order, the one-sided vertical
/// velocity mismatch at the interface shrinks at the same order, and the
/// pressure trace is continuous by construction.
fn manufactured_pressure(check: &mut Check) -> Result<()> {
    let stack = LayerStack::new(
        &[0.0, -0.5, -1.0],
        &[1.0, 5.0],
        &[1.0, 1.0],
        &[1.0, 1.0],
        1.0,
    )?;
    let coeff = [1.0, 5.0];
    let kappa = 2.0 * PI;
    let coeff_at = |z: f64| if z > -0.5 { coeff[0] } else { coeff[1] };
    let p_star = |z: f64| (PI * z + 0.3).cos();
    let dp_star = |z: f64| -PI * (PI * z + 0.3).sin();
    // the manufactured weighted flux coeff P' - g1; vanishing at both walls
    // keeps the load compatible with the natural boundary condition
    let flux_star = |z: f64| 0.7 * (PI * z).sin();
    let dflux_star = |z: f64| 0.7 * PI * (PI * z).cos();
    let g1_at = |z: f64| coeff_at(z) * dp_star(z) - flux_star(z);
    let g0_at = |z: f64| -dflux_star(z) + kappa * kappa * coeff_at(z) * p_star(z);

    let mut sol_pts = Vec::new();
    let mut uz_pts = Vec::new();
    let mut p_jump_max = 0.0f64;
    for elems in [4usize, 8, 16, 32] {
        let solver = ModeEllipticSolver::new(&stack, &coeff, kappa, elems, 2, EllipticBc::Neumann)?;
        let qp = solver.quadrature_points();
        let g0: Vec<f64> = qp.iter().map(|&z| g0_at(z)).collect();
        let g1: Vec<f64> = qp.iter().map(|&z| g1_at(z)).collect();
        let sol = solver.solve_sampled(&g0, &g1)?;

        let mut err = 0.0f64;
        for i in 0..400 {
            let z = -1.0 + (i as f64 + 0.5) / 400.0;
            err = err.max((solver.eval(&sol, z).0 - p_star(z)).abs());
        }
        let h = 0.5 / elems as f64;
        sol_pts.push((h, err));

        // one-sided traces from cubic extrapolation on stencils well inside
        // the first element on each side of the interface
        let delta = 5e-4;
        let side = |sgn: f64| {
            let mut zs = [0.0; 4];
            let mut pv = [0.0; 4];
            let mut wv = [0.0; 4];
            for j in 0..4 {
                let z = -0.5 + sgn * delta * (j as f64 + 1.0);
                let (v, d) = solver.eval(&sol, z);
                zs[j] = z;
                pv[j] = v;
                wv[j] = -(coeff_at(z) * d - g1_at(z));
            }
            (
                extrapolate(&zs, |i| pv[i], &[0, 1, 2, 3], -0.5),
                extrapolate(&zs, |i| wv[i], &[0, 1, 2, 3], -0.5),
            )
        };
        let (p_lo, w_lo) = side(-1.0);
        let (p_hi, w_hi) = side(1.0);
        uz_pts.push((h, (w_lo - w_hi).abs() / 0.7));
        p_jump_max = p_jump_max.max((p_lo - p_hi).abs());
    }
    let sol_order = fit_order(&sol_pts);
    let uz_order = fit_order(&uz_pts);
    check.at_least("pressure solution convergence order", sol_order, 2.0);
    check.at_least(
        "interface velocity-residual convergence order",
        uz_order,
        1.8,
    );
    check.le(
        "finest-mesh pressure error, relative",
        sol_pts.last().unwrap().1,
        1e-4,
    );
    check.le(
        "pressure interface jump (continuous by construction)",
        p_jump_max,
        1e-9,
    );
    Ok(())
}

/// Check 9: Two-layer conduction with resistances 0.5 and 0.25: interface value
/// 2/3, flux 4/3, and a constant measured flux profile on the zero state.
fn conduction_steady(check: &mut Check) -> Result<()> {
    let stack = LayerStack::new(
        &[0.0, -0.5, -1.0],
        &[1.0, 1.0],
        &[1.0, 1.0],
        &[1.0, 2.0],
        1.0,
    )?;
    let boundary = BoundaryData::new(0.0, 1.0);
    let lift = conduction_profile(&stack, &boundary);
    let value = lift.value(-0.5);
    let flux = lift.flux();
    check.le(
        "interface concentration vs 2/3, relative",
        (value - 2.0 / 3.0).abs() / (2.0 / 3.0),
        1e-10,
    );
    check.le(
        "conductive flux vs 4/3, relative",
        (flux - 4.0 / 3.0).abs() / (4.0 / 3.0),
        1e-10,
    );

    let grid = Grid::new(&stack, 8, 5, 12)?;
    let tr = Transport::new(
        &grid,
        PhysicalConstants::new(1.0, 1.0, 0.0, 1.0)?,
        boundary,
        2,
        12,
        StepperConfig::default(),
    )?;
    let state = tr.state_at(Array2::zeros((grid.nx() / 2 + 1, grid.kmax())), 0.0, 0)?;
    let rec = measure(&tr, &state)?;
    let dev = rec
        .flux
        .iter()
        .fold(0.0f64, |a, s| a.max((s.value - flux).abs()));
    check.le(
        "measured flux profile constancy, relative",
        dev / flux.abs(),
        1e-8,
    );
    Ok(())
}

const DETERMINISM_CONFIG: &str = "\
stack.interfaces = 0.0 -0.5 -1.0
stack.permeability = 1.0 2.0
stack.porosity = 1.0 1.0
stack.diffusivity = 1.0 3.0
stack.width = 1.0
boundary.bottom = 1.0
resolution.nx = 16
resolution.kmax = 8
resolution.nq = 16
resolution.elliptic_order = 2
resolution.elems_per_layer = 10
stepper.dt = 0.002
run.t_end = 0.05
run.seed = 11
output.cadence = 5
output.checkpoint_every = 10
ic.kind = random
ic.band = 3
ic.amplitude = 0.01
";

/// Check 10: The same configuration run twice emits byte-identical files, and a
/// restart from the mid-run checkpoint reproduces the final state exactly.
fn determinism(check: &mut Check, binary: Option<&Path>) -> Result<()> {
    let base = tempfile::tempdir()?;
    let cfg_path = base.path().join("case.cfg");
    fs::write(&cfg_path, DETERMINISM_CONFIG)?;
    let dir_a = base.path().join("a");
    let dir_b = base.path().join("b");
    let dir_c = base.path().join("c");
    run_case(binary, &cfg_path, &dir_a, None)?;
    run_case(binary, &cfg_path, &dir_b, None)?;

    let names_a = dir_listing(&dir_a)?;
    let names_b = dir_listing(&dir_b)?;
    check.ok(
        &format!("repeated runs emit the same files ({} files)", names_a.len()),
        !names_a.is_empty() && names_a == names_b,
    );
    let mut all_equal = names_a == names_b;
    for name in &names_a {
        if !dir_b.join(name).is_file() {
            continue;
        }
        if fs::read(dir_a.join(name))? != fs::read(dir_b.join(name))? {
            all_equal = false;
            check.ok(&format!("{name} differs between identical runs"), false);
        }
    }
    check.ok(
        "every emitted byte is identical between repeated runs",
        all_equal,
    );

    let mid = dir_a.join("checkpoint_00000010.ckpt");
    check.ok("mid-run checkpoint exists", mid.is_file());
    if mid.is_file() {
        run_case(binary, &cfg_path, &dir_c, Some(&mid))?;
        let same = fs::read(dir_a.join("checkpoint_final.ckpt"))?
            == fs::read(dir_c.join("checkpoint_final.ckpt"))?;
        check.ok(
            "restart from the mid-run checkpoint reproduces the final checkpoint",
            same,
        );
    }
    Ok(())
}

/// One run of the determinism configuration: through the real executable
/// when available, otherwise an in-process copy of the `run` subcommand.
fn run_case(
    binary: Option<&Path>,
    cfg_path: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    match binary {
        Some(bin) => {
            let mut cmd = std::process::Command::new(bin);
            cmd.arg("run")
                .arg("--config")
                .arg(cfg_path)
                .arg("--out")
                .arg(out)
                .arg("--quiet");
            if let Some(r) = resume {
                cmd.arg("--resume").arg(r);
            }
            let status = cmd.status()?;
            if !status.success() {
                return Err(Error::Stepper(format!(
                    "run subcommand exited with {status}"
                )));
            }
        }
        None => {
            fs::create_dir_all(out)?;
            let config = RunConfig::parse(&fs::read_to_string(cfg_path)?)?;
            config.validate()?;
            let grid = config.build_grid()?;
            let tr = Transport::new(
                &grid,
                config.constants,
                config.boundary,
                config.elliptic_order,
                config.elems_per_layer,
                config.stepper,
            )?;
            let state = match resume {
                Some(p) => runner::resume_state(&tr, p)?,
                None => tr.state_at(config.initial_coeffs(&grid)?, 0.0, 0)?,
            };
            let mut emitter = RunEmitter::new(&tr, out, config.formats);
            let schedule = Schedule {
                t_end: config.t_end,
                cadence: config.cadence,
                checkpoint_every: config.checkpoint_every,
            };
            let outcome = runner::run(&tr, state, &schedule, &mut emitter)?;
            emitter.finish(&outcome.state)?;
        }
    }
    Ok(())
}

fn dir_listing(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        names.push(entry?.file_name().to_string_lossy().into_owned());
    }
    names.sort();
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_fit_recovers_a_power_law() {
        let pts: Vec<(f64, f64)> = (0..4)
            .map(|j| {
                let h = 0.5 / f64::powi(2.0, j);
                (h, 3.0 * h * h)
            })
            .collect();
        assert!((fit_order(&pts) - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn cubic_extrapolation_is_exact_for_cubics() {
        let z = [0.1, 0.2, 0.35, 0.5];
        let f = |x: f64| 2.0 - x + 3.0 * x * x - x * x * x;
        let got = extrapolate(&z, |i| f(z[i]), &[0, 1, 2, 3], -0.25);
        assert!((got - f(-0.25)).abs() <= 1e-12);
    }

    #[test]
    fn seeded_coefficients_are_reproducible_and_band_limited() {
        let stack = LayerStack::new(&[0.0, -1.0], &[1.0], &[1.0], &[1.0], 1.0).unwrap();
        let grid = Grid::new(&stack, 16, 8, 12).unwrap();
        let a = seeded_coeffs(&grid, 7, 3, 0.1);
        let b = seeded_coeffs(&grid, 7, 3, 0.1);
        assert_eq!(a, b);
        let c = seeded_coeffs(&grid, 8, 3, 0.1);
        assert_ne!(a, c);
        for m in 0..a.nrows() {
            for k in 0..a.ncols() {
                if m > 3 || k > 3 {
                    assert_eq!(a[[m, k]], Complex64::new(0.0, 0.0));
                }
            }
        }
        assert_eq!(a[[0, 0]].im, 0.0);
    }
}
