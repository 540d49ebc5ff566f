//! Time integration of the concentration transport coupled to the Darcy
//! pressure solve.
//!
//! Per horizontal wavenumber the homogeneous concentration is expanded in
//! the vertical eigenbasis, so diffusion acts diagonally (or through a
//! porosity mass matrix when the porosity varies between layers). Buoyancy
//! closes the loop: concentration drives the pressure, the pressure gradient
//! drives the velocity, and the velocity advects the concentration. The
//! advection term uses the skew-symmetric average of convective and
//! divergence forms, which pairs to exactly zero against the concentration
//! in the discrete inner product and keeps the energy balance honest.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::domain::{
    conduction_profile, BoundaryData, ConductionLift, PhysicalConstants,
};
use crate::error::{Error, Result};
use crate::fields::{Grid, SpectralField};
use crate::spectra::elliptic::{EllipticBc, ModeEllipticSolver};

/// Implicit-explicit one-step schemes: diffusion implicit, transport explicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// backward Euler diffusion, forward Euler transport
    ImexEuler,
    /// trapezoidal diffusion, Heun predictor-corrector transport
    ImexCn,
}

/// Time stepping parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepperConfig {
    /// requested (capping) time step
    pub dt: f64,
    pub scheme: Scheme,
    /// advective CFL number the step should stay below
    pub cfl_target: f64,
    /// shrink steps to meet the CFL target instead of only flagging
    pub adaptive: bool,
}

impl StepperConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "time step must be positive and finite, got {}",
                self.dt
            )));
        }
        if !self.cfl_target.is_finite() || self.cfl_target <= 0.0 || self.cfl_target > 1.0 {
            return Err(Error::InvalidConfig(format!(
                "cfl target must lie in (0, 1], got {}",
                self.cfl_target
            )));
        }
        Ok(())
    }
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt: 1e-3,
            scheme: Scheme::ImexCn,
            cfl_target: 0.5,
            adaptive: false,
        }
    }
}

/// Complete state of a run at one time level.
///
/// Pressure, velocity, and the transport projections are the stage
/// evaluation belonging to the stored concentration, so a state rebuilt
/// from the bare coefficients (for example after loading a checkpoint)
/// continues the trajectory bit for bit.
#[derive(Debug, Clone)]
pub struct FlowState {
    /// homogeneous concentration (conduction lift removed), modal and nodal
    pub phi: SpectralField,
    /// per-wavenumber pressure coefficients on the element mesh [m][node]
    pub pressure: Array2<Complex64>,
    /// per-wavenumber velocity profiles at the grid's Gauss nodes [m][q]
    pub ux_rows: Array2<Complex64>,
    pub uz_rows: Array2<Complex64>,
    /// nodal velocity samples [i][q]
    pub ux: Array2<f64>,
    pub uz: Array2<f64>,
    /// skew-form advection projection [m][k]
    pub advection: Array2<Complex64>,
    /// lift-gradient source projection [m][k]
    pub source: Array2<Complex64>,
    pub t: f64,
    pub step: u64,
    /// largest nodal speed of the stored velocity
    pub max_speed: f64,
    /// CFL number of the last accepted step (0 before the first step)
    pub cfl: f64,
    /// the last step ran above the CFL target with adaptivity off
    pub cfl_exceeded: bool,
    /// discrete energy-balance residual of the last accepted step
    pub energy_residual: f64,
    /// size of the last accepted step (0 before the first step)
    pub last_dt: f64,
}

/// One stage evaluation: everything the explicit terms need, derived from a
/// single set of modal coefficients.
struct Stage {
    pressure: Array2<Complex64>,
    ux_rows: Array2<Complex64>,
    uz_rows: Array2<Complex64>,
    ux: Array2<f64>,
    uz: Array2<f64>,
    phi_nodal: Array2<f64>,
    max_speed: f64,
    advection: Array2<Complex64>,
    source: Array2<Complex64>,
}

struct Velocity {
    rows_x: Array2<Complex64>,
    rows_z: Array2<Complex64>,
    nodal_x: Array2<f64>,
    nodal_z: Array2<f64>,
    max_speed: f64,
}

/// Coupled pressure-transport integrator on a fixed grid.
pub struct Transport<'g> {
    grid: &'g Grid,
    constants: PhysicalConstants,
    boundary: BoundaryData,
    stepper: StepperConfig,
    lift: ConductionLift,
    /// lift value, lift slope, and K/mu at the grid's Gauss nodes
    lift_value: Vec<f64>,
    lift_slope: Vec<f64>,
    km_node: Vec<f64>,
    /// one Neumann pressure solver per wavenumber
    solvers: Vec<ModeEllipticSolver>,
    /// vertical basis value and derivative traces at the element quadrature
    /// points, per m: [k][p]
    vq: Vec<Array2<f64>>,
    dvq: Vec<Array2<f64>>,
    /// lift value and K/mu at the element quadrature points
    lift_q: Vec<f64>,
    km_q: Vec<f64>,
    /// porosity of a constant-porosity stack; None means layered porosity
    uniform_porosity: Option<f64>,
    /// per-wavenumber porosity mass matrices (layered porosity only)
    porosity_mass: Vec<Array2<f64>>,
}

impl<'g> Transport<'g> {
    pub fn new(
        grid: &'g Grid,
        constants: PhysicalConstants,
        boundary: BoundaryData,
        elliptic_order: usize,
        elems_per_layer: usize,
        stepper: StepperConfig,
    ) -> Result<Self> {
        stepper.validate()?;
        let stack = grid.stack();
        let lift = conduction_profile(stack, &boundary);
        let km: Vec<f64> = stack
            .materials()
            .iter()
            .map(|mat| mat.permeability / constants.mu)
            .collect();

        let ny = grid.nx() / 2;
        let solvers: Vec<ModeEllipticSolver> = (0..=ny)
            .into_par_iter()
            .map(|m| {
                ModeEllipticSolver::new(
                    stack,
                    &km,
                    grid.kappa(m),
                    elems_per_layer,
                    elliptic_order,
                    EllipticBc::Neumann,
                )
            })
            .collect::<Result<_>>()?;

        let qpts = solvers[0].quadrature_points();
        let lift_q: Vec<f64> = qpts.iter().map(|&z| lift.value(z)).collect();
        let km_q: Vec<f64> = qpts
            .iter()
            .map(|&z| Ok(km[stack.layer_at(z)?]))
            .collect::<Result<_>>()?;
        let kmax = grid.kmax();
        let traces: Vec<(Array2<f64>, Array2<f64>)> = (0..=ny)
            .into_par_iter()
            .map(|m| {
                let basis = grid.basis(m);
                let mut tab = Array2::zeros((kmax, qpts.len()));
                let mut dtab = Array2::zeros((kmax, qpts.len()));
                for k in 0..kmax {
                    let mode = basis.mode(k);
                    for (p, &z) in qpts.iter().enumerate() {
                        let (v, dv) = mode.eval(z);
                        tab[[k, p]] = v;
                        dtab[[k, p]] = dv;
                    }
                }
                (tab, dtab)
            })
            .collect();
        let (vq, dvq): (Vec<_>, Vec<_>) = traces.into_iter().unzip();

        let lift_value: Vec<f64> = grid.z().iter().map(|&z| lift.value(z)).collect();
        let lift_slope: Vec<f64> = grid
            .z_layers()
            .iter()
            .map(|&j| lift.slope_in_layer(j))
            .collect();
        let km_node: Vec<f64> = grid.z_layers().iter().map(|&j| km[j]).collect();

        let uniform_porosity = if stack.constant_porosity() {
            Some(stack.materials()[0].porosity)
        } else {
            None
        };
        let porosity_mass = if uniform_porosity.is_some() {
            Vec::new()
        } else {
            let zw = grid.z_weights();
            let b = grid.b_nodes();
            (0..=ny)
                .into_par_iter()
                .map(|m| {
                    let vt = grid.v_table(m);
                    let nz = zw.len();
                    let mut mass = Array2::zeros((kmax, kmax));
                    for k in 0..kmax {
                        for l in 0..=k {
                            let mut acc = 0.0;
                            for q in 0..nz {
                                acc += zw[q] * b[q] * vt[[k, q]] * vt[[l, q]];
                            }
                            mass[[k, l]] = acc;
                            mass[[l, k]] = acc;
                        }
                    }
                    mass
                })
                .collect()
        };

        Ok(Transport {
            grid,
            constants,
            boundary,
            stepper,
            lift,
            lift_value,
            lift_slope,
            km_node,
            solvers,
            vq,
            dvq,
            lift_q,
            km_q,
            uniform_porosity,
            porosity_mass,
        })
    }

    pub fn grid(&self) -> &Grid {
        self.grid
    }

    pub fn constants(&self) -> &PhysicalConstants {
        &self.constants
    }

    pub fn boundary(&self) -> &BoundaryData {
        &self.boundary
    }

    pub fn stepper(&self) -> &StepperConfig {
        &self.stepper
    }

    pub fn lift(&self) -> &ConductionLift {
        &self.lift
    }

    /// Lift value at the grid's Gauss nodes (ascending z order).
    pub fn lift_values(&self) -> &[f64] {
        &self.lift_value
    }

    /// Lift slope at the grid's Gauss nodes.
    pub fn lift_slopes(&self) -> &[f64] {
        &self.lift_slope
    }

    /// Mobility K/mu at the grid's Gauss nodes.
    pub fn mobility(&self) -> &[f64] {
        &self.km_node
    }

    /// Pressure solver of one wavenumber (for point evaluation).
    pub fn solver(&self, m: usize) -> &ModeEllipticSolver {
        &self.solvers[m]
    }

    /// Basis value and derivative traces at the element quadrature points.
    pub(crate) fn basis_quad_tables(&self, m: usize) -> (&Array2<f64>, &Array2<f64>) {
        (&self.vq[m], &self.dvq[m])
    }

    /// Lift value and mobility K/mu at the element quadrature points.
    pub(crate) fn lift_quad(&self) -> (&[f64], &[f64]) {
        (&self.lift_q, &self.km_q)
    }

    pub fn layered_porosity(&self) -> bool {
        self.uniform_porosity.is_none()
    }

    fn buoyancy(&self) -> f64 {
        self.constants.buoyancy()
    }

    /// Nodal total concentration: homogeneous part plus conduction lift.
    pub fn total_nodal(&self, state: &FlowState) -> Result<Array2<f64>> {
        let phi = state.phi.require_nodal()?;
        let mut out = phi.clone();
        for i in 0..self.grid.nx() {
            for (q, &lv) in self.lift_value.iter().enumerate() {
                out[[i, q]] += lv;
            }
        }
        Ok(out)
    }

    /// Domain inner product of two modal coefficient sets,
    /// Re(sum conj(a) b) over the full spectrum.
    pub fn pairing(&self, a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
        let ny = self.grid.nx() / 2;
        let kmax = self.grid.kmax();
        let mut total = 0.0;
        for m in 0..=ny {
            let mut row = 0.0;
            for k in 0..kmax {
                let x = a[[m, k]];
                let y = b[[m, k]];
                row += x.re * y.re + x.im * y.im;
            }
            total += self.grid.hermitian_weight(m) * row;
        }
        self.grid.stack().width() * total
    }

    /// Porosity-weighted squared norm of the homogeneous concentration.
    pub fn energy(&self, coeffs: &Array2<Complex64>) -> f64 {
        let ny = self.grid.nx() / 2;
        let kmax = self.grid.kmax();
        let mut total = 0.0;
        match self.uniform_porosity {
            Some(b) => {
                for m in 0..=ny {
                    let mut row = 0.0;
                    for k in 0..kmax {
                        row += coeffs[[m, k]].norm_sqr();
                    }
                    total += self.grid.hermitian_weight(m) * b * row;
                }
            }
            None => {
                for m in 0..=ny {
                    let mass = &self.porosity_mass[m];
                    let mut row = 0.0;
                    for k in 0..kmax {
                        for l in 0..kmax {
                            let a = coeffs[[m, k]];
                            let c = coeffs[[m, l]];
                            row += mass[[k, l]] * (a.re * c.re + a.im * c.im);
                        }
                    }
                    total += self.grid.hermitian_weight(m) * row;
                }
            }
        }
        self.grid.stack().width() * total
    }

    /// Diffusive dissipation rate of the homogeneous concentration.
    pub fn dissipation(&self, coeffs: &Array2<Complex64>) -> f64 {
        let ny = self.grid.nx() / 2;
        let kmax = self.grid.kmax();
        let mut total = 0.0;
        for m in 0..=ny {
            let evs = self.grid.basis(m).eigenvalues();
            let mut row = 0.0;
            for k in 0..kmax {
                row += evs[k] * coeffs[[m, k]].norm_sqr();
            }
            total += self.grid.hermitian_weight(m) * row;
        }
        self.grid.stack().width() * total
    }

    /// Solve the per-wavenumber pressure problems driven by buoyancy. The
    /// mean-row right-hand side includes the conduction lift; every solution
    /// is demeaned, so the horizontal-mean pressure has zero vertical mean.
    pub fn solve_pressure(&self, coeffs: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        let ny = self.grid.nx() / 2;
        let kmax = self.grid.kmax();
        let np = self.km_q.len();
        let n_nodes = self.solvers[0].num_nodes();
        let c_b = self.buoyancy();

        let rows: Vec<Vec<Complex64>> = (0..=ny)
            .into_par_iter()
            .map(|m| -> Result<Vec<Complex64>> {
                let mut row = vec![Complex64::default(); n_nodes];
                let active = c_b != 0.0
                    && (coeffs.row(m).iter().any(|c| *c != Complex64::default())
                        || (m == 0 && !self.lift.is_zero()));
                if !active {
                    return Ok(row);
                }
                let vq = &self.vq[m];
                let mut g1_re = vec![0.0; np];
                let mut g1_im = vec![0.0; np];
                for p in 0..np {
                    let mut phi = Complex64::default();
                    for k in 0..kmax {
                        let c = coeffs[[m, k]];
                        if c != Complex64::default() {
                            phi += c * vq[[k, p]];
                        }
                    }
                    if m == 0 {
                        phi.re += self.lift_q[p];
                    }
                    let f = -c_b * self.km_q[p];
                    g1_re[p] = f * phi.re;
                    g1_im[p] = f * phi.im;
                }
                let zeros = vec![0.0; np];
                let re = self.solvers[m].solve_sampled(&zeros, &g1_re)?;
                let im = if g1_im.iter().all(|&v| v == 0.0) {
                    vec![0.0; n_nodes]
                } else {
                    self.solvers[m].solve_sampled(&zeros, &g1_im)?
                };
                for (slot, (r, i)) in row.iter_mut().zip(re.into_iter().zip(im)) {
                    *slot = Complex64::new(r, i);
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;

        let mut pressure = Array2::zeros((ny + 1, n_nodes));
        for (m, row) in rows.into_iter().enumerate() {
            for (p, v) in row.into_iter().enumerate() {
                pressure[[m, p]] = v;
            }
        }
        Ok(pressure)
    }

    /// Darcy velocity from pressure and concentration: profiles at the
    /// grid's Gauss nodes plus nodal samples.
    fn velocity(
        &self,
        value_rows: &Array2<Complex64>,
        pressure: &Array2<Complex64>,
    ) -> Result<Velocity> {
        let ny = self.grid.nx() / 2;
        let nz = self.grid.z().len();
        let c_b = self.buoyancy();

        let rows: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..=ny)
            .into_par_iter()
            .map(|m| {
                let kappa = self.grid.kappa(m);
                let mut uxr = vec![Complex64::default(); nz];
                let mut uzr = vec![Complex64::default(); nz];
                let re: Vec<f64> = pressure.row(m).iter().map(|c| c.re).collect();
                let im: Vec<f64> = pressure.row(m).iter().map(|c| c.im).collect();
                let has_re = re.iter().any(|&v| v != 0.0);
                let has_im = im.iter().any(|&v| v != 0.0);
                for q in 0..nz {
                    let z = self.grid.z()[q];
                    let (p_re, dp_re) = if has_re { self.solvers[m].eval(&re, z) } else { (0.0, 0.0) };
                    let (p_im, dp_im) = if has_im { self.solvers[m].eval(&im, z) } else { (0.0, 0.0) };
                    let km = self.km_node[q];
                    let mut phi = value_rows[[m, q]];
                    if m == 0 {
                        phi.re += self.lift_value[q];
                    }
                    uxr[q] = Complex64::new(0.0, -kappa * km) * Complex64::new(p_re, p_im);
                    uzr[q] = -km * (Complex64::new(dp_re, dp_im) + c_b * phi);
                }
                if m == ny {
                    // the half-spectrum cannot carry the sine partner of the
                    // Nyquist cosine; dealiasing keeps this row empty anyway
                    for v in uxr.iter_mut() {
                        *v = Complex64::default();
                    }
                }
                (uxr, uzr)
            })
            .collect();

        let mut rows_x = Array2::zeros((ny + 1, nz));
        let mut rows_z = Array2::zeros((ny + 1, nz));
        for (m, (uxr, uzr)) in rows.into_iter().enumerate() {
            for q in 0..nz {
                rows_x[[m, q]] = uxr[q];
                rows_z[[m, q]] = uzr[q];
            }
        }
        let nodal_x = self.grid.profiles_to_nodal(&rows_x)?;
        let nodal_z = self.grid.profiles_to_nodal(&rows_z)?;
        let mut max_speed = 0.0f64;
        for (u, w) in nodal_x.iter().zip(nodal_z.iter()) {
            max_speed = max_speed.max(u.hypot(*w));
        }
        Ok(Velocity {
            rows_x,
            rows_z,
            nodal_x,
            nodal_z,
            max_speed,
        })
    }

    /// Skew-form advection projection, dealiased:
    /// N = (u . grad(phi) + div(u phi)) / 2 tested against the basis.
    fn advection(
        &self,
        phi_nodal: &Array2<f64>,
        fx_nodal: &Array2<f64>,
        fz_nodal: &Array2<f64>,
        ux: &Array2<f64>,
        uz: &Array2<f64>,
    ) -> Result<Array2<Complex64>> {
        let nx = self.grid.nx();
        let nz = self.grid.z().len();
        let mut conv = Array2::zeros((nx, nz));
        let mut flux_x = Array2::zeros((nx, nz));
        let mut flux_z = Array2::zeros((nx, nz));
        for i in 0..nx {
            for q in 0..nz {
                let u = ux[[i, q]];
                let w = uz[[i, q]];
                conv[[i, q]] = u * fx_nodal[[i, q]] + w * fz_nodal[[i, q]];
                flux_x[[i, q]] = u * phi_nodal[[i, q]];
                flux_z[[i, q]] = w * phi_nodal[[i, q]];
            }
        }
        let pa = self.grid.project_rows(&self.grid.fourier_rows(&conv)?, false)?;
        let pfx = self.grid.project_rows(&self.grid.fourier_rows(&flux_x)?, false)?;
        // the vertical flux is integrated by parts against the basis
        // derivative; the basis vanishes at both walls
        let pfz = self.grid.project_rows(&self.grid.fourier_rows(&flux_z)?, true)?;

        let ny = nx / 2;
        let kmax = self.grid.kmax();
        let mut n = Array2::zeros((ny + 1, kmax));
        for m in 0..=ny {
            let ik = Complex64::new(0.0, self.grid.kappa(m));
            for k in 0..kmax {
                n[[m, k]] = 0.5 * (pa[[m, k]] + ik * pfx[[m, k]] - pfz[[m, k]]);
            }
        }
        self.trim_spectrum(&mut n);
        Ok(n)
    }

    /// Projection of the source u_z d(lift)/dz, dealiased.
    fn lift_source(&self, uz: &Array2<f64>) -> Result<Array2<Complex64>> {
        let nx = self.grid.nx();
        let ny = nx / 2;
        let nz = self.grid.z().len();
        let kmax = self.grid.kmax();
        if self.lift.is_zero() {
            return Ok(Array2::zeros((ny + 1, kmax)));
        }
        let mut src = Array2::zeros((nx, nz));
        for i in 0..nx {
            for q in 0..nz {
                src[[i, q]] = uz[[i, q]] * self.lift_slope[q];
            }
        }
        let mut s = self.grid.project_rows(&self.grid.fourier_rows(&src)?, false)?;
        self.trim_spectrum(&mut s);
        Ok(s)
    }

    /// Zero wavenumbers above the dealias band and the imaginary parts the
    /// real field cannot carry.
    fn trim_spectrum(&self, coeffs: &mut Array2<Complex64>) {
        let ny = self.grid.nx() / 2;
        let kmax = self.grid.kmax();
        for m in (self.grid.dealias_limit() + 1)..=ny {
            for k in 0..kmax {
                coeffs[[m, k]] = Complex64::default();
            }
        }
        for k in 0..kmax {
            coeffs[[0, k]].im = 0.0;
            coeffs[[ny, k]].im = 0.0;
        }
    }

    /// Evaluate everything the explicit terms need for one coefficient set.
    fn stage(&self, coeffs: &Array2<Complex64>) -> Result<Stage> {
        let ny = self.grid.nx() / 2;
        let nz = self.grid.z().len();
        let value_rows = self.grid.modal_profiles(coeffs, false);
        let deriv_rows = self.grid.modal_profiles(coeffs, true);
        let pressure = self.solve_pressure(coeffs)?;
        let vel = self.velocity(&value_rows, &pressure)?;
        let phi_nodal = self.grid.profiles_to_nodal(&value_rows)?;

        // horizontal derivative profiles; the Nyquist row has no sine
        // partner in the half-spectrum and stays zero
        let mut fx_rows = Array2::zeros((ny + 1, nz));
        for m in 0..ny {
            let ik = Complex64::new(0.0, self.grid.kappa(m));
            for q in 0..nz {
                fx_rows[[m, q]] = ik * value_rows[[m, q]];
            }
        }
        let fx = self.grid.profiles_to_nodal(&fx_rows)?;
        let fz = self.grid.profiles_to_nodal(&deriv_rows)?;

        let advection = self.advection(&phi_nodal, &fx, &fz, &vel.nodal_x, &vel.nodal_z)?;
        let source = self.lift_source(&vel.nodal_z)?;
        Ok(Stage {
            pressure,
            ux_rows: vel.rows_x,
            uz_rows: vel.rows_z,
            ux: vel.nodal_x,
            uz: vel.nodal_z,
            phi_nodal,
            max_speed: vel.max_speed,
            advection,
            source,
        })
    }

    /// State for given modal coefficients at a given time level. The
    /// coefficients are dealiased first; the stage evaluation is stored so
    /// stepping resumes deterministically.
    pub fn state_at(&self, coeffs: Array2<Complex64>, t: f64, step: u64) -> Result<FlowState> {
        let field = SpectralField::from_modal(self.grid, coeffs)?;
        let clean = self.grid.dealias(&field)?;
        let mut c = clean.require_modal()?.clone();
        let ny = self.grid.nx() / 2;
        for k in 0..self.grid.kmax() {
            c[[0, k]].im = 0.0;
            c[[ny, k]].im = 0.0;
        }
        let stage = self.stage(&c)?;
        Ok(self.assemble(c, stage, t, step, 0.0, false, 0.0, 0.0))
    }

    /// Initial state from a concentration field at t = 0.
    pub fn initial_state(&self, phi0: &SpectralField) -> Result<FlowState> {
        let with_modal = self.grid.to_modal(phi0)?;
        let coeffs = with_modal.require_modal()?.clone();
        self.state_at(coeffs, 0.0, 0)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        &self,
        coeffs: Array2<Complex64>,
        stage: Stage,
        t: f64,
        step: u64,
        cfl: f64,
        cfl_exceeded: bool,
        energy_residual: f64,
        last_dt: f64,
    ) -> FlowState {
        let phi = SpectralField::from_parts(coeffs, stage.phi_nodal);
        FlowState {
            phi,
            pressure: stage.pressure,
            ux_rows: stage.ux_rows,
            uz_rows: stage.uz_rows,
            ux: stage.ux,
            uz: stage.uz,
            advection: stage.advection,
            source: stage.source,
            t,
            step,
            max_speed: stage.max_speed,
            cfl,
            cfl_exceeded,
            energy_residual,
            last_dt,
        }
    }

    /// Backward-Euler diffusion with explicit forcing (N + S).
    fn imex_euler(
        &self,
        c: &Array2<Complex64>,
        forcing: &Array2<Complex64>,
        dt: f64,
    ) -> Result<Array2<Complex64>> {
        let ny = self.grid.nx() / 2;
        let kmax = self.grid.kmax();
        let mut out = Array2::zeros((ny + 1, kmax));
        match self.uniform_porosity {
            Some(b) => {
                for m in 0..=ny {
                    let evs = self.grid.basis(m).eigenvalues();
                    for k in 0..kmax {
                        out[[m, k]] =
                            (c[[m, k]] - forcing[[m, k]] * (dt / b)) / (1.0 + dt * evs[k] / b);
                    }
                }
            }
            None => {
                for m in 0..=ny {
                    let (mut rre, mut rim) = self.mass_apply(m, c, 0.0);
                    for k in 0..kmax {
                        rre[k] -= dt * forcing[[m, k]].re;
                        rim[k] -= dt * forcing[[m, k]].im;
                    }
                    self.porosity_solve(m, dt, &mut rre, &mut rim)?;
                    for k in 0..kmax {
                        out[[m, k]] = Complex64::new(rre[k], rim[k]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Trapezoidal diffusion with the summed explicit forcing of both stages.
    fn imex_cn(
        &self,
        c: &Array2<Complex64>,
        forcing_sum: &Array2<Complex64>,
        dt: f64,
    ) -> Result<Array2<Complex64>> {
        let ny = self.grid.nx() / 2;
        let kmax = self.grid.kmax();
        let mut out = Array2::zeros((ny + 1, kmax));
        match self.uniform_porosity {
            Some(b) => {
                for m in 0..=ny {
                    let evs = self.grid.basis(m).eigenvalues();
                    for k in 0..kmax {
                        let x = dt * evs[k] / b;
                        out[[m, k]] = ((1.0 - 0.5 * x) * c[[m, k]]
                            - forcing_sum[[m, k]] * (dt / (2.0 * b)))
                            / (1.0 + 0.5 * x);
                    }
                }
            }
            None => {
                let half = 0.5 * dt;
                for m in 0..=ny {
                    let (mut rre, mut rim) = self.mass_apply(m, c, -half);
                    for k in 0..kmax {
                        rre[k] -= half * forcing_sum[[m, k]].re;
                        rim[k] -= half * forcing_sum[[m, k]].im;
                    }
                    self.porosity_solve(m, half, &mut rre, &mut rim)?;
                    for k in 0..kmax {
                        out[[m, k]] = Complex64::new(rre[k], rim[k]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// (M + shift * Lambda) applied to row m of the coefficients.
    fn mass_apply(&self, m: usize, c: &Array2<Complex64>, shift: f64) -> (Vec<f64>, Vec<f64>) {
        let kmax = self.grid.kmax();
        let mass = &self.porosity_mass[m];
        let evs = self.grid.basis(m).eigenvalues();
        let mut rre = vec![0.0; kmax];
        let mut rim = vec![0.0; kmax];
        for k in 0..kmax {
            let mut are = 0.0;
            let mut aim = 0.0;
            for l in 0..kmax {
                let v = c[[m, l]];
                are += mass[[k, l]] * v.re;
                aim += mass[[k, l]] * v.im;
            }
            let v = c[[m, k]];
            rre[k] = are + shift * evs[k] * v.re;
            rim[k] = aim + shift * evs[k] * v.im;
        }
        (rre, rim)
    }

    /// Solve (M + shift * Lambda) x = rhs for row m, in place.
    fn porosity_solve(
        &self,
        m: usize,
        shift: f64,
        rhs_re: &mut [f64],
        rhs_im: &mut [f64],
    ) -> Result<()> {
        let kmax = self.grid.kmax();
        let evs = self.grid.basis(m).eigenvalues();
        let mut a = self.porosity_mass[m].clone();
        for k in 0..kmax {
            a[[k, k]] += shift * evs[k];
        }
        cholesky_in_place(&mut a)?;
        cholesky_solve(&a, rhs_re);
        cholesky_solve(&a, rhs_im);
        Ok(())
    }

    fn check_finite(&self, coeffs: &Array2<Complex64>, t: f64, step: u64) -> Result<()> {
        for ((m, k), c) in coeffs.indexed_iter() {
            if !c.re.is_finite() || !c.im.is_finite() {
                return Err(Error::Stepper(format!(
                    "non-finite coefficient at wavenumber {m}, vertical mode {k} \
                     (t = {t:.6e}, step {step})"
                )));
            }
        }
        Ok(())
    }

    /// Advance the state by one step, capped at `dt_cap`. With adaptivity on
    /// the step also shrinks to meet the CFL target; otherwise a violation
    /// only raises the state's flag.
    pub fn step(&self, state: &mut FlowState, dt_cap: f64) -> Result<()> {
        if !dt_cap.is_finite() || dt_cap <= 0.0 {
            return Err(Error::Stepper(format!(
                "step size must be positive and finite, got {dt_cap}"
            )));
        }
        let h = self.grid.min_spacing();
        let dt = if self.stepper.adaptive && state.max_speed > 0.0 {
            dt_cap.min(self.stepper.cfl_target * h / state.max_speed)
        } else {
            dt_cap
        };
        let cfl = state.max_speed * dt / h;
        let cfl_exceeded = !self.stepper.adaptive && cfl > self.stepper.cfl_target;

        let c0 = state.phi.require_modal()?.clone();
        let forcing0 = &state.advection + &state.source;
        let (c_new, source_used) = match self.stepper.scheme {
            Scheme::ImexEuler => {
                let c1 = self.imex_euler(&c0, &forcing0, dt)?;
                (c1, state.source.clone())
            }
            Scheme::ImexCn => {
                let c_star = self.imex_euler(&c0, &forcing0, dt)?;
                self.check_finite(&c_star, state.t, state.step)?;
                let mid = self.stage(&c_star)?;
                let forcing_sum = &forcing0 + &mid.advection + &mid.source;
                let c1 = self.imex_cn(&c0, &forcing_sum, dt)?;
                let avg = (&state.source + &mid.source).mapv(|v| 0.5 * v);
                (c1, avg)
            }
        };
        self.check_finite(&c_new, state.t, state.step)?;

        // discrete energy balance over the step, evaluated at the midpoint
        let e0 = self.energy(&c0);
        let e1 = self.energy(&c_new);
        let c_mid = (&c0 + &c_new).mapv(|v| 0.5 * v);
        let residual = (e1 - e0) / dt
            + 2.0 * self.dissipation(&c_mid)
            + 2.0 * self.pairing(&c_mid, &source_used);

        let stage_new = self.stage(&c_new)?;
        *state = self.assemble(
            c_new,
            stage_new,
            state.t + dt,
            state.step + 1,
            cfl,
            cfl_exceeded,
            residual,
            dt,
        );
        Ok(())
    }
}

/// In-place Cholesky factorization of a symmetric positive definite matrix;
/// the lower triangle receives the factor.
fn cholesky_in_place(a: &mut Array2<f64>) -> Result<()> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for p in 0..j {
            d -= a[[j, p]] * a[[j, p]];
        }
        if !d.is_finite() || d <= 0.0 {
            return Err(Error::Stepper(format!(
                "porosity mass system lost positive definiteness at row {j}"
            )));
        }
        let dj = d.sqrt();
        a[[j, j]] = dj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for p in 0..j {
                s -= a[[i, p]] * a[[j, p]];
            }
            a[[i, j]] = s / dj;
        }
    }
    Ok(())
}

/// Forward and back substitution with the factor from `cholesky_in_place`.
fn cholesky_solve(l: &Array2<f64>, rhs: &mut [f64]) {
    let n = l.nrows();
    for i in 0..n {
        let mut s = rhs[i];
        for p in 0..i {
            s -= l[[i, p]] * rhs[p];
        }
        rhs[i] = s / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut s = rhs[i];
        for p in (i + 1)..n {
            s -= l[[p, i]] * rhs[p];
        }
        rhs[i] = s / l[[i, i]];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LayerStack;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_stack() -> LayerStack {
        LayerStack::new(&[0.0, -1.0], &[1.0], &[1.0], &[1.0], 2.0).unwrap()
    }

    fn two_layer_stack() -> LayerStack {
        LayerStack::new(
            &[0.0, -0.4, -1.0],
            &[1.0, 0.5],
            &[1.0, 1.0],
            &[1.0, 3.0],
            2.0,
        )
        .unwrap()
    }

    fn three_k_stack() -> LayerStack {
        LayerStack::new(
            &[0.0, -0.3, -0.7, -1.0],
            &[1.0, 5.0, 0.2],
            &[1.0, 1.0, 1.0],
            &[1.0, 1.0, 1.0],
            2.0,
        )
        .unwrap()
    }

    fn layered_b_stack() -> LayerStack {
        LayerStack::new(
            &[0.0, -0.5, -1.0],
            &[1.0, 1.0],
            &[0.4, 1.0],
            &[2.0, 1.0],
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

    fn stepper(scheme: Scheme, dt: f64) -> StepperConfig {
        StepperConfig {
            dt,
            scheme,
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
    fn stepper_config_rejects_bad_parameters() {
        let mut cfg = StepperConfig {
            dt: 0.0,
            ..StepperConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.dt = 1e-3;
        cfg.cfl_target = 1.5;
        assert!(cfg.validate().is_err());
        cfg.cfl_target = 0.5;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn diffusion_only_euler_step_matches_the_exact_update_formula() {
        let stack = single_stack();
        let grid = Grid::new(&stack, 8, 5, 10).unwrap();
        let dt = 0.01;
        let tr = Transport::new(
            &grid,
            inert(),
            BoundaryData::default(),
            2,
            8,
            stepper(Scheme::ImexEuler, dt),
        )
        .unwrap();
        let c0 = random_coeffs(&grid, 3, 1.0);
        let mut state = tr.state_at(c0.clone(), 0.0, 0).unwrap();
        assert_eq!(state.max_speed, 0.0);
        tr.step(&mut state, dt).unwrap();
        let c1 = state.phi.require_modal().unwrap();
        for m in 0..=grid.nx() / 2 {
            let evs = grid.basis(m).eigenvalues();
            for k in 0..grid.kmax() {
                let want = (c0[[m, k]] - Complex64::default() * (dt / 1.0))
                    / (1.0 + dt * evs[k] / 1.0);
                assert_eq!(c1[[m, k]], want, "mode ({m}, {k})");
            }
        }
        assert_eq!(state.step, 1);
        assert_eq!(state.last_dt, dt);
    }

    #[test]
    fn crank_nicolson_reduces_to_trapezoidal_diffusion_without_flow() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let dt = 0.02;
        let tr = Transport::new(
            &grid,
            inert(),
            BoundaryData::default(),
            2,
            8,
            stepper(Scheme::ImexCn, dt),
        )
        .unwrap();
        let c0 = random_coeffs(&grid, 11, 1.0);
        let mut state = tr.state_at(c0.clone(), 0.0, 0).unwrap();
        tr.step(&mut state, dt).unwrap();
        let c1 = state.phi.require_modal().unwrap();
        for m in 0..=grid.nx() / 2 {
            let evs = grid.basis(m).eigenvalues();
            for k in 0..grid.kmax() {
                let x = dt * evs[k] / 1.0;
                let want = ((1.0 - 0.5 * x) * c0[[m, k]]
                    - Complex64::default() * (dt / 2.0))
                    / (1.0 + 0.5 * x);
                assert_eq!(c1[[m, k]], want, "mode ({m}, {k})");
            }
        }
        // pure diffusion leaves no energy-balance residual
        assert!(
            state.energy_residual.abs() <= 1e-11,
            "residual {}",
            state.energy_residual
        );
    }

    #[test]
    fn no_buoyancy_means_no_flow() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let tr = Transport::new(
            &grid,
            inert(),
            BoundaryData::new(0.0, 1.0),
            2,
            8,
            stepper(Scheme::ImexCn, 1e-3),
        )
        .unwrap();
        let state = tr.state_at(random_coeffs(&grid, 5, 1.0), 0.0, 0).unwrap();
        assert_eq!(state.max_speed, 0.0);
        assert!(state.pressure.iter().all(|p| *p == Complex64::default()));
    }

    #[test]
    fn uniform_concentration_stays_hydrostatic() {
        // piecewise-linear lift on three layers with distinct permeability:
        // quadratic elements represent the balanced pressure exactly, so the
        // velocity sits at rounding level
        let stack = three_k_stack();
        let grid = Grid::new(&stack, 8, 6, 8).unwrap();
        let tr = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::new(0.0, 1.0),
            2,
            10,
            stepper(Scheme::ImexCn, 1e-3),
        )
        .unwrap();
        let zero = Array2::zeros((grid.nx() / 2 + 1, grid.kmax()));
        let mut state = tr.state_at(zero, 0.0, 0).unwrap();
        let scale = tr.constants().buoyancy()
            * tr.lift_values().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        assert!(
            state.max_speed <= 1e-11 * scale,
            "max speed {} vs scale {scale}",
            state.max_speed
        );
        tr.step(&mut state, 1e-3).unwrap();
        let after = state.phi.require_modal().unwrap();
        let drift = after.iter().fold(0.0f64, |a, c| a.max(c.norm()));
        assert!(drift <= 1e-12, "concentration drift {drift}");
    }

    #[test]
    fn mean_pressure_has_zero_vertical_mean() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let tr = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::new(0.0, 1.0),
            2,
            8,
            stepper(Scheme::ImexCn, 1e-3),
        )
        .unwrap();
        let state = tr.state_at(random_coeffs(&grid, 9, 0.5), 0.0, 0).unwrap();
        let re: Vec<f64> = state.pressure.row(0).iter().map(|c| c.re).collect();
        let mean = tr.solver(0).integral(&re);
        let scale = re.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
        assert!(mean.abs() <= 1e-11 * scale, "mean {mean} vs scale {scale}");
    }

    #[test]
    fn advection_projection_is_skew_orthogonal() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 12, 6, 10).unwrap();
        let tr = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::new(0.0, 1.0),
            2,
            8,
            stepper(Scheme::ImexCn, 1e-3),
        )
        .unwrap();
        for seed in [1u64, 2, 3] {
            let state = tr.state_at(random_coeffs(&grid, seed, 1.0), 0.0, 0).unwrap();
            let c = state.phi.require_modal().unwrap();
            let pair = tr.pairing(c, &state.advection);
            let norms = grid.norms(&state.phi).unwrap();
            let grad = (norms.v * norms.v
                + tr.pairing(c, c) * grid.kappa(grid.dealias_limit()).powi(2))
            .sqrt();
            let scale = (norms.l2 * grad).max(1e-300) * state.max_speed.max(1.0);
            assert!(
                pair.abs() <= 1e-10 * scale,
                "seed {seed}: pairing {pair} vs scale {scale}"
            );
        }
    }

    #[test]
    fn buoyant_eigenmode_decays_at_the_diffusive_rate() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 6, 8).unwrap();
        let lambda1 = grid.basis(0).eigenvalue(0);
        let dt = 1e-4 / lambda1;
        let tr = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::default(),
            3,
            24,
            stepper(Scheme::ImexCn, dt),
        )
        .unwrap();
        let mut c0 = Array2::zeros((grid.nx() / 2 + 1, grid.kmax()));
        c0[[0, 0]] = Complex64::new(1.0, 0.0);
        let mut state = tr.state_at(c0, 0.0, 0).unwrap();
        let e0 = tr.energy(state.phi.require_modal().unwrap());
        let t_end = 1.0 / lambda1;
        let steps = (t_end / dt).round() as usize;
        for _ in 0..steps {
            tr.step(&mut state, dt).unwrap();
        }
        let e_end = tr.energy(state.phi.require_modal().unwrap());
        let want = e0 * (-2.0 * lambda1 * state.t).exp();
        let rel = (e_end - want).abs() / want;
        assert!(rel <= 1e-8, "energy {e_end} vs {want}, rel {rel:.3e}");
    }

    #[test]
    fn imex_schemes_self_converge_at_their_orders() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let t_end = 0.05;
        let dt0 = t_end / 16.0;
        let boundary = BoundaryData::new(0.0, 1.0);
        let c0 = random_coeffs(&grid, 7, 0.3);

        let run = |scheme: Scheme, dt: f64| -> Array2<Complex64> {
            let tr = Transport::new(&grid, buoyant(), boundary, 2, 10, stepper(scheme, dt))
                .unwrap();
            let mut state = tr.state_at(c0.clone(), 0.0, 0).unwrap();
            let steps = (t_end / dt).round() as usize;
            for _ in 0..steps {
                tr.step(&mut state, dt).unwrap();
            }
            state.phi.require_modal().unwrap().clone()
        };

        let tr = Transport::new(
            &grid,
            buoyant(),
            boundary,
            2,
            10,
            stepper(Scheme::ImexCn, dt0),
        )
        .unwrap();
        let reference = run(Scheme::ImexCn, dt0 / 64.0);
        let err = |c: &Array2<Complex64>| -> f64 {
            let d = c - &reference;
            tr.pairing(&d, &d).sqrt()
        };

        let cn: Vec<f64> = [dt0, dt0 / 2.0, dt0 / 4.0]
            .iter()
            .map(|&dt| err(&run(Scheme::ImexCn, dt)))
            .collect();
        for w in cn.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(
                (1.7..=2.3).contains(&order),
                "trapezoidal order {order:.3} from errors {cn:?}"
            );
        }

        let euler: Vec<f64> = [dt0, dt0 / 2.0, dt0 / 4.0]
            .iter()
            .map(|&dt| err(&run(Scheme::ImexEuler, dt)))
            .collect();
        for w in euler.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(
                (0.8..=1.2).contains(&order),
                "euler order {order:.3} from errors {euler:?}"
            );
        }
    }

    #[test]
    fn energy_and_dissipation_match_field_norms() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let tr = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::default(),
            2,
            8,
            stepper(Scheme::ImexCn, 1e-3),
        )
        .unwrap();
        let c = random_coeffs(&grid, 21, 1.0);
        let field = SpectralField::from_modal(&grid, c.clone()).unwrap();
        let norms = grid.norms(&field).unwrap();
        // porosity is 1 on this stack
        assert!((tr.energy(&c) - norms.l2 * norms.l2).abs() <= 1e-12 * tr.energy(&c));
        assert!((tr.dissipation(&c) - norms.v * norms.v).abs() <= 1e-12 * tr.dissipation(&c));
    }

    #[test]
    fn cfl_flag_raises_and_adaptive_step_clamps() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let c0 = random_coeffs(&grid, 13, 1.0);
        let dt = 1.0;

        let fixed = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::new(0.0, 1.0),
            2,
            8,
            stepper(Scheme::ImexEuler, dt),
        )
        .unwrap();
        let mut state = fixed.state_at(c0.clone(), 0.0, 0).unwrap();
        assert!(state.max_speed > 0.0);
        fixed.step(&mut state, dt).unwrap();
        assert!(state.cfl > fixed.stepper().cfl_target);
        assert!(state.cfl_exceeded);
        assert_eq!(state.last_dt, dt);

        let adaptive = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::new(0.0, 1.0),
            2,
            8,
            StepperConfig {
                dt,
                scheme: Scheme::ImexEuler,
                cfl_target: 0.5,
                adaptive: true,
            },
        )
        .unwrap();
        let mut state = adaptive.state_at(c0, 0.0, 0).unwrap();
        let expected_dt = 0.5 * grid.min_spacing() / state.max_speed;
        adaptive.step(&mut state, dt).unwrap();
        assert_eq!(state.last_dt, expected_dt);
        assert!(state.cfl <= 0.5 + 1e-12);
        assert!(!state.cfl_exceeded);
    }

    #[test]
    fn non_finite_state_reports_location() {
        let stack = single_stack();
        let grid = Grid::new(&stack, 8, 4, 8).unwrap();
        let tr = Transport::new(
            &grid,
            inert(),
            BoundaryData::default(),
            2,
            8,
            stepper(Scheme::ImexEuler, 1e-3),
        )
        .unwrap();
        let mut state = tr
            .state_at(Array2::zeros((grid.nx() / 2 + 1, grid.kmax())), 0.0, 0)
            .unwrap();
        let mut poisoned = state.phi.require_modal().unwrap().clone();
        poisoned[[1, 2]] = Complex64::new(f64::NAN, 0.0);
        state.phi = SpectralField::from_modal(&grid, poisoned).unwrap();
        let err = tr.step(&mut state, 1e-3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "message: {msg}");
        assert!(msg.contains("wavenumber 1"), "message: {msg}");
        assert!(msg.contains("vertical mode 2"), "message: {msg}");
    }

    #[test]
    fn restart_state_reproduces_the_stage_bitwise() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let dt = 2e-3;
        let tr = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::new(0.0, 1.0),
            2,
            8,
            stepper(Scheme::ImexCn, dt),
        )
        .unwrap();
        let mut state = tr.state_at(random_coeffs(&grid, 17, 0.5), 0.0, 0).unwrap();
        for _ in 0..3 {
            tr.step(&mut state, dt).unwrap();
        }
        let rebuilt = tr
            .state_at(
                state.phi.require_modal().unwrap().clone(),
                state.t,
                state.step,
            )
            .unwrap();
        assert_eq!(state.pressure, rebuilt.pressure);
        assert_eq!(state.ux_rows, rebuilt.ux_rows);
        assert_eq!(state.uz_rows, rebuilt.uz_rows);
        assert_eq!(state.advection, rebuilt.advection);
        assert_eq!(state.source, rebuilt.source);
        assert_eq!(state.max_speed, rebuilt.max_speed);

        // and the next step agrees bit for bit
        let mut a = state.clone();
        let mut b = rebuilt;
        tr.step(&mut a, dt).unwrap();
        tr.step(&mut b, dt).unwrap();
        assert_eq!(a.phi.require_modal().unwrap(), b.phi.require_modal().unwrap());
        assert_eq!(a.energy_residual, b.energy_residual);
    }

    #[test]
    fn lift_source_vanishes_for_homogeneous_boundaries() {
        let stack = two_layer_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let tr = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::default(),
            2,
            8,
            stepper(Scheme::ImexCn, 1e-3),
        )
        .unwrap();
        let state = tr.state_at(random_coeffs(&grid, 29, 1.0), 0.0, 0).unwrap();
        assert!(state.source.iter().all(|s| *s == Complex64::default()));
    }

    #[test]
    fn layered_porosity_crank_nicolson_obeys_the_discrete_energy_law() {
        let stack = layered_b_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let dt = 1e-3;
        let tr = Transport::new(
            &grid,
            inert(),
            BoundaryData::default(),
            2,
            8,
            stepper(Scheme::ImexCn, dt),
        )
        .unwrap();
        assert!(tr.layered_porosity());
        let mut state = tr.state_at(random_coeffs(&grid, 31, 1.0), 0.0, 0).unwrap();
        let mut prev = tr.energy(state.phi.require_modal().unwrap());
        for _ in 0..10 {
            tr.step(&mut state, dt).unwrap();
            let e = tr.energy(state.phi.require_modal().unwrap());
            assert!(e < prev, "diffusion must dissipate energy");
            assert!(
                state.energy_residual.abs() <= 1e-10,
                "residual {}",
                state.energy_residual
            );
            prev = e;
        }
    }

    #[test]
    fn buoyant_layered_porosity_keeps_small_energy_residual() {
        let stack = layered_b_stack();
        let grid = Grid::new(&stack, 8, 5, 8).unwrap();
        let dt = 5e-4;
        let tr = Transport::new(
            &grid,
            buoyant(),
            BoundaryData::new(0.0, 1.0),
            2,
            8,
            stepper(Scheme::ImexCn, dt),
        )
        .unwrap();
        let mut state = tr.state_at(random_coeffs(&grid, 37, 0.3), 0.0, 0).unwrap();
        for _ in 0..5 {
            tr.step(&mut state, dt).unwrap();
            let scale = tr.energy(state.phi.require_modal().unwrap()).max(1.0);
            // second-order truncation, not machine zero: advection is explicit
            assert!(
                state.energy_residual.abs() <= 1e-3 * scale,
                "residual {}",
                state.energy_residual
            );
        }
    }
}
