//! Dual modal/nodal scalar fields on the layered strip.
//!
//! Horizontally: Nx uniform points on [0, L) and Fourier modes
//! kappa_m = 2 pi m / L, with e^{+i kappa x} synthesis and the 1/Nx factor
//! on analysis. Vertically: per-layer Gauss-Legendre nodes paired with the
//! eigenbasis of the vertical diffusion operator at each wavenumber. A field
//! therefore lives either as nodal values f[x_i][z_q] or as coefficients
//! c[m][k]; real fields store m = 0..Nx/2 only, negative wavenumbers being
//! implied by conjugate symmetry. Coefficient column k holds eigenindex k+1.

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::domain::LayerStack;
use crate::error::{Error, Result};
use crate::quad::QuadRule;
use crate::spectra::{find_eigenpairs, VerticalBasis};

/// Tensor grid plus the per-wavenumber eigenbases and cached traces.
///
/// The vertical nodes are the concatenated per-layer Gauss nodes in
/// ascending order (bottom of the strip first); no node ever lies on an
/// interface, so piecewise quantities are always sampled one-sidedly.
pub struct Grid {
    stack: LayerStack,
    nx: usize,
    kmax: usize,
    nq: usize,
    x: Vec<f64>,
    z: Vec<f64>,
    zw: Vec<f64>,
    z_layer: Vec<usize>,
    b_node: Vec<f64>,
    bd_node: Vec<f64>,
    min_dz: f64,
    bases: Vec<VerticalBasis>,
    /// v_{m,k}(z_q) as [k][q], one table per wavenumber index m.
    vtab: Vec<Array2<f64>>,
    /// v'_{m,k}(z_q) as [k][q].
    dvtab: Vec<Array2<f64>>,
    /// Gram matrices of the derivative traces: gz = int v' v',
    /// gbz = int (bD)^2 v' v' (used by the W norm).
    gz: Vec<Array2<f64>>,
    gbz: Vec<Array2<f64>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

/// Default vertical quadrature size per layer: products of the highest
/// retained eigenfunctions must sit inside the rule's resolution.
pub fn default_nq(kmax: usize, layers: usize) -> usize {
    (2 * kmax).div_ceil(layers).max(8)
}

impl Grid {
    /// Build the grid: nx uniform horizontal points, nq Gauss nodes per
    /// layer, and the first `kmax` vertical eigenpairs for every retained
    /// wavenumber m = 0 .. nx/2. Each layer's quadrature rule is validated
    /// against centered monomials up to its design degree 2 nq - 1.
    pub fn new(stack: &LayerStack, nx: usize, kmax: usize, nq: usize) -> Result<Self> {
        if nx < 4 || !nx.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "nx must be even and at least 4, got {nx}"
            )));
        }
        if kmax == 0 {
            return Err(Error::InvalidConfig("kmax must be at least 1".into()));
        }
        let layers = stack.num_layers();
        if nq < 4 {
            return Err(Error::InvalidConfig(format!(
                "nq must be at least 4, got {nq}"
            )));
        }
        if nq * layers < kmax {
            return Err(Error::InvalidConfig(format!(
                "quadrature capacity too small: {nq} nodes x {layers} layers \
                 cannot resolve {kmax} vertical modes"
            )));
        }

        let width = stack.width();
        let x: Vec<f64> = (0..nx).map(|i| width * i as f64 / nx as f64).collect();

        // ascending z: iterate layers bottom-up, each mapped rule ascending
        let mut z = Vec::with_capacity(nq * layers);
        let mut zw = Vec::with_capacity(nq * layers);
        let mut z_layer = Vec::with_capacity(nq * layers);
        for j in (0..layers).rev() {
            let (z_top, z_bot) = stack.layer_span(j);
            let rule = QuadRule::mapped(nq, z_bot, z_top);
            validate_rule(&rule, z_bot, z_top)?;
            for i in 0..nq {
                z.push(rule.nodes[i]);
                zw.push(rule.weights[i]);
                z_layer.push(j);
            }
        }
        let b_node: Vec<f64> = z_layer.iter().map(|&j| stack.material(j).porosity).collect();
        let bd_node: Vec<f64> = z_layer.iter().map(|&j| stack.material(j).bd()).collect();
        let mut min_dz = f64::INFINITY;
        for q in 1..z.len() {
            if z_layer[q] == z_layer[q - 1] {
                min_dz = min_dz.min(z[q] - z[q - 1]);
            }
        }

        let ny = nx / 2;
        let bases: Vec<VerticalBasis> = (0..=ny)
            .into_par_iter()
            .map(|m| {
                let kappa = 2.0 * std::f64::consts::PI * m as f64 / width;
                find_eigenpairs(stack, kappa, kmax)
            })
            .collect::<Result<_>>()?;

        let nz = z.len();
        let tables: Vec<(Array2<f64>, Array2<f64>)> = bases
            .par_iter()
            .map(|basis| {
                let mut v = Array2::zeros((kmax, nz));
                let mut dv = Array2::zeros((kmax, nz));
                for k in 0..kmax {
                    let mode = basis.mode(k);
                    for q in 0..nz {
                        let (val, der) = mode.eval(z[q]);
                        v[[k, q]] = val;
                        dv[[k, q]] = der;
                    }
                }
                (v, dv)
            })
            .collect();
        let mut vtab = Vec::with_capacity(tables.len());
        let mut dvtab = Vec::with_capacity(tables.len());
        for (v, dv) in tables {
            vtab.push(v);
            dvtab.push(dv);
        }

        let grams: Vec<(Array2<f64>, Array2<f64>)> = dvtab
            .par_iter()
            .map(|dv| {
                let mut gz = Array2::zeros((kmax, kmax));
                let mut gbz = Array2::zeros((kmax, kmax));
                for k in 0..kmax {
                    for l in k..kmax {
                        let mut sz = 0.0;
                        let mut sb = 0.0;
                        for q in 0..nz {
                            let prod = zw[q] * dv[[k, q]] * dv[[l, q]];
                            sz += prod;
                            sb += prod * bd_node[q] * bd_node[q];
                        }
                        gz[[k, l]] = sz;
                        gz[[l, k]] = sz;
                        gbz[[k, l]] = sb;
                        gbz[[l, k]] = sb;
                    }
                }
                (gz, gbz)
            })
            .collect();
        let mut gz = Vec::with_capacity(grams.len());
        let mut gbz = Vec::with_capacity(grams.len());
        for (a, b) in grams {
            gz.push(a);
            gbz.push(b);
        }

        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nx);
        let ifft = planner.plan_fft_inverse(nx);

        Ok(Grid {
            stack: stack.clone(),
            nx,
            kmax,
            nq,
            x,
            z,
            zw,
            z_layer,
            b_node,
            bd_node,
            min_dz,
            bases,
            vtab,
            dvtab,
            gz,
            gbz,
            fft,
            ifft,
        })
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    /// Number of retained non-negative wavenumbers (nx/2 + 1).
    pub fn num_modes(&self) -> usize {
        self.nx / 2 + 1
    }

    /// Largest |m| kept by the 2/3-rule dealiasing cut.
    pub fn dealias_limit(&self) -> usize {
        2 * (self.nx / 2) / 3
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn z_weights(&self) -> &[f64] {
        &self.zw
    }

    /// Layer index that owns each vertical node.
    pub fn z_layers(&self) -> &[usize] {
        &self.z_layer
    }

    /// Porosity b at each vertical node.
    pub fn b_nodes(&self) -> &[f64] {
        &self.b_node
    }

    /// Diffusion coefficient bD at each vertical node.
    pub fn bd_nodes(&self) -> &[f64] {
        &self.bd_node
    }

    pub fn dx(&self) -> f64 {
        self.stack.width() / self.nx as f64
    }

    /// Smallest gap between adjacent Gauss nodes inside a layer.
    pub fn min_dz(&self) -> f64 {
        self.min_dz
    }

    /// Finest effective spacing, the advective CFL length scale.
    pub fn min_spacing(&self) -> f64 {
        self.dx().min(self.min_dz)
    }

    pub fn kappa(&self, m: usize) -> f64 {
        2.0 * std::f64::consts::PI * m as f64 / self.stack.width()
    }

    pub fn basis(&self, m: usize) -> &VerticalBasis {
        &self.bases[m]
    }

    /// Value traces v_{m,k}(z_q) as [k][q].
    pub fn v_table(&self, m: usize) -> &Array2<f64> {
        &self.vtab[m]
    }

    /// Derivative traces v'_{m,k}(z_q) as [k][q].
    pub fn dv_table(&self, m: usize) -> &Array2<f64> {
        &self.dvtab[m]
    }

    fn check_nodal_shape(&self, nodal: &Array2<f64>) -> Result<()> {
        if nodal.dim() != (self.nx, self.z.len()) {
            return Err(Error::Field(format!(
                "nodal shape {:?} does not match the {} x {} grid",
                nodal.dim(),
                self.nx,
                self.z.len()
            )));
        }
        Ok(())
    }

    fn check_modal_shape(&self, modal: &Array2<Complex64>) -> Result<()> {
        if modal.dim() != (self.num_modes(), self.kmax) {
            return Err(Error::Field(format!(
                "modal shape {:?} does not match {} wavenumbers x {} vertical modes",
                modal.dim(),
                self.num_modes(),
                self.kmax
            )));
        }
        Ok(())
    }

    /// Fourier coefficients of every z-column: [m][q], m = 0..nx/2.
    fn analyze_columns(&self, nodal: &Array2<f64>) -> Array2<Complex64> {
        let nz = self.z.len();
        let ny = self.nx / 2;
        let mut fourier = Array2::zeros((ny + 1, nz));
        let scale = 1.0 / self.nx as f64;
        let mut buf = vec![Complex64::default(); self.nx];
        for q in 0..nz {
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = Complex64::new(nodal[[i, q]], 0.0);
            }
            self.fft.process(&mut buf);
            for m in 0..=ny {
                fourier[[m, q]] = buf[m] * scale;
            }
        }
        fourier
    }

    /// Project nodal values onto the modal basis: c[m][k] is the quadrature
    /// inner product of the m-th horizontal Fourier coefficient with v_{m,k}.
    pub fn project_nodal(&self, nodal: &Array2<f64>) -> Result<Array2<Complex64>> {
        self.check_nodal_shape(nodal)?;
        let fourier = self.analyze_columns(nodal);
        let ny = self.nx / 2;
        let nz = self.z.len();
        let mut coeffs = Array2::zeros((ny + 1, self.kmax));
        for m in 0..=ny {
            let vt = &self.vtab[m];
            for k in 0..self.kmax {
                let mut acc = Complex64::default();
                for q in 0..nz {
                    acc += fourier[[m, q]] * (self.zw[q] * vt[[k, q]]);
                }
                coeffs[[m, k]] = acc;
            }
        }
        // real input makes the m = 0 and Nyquist coefficients real
        for k in 0..self.kmax {
            coeffs[[0, k]].im = 0.0;
            coeffs[[ny, k]].im = 0.0;
        }
        Ok(coeffs)
    }

    /// Fourier coefficients of every z-column of a nodal field: [m][q].
    pub fn fourier_rows(&self, nodal: &Array2<f64>) -> Result<Array2<Complex64>> {
        self.check_nodal_shape(nodal)?;
        Ok(self.analyze_columns(nodal))
    }

    /// Project per-wavenumber profiles onto the vertical basis (value traces,
    /// or derivative traces with `deriv`): c[m][k] = sum_q w_q rows[m][q] tab[k][q].
    pub fn project_rows(&self, rows: &Array2<Complex64>, deriv: bool) -> Result<Array2<Complex64>> {
        let ny = self.nx / 2;
        let nz = self.z.len();
        if rows.dim() != (ny + 1, nz) {
            return Err(Error::Field(format!(
                "profile shape {:?} does not match {} wavenumbers x {} nodes",
                rows.dim(),
                ny + 1,
                nz
            )));
        }
        let mut coeffs = Array2::zeros((ny + 1, self.kmax));
        for m in 0..=ny {
            let tab = if deriv { &self.dvtab[m] } else { &self.vtab[m] };
            for k in 0..self.kmax {
                let mut acc = Complex64::default();
                for q in 0..nz {
                    acc += rows[[m, q]] * (self.zw[q] * tab[[k, q]]);
                }
                coeffs[[m, k]] = acc;
            }
        }
        Ok(coeffs)
    }

    /// Weight of wavenumber row m in sums over the full spectrum: interior
    /// rows stand for a conjugate pair, the m = 0 and Nyquist rows for themselves.
    pub fn hermitian_weight(&self, m: usize) -> f64 {
        self.row_weight(m)
    }

    /// Vertical profiles of each wavenumber: [m][q] = sum_k c[m][k] tab[k][q],
    /// with value traces or derivative traces.
    pub fn modal_profiles(&self, coeffs: &Array2<Complex64>, deriv: bool) -> Array2<Complex64> {
        let ny = self.nx / 2;
        let nz = self.z.len();
        let mut profiles = Array2::zeros((ny + 1, nz));
        for m in 0..=ny {
            let tab = if deriv { &self.dvtab[m] } else { &self.vtab[m] };
            for k in 0..self.kmax {
                let c = coeffs[[m, k]];
                if c == Complex64::default() {
                    continue;
                }
                for q in 0..nz {
                    profiles[[m, q]] += c * tab[[k, q]];
                }
            }
        }
        profiles
    }

    /// Horizontal synthesis of per-wavenumber complex profiles into real
    /// nodal values, using the conjugate-symmetric extension.
    pub fn profiles_to_nodal(&self, profiles: &Array2<Complex64>) -> Result<Array2<f64>> {
        let ny = self.nx / 2;
        let nz = self.z.len();
        if profiles.dim() != (ny + 1, nz) {
            return Err(Error::Field(format!(
                "profile shape {:?} does not match {} wavenumbers x {} nodes",
                profiles.dim(),
                ny + 1,
                nz
            )));
        }
        let mut nodal = Array2::zeros((self.nx, nz));
        let mut buf = vec![Complex64::default(); self.nx];
        for q in 0..nz {
            buf[0] = Complex64::new(profiles[[0, q]].re, 0.0);
            for m in 1..ny {
                buf[m] = profiles[[m, q]];
                buf[self.nx - m] = profiles[[m, q]].conj();
            }
            buf[ny] = Complex64::new(profiles[[ny, q]].re, 0.0);
            self.ifft.process(&mut buf);
            for i in 0..self.nx {
                nodal[[i, q]] = buf[i].re;
            }
        }
        Ok(nodal)
    }

    /// Synthesize nodal values from modal coefficients.
    pub fn synthesize(&self, coeffs: &Array2<Complex64>) -> Result<Array2<f64>> {
        self.check_modal_shape(coeffs)?;
        self.check_hermitian(coeffs)?;
        let profiles = self.modal_profiles(coeffs, false);
        self.profiles_to_nodal(&profiles)
    }

    /// A real field requires real m = 0 and Nyquist coefficient rows.
    fn check_hermitian(&self, coeffs: &Array2<Complex64>) -> Result<()> {
        let ny = self.nx / 2;
        let scale = coeffs
            .iter()
            .fold(0.0f64, |acc, c| acc.max(c.norm_sqr()))
            .sqrt()
            .max(1e-300);
        for k in 0..self.kmax {
            for m in [0, ny] {
                if coeffs[[m, k]].im.abs() > 1e-12 * scale {
                    return Err(Error::Field(format!(
                        "wavenumber {m} must carry a real coefficient for a real \
                         field, got imaginary part {:.3e}",
                        coeffs[[m, k]].im
                    )));
                }
            }
        }
        Ok(())
    }

    /// Compute the modal representation (keeps the nodal one alongside).
    pub fn to_modal(&self, field: &SpectralField) -> Result<SpectralField> {
        let nodal = field.require_nodal()?;
        let coeffs = self.project_nodal(nodal)?;
        Ok(SpectralField {
            modal: Some(coeffs),
            nodal: Some(nodal.clone()),
        })
    }

    /// Compute the nodal representation (keeps the modal one alongside).
    pub fn to_nodal(&self, field: &SpectralField) -> Result<SpectralField> {
        let coeffs = field.require_modal()?;
        self.check_modal_shape(coeffs)?;
        let nodal = self.synthesize(coeffs)?;
        Ok(SpectralField {
            modal: Some(coeffs.clone()),
            nodal: Some(nodal),
        })
    }

    /// Nodal gradient (f_x, f_z): the horizontal derivative multiplies each
    /// wavenumber by i kappa_m, the vertical one uses the stored v' traces,
    /// so interface jumps are never sampled.
    pub fn gradient_nodal(&self, field: &SpectralField) -> Result<(Array2<f64>, Array2<f64>)> {
        let coeffs = field.require_modal()?;
        self.check_modal_shape(coeffs)?;
        let ny = self.nx / 2;
        let mut cx = coeffs.clone();
        for m in 0..=ny {
            let ik = Complex64::new(0.0, self.kappa(m));
            for k in 0..self.kmax {
                cx[[m, k]] *= ik;
            }
        }
        // i kappa turns the real mean row imaginary; the Nyquist derivative
        // pairs +m and -m into a pure sine, which the half-spectrum cannot
        // carry, and the dealiased band never reaches it anyway
        for k in 0..self.kmax {
            cx[[ny, k]] = Complex64::default();
        }
        let fx = self.profiles_to_nodal(&self.modal_profiles(&cx, false))?;
        let fz = self.profiles_to_nodal(&self.modal_profiles(coeffs, true))?;
        Ok((fx, fz))
    }

    /// Zero every wavenumber above the 2/3 cut (the quadratic-term rule).
    pub fn dealias(&self, field: &SpectralField) -> Result<SpectralField> {
        let coeffs = field.require_modal()?;
        self.check_modal_shape(coeffs)?;
        let mut out = coeffs.clone();
        let limit = self.dealias_limit();
        for m in (limit + 1)..self.num_modes() {
            for k in 0..self.kmax {
                out[[m, k]] = Complex64::default();
            }
        }
        Ok(SpectralField {
            modal: Some(out),
            nodal: None,
        })
    }

    /// Hermitian multiplicity of the stored row m: the mean and Nyquist rows
    /// represent themselves, every other row also stands for its conjugate.
    fn row_weight(&self, m: usize) -> f64 {
        if m == 0 || m == self.nx / 2 {
            1.0
        } else {
            2.0
        }
    }

    /// All norms of the field. L2, V, bL2 (for constant porosity) and the W
    /// blocks use modal algebra, exact in the basis; L4 and Linf are
    /// grid-sampled surrogates (quadrature of the fourth power, max over
    /// nodes) suited to monotonicity monitoring.
    pub fn norms(&self, field: &SpectralField) -> Result<Norms> {
        let coeffs = match field.modal() {
            Some(c) => c.clone(),
            None => self.project_nodal(field.require_nodal()?)?,
        };
        self.check_modal_shape(&coeffs)?;
        let nodal = match field.nodal() {
            Some(f) => f.clone(),
            None => self.synthesize(&coeffs)?,
        };

        let width = self.stack.width();
        let ny = self.nx / 2;
        let nz = self.z.len();

        let mut l2_sq = 0.0;
        let mut v_sq = 0.0;
        let mut hx = 0.0;
        let mut hz = 0.0;
        for m in 0..=ny {
            let wt = self.row_weight(m);
            let kap = self.kappa(m);
            let basis = &self.bases[m];
            let mut s2 = 0.0;
            let mut s2_lam = 0.0;
            for k in 0..self.kmax {
                let a = coeffs[[m, k]].norm_sqr();
                s2 += a;
                s2_lam += basis.eigenvalue(k) * a;
            }
            l2_sq += wt * s2;
            v_sq += wt * s2_lam;

            let gz = quadratic_form(&self.gz[m], &coeffs, m);
            let gbz = quadratic_form(&self.gbz[m], &coeffs, m);
            // |d_x phi|_H1^2 = k^2 |phi|^2 + k^4 |phi|^2 + k^2 |d_z phi|^2
            hx += wt * (kap * kap * s2 + kap.powi(4) * s2 + kap * kap * gz);
            // |bD d_z phi|_H1^2: value, horizontal derivative, and the
            // vertical derivative d_z(bD d_z v_k) = bD k^2 v_k - lambda_k v_k
            let mut third = 0.0;
            for q in 0..nz {
                let mut g = Complex64::default();
                for k in 0..self.kmax {
                    let factor = self.bd_node[q] * kap * kap - basis.eigenvalue(k);
                    g += coeffs[[m, k]] * (factor * self.vtab[m][[k, q]]);
                }
                third += self.zw[q] * g.norm_sqr();
            }
            hz += wt * (gbz + kap * kap * gbz + third);
        }
        let l2 = (width * l2_sq).sqrt();
        let v = (width * v_sq).sqrt();
        let w = (width * (v_sq + hx + hz)).sqrt();

        // bL2: exact modal identity when b is constant, quadrature otherwise
        let bl2 = if self.stack.constant_porosity() {
            (self.stack.material(0).porosity * width * l2_sq).sqrt()
        } else {
            let mut acc = 0.0;
            for i in 0..self.nx {
                for q in 0..nz {
                    let f = nodal[[i, q]];
                    acc += self.zw[q] * self.b_node[q] * f * f;
                }
            }
            (acc * width / self.nx as f64).sqrt()
        };

        let mut l4_acc = 0.0;
        let mut linf = 0.0f64;
        for i in 0..self.nx {
            for q in 0..nz {
                let f = nodal[[i, q]];
                l4_acc += self.zw[q] * f.powi(4);
                linf = linf.max(f.abs());
            }
        }
        let l4 = (l4_acc * width / self.nx as f64).powf(0.25);

        Ok(Norms {
            l2,
            v,
            l4,
            linf,
            w,
            bl2,
        })
    }

    /// Quadrature of a nodal function over the strip.
    pub fn integrate_nodal(&self, nodal: &Array2<f64>) -> Result<f64> {
        self.check_nodal_shape(nodal)?;
        let mut acc = 0.0;
        for i in 0..self.nx {
            for q in 0..self.z.len() {
                acc += self.zw[q] * nodal[[i, q]];
            }
        }
        Ok(acc * self.stack.width() / self.nx as f64)
    }
}

/// Real part of c_m^H G c_m for a real symmetric matrix G.
fn quadratic_form(g: &Array2<f64>, coeffs: &Array2<Complex64>, m: usize) -> f64 {
    let k = g.nrows();
    let mut acc = 0.0;
    for a in 0..k {
        let ca = coeffs[[m, a]];
        for b in 0..k {
            let cb = coeffs[[m, b]];
            acc += g[[a, b]] * (ca.re * cb.re + ca.im * cb.im);
        }
    }
    acc
}

/// Check a mapped Gauss rule against centered, scaled monomials: an n-point
/// rule must integrate degrees up to 2n-1 exactly.
fn validate_rule(rule: &QuadRule, z_bot: f64, z_top: f64) -> Result<()> {
    let n = rule.len();
    let mid = 0.5 * (z_bot + z_top);
    let half = 0.5 * (z_top - z_bot);
    for d in 0..2 * n {
        let num: f64 = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&z, &w)| w * ((z - mid) / half).powi(d as i32))
            .sum();
        let exact = if d % 2 == 1 {
            0.0
        } else {
            2.0 * half / (d as f64 + 1.0)
        };
        if (num - exact).abs() > 1e-12 * (z_top - z_bot).max(1.0) {
            return Err(Error::Quadrature(format!(
                "{n}-point rule on [{z_bot}, {z_top}] misses degree {d}: \
                 {num} vs {exact}"
            )));
        }
    }
    Ok(())
}

/// A scalar field in modal and/or nodal representation.
///
/// Modal: complex coefficients [m][k] for m = 0..nx/2 (conjugate symmetry
/// implied). Nodal: real values [x_i][z_q]. Either side may be absent until
/// a transform fills it in.
#[derive(Debug, Clone)]
pub struct SpectralField {
    modal: Option<Array2<Complex64>>,
    nodal: Option<Array2<f64>>,
}

impl SpectralField {
    pub fn from_nodal(grid: &Grid, values: Array2<f64>) -> Result<Self> {
        grid.check_nodal_shape(&values)?;
        Ok(SpectralField {
            modal: None,
            nodal: Some(values),
        })
    }

    pub fn from_modal(grid: &Grid, coeffs: Array2<Complex64>) -> Result<Self> {
        grid.check_modal_shape(&coeffs)?;
        Ok(SpectralField {
            modal: Some(coeffs),
            nodal: None,
        })
    }

    /// Both representations at once; the caller guarantees they describe the
    /// same field.
    pub(crate) fn from_parts(coeffs: Array2<Complex64>, nodal: Array2<f64>) -> Self {
        SpectralField {
            modal: Some(coeffs),
            nodal: Some(nodal),
        }
    }

    /// Field that is zero in both representations.
    pub fn zeros(grid: &Grid) -> Self {
        SpectralField {
            modal: Some(Array2::zeros((grid.num_modes(), grid.kmax()))),
            nodal: Some(Array2::zeros((grid.nx(), grid.z().len()))),
        }
    }

    pub fn modal(&self) -> Option<&Array2<Complex64>> {
        self.modal.as_ref()
    }

    pub fn nodal(&self) -> Option<&Array2<f64>> {
        self.nodal.as_ref()
    }

    pub fn require_modal(&self) -> Result<&Array2<Complex64>> {
        self.modal
            .as_ref()
            .ok_or_else(|| Error::Field("modal representation not computed".into()))
    }

    pub fn require_nodal(&self) -> Result<&Array2<f64>> {
        self.nodal
            .as_ref()
            .ok_or_else(|| Error::Field("nodal representation not computed".into()))
    }
}

/// The norm set of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    /// Plain L2 norm over the strip.
    pub l2: f64,
    /// Energy norm |sqrt(bD) grad phi|.
    pub v: f64,
    /// Grid-sampled L4 norm.
    pub l4: f64,
    /// Max over grid nodes.
    pub linf: f64,
    /// Piecewise-H2 norm: V plus the H1 norms of d_x phi and bD d_z phi.
    pub w: f64,
    /// Porosity-weighted L2 norm sqrt(int b phi^2).
    pub bl2: f64,
}
