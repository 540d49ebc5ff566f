//! Per-mode vertical elliptic solves on the layer stack.
//!
//! For one horizontal wavenumber kappa this solves the weak problem
//!
//! ```text
//! int coeff (P' q' + kappa^2 P q) dz = int (g0 q + g1 q') dz
//! ```
//!
//! with coeff piecewise constant per layer, by Lagrange finite elements of
//! order 1 to 3 on an interface-aligned mesh. Natural (Neumann) or
//! homogeneous Dirichlet walls. At kappa = 0 the Neumann problem is singular
//! up to constants: the right side must be compatible (int g0 = 0), one node
//! is pinned for the solve, and the returned solution is shifted to zero
//! mean. The assembled matrix is symmetric positive definite and banded with
//! half-bandwidth equal to the element order, so a banded Cholesky
//! factorization is computed once and reused across right-hand sides.

use crate::domain::LayerStack;
use crate::error::{Error, Result};
use crate::quad::QuadRule;

/// Wall condition applied at both ends of the vertical interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EllipticBc {
    /// natural condition coeff P' = g1 at the walls
    Neumann,
    /// homogeneous Dirichlet: P = 0 at both walls
    Dirichlet,
}

/// Lagrange shape function i of the given order on [0, 1] with equispaced
/// nodes: value and derivative at xi.
fn lagrange_shape(order: usize, i: usize, xi: f64) -> (f64, f64) {
    let node = |j: usize| j as f64 / order as f64;
    let xi_i = node(i);
    let mut value = 1.0;
    for j in 0..=order {
        if j != i {
            value *= (xi - node(j)) / (xi_i - node(j));
        }
    }
    let mut deriv = 0.0;
    for j in 0..=order {
        if j == i {
            continue;
        }
        let mut term = 1.0 / (xi_i - node(j));
        for k in 0..=order {
            if k != i && k != j {
                term *= (xi - node(k)) / (xi_i - node(k));
            }
        }
        deriv += term;
    }
    (value, deriv)
}

/// Symmetric banded matrix in lower storage: `band[r][i] = A[i + r][i]`.
struct BandedCholesky {
    n: usize,
    bw: usize,
    band: Vec<Vec<f64>>,
}

impl BandedCholesky {
    /// In-place Cholesky of the assembled band. Fails on loss of positive
    /// definiteness.
    fn factor(mut band: Vec<Vec<f64>>, n: usize) -> Result<Self> {
        let bw = band.len() - 1;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut d = band[0][i];
            for k in lo..i {
                d -= band[i - k][k] * band[i - k][k];
            }
            if !d.is_finite() || d <= 0.0 {
                return Err(Error::Elliptic(format!(
                    "matrix not positive definite at row {i} (pivot {d})"
                )));
            }
            let d = d.sqrt();
            band[0][i] = d;
            for j in i + 1..(i + bw + 1).min(n) {
                let mut s = band[j - i][i];
                let lo_j = j.saturating_sub(bw);
                for k in lo_j.max(lo)..i {
                    s -= band[j - k][k] * band[i - k][k];
                }
                band[j - i][i] = s / d;
            }
        }
        Ok(BandedCholesky { n, bw, band })
    }

    #[allow(clippy::needless_range_loop)] // k and j also index into the band
    fn solve(&self, rhs: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.band[i - k][k] * rhs[k];
            }
            rhs[i] = s / self.band[0][i];
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for j in i + 1..(i + bw + 1).min(n) {
                s -= self.band[j - i][i] * rhs[j];
            }
            rhs[i] = s / self.band[0][i];
        }
    }
}

/// Factored per-mode solver; build once per (stack, kappa, bc), solve many
/// right-hand sides.
pub struct ModeEllipticSolver {
    order: usize,
    kappa: f64,
    bc: EllipticBc,
    /// global node coordinates, ascending from -H to 0
    nodes: Vec<f64>,
    /// element boundary coordinates (nodes with index multiple of order)
    boundaries: Vec<f64>,
    coeff_per_elem: Vec<f64>,
    qp: Vec<f64>,
    qw: Vec<f64>,
    /// shape value and reference derivative per (quad point, local node)
    shape: Vec<Vec<(f64, f64)>>,
    chol: BandedCholesky,
    /// nodes whose rows were replaced by identity (walls or the singular pin)
    pinned: Vec<usize>,
    /// shift the solution to zero mean after solving (singular Neumann only)
    demean: bool,
    depth: f64,
}

impl ModeEllipticSolver {
    pub fn new(
        stack: &LayerStack,
        coeff_per_layer: &[f64],
        kappa: f64,
        elems_per_layer: usize,
        order: usize,
        bc: EllipticBc,
    ) -> Result<Self> {
        if !(1..=3).contains(&order) {
            return Err(Error::Elliptic(format!("element order {order} outside 1..=3")));
        }
        if elems_per_layer == 0 {
            return Err(Error::Elliptic("need at least one element per layer".into()));
        }
        if coeff_per_layer.len() != stack.num_layers() {
            return Err(Error::Elliptic(format!(
                "{} coefficients for {} layers",
                coeff_per_layer.len(),
                stack.num_layers()
            )));
        }
        if coeff_per_layer.iter().any(|&c| !c.is_finite() || c <= 0.0) {
            return Err(Error::Elliptic("coefficients must be positive and finite".into()));
        }

        let l = stack.num_layers();
        let n_elems = l * elems_per_layer;
        let n_nodes = n_elems * order + 1;
        let mut nodes = Vec::with_capacity(n_nodes);
        let mut coeff_per_elem = Vec::with_capacity(n_elems);
        // bottom-up: layer indices descend (deepest layer first)
        for j in (0..l).rev() {
            let (z_top, z_bot) = stack.layer_span(j);
            let he = (z_top - z_bot) / elems_per_layer as f64;
            for e in 0..elems_per_layer {
                coeff_per_elem.push(coeff_per_layer[j]);
                let base = z_bot + he * e as f64;
                for i in 0..order {
                    nodes.push(base + he * i as f64 / order as f64);
                }
            }
        }
        nodes.push(0.0);
        let boundaries: Vec<f64> = (0..=n_elems).map(|e| nodes[e * order]).collect();

        let rule = QuadRule::mapped(order + 2, 0.0, 1.0);
        let qp = rule.nodes.clone();
        let qw = rule.weights.clone();
        let shape: Vec<Vec<(f64, f64)>> = qp
            .iter()
            .map(|&xi| (0..=order).map(|i| lagrange_shape(order, i, xi)).collect())
            .collect();

        // assemble the banded stiffness + kappa^2 mass, both weighted by coeff
        let bw = order;
        let mut band = vec![vec![0.0; n_nodes]; bw + 1];
        for e in 0..n_elems {
            let he = boundaries[e + 1] - boundaries[e];
            let c = coeff_per_elem[e];
            let base = e * order;
            for a in 0..=order {
                for b in a..=order {
                    let mut acc = 0.0;
                    for (q, sh) in shape.iter().enumerate() {
                        let (na, da) = sh[a];
                        let (nb, db) = sh[b];
                        acc += qw[q] * (da * db / he + kappa * kappa * na * nb * he);
                    }
                    band[b - a][base + a] += c * acc;
                }
            }
        }

        let singular = bc == EllipticBc::Neumann && kappa == 0.0;
        let mut pinned = Vec::new();
        match bc {
            EllipticBc::Dirichlet => {
                pinned.push(0);
                pinned.push(n_nodes - 1);
            }
            EllipticBc::Neumann => {
                if singular {
                    pinned.push(0);
                }
            }
        }
        for &t in &pinned {
            band[0][t] = 1.0;
            for r in 1..=bw {
                if t + r < n_nodes {
                    band[r][t] = 0.0;
                }
                if t >= r {
                    band[r][t - r] = 0.0;
                }
            }
        }

        let chol = BandedCholesky::factor(band, n_nodes)?;
        Ok(ModeEllipticSolver {
            order,
            kappa,
            bc,
            nodes,
            boundaries,
            coeff_per_elem,
            qp,
            qw,
            shape,
            chol,
            pinned,
            demean: singular,
            depth: stack.depth(),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Depths of the assembly quadrature points, element-major; the sample
    /// order expected by `solve_sampled`.
    pub fn quadrature_points(&self) -> Vec<f64> {
        let mut pts = Vec::with_capacity(self.coeff_per_elem.len() * self.qp.len());
        for e in 0..self.coeff_per_elem.len() {
            let (zb, zt) = (self.boundaries[e], self.boundaries[e + 1]);
            for &xi in &self.qp {
                pts.push(zb + (zt - zb) * xi);
            }
        }
        pts
    }

    /// Weights paired with `quadrature_points()`: integrating sampled values
    /// against them sums element-local Gauss rules over the mesh.
    pub fn quadrature_weights(&self) -> Vec<f64> {
        let mut wts = Vec::with_capacity(self.coeff_per_elem.len() * self.qw.len());
        for e in 0..self.coeff_per_elem.len() {
            let he = self.boundaries[e + 1] - self.boundaries[e];
            for &w in &self.qw {
                wts.push(w * he);
            }
        }
        wts
    }

    /// Solve for the nodal coefficients given the volumetric source g0 and
    /// the flux-type source g1 as closures of depth.
    pub fn solve(
        &self,
        g0: impl Fn(f64) -> f64,
        g1: impl Fn(f64) -> f64,
    ) -> Result<Vec<f64>> {
        let pts = self.quadrature_points();
        let s0: Vec<f64> = pts.iter().map(|&z| g0(z)).collect();
        let s1: Vec<f64> = pts.iter().map(|&z| g1(z)).collect();
        self.solve_sampled(&s0, &s1)
    }

    /// As `solve`, with the sources pre-sampled at `quadrature_points()`.
    pub fn solve_sampled(&self, g0: &[f64], g1: &[f64]) -> Result<Vec<f64>> {
        let order = self.order;
        let n_nodes = self.nodes.len();
        let nq = self.qp.len();
        if g0.len() != self.coeff_per_elem.len() * nq || g1.len() != g0.len() {
            return Err(Error::Elliptic(format!(
                "expected {} source samples, got {} / {}",
                self.coeff_per_elem.len() * nq,
                g0.len(),
                g1.len()
            )));
        }
        let mut rhs = vec![0.0; n_nodes];
        let mut g0_total = 0.0;
        let mut g0_abs = 0.0;
        for e in 0..self.coeff_per_elem.len() {
            let (zb, zt) = (self.boundaries[e], self.boundaries[e + 1]);
            let he = zt - zb;
            let base = e * order;
            for (q, sh) in self.shape.iter().enumerate() {
                let (f0, f1) = (g0[e * nq + q], g1[e * nq + q]);
                g0_total += self.qw[q] * he * f0;
                g0_abs += self.qw[q] * he * f0.abs();
                for (a, &(na, da)) in sh.iter().enumerate() {
                    rhs[base + a] += self.qw[q] * (f0 * na * he + f1 * da);
                }
            }
        }
        if self.demean {
            // the singular problem only admits solutions for mean-free g0
            let scale = g0_abs.max(1.0);
            if g0_total.abs() > 1e-10 * scale {
                return Err(Error::IncompatibleRhs(g0_total));
            }
        }
        for &t in &self.pinned {
            rhs[t] = 0.0;
        }
        self.chol.solve(&mut rhs);
        if self.demean {
            let mean = self.integral(&rhs) / self.depth;
            for v in &mut rhs {
                *v -= mean;
            }
        }
        Ok(rhs)
    }

    /// Integral of the finite-element function over the interval.
    pub fn integral(&self, coeffs: &[f64]) -> f64 {
        let order = self.order;
        let mut acc = 0.0;
        for e in 0..self.coeff_per_elem.len() {
            let he = self.boundaries[e + 1] - self.boundaries[e];
            let base = e * order;
            for (q, sh) in self.shape.iter().enumerate() {
                let mut v = 0.0;
                for (a, &(na, _)) in sh.iter().enumerate() {
                    v += coeffs[base + a] * na;
                }
                acc += self.qw[q] * he * v;
            }
        }
        acc
    }

    /// Value and z-derivative at depth z. Element boundaries resolve to the
    /// deeper element, matching the layer ownership convention.
    pub fn eval(&self, coeffs: &[f64], z: f64) -> (f64, f64) {
        let n_elems = self.coeff_per_elem.len();
        let e = self.boundaries[1..n_elems]
            .partition_point(|&t| t < z)
            .min(n_elems - 1);
        let (zb, zt) = (self.boundaries[e], self.boundaries[e + 1]);
        let he = zt - zb;
        let xi = ((z - zb) / he).clamp(0.0, 1.0);
        let base = e * self.order;
        let mut value = 0.0;
        let mut deriv = 0.0;
        for i in 0..=self.order {
            let (n, d) = lagrange_shape(self.order, i, xi);
            value += coeffs[base + i] * n;
            deriv += coeffs[base + i] * d / he;
        }
        (value, deriv)
    }

    /// Wall condition this solver was assembled with.
    pub fn bc(&self) -> EllipticBc {
        self.bc
    }
}
