//! Independent finite-element reference for the vertical eigenproblem.
//!
//! Linear elements on an interface-aligned mesh turn the Sturm-Liouville
//! problem into a tridiagonal generalized eigenproblem A x = lambda B x with
//! a consistent mass matrix. Eigenvalues are found by bisection on the
//! inertia of A - lambda B (its LDL^T pivot signs), which is immune to
//! clustering and needs no eigenvector machinery. Convergence is O(h^2), so
//! two rounds of Richardson extrapolation over meshes (n, 2n, 4n) expose
//! both an O(h^6)-accurate value and the observed convergence order.
//!
//! This path shares no code with the transfer-matrix solver: it exists to
//! cross-check it.

use crate::domain::LayerStack;
use crate::error::{Error, Result};

/// Symmetric tridiagonal matrix: diagonal `d`, subdiagonal `e` (len n-1).
struct Tridiag {
    d: Vec<f64>,
    e: Vec<f64>,
}

/// Assemble stiffness-plus-kappa^2-mass (both weighted by p = bD) and the
/// plain consistent mass matrix on the interior nodes of the given mesh.
fn assemble(stack: &LayerStack, kappa: f64, nodes: &[f64]) -> Result<(Tridiag, Tridiag)> {
    let n_nodes = nodes.len();
    let mut a_d = vec![0.0; n_nodes];
    let mut a_e = vec![0.0; n_nodes - 1];
    let mut b_d = vec![0.0; n_nodes];
    let mut b_e = vec![0.0; n_nodes - 1];
    for e in 0..n_nodes - 1 {
        let h = nodes[e + 1] - nodes[e];
        let mid = 0.5 * (nodes[e] + nodes[e + 1]);
        let (_, material) = stack.material_at(mid)?;
        let p = material.bd();
        let stiff = p / h;
        let pmass = kappa * kappa * p * h / 6.0;
        let mass = h / 6.0;
        a_d[e] += stiff + 2.0 * pmass;
        a_d[e + 1] += stiff + 2.0 * pmass;
        a_e[e] += -stiff + pmass;
        b_d[e] += 2.0 * mass;
        b_d[e + 1] += 2.0 * mass;
        b_e[e] += mass;
    }
    // homogeneous Dirichlet walls: keep interior nodes only
    let a = Tridiag {
        d: a_d[1..n_nodes - 1].to_vec(),
        e: a_e[1..n_nodes - 2].to_vec(),
    };
    let b = Tridiag {
        d: b_d[1..n_nodes - 1].to_vec(),
        e: b_e[1..n_nodes - 2].to_vec(),
    };
    Ok((a, b))
}

/// Number of eigenvalues of (A, B) strictly below x: negative pivots of the
/// LDL^T factorization of A - x B (Sylvester inertia).
fn count_below(a: &Tridiag, b: &Tridiag, x: f64) -> usize {
    let n = a.d.len();
    let mut count = 0;
    let mut prev = 0.0f64;
    for i in 0..n {
        let mut d = a.d[i] - x * b.d[i];
        if i > 0 {
            let off = a.e[i - 1] - x * b.e[i - 1];
            d -= off * off / prev;
        }
        if d == 0.0 {
            d = -1e-300; // graze: nudge x into the "at or below" convention
        }
        if d < 0.0 {
            count += 1;
        }
        prev = d;
    }
    count
}

fn eigs_of_mesh(stack: &LayerStack, kappa: f64, kmax: usize, nodes: &[f64]) -> Result<Vec<f64>> {
    if nodes.len() < kmax + 2 {
        return Err(Error::EigenSolve(format!(
            "mesh with {} nodes cannot resolve {kmax} eigenvalues",
            nodes.len()
        )));
    }
    let (a, b) = assemble(stack, kappa, nodes)?;
    // generalized Gershgorin bound; B is strictly diagonally dominant
    let n = a.d.len();
    let mut hi = 0.0f64;
    for i in 0..n {
        let mut num = a.d[i];
        let mut den = b.d[i];
        if i > 0 {
            num += a.e[i - 1].abs();
            den -= b.e[i - 1].abs();
        }
        if i + 1 < n {
            num += a.e[i].abs();
            den -= b.e[i].abs();
        }
        hi = hi.max(num / den);
    }
    hi *= 1.0 + 1e-12;
    let mut out = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let (mut lo, mut up) = (0.0f64, hi);
        for _ in 0..120 {
            let mid = 0.5 * (lo + up);
            if count_below(&a, &b, mid) >= k {
                up = mid;
            } else {
                lo = mid;
            }
            if up - lo <= 1e-14 * up.abs().max(1.0) {
                break;
            }
        }
        out.push(0.5 * (lo + up));
    }
    Ok(out)
}

/// Interface-aligned mesh with `elems_per_layer` uniform elements per layer,
/// nodes ascending from -H to 0.
fn layered_mesh(stack: &LayerStack, elems_per_layer: usize) -> Vec<f64> {
    let l = stack.num_layers();
    let mut nodes = Vec::with_capacity(l * elems_per_layer + 1);
    for j in (0..l).rev() {
        let (z_top, z_bot) = stack.layer_span(j);
        for i in 0..elems_per_layer {
            nodes.push(z_bot + (z_top - z_bot) * i as f64 / elems_per_layer as f64);
        }
    }
    nodes.push(0.0);
    nodes
}

/// First `kmax` eigenvalues on a single interface-aligned mesh with
/// `elems_per_layer` linear elements per layer. O(h^2) accurate.
pub fn fem_oracle_eigs(
    stack: &LayerStack,
    kappa: f64,
    kmax: usize,
    elems_per_layer: usize,
) -> Result<Vec<f64>> {
    if elems_per_layer == 0 {
        return Err(Error::EigenSolve("need at least one element per layer".into()));
    }
    eigs_of_mesh(stack, kappa, kmax, &layered_mesh(stack, elems_per_layer))
}

/// Richardson-extrapolated references with the mesh-convergence order
/// observed between the three underlying meshes.
pub struct FemReference {
    /// double-extrapolated eigenvalues (h^2 and h^4 errors eliminated)
    pub lambdas: Vec<f64>,
    /// observed order per eigenvalue, log2((l1-l2)/(l2-l3)); 2.0 for P1
    pub orders: Vec<f64>,
}

/// Run meshes with (n, 2n, 4n) elements per layer and extrapolate.
pub fn fem_oracle_richardson(
    stack: &LayerStack,
    kappa: f64,
    kmax: usize,
    base_elems_per_layer: usize,
) -> Result<FemReference> {
    let l1 = fem_oracle_eigs(stack, kappa, kmax, base_elems_per_layer)?;
    let l2 = fem_oracle_eigs(stack, kappa, kmax, 2 * base_elems_per_layer)?;
    let l3 = fem_oracle_eigs(stack, kappa, kmax, 4 * base_elems_per_layer)?;
    let mut lambdas = Vec::with_capacity(kmax);
    let mut orders = Vec::with_capacity(kmax);
    for k in 0..kmax {
        let r12 = (4.0 * l2[k] - l1[k]) / 3.0;
        let r23 = (4.0 * l3[k] - l2[k]) / 3.0;
        lambdas.push((16.0 * r23 - r12) / 15.0);
        orders.push(((l1[k] - l2[k]) / (l2[k] - l3[k])).log2());
    }
    Ok(FemReference { lambdas, orders })
}
