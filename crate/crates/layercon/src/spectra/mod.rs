//! Vertical eigenproblem of the layered diffusion operator.
//!
//! For a horizontal wavenumber kappa the vertical factor v(z) of an
//! eigenfunction of -div(bD grad) solves
//!
//! ```text
//! -(bD v')' + bD kappa^2 v = lambda v,   v(0) = v(-H) = 0,
//! ```
//!
//! with v and bD v' continuous across layer interfaces. Inside layer j the
//! coefficient p = b_j D_j is constant, so v is trigonometric, affine or
//! hyperbolic depending on the sign of s_j = kappa^2 - lambda / p_j.
//!
//! Eigenvalues are located by bisection on the Sturm oscillation count
//! (number of interior zeros of the shooting solution, which equals the
//! number of eigenvalues strictly below the trial lambda), then polished by
//! a safeguarded secant/bisection hybrid on the scaled terminal value F.
//! The transfer sweep renormalizes the state after every layer so evanescent
//! layers cannot overflow; hyperbolic traversals factor out e^{gamma h}
//! explicitly. Eigenfunctions are assembled by shooting from both walls and
//! matching at the most oscillatory layer, which keeps the evanescent tails
//! accurate; each layer stores a closed-form solution that is evaluated
//! through overflow-free expressions.

pub mod elliptic;
pub mod fem;

use crate::domain::LayerStack;
use crate::error::{Error, Result};

/// Shooting state: v, w = bD v', and the accumulated natural log of the
/// factor that has been scaled out (true values are e^{log_scale} larger).
#[derive(Debug, Clone, Copy)]
pub struct TransferState {
    pub v: f64,
    pub w: f64,
    pub log_scale: f64,
}

impl TransferState {
    /// Canonical start state at the bottom wall: v = 0, bD v' = 1.
    pub fn start() -> Self {
        TransferState { v: 0.0, w: 1.0, log_scale: 0.0 }
    }
}

/// Raw transfer of (v, w) across a distance h (signed) in a medium with
/// coefficient p and regime parameter s = kappa^2 - lambda/p. Returns the
/// transported pair and the log of the factor left out (hyperbolic layers
/// are scaled by e^{gamma |h|} to stay finite for any thickness).
fn layer_step(v: f64, w: f64, p: f64, h: f64, s: f64) -> (f64, f64, f64) {
    if s < 0.0 {
        let omega = (-s).sqrt();
        let (sn, cs) = (omega * h).sin_cos();
        let v2 = v * cs + w / (p * omega) * sn;
        let w2 = -v * p * omega * sn + w * cs;
        (v2, w2, 0.0)
    } else if s > 0.0 {
        let gamma = s.sqrt();
        let x = gamma * h;
        let ax = x.abs();
        let u = (-2.0 * ax).exp();
        // e^{-|x|} cosh(x) and e^{-|x|} sinh(x)
        let ch = 0.5 * (1.0 + u);
        let sh = 0.5 * x.signum() * (1.0 - u);
        let v2 = v * ch + w / (p * gamma) * sh;
        let w2 = v * p * gamma * sh + w * ch;
        (v2, w2, ax)
    } else {
        (v + w * h / p, w, 0.0)
    }
}

/// Interior zero count of the local solution with entry values (v, w) over
/// an upward traversal of length h > 0.
fn layer_crossings(v: f64, w: f64, p: f64, h: f64, s: f64) -> usize {
    use std::f64::consts::PI;
    if s < 0.0 {
        // Pruefer phase: v = r sin(theta), v'/omega = r cos(theta) advances
        // linearly, theta(zeta) = theta0 + omega zeta; zeros sit at
        // multiples of pi strictly inside the traversal.
        let omega = (-s).sqrt();
        let theta0 = f64::atan2(v, w / (p * omega));
        let theta1 = theta0 + omega * h;
        let n = (theta1 / PI).floor() - (theta0 / PI).floor();
        n.max(0.0) as usize
    } else {
        // convex regimes admit at most one interior zero: a sign change
        let (v2, _, _) = layer_step(v, w, p, h, s);
        usize::from(v * v2 < 0.0)
    }
}

/// Transport the shooting state upward across one full layer, counting the
/// interior zeros passed. The returned state is renormalized so
/// max(|v|, |w|) = 1, with the factor folded into `log_scale`.
pub fn propagate_layer(
    state: TransferState,
    p: f64,
    h: f64,
    kappa: f64,
    lambda: f64,
) -> (TransferState, usize) {
    debug_assert!(h > 0.0 && p > 0.0);
    let s = kappa * kappa - lambda / p;
    let crossings = layer_crossings(state.v, state.w, p, h, s);
    let (v2, w2, dlog) = layer_step(state.v, state.w, p, h, s);
    let m = v2.abs().max(w2.abs());
    debug_assert!(m > 0.0, "transfer state collapsed to zero");
    let next = TransferState {
        v: v2 / m,
        w: w2 / m,
        log_scale: state.log_scale + dlog + m.ln(),
    };
    (next, crossings)
}

/// Full bottom-to-top sweep. Returns the scaled terminal value F = v(0)
/// (whose sign changes exactly at eigenvalues) and the oscillation count N,
/// the number of eigenvalues strictly below `lambda`.
pub fn dispersion_and_count(stack: &LayerStack, kappa: f64, lambda: f64) -> (f64, usize) {
    let mut state = TransferState::start();
    let mut count = 0;
    for j in (0..stack.num_layers()).rev() {
        let (st, c) = propagate_layer(
            state,
            stack.material(j).bd(),
            stack.layer_thickness(j),
            kappa,
            lambda,
        );
        state = st;
        count += c;
    }
    (state.v, count)
}

/// Closed-form solution piece on a single layer.
#[derive(Debug, Clone)]
enum PieceForm {
    /// v = v0 cos(omega zeta) + (dv0/omega) sin(omega zeta), zeta = z - z_bot
    Trig { omega: f64, v0: f64, dv0: f64 },
    /// v = v0 + dv0 zeta
    Affine { v0: f64, dv0: f64 },
    /// two-point form anchored at both edges, stable for any gamma h:
    /// v = [v_bot sinh(gamma (h - zeta)) + v_top sinh(gamma zeta)] / sinh(gamma h)
    Hyper { gamma: f64, v_bot: f64, v_top: f64 },
}

#[derive(Debug, Clone)]
struct Piece {
    z_bot: f64,
    h: f64,
    /// layer diffusion coefficient bD
    p: f64,
    form: PieceForm,
}

impl Piece {
    /// Value and derivative at local coordinate zeta in [0, h].
    fn eval(&self, zeta: f64) -> (f64, f64) {
        match &self.form {
            PieceForm::Trig { omega, v0, dv0 } => {
                let (sn, cs) = (omega * zeta).sin_cos();
                (v0 * cs + dv0 / omega * sn, -v0 * omega * sn + dv0 * cs)
            }
            PieceForm::Affine { v0, dv0 } => (v0 + dv0 * zeta, *dv0),
            PieceForm::Hyper { gamma, v_bot, v_top } => {
                let h = self.h;
                let denom = -(-2.0 * gamma * h).exp_m1(); // 1 - e^{-2 gamma h}
                let e1 = (-gamma * zeta).exp();
                let e2 = (-gamma * (h - zeta)).exp();
                let a1 = e1 * (-(-2.0 * gamma * (h - zeta)).exp_m1()) / denom;
                let a2 = e2 * (-(-2.0 * gamma * zeta).exp_m1()) / denom;
                let b1 = e1 * (1.0 + (-2.0 * gamma * (h - zeta)).exp()) / denom;
                let b2 = e2 * (1.0 + (-2.0 * gamma * zeta).exp()) / denom;
                (
                    v_bot * a1 + v_top * a2,
                    gamma * (-v_bot * b1 + v_top * b2),
                )
            }
        }
    }

    /// Exact integral of v^2 over the layer.
    fn l2(&self) -> f64 {
        let h = self.h;
        match &self.form {
            PieceForm::Trig { omega, v0, dv0 } => {
                let (a, b) = (*v0, dv0 / omega);
                let (s2, c2) = (2.0 * omega * h).sin_cos();
                0.5 * (a * a + b * b) * h
                    + (a * a - b * b) * s2 / (4.0 * omega)
                    + a * b * (1.0 - c2) / (2.0 * omega)
            }
            PieceForm::Affine { v0, dv0 } => {
                v0 * v0 * h + v0 * dv0 * h * h + dv0 * dv0 * h * h * h / 3.0
            }
            PieceForm::Hyper { gamma, v_bot, v_top } => {
                let (j, m) = hyper_l2_weights(*gamma, h);
                (v_bot * v_bot + v_top * v_top) * j + 2.0 * v_bot * v_top * m
            }
        }
    }

    fn scale(&mut self, factor: f64) {
        match &mut self.form {
            PieceForm::Trig { v0, dv0, .. } | PieceForm::Affine { v0, dv0 } => {
                *v0 *= factor;
                *dv0 *= factor;
            }
            PieceForm::Hyper { v_bot, v_top, .. } => {
                *v_bot *= factor;
                *v_top *= factor;
            }
        }
    }
}

/// Quadratic-form weights (J, M) of the two-point hyperbolic piece:
/// int v^2 = (v_bot^2 + v_top^2) J + 2 v_bot v_top M. The u = e^{-2x}
/// expressions never overflow; a Taylor branch covers the near-affine limit.
fn hyper_l2_weights(gamma: f64, h: f64) -> (f64, f64) {
    let x = gamma * h;
    if x < 0.02 {
        let x2 = x * x;
        let j = h * (1.0 / 3.0 - 2.0 * x2 / 45.0 + 2.0 * x2 * x2 / 315.0);
        let m = h * (1.0 / 6.0 - 7.0 * x2 / 180.0 + 31.0 * x2 * x2 / 5040.0);
        (j, m)
    } else {
        let u = (-2.0 * x).exp();
        let d = 1.0 - u;
        let ex = (-x).exp();
        let j = (1.0 + u) / (2.0 * gamma * d) - 2.0 * h * u / (d * d);
        let m = h * ex * (1.0 + u) / (d * d) - ex / (gamma * d);
        (j, m)
    }
}

/// One vertical eigenfunction: eigenvalue plus per-layer closed forms.
#[derive(Debug, Clone)]
pub struct EigenFunction {
    pub lambda: f64,
    /// interface depths (descending), shared layout with the stack
    interfaces: Vec<f64>,
    pieces: Vec<Piece>,
}

impl EigenFunction {
    /// Value and z-derivative at depth z; interior interfaces resolve to the
    /// lower layer (both limits agree up to the matching tolerance).
    pub fn eval(&self, z: f64) -> (f64, f64) {
        let j = self.piece_index(z);
        let piece = &self.pieces[j];
        piece.eval((z - piece.z_bot).clamp(0.0, piece.h))
    }

    /// Diffusive flux coefficient bD of the layer owning z times v'(z).
    pub fn flux(&self, z: f64) -> f64 {
        let j = self.piece_index(z);
        let piece = &self.pieces[j];
        piece.p * piece.eval((z - piece.z_bot).clamp(0.0, piece.h)).1
    }

    fn piece_index(&self, z: f64) -> usize {
        let l = self.pieces.len();
        for j in 0..l {
            if z > self.interfaces[j + 1] {
                return j;
            }
        }
        l - 1
    }

    /// One-sided edge values ((v, v') at bottom, (v, v') at top) of layer j.
    pub fn layer_edges(&self, j: usize) -> ((f64, f64), (f64, f64)) {
        let piece = &self.pieces[j];
        (piece.eval(0.0), piece.eval(piece.h))
    }
}

/// Normalization weight for the eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormWeight {
    /// plain L^2: int v^2 = 1 (the default; the evolution inner product)
    #[default]
    Plain,
    /// porosity-weighted: int b v^2 = 1
    Porosity,
}

/// Eigenbasis of the vertical operator at one horizontal wavenumber.
#[derive(Debug, Clone)]
pub struct VerticalBasis {
    pub kappa: f64,
    eigenvalues: Vec<f64>,
    modes: Vec<EigenFunction>,
}

impl VerticalBasis {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Eigenvalues in ascending order (0-based index: eigenvalue k+1).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, k: usize) -> f64 {
        self.eigenvalues[k]
    }

    pub fn mode(&self, k: usize) -> &EigenFunction {
        &self.modes[k]
    }

    pub fn modes(&self) -> &[EigenFunction] {
        &self.modes
    }
}

/// Compute the first `kmax` eigenpairs at wavenumber `kappa` with plain L^2
/// normalization.
pub fn find_eigenpairs(stack: &LayerStack, kappa: f64, kmax: usize) -> Result<VerticalBasis> {
    find_eigenpairs_weighted(stack, kappa, kmax, NormWeight::Plain)
}

/// As `find_eigenpairs`, with a selectable normalization weight.
pub fn find_eigenpairs_weighted(
    stack: &LayerStack,
    kappa: f64,
    kmax: usize,
    weight: NormWeight,
) -> Result<VerticalBasis> {
    if kmax == 0 {
        return Err(Error::EigenSolve("kmax must be at least 1".into()));
    }
    let h_total = stack.depth();
    let p_max = stack
        .materials()
        .iter()
        .map(|m| m.bd())
        .fold(f64::MIN, f64::max);
    let p_min = stack
        .materials()
        .iter()
        .map(|m| m.bd())
        .fold(f64::MAX, f64::min);
    // min-max comparison bound lambda_k <= p_max (kappa^2 + (k pi / H)^2)
    let mu_top = kappa * kappa + (kmax as f64 * std::f64::consts::PI / h_total).powi(2);
    let mut hi = p_max * mu_top * (1.0 + 1e-9) + p_max;
    let (mut f_hi, mut n_hi) = dispersion_and_count(stack, kappa, hi);
    let mut guard = 0;
    while n_hi < kmax {
        hi *= 2.0;
        let r = dispersion_and_count(stack, kappa, hi);
        f_hi = r.0;
        n_hi = r.1;
        guard += 1;
        if guard > 60 {
            return Err(Error::EigenSolve(format!(
                "could not bracket eigenvalue {kmax} at kappa = {kappa}"
            )));
        }
    }
    let (f_lo, n_lo) = dispersion_and_count(stack, kappa, 0.0);
    debug_assert_eq!(n_lo, 0);

    // characteristic eigenvalue scale, used as the relative-tolerance floor.
    // Refining close to ulp keeps eigenvector mixing small when eigenvalues
    // nearly coincide (the mixing angle scales with the lambda error over
    // the spectral gap).
    let lambda_floor = p_min * (std::f64::consts::PI / h_total).powi(2);
    let rtol = 4e-15;
    let width_ok =
        |a: f64, b: f64| b - a <= rtol * b.abs().max(a.abs()).max(lambda_floor);

    // spectrum slicing: split intervals until each holds one wanted eigenvalue
    let mut lambdas = vec![f64::NAN; kmax];
    let mut work = vec![(0.0, n_lo, f_lo, hi, n_hi, f_hi)];
    while let Some((a, na, fa, b, nb, fb)) = work.pop() {
        if na >= kmax || nb <= na {
            continue;
        }
        if width_ok(a, b) {
            // numerically degenerate cluster: refuse rather than fabricate
            if nb - na > 1 {
                return Err(Error::EigenSolve(format!(
                    "eigenvalues {}..{} numerically degenerate near {} (kappa = {kappa})",
                    na + 1,
                    nb.min(kmax),
                    0.5 * (a + b)
                )));
            }
            lambdas[na] = 0.5 * (a + b);
            continue;
        }
        if nb - na == 1 {
            lambdas[na] = refine_root(stack, kappa, a, fa, b, fb, na, &width_ok)?;
            continue;
        }
        let mid = 0.5 * (a + b);
        let (fm, nm) = dispersion_and_count(stack, kappa, mid);
        work.push((a, na, fa, mid, nm, fm));
        work.push((mid, nm, fm, b, nb, fb));
    }

    for k in 1..kmax {
        if !(lambdas[k] - lambdas[k - 1]).is_finite() || lambdas[k] <= lambdas[k - 1] {
            return Err(Error::EigenSolve(format!(
                "eigenvalues {k} and {} not separated at kappa = {kappa}",
                k + 1
            )));
        }
    }

    let modes: Vec<EigenFunction> = lambdas
        .iter()
        .map(|&lambda| assemble_eigenfunction(stack, kappa, lambda, weight))
        .collect::<Result<_>>()?;

    Ok(VerticalBasis { kappa, eigenvalues: lambdas, modes })
}

/// Polish one isolated eigenvalue: the oscillation count decides which side
/// of the bracket moves (so convergence never depends on F being meaningful),
/// while secant steps on F accelerate when its bracket signs differ.
/// Midpoint steps alternate in, guaranteeing geometric shrinkage.
#[allow(clippy::too_many_arguments)]
fn refine_root(
    stack: &LayerStack,
    kappa: f64,
    mut a: f64,
    mut fa: f64,
    mut b: f64,
    mut fb: f64,
    index0: usize,
    width_ok: &dyn Fn(f64, f64) -> bool,
) -> Result<f64> {
    let k = index0 + 1; // 1-based eigenvalue index
    for iter in 0..200 {
        if width_ok(a, b) {
            return Ok(0.5 * (a + b));
        }
        let width = b - a;
        let mut x = 0.5 * (a + b);
        if iter % 2 == 0 && fa.is_finite() && fb.is_finite() && fa * fb < 0.0 {
            let secant = b - fb * width / (fb - fa);
            if secant.is_finite() {
                x = secant.clamp(a + 0.1 * width, b - 0.1 * width);
            }
        }
        if x <= a || x >= b {
            // bracket has collapsed to adjacent floats
            return Ok(0.5 * (a + b));
        }
        let (fx, nx) = dispersion_and_count(stack, kappa, x);
        if nx >= k {
            b = x;
            fb = fx;
        } else {
            a = x;
            fa = fx;
        }
    }
    Err(Error::EigenSolve(format!(
        "root refinement stalled for eigenvalue {k} at kappa = {kappa}: bracket [{a}, {b}]"
    )))
}

/// Per-layer edge data collected during an assembly sweep. True edge values
/// are e^{sigma} times the stored pair.
#[derive(Debug, Clone, Copy, Default)]
struct LayerEdges {
    v_bot: f64,
    w_bot: f64,
    sig_bot: f64,
    v_top: f64,
    w_top: f64,
    sig_top: f64,
}

/// Build the normalized eigenfunction at a converged eigenvalue by shooting
/// from both walls. The two one-sided solutions are joined at the top edge
/// of the oscillatory layer where they are most nearly parallel; that layer
/// is where the mode has its body, so each sweep only ever crosses
/// evanescent barriers in its locally growing (stable) direction and the
/// exponentially small tails on the far side of a barrier keep full
/// relative accuracy.
fn assemble_eigenfunction(
    stack: &LayerStack,
    kappa: f64,
    lambda: f64,
    weight: NormWeight,
) -> Result<EigenFunction> {
    let l = stack.num_layers();
    let s_of = |j: usize| kappa * kappa - lambda / stack.material(j).bd();

    let mut edges_up = vec![LayerEdges::default(); l];
    let mut edges_dn = vec![LayerEdges::default(); l];

    // full upward sweep from the bottom wall
    let (mut v, mut w, mut sig) = (0.0f64, 1.0f64, 0.0f64);
    for j in (0..l).rev() {
        let p = stack.material(j).bd();
        let h = stack.layer_thickness(j);
        let (v2, w2, dlog) = layer_step(v, w, p, h, s_of(j));
        edges_up[j] = LayerEdges {
            v_bot: v,
            w_bot: w,
            sig_bot: sig,
            v_top: v2,
            w_top: w2,
            sig_top: sig + dlog,
        };
        let m = v2.abs().max(w2.abs());
        if !m.is_finite() || m <= 0.0 {
            return Err(Error::EigenSolve(format!(
                "shooting state degenerated in layer {} at lambda = {lambda}",
                j + 1
            )));
        }
        v = v2 / m;
        w = w2 / m;
        sig += dlog + m.ln();
    }

    // full downward sweep from the top wall
    let (mut v, mut w, mut sig) = (0.0f64, 1.0f64, 0.0f64);
    for (j, edge) in edges_dn.iter_mut().enumerate() {
        let p = stack.material(j).bd();
        let h = stack.layer_thickness(j);
        let (v2, w2, dlog) = layer_step(v, w, p, -h, s_of(j));
        *edge = LayerEdges {
            v_top: v,
            w_top: w,
            sig_top: sig,
            v_bot: v2,
            w_bot: w2,
            sig_bot: sig + dlog,
        };
        let m = v2.abs().max(w2.abs());
        if !m.is_finite() || m <= 0.0 {
            return Err(Error::EigenSolve(format!(
                "shooting state degenerated in layer {} at lambda = {lambda}",
                j + 1
            )));
        }
        v = v2 / m;
        w = w2 / m;
        sig += dlog + m.ln();
    }

    // candidate joins: at the top edge of every oscillatory layer, compare
    // the upward state against the downward state arriving from above (the
    // wall start state itself for the top layer)
    let defect_at = |j: usize| -> f64 {
        let b = edges_up[j];
        let (bv, bw) = (b.v_top, b.w_top);
        let (tv, tw) = if j == 0 {
            (0.0, 1.0)
        } else {
            (edges_dn[j - 1].v_bot, edges_dn[j - 1].w_bot)
        };
        let nb = bv.abs().max(bw.abs());
        let nt = tv.abs().max(tw.abs());
        ((bv * tw - bw * tv) / (nb * nt)).abs()
    };
    let j_star = (0..l)
        .filter(|&j| s_of(j) < 0.0)
        .min_by(|&a, &b| defect_at(a).partial_cmp(&defect_at(b)).unwrap())
        .ok_or_else(|| {
            Error::EigenSolve(format!(
                "no oscillatory layer at lambda = {lambda}, kappa = {kappa}: not an eigenvalue"
            ))
        })?;

    // layers at and below the join come from the upward sweep, layers above
    // from the downward sweep scaled to match at the join interface
    let mut edges = edges_up;
    if j_star > 0 {
        let up = edges[j_star];
        let dn = edges_dn[j_star - 1];
        let use_v = dn.v_bot.abs() >= dn.w_bot.abs();
        let (bu, bd) = if use_v {
            (up.v_top, dn.v_bot)
        } else {
            (up.w_top, dn.w_bot)
        };
        if bu == 0.0 || bd == 0.0 {
            return Err(Error::EigenSolve(format!(
                "degenerate matching state at lambda = {lambda}, kappa = {kappa}"
            )));
        }
        let log_rho = (bu.abs().ln() + up.sig_top) - (bd.abs().ln() + dn.sig_bot);
        let sign_rho = (bu * bd).signum();
        for (edge, dn_edge) in edges.iter_mut().zip(edges_dn).take(j_star) {
            *edge = LayerEdges {
                v_bot: dn_edge.v_bot * sign_rho,
                w_bot: dn_edge.w_bot * sign_rho,
                sig_bot: dn_edge.sig_bot + log_rho,
                v_top: dn_edge.v_top * sign_rho,
                w_top: dn_edge.w_top * sign_rho,
                sig_top: dn_edge.sig_top + log_rho,
            };
        }
    }

    // collapse log scales into plain amplitudes relative to the global peak
    let sig_ref = edges
        .iter()
        .flat_map(|e| [e.sig_bot, e.sig_top])
        .fold(f64::MIN, f64::max);
    let mut pieces = Vec::with_capacity(l);
    for (j, edge) in edges.iter().enumerate() {
        let p = stack.material(j).bd();
        let (z_top, z_bot) = stack.layer_span(j);
        let h = z_top - z_bot;
        let a_bot = (edge.sig_bot - sig_ref).exp();
        let a_top = (edge.sig_top - sig_ref).exp();
        let s = s_of(j);
        let form = if s < 0.0 {
            PieceForm::Trig {
                omega: (-s).sqrt(),
                v0: edge.v_bot * a_bot,
                dv0: edge.w_bot * a_bot / p,
            }
        } else if s > 0.0 {
            PieceForm::Hyper {
                gamma: s.sqrt(),
                v_bot: edge.v_bot * a_bot,
                v_top: edge.v_top * a_top,
            }
        } else {
            PieceForm::Affine {
                v0: edge.v_bot * a_bot,
                dv0: edge.w_bot * a_bot / p,
            }
        };
        pieces.push(Piece { z_bot, h, p, form });
    }

    let mut total = 0.0;
    for (j, piece) in pieces.iter().enumerate() {
        let w_j = match weight {
            NormWeight::Plain => 1.0,
            NormWeight::Porosity => stack.material(j).porosity,
        };
        total += w_j * piece.l2();
    }
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::EigenSolve(format!(
            "eigenfunction normalization failed at lambda = {lambda} (norm^2 = {total})"
        )));
    }
    let scale = 1.0 / total.sqrt();
    for piece in &mut pieces {
        piece.scale(scale);
    }

    Ok(EigenFunction {
        lambda,
        interfaces: stack.interfaces().to_vec(),
        pieces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::LayerStack;
    use crate::quad::QuadRule;
    use std::f64::consts::PI;

    fn stack_two() -> LayerStack {
        LayerStack::new(&[0.0, -0.5, -1.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 2.0], 1.0)
            .unwrap()
    }

    fn stack_contrast(contrast: f64) -> LayerStack {
        LayerStack::new(
            &[0.0, -0.25, -0.5, -0.75, -1.0],
            &[1.0; 4],
            &[1.0; 4],
            &[1.0, contrast, 1.0, contrast],
            1.0,
        )
        .unwrap()
    }

    /// RK4 integration of v' = w/p, w' = (p k^2 - lambda) v: the
    /// implementation-independent oracle for single-layer transport.
    fn rk4_layer(v0: f64, w0: f64, p: f64, h: f64, kappa: f64, lambda: f64, n: usize) -> (f64, f64) {
        let dz = h / n as f64;
        let f = |v: f64, w: f64| (w / p, (p * kappa * kappa - lambda) * v);
        let (mut v, mut w) = (v0, w0);
        for _ in 0..n {
            let (k1v, k1w) = f(v, w);
            let (k2v, k2w) = f(v + 0.5 * dz * k1v, w + 0.5 * dz * k1w);
            let (k3v, k3w) = f(v + 0.5 * dz * k2v, w + 0.5 * dz * k2w);
            let (k4v, k4w) = f(v + dz * k3v, w + dz * k3w);
            v += dz / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            w += dz / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        }
        (v, w)
    }

    #[test]
    fn layer_transfer_matches_rk4_oracle() {
        // one case per regime: oscillatory, hyperbolic, near-affine
        let cases = [
            (0.7, 0.6, 1.5, 0.8, 2.0, 80.0),  // s < 0
            (0.7, -0.3, 2.0, 0.6, 9.0, 20.0), // s > 0
            (1.0, 1.0, 1.0, 0.5, 3.0, 8.9),   // s slightly positive
        ];
        for (v0, w0, p, h, kappa, lambda) in cases {
            let (vr, wr) = rk4_layer(v0, w0, p, h, kappa, lambda, 40_000);
            let (v2, w2, dlog) = layer_step(v0, w0, p, h, kappa * kappa - lambda / p);
            let scale = dlog.exp();
            let m = vr.abs().max(wr.abs());
            assert!(
                (v2 * scale - vr).abs() < 1e-9 * m,
                "v mismatch: {} vs {vr}",
                v2 * scale
            );
            assert!(
                (w2 * scale - wr).abs() < 1e-9 * m,
                "w mismatch: {} vs {wr}",
                w2 * scale
            );
        }
    }

    #[test]
    fn transfer_has_unit_determinant() {
        // the transfer matrix is symplectic: det = 1 once the scale factor
        // is restored (checked at moderate thickness where it is finite)
        for (p, h, kappa, lambda) in [
            (1.3, 0.7, 2.0, 50.0),
            (0.8, 0.9, 4.0, 3.0),
            (2.0, 0.4, 0.0, 11.0),
        ] {
            let s = kappa * kappa - lambda / p;
            let (a, c, dlog) = layer_step(1.0, 0.0, p, h, s);
            let (b, d, _) = layer_step(0.0, 1.0, p, h, s);
            let det = (a * d - b * c) * (2.0 * dlog).exp();
            assert!((det - 1.0).abs() < 1e-12, "det = {det}");
        }
    }

    #[test]
    fn deep_hyperbolic_transfer_saturates_to_growing_mode() {
        // for gamma h >> 1 the transported state aligns with the growing
        // solution: w/v -> p gamma, and the scaled entries stay finite
        let (p, kappa, lambda, h) = (2.0f64, 400.0f64, 1000.0f64, 1.5f64);
        let s = kappa * kappa - lambda / p;
        let gamma = s.sqrt();
        let (v2, w2, dlog) = layer_step(0.3, -0.9, p, h, s);
        assert!(v2.is_finite() && w2.is_finite());
        assert!((dlog - gamma * h).abs() < 1e-9);
        assert!((w2 / v2 - p * gamma).abs() < 1e-6 * p * gamma);
    }

    #[test]
    fn propagation_keeps_state_in_renormalization_band() {
        let stack = stack_contrast(100.0);
        let mut state = TransferState::start();
        for j in (0..stack.num_layers()).rev() {
            let (st, _) = propagate_layer(
                state,
                stack.material(j).bd(),
                stack.layer_thickness(j),
                2.0 * PI,
                130.0,
            );
            state = st;
            let m = state.v.abs().max(state.w.abs());
            assert!((0.5..=2.0).contains(&m), "renormalized magnitude {m}");
        }
    }

    #[test]
    fn single_layer_spectrum_is_k_pi_squared() {
        let stack = LayerStack::new(&[0.0, -1.0], &[1.0], &[1.0], &[1.0], 1.0).unwrap();
        let basis = find_eigenpairs(&stack, 0.0, 8).unwrap();
        for (k0, &lambda) in basis.eigenvalues().iter().enumerate() {
            let exact = ((k0 as f64 + 1.0) * PI).powi(2);
            assert!(
                (lambda - exact).abs() <= 1e-12 * exact,
                "k={}: {lambda} vs {exact}",
                k0 + 1
            );
        }
    }

    #[test]
    fn kappa_shifts_single_layer_spectrum_exactly() {
        let p = 1.7;
        let h = 1.3;
        let stack = LayerStack::new(&[0.0, -h], &[1.0], &[1.0], &[p], 1.0).unwrap();
        let kappa = 2.0 * PI;
        let basis = find_eigenpairs(&stack, kappa, 6).unwrap();
        for (k0, &lambda) in basis.eigenvalues().iter().enumerate() {
            let exact = p * (kappa * kappa + ((k0 as f64 + 1.0) * PI / h).powi(2));
            assert!(
                (lambda - exact).abs() <= 1e-12 * exact,
                "k={}: {lambda} vs {exact}",
                k0 + 1
            );
        }
    }

    #[test]
    fn oscillation_count_counts_eigenvalues_below() {
        let stack = LayerStack::new(&[0.0, -1.0], &[1.0], &[1.0], &[1.0], 1.0).unwrap();
        let (_, n) = dispersion_and_count(&stack, 0.0, 15.0);
        assert_eq!(n, 1); // pi^2 < 15 < (2 pi)^2
        let (_, n) = dispersion_and_count(&stack, 0.0, (3.5 * PI).powi(2));
        assert_eq!(n, 3);
        let (_, n) = dispersion_and_count(&stack, 0.0, 0.5);
        assert_eq!(n, 0);
    }

    #[test]
    fn dispersion_changes_sign_across_eigenvalues() {
        let stack = LayerStack::new(&[0.0, -1.0], &[1.0], &[1.0], &[1.0], 1.0).unwrap();
        for k in 1..=4 {
            let exact = (k as f64 * PI).powi(2);
            let (f_lo, _) = dispersion_and_count(&stack, 0.0, exact - 1.0);
            let (f_hi, _) = dispersion_and_count(&stack, 0.0, exact + 1.0);
            assert!(f_lo * f_hi < 0.0, "no sign change around k={k}");
        }
    }

    #[test]
    fn eigenvalues_increase_in_k_and_kappa() {
        for stack in [stack_two(), stack_contrast(10.0)] {
            let b0 = find_eigenpairs(&stack, 0.0, 10).unwrap();
            let b1 = find_eigenpairs(&stack, 2.0 * PI, 10).unwrap();
            for k in 0..10 {
                if k > 0 {
                    assert!(b0.eigenvalue(k) > b0.eigenvalue(k - 1));
                    assert!(b1.eigenvalue(k) > b1.eigenvalue(k - 1));
                }
                assert!(b1.eigenvalue(k) > b0.eigenvalue(k));
            }
        }
    }

    /// Gram matrix of the basis under per-layer Gauss quadrature.
    fn gram_max_deviation(stack: &LayerStack, basis: &VerticalBasis, nq: usize) -> f64 {
        let mut rules = Vec::new();
        for j in 0..stack.num_layers() {
            let (zt, zb) = stack.layer_span(j);
            rules.push(QuadRule::mapped(nq, zb, zt));
        }
        let k = basis.len();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in i..k {
                let mut acc = 0.0;
                for rule in &rules {
                    for (&z, &w) in rule.nodes.iter().zip(&rule.weights) {
                        acc += w * basis.mode(i).eval(z).0 * basis.mode(j).eval(z).0;
                    }
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((acc - target).abs());
            }
        }
        worst
    }

    #[test]
    fn eigenfunctions_are_orthonormal() {
        for (stack, kappa, kmax, nq) in [
            (stack_two(), 0.0, 12, 64),
            (stack_two(), 2.0 * PI, 12, 64),
            (stack_contrast(10.0), 2.0 * PI, 10, 64),
        ] {
            let basis = find_eigenpairs(&stack, kappa, kmax).unwrap();
            let dev = gram_max_deviation(&stack, &basis, nq);
            assert!(dev <= 1e-10, "gram deviation {dev} at kappa={kappa}");
        }
    }

    #[test]
    fn high_contrast_high_kappa_basis_stays_orthonormal() {
        // strong evanescent barriers between wells of unequal width:
        // modes localize in one well each and their tails must cross
        // gamma h > 10 barriers without contaminating the basis. (Equal
        // wells would be exponentially degenerate, which no eigensolver
        // separates stably, so the geometry is deliberately asymmetric.)
        let stack = LayerStack::new(
            &[0.0, -0.2, -0.45, -0.8, -1.0],
            &[1.0; 4],
            &[1.0; 4],
            &[1.0, 100.0, 1.0, 100.0],
            1.0,
        )
        .unwrap();
        let kappa = 16.0 * PI;
        let basis = find_eigenpairs(&stack, kappa, 8).unwrap();
        let dev = gram_max_deviation(&stack, &basis, 96);
        assert!(dev <= 1e-9, "gram deviation {dev}");
    }

    #[test]
    fn eigenfunction_interface_and_boundary_traces() {
        let stack = stack_contrast(10.0);
        let basis = find_eigenpairs(&stack, 2.0 * PI, 10).unwrap();
        for k in 0..basis.len() {
            let mode = basis.mode(k);
            // Dirichlet walls (normalized modes are O(1))
            assert!(mode.eval(0.0).0.abs() <= 1e-10);
            assert!(mode.eval(-stack.depth()).0.abs() <= 1e-10);
            // interface z_{j+1} separates layer j (above) from layer j+1 (below):
            // the bottom edge of layer j must meet the top edge of layer j+1
            for j in 0..stack.num_layers() - 1 {
                let ((v_above, dv_above), _) = mode.layer_edges(j);
                let (_, (v_below, dv_below)) = mode.layer_edges(j + 1);
                let flux_above = stack.material(j).bd() * dv_above;
                let flux_below = stack.material(j + 1).bd() * dv_below;
                assert!(
                    (v_above - v_below).abs() <= 1e-10,
                    "k={k} j={j}: value jump {v_above} vs {v_below}"
                );
                let f_scale = flux_above.abs().max(flux_below.abs()).max(1.0);
                assert!(
                    (flux_above - flux_below).abs() <= 1e-10 * f_scale,
                    "k={k} j={j}: flux jump {flux_above} vs {flux_below}"
                );
            }
        }
    }

    #[test]
    fn eigenfunctions_satisfy_the_ode_pointwise() {
        // central differences of the evaluator against the eigenrelation
        let stack = stack_two();
        let kappa = 2.0 * PI;
        let basis = find_eigenpairs(&stack, kappa, 8).unwrap();
        for k in 0..basis.len() {
            let mode = basis.mode(k);
            let lambda = mode.lambda;
            for j in 0..stack.num_layers() {
                let (zt, zb) = stack.layer_span(j);
                let p = stack.material(j).bd();
                let mu = (lambda / p).sqrt();
                let d = 1e-4 / mu;
                for i in 1..8 {
                    let z = zb + (zt - zb) * i as f64 / 8.0;
                    if z - d < zb || z + d > zt {
                        continue;
                    }
                    let ddv = (mode.eval(z + d).1 - mode.eval(z - d).1) / (2.0 * d);
                    let v = mode.eval(z).0;
                    let residual = -p * ddv + (p * kappa * kappa - lambda) * v;
                    assert!(
                        residual.abs() <= 1e-7 * lambda,
                        "k={k} z={z}: residual {residual} (lambda {lambda})"
                    );
                }
            }
        }
    }

    #[test]
    fn hyper_l2_weights_consistent_across_branches() {
        // series and u-form must agree at the switch point
        for h in [0.3f64, 1.0] {
            for x in [0.019f64, 0.02, 0.021] {
                let gamma = x / h;
                let u = (-2.0 * x).exp();
                let d = 1.0 - u;
                let ex = (-x).exp();
                let j_direct = (1.0 + u) / (2.0 * gamma * d) - 2.0 * h * u / (d * d);
                let m_direct = h * ex * (1.0 + u) / (d * d) - ex / (gamma * d);
                let (j, m) = hyper_l2_weights(gamma, h);
                assert!((j - j_direct).abs() <= 1e-11 * j_direct.abs());
                assert!((m - m_direct).abs() <= 1e-11 * m_direct.abs());
            }
        }
    }

    #[test]
    fn hyper_l2_weights_match_quadrature() {
        for (gamma, h, vb, vt) in [
            (0.5, 0.8, 1.0, -0.3),
            (12.0, 0.6, 0.2, 0.9),
            (80.0, 0.5, 1.0, 1.0),
        ] {
            let piece = Piece {
                z_bot: 0.0,
                h,
                p: 1.0,
                form: PieceForm::Hyper { gamma, v_bot: vb, v_top: vt },
            };
            let n = (2.0 * gamma * h) as usize + 40;
            let rule = QuadRule::mapped(n.min(180), 0.0, h);
            let num = rule.integrate(|zeta| piece.eval(zeta).0.powi(2));
            let exact = piece.l2();
            assert!(
                (num - exact).abs() <= 1e-10 * exact.abs().max(1e-12),
                "gamma={gamma}: {num} vs {exact}"
            );
        }
    }

    #[test]
    fn porosity_weighted_normalization_integrates_b_v_squared_to_one() {
        let stack = LayerStack::new(
            &[0.0, -0.5, -1.0],
            &[1.0, 1.0],
            &[0.4, 0.9],
            &[1.0, 2.0],
            1.0,
        )
        .unwrap();
        let basis = find_eigenpairs_weighted(&stack, 0.0, 4, NormWeight::Porosity).unwrap();
        for k in 0..basis.len() {
            let mut acc = 0.0;
            for j in 0..stack.num_layers() {
                let (zt, zb) = stack.layer_span(j);
                let rule = QuadRule::mapped(48, zb, zt);
                acc += stack.material(j).porosity
                    * rule.integrate(|z| basis.mode(k).eval(z).0.powi(2));
            }
            assert!((acc - 1.0).abs() <= 1e-10, "k={k}: int b v^2 = {acc}");
        }
    }

    #[test]
    fn rejects_kmax_zero() {
        assert!(find_eigenpairs(&stack_two(), 0.0, 0).is_err());
    }
}
