//! Geometry and material data for a horizontally periodic layered strip.
//!
//! The domain is (0, L) x (-H, 0), split into horizontal layers by interface
//! depths 0 = z_0 > z_1 > ... > z_l = -H. Each layer carries constant
//! permeability K, porosity b and diffusivity D. The conduction lift is the
//! piecewise-linear steady profile matching the boundary concentrations with
//! a continuous diffusive flux across interfaces.

use crate::error::{Error, Result};

/// Material parameters of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub permeability: f64,
    pub porosity: f64,
    pub diffusivity: f64,
}

impl Material {
    /// Product b*D, the diffusion coefficient of the concentration equation.
    pub fn bd(&self) -> f64 {
        self.porosity * self.diffusivity
    }
}

/// Layered strip: interface depths (descending, first 0, last -H), one
/// material per layer, and the horizontal period L.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    interfaces: Vec<f64>,
    materials: Vec<Material>,
    width: f64,
}

impl LayerStack {
    /// Build a stack from interface depths and per-layer parameter slices.
    /// `interfaces` must start at 0, strictly decrease, and have exactly one
    /// more entry than each of `permeability`, `porosity`, `diffusivity`.
    pub fn new(
        interfaces: &[f64],
        permeability: &[f64],
        porosity: &[f64],
        diffusivity: &[f64],
        width: f64,
    ) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidStack(msg));
        if interfaces.len() < 2 {
            return bad("need at least two interface depths".into());
        }
        let layers = interfaces.len() - 1;
        if permeability.len() != layers
            || porosity.len() != layers
            || diffusivity.len() != layers
        {
            return bad(format!(
                "{} interfaces imply {} layers, got {} K / {} b / {} D values",
                interfaces.len(),
                layers,
                permeability.len(),
                porosity.len(),
                diffusivity.len()
            ));
        }
        if interfaces[0] != 0.0 {
            return bad(format!("first interface must be 0, got {}", interfaces[0]));
        }
        for w in interfaces.windows(2) {
            if !w[1].is_finite() || w[1] >= w[0] {
                return bad(format!(
                    "interface depths must strictly decrease, got {} then {}",
                    w[0], w[1]
                ));
            }
        }
        if !width.is_finite() || width <= 0.0 {
            return bad(format!("width must be positive, got {width}"));
        }
        let mut materials = Vec::with_capacity(layers);
        for j in 0..layers {
            for (name, v) in [
                ("permeability", permeability[j]),
                ("porosity", porosity[j]),
                ("diffusivity", diffusivity[j]),
            ] {
                if !v.is_finite() || v <= 0.0 {
                    return bad(format!("layer {} {name} must be positive, got {v}", j + 1));
                }
            }
            materials.push(Material {
                permeability: permeability[j],
                porosity: porosity[j],
                diffusivity: diffusivity[j],
            });
        }
        Ok(LayerStack {
            interfaces: interfaces.to_vec(),
            materials,
            width,
        })
    }

    /// Convenience constructor for a single homogeneous layer.
    pub fn single(depth: f64, material: Material, width: f64) -> Result<Self> {
        LayerStack::new(
            &[0.0, -depth],
            &[material.permeability],
            &[material.porosity],
            &[material.diffusivity],
            width,
        )
    }

    pub fn num_layers(&self) -> usize {
        self.materials.len()
    }

    /// Interface depths, descending from 0 to -H.
    pub fn interfaces(&self) -> &[f64] {
        &self.interfaces
    }

    /// Interior interface depths z_1 .. z_{l-1}.
    pub fn interior_interfaces(&self) -> &[f64] {
        &self.interfaces[1..self.interfaces.len() - 1]
    }

    pub fn materials(&self) -> &[Material] {
        &self.materials
    }

    pub fn material(&self, layer: usize) -> Material {
        self.materials[layer]
    }

    /// Total depth H (> 0).
    pub fn depth(&self) -> f64 {
        -self.interfaces[self.interfaces.len() - 1]
    }

    /// Horizontal period L.
    pub fn width(&self) -> f64 {
        self.width
    }

    /// Upper and lower depth of `layer` (z_top > z_bot).
    pub fn layer_span(&self, layer: usize) -> (f64, f64) {
        (self.interfaces[layer], self.interfaces[layer + 1])
    }

    pub fn layer_thickness(&self, layer: usize) -> f64 {
        self.interfaces[layer] - self.interfaces[layer + 1]
    }

    /// Layer index owning depth z. Interior interfaces belong to the lower
    /// layer; z outside [-H, 0] is a domain error.
    pub fn layer_at(&self, z: f64) -> Result<usize> {
        let bottom = self.interfaces[self.interfaces.len() - 1];
        if !(bottom..=0.0).contains(&z) {
            return Err(Error::InvalidStack(format!(
                "depth {z} outside the strip [{bottom}, 0]"
            )));
        }
        // layer j covers (z_{j+1}, z_j]; the bottom layer also owns z = -H
        for j in 0..self.num_layers() {
            if z > self.interfaces[j + 1] {
                return Ok(j);
            }
        }
        Ok(self.num_layers() - 1)
    }

    /// Material at depth z (interior interfaces resolve to the lower layer).
    pub fn material_at(&self, z: f64) -> Result<(usize, Material)> {
        let j = self.layer_at(z)?;
        Ok((j, self.materials[j]))
    }

    /// True when the porosity b is the same constant in every layer.
    pub fn constant_porosity(&self) -> bool {
        self.materials
            .iter()
            .all(|m| m.porosity == self.materials[0].porosity)
    }

    /// FNV-1a hash over the canonical serialization; used to pair
    /// checkpoints with the stack they were produced on.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |v: f64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.width);
        for &z in &self.interfaces {
            eat(z);
        }
        for m in &self.materials {
            eat(m.permeability);
            eat(m.porosity);
            eat(m.diffusivity);
        }
        h
    }
}

/// Fluid constants: viscosity mu, reference density rho0, expansion
/// coefficient alpha, gravity g. The buoyancy factor c = alpha*rho0*g
/// multiplies the concentration in Darcy's law. alpha = 0 switches
/// buoyancy off; the remaining constants must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub mu: f64,
    pub rho0: f64,
    pub alpha: f64,
    pub g: f64,
}

impl PhysicalConstants {
    pub fn new(mu: f64, rho0: f64, alpha: f64, g: f64) -> Result<Self> {
        for (name, v) in [("mu", mu), ("rho0", rho0), ("g", g)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "constant {name} must be strictly positive, got {v}"
                )));
            }
        }
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "constant alpha must be non-negative, got {alpha}"
            )));
        }
        Ok(PhysicalConstants { mu, rho0, alpha, g })
    }

    /// Buoyancy factor c = alpha * rho0 * g.
    pub fn buoyancy(&self) -> f64 {
        self.alpha * self.rho0 * self.g
    }
}

/// Dirichlet concentration data: C0 on the top boundary z = 0, C1 on the
/// bottom boundary z = -H.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundaryData {
    pub top: f64,
    pub bottom: f64,
}

impl BoundaryData {
    pub fn new(top: f64, bottom: f64) -> Self {
        BoundaryData { top, bottom }
    }

    pub fn homogeneous(&self) -> bool {
        self.top == 0.0 && self.bottom == 0.0
    }
}

/// Steady conduction profile: one affine piece a_j z + c_j per layer, value
/// continuous at interfaces, with the diffusive flux q = -b_j D_j a_j
/// constant across the stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductionLift {
    /// Interface depths copied from the stack (owning the piece layout).
    interfaces: Vec<f64>,
    /// Per-layer slope a_j.
    slopes: Vec<f64>,
    /// Per-layer offset c_j.
    offsets: Vec<f64>,
    /// Constant diffusive flux q = -b_j D_j a_j.
    flux: f64,
}

/// Solve the steady conduction problem for the given stack and boundary
/// data. Homogeneous data yields the identically zero lift with zero flux.
pub fn conduction_profile(stack: &LayerStack, boundary: &BoundaryData) -> ConductionLift {
    let l = stack.num_layers();
    if boundary.homogeneous() {
        return ConductionLift {
            interfaces: stack.interfaces().to_vec(),
            slopes: vec![0.0; l],
            offsets: vec![0.0; l],
            flux: 0.0,
        };
    }
    // series resistance: q = (C1 - C0) / sum_j h_j / (b_j D_j)
    let resistance: f64 = (0..l)
        .map(|j| stack.layer_thickness(j) / stack.material(j).bd())
        .sum();
    let flux = (boundary.bottom - boundary.top) / resistance;
    let mut slopes = Vec::with_capacity(l);
    let mut offsets = Vec::with_capacity(l);
    let mut value_at_top = boundary.top; // lift value at the layer's upper edge
    for j in 0..l {
        let a = -flux / stack.material(j).bd();
        let (z_top, z_bot) = stack.layer_span(j);
        let c = value_at_top - a * z_top;
        slopes.push(a);
        offsets.push(c);
        value_at_top = a * z_bot + c;
    }
    ConductionLift {
        interfaces: stack.interfaces().to_vec(),
        slopes,
        offsets,
        flux,
    }
}

impl ConductionLift {
    /// Lift value at depth z; interfaces resolve to the lower layer
    /// (the value is continuous, so the choice only fixes the arithmetic).
    pub fn value(&self, z: f64) -> f64 {
        let j = self.piece_index(z);
        self.slopes[j] * z + self.offsets[j]
    }

    /// Lift slope d lc/dz at depth z.
    pub fn slope(&self, z: f64) -> f64 {
        self.slopes[self.piece_index(z)]
    }

    pub fn slope_in_layer(&self, layer: usize) -> f64 {
        self.slopes[layer]
    }

    /// The constant diffusive flux q = -b_j D_j a_j.
    pub fn flux(&self) -> f64 {
        self.flux
    }

    pub fn is_zero(&self) -> bool {
        self.flux == 0.0 && self.slopes.iter().all(|&a| a == 0.0)
            && self.offsets.iter().all(|&c| c == 0.0)
    }

    fn piece_index(&self, z: f64) -> usize {
        let l = self.slopes.len();
        for j in 0..l {
            if z > self.interfaces[j + 1] {
                return j;
            }
        }
        l - 1
    }
}
