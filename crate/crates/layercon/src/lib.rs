//! Spectral-Galerkin solver for Darcy-Boussinesq convection in layered
//! porous strips.
//!
//! The domain is a horizontally periodic strip split into layers with
//! piecewise-constant permeability, porosity and diffusivity. Concentration
//! is expanded per horizontal wavenumber in the eigenbasis of the vertical
//! diffusion operator; Darcy flow is recovered from a per-mode pressure
//! solve and the transport equation is stepped with eigendiagonal IMEX
//! schemes.

pub mod acceptance;
pub mod config;
pub mod diagnostics;
pub mod domain;
pub mod error;
pub mod fields;
pub mod output;
pub mod quad;
pub mod runner;
pub mod spectra;
pub mod transport;

pub use error::{Error, Result};
