//! Run configuration: a flat `section.key = value` text format.
//!
//! Lines hold one `key = value` pair each; `#` starts a comment and blank
//! lines are skipped. Unknown or duplicate keys are errors, not warnings.
//! Only the layer stack is required; every other key has a documented
//! default, and `emit` echoes the fully resolved configuration such that
//! `parse(emit(c)) == c`.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{BoundaryData, LayerStack, PhysicalConstants};
use crate::error::{Error, Result};
use crate::fields::{default_nq, Grid};
use crate::transport::{Scheme, StepperConfig};

/// Which artifacts a run writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutputFormats {
    pub csv: bool,
    pub vtk: bool,
    pub checkpoint: bool,
}

impl Default for OutputFormats {
    fn default() -> Self {
        OutputFormats {
            csv: true,
            vtk: true,
            checkpoint: true,
        }
    }
}

/// Initial concentration presets.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// one vertical eigenfunction of one wavenumber
    Eigenmode {
        wavenumber: usize,
        vertical: usize,
        amplitude: f64,
    },
    /// seeded noise over wavenumbers and vertical modes up to `band`
    Random { band: usize, amplitude: f64 },
    /// modal coefficients from a checkpoint file (time and step ignored)
    File { path: String },
}

/// A fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub stack: LayerStack,
    pub constants: PhysicalConstants,
    pub boundary: BoundaryData,
    pub nx: usize,
    pub kmax: usize,
    pub nq: usize,
    pub elliptic_order: usize,
    pub elems_per_layer: usize,
    pub stepper: StepperConfig,
    pub t_end: f64,
    pub seed: u64,
    pub cadence: u64,
    pub checkpoint_every: u64,
    pub directory: String,
    pub formats: OutputFormats,
    pub ic: InitialCondition,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

struct Keys {
    map: BTreeMap<String, String>,
}

impl Keys {
    fn parse(text: &str) -> Result<Keys> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(bad(format!("line {}: empty key", lineno + 1)));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(bad(format!("duplicate key '{key}'")));
            }
        }
        Ok(Keys { map })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.map.keys().next() {
            return Err(bad(format!("unknown key '{key}'")));
        }
        Ok(())
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| bad(format!("{key}: '{value}' is not a number")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| bad(format!("{key}: '{value}' is not a nonnegative integer")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| bad(format!("{key}: '{value}' is not a nonnegative integer")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(format!("{key}: expected true or false, got '{value}'"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = value
        .split_whitespace()
        .map(|tok| parse_f64(key, tok))
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(bad(format!("{key}: expected at least one number")));
    }
    Ok(vals)
}

fn fmt_list(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| format!("{v:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

impl RunConfig {
    /// Parse and validate a configuration, resolving all defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut keys = Keys::parse(text)?;

        let take_f64 = |keys: &mut Keys, key: &str, default: f64| -> Result<f64> {
            match keys.take(key) {
                Some(v) => parse_f64(key, &v),
                None => Ok(default),
            }
        };

        // stack: the only required section
        let interfaces = keys
            .take("stack.interfaces")
            .ok_or_else(|| bad("missing required key 'stack.interfaces'"))?;
        let interfaces = parse_list("stack.interfaces", &interfaces)?;
        let permeability = keys
            .take("stack.permeability")
            .ok_or_else(|| bad("missing required key 'stack.permeability'"))?;
        let permeability = parse_list("stack.permeability", &permeability)?;
        let porosity = keys
            .take("stack.porosity")
            .ok_or_else(|| bad("missing required key 'stack.porosity'"))?;
        let porosity = parse_list("stack.porosity", &porosity)?;
        let diffusivity = keys
            .take("stack.diffusivity")
            .ok_or_else(|| bad("missing required key 'stack.diffusivity'"))?;
        let diffusivity = parse_list("stack.diffusivity", &diffusivity)?;
        let width = take_f64(&mut keys, "stack.width", 1.0)?;
        let stack = LayerStack::new(&interfaces, &permeability, &porosity, &diffusivity, width)?;

        let mu = take_f64(&mut keys, "constants.mu", 1.0)?;
        let rho0 = take_f64(&mut keys, "constants.rho0", 1.0)?;
        let alpha = take_f64(&mut keys, "constants.alpha", 1.0)?;
        let g = take_f64(&mut keys, "constants.g", 1.0)?;
        let constants = PhysicalConstants::new(mu, rho0, alpha, g)?;

        let boundary = BoundaryData::new(
            take_f64(&mut keys, "boundary.top", 0.0)?,
            take_f64(&mut keys, "boundary.bottom", 0.0)?,
        );

        let nx = match keys.take("resolution.nx") {
            Some(v) => parse_usize("resolution.nx", &v)?,
            None => 128,
        };
        let kmax = match keys.take("resolution.kmax") {
            Some(v) => parse_usize("resolution.kmax", &v)?,
            None => 64,
        };
        let nq = match keys.take("resolution.nq") {
            Some(v) => parse_usize("resolution.nq", &v)?,
            None => default_nq(kmax, stack.num_layers()),
        };
        let elliptic_order = match keys.take("resolution.elliptic_order") {
            Some(v) => parse_usize("resolution.elliptic_order", &v)?,
            None => 2,
        };
        let elems_per_layer = match keys.take("resolution.elems_per_layer") {
            Some(v) => parse_usize("resolution.elems_per_layer", &v)?,
            None => 16,
        };

        let dt = take_f64(&mut keys, "stepper.dt", 1e-3)?;
        let scheme = match keys.take("stepper.scheme") {
            Some(v) => match v.as_str() {
                "imex-cn" => Scheme::ImexCn,
                "imex-euler" => Scheme::ImexEuler,
                _ => {
                    return Err(bad(format!(
                        "stepper.scheme: expected imex-cn or imex-euler, got '{v}'"
                    )))
                }
            },
            None => Scheme::ImexCn,
        };
        let cfl_target = take_f64(&mut keys, "stepper.cfl_target", 0.5)?;
        let adaptive = match keys.take("stepper.adaptive") {
            Some(v) => parse_bool("stepper.adaptive", &v)?,
            None => false,
        };
        let stepper = StepperConfig {
            dt,
            scheme,
            cfl_target,
            adaptive,
        };
        stepper.validate()?;

        let t_end = take_f64(&mut keys, "run.t_end", 1.0)?;
        let seed = match keys.take("run.seed") {
            Some(v) => parse_u64("run.seed", &v)?,
            None => 0,
        };

        let cadence = match keys.take("output.cadence") {
            Some(v) => parse_u64("output.cadence", &v)?,
            None => 10,
        };
        let checkpoint_every = match keys.take("output.checkpoint_every") {
            Some(v) => parse_u64("output.checkpoint_every", &v)?,
            None => 0,
        };
        let directory = keys.take("output.directory").unwrap_or_else(|| "out".into());
        let formats = match keys.take("output.formats") {
            Some(v) => {
                let mut f = OutputFormats {
                    csv: false,
                    vtk: false,
                    checkpoint: false,
                };
                for tok in v.split_whitespace() {
                    match tok {
                        "csv" => f.csv = true,
                        "vtk" => f.vtk = true,
                        "checkpoint" => f.checkpoint = true,
                        "none" => {}
                        _ => {
                            return Err(bad(format!(
                                "output.formats: unknown format '{tok}' \
                                 (expected csv, vtk, checkpoint, or none)"
                            )))
                        }
                    }
                }
                f
            }
            None => OutputFormats::default(),
        };

        let ic_kind = keys.take("ic.kind").unwrap_or_else(|| "random".into());
        let amplitude = take_f64(&mut keys, "ic.amplitude", 1e-3)?;
        let ic = match ic_kind.as_str() {
            "eigenmode" => {
                let wavenumber = match keys.take("ic.wavenumber") {
                    Some(v) => parse_usize("ic.wavenumber", &v)?,
                    None => 1,
                };
                let vertical = match keys.take("ic.vertical") {
                    Some(v) => parse_usize("ic.vertical", &v)?,
                    None => 0,
                };
                InitialCondition::Eigenmode {
                    wavenumber,
                    vertical,
                    amplitude,
                }
            }
            "random" => {
                let band = match keys.take("ic.band") {
                    Some(v) => parse_usize("ic.band", &v)?,
                    None => 4,
                };
                InitialCondition::Random { band, amplitude }
            }
            "file" => {
                let path = keys
                    .take("ic.path")
                    .ok_or_else(|| bad("ic.kind = file requires ic.path"))?;
                InitialCondition::File { path }
            }
            _ => {
                return Err(bad(format!(
                    "ic.kind: expected eigenmode, random, or file, got '{ic_kind}'"
                )))
            }
        };

        keys.finish()?;

        let config = RunConfig {
            stack,
            constants,
            boundary,
            nx,
            kmax,
            nq,
            elliptic_order,
            elems_per_layer,
            stepper,
            t_end,
            seed,
            cadence,
            checkpoint_every,
            directory,
            formats,
            ic,
        };
        config.validate()?;
        Ok(config)
    }

    /// Cross-field checks beyond what the component constructors enforce.
    pub fn validate(&self) -> Result<()> {
        if self.nx < 4 || !self.nx.is_multiple_of(2) {
            return Err(bad(format!(
                "resolution.nx must be even and at least 4, got {}",
                self.nx
            )));
        }
        if self.kmax == 0 {
            return Err(bad("resolution.kmax must be at least 1"));
        }
        if self.nq < 4 {
            return Err(bad(format!(
                "resolution.nq must be at least 4, got {}",
                self.nq
            )));
        }
        if self.nq * self.stack.num_layers() < self.kmax {
            return Err(bad(format!(
                "quadrature capacity too small: {} nodes x {} layers cannot \
                 resolve {} vertical modes",
                self.nq,
                self.stack.num_layers(),
                self.kmax
            )));
        }
        if !(1..=3).contains(&self.elliptic_order) {
            return Err(bad(format!(
                "resolution.elliptic_order must be 1, 2, or 3, got {}",
                self.elliptic_order
            )));
        }
        if self.elems_per_layer == 0 {
            return Err(bad("resolution.elems_per_layer must be at least 1"));
        }
        if !self.t_end.is_finite() || self.t_end < 0.0 {
            return Err(bad(format!(
                "run.t_end must be finite and nonnegative, got {}",
                self.t_end
            )));
        }
        if self.cadence == 0 {
            return Err(bad("output.cadence must be at least 1"));
        }
        if self.directory.is_empty() {
            return Err(bad("output.directory must not be empty"));
        }
        match &self.ic {
            InitialCondition::Eigenmode {
                wavenumber,
                vertical,
                amplitude,
            } => {
                if *wavenumber > self.nx / 2 {
                    return Err(bad(format!(
                        "ic.wavenumber {wavenumber} exceeds the retained spectrum (nx/2 = {})",
                        self.nx / 2
                    )));
                }
                if *vertical >= self.kmax {
                    return Err(bad(format!(
                        "ic.vertical {vertical} exceeds kmax - 1 = {}",
                        self.kmax - 1
                    )));
                }
                if !amplitude.is_finite() {
                    return Err(bad("ic.amplitude must be finite"));
                }
            }
            InitialCondition::Random { amplitude, .. } => {
                if !amplitude.is_finite() {
                    return Err(bad("ic.amplitude must be finite"));
                }
            }
            InitialCondition::File { path } => {
                if path.is_empty() {
                    return Err(bad("ic.path must not be empty"));
                }
            }
        }
        Ok(())
    }

    /// Echo the fully resolved configuration; `parse(emit(c)) == c`.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let push = |out: &mut String, key: &str, value: String| {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&value);
            out.push('\n');
        };

        push(&mut out, "stack.interfaces", fmt_list(self.stack.interfaces()));
        let mats = self.stack.materials();
        push(
            &mut out,
            "stack.permeability",
            fmt_list(&mats.iter().map(|m| m.permeability).collect::<Vec<_>>()),
        );
        push(
            &mut out,
            "stack.porosity",
            fmt_list(&mats.iter().map(|m| m.porosity).collect::<Vec<_>>()),
        );
        push(
            &mut out,
            "stack.diffusivity",
            fmt_list(&mats.iter().map(|m| m.diffusivity).collect::<Vec<_>>()),
        );
        push(&mut out, "stack.width", format!("{:?}", self.stack.width()));

        push(&mut out, "constants.mu", format!("{:?}", self.constants.mu));
        push(&mut out, "constants.rho0", format!("{:?}", self.constants.rho0));
        push(&mut out, "constants.alpha", format!("{:?}", self.constants.alpha));
        push(&mut out, "constants.g", format!("{:?}", self.constants.g));

        push(&mut out, "boundary.top", format!("{:?}", self.boundary.top));
        push(&mut out, "boundary.bottom", format!("{:?}", self.boundary.bottom));

        push(&mut out, "resolution.nx", self.nx.to_string());
        push(&mut out, "resolution.kmax", self.kmax.to_string());
        push(&mut out, "resolution.nq", self.nq.to_string());
        push(
            &mut out,
            "resolution.elliptic_order",
            self.elliptic_order.to_string(),
        );
        push(
            &mut out,
            "resolution.elems_per_layer",
            self.elems_per_layer.to_string(),
        );

        push(&mut out, "stepper.dt", format!("{:?}", self.stepper.dt));
        push(
            &mut out,
            "stepper.scheme",
            match self.stepper.scheme {
                Scheme::ImexCn => "imex-cn".into(),
                Scheme::ImexEuler => "imex-euler".into(),
            },
        );
        push(
            &mut out,
            "stepper.cfl_target",
            format!("{:?}", self.stepper.cfl_target),
        );
        push(&mut out, "stepper.adaptive", self.stepper.adaptive.to_string());

        push(&mut out, "run.t_end", format!("{:?}", self.t_end));
        push(&mut out, "run.seed", self.seed.to_string());

        push(&mut out, "output.cadence", self.cadence.to_string());
        push(
            &mut out,
            "output.checkpoint_every",
            self.checkpoint_every.to_string(),
        );
        push(&mut out, "output.directory", self.directory.clone());
        let mut fmts = Vec::new();
        if self.formats.csv {
            fmts.push("csv");
        }
        if self.formats.vtk {
            fmts.push("vtk");
        }
        if self.formats.checkpoint {
            fmts.push("checkpoint");
        }
        if fmts.is_empty() {
            fmts.push("none");
        }
        push(&mut out, "output.formats", fmts.join(" "));

        match &self.ic {
            InitialCondition::Eigenmode {
                wavenumber,
                vertical,
                amplitude,
            } => {
                push(&mut out, "ic.kind", "eigenmode".into());
                push(&mut out, "ic.wavenumber", wavenumber.to_string());
                push(&mut out, "ic.vertical", vertical.to_string());
                push(&mut out, "ic.amplitude", format!("{amplitude:?}"));
            }
            InitialCondition::Random { band, amplitude } => {
                push(&mut out, "ic.kind", "random".into());
                push(&mut out, "ic.band", band.to_string());
                push(&mut out, "ic.amplitude", format!("{amplitude:?}"));
            }
            InitialCondition::File { path } => {
                push(&mut out, "ic.kind", "file".into());
                push(&mut out, "ic.path", path.clone());
            }
        }
        out
    }

    /// Build the spectral grid this configuration describes.
    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(&self.stack, self.nx, self.kmax, self.nq)
    }

    /// Realize the initial condition as modal coefficients on a grid.
    pub fn initial_coeffs(&self, grid: &Grid) -> Result<Array2<Complex64>> {
        let ny = grid.nx() / 2;
        let kmax = grid.kmax();
        let mut coeffs = Array2::zeros((ny + 1, kmax));
        match &self.ic {
            InitialCondition::Eigenmode {
                wavenumber,
                vertical,
                amplitude,
            } => {
                coeffs[[*wavenumber, *vertical]] = Complex64::new(*amplitude, 0.0);
            }
            InitialCondition::Random { band, amplitude } => {
                // fixed iteration order keeps the draw deterministic
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let m_top = (*band).min(grid.dealias_limit());
                let k_top = (*band + 1).min(kmax);
                for m in 0..=m_top {
                    for k in 0..k_top {
                        let decay = amplitude / (1.0 + (m * m + k * k) as f64);
                        let re = rng.gen_range(-1.0..1.0) * decay;
                        let im = if m == 0 || m == ny {
                            0.0
                        } else {
                            rng.gen_range(-1.0..1.0) * decay
                        };
                        coeffs[[m, k]] = Complex64::new(re, im);
                    }
                }
            }
            InitialCondition::File { path } => {
                let (loaded, _, _) =
                    crate::runner::read_checkpoint(std::path::Path::new(path), grid)?;
                coeffs = loaded;
            }
        }
        Ok(coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "
        stack.interfaces = 0.0 -1.0
        stack.permeability = 1.0
        stack.porosity = 1.0
        stack.diffusivity = 1.0
    ";

    #[test]
    fn minimal_config_resolves_documented_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.nx, 128);
        assert_eq!(cfg.kmax, 64);
        assert_eq!(cfg.nq, default_nq(64, 1));
        assert_eq!(cfg.stepper.scheme, Scheme::ImexCn);
        assert_eq!(cfg.stepper.dt, 1e-3);
        assert_eq!(cfg.elliptic_order, 2);
        assert_eq!(cfg.t_end, 1.0);
        assert_eq!(cfg.cadence, 10);
        assert_eq!(cfg.formats, OutputFormats::default());
        assert!(matches!(cfg.ic, InitialCondition::Random { band: 4, .. }));
    }

    #[test]
    fn round_trip_is_exact_for_every_ic_kind() {
        let full = "
            stack.interfaces = 0.0 -0.25 -1.0
            stack.permeability = 1.0 0.125
            stack.porosity = 0.4 1.0
            stack.diffusivity = 2.0 1.0
            stack.width = 2.5
            constants.mu = 0.7
            constants.rho0 = 1.2
            constants.alpha = 0.3
            constants.g = 9.81
            boundary.top = 0.0
            boundary.bottom = 1.0
            resolution.nx = 16
            resolution.kmax = 6
            resolution.nq = 14
            resolution.elliptic_order = 3
            resolution.elems_per_layer = 24
            stepper.dt = 0.0005
            stepper.scheme = imex-euler
            stepper.cfl_target = 0.25
            stepper.adaptive = true
            run.t_end = 0.125
            run.seed = 99
            output.cadence = 7
            output.checkpoint_every = 50
            output.directory = results
            output.formats = csv checkpoint
        ";
        for ic in [
            "ic.kind = eigenmode\nic.wavenumber = 2\nic.vertical = 1\nic.amplitude = 0.01",
            "ic.kind = random\nic.band = 3\nic.amplitude = 0.001",
            "ic.kind = file\nic.path = seed.ckpt",
        ] {
            let text = format!("{full}\n{ic}");
            let cfg = RunConfig::parse(&text).unwrap();
            let echoed = cfg.emit();
            let again = RunConfig::parse(&echoed).unwrap();
            assert_eq!(cfg, again, "round trip changed:\n{echoed}");
        }
    }

    #[test]
    fn unknown_and_duplicate_keys_are_errors() {
        let err = RunConfig::parse(&format!("{MINIMAL}\nstack.wdith = 2.0")).unwrap_err();
        assert!(err.to_string().contains("stack.wdith"), "{err}");
        let err =
            RunConfig::parse(&format!("{MINIMAL}\nstack.width = 1.0\nstack.width = 2.0"))
                .unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn layer_count_mismatch_is_an_error() {
        let text = "
            stack.interfaces = 0.0 -0.5 -1.0
            stack.permeability = 1.0
            stack.porosity = 1.0
            stack.diffusivity = 1.0
        ";
        assert!(RunConfig::parse(text).is_err());
    }

    #[test]
    fn missing_stack_and_malformed_values_are_errors() {
        assert!(RunConfig::parse("").is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\nstepper.dt = fast")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\nstepper.scheme = rk4")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\nstepper.adaptive = yes")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\noutput.formats = png")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\nic.kind = gaussian")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\nresolution.nx = 7")).is_err());
        assert!(RunConfig::parse(&format!("{MINIMAL}\nrun.t_end = -2.0")).is_err());
    }

    #[test]
    fn comments_and_spacing_are_ignored() {
        let text = "
            # a comment line
            stack.interfaces = 0.0 -1.0   # trailing comment
            stack.permeability =    1.0
            stack.porosity = 1.0
            stack.diffusivity = 1.0

            resolution.nx=8
        ";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.nx, 8);
    }

    #[test]
    fn eigenmode_bounds_are_validated() {
        let base = format!("{MINIMAL}\nresolution.nx = 8\nresolution.kmax = 4\nic.kind = eigenmode");
        assert!(RunConfig::parse(&format!("{base}\nic.wavenumber = 4")).is_ok());
        assert!(RunConfig::parse(&format!("{base}\nic.wavenumber = 5")).is_err());
        assert!(RunConfig::parse(&format!("{base}\nic.vertical = 4")).is_err());
    }

    #[test]
    fn initial_coefficient_presets_fill_the_expected_entries() {
        let text = format!(
            "{MINIMAL}\nresolution.nx = 8\nresolution.kmax = 4\nresolution.nq = 8\n\
             ic.kind = eigenmode\nic.wavenumber = 2\nic.vertical = 1\nic.amplitude = 0.5"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        let grid = cfg.build_grid().unwrap();
        let c = cfg.initial_coeffs(&grid).unwrap();
        assert_eq!(c[[2, 1]], Complex64::new(0.5, 0.0));
        assert_eq!(c.iter().filter(|v| **v != Complex64::default()).count(), 1);

        let text = format!(
            "{MINIMAL}\nresolution.nx = 8\nresolution.kmax = 4\nresolution.nq = 8\n\
             run.seed = 7\nic.kind = random\nic.band = 1\nic.amplitude = 1.0"
        );
        let cfg = RunConfig::parse(&text).unwrap();
        let grid = cfg.build_grid().unwrap();
        let c = cfg.initial_coeffs(&grid).unwrap();
        // band 1: wavenumbers 0..=1, verticals 0..=1
        for m in 0..=grid.nx() / 2 {
            for k in 0..grid.kmax() {
                let filled = m <= 1 && k <= 1;
                assert_eq!(c[[m, k]] != Complex64::default(), filled, "({m},{k})");
            }
        }
        assert_eq!(c[[0, 0]].im, 0.0);
        // identical seeds draw identical coefficients
        let again = cfg.initial_coeffs(&grid).unwrap();
        assert_eq!(c, again);
    }
}
