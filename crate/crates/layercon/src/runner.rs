//! Time-loop orchestration and checkpoint serialization.
//!
//! `run` advances a flow state to a horizon with a fixed step, shortening
//! only the final step to land on the horizon exactly, and collects
//! diagnostics records at a step cadence plus the initial and final states.
//! Checkpoints are a text header (version, time, step, grid shape, stack
//! hash) followed by the modal coefficients as little-endian 64-bit floats,
//! wavenumber-major, (real, imaginary) pairs; a state resumed from one
//! reproduces the uninterrupted trajectory bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::diagnostics::{measure, DiagnosticsRecord};
use crate::error::{Error, Result};
use crate::fields::Grid;
use crate::transport::{FlowState, Transport};

pub const CHECKPOINT_VERSION: u32 = 1;

/// When to stop and how often to sample.
#[derive(Debug, Clone)]
pub struct Schedule {
    /// absolute stop time; a state already at or past it takes no steps
    pub t_end: f64,
    /// record diagnostics every this many steps (counted from step 0)
    pub cadence: u64,
    /// fire the checkpoint hook every this many steps; 0 disables it
    pub checkpoint_every: u64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !self.t_end.is_finite() || self.t_end < 0.0 {
            return Err(Error::Stepper(format!(
                "horizon must be finite and nonnegative, got {}",
                self.t_end
            )));
        }
        if self.cadence == 0 {
            return Err(Error::Stepper(
                "record cadence must be at least one step".into(),
            ));
        }
        Ok(())
    }
}

/// Callbacks fired as the loop produces records and checkpoint states.
/// Errors abort the run.
pub trait RunHooks {
    fn on_record(&mut self, record: &DiagnosticsRecord, state: &FlowState) -> Result<()> {
        let _ = (record, state);
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &FlowState) -> Result<()> {
        let _ = state;
        Ok(())
    }
}

/// Hooks that do nothing; `run` with these only accumulates records.
pub struct NoHooks;

impl RunHooks for NoHooks {}

/// Final state and the records collected on the way.
#[derive(Debug)]
pub struct RunOutcome {
    pub state: FlowState,
    pub records: Vec<DiagnosticsRecord>,
}

/// Advance `state` to the horizon. The initial state is always recorded;
/// later records arrive when the global step count hits the cadence, and
/// the final state is recorded unconditionally. A horizon at or before the
/// state's time returns immediately with that single record.
pub fn run(
    tr: &Transport,
    mut state: FlowState,
    schedule: &Schedule,
    hooks: &mut dyn RunHooks,
) -> Result<RunOutcome> {
    schedule.validate()?;
    let dt = tr.stepper().dt;
    let mut records = Vec::new();
    let first = measure(tr, &state)?;
    hooks.on_record(&first, &state)?;
    records.push(first);

    loop {
        let remaining = schedule.t_end - state.t;
        // a sliver below one relative ulp of the step is arrival, not a step
        if remaining <= dt * 1e-9 {
            break;
        }
        let dt_cap = if remaining <= dt * (1.0 + 1e-9) {
            remaining
        } else {
            dt
        };
        tr.step(&mut state, dt_cap)?;
        let done = schedule.t_end - state.t <= dt * 1e-9;
        if done || state.step.is_multiple_of(schedule.cadence) {
            let rec = measure(tr, &state)?;
            hooks.on_record(&rec, &state)?;
            records.push(rec);
        }
        if schedule.checkpoint_every > 0 && state.step.is_multiple_of(schedule.checkpoint_every) {
            hooks.on_checkpoint(&state)?;
        }
        if done {
            break;
        }
    }
    Ok(RunOutcome { state, records })
}

/// Serialize a state's modal coefficients with enough header to refuse
/// resumption on a different grid or stack.
pub fn write_checkpoint(state: &FlowState, grid: &Grid, path: &Path) -> Result<()> {
    let coeffs = state.phi.require_modal()?;
    let mut header = String::new();
    let _ = writeln!(header, "version: {CHECKPOINT_VERSION}");
    let _ = writeln!(header, "time: {:.16e}", state.t);
    let _ = writeln!(header, "step: {}", state.step);
    let _ = writeln!(header, "nx: {}", grid.nx());
    let _ = writeln!(header, "kmax: {}", grid.kmax());
    let _ = writeln!(header, "stack_hash: {:016x}", grid.stack().content_hash());
    header.push('\n');

    let mut bytes = header.into_bytes();
    bytes.reserve(coeffs.len() * 16);
    for m in 0..coeffs.nrows() {
        for k in 0..coeffs.ncols() {
            let c = coeffs[[m, k]];
            bytes.extend_from_slice(&c.re.to_le_bytes());
            bytes.extend_from_slice(&c.im.to_le_bytes());
        }
    }
    fs::write(path, &bytes)
        .map_err(|e| Error::Checkpoint(format!("writing {}: {e}", path.display())))
}

fn header_field<'a>(fields: &'a [(String, String)], key: &str) -> Result<&'a str> {
    fields
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Checkpoint(format!("header is missing '{key}'")))
}

/// Read a checkpoint back, validating it against the grid it will resume
/// on. Returns the modal coefficients, time, and step count.
pub fn read_checkpoint(path: &Path, grid: &Grid) -> Result<(Array2<Complex64>, f64, u64)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("reading {}: {e}", path.display())))?;
    let sep = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| Error::Checkpoint("no header separator found".into()))?;
    let header = std::str::from_utf8(&bytes[..sep + 1])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;

    let mut fields = Vec::new();
    for line in header.lines() {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| Error::Checkpoint(format!("malformed header line '{line}'")))?;
        fields.push((key.trim().to_string(), value.trim().to_string()));
    }

    let version: u32 = header_field(&fields, "version")?
        .parse()
        .map_err(|_| Error::Checkpoint("unreadable version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let time: f64 = header_field(&fields, "time")?
        .parse()
        .map_err(|_| Error::Checkpoint("unreadable time".into()))?;
    let step: u64 = header_field(&fields, "step")?
        .parse()
        .map_err(|_| Error::Checkpoint("unreadable step".into()))?;
    let nx: usize = header_field(&fields, "nx")?
        .parse()
        .map_err(|_| Error::Checkpoint("unreadable nx".into()))?;
    let kmax: usize = header_field(&fields, "kmax")?
        .parse()
        .map_err(|_| Error::Checkpoint("unreadable kmax".into()))?;
    let hash = header_field(&fields, "stack_hash")?;

    if nx != grid.nx() || kmax != grid.kmax() {
        return Err(Error::Checkpoint(format!(
            "resolution {nx} x {kmax} does not match the grid's {} x {}",
            grid.nx(),
            grid.kmax()
        )));
    }
    let want_hash = format!("{:016x}", grid.stack().content_hash());
    if hash != want_hash {
        return Err(Error::Checkpoint(
            "layer stack differs from the one the checkpoint was written with".into(),
        ));
    }

    let rows = nx / 2 + 1;
    let data = &bytes[sep + 2..];
    let expected = rows * kmax * 16;
    if data.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} coefficient bytes, found {}",
            data.len()
        )));
    }
    let mut coeffs = Array2::zeros((rows, kmax));
    for m in 0..rows {
        for k in 0..kmax {
            let at = (m * kmax + k) * 16;
            let re = f64::from_le_bytes(data[at..at + 8].try_into().unwrap());
            let im = f64::from_le_bytes(data[at + 8..at + 16].try_into().unwrap());
            coeffs[[m, k]] = Complex64::new(re, im);
        }
    }
    Ok((coeffs, time, step))
}

/// Rebuild a resumable flow state from a checkpoint.
pub fn resume_state(tr: &Transport, path: &Path) -> Result<FlowState> {
    let (coeffs, time, step) = read_checkpoint(path, tr.grid())?;
    tr.state_at(coeffs, time, step)
}
