//! File emission: time-series CSV, VTK snapshots, and the spectrum, eigen-
//! function, and conduction-profile tables behind the CLI subcommands.
//!
//! Every float is printed as `{:.16e}` (17 significant digits), which makes
//! all emissions byte-for-byte deterministic for a given build and config
//! and round-trips exactly through parsing.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;

use crate::config::OutputFormats;
use crate::diagnostics::DiagnosticsRecord;
use crate::domain::ConductionLift;
use crate::error::Result;
use crate::fields::Grid;
use crate::runner::{write_checkpoint, RunHooks};
use crate::transport::{FlowState, Transport};

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Header row for the time-series CSV of a domain with `n_interfaces`
/// interior interfaces and `n_flux` flux-profile samples.
pub fn csv_header(n_interfaces: usize, n_flux: usize) -> String {
    let mut out = String::from(
        "t,E,dissipation,energy_residual,L2,V,L4,Linf,min_phi,max_phi,\
         Wnorm,Lnorm,W_over_L,div_defect,cfl",
    );
    for j in 0..n_interfaces {
        let _ = write!(out, ",iface_{j}_phi,iface_{j}_flux,iface_{j}_uz,iface_{j}_P");
    }
    for s in 0..n_flux {
        let _ = write!(out, ",flux_z_{s}");
    }
    out
}

/// One CSV data row; column order matches `csv_header` for the record's
/// interface and flux-sample counts.
pub fn csv_row(rec: &DiagnosticsRecord) -> String {
    let mut cols = vec![
        fmt(rec.t),
        fmt(rec.energy),
        fmt(rec.dissipation),
        fmt(rec.energy_residual),
        fmt(rec.l2),
        fmt(rec.v_norm),
        fmt(rec.l4),
        fmt(rec.linf),
        fmt(rec.min_phi),
        fmt(rec.max_phi),
        fmt(rec.w_norm),
        fmt(rec.l_norm),
        fmt(rec.w_over_l),
        fmt(rec.div_defect),
        fmt(rec.cfl),
    ];
    for iface in &rec.interfaces {
        cols.push(fmt(iface.phi));
        cols.push(fmt(iface.flux));
        cols.push(fmt(iface.uz));
        cols.push(fmt(iface.pressure));
    }
    for sample in &rec.flux {
        cols.push(fmt(sample.value));
    }
    cols.join(",")
}

/// Horizontal-space pressure at the grid nodes, synthesized from the modal
/// element-mesh coefficients.
fn pressure_nodal(tr: &Transport, state: &FlowState) -> Result<Array2<f64>> {
    let grid = tr.grid();
    let ny = grid.nx() / 2;
    let nz = grid.z().len();
    let mut rows = Array2::zeros((ny + 1, nz));
    for m in 0..=ny {
        let re: Vec<f64> = state.pressure.row(m).iter().map(|c| c.re).collect();
        let im: Vec<f64> = state.pressure.row(m).iter().map(|c| c.im).collect();
        let has_re = re.iter().any(|&v| v != 0.0);
        let has_im = im.iter().any(|&v| v != 0.0);
        if !has_re && !has_im {
            continue;
        }
        let solver = tr.solver(m);
        for (q, &z) in grid.z().iter().enumerate() {
            let p_re = if has_re { solver.eval(&re, z).0 } else { 0.0 };
            let p_im = if has_im { solver.eval(&im, z).0 } else { 0.0 };
            rows[[m, q]] = Complex64::new(p_re, p_im);
        }
    }
    grid.profiles_to_nodal(&rows)
}

/// Legacy-ASCII VTK rectilinear snapshot: the uniform x grid against the
/// concatenated per-layer Gauss nodes in z, with point data phi (total
/// concentration), u_x, u_z, and P. Points run x-fastest, z-slowest.
pub fn vtk_snapshot(tr: &Transport, state: &FlowState) -> Result<String> {
    let grid = tr.grid();
    let nx = grid.nx();
    let nz = grid.z().len();
    let phi = tr.total_nodal(state)?;
    let pressure = pressure_nodal(tr, state)?;

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(out, "t = {} step = {}", fmt(state.t), state.step);
    out.push_str("ASCII\nDATASET RECTILINEAR_GRID\n");
    let _ = writeln!(out, "DIMENSIONS {nx} 1 {nz}");
    let _ = writeln!(out, "X_COORDINATES {nx} double");
    for &x in grid.x() {
        out.push_str(&fmt(x));
        out.push('\n');
    }
    out.push_str("Y_COORDINATES 1 double\n0\n");
    let _ = writeln!(out, "Z_COORDINATES {nz} double");
    for &z in grid.z() {
        out.push_str(&fmt(z));
        out.push('\n');
    }
    let _ = writeln!(out, "POINT_DATA {}", nx * nz);
    for (name, table) in [
        ("phi", &phi),
        ("u_x", &state.ux),
        ("u_z", &state.uz),
        ("P", &pressure),
    ] {
        let _ = writeln!(out, "SCALARS {name} double 1");
        out.push_str("LOOKUP_TABLE default\n");
        for q in 0..nz {
            for i in 0..nx {
                out.push_str(&fmt(table[[i, q]]));
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Eigenvalue table over the retained spectrum: one row per (wavenumber,
/// vertical index) pair, columns kappa, k, lambda.
pub fn spectrum_csv(grid: &Grid) -> String {
    let mut out = String::from("kappa,k,lambda\n");
    for m in 0..=grid.nx() / 2 {
        let kappa = grid.kappa(m);
        let evs = grid.basis(m).eigenvalues();
        for (k, &lambda) in evs.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", fmt(kappa), k, fmt(lambda));
        }
    }
    out
}

/// Eigenfunctions of the horizontal mean (kappa = 0) sampled at the grid
/// nodes: columns z, v_1..v_K.
pub fn eigenfunctions_csv(grid: &Grid) -> String {
    let kmax = grid.kmax();
    let mut out = String::from("z");
    for k in 1..=kmax {
        let _ = write!(out, ",v_{k}");
    }
    out.push('\n');
    let table = grid.v_table(0);
    for (q, &z) in grid.z().iter().enumerate() {
        out.push_str(&fmt(z));
        for k in 0..kmax {
            out.push(',');
            out.push_str(&fmt(table[[k, q]]));
        }
        out.push('\n');
    }
    out
}

/// Steady conduction profile sampled at the grid nodes and at every
/// interface (walls included), ascending in z: columns z, phi.
pub fn lift_csv(grid: &Grid, lift: &ConductionLift) -> String {
    let mut depths: Vec<f64> = grid.z().to_vec();
    depths.extend_from_slice(grid.stack().interfaces());
    depths.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = String::from("z,phi\n");
    for &z in &depths {
        let _ = writeln!(out, "{},{}", fmt(z), fmt(lift.value(z)));
    }
    out
}

/// Run hooks that stream records into `series.csv`, drop VTK snapshots and
/// checkpoints named by step, and leave a final checkpoint on `finish`.
pub struct RunEmitter<'t, 'g> {
    tr: &'t Transport<'g>,
    dir: PathBuf,
    formats: OutputFormats,
    csv: Option<BufWriter<File>>,
}

impl<'t, 'g> RunEmitter<'t, 'g> {
    pub fn new(tr: &'t Transport<'g>, dir: &Path, formats: OutputFormats) -> RunEmitter<'t, 'g> {
        RunEmitter {
            tr,
            dir: dir.to_path_buf(),
            formats,
            csv: None,
        }
    }

    fn checkpoint_path(&self, step: u64) -> PathBuf {
        self.dir.join(format!("checkpoint_{step:08}.ckpt"))
    }

    /// Flush the CSV stream and write the final checkpoint.
    pub fn finish(mut self, state: &FlowState) -> Result<()> {
        if let Some(mut csv) = self.csv.take() {
            csv.flush()?;
        }
        if self.formats.checkpoint {
            write_checkpoint(state, self.tr.grid(), &self.dir.join("checkpoint_final.ckpt"))?;
        }
        Ok(())
    }
}

impl RunHooks for RunEmitter<'_, '_> {
    fn on_record(&mut self, record: &DiagnosticsRecord, state: &FlowState) -> Result<()> {
        if self.formats.csv {
            if self.csv.is_none() {
                let file = File::create(self.dir.join("series.csv"))?;
                let mut writer = BufWriter::new(file);
                writeln!(
                    writer,
                    "{}",
                    csv_header(record.interfaces.len(), record.flux.len())
                )?;
                self.csv = Some(writer);
            }
            let writer = self.csv.as_mut().unwrap();
            writeln!(writer, "{}", csv_row(record))?;
        }
        if self.formats.vtk {
            let text = vtk_snapshot(self.tr, state)?;
            let path = self.dir.join(format!("snapshot_{:08}.vtk", state.step));
            std::fs::write(path, text)?;
        }
        Ok(())
    }

    fn on_checkpoint(&mut self, state: &FlowState) -> Result<()> {
        if self.formats.checkpoint {
            write_checkpoint(state, self.tr.grid(), &self.checkpoint_path(state.step))?;
        }
        Ok(())
    }
}
