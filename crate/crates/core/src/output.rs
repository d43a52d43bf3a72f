//! CSV writers for diagnostics series and particle snapshots.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every finite double exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::mesh::ParticleEnsemble;

pub const SERIES_HEADER: &str = "t,H_total,H_err_rel,kinetic,electric,coupling,boltzmann,momentum,momentum_err,\
neutrality_err,temperature,mode1,mode2,mode3,mode4,pb_iters,dg_iters";

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_series(records: &[DiagnosticsRecord], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "{SERIES_HEADER}").map_err(io)?;
    for r in records {
        let floats = [
            r.t,
            r.h_total,
            r.h_err_rel,
            r.kinetic,
            r.electric,
            r.coupling,
            r.boltzmann,
            r.momentum,
            r.momentum_err,
            r.neutrality_err,
            r.temperature,
            r.mode_amp[0],
            r.mode_amp[1],
            r.mode_amp[2],
            r.mode_amp[3],
        ];
        for v in floats {
            write!(out, "{v:.16e},").map_err(io)?;
        }
        writeln!(out, "{},{}", r.pb_iters, r.dg_iters).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// `# t = <t>` line, `x,v,w` header, then one row per particle.
pub fn write_snapshot(particles: &ParticleEnsemble, t: f64, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(out, "# t = {t:.16e}").map_err(io)?;
    writeln!(out, "x,v,w").map_err(io)?;
    for k in 0..particles.len() {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e}",
            particles.positions[k], particles.velocities[k], particles.weights[k]
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}
