//! CSV tables, JSON sidecars and binary matrix dumps.
//!
//! Floats are written with Rust's shortest round-trip formatting, so the CSV
//! files of two runs of the same config compare byte for byte. Wall times
//! only go into the sidecar.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use qpbem::assembly::{Side, System};
use qpbem::math::CVec3;

use crate::config::{Problem, ProblemConfig};
use crate::study::{ConvergenceTable, Reference, SweepOutcome, SweepRow};
use crate::CliError;

pub const GIT_REVISION: &str = env!("QPBEM_GIT_REV");

/// SHA-256 of the canonical TOML form of the effective config.
pub fn config_hash(config: &ProblemConfig) -> String {
    let d = Sha256::digest(config.to_toml().as_bytes());
    d.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn convergence_csv(t: &ConvergenceTable) -> String {
    let mut s = String::from("level,h,n,error_j,error_m,residual,reflectance,transmittance\n");
    for r in &t.rows {
        let _ = writeln!(s, "{},{:e},{},{:e},{:e},{:e},{:e},{:e}", r.level, r.h, r.n, r.error_j, r.error_m, r.residual, r.reflectance, r.transmittance);
    }
    s
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Up => "reflected",
        Side::Down => "transmitted",
    }
}

/// The sweep table and the per-order efficiency table.
pub fn sweep_csv(rows: &[SweepRow]) -> (String, String) {
    let mut s = String::from("omega,status,reflectance,transmittance,energy,reference_reflectance,reason\n");
    let mut m = String::from("omega,side,nu1,nu2,efficiency\n");
    for r in rows {
        match &r.outcome {
            SweepOutcome::Solved { reflectance, transmittance, reference, modes, .. } => {
                let refl = reference.map(|v| format!("{v:e}")).unwrap_or_default();
                let _ = writeln!(s, "{:e},ok,{:e},{:e},{:e},{refl},", r.omega, reflectance, transmittance, reflectance + transmittance);
                for e in modes {
                    let _ = writeln!(m, "{:e},{},{},{},{:e}", r.omega, side_name(e.side), e.nu[0], e.nu[1], e.efficiency);
                }
            }
            SweepOutcome::Skipped(reason) => {
                let _ = writeln!(s, "{:e},skipped,,,,,\"{}\"", r.omega, reason.replace('"', "'"));
            }
        }
    }
    (s, m)
}

/// Reference currents on a grid×grid parameter grid of every interface.
pub fn reference_grid_csv(problem: &Problem, reference: &Reference, grid: usize) -> Result<String, CliError> {
    let mut s = String::from("interface,t1,t2,x1,x2,x3");
    for f in ["j", "m"] {
        for c in 1..=3 {
            let _ = write!(s, ",{f}{c}_re,{f}{c}_im");
        }
    }
    s.push('\n');
    for (i, surf) in problem.interfaces.iter().enumerate() {
        let (a1, b1) = surf.space(0).domain();
        let (a2, b2) = surf.space(1).domain();
        for u in 0..grid {
            for v in 0..grid {
                let t1 = a1 + (b1 - a1) * (u as f64 + 0.5) / grid as f64;
                let t2 = a2 + (b2 - a2) * (v as f64 + 0.5) / grid as f64;
                let sp = surf.eval(t1, t2)?;
                let (j, m) = reference.currents(i, &sp);
                let _ = write!(s, "{i},{t1:e},{t2:e},{:e},{:e},{:e}", sp.x[0], sp.x[1], sp.x[2]);
                for f in [j, m] as [CVec3; 2] {
                    for c in f {
                        let _ = write!(s, ",{:e},{:e}", c.re, c.im);
                    }
                }
                s.push('\n');
            }
        }
    }
    Ok(s)
}

/// Matrix as u64 rows, u64 cols, then row-major entries as (re, im) f64
/// pairs, all little-endian.
pub fn matrix_bytes(sys: &System) -> Vec<u8> {
    let (r, c) = (sys.matrix.nrows(), sys.matrix.ncols());
    let mut out = Vec::with_capacity(16 + 16 * r * c);
    out.extend((r as u64).to_le_bytes());
    out.extend((c as u64).to_le_bytes());
    for i in 0..r {
        for j in 0..c {
            let z = sys.matrix[(i, j)];
            out.extend(z.re.to_le_bytes());
            out.extend(z.im.to_le_bytes());
        }
    }
    out
}

/// Right-hand side as u64 length then (re, im) pairs, little-endian.
pub fn rhs_bytes(sys: &System) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 16 * sys.rhs.len());
    out.extend((sys.rhs.len() as u64).to_le_bytes());
    for z in &sys.rhs {
        out.extend(z.re.to_le_bytes());
        out.extend(z.im.to_le_bytes());
    }
    out
}

/// Sidecar metadata: config hash, revision, timings and the headline results.
pub fn sidecar(config: &ProblemConfig, table: &str, timings: Value, results: Value) -> Value {
    json!({
        "name": config.name,
        "table": table,
        "config_sha256": config_hash(config),
        "git_revision": GIT_REVISION,
        "version": env!("CARGO_PKG_VERSION"),
        "timings_seconds": timings,
        "results": results,
    })
}

pub fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(v).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}
