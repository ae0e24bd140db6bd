//! Driver around the `qpbem` solver: TOML problem definitions, convergence
//! studies against closed-form references, reflectance sweeps, self-checks,
//! and CSV/JSON/binary outputs.

pub mod checks;
pub mod config;
pub mod output;
pub mod study;

use std::fmt;
use std::fs;
use std::path::Path;

use serde_json::json;

use config::{Problem, ProblemConfig, StudyKind};
use study::{ConvergenceTable, Reference, SweepOutcome, SweepRow};

/// Failures of a run, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent configuration (exit 2).
    Config(String),
    /// The solver failed (exit 3).
    Numerical(qpbem::Error),
    /// One or more self-checks failed (exit 3).
    Check(String),
    /// Output could not be written (exit 1).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Check(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numerical(e) => write!(f, "{e}"),
            CliError::Check(m) => write!(f, "self-check failed: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<qpbem::Error> for CliError {
    fn from(e: qpbem::Error) -> Self {
        CliError::Numerical(e)
    }
}

/// Command-line replacements for config values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub levels: Option<Vec<usize>>,
    pub regular: Option<usize>,
    pub singular: Option<usize>,
    pub near: Option<usize>,
    pub ewald_eps: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, c: &mut ProblemConfig) {
        if let Some(l) = &self.levels {
            c.discretization.levels = l.clone();
        }
        let q = &mut c.quadrature;
        q.regular = self.regular.unwrap_or(q.regular);
        q.singular = self.singular.unwrap_or(q.singular);
        q.near = self.near.unwrap_or(q.near);
        q.ewald_eps = self.ewald_eps.unwrap_or(q.ewald_eps);
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ProblemConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut c = ProblemConfig::from_toml(&text)?;
    overrides.apply(&mut c);
    Ok(c)
}

/// What a run produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Convergence(ConvergenceTable),
    Sweep(Vec<SweepRow>),
}

/// Runs the study of a config and writes its outputs into `out`.
pub fn run(config: &ProblemConfig, out: &Path) -> Result<Outcome, CliError> {
    let problem = Problem::from_config(config)?;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    output::write_file(&out.join("config.toml"), config.to_toml().as_bytes())?;

    if config.output.reference_grid > 0 {
        if let Some(r) = Reference::new(&problem, &problem.incident)? {
            let csv = output::reference_grid_csv(&problem, &r, config.output.reference_grid)?;
            output::write_file(&out.join("reference_currents.csv"), csv.as_bytes())?;
        }
    }
    let dump = config.output.dump_matrix;
    let mut dumped = 0usize;
    let mut hook = |level: usize, s: &study::Solved| -> Result<(), CliError> {
        if dump {
            let tag = if config.study.kind == StudyKind::Sweep { format!("level{level}_{dumped}") } else { format!("level{level}") };
            output::write_file(&out.join(format!("matrix_{tag}.bin")), &output::matrix_bytes(&s.system))?;
            output::write_file(&out.join(format!("rhs_{tag}.bin")), &output::rhs_bytes(&s.system))?;
            dumped += 1;
        }
        Ok(())
    };

    match config.study.kind {
        StudyKind::Convergence => {
            let t = study::run_convergence(&problem, &mut hook)?;
            output::write_file(&out.join("convergence.csv"), output::convergence_csv(&t).as_bytes())?;
            let timings: Vec<_> = t.rows.iter().map(|r| json!({"level": r.level, "assembly": r.assembly_seconds, "solve": r.solve_seconds})).collect();
            let results = json!({
                "order_j": t.order_j,
                "order_m": t.order_m,
                "monotone": t.monotone(),
                "reference_reflectance": t.reference_reflectance,
                "reference_transmittance": t.reference_transmittance,
            });
            output::write_json(&out.join("convergence.json"), &output::sidecar(config, "convergence.csv", json!(timings), results))?;
            Ok(Outcome::Convergence(t))
        }
        StudyKind::Sweep => {
            let rows = study::run_reflectance_sweep(&problem, &mut hook)?;
            let (table, modes) = output::sweep_csv(&rows);
            output::write_file(&out.join("sweep.csv"), table.as_bytes())?;
            output::write_file(&out.join("sweep_modes.csv"), modes.as_bytes())?;
            let timings: Vec<_> = rows
                .iter()
                .map(|r| match &r.outcome {
                    SweepOutcome::Solved { seconds, .. } => json!({"omega": r.omega, "total": seconds}),
                    SweepOutcome::Skipped(_) => json!({"omega": r.omega, "total": null}),
                })
                .collect();
            let solved: Vec<_> = rows.iter().filter_map(|r| match &r.outcome {
                SweepOutcome::Solved { reflectance, transmittance, reference, .. } => Some((reflectance, transmittance, reference)),
                SweepOutcome::Skipped(_) => None,
            }).collect();
            let balance = solved.iter().map(|(r, t, _)| (*r + *t - 1.0).abs()).fold(0.0, f64::max);
            let dev = solved.iter().filter_map(|(r, _, x)| x.map(|x| (*r - x).abs())).fold(0.0, f64::max);
            let results = json!({
                "solved": solved.len(),
                "skipped": rows.len() - solved.len(),
                "max_energy_defect": balance,
                "max_reflectance_deviation": dev,
            });
            output::write_json(&out.join("sweep.json"), &output::sidecar(config, "sweep.csv", json!(timings), results))?;
            Ok(Outcome::Sweep(rows))
        }
    }
}

/// Human-readable summary printed by the binary.
pub fn summary(o: &Outcome) -> String {
    let mut s = String::new();
    match o {
        Outcome::Convergence(t) => {
            s += "level          h      N       E_rel(J)       E_rel(M)    R          T\n";
            for r in &t.rows {
                s += &format!(
                    "{:>5} {:>10.4e} {:>6} {:>14.6e} {:>14.6e} {:>10.6} {:>10.6}\n",
                    r.level, r.h, r.n, r.error_j, r.error_m, r.reflectance, r.transmittance
                );
            }
            let f = |v: Option<f64>| v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
            s += &format!("fitted order: J {}  M {}\n", f(t.order_j), f(t.order_m));
        }
        Outcome::Sweep(rows) => {
            s += "     omega          R          T      R+T\n";
            for r in rows {
                match &r.outcome {
                    SweepOutcome::Solved { reflectance, transmittance, .. } => {
                        s += &format!("{:>10.4} {:>10.6} {:>10.6} {:>8.6}\n", r.omega, reflectance, transmittance, reflectance + transmittance)
                    }
                    SweepOutcome::Skipped(m) => s += &format!("{:>10.4} skipped: {m}\n", r.omega),
                }
            }
        }
    }
    s
}
