//! Convergence studies and reflectance sweeps.

use std::time::Instant;

use qpbem::assembly::{
    assemble_with_cache, energy_reflectance, energy_transmittance, rayleigh_amplitudes, relative_l2_error, solve, Current, Discretization, IncidentWave,
    KernelCache, RayleighMode, Side, System,
};
use qpbem::geometry::SurfacePoint;
use qpbem::math::CVec3;
use qpbem::reference::{exact_same_media_at, tmatrix_solve, PlanarSolution, PlanarStack};

use crate::config::{Problem, ReferenceKind};
use crate::CliError;

/// Gauss points per element direction for the Rayleigh projections.
const RAYLEIGH_QUADRATURE: usize = 8;

/// Exact interface currents of a problem.
pub enum Reference {
    Tmatrix(PlanarSolution),
    SameMedia(IncidentWave),
}

impl Reference {
    pub fn new(problem: &Problem, inc: &IncidentWave) -> Result<Option<Self>, CliError> {
        Ok(match problem.config.study.reference {
            ReferenceKind::Tmatrix => {
                let heights = problem.interfaces.iter().map(|s| s.height_range().0).collect();
                let stack = PlanarStack::new(problem.media.clone(), heights).map_err(|e| CliError::Config(e.to_string()))?;
                Some(Reference::Tmatrix(tmatrix_solve(&stack, inc)?))
            }
            ReferenceKind::SameMedia => Some(Reference::SameMedia(*inc)),
            ReferenceKind::None => None,
        })
    }

    /// (J, M) on interface i at a surface point.
    pub fn currents(&self, i: usize, sp: &SurfacePoint) -> (CVec3, CVec3) {
        match self {
            Reference::Tmatrix(t) => t.currents(i, sp.x[0], sp.x[1]),
            Reference::SameMedia(inc) => exact_same_media_at(inc, sp),
        }
    }

    /// Reflectance and transmittance, when known in closed form.
    pub fn energy(&self) -> (f64, f64) {
        match self {
            Reference::Tmatrix(t) => (t.reflectance(), t.transmittance()),
            Reference::SameMedia(_) => (0.0, 1.0),
        }
    }
}

/// Everything computed for one mesh level or sweep point.
pub struct Solved {
    pub disc: Discretization,
    pub system: System,
    pub state: qpbem::assembly::SolutionState,
    pub up: Vec<RayleighMode>,
    pub down: Vec<RayleighMode>,
    pub reflectance: f64,
    pub transmittance: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

/// Assembles and solves one level at one incident wave.
pub fn solve_level(problem: &Problem, level: usize, inc: &IncidentWave, cache: &mut KernelCache) -> Result<Solved, CliError> {
    let stack = problem.stack(level)?;
    let q = problem.q();
    let disc = Discretization::new(stack, [q, q], problem.variant, inc)?;
    let t = Instant::now();
    let system = assemble_with_cache(&disc, inc, &problem.options, cache)?;
    let assembly_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let state = solve(&system)?;
    let solve_seconds = t.elapsed().as_secs_f64();
    let order = problem.config.study.rayleigh_order;
    let up = rayleigh_amplitudes(&disc, &state, inc, Side::Up, order, RAYLEIGH_QUADRATURE)?;
    let down = rayleigh_amplitudes(&disc, &state, inc, Side::Down, order, RAYLEIGH_QUADRATURE)?;
    let reflectance = energy_reflectance(&up, inc);
    let transmittance = energy_transmittance(&down, inc, *problem.media.last().unwrap());
    Ok(Solved { disc, system, state, up, down, reflectance, transmittance, assembly_seconds, solve_seconds })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub level: usize,
    /// Largest element diameter over all interfaces.
    pub h: f64,
    /// Number of unknowns.
    pub n: usize,
    pub error_j: f64,
    pub error_m: f64,
    pub residual: f64,
    pub reflectance: f64,
    pub transmittance: f64,
    pub assembly_seconds: f64,
    pub solve_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slopes of log E_rel against log(1/h); None with fewer
    /// than two levels.
    pub order_j: Option<f64>,
    pub order_m: Option<f64>,
    pub reference_reflectance: f64,
    pub reference_transmittance: f64,
}

impl ConvergenceTable {
    /// Both error columns strictly decrease from level to level.
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error_j < w[0].error_j && w[1].error_m < w[0].error_m)
    }
}

/// Per-level callback, e.g. for dumping matrices.
pub type LevelHook<'a> = dyn FnMut(usize, &Solved) -> Result<(), CliError> + 'a;

/// E_rel of J and M on every configured level.
pub fn run_convergence(problem: &Problem, hook: &mut LevelHook<'_>) -> Result<ConvergenceTable, CliError> {
    let inc = problem.incident;
    let reference = Reference::new(problem, &inc)?.ok_or_else(|| CliError::Config("convergence study without a reference".into()))?;
    let mut cache = KernelCache::new();
    let mut rows = Vec::new();
    for &level in problem.levels() {
        let s = solve_level(problem, level, &inc, &mut cache)?;
        let exact = |i: usize, sp: &SurfacePoint| reference.currents(i, sp);
        let error_j = relative_l2_error(&s.disc, &s.state, &exact, Current::J)?;
        let error_m = relative_l2_error(&s.disc, &s.state, &exact, Current::M)?;
        let h = s.disc.stack().interfaces().iter().map(|i| i.mesh_size()).fold(0.0, f64::max);
        rows.push(ConvergenceRow {
            level,
            h,
            n: s.system.layout.total,
            error_j,
            error_m,
            residual: s.state.residual,
            reflectance: s.reflectance,
            transmittance: s.transmittance,
            assembly_seconds: s.assembly_seconds,
            solve_seconds: s.solve_seconds,
        });
        hook(level, &s)?;
    }
    let fit = |f: fn(&ConvergenceRow) -> f64| fitted_order(&rows.iter().map(|r| (r.h, f(r))).collect::<Vec<_>>());
    let (reference_reflectance, reference_transmittance) = reference.energy();
    Ok(ConvergenceTable { order_j: fit(|r| r.error_j), order_m: fit(|r| r.error_m), rows, reference_reflectance, reference_transmittance })
}

/// Least-squares slope of log e against log(1/h).
pub fn fitted_order(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(h, e)| (-h.ln(), e.ln())).collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeEfficiency {
    pub side: Side,
    pub nu: [i32; 2],
    pub efficiency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepOutcome {
    Solved {
        reflectance: f64,
        transmittance: f64,
        /// Reference reflectance, when the config names one.
        reference: Option<f64>,
        modes: Vec<ModeEfficiency>,
        seconds: f64,
    },
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub omega: f64,
    pub outcome: SweepOutcome,
}

/// R, T and per-order efficiencies at every configured frequency on the
/// finest level. Frequencies at a Rayleigh anomaly are skipped.
pub fn run_reflectance_sweep(problem: &Problem, hook: &mut LevelHook<'_>) -> Result<Vec<SweepRow>, CliError> {
    let level = *problem.levels().last().unwrap();
    let mut rows = Vec::new();
    for &omega in &problem.config.study.omegas {
        let inc = problem.incident_at(omega)?;
        let mut cache = KernelCache::new();
        let t = Instant::now();
        let outcome = match solve_level(problem, level, &inc, &mut cache) {
            Ok(s) => {
                let reference = Reference::new(problem, &inc)?.map(|r| r.energy().0);
                let bottom = *problem.media.last().unwrap();
                let mut modes = Vec::new();
                for (side, list) in [(Side::Up, &s.up), (Side::Down, &s.down)] {
                    for m in list.iter().filter(|m| m.propagating) {
                        let efficiency = match side {
                            Side::Up => energy_reflectance(std::slice::from_ref(m), &inc),
                            Side::Down => energy_transmittance(std::slice::from_ref(m), &inc, bottom),
                        };
                        modes.push(ModeEfficiency { side, nu: m.nu, efficiency });
                    }
                }
                hook(level, &s)?;
                SweepOutcome::Solved { reflectance: s.reflectance, transmittance: s.transmittance, reference, modes, seconds: t.elapsed().as_secs_f64() }
            }
            Err(CliError::Numerical(qpbem::Error::Anomaly(m))) => SweepOutcome::Skipped(format!("Rayleigh anomaly: {m}")),
            Err(e) => return Err(e),
        };
        rows.push(SweepRow { omega, outcome });
    }
    Ok(rows)
}
