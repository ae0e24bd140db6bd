//! Problem definitions read from TOML.
//!
//! A config file describes one layered structure, one incident wave, the
//! discretization and the study to run. See `configs/` for complete examples
//! and the README for the schema.

use serde::{Deserialize, Serialize};

use qpbem::assembly::{AssemblyOptions, IncidentWave, KernelMode, LayerStack, Medium};
use qpbem::basis::Variant;
use qpbem::geometry::PeriodicSurface;
use qpbem::greens::EwaldContext;
use qpbem::math::PI;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub name: String,
    /// Lattice periods (L1, L2).
    pub periods: [f64; 2],
    /// Layers from top (incident side) to bottom.
    #[serde(rename = "layer")]
    pub layers: Vec<LayerSpec>,
    /// Interfaces from top to bottom; interface i separates layers i and i+1.
    #[serde(rename = "interface")]
    pub interfaces: Vec<InterfaceSpec>,
    pub incident: IncidentSpec,
    pub discretization: DiscretizationSpec,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    pub study: StudySpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub eps: f64,
    #[serde(default = "one")]
    pub mu: f64,
}

/// Interface geometry. Every kind is an Algorithm-1 surface with n control
/// points and degree p per direction, shifted rigidly by `offset` in x3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterfaceSpec {
    Plane {
        n: [usize; 2],
        p: [usize; 2],
        #[serde(default)]
        offset: f64,
    },
    /// Heights amplitude · cos(2π m1 x/L1) · cos(2π m2 y/L2) at the control
    /// abscissae.
    Cosine {
        n: [usize; 2],
        p: [usize; 2],
        #[serde(default)]
        offset: f64,
        amplitude: f64,
        #[serde(default = "unit_harmonics")]
        harmonics: [u32; 2],
    },
    /// The (n1 − p1)(n2 − p2) free control heights, row-major in the first
    /// direction.
    Heights {
        n: [usize; 2],
        p: [usize; 2],
        #[serde(default)]
        offset: f64,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncidentSpec {
    pub omega: f64,
    /// Polar angle from −e3, radians.
    pub theta: f64,
    /// Azimuth, radians.
    pub phi: f64,
    /// Electric amplitude a^inc.
    pub amplitude: [f64; 3],
    /// Remove the component of `amplitude` along k instead of rejecting it.
    #[serde(default)]
    pub project: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    Np,
    Mp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscretizationSpec {
    /// Basis degree in both directions.
    pub q: usize,
    #[serde(default = "default_variant")]
    pub variant: VariantSpec,
    /// Uniform refinement levels (0 = the mesh as defined).
    pub levels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    Auto,
    Direct,
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub regular: usize,
    pub singular: usize,
    pub near: usize,
    pub near_factor: f64,
    pub ewald_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ewald_split: Option<f64>,
    pub kernel: KernelSpec,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        let d = AssemblyOptions::default();
        QuadratureSpec {
            regular: d.regular_order,
            singular: d.singular_order,
            near: d.near_order,
            near_factor: d.near_factor,
            ewald_eps: d.ewald_eps,
            ewald_split: d.ewald_split,
            kernel: KernelSpec::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Convergence,
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Transfer-matrix solution; all interfaces must be planes.
    Tmatrix,
    /// n × H^inc, E^inc × n; all layers must be identical.
    SameMedia,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySpec {
    pub kind: StudyKind,
    pub reference: ReferenceKind,
    /// Rayleigh orders |ν1|, |ν2| ≤ this are reported.
    #[serde(default = "default_rayleigh_order")]
    pub rayleigh_order: usize,
    /// Frequencies of a sweep; the sweep runs on the finest level.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omegas: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Points per direction of the reference-current CSV grids (0 = none).
    #[serde(default)]
    pub reference_grid: usize,
    /// Write the assembled matrix and right-hand side of every level.
    #[serde(default)]
    pub dump_matrix: bool,
}

fn one() -> f64 {
    1.0
}

fn unit_harmonics() -> [u32; 2] {
    [1, 1]
}

fn default_variant() -> VariantSpec {
    VariantSpec::Np
}

fn default_rayleigh_order() -> usize {
    2
}

impl ProblemConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("cannot parse config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl InterfaceSpec {
    fn np(&self) -> ([usize; 2], [usize; 2]) {
        match *self {
            InterfaceSpec::Plane { n, p, .. } | InterfaceSpec::Cosine { n, p, .. } | InterfaceSpec::Heights { n, p, .. } => (n, p),
        }
    }

    pub fn is_plane(&self) -> bool {
        matches!(self, InterfaceSpec::Plane { .. })
    }

    pub fn build(&self, periods: [f64; 2]) -> qpbem::Result<PeriodicSurface> {
        match self {
            InterfaceSpec::Plane { n, p, offset } => PeriodicSurface::plane(periods, *n, *p, *offset),
            InterfaceSpec::Cosine { n, p, offset, amplitude, harmonics } => {
                let (a, m) = (*amplitude, *harmonics);
                let s = PeriodicSurface::from_height_fn(periods, *n, *p, |x, y| {
                    a * (2.0 * PI * m[0] as f64 * x / periods[0]).cos() * (2.0 * PI * m[1] as f64 * y / periods[1]).cos()
                })?;
                Ok(s.with_offset(*offset))
            }
            InterfaceSpec::Heights { n, p, offset, values } => Ok(PeriodicSurface::from_heights(periods, *n, *p, values)?.with_offset(*offset)),
        }
    }
}

/// A validated problem: everything the studies need, built once.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ProblemConfig,
    pub media: Vec<Medium>,
    pub interfaces: Vec<PeriodicSurface>,
    pub incident: IncidentWave,
    pub variant: Variant,
    pub options: AssemblyOptions,
}

impl Problem {
    /// Checks the config against the solver's preconditions without
    /// assembling anything.
    pub fn from_config(config: &ProblemConfig) -> Result<Self, CliError> {
        let cfg = |m: String| CliError::Config(m);
        let c = config;
        if c.layers.len() != c.interfaces.len() + 1 {
            return Err(cfg(format!("{} layers need {} interfaces, got {}", c.layers.len(), c.layers.len().saturating_sub(1), c.interfaces.len())));
        }
        if c.interfaces.is_empty() {
            return Err(cfg("at least one interface is required".into()));
        }
        let media = c
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| Medium::new(l.eps, l.mu).map_err(|e| cfg(format!("layer {i}: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let interfaces = c
            .interfaces
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (n, p) = s.np();
                if (0..2).any(|h| n[h] < p[h] + 3) {
                    return Err(cfg(format!("interface {i}: need at least 3 elements per direction (n − p ≥ 3), got n = {n:?}, p = {p:?}")));
                }
                s.build(c.periods).map_err(|e| cfg(format!("interface {i}: {e}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        LayerStack::new(media.clone(), interfaces.clone()).map_err(|e| cfg(format!("layer stack: {e}")))?;

        let d = &c.discretization;
        if !(1..=qpbem::assembly::MAX_Q).contains(&d.q) {
            return Err(cfg(format!("basis degree q = {} outside 1..={}", d.q, qpbem::assembly::MAX_Q)));
        }
        if d.levels.is_empty() {
            return Err(cfg("discretization.levels is empty".into()));
        }
        if d.levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(cfg("discretization.levels must be strictly increasing".into()));
        }
        if d.levels.iter().any(|&l| l > 6) {
            return Err(cfg("refinement levels above 6 are not supported".into()));
        }
        let variant = match d.variant {
            VariantSpec::Np => Variant::Np,
            VariantSpec::Mp => Variant::Mp,
        };

        let q = &c.quadrature;
        let options = AssemblyOptions {
            regular_order: q.regular,
            singular_order: q.singular,
            near_order: q.near,
            near_factor: q.near_factor,
            ewald_eps: q.ewald_eps,
            ewald_split: q.ewald_split,
            kernel: match q.kernel {
                KernelSpec::Auto => KernelMode::Auto,
                KernelSpec::Direct => KernelMode::Direct,
                KernelSpec::Table => KernelMode::Table,
            },
        };
        for (name, n) in [("regular", q.regular), ("singular", q.singular), ("near", q.near)] {
            if !(1..=32).contains(&n) {
                return Err(cfg(format!("quadrature.{name} = {n} outside 1..=32")));
            }
        }
        if !(q.near_factor >= 0.0) || !(q.ewald_eps > 0.0 && q.ewald_eps < 1.0) || q.ewald_split.is_some_and(|a| !(a > 0.0)) {
            return Err(cfg("invalid near_factor, ewald_eps or ewald_split".into()));
        }

        let incident = incident_wave(&c.incident, c.incident.omega, media[0])?;

        match c.study.reference {
            ReferenceKind::Tmatrix if !c.interfaces.iter().all(InterfaceSpec::is_plane) => {
                return Err(cfg("reference = \"tmatrix\" requires plane interfaces".into()));
            }
            ReferenceKind::SameMedia if media.iter().any(|m| *m != media[0]) => {
                return Err(cfg("reference = \"same_media\" requires identical layers".into()));
            }
            _ => {}
        }
        match c.study.kind {
            StudyKind::Convergence => {
                if c.study.reference == ReferenceKind::None {
                    return Err(cfg("a convergence study needs reference = \"tmatrix\" or \"same_media\"".into()));
                }
                check_anomalies(&media, &incident, c.periods, options.ewald_eps).map_err(|e| cfg(e.to_string()))?;
            }
            StudyKind::Sweep => {
                if c.study.omegas.is_empty() {
                    return Err(cfg("a sweep needs study.omegas".into()));
                }
                if c.study.omegas.iter().any(|w| !(*w > 0.0)) {
                    return Err(cfg("sweep frequencies must be positive".into()));
                }
            }
        }
        Ok(Problem { config: config.clone(), media, interfaces, incident, variant, options })
    }

    pub fn q(&self) -> usize {
        self.config.discretization.q
    }

    pub fn levels(&self) -> &[usize] {
        &self.config.discretization.levels
    }

    /// The stack with every interface refined `level` times.
    pub fn stack(&self, level: usize) -> qpbem::Result<LayerStack> {
        let mut s = self.interfaces.clone();
        for _ in 0..level {
            s = s.iter().map(PeriodicSurface::refine).collect::<qpbem::Result<Vec<_>>>()?;
        }
        LayerStack::new(self.media.clone(), s)
    }

    /// The incident wave of the config at another frequency.
    pub fn incident_at(&self, omega: f64) -> Result<IncidentWave, CliError> {
        incident_wave(&self.config.incident, omega, self.media[0])
    }
}

fn incident_wave(s: &IncidentSpec, omega: f64, top: Medium) -> Result<IncidentWave, CliError> {
    let r = if s.project {
        IncidentWave::projected(omega, s.theta, s.phi, s.amplitude, top)
    } else {
        IncidentWave::new(omega, s.theta, s.phi, s.amplitude, top)
    };
    r.map_err(|e| CliError::Config(format!("incident wave: {e}")))
}

/// Rejects configurations where a Rayleigh order grazes in some layer.
pub fn check_anomalies(media: &[Medium], inc: &IncidentWave, periods: [f64; 2], eps: f64) -> qpbem::Result<()> {
    for m in media {
        EwaldContext::new(m.wavenumber(inc.omega), periods, inc.kpar(), None, eps)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const PROBLEM1: &str = include_str!("../../../configs/problem1.toml");
    pub(crate) const PROBLEM2: &str = include_str!("../../../configs/problem2.toml");
    pub(crate) const SWEEP: &str = include_str!("../../../configs/problem1_sweep.toml");

    #[test]
    fn shipped_configs_round_trip() {
        for text in [PROBLEM1, PROBLEM2, SWEEP] {
            let c = ProblemConfig::from_toml(text).unwrap();
            let again = ProblemConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(c, again);
            assert_eq!(c.to_toml(), again.to_toml());
            Problem::from_config(&c).unwrap();
        }
    }

    #[test]
    fn defaults_are_filled_in() {
        let c = ProblemConfig::from_toml(PROBLEM2).unwrap();
        assert_eq!(c.layers[0].mu, 1.0);
        assert_eq!(c.output, OutputSpec::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = PROBLEM1.replace("[incident]", "[incident]\nfrequency = 3.0");
        assert!(matches!(ProblemConfig::from_toml(&bad), Err(CliError::Config(_))));
    }

    fn invalid(edit: impl Fn(&mut ProblemConfig)) -> String {
        let mut c = ProblemConfig::from_toml(PROBLEM1).unwrap();
        edit(&mut c);
        match Problem::from_config(&c) {
            Err(CliError::Config(m)) => m,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn validation_errors() {
        invalid(|c| {
            c.layers.pop();
        });
        invalid(|c| c.discretization.q = 0);
        invalid(|c| c.discretization.levels = vec![1, 0]);
        invalid(|c| c.layers[2].eps = -1.0);
        invalid(|c| c.quadrature.singular = 0);
        invalid(|c| c.incident.project = false);
        invalid(|c| c.study.reference = ReferenceKind::SameMedia);
        invalid(|c| c.study.reference = ReferenceKind::None);
        invalid(|c| {
            if let InterfaceSpec::Plane { n, .. } = &mut c.interfaces[0] {
                n[0] = 3;
            }
        });
        // overlapping interfaces
        invalid(|c| {
            if let InterfaceSpec::Plane { offset, .. } = &mut c.interfaces[1] {
                *offset = 0.5;
            }
        });
    }

    #[test]
    fn anomalies_are_rejected_before_compute() {
        let m = invalid(|c| {
            c.incident = IncidentSpec { omega: 2.0 * PI, theta: 0.0, phi: 0.0, amplitude: [1.0, 0.0, 0.0], project: false };
            c.layers.iter_mut().for_each(|l| l.eps = 1.0);
        });
        assert!(m.contains("anomaly"), "{m}");
    }

    #[test]
    fn tmatrix_reference_needs_planes() {
        let mut c = ProblemConfig::from_toml(PROBLEM2).unwrap();
        c.study.reference = ReferenceKind::Tmatrix;
        assert!(matches!(Problem::from_config(&c), Err(CliError::Config(_))));
    }
}
