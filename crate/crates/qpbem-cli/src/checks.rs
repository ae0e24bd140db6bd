//! Invariant checks run by `qpbem --selfcheck` and the acceptance tests.
//!
//! Every check reduces to a worst-case number compared against a bound, so a
//! report is a flat list of (name, worst, bound).

use qpbem::basis::{derive_basis_knots, BasisKnots, BasisSet, Variant};
use qpbem::bspline::KnotVector;
use qpbem::geometry::{build_periodic_curve, PeriodicSurface};
use qpbem::greens::{default_split, EwaldContext};
use qpbem::math::{self, CVec3, Vec3, C64, I, PI};

use crate::config::{IncidentSpec, Problem, ProblemConfig};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    /// Worst observed value of the checked quantity.
    pub worst: f64,
    /// Largest acceptable value.
    pub bound: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, worst: f64, bound: f64) -> Self {
        Check { name: name.into(), worst, bound }
    }

    pub fn passed(&self) -> bool {
        self.worst <= self.bound
    }
}

fn failed(name: &str, e: impl std::fmt::Display) -> Check {
    Check::new(format!("{name} ({e})"), f64::INFINITY, 0.0)
}

/// The Problem-2 surface (n = 9, p = 4 unless given) refined `level` times.
pub fn problem2_surface(n: usize, p: usize, level: usize) -> qpbem::Result<PeriodicSurface> {
    let mut s = PeriodicSurface::from_height_fn([1.0, 1.0], [n, n], [p, p], |x, y| 0.3 * math::cos(2.0 * PI * x) * math::cos(2.0 * PI * y))?;
    for _ in 0..level {
        s = s.refine()?;
    }
    Ok(s)
}

/// Periodic curve L = 0.8, n = 5, p = 2, y = (1, 3, −2): largest deviation
/// from x(t_p) = −0.4, x(t_n) = 0.4, y = 2 at both ends, dy/dt(t_n) = 14 and
/// the five control abscissae.
pub fn worked_curve() -> Check {
    let name = "worked periodic curve";
    let c = match build_periodic_curve(0.8, 5, 2, &[1.0, 3.0, -2.0]) {
        Ok(c) => c,
        Err(e) => return failed(name, e),
    };
    let (tp, tn) = c.curve.space.domain();
    let (a, b) = (c.curve.point(tp), c.curve.point(tn));
    let mut dev = vec![(a[0] + 0.4).abs(), (b[0] - 0.4).abs(), (a[1] - 2.0).abs(), (b[1] - 2.0).abs(), (c.curve.derivative(tn, 1)[1] - 14.0).abs()];
    let want = [-8.0 / 15.0, -4.0 / 15.0, 0.0, 4.0 / 15.0, 8.0 / 15.0];
    dev.extend(c.curve.control.iter().zip(want).map(|(q, w)| (q[0] - w).abs()));
    Check::new(name, dev.into_iter().fold(0.0, f64::max), 1e-6)
}

/// Σ_{i<p} i B_i^p(t_p) = (p − 1)/2 on uniform knots, p = 1..6.
pub fn cp_identity() -> Check {
    let name = "C_p = (p-1)/2";
    let mut worst: f64 = 0.0;
    for p in 1..=6 {
        for n in [p + 1, 2 * p + 3] {
            let kv = match KnotVector::uniform(n, p) {
                Ok(k) => k,
                Err(e) => return failed(name, e),
            };
            let tp = kv.knots()[p];
            let mut c = 0.0;
            for i in 0..p {
                match kv.eval(i, tp) {
                    Ok(v) => c += i as f64 * v,
                    Err(e) => return failed(name, e),
                }
            }
            worst = worst.max((c - (p as f64 - 1.0) / 2.0).abs());
        }
    }
    Check::new(name, worst, 1e-12)
}

/// B_i^3(t) = B_{n−p+i}^3(t + T) and derivatives up to order 2 on the
/// non-uniform knot vector (0, 1, 3, 4, 7, 8, 9, 10, 11, 13, 14, 17, 18, 19)/19,
/// at 50 points of [t_0, t_{n+p} − T].
pub fn translation_lemma() -> Check {
    let name = "translation lemma";
    let num = [0.0, 1.0, 3.0, 4.0, 7.0, 8.0, 9.0, 10.0, 11.0, 13.0, 14.0, 17.0, 18.0, 19.0];
    let kv = match KnotVector::new(num.iter().map(|v| v / 19.0).collect(), 3) {
        Ok(k) => k,
        Err(e) => return failed(name, e),
    };
    let (p, n) = (3, kv.count());
    let t = kv.knots();
    let shift = t[n] - t[p];
    let hi = t[n + p] - shift;
    let mut worst: f64 = 0.0;
    for s in 0..50 {
        let x = t[0] + (hi - t[0]) * s as f64 / 49.0;
        for i in 0..p {
            for k in 0..=2 {
                let (a, b) = (kv.eval_derivative(i, x, k), kv.eval_derivative(n - p + i, x + shift, k));
                match (a, b) {
                    (Ok(a), Ok(b)) => worst = worst.max((a - b).abs()),
                    (Err(e), _) | (_, Err(e)) => return failed(name, e),
                }
            }
        }
    }
    Check::new(name, worst, 1e-12)
}

/// Largest quasi-periodicity defect of any DOF across the two seams, at 20
/// points per seam. With `normal_only` only the component along the in-surface
/// conormal of the seam is compared.
pub fn seam_residual(s: &PeriodicSurface, set: &BasisSet, normal_only: bool) -> qpbem::Result<f64> {
    let b = [set.phases[0], set.phases[1]].map(math::expi);
    let (a1, b1) = s.space(0).domain();
    let (a2, b2) = s.space(1).domain();
    let mut worst: f64 = 0.0;
    for a in 0..set.len() {
        for k in 0..20 {
            let u = (k as f64 + 0.37) / 20.0;
            for dir in 0..2 {
                let (lo, hi) = if dir == 0 {
                    let t2 = a2 + (b2 - a2) * u;
                    ((a1, t2), (b1, t2))
                } else {
                    let t1 = a1 + (b1 - a1) * u;
                    ((t1, a2), (t1, b2))
                };
                let (vl, _) = set.eval(s, a, lo.0, lo.1)?;
                let (vh, _) = set.eval(s, a, hi.0, hi.1)?;
                let sp = s.eval(hi.0, hi.1)?;
                let r = if normal_only {
                    let edge = if dir == 0 { sp.d2 } else { sp.d1 };
                    let tau = math::cross(edge, sp.normal);
                    let f = |v: CVec3| v[0] * tau[0] + v[1] * tau[1] + v[2] * tau[2];
                    (f(vh) - b[dir] * f(vl)).norm()
                } else {
                    (0..3).map(|c| (vh[c] - b[dir] * vl[c]).norm()).fold(0.0, f64::max)
                };
                worst = worst.max(r);
            }
        }
    }
    Ok(worst)
}

/// Seam defects on the Problem-2 surface: M^p normal component and N^p full
/// vector for each q in `qs`. Phases (0.7, −1.9).
pub fn quasi_periodicity(qs: &[usize], full_vector_np: bool) -> Vec<Check> {
    let s = match problem2_surface(9, 4, 0) {
        Ok(s) => s,
        Err(e) => return vec![failed("basis quasi-periodicity", e)],
    };
    let mut out = Vec::new();
    for &q in qs {
        for (variant, normal_only, label) in [(Variant::Mp, true, "M^p normal"), (Variant::Np, !full_vector_np, if full_vector_np { "N^p full vector" } else { "N^p conormal" })] {
            let name = format!("{label} quasi-periodicity q={q}");
            let r = BasisSet::new(&s, [q, q], variant, [0.7, -1.9]).and_then(|set| seam_residual(&s, &set, normal_only));
            out.push(match r {
                Ok(r) => Check::new(name, r, 1e-12),
                Err(e) => failed(&name, e),
            });
        }
    }
    out
}

/// Algorithm 2 on the same non-uniform knots as the translation check: q = 2
/// gives m = 9 and q = 4 gives m = 11 with the listed knots (numerators over 19).
pub fn algorithm2_examples() -> Check {
    let t: Vec<f64> = [0, 1, 3, 4, 7, 8, 9, 10, 11, 13, 14, 17, 18, 19].iter().map(|&v| v as f64 / 19.0).collect();
    let cases: [(usize, usize, &[i32]); 2] = [
        (2, 9, &[1, 3, 4, 7, 8, 9, 10, 11, 13, 14, 17, 18]),
        (4, 11, &[-1, 0, 1, 3, 4, 7, 8, 9, 10, 11, 13, 14, 17, 18, 19, 20]),
    ];
    let mut worst: f64 = 0.0;
    for (q, m_want, u_want) in cases {
        let (u, m) = derive_basis_knots(&t, 3, q);
        if m != m_want || u.len() != u_want.len() {
            return Check::new("Algorithm 2 knot examples", f64::INFINITY, 1e-15);
        }
        for (a, &b) in u.iter().zip(u_want) {
            worst = worst.max((a - b as f64 / 19.0).abs());
        }
    }
    Check::new("Algorithm 2 knot examples", worst, 1e-15)
}

/// N^p DOF count for q = 1 on Problem 2, Mesh0..Mesh3; the system size is
/// twice that (J and M). Reports the number of mismatches against
/// 100, 400, 1600, 6400.
pub fn dof_counts() -> Check {
    let name = "DOF counts";
    let mut s = match problem2_surface(9, 4, 0) {
        Ok(s) => s,
        Err(e) => return failed(name, e),
    };
    let mut mismatches = 0;
    for (level, want) in [100, 400, 1600, 6400].into_iter().enumerate() {
        if level > 0 {
            s = match s.refine() {
                Ok(s) => s,
                Err(e) => return failed(name, e),
            };
        }
        match BasisKnots::new(&s, [1, 1]) {
            Ok(k) if 2 * k.count_dofs() == want => {}
            Ok(_) => mismatches += 1,
            Err(e) => return failed(name, e),
        }
    }
    Check::new(name, mismatches as f64, 0.0)
}

/// Rayleigh series of G^p, Σ_ν i e^{i(k_ν·r∥ + k_ν,3|r3|)} / (2 L1 L2 k_ν,3)
/// over |ν_h| ≤ 40 on a unit cell; converges geometrically for r3 ≠ 0.
pub fn spectral_series(k: f64, kpar: [f64; 2], r: Vec3) -> C64 {
    let mut g = C64::new(0.0, 0.0);
    for i in -40..=40 {
        for j in -40..=40 {
            let kt = [kpar[0] + 2.0 * PI * i as f64, kpar[1] + 2.0 * PI * j as f64];
            let kz = math::sqrt_upper(C64::new(k * k - kt[0] * kt[0] - kt[1] * kt[1], 0.0));
            g += I * math::cexp(I * (kt[0] * r[0] + kt[1] * r[1]) + I * kz * r[2].abs()) / (2.0 * kz);
        }
    }
    g
}

fn sample_points() -> Vec<Vec3> {
    (0..20)
        .map(|i| {
            let t = i as f64;
            [0.9 * (1.3 * t + 0.2).sin(), 0.8 * (0.7 * t + 1.1).cos() + 0.3, 0.35 * (2.1 * t + 0.4).sin()]
        })
        .collect()
}

fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm()
}

/// Ewald G^p on the unit lattice at k = 8 and 10 (k∥ = (4, 4) and (5, 5)):
/// lattice shift, spectral series at |r3| = 0.4, split a vs 2a and the
/// finite-difference Helmholtz residual, all with tolerance `eps` for the
/// truncation.
pub fn ewald_oracles(eps: f64) -> Vec<Check> {
    let l = [1.0, 1.0];
    let (mut shift, mut spectral, mut split, mut helmholtz) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (k, kp) in [(8.0, [4.0, 4.0]), (10.0, [5.0, 5.0])] {
        let ctx = |a: Option<f64>| EwaldContext::new(k, l, kp, a, eps);
        let (c, c2) = match (ctx(None), ctx(Some(2.0 * default_split(k, l)))) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => return vec![failed("Ewald oracles", e)],
        };
        let beta = c.phases();
        let g = |r: Vec3| c.gp(r).unwrap_or(C64::new(f64::NAN, f64::NAN));
        for r in sample_points() {
            let g0 = g(r);
            shift = shift.max(rel(g([r[0] - 1.0, r[1], r[2]]), g0 * math::expi(-beta[0])));
            shift = shift.max(rel(g([r[0], r[1] - 1.0, r[2]]), g0 * math::expi(-beta[1])));
            shift = shift.max(rel(g([r[0] + 2.0, r[1] - 1.0, r[2]]), g0 * math::expi(2.0 * beta[0] - beta[1])));
            split = split.max(rel(g0, c2.gp(r).unwrap_or(C64::new(f64::NAN, f64::NAN))));
        }
        for i in 0..6 {
            let r = [0.13 * i as f64 - 0.31, 0.4 - 0.11 * i as f64, if i % 2 == 0 { 0.4 } else { -0.4 }];
            spectral = spectral.max(rel(g(r), spectral_series(k, kp, r)));
        }
        let h = 1e-3;
        for r in sample_points().into_iter().take(10) {
            let g0 = g(r);
            let mut lap = g0 * -6.0;
            for m in 0..3 {
                let (mut rp, mut rm) = (r, r);
                rp[m] += h;
                rm[m] -= h;
                lap += g(rp) + g(rm);
            }
            lap /= h * h;
            helmholtz = helmholtz.max((lap + g0 * k * k).norm() / (g0 * k * k).norm());
        }
    }
    // NaN (a failed evaluation) must not pass
    let fix = |v: f64| if v.is_nan() { f64::INFINITY } else { v };
    vec![
        Check::new("Ewald lattice shift", fix(shift), 1e-10),
        Check::new("Ewald vs spectral series", fix(spectral), 1e-10),
        Check::new("Ewald split independence", fix(split), 1e-10),
        Check::new("Ewald Helmholtz residual", fix(helmholtz), 1e-4),
    ]
}

/// A config at a Rayleigh anomaly (k = 2π, normal incidence) must be
/// rejected before assembly with an anomaly diagnostic.
pub fn anomaly_rejected() -> Check {
    let name = "anomalous config rejected";
    let mut c: ProblemConfig = match ProblemConfig::from_toml(include_str!("../../../configs/problem2.toml")) {
        Ok(c) => c,
        Err(e) => return failed(name, e),
    };
    c.incident = IncidentSpec { omega: 2.0 * PI, theta: 0.0, phi: 0.0, amplitude: [1.0, 0.0, 0.0], project: false };
    match Problem::from_config(&c) {
        Err(CliError::Config(m)) if m.contains("anomaly") => Check::new(name, 0.0, 0.0),
        _ => Check::new(name, 1.0, 0.0),
    }
}

/// Everything that holds on a correct build.
pub fn selfcheck(ewald_eps: f64) -> Vec<Check> {
    let mut out = vec![worked_curve(), cp_identity(), translation_lemma()];
    out.extend(quasi_periodicity(&[1], false));
    out.extend(quasi_periodicity(&[2, 3], true));
    out.push(algorithm2_examples());
    out.push(dof_counts());
    out.extend(ewald_oracles(ewald_eps));
    out.push(anomaly_rejected());
    out
}

/// Fixed-width pass/fail matrix.
pub fn report(checks: &[Check]) -> String {
    let w = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    let mut s = String::new();
    for c in checks {
        s += &format!("{:<w$}  worst {:>10.3e}  bound {:>8.1e}  {}\n", c.name, c.worst, c.bound, if c.passed() { "PASS" } else { "FAIL" });
    }
    s
}
