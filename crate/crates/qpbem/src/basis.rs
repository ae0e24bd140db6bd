//! Divergence-conforming vector bases on a periodic surface and their
//! quasi-periodic combinations M^p and N^p.
//!
//! Raw functions V_{h,i,j} = (1/J) B_i(u1) B_j(u2) ∂x/∂u_h use degree q̄_{2h−1}
//! in u1 and q̄_{2h} in u2; the degree q−1 knots are the degree q knots
//! without their first and last entry. A quasi-periodic DOF is a short list of
//! raw functions with phase coefficients.

use alloc::vec::Vec;

use num_traits::Num;

use crate::bspline::KnotVector;
use crate::error::{bail, Result};
use crate::geometry::PeriodicSurface;
use crate::math::{self, CVec3, Vec3, C64};

/// Knots of the vector basis for one direction (Algorithm 2).
///
/// Works on any exact or floating number type so that the construction can be
/// checked in rational arithmetic. Returns (U, m) with |U| = m + q + 1.
pub fn derive_basis_knots<T: Num + Copy + PartialOrd>(t: &[T], p: usize, q: usize) -> (Vec<T>, usize) {
    let n = t.len() - p - 1;
    let per = t[n - p] - t[0];
    // Periodic extension of T: ext(k) = t_k for 0 ≤ k ≤ n+p, shifted copies
    // of the knot spacing outside. For n − p ≥ q − p this is exactly the
    // reflection τ^−_i = t_{n−p−i} − (t_{n−p} − t_0), τ^+_i = t_{2p+i} + (t_{n+p} − t_{2p}).
    let ext = |k: isize| -> T {
        let (mut k, mut shift) = (k, T::zero());
        while k < 0 {
            k += (n - p) as isize;
            shift = shift - per;
        }
        while k > (n + p) as isize {
            k -= (n - p) as isize;
            shift = shift + per;
        }
        t[k as usize] + shift
    };
    let (mut u, mut m) = if p >= q {
        let r = p - q;
        (t[r..=n + p - r].to_vec(), n - r)
    } else {
        let s = (q - p) as isize;
        let u: Vec<T> = (-s..=(n + p) as isize + s).map(ext).collect();
        (u, n + (q - p))
    };
    // Too few functions for the wrap-around pairing: halve every span and
    // keep the functions whose support meets the domain.
    let two = T::one() + T::one();
    while m < 2 * q {
        let mut fine = Vec::with_capacity(2 * u.len() - 1);
        for w in u.windows(2) {
            fine.push(w[0]);
            fine.push((w[0] + w[1]) / two);
        }
        fine.push(*u.last().unwrap());
        // fine has 2(m+q)+1 knots; the domain is fine[2q..=2m]
        let m2 = 2 * (m - q) + q;
        u = fine[q..=q + m2 + q].to_vec();
        m = m2;
    }
    (u, m)
}

/// Which quasi-periodic combination is used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Full-vector quasi-periodicity.
    Np,
    /// Quasi-periodicity of the normal (conormal) component only.
    Mp,
}

/// One raw function V_{h,i,j} with its coefficient inside a DOF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    /// Family 0 (∂x/∂u1) or 1 (∂x/∂u2).
    pub h: usize,
    pub i: usize,
    pub j: usize,
    pub coef: C64,
}

/// A basis DOF: family, nominal index and up to four raw terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Dof {
    pub h: usize,
    pub i: usize,
    pub j: usize,
    pub terms: Vec<Term>,
}

/// Basis knots for both directions plus derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisKnots {
    pub q: [usize; 2],
    pub m: [usize; 2],
    /// Degree q_h spaces.
    pub full: [KnotVector; 2],
    /// Degree q_h − 1 spaces.
    pub reduced: [KnotVector; 2],
}

impl BasisKnots {
    pub fn new(surface: &PeriodicSurface, q: [usize; 2]) -> Result<Self> {
        let mut full = Vec::new();
        let mut reduced = Vec::new();
        let mut m = [0; 2];
        for h in 0..2 {
            if q[h] == 0 {
                bail!(Argument, "basis degree must be at least 1");
            }
            let sp = surface.space(h);
            let (u, mh) = derive_basis_knots(sp.knots(), sp.degree(), q[h]);
            m[h] = mh;
            reduced.push(KnotVector::new(u[1..u.len() - 1].to_vec(), q[h] - 1)?);
            full.push(KnotVector::new(u, q[h])?);
        }
        let reduced: [KnotVector; 2] = [reduced[0].clone(), reduced[1].clone()];
        let full: [KnotVector; 2] = [full[0].clone(), full[1].clone()];
        Ok(BasisKnots { q, m, full, reduced })
    }

    /// m̄_1..m̄_4 (0-based array).
    pub fn mbar(&self) -> [usize; 4] {
        [self.m[0], self.m[1] - 1, self.m[0] - 1, self.m[1]]
    }

    /// q̄_1..q̄_4 (0-based array).
    pub fn qbar(&self) -> [usize; 4] {
        [self.q[0], self.q[1] - 1, self.q[0] - 1, self.q[1]]
    }

    /// Spaces (u1, u2) used by family h.
    pub fn family_spaces(&self, h: usize) -> (&KnotVector, &KnotVector) {
        if h == 0 {
            (&self.full[0], &self.reduced[1])
        } else {
            (&self.reduced[0], &self.full[1])
        }
    }

    /// n_a = (m̄1−q̄1)(m̄2−q̄2) + (m̄3−q̄3)(m̄4−q̄4).
    pub fn count_dofs(&self) -> usize {
        let (mb, qb) = (self.mbar(), self.qbar());
        (mb[0] - qb[0]) * (mb[1] - qb[1]) + (mb[2] - qb[2]) * (mb[3] - qb[3])
    }

    /// Element grid of the basis (equal to the surface grid unless
    /// Algorithm 2 had to refine).
    pub fn element_grid(&self) -> [usize; 2] {
        [self.m[0] - self.q[0], self.m[1] - self.q[1]]
    }
}

/// Evaluate V_{h,i,j} and its surface divergence at (t1, t2).
pub fn eval_buffa(surface: &PeriodicSurface, knots: &BasisKnots, h: usize, i: usize, j: usize, t1: f64, t2: f64) -> Result<(Vec3, f64)> {
    if h > 1 {
        bail!(Argument, "family must be 0 or 1, got {h}");
    }
    let (s1, s2) = knots.family_spaces(h);
    let (b1, b2) = (s1.eval(i, t1)?, s2.eval(j, t2)?);
    let sp = surface.eval(t1, t2)?;
    let (tangent, dbb) = if h == 0 {
        let d = if s1.degree() > 0 { s1.eval_derivative(i, t1, 1)? } else { 0.0 };
        (sp.d1, d * b2)
    } else {
        let d = if s2.degree() > 0 { s2.eval_derivative(j, t2, 1)? } else { 0.0 };
        (sp.d2, b1 * d)
    };
    Ok((math::scale(tangent, b1 * b2 / sp.jac), dbb / sp.jac))
}

/// Quasi-periodic basis set on one surface.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    pub variant: Variant,
    pub knots: BasisKnots,
    pub phases: [f64; 2],
    dofs: Vec<Dof>,
    /// Owner DOF and coefficient of every raw function, indexed
    /// [h][i * rawcount_j + j].
    raw_owner: [Vec<(usize, C64)>; 2],
}

impl BasisSet {
    pub fn new(surface: &PeriodicSurface, q: [usize; 2], variant: Variant, phases: [f64; 2]) -> Result<Self> {
        let knots = BasisKnots::new(surface, q)?;
        let (mb, qb) = (knots.mbar(), knots.qbar());
        let e1 = math::expi(phases[0]);
        let e2 = math::expi(phases[1]);
        let one = C64::new(1.0, 0.0);
        let mut dofs = Vec::new();
        for h in 0..2 {
            let (mi, mj, qi, qj) = (mb[2 * h], mb[2 * h + 1], qb[2 * h], qb[2 * h + 1]);
            let (ai, aj) = (mi - qi, mj - qj);
            let t = |i, j, coef| Term { h, i, j, coef };
            match variant {
                Variant::Np => {
                    for i in 0..ai {
                        for j in 0..aj {
                            let wi = i < qi;
                            let wj = j < qj;
                            let mut terms = alloc::vec![t(i, j, one)];
                            if wi {
                                terms.push(t(i + ai, j, e1));
                            }
                            if wj {
                                terms.push(t(i, j + aj, e2));
                            }
                            if wi && wj {
                                terms.push(t(i + ai, j + aj, e1 * e2));
                            }
                            dofs.push(Dof { h, i, j, terms });
                        }
                    }
                }
                Variant::Mp => {
                    let (ri, rj) = if h == 0 { (ai, mj) } else { (mi, aj) };
                    for i in 0..ri {
                        for j in 0..rj {
                            let mut terms = alloc::vec![t(i, j, one)];
                            if h == 0 && i < qi {
                                terms.push(t(i + ai, j, e1));
                            }
                            if h == 1 && j < qj {
                                terms.push(t(i, j + aj, e2));
                            }
                            dofs.push(Dof { h, i, j, terms });
                        }
                    }
                }
            }
        }
        let mut raw_owner = [
            alloc::vec![(usize::MAX, C64::new(0.0, 0.0)); mb[0] * mb[1]],
            alloc::vec![(usize::MAX, C64::new(0.0, 0.0)); mb[2] * mb[3]],
        ];
        for (a, d) in dofs.iter().enumerate() {
            for tm in &d.terms {
                let nj = mb[2 * tm.h + 1];
                let slot = &mut raw_owner[tm.h][tm.i * nj + tm.j];
                if slot.0 != usize::MAX {
                    bail!(Numerical, "raw function ({}, {}, {}) claimed twice", tm.h, tm.i, tm.j);
                }
                *slot = (a, tm.coef);
            }
        }
        if raw_owner.iter().flatten().any(|s| s.0 == usize::MAX) {
            bail!(Numerical, "raw function without owner");
        }
        Ok(BasisSet { variant, knots, phases, dofs, raw_owner })
    }

    pub fn len(&self) -> usize {
        self.dofs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    pub fn dofs(&self) -> &[Dof] {
        &self.dofs
    }

    pub fn dof(&self, a: usize) -> Result<&Dof> {
        match self.dofs.get(a) {
            Some(d) => Ok(d),
            None => bail!(Argument, "DOF {a} out of range 0..{}", self.dofs.len()),
        }
    }

    /// Owning DOF and coefficient of raw function (h, i, j).
    #[inline]
    pub fn raw_owner(&self, h: usize, i: usize, j: usize) -> (usize, C64) {
        let nj = self.knots.mbar()[2 * h + 1];
        self.raw_owner[h][i * nj + j]
    }

    /// Value and surface divergence of basis DOF a at (t1, t2).
    pub fn eval(&self, surface: &PeriodicSurface, a: usize, t1: f64, t2: f64) -> Result<(CVec3, C64)> {
        let d = self.dof(a)?;
        let mut v = [C64::new(0.0, 0.0); 3];
        let mut div = C64::new(0.0, 0.0);
        for tm in &d.terms {
            let (r, dv) = eval_buffa(surface, &self.knots, tm.h, tm.i, tm.j, t1, t2)?;
            for k in 0..3 {
                v[k] += tm.coef * r[k];
            }
            div += tm.coef * dv;
        }
        Ok((v, div))
    }

    /// Weight function: complex conjugate of the basis function.
    pub fn eval_weight(&self, surface: &PeriodicSurface, a: usize, t1: f64, t2: f64) -> Result<(CVec3, C64)> {
        let (v, d) = self.eval(surface, a, t1, t2)?;
        Ok((v.map(|c| c.conj()), d.conj()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::gauss_legendre;

    fn problem2(n: usize, p: usize) -> PeriodicSurface {
        let tau = 2.0 * math::PI;
        PeriodicSurface::from_height_fn([1.0, 1.0], [n, n], [p, p], |a, b| 0.3 * math::cos(tau * a) * math::cos(tau * b)).unwrap()
    }

    #[test]
    fn algorithm2_identity_when_degrees_match() {
        let t: Vec<f64> = (0..=12).map(|i| i as f64 / 12.0).collect();
        let (u, m) = derive_basis_knots(&t, 3, 3);
        assert_eq!(u, t);
        assert_eq!(m, 9);
    }

    #[test]
    fn algorithm2_satisfies_alignment_and_end_spacing() {
        for p in 1..=5 {
            for q in 1..=5 {
                for n in (p + 1)..(p + 8) {
                    let t: Vec<f64> = (0..=n + p).map(|i| i as f64 / (n + p) as f64).collect();
                    let (u, m) = derive_basis_knots(&t, p, q);
                    assert_eq!(u.len(), m + q + 1);
                    assert!(m >= 2 * q);
                    assert!((u[q] - t[p]).abs() < 1e-14 && (u[m] - t[n]).abs() < 1e-14);
                    for i in 0..2 * q {
                        let (a, b) = (u[i + 1] - u[i], u[i + m - q + 1] - u[i + m - q]);
                        assert!((a - b).abs() < 1e-13);
                    }
                }
            }
        }
    }

    #[test]
    fn dof_counts() {
        let mut s = problem2(9, 4);
        for want in [50, 200, 800, 3200] {
            let k = BasisKnots::new(&s, [1, 1]).unwrap();
            assert_eq!(k.count_dofs(), want);
            let set = BasisSet::new(&s, [1, 1], Variant::Np, [0.3, -0.2]).unwrap();
            assert_eq!(set.len(), want);
            if want < 800 {
                s = s.refine().unwrap();
            } else {
                break;
            }
        }
        let s = problem2(9, 4);
        for q in 1..=4 {
            let k = BasisKnots::new(&s, [q, q]).unwrap();
            let (mb, qb) = (k.mbar(), k.qbar());
            assert_eq!(k.count_dofs(), 2 * (mb[0] - qb[0]) * (mb[0] - qb[0]));
            assert_eq!(k.count_dofs(), 50);
        }
        // M^p keeps the unpaired functions of the reduced direction.
        let mp = BasisSet::new(&s, [4, 4], Variant::Mp, [0.0, 0.0]).unwrap();
        assert_eq!(mp.len(), 80);
    }

    #[test]
    fn tangency_and_divergence_against_finite_differences() {
        let s = problem2(9, 4);
        let k = BasisKnots::new(&s, [2, 2]).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for (hh, i, j) in [(0, 2, 3), (1, 4, 1), (0, 5, 5), (1, 0, 0)] {
            let (s1, s2) = k.family_spaces(hh);
            let sup = |sp: &KnotVector, i: usize| (sp.knots()[i].max(s.space(0).domain().0), sp.knots()[i + sp.degree() + 1].min(s.space(0).domain().1));
            let ((lo1, hi1), (lo2, hi2)) = (sup(s1, i), sup(s2, j));
            for kk in 0..10 {
                let u = (kk as f64 + 0.31) / 10.0;
                let (t1, t2) = (lo1 + (hi1 - lo1) * u, lo2 + (hi2 - lo2) * (1.0 - u * 0.9));
                let (v, div) = eval_buffa(&s, &k, hh, i, j, t1, t2).unwrap();
                let sp = s.eval(t1, t2).unwrap();
                assert!(math::dot(v, sp.normal).abs() < 1e-14 * (1.0 + math::norm(v)));
                // J·V expressed in the tangent basis has a single component
                // along u_h; its parametric derivative is J·div.
                let comp = |a: f64, b: f64| {
                    let (w, _) = eval_buffa(&s, &k, hh, i, j, a, b).unwrap();
                    let sp = s.eval(a, b).unwrap();
                    let tan = if hh == 0 { sp.d1 } else { sp.d2 };
                    sp.jac * math::dot(w, tan) / math::dot(tan, tan)
                };
                let fd = if hh == 0 {
                    (comp(t1 + h, t2) - comp(t1 - h, t2)) / (2.0 * h)
                } else {
                    (comp(t1, t2 + h) - comp(t1, t2 - h)) / (2.0 * h)
                };
                if div.abs() > 1e-3 {
                    assert!((fd - sp.jac * div).abs() < 1e-5 * (sp.jac * div).abs(), "{fd} {}", sp.jac * div);
                    checked += 1;
                }
            }
        }
        assert!(checked > 10);
    }

    fn seam_residuals(s: &PeriodicSurface, set: &BasisSet, normal_only: bool) -> f64 {
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
                    let (vl, _) = set.eval(s, a, lo.0, lo.1).unwrap();
                    let (vh, _) = set.eval(s, a, hi.0, hi.1).unwrap();
                    let sp = s.eval(hi.0, hi.1).unwrap();
                    let r = if normal_only {
                        // conormal τ: in-surface direction normal to the seam
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
        worst
    }

    #[test]
    fn quasi_periodicity_across_seams() {
        let s = problem2(9, 4);
        for q in 1..=3 {
            let np = BasisSet::new(&s, [q, q], Variant::Np, [0.7, -1.9]).unwrap();
            // For q = 1 the tangential component is piecewise constant across
            // the seam direction, so only the conormal condition can hold.
            let r = seam_residuals(&s, &np, q == 1);
            assert!(r < 1e-12, "N^p q={q} {r}");
            let mp = BasisSet::new(&s, [q, q], Variant::Mp, [0.7, -1.9]).unwrap();
            assert!(seam_residuals(&s, &mp, true) < 1e-12, "M^p q={q}");
        }
    }

    #[test]
    fn mp_equals_np_for_q1() {
        let s = problem2(9, 4);
        let np = BasisSet::new(&s, [1, 1], Variant::Np, [0.4, 1.1]).unwrap();
        let mp = BasisSet::new(&s, [1, 1], Variant::Mp, [0.4, 1.1]).unwrap();
        assert_eq!(np.dofs(), mp.dofs());
    }

    #[test]
    fn weight_is_conjugate() {
        let s = problem2(9, 4);
        let set = BasisSet::new(&s, [2, 2], Variant::Np, [0.0, 0.0]).unwrap();
        for a in [0, 7, 33] {
            let (v, d) = set.eval(&s, a, 0.4, 0.55).unwrap();
            let (w, e) = set.eval_weight(&s, a, 0.4, 0.55).unwrap();
            assert_eq!(v, w);
            assert_eq!(d, e);
        }
        assert!(set.eval(&s, set.len(), 0.4, 0.4).is_err());
    }

    #[test]
    fn divergence_integrates_to_zero_without_phase() {
        let s = problem2(9, 4);
        let set = BasisSet::new(&s, [2, 2], Variant::Np, [0.0, 0.0]).unwrap();
        let g = gauss_legendre(6);
        let els = s.bezier_elements();
        for a in 0..set.len() {
            let mut total = C64::new(0.0, 0.0);
            for e in &els {
                let (w1, w2) = (e.t1.1 - e.t1.0, e.t2.1 - e.t2.0);
                for (u, wu) in g.nodes.iter().zip(&g.weights) {
                    for (v, wv) in g.nodes.iter().zip(&g.weights) {
                        let (t1, t2) = (e.t1.0 + w1 * u, e.t2.0 + w2 * v);
                        let (_, d) = set.eval(&s, a, t1, t2).unwrap();
                        total += d * (wu * wv * w1 * w2 * s.eval(t1, t2).unwrap().jac);
                    }
                }
            }
            assert!(total.norm() < 1e-10, "dof {a}: {total}");
        }
    }
}
