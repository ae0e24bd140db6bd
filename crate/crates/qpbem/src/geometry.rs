//! Periodic B-spline curves and doubly periodic tensor-product surfaces.
//!
//! A surface is built from uniform knots in each direction and a control net
//! whose horizontal coordinates follow the periodic abscissa rule, so that
//! the patch covers exactly one lattice cell [−L1/2, L1/2] × [−L2/2, L2/2]
//! and joins its periodic replicas with C^{p−1} continuity.

use alloc::vec::Vec;

use crate::bspline::{KnotVector, SplineCurve2D, MAX_DEGREE};
use crate::error::{bail, Result};
use crate::math::{self, Vec3};
use crate::quadrature::gauss_legendre;

/// Control abscissae x_i = −L/2 − L(p−1)/(2(n−p)) + iL/(n−p).
pub fn periodic_abscissae(l: f64, n: usize, p: usize) -> Vec<f64> {
    let e = (n - p) as f64;
    let x0 = -0.5 * l - l * (p as f64 - 1.0) / (2.0 * e);
    (0..n).map(|i| x0 + i as f64 * l / e).collect()
}

/// Periodic B-spline curve over one period of length L.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicCurve {
    pub period: f64,
    pub curve: SplineCurve2D,
}

/// Builds a periodic curve from the n − p free heights; the last p heights
/// repeat the first p.
pub fn build_periodic_curve(l: f64, n: usize, p: usize, heights: &[f64]) -> Result<PeriodicCurve> {
    if p == 0 || n <= p {
        bail!(Argument, "periodic curve needs n > p >= 1, got n = {n}, p = {p}");
    }
    if !(l > 0.0) {
        bail!(Argument, "period must be positive, got {l}");
    }
    if heights.len() != n - p {
        bail!(Argument, "expected {} free heights, got {}", n - p, heights.len());
    }
    let space = KnotVector::uniform(n, p)?;
    let xs = periodic_abscissae(l, n, p);
    let control = (0..n).map(|i| [xs[i], heights[i % (n - p)]]).collect();
    Ok(PeriodicCurve { period: l, curve: SplineCurve2D::new(space, control)? })
}

/// Point and first derivatives of a surface at one parameter pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: Vec3,
    pub d1: Vec3,
    pub d2: Vec3,
    /// Unit normal, pointing upward (from the layer below into the layer above).
    pub normal: Vec3,
    /// Area scale |∂x/∂t1 × ∂x/∂t2|.
    pub jac: f64,
}

/// Parametric rectangle of one Bézier element; (e1, e2) are its indices in
/// the element grid and `id = e1 * ne2 + e2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierElement {
    pub id: usize,
    pub e1: usize,
    pub e2: usize,
    pub t1: (f64, f64),
    pub t2: (f64, f64),
}

/// Doubly periodic tensor-product B-spline surface with a rigid vertical offset.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicSurface {
    periods: [f64; 2],
    spaces: [KnotVector; 2],
    /// Control points p_ij stored at index i * n2 + j (offset not included).
    control: Vec<Vec3>,
    offset: f64,
}

impl PeriodicSurface {
    /// Surface whose free heights (x3 of p_ij for i < n1 − p1, j < n2 − p2)
    /// are given row-major; the rest wrap around periodically.
    pub fn from_heights(periods: [f64; 2], n: [usize; 2], p: [usize; 2], heights: &[f64]) -> Result<Self> {
        for h in 0..2 {
            if p[h] == 0 || n[h] <= p[h] {
                bail!(Argument, "direction {}: need n > p >= 1, got n = {}, p = {}", h + 1, n[h], p[h]);
            }
            if !(periods[h] > 0.0) {
                bail!(Argument, "period L{} must be positive", h + 1);
            }
        }
        let (f1, f2) = (n[0] - p[0], n[1] - p[1]);
        if heights.len() != f1 * f2 {
            bail!(Argument, "expected {}x{} free heights, got {}", f1, f2, heights.len());
        }
        let spaces = [KnotVector::uniform(n[0], p[0])?, KnotVector::uniform(n[1], p[1])?];
        let x1 = periodic_abscissae(periods[0], n[0], p[0]);
        let x2 = periodic_abscissae(periods[1], n[1], p[1]);
        let mut control = Vec::with_capacity(n[0] * n[1]);
        for (i, &a) in x1.iter().enumerate() {
            for (j, &b) in x2.iter().enumerate() {
                control.push([a, b, heights[(i % f1) * f2 + (j % f2)]]);
            }
        }
        Ok(PeriodicSurface { periods, spaces, control, offset: 0.0 })
    }

    /// Surface whose free heights sample `f` at the control abscissae.
    pub fn from_height_fn(periods: [f64; 2], n: [usize; 2], p: [usize; 2], f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if n[0] <= p[0] || n[1] <= p[1] {
            bail!(Argument, "need n > p in both directions");
        }
        let x1 = periodic_abscissae(periods[0], n[0], p[0]);
        let x2 = periodic_abscissae(periods[1], n[1], p[1]);
        let mut heights = Vec::with_capacity((n[0] - p[0]) * (n[1] - p[1]));
        for &a in &x1[..n[0] - p[0]] {
            for &b in &x2[..n[1] - p[1]] {
                heights.push(f(a, b));
            }
        }
        Self::from_heights(periods, n, p, &heights)
    }

    /// Horizontal plane x3 = height.
    pub fn plane(periods: [f64; 2], n: [usize; 2], p: [usize; 2], height: f64) -> Result<Self> {
        let h = (n[0].saturating_sub(p[0])) * (n[1].saturating_sub(p[1]));
        Ok(Self::from_heights(periods, n, p, &alloc::vec![0.0; h])?.with_offset(height))
    }

    /// Same surface translated rigidly to x3 + offset.
    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn periods(&self) -> [f64; 2] {
        self.periods
    }

    pub fn space(&self, h: usize) -> &KnotVector {
        &self.spaces[h]
    }

    pub fn counts(&self) -> [usize; 2] {
        [self.spaces[0].count(), self.spaces[1].count()]
    }

    pub fn degrees(&self) -> [usize; 2] {
        [self.spaces[0].degree(), self.spaces[1].degree()]
    }

    /// Control point p_ij including the offset.
    pub fn control_point(&self, i: usize, j: usize) -> Vec3 {
        let c = self.control[i * self.spaces[1].count() + j];
        [c[0], c[1], c[2] + self.offset]
    }

    /// Lower and upper bound of x3 over the surface (convex hull of the net).
    pub fn height_range(&self) -> (f64, f64) {
        let lo = self.control.iter().map(|c| c[2]).fold(f64::INFINITY, f64::min);
        let hi = self.control.iter().map(|c| c[2]).fold(f64::NEG_INFINITY, f64::max);
        (lo + self.offset, hi + self.offset)
    }

    /// Whether every control height is equal, i.e. the surface is a plane.
    pub fn is_planar(&self) -> bool {
        let (lo, hi) = self.height_range();
        lo == hi
    }

    /// Element grid size (n1 − p1, n2 − p2).
    pub fn element_grid(&self) -> [usize; 2] {
        let [n1, n2] = self.counts();
        let [p1, p2] = self.degrees();
        [n1 - p1, n2 - p2]
    }

    pub fn bezier_elements(&self) -> Vec<BezierElement> {
        let b1 = self.spaces[0].breakpoints();
        let b2 = self.spaces[1].breakpoints();
        let mut out = Vec::with_capacity((b1.len() - 1) * (b2.len() - 1));
        for e1 in 0..b1.len() - 1 {
            for e2 in 0..b2.len() - 1 {
                out.push(BezierElement {
                    id: out.len(),
                    e1,
                    e2,
                    t1: (b1[e1], b1[e1 + 1]),
                    t2: (b2[e2], b2[e2 + 1]),
                });
            }
        }
        out
    }

    /// Mixed partial derivative ∂^{k1+k2} x / ∂t1^{k1} ∂t2^{k2}.
    pub fn derivative(&self, t1: f64, t2: f64, k1: usize, k2: usize) -> Vec3 {
        let [p1, p2] = self.degrees();
        if k1 > p1 || k2 > p2 {
            return [0.0; 3];
        }
        let (s1, s2) = (self.spaces[0].span(t1), self.spaces[1].span(t2));
        let mut a = [0.0; (MAX_DEGREE + 1) * (MAX_DEGREE + 1)];
        let mut b = [0.0; (MAX_DEGREE + 1) * (MAX_DEGREE + 1)];
        self.spaces[0].nonzero_basis_ders(s1, t1, k1, &mut a);
        self.spaces[1].nonzero_basis_ders(s2, t2, k2, &mut b);
        let n2 = self.spaces[1].count();
        let mut out = [0.0; 3];
        for i in 0..=p1 {
            let wa = a[k1 * (p1 + 1) + i];
            for j in 0..=p2 {
                let w = wa * b[k2 * (p2 + 1) + j];
                let c = self.control[(s1 - p1 + i) * n2 + (s2 - p2 + j)];
                for d in 0..3 {
                    out[d] += w * c[d];
                }
            }
        }
        if k1 == 0 && k2 == 0 {
            out[2] += self.offset;
        }
        out
    }

    /// Point, tangents, upward unit normal and area scale at (t1, t2).
    pub fn eval(&self, t1: f64, t2: f64) -> Result<SurfacePoint> {
        let sp = self.eval_unchecked(t1, t2);
        if !(sp.jac >= 1e-14) {
            bail!(Domain, "degenerate Jacobian {} at ({t1}, {t2})", sp.jac);
        }
        Ok(sp)
    }

    /// As [`eval`](Self::eval) without the Jacobian check.
    pub fn eval_unchecked(&self, t1: f64, t2: f64) -> SurfacePoint {
        let [p1, p2] = self.degrees();
        let (s1, s2) = (self.spaces[0].span(t1), self.spaces[1].span(t2));
        let mut a = [0.0; 2 * (MAX_DEGREE + 1)];
        let mut b = [0.0; 2 * (MAX_DEGREE + 1)];
        self.spaces[0].nonzero_basis_ders(s1, t1, 1, &mut a);
        self.spaces[1].nonzero_basis_ders(s2, t2, 1, &mut b);
        let n2 = self.spaces[1].count();
        let (mut x, mut d1, mut d2) = ([0.0; 3], [0.0; 3], [0.0; 3]);
        for i in 0..=p1 {
            for j in 0..=p2 {
                let c = self.control[(s1 - p1 + i) * n2 + (s2 - p2 + j)];
                let (w, w1, w2) = (a[i] * b[j], a[p1 + 1 + i] * b[j], a[i] * b[p2 + 1 + j]);
                for d in 0..3 {
                    x[d] += w * c[d];
                    d1[d] += w1 * c[d];
                    d2[d] += w2 * c[d];
                }
            }
        }
        x[2] += self.offset;
        let nrm = math::cross(d1, d2);
        let jac = math::norm(nrm);
        SurfacePoint { x, d1, d2, normal: math::scale(nrm, 1.0 / jac), jac }
    }

    /// Area of one element by 8×8 Gauss-Legendre quadrature of the Jacobian.
    pub fn element_area(&self, e: &BezierElement) -> f64 {
        let g = gauss_legendre(8);
        let (w1, w2) = (e.t1.1 - e.t1.0, e.t2.1 - e.t2.0);
        let mut a = 0.0;
        for (u, wu) in g.nodes.iter().zip(&g.weights) {
            for (v, wv) in g.nodes.iter().zip(&g.weights) {
                a += wu * wv * self.eval_unchecked(e.t1.0 + w1 * u, e.t2.0 + w2 * v).jac;
            }
        }
        a * w1 * w2
    }

    /// Representative length h = sqrt(max element area).
    pub fn mesh_size(&self) -> f64 {
        let amax = self.bezier_elements().iter().map(|e| self.element_area(e)).fold(0.0, f64::max);
        math::sqrt(amax)
    }

    /// Uniform refinement: each element is split into four. The result is
    /// again an Algorithm-1 surface with n' = 2(n − p) + p and represents the
    /// same geometry (the parametrization is rescaled).
    pub fn refine(&self) -> Result<Self> {
        let [n1, n2] = self.counts();
        let [p1, p2] = self.degrees();
        let m1 = 2 * (n1 - p1) + p1;
        let m2 = 2 * (n2 - p2) + p2;
        // Refine x3 along direction 2 for every row, then along direction 1.
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n1);
        for i in 0..n1 {
            let col: Vec<f64> = (0..n2).map(|j| self.control[i * n2 + j][2]).collect();
            rows.push(refine_coefficients(&self.spaces[1], &col));
        }
        let mut z = alloc::vec![0.0; m1 * m2];
        for j in 0..m2 {
            let col: Vec<f64> = (0..n1).map(|i| rows[i][j]).collect();
            for (i, v) in refine_coefficients(&self.spaces[0], &col).into_iter().enumerate() {
                z[i * m2 + j] = v;
            }
        }
        let (f1, f2) = (m1 - p1, m2 - p2);
        let mut heights = Vec::with_capacity(f1 * f2);
        for i in 0..f1 {
            for j in 0..f2 {
                heights.push(z[i * m2 + j]);
            }
        }
        Ok(Self::from_heights(self.periods, [m1, m2], [p1, p2], &heights)?.with_offset(self.offset))
    }

    /// Map a parameter of this surface to the parameter of the same physical
    /// point on `self.refine()`.
    pub fn refined_parameter(&self, h: usize, t: f64) -> f64 {
        let n = self.spaces[h].count();
        let p = self.spaces[h].degree();
        // coarse knot i = t(n+p) sits at fine index 2i − p of the 2n fine spans
        let fine = (t * (n + p) as f64) * 2.0 - p as f64;
        fine / (2 * n) as f64
    }
}

/// Coefficients of a spline on uniform knots after halving every span,
/// restricted to the functions whose support meets the domain.
fn refine_coefficients(space: &KnotVector, coef: &[f64]) -> Vec<f64> {
    let p = space.degree();
    let n = space.count();
    let kn = space.knots();
    // Each fine function of the halved uniform vector is a combination of
    // p + 2 consecutive coarse ones (two-scale relation); use the general
    // Oslo-free route: Boehm insertion of every midpoint.
    let mut knots = kn.to_vec();
    let mut c = coef.to_vec();
    for s in 0..(n + p) {
        let t = 0.5 * (kn[s] + kn[s + 1]);
        let (k2, c2) = boehm_raw(&knots, p, &c, t);
        knots = k2;
        c = c2;
    }
    // fine knots t''_i = i h/2; keep functions p..2n−1
    c[p..2 * n].to_vec()
}

/// Knot insertion without domain checks (scalar coefficients).
fn boehm_raw(kn: &[f64], p: usize, c: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    let n = c.len();
    // largest k with kn[k] <= t, restricted to valid spans
    let mut k = 0;
    while k + 1 < kn.len() && kn[k + 1] <= t {
        k += 1;
    }
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        if i + p <= k {
            out.push(c[i]);
        } else if i > k || i >= n {
            out.push(c[i - 1]);
        } else if i == 0 {
            out.push(c[0]);
        } else {
            let alpha = (t - kn[i]) / (kn[i + p] - kn[i]);
            out.push(alpha * c[i] + (1.0 - alpha) * c[i - 1]);
        }
    }
    let mut nk = Vec::with_capacity(kn.len() + 1);
    nk.extend_from_slice(&kn[..=k]);
    nk.push(t);
    nk.extend_from_slice(&kn[k + 1..]);
    (nk, out)
}
