//! Scalar B-spline primitives: Cox-de Boor evaluation, derivatives and
//! Boehm knot insertion.
//!
//! Spans are half-open, [t_k, t_{k+1}), except that a parameter equal to the
//! right end t_n of the domain [t_p, t_n] is evaluated as a left limit so that
//! curves are defined at both ends. 0/0 in the recursion is taken as 0.

use alloc::vec::Vec;

use crate::error::{bail, Result};

/// Largest degree supported by the stack-allocated fast paths.
pub const MAX_DEGREE: usize = 15;

/// Degree p and nondecreasing knots t_0..t_{n+p} defining n functions B_i^p.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if degree > MAX_DEGREE {
            bail!(Argument, "degree {degree} exceeds the supported maximum {MAX_DEGREE}");
        }
        if knots.iter().any(|t| !t.is_finite()) {
            bail!(Argument, "knots must be finite");
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            bail!(Argument, "knots must be nondecreasing");
        }
        if knots.len() < 2 * degree + 2 {
            bail!(
                Argument,
                "{} knots give n = {} functions of degree {degree}; need n > p",
                knots.len(),
                knots.len() as isize - degree as isize - 1
            );
        }
        let kv = KnotVector { knots, degree };
        let (a, b) = kv.domain();
        if !(b > a) {
            bail!(Argument, "empty parametric domain [t_p, t_n]");
        }
        Ok(kv)
    }

    /// Uniform knots t_i = i/(n+p), i = 0..n+p.
    pub fn uniform(n: usize, p: usize) -> Result<Self> {
        let m = n + p;
        Self::new((0..=m).map(|i| i as f64 / m as f64).collect(), p)
    }

    #[inline]
    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of functions n.
    #[inline]
    pub fn count(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    #[inline]
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Parametric domain [t_p, t_n] on which the functions sum to one.
    #[inline]
    pub fn domain(&self) -> (f64, f64) {
        (self.knots[self.degree], self.knots[self.count()])
    }

    /// Distinct knot values inside the domain, i.e. the element breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        let (a, b) = self.domain();
        let mut out: Vec<f64> = Vec::new();
        for &t in &self.knots[self.degree..=self.count()] {
            if t >= a && t <= b && out.last().map_or(true, |&l| t > l) {
                out.push(t);
            }
        }
        out
    }

    /// Multiplicity of the value `t` among the knots.
    pub fn multiplicity(&self, t: f64) -> usize {
        self.knots.iter().filter(|&&k| k == t).count()
    }

    /// Span index k with t_k ≤ t < t_{k+1}, restricted to the domain spans
    /// p ≤ k ≤ n − 1 (left limit at t_n). Parameters slightly outside the
    /// domain, e.g. from rounding, fall into the nearest end span.
    pub fn span(&self, t: f64) -> usize {
        let k = &self.knots;
        let (lo_s, hi_s) = (self.degree, self.count() - 1);
        // largest s with k[s] <= t, or lo_s
        let (mut lo, mut hi) = (lo_s, hi_s + 1);
        if t < k[lo] {
            return lo_s;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if k[mid] <= t {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // skip back over empty spans (repeated knots) at the right end
        while lo > lo_s && !(k[lo] < k[lo + 1]) {
            lo -= 1;
        }
        lo
    }

    /// B_i^p(t) by the Cox-de Boor recursion.
    pub fn eval(&self, i: usize, t: f64) -> Result<f64> {
        if i >= self.count() {
            bail!(Argument, "basis index {i} out of range 0..{}", self.count());
        }
        Ok(self.eval_raw(i, self.degree, t))
    }

    /// k-th derivative of B_i^p at t; k > p is rejected.
    pub fn eval_derivative(&self, i: usize, t: f64, k: usize) -> Result<f64> {
        if i >= self.count() {
            bail!(Argument, "basis index {i} out of range 0..{}", self.count());
        }
        if k > self.degree {
            bail!(Argument, "derivative order {k} exceeds degree {}", self.degree);
        }
        Ok(self.deriv_raw(i, self.degree, t, k))
    }

    fn deriv_raw(&self, i: usize, p: usize, t: f64, k: usize) -> f64 {
        if k == 0 {
            return self.eval_raw(i, p, t);
        }
        let kn = &self.knots;
        let mut v = 0.0;
        let d1 = kn[i + p] - kn[i];
        if d1 > 0.0 {
            v += self.deriv_raw(i, p - 1, t, k - 1) / d1;
        }
        let d2 = kn[i + p + 1] - kn[i + 1];
        if d2 > 0.0 {
            v -= self.deriv_raw(i + 1, p - 1, t, k - 1) / d2;
        }
        p as f64 * v
    }

    // Triangular Cox-de Boor table for a single function of degree p ≤ self.degree.
    fn eval_raw(&self, i: usize, p: usize, t: f64) -> f64 {
        let kn = &self.knots;
        if t < kn[i] || t > kn[i + p + 1] {
            return 0.0;
        }
        let right_closed = t == kn[self.count()];
        let mut n = [0.0f64; MAX_DEGREE + 2];
        for (j, nj) in n.iter_mut().enumerate().take(p + 1) {
            let (a, b) = (kn[i + j], kn[i + j + 1]);
            let inside = if right_closed { a < t && t <= b } else { a <= t && t < b };
            *nj = if inside { 1.0 } else { 0.0 };
        }
        for d in 1..=p {
            for j in 0..=(p - d) {
                let a = i + j;
                let mut v = 0.0;
                let l = kn[a + d] - kn[a];
                if l > 0.0 {
                    v += (t - kn[a]) / l * n[j];
                }
                let r = kn[a + d + 1] - kn[a + 1];
                if r > 0.0 {
                    v += (kn[a + d + 1] - t) / r * n[j + 1];
                }
                n[j] = v;
            }
        }
        n[0]
    }

    /// Values of the p+1 functions B_{s−p..=s} that can be nonzero on span s.
    pub fn nonzero_basis(&self, s: usize, t: f64, out: &mut [f64]) {
        let p = self.degree;
        let kn = &self.knots;
        let mut left = [0.0f64; MAX_DEGREE + 1];
        let mut right = [0.0f64; MAX_DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = t - kn[s + 1 - j];
            right[j] = kn[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let den = right[r + 1] + left[j - r];
                let temp = if den != 0.0 { out[r] / den } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Derivatives 0..=nd of the p+1 nonzero functions on span s, written
    /// row-major into `out[k*(p+1) + j]` (Piegl & Tiller, A2.3).
    pub fn nonzero_basis_ders(&self, s: usize, t: f64, nd: usize, out: &mut [f64]) {
        let p = self.degree;
        let kn = &self.knots;
        let w = p + 1;
        let mut ndu = [[0.0f64; MAX_DEGREE + 1]; MAX_DEGREE + 1];
        let mut left = [0.0f64; MAX_DEGREE + 1];
        let mut right = [0.0f64; MAX_DEGREE + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = t - kn[s + 1 - j];
            right[j] = kn[s + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = if ndu[j][r] != 0.0 { ndu[r][j - 1] / ndu[j][r] } else { 0.0 };
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for j in 0..=p {
            out[j] = ndu[j][p];
        }
        let mut a = [[0.0f64; MAX_DEGREE + 1]; 2];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p as isize - k as isize;
                if k > p {
                    out[k * w + r] = 0.0;
                    continue;
                }
                if r >= k {
                    let den = ndu[(pk + 1) as usize][rk as usize];
                    a[s2][0] = if den != 0.0 { a[s1][0] / den } else { 0.0 };
                    d = a[s2][0] * ndu[rk as usize][pk as usize];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if (r as isize - 1) <= pk { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let den = ndu[(pk + 1) as usize][(rk + j as isize) as usize];
                    a[s2][j] = if den != 0.0 { (a[s1][j] - a[s1][j - 1]) / den } else { 0.0 };
                    d += a[s2][j] * ndu[(rk + j as isize) as usize][pk as usize];
                }
                if r as isize <= pk {
                    let den = ndu[(pk + 1) as usize][r];
                    a[s2][k] = if den != 0.0 { -a[s1][k - 1] / den } else { 0.0 };
                    d += a[s2][k] * ndu[r][pk as usize];
                }
                out[k * w + r] = d;
                core::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nd.min(p) {
            for j in 0..=p {
                out[k * w + j] *= fac;
            }
            fac *= (p - k) as f64;
        }
    }
}

/// Boehm insertion of one knot into a spline with `dim`-dimensional control
/// points stored contiguously. The represented function is unchanged.
pub fn insert_knot(space: &KnotVector, ctrl: &[f64], dim: usize, t: f64) -> Result<(KnotVector, Vec<f64>)> {
    let n = space.count();
    let p = space.degree();
    if ctrl.len() != n * dim {
        bail!(Argument, "expected {} control values, got {}", n * dim, ctrl.len());
    }
    let (a, b) = space.domain();
    if !(t > a && t < b) {
        bail!(Argument, "knot {t} is not strictly inside the domain [{a}, {b}]");
    }
    let mult = space.multiplicity(t);
    if mult >= p.max(1) {
        bail!(Argument, "knot {t} already has full multiplicity {mult}");
    }
    let kn = space.knots();
    let k = space.span(t);
    let mut new_ctrl = Vec::with_capacity((n + 1) * dim);
    for i in 0..=n {
        if i + p <= k {
            new_ctrl.extend_from_slice(&ctrl[i * dim..(i + 1) * dim]);
        } else if i > k {
            new_ctrl.extend_from_slice(&ctrl[(i - 1) * dim..i * dim]);
        } else {
            let alpha = (t - kn[i]) / (kn[i + p] - kn[i]);
            for c in 0..dim {
                new_ctrl.push(alpha * ctrl[i * dim + c] + (1.0 - alpha) * ctrl[(i - 1) * dim + c]);
            }
        }
    }
    let mut new_knots = Vec::with_capacity(kn.len() + 1);
    new_knots.extend_from_slice(&kn[..=k]);
    new_knots.push(t);
    new_knots.extend_from_slice(&kn[k + 1..]);
    Ok((KnotVector::new(new_knots, p)?, new_ctrl))
}

/// Planar B-spline curve with control points (x_i, y_i).
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCurve2D {
    pub space: KnotVector,
    pub control: Vec<[f64; 2]>,
}

impl SplineCurve2D {
    pub fn new(space: KnotVector, control: Vec<[f64; 2]>) -> Result<Self> {
        if control.len() != space.count() {
            bail!(Argument, "{} control points for {} functions", control.len(), space.count());
        }
        Ok(SplineCurve2D { space, control })
    }

    /// k-th derivative of the curve at t (k = 0 gives the point).
    pub fn derivative(&self, t: f64, k: usize) -> [f64; 2] {
        let p = self.space.degree();
        let s = self.space.span(t);
        let mut d = [0.0f64; (MAX_DEGREE + 1) * (MAX_DEGREE + 1)];
        let nd = k.min(p);
        self.space.nonzero_basis_ders(s, t, nd, &mut d);
        if k > p {
            return [0.0, 0.0];
        }
        let mut out = [0.0, 0.0];
        for j in 0..=p {
            let w = d[k * (p + 1) + j];
            let c = self.control[s - p + j];
            out[0] += w * c[0];
            out[1] += w * c[1];
        }
        out
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        self.derivative(t, 0)
    }

    /// Curve refined by inserting `t`.
    pub fn insert_knot(&self, t: f64) -> Result<Self> {
        let flat: Vec<f64> = self.control.iter().flat_map(|c| [c[0], c[1]]).collect();
        let (space, ctrl) = insert_knot(&self.space, &flat, 2, t)?;
        let control = ctrl.chunks(2).map(|c| [c[0], c[1]]).collect();
        Ok(SplineCurve2D { space, control })
    }
}
