//! Quasi-periodic Helmholtz Green's function by Ewald summation.
//!
//! G^p(r) = Σ_ν e^{i k∥·p_ν} e^{ik|r − p_ν|} / (4π|r − p_ν|) is split into a
//! spatial sum of incomplete-gamma series and a spectral sum over the
//! Rayleigh modes k∥ + 2π(ν1/L1, ν2/L2). Arguments are first folded into the
//! unit cell with the quasi-periodic phase, so the truncation of both sums
//! can be fixed once per context from a priori bounds; the spatial shells
//! and the inner series additionally stop early on a relative criterion.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math::{self, CVec3, Vec3, C64, CZERO, I, PI, SQRT_PI};
use crate::special::{cerfc, erf, erfc, erfcx};

/// Free-space kernel e^{ik|r|}/(4π|r|).
pub fn free_space_g(k: f64, r: Vec3) -> Result<C64> {
    let d = math::norm(r);
    if d == 0.0 {
        bail!(Domain, "free-space kernel evaluated at r = 0");
    }
    Ok(math::expi(k * d) / (4.0 * PI * d))
}

/// Gradient of the free-space kernel with respect to r.
pub fn grad_free_space_g(k: f64, r: Vec3) -> Result<CVec3> {
    let d = math::norm(r);
    if d == 0.0 {
        bail!(Domain, "free-space kernel gradient evaluated at r = 0");
    }
    let g = math::expi(k * d) / (4.0 * PI * d);
    let f = g * C64::new(-1.0 / d, k) / d;
    Ok(math::cscale(r, f))
}

#[derive(Debug, Clone, Copy)]
struct SpatialTerm {
    nu: [i32; 2],
    shift: [f64; 2],
    phase: C64,
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    nu: [i32; 2],
    kt: [f64; 2],
    /// Vertical wavenumber, Im ≥ 0.
    kz: C64,
    evanescent: bool,
    /// |k_z| / (2a).
    b: f64,
}

/// Largest |ν_h| the spectral sum may reach.
const MAX_SPECTRAL_SHELL: usize = 60;

/// Ewald evaluation context for one wavenumber, lattice and Bloch vector.
#[derive(Debug, Clone)]
pub struct EwaldContext {
    k: f64,
    periods: [f64; 2],
    kpar: [f64; 2],
    a: f64,
    eps: f64,
    cj: Vec<f64>,
    kappa: f64,
    spatial: Vec<SpatialTerm>,
    spatial_shell_end: Vec<usize>,
    modes: Vec<Mode>,
    spectral_shells: usize,
}

/// Default splitting parameter: √π/√(L1 L2), raised to k/4 for large k so
/// that the e^{(k/2a)²} growth of the series stays bounded.
pub fn default_split(k: f64, periods: [f64; 2]) -> f64 {
    (SQRT_PI / math::sqrt(periods[0] * periods[1])).max(0.25 * k)
}

impl EwaldContext {
    /// `kpar` is the horizontal incident wave vector (k^inc_1, k^inc_2).
    pub fn new(k: f64, periods: [f64; 2], kpar: [f64; 2], a: Option<f64>, eps: f64) -> Result<Self> {
        Self::with_extra_shells(k, periods, kpar, a, eps, 0)
    }

    /// As [`new`](Self::new) with `extra` shells added to both truncations.
    pub fn with_extra_shells(k: f64, periods: [f64; 2], kpar: [f64; 2], a: Option<f64>, eps: f64, extra: usize) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            bail!(Argument, "wavenumber must be positive and finite, got {k}");
        }
        if !(periods[0] > 0.0 && periods[1] > 0.0) {
            bail!(Argument, "periods must be positive");
        }
        if !(eps > 0.0) {
            bail!(Argument, "Ewald tolerance must be positive");
        }
        let a = a.unwrap_or_else(|| default_split(k, periods));
        if !(a > 0.0) {
            bail!(Argument, "splitting parameter must be positive, got {a}");
        }
        let kappa = (k / (2.0 * a)) * (k / (2.0 * a));
        let mut cj = alloc::vec![1.0];
        // c_j = κ^j / j!, kept until far below the series tolerance
        loop {
            let j = cj.len() as f64;
            let next = cj[cj.len() - 1] * kappa / j;
            if j > kappa && next < 1e-3 * eps * f64::EPSILON {
                break;
            }
            cj.push(next);
            if cj.len() > 400 {
                break;
            }
        }
        let lmin = periods[0].min(periods[1]);
        let scale = 1.0 / (4.0 * PI * periods[0].max(periods[1]));
        let growth = math::exp(kappa);
        let target = 1e-2 * eps * scale;

        // Spatial shells, from the distance (s − 1/2) L_min of shell s to a
        // folded observation point.
        let mut spatial = Vec::new();
        let mut spatial_shell_end = Vec::new();
        let mut s = 0usize;
        let mut done_at = None;
        loop {
            for nu in shell(s) {
                let shift = [nu[0] as f64 * periods[0], nu[1] as f64 * periods[1]];
                let phase = math::expi(kpar[0] * shift[0] + kpar[1] * shift[1]);
                spatial.push(SpatialTerm { nu, shift, phase });
            }
            spatial_shell_end.push(spatial.len());
            if s >= 1 && done_at.is_none() {
                let d = (s as f64 + 0.5) * lmin;
                let bound = 8.0 * (s + 1) as f64 * erfc(a * d) / (4.0 * PI * d) * growth * (1.0 + 2.0 * a * d + k * d);
                if bound < target {
                    done_at = Some(s);
                }
            }
            if let Some(d) = done_at {
                if s >= d + extra {
                    break;
                }
            }
            s += 1;
            if s > 200 {
                bail!(Numerical, "spatial Ewald sum does not converge; splitting parameter {a} too small");
            }
        }

        // Spectral modes shell by shell until every mode of a shell is
        // evanescent with e^{−B²} negligible.
        let mut modes = Vec::new();
        let area = periods[0] * periods[1];
        let mut sp_done = None;
        let mut s = 0usize;
        loop {
            let mut shell_bound: f64 = 0.0;
            for nu in shell(s) {
                let kt = [kpar[0] + 2.0 * PI * nu[0] as f64 / periods[0], kpar[1] + 2.0 * PI * nu[1] as f64 / periods[1]];
                let kt2 = kt[0] * kt[0] + kt[1] * kt[1];
                let diff = k * k - kt2;
                if diff.abs() <= 1e-10 * k * k {
                    bail!(
                        Anomaly,
                        "Rayleigh anomaly: mode ({}, {}) has |k_t|² = {kt2} ≈ k² = {} (vertical wavenumber vanishes)",
                        nu[0],
                        nu[1],
                        k * k
                    );
                }
                let kz = math::sqrt_upper(C64::new(diff, 0.0));
                let evanescent = diff < 0.0;
                let b = math::cabs(kz) / (2.0 * a);
                if evanescent {
                    let kzm = kz.im;
                    shell_bound = shell_bound.max(4.0 * math::exp(-b * b) / (4.0 * area * kzm) * (1.0 + math::sqrt(kt2) + kzm));
                } else {
                    shell_bound = f64::INFINITY;
                }
                modes.push(Mode { nu, kt, kz, evanescent, b });
            }
            if sp_done.is_none() && 8.0 * (s + 1) as f64 * shell_bound < target {
                sp_done = Some(s);
            }
            if let Some(d) = sp_done {
                if s >= d + extra {
                    break;
                }
            }
            s += 1;
            if s > MAX_SPECTRAL_SHELL {
                bail!(Numerical, "spectral Ewald sum needs more than {MAX_SPECTRAL_SHELL} shells; splitting parameter {a} too large");
            }
        }
        Ok(EwaldContext { k, periods, kpar, a, eps, cj, kappa, spatial, spatial_shell_end, modes, spectral_shells: s })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn split(&self) -> f64 {
        self.a
    }

    pub fn periods(&self) -> [f64; 2] {
        self.periods
    }

    pub fn kpar(&self) -> [f64; 2] {
        self.kpar
    }

    /// Phase differences β_h = L_h k^inc_h.
    pub fn phases(&self) -> [f64; 2] {
        [self.periods[0] * self.kpar[0], self.periods[1] * self.kpar[1]]
    }

    /// e^{i k∥·p_ν}.
    pub fn lattice_phase(&self, nu: [i32; 2]) -> C64 {
        math::expi(self.kpar[0] * nu[0] as f64 * self.periods[0] + self.kpar[1] * nu[1] as f64 * self.periods[1])
    }

    /// Number of spatial terms and spectral modes in use.
    pub fn term_counts(&self) -> (usize, usize) {
        (self.spatial.len(), self.modes.len())
    }

    /// Lattice index μ with r − p_μ inside the unit cell.
    fn fold(&self, r: Vec3) -> ([i32; 2], Vec3) {
        let m1 = math::round(r[0] / self.periods[0]);
        let m2 = math::round(r[1] / self.periods[1]);
        ([m1 as i32, m2 as i32], [r[0] - m1 * self.periods[0], r[1] - m2 * self.periods[1], r[2]])
    }

    /// G^p(r).
    pub fn gp(&self, r: Vec3) -> Result<C64> {
        Ok(self.gp_and_grad(r)?.0)
    }

    /// ∇_r G^p(r); the gradient in the source point is its negative.
    pub fn grad_gp(&self, r: Vec3) -> Result<CVec3> {
        Ok(self.gp_and_grad(r)?.1)
    }

    /// Value and gradient together (shared work).
    pub fn gp_and_grad(&self, r: Vec3) -> Result<(C64, CVec3)> {
        let (mu, rf) = self.fold(r);
        if math::norm(rf) < 1e-12 * self.periods[0].min(self.periods[1]) {
            bail!(Domain, "periodic Green's function evaluated on a lattice point");
        }
        let (g, dg) = self.sum(rf, false);
        let ph = self.lattice_phase(mu);
        Ok((g * ph, dg.map(|c| c * ph)))
    }

    /// G^p(r) − e^{ik|r|}/(4π|r|), smooth near r = 0 and finite at r = 0.
    pub fn gp_regular(&self, r: Vec3) -> C64 {
        self.gp_regular_and_grad(r).0
    }

    /// Value and gradient of [`gp_regular`](Self::gp_regular).
    pub fn gp_regular_and_grad(&self, r: Vec3) -> (C64, CVec3) {
        let (mu, rf) = self.fold(r);
        if mu == [0, 0] {
            return self.sum(rf, true);
        }
        // Far from the origin singularity: plain subtraction is accurate.
        let (g, dg) = self.sum(rf, false);
        let ph = self.lattice_phase(mu);
        let g0 = free_space_g(self.k, r).unwrap_or(CZERO);
        let d0 = grad_free_space_g(self.k, r).unwrap_or([CZERO; 3]);
        (g * ph - g0, [dg[0] * ph - d0[0], dg[1] * ph - d0[1], dg[2] * ph - d0[2]])
    }

    // Ewald sum at a folded point; with `regular` the free-space kernel is
    // removed analytically from the ν = 0 spatial term.
    fn sum(&self, r: Vec3, regular: bool) -> (C64, CVec3) {
        let (g1, d1) = self.spatial_sum(r, regular);
        let (g2, d2) = self.spectral_sum(r);
        (g1 + g2, [d1[0] + d2[0], d1[1] + d2[1], d1[2] + d2[2]])
    }

    fn spatial_sum(&self, r: Vec3, regular: bool) -> (C64, CVec3) {
        let pref = self.a / (4.0 * PI * SQRT_PI);
        let mut g = CZERO;
        let mut dg = [CZERO; 3];
        let mut start = 0;
        for (s, &end) in self.spatial_shell_end.iter().enumerate() {
            let mut shell_g = CZERO;
            for t in &self.spatial[start..end] {
                let d = [r[0] - t.shift[0], r[1] - t.shift[1], r[2]];
                let rr = math::norm(d);
                let (f, fp) = if regular && t.nu == [0, 0] {
                    self.regular_radial(rr)
                } else {
                    let (f, fp) = self.radial(rr);
                    (C64::new(pref * f, 0.0), C64::new(pref * fp, 0.0))
                };
                let v = f * t.phase;
                shell_g += v;
                if rr > 0.0 {
                    let w = fp * t.phase / rr;
                    for c in 0..3 {
                        dg[c] += w * d[c];
                    }
                }
            }
            g += shell_g;
            start = end;
            if s >= 2 && math::cabs(shell_g) <= self.eps * math::cabs(g) {
                break;
            }
        }
        (g, dg)
    }

    /// Σ_j c_j Q_j(aR) and its R-derivative (without the a/4π^{3/2} factor).
    fn radial(&self, rr: f64) -> (f64, f64) {
        let a = self.a;
        let y = a * rr;
        let x = y * y;
        let q0 = SQRT_PI * erfc(y) / y;
        if q0 * math::exp(self.kappa) < 1e-3 * self.eps * f64::EPSILON * q0.max(1.0) && y > 6.0 {
            return (0.0, 0.0);
        }
        let ex = math::exp(-x);
        let mut sum = q0;
        let mut dsum = a * (-q0 - 2.0 * ex) / y;
        let mut qprev = q0;
        for j in 1..self.cj.len() {
            let q = (ex - x * qprev) / (j as f64 - 0.5);
            let term = self.cj[j] * q;
            let dterm = self.cj[j] * a * (-2.0 * y * qprev);
            sum += term;
            dsum += dterm;
            qprev = q;
            if j as f64 > self.kappa && term.abs() <= self.eps * sum.abs() && dterm.abs() <= self.eps * dsum.abs() {
                break;
            }
        }
        (sum, dsum)
    }

    /// ν = 0 spatial term minus the free-space kernel, and its R-derivative.
    fn regular_radial(&self, rr: f64) -> (C64, C64) {
        let (a, k) = (self.a, self.k);
        let pref = a / (4.0 * PI * SQRT_PI);
        let y = a * rr;
        let x = y * y;
        let ex = math::exp(-x);
        // [erfc(aR) − e^{ikR}]/(4πR)
        let (h1, h1p) = if rr == 0.0 {
            (C64::new(-2.0 * a / SQRT_PI, -k) / (4.0 * PI), CZERO)
        } else {
            let sh = math::sin(0.5 * k * rr);
            let num = C64::new(erf(y) - 2.0 * sh * sh, math::sin(k * rr));
            let h1 = -num / (4.0 * PI * rr);
            let h1p = if rr * a.max(k) < 0.5 {
                // Taylor series of the derivative; the direct formula cancels here.
                let mut s1 = 0.0;
                let mut t = rr;
                let mut n = 0usize;
                loop {
                    let term = t / (2 * n + 3) as f64;
                    s1 += term;
                    if term.abs() < 1e-17 * s1.abs() || n > 60 {
                        break;
                    }
                    n += 1;
                    t *= -a * a * rr * rr / n as f64;
                }
                let mut s2 = CZERO;
                let mut t = C64::new(1.0, 0.0);
                let mut m = 0usize;
                loop {
                    let term = t / (m + 2) as f64;
                    s2 += term;
                    if math::cabs(term) < 1e-17 * math::cabs(s2) || m > 80 {
                        break;
                    }
                    m += 1;
                    t = t * I * (k * rr) / m as f64;
                }
                (C64::new(4.0 * a * a * a / SQRT_PI * s1, 0.0) + s2 * (k * k)) / (4.0 * PI)
            } else {
                let e = math::expi(k * rr);
                C64::new(-2.0 * a / SQRT_PI * ex, 0.0) / (4.0 * PI * rr) - I * k * e / (4.0 * PI * rr) - h1 / rr
            };
            (h1, h1p)
        };
        // j ≥ 1 part of the incomplete-gamma series, finite at R = 0
        let mut sum = 0.0;
        let mut dsum = 0.0;
        let erfc_y = erfc(y);
        let mut qprev = if rr == 0.0 { f64::INFINITY } else { SQRT_PI * erfc_y / y };
        for j in 1..self.cj.len() {
            let q = if rr == 0.0 { 1.0 / (j as f64 - 0.5) } else { (ex - x * qprev) / (j as f64 - 0.5) };
            // −2y Q_{j−1}, with y Q_0 = √π erfc(y)
            let yq = if j == 1 { SQRT_PI * erfc_y } else { y * qprev };
            let term = self.cj[j] * q;
            let dterm = self.cj[j] * a * (-2.0 * yq);
            sum += term;
            dsum += dterm;
            qprev = q;
            if j as f64 > self.kappa && term.abs() <= self.eps * sum.abs() && dterm.abs() <= self.eps * dsum.abs().max(1e-300) {
                break;
            }
        }
        (h1 + pref * sum, h1p + pref * dsum)
    }

    fn spectral_sum(&self, r: Vec3) -> (C64, CVec3) {
        let s = self.spectral_shells.min(MAX_SPECTRAL_SHELL);
        // 1D phase tables e^{i 2π ν x / L}
        let mut px = [CZERO; 2 * MAX_SPECTRAL_SHELL + 1];
        let mut py = [CZERO; 2 * MAX_SPECTRAL_SHELL + 1];
        let ux = math::expi(2.0 * PI * r[0] / self.periods[0]);
        let uy = math::expi(2.0 * PI * r[1] / self.periods[1]);
        px[s] = C64::new(1.0, 0.0);
        py[s] = C64::new(1.0, 0.0);
        for n in 1..=s {
            px[s + n] = px[s + n - 1] * ux;
            px[s - n] = px[s - n + 1] * ux.conj();
            py[s + n] = py[s + n - 1] * uy;
            py[s - n] = py[s - n + 1] * uy.conj();
        }
        let base = math::expi(self.kpar[0] * r[0] + self.kpar[1] * r[1]);
        let area4 = 4.0 * self.periods[0] * self.periods[1];
        let z = r[2];
        let u = self.a * z;
        let mut g = CZERO;
        let mut dg = [CZERO; 3];
        for m in &self.modes {
            let ph = base * px[(s as i32 + m.nu[0]) as usize] * py[(s as i32 + m.nu[1]) as usize];
            // F = (i/(4A k_z)) [e^{−ik_z z} erfc(c + az) + e^{ik_z z} erfc(c − az)],
            // c = −ik_z/(2a); ∂F/∂z = (T+ − T−)/(4A), the Gaussian terms cancel.
            let (val, dz) = if m.evanescent {
                let (b, kz) = (m.b, m.kz.im);
                let damp = math::exp(-b * b - u * u);
                let tp = damp * erfcx(b + u);
                let tm = if b >= u { damp * erfcx(b - u) } else { 2.0 * math::exp(-kz * z) - damp * erfcx(u - b) };
                (C64::new((tp + tm) / (area4 * kz), 0.0), C64::new((tp - tm) / area4, 0.0))
            } else {
                let kz = m.kz.re;
                let c = C64::new(0.0, -m.b);
                let tp = math::expi(-kz * z) * cerfc(c + u);
                let tm = math::expi(kz * z) * cerfc(c - u);
                (I * (tp + tm) / (area4 * kz), (tp - tm) / area4)
            };
            let v = ph * val;
            g += v;
            dg[0] += v * C64::new(0.0, m.kt[0]);
            dg[1] += v * C64::new(0.0, m.kt[1]);
            dg[2] += ph * dz;
        }
        (g, dg)
    }
}

/// Lattice indices with max(|ν1|, |ν2|) = s.
fn shell(s: usize) -> Vec<[i32; 2]> {
    let s = s as i32;
    if s == 0 {
        return alloc::vec![[0, 0]];
    }
    let mut out = Vec::with_capacity(8 * s as usize);
    for i in -s..=s {
        out.push([i, -s]);
        out.push([i, s]);
    }
    for j in (-s + 1)..s {
        out.push([-s, j]);
        out.push([s, j]);
    }
    out
}

/// Evaluation of G^p and of its smooth remainder around one lattice image.
pub trait PeriodicKernel: Sync {
    fn k(&self) -> f64;

    fn periods(&self) -> [f64; 2];

    /// G^p(r) and ∇_r G^p(r).
    fn gp_and_grad(&self, r: Vec3) -> Result<(C64, CVec3)>;

    /// G^p(r) − e^{i k∥·p_ν} G(r − p_ν) and its gradient: the kernel left
    /// after removing the free-space singularity of image ν.
    fn gp_minus_image(&self, r: Vec3, nu: [i32; 2]) -> (C64, CVec3);
}

impl PeriodicKernel for EwaldContext {
    fn k(&self) -> f64 {
        self.k
    }

    fn periods(&self) -> [f64; 2] {
        self.periods
    }

    fn gp_and_grad(&self, r: Vec3) -> Result<(C64, CVec3)> {
        EwaldContext::gp_and_grad(self, r)
    }

    fn gp_minus_image(&self, r: Vec3, nu: [i32; 2]) -> (C64, CVec3) {
        let rs = [r[0] - nu[0] as f64 * self.periods[0], r[1] - nu[1] as f64 * self.periods[1], r[2]];
        let ph = self.lattice_phase(nu);
        let (g, dg) = self.gp_regular_and_grad(rs);
        (g * ph, dg.map(|c| c * ph))
    }
}

const MAX_TABLE_ORDER: usize = 12;

/// Piecewise tensor Chebyshev interpolant of G^p − G over the folded cell
/// [−L1/2, L1/2] × [−L2/2, L2/2] × [z0, z1].
///
/// The remainder is smooth (the only singularity of G^p in the folded cell
/// is the free-space one at the origin), so a modest order per box reaches
/// near machine accuracy; gradients come from differentiating the
/// interpolant. One evaluation costs about 2n³ flops instead of a full Ewald
/// sum.
#[derive(Debug, Clone)]
pub struct KernelTable {
    k: f64,
    periods: [f64; 2],
    kpar: [f64; 2],
    lo: Vec3,
    width: Vec3,
    boxes: [usize; 3],
    order: usize,
    coef: Vec<C64>,
}

impl KernelTable {
    /// Table with the default resolution: 8 nodes per direction and boxes no
    /// wider than 1.25/k and L/8 (about 1e-9 absolute accuracy).
    pub fn new(ctx: &EwaldContext, z_range: (f64, f64)) -> Result<Self> {
        let hmax = (1.25 / ctx.k()).min(0.125 * ctx.periods()[0].min(ctx.periods()[1]));
        Self::with_resolution(ctx, z_range, 8, hmax)
    }

    /// Table with `order` Chebyshev nodes per direction and box edges at
    /// most `hmax`.
    pub fn with_resolution(ctx: &EwaldContext, z_range: (f64, f64), order: usize, hmax: f64) -> Result<Self> {
        if !(2..=MAX_TABLE_ORDER).contains(&order) {
            bail!(Argument, "table order must be in 2..={MAX_TABLE_ORDER}, got {order}");
        }
        if !(hmax > 0.0) || !(z_range.1 >= z_range.0) {
            bail!(Argument, "invalid table extent");
        }
        let l = ctx.periods();
        let zspan = (z_range.1 - z_range.0).max(1e-3 * hmax);
        let ext = [l[0], l[1], zspan];
        let boxes = ext.map(|e| (math::ceil(e / hmax) as usize).max(1));
        let width = [ext[0] / boxes[0] as f64, ext[1] / boxes[1] as f64, ext[2] / boxes[2] as f64];
        let lo = [-0.5 * l[0], -0.5 * l[1], 0.5 * (z_range.0 + z_range.1) - 0.5 * zspan];
        let n = order;
        let nodes: Vec<f64> = (0..n).map(|j| math::cos(PI * (j as f64 + 0.5) / n as f64)).collect();
        // T_k(x_j) for the discrete cosine transform
        let mut tk = alloc::vec![0.0; n * n];
        for k in 0..n {
            for j in 0..n {
                tk[k * n + j] = math::cos(PI * k as f64 * (j as f64 + 0.5) / n as f64);
            }
        }
        let nbox = boxes[0] * boxes[1] * boxes[2];
        let fill = |b: usize| -> Vec<C64> {
            let (bx, by, bz) = (b / (boxes[1] * boxes[2]), (b / boxes[2]) % boxes[1], b % boxes[2]);
            let origin = [lo[0] + bx as f64 * width[0], lo[1] + by as f64 * width[1], lo[2] + bz as f64 * width[2]];
            let at = |d: usize, s: f64| origin[d] + 0.5 * width[d] * (s + 1.0);
            let mut v = alloc::vec![CZERO; n * n * n];
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let r = [at(0, nodes[i]), at(1, nodes[j]), at(2, nodes[k])];
                        v[(i * n + j) * n + k] = ctx.sum(r, true).0;
                    }
                }
            }
            // separable transform along each axis
            let mut w = alloc::vec![CZERO; n * n * n];
            for axis in 0..3 {
                let stride = [n * n, n, 1][axis];
                for idx in 0..n * n * n {
                    let pos = (idx / stride) % n;
                    let base = idx - pos * stride;
                    let mut s = CZERO;
                    for j in 0..n {
                        s += v[base + j * stride] * tk[pos * n + j];
                    }
                    w[idx] = s * if pos == 0 { 1.0 / n as f64 } else { 2.0 / n as f64 };
                }
                core::mem::swap(&mut v, &mut w);
            }
            v
        };
        let coef: Vec<C64> = crate::par::map(nbox, fill).into_iter().flatten().collect();
        Ok(KernelTable { k: ctx.k(), periods: l, kpar: ctx.kpar(), lo, width, boxes, order: n, coef })
    }

    /// Vertical extent covered.
    pub fn z_range(&self) -> (f64, f64) {
        (self.lo[2], self.lo[2] + self.width[2] * self.boxes[2] as f64)
    }

    pub fn kpar(&self) -> [f64; 2] {
        self.kpar
    }

    fn lattice_phase(&self, nu: [i32; 2]) -> C64 {
        math::expi(self.kpar[0] * nu[0] as f64 * self.periods[0] + self.kpar[1] * nu[1] as f64 * self.periods[1])
    }

    fn fold(&self, r: Vec3) -> ([i32; 2], Vec3) {
        let m1 = math::round(r[0] / self.periods[0]);
        let m2 = math::round(r[1] / self.periods[1]);
        ([m1 as i32, m2 as i32], [r[0] - m1 * self.periods[0], r[1] - m2 * self.periods[1], r[2]])
    }

    /// Interpolated (G^p − G)(r) and gradient for r in the folded cell.
    /// Points slightly outside are extrapolated from the nearest box.
    pub fn regular(&self, r: Vec3) -> (C64, CVec3) {
        let n = self.order;
        let mut t = [[0.0; MAX_TABLE_ORDER]; 3];
        let mut dt = [[0.0; MAX_TABLE_ORDER]; 3];
        let mut bidx = [0usize; 3];
        for d in 0..3 {
            let u = (r[d] - self.lo[d]) / self.width[d];
            let b = (math::floor(u).max(0.0) as usize).min(self.boxes[d] - 1);
            bidx[d] = b;
            let s = 2.0 * (u - b as f64) - 1.0;
            let scale = 2.0 / self.width[d];
            // T_k and T_k' by the three-term recurrences (U for derivatives)
            t[d][0] = 1.0;
            t[d][1] = s;
            let (mut u0, mut u1) = (1.0, 2.0 * s);
            dt[d][0] = 0.0;
            dt[d][1] = scale;
            for k in 2..n {
                t[d][k] = 2.0 * s * t[d][k - 1] - t[d][k - 2];
                dt[d][k] = k as f64 * u1 * scale;
                let u2 = 2.0 * s * u1 - u0;
                u0 = u1;
                u1 = u2;
            }
        }
        let b = (bidx[0] * self.boxes[1] + bidx[1]) * self.boxes[2] + bidx[2];
        let c = &self.coef[b * n * n * n..(b + 1) * n * n * n];
        let (tz, dtz) = (&t[2][..n], &dt[2][..n]);
        let mut val = CZERO;
        let mut grad = [CZERO; 3];
        for i in 0..n {
            let mut a00 = CZERO;
            let mut a01 = CZERO;
            let mut a10 = CZERO;
            for j in 0..n {
                let row = &c[(i * n + j) * n..(i * n + j + 1) * n];
                let mut s0 = CZERO;
                let mut s1 = CZERO;
                for k in 0..n {
                    s0 += row[k] * tz[k];
                    s1 += row[k] * dtz[k];
                }
                a00 += s0 * t[1][j];
                a01 += s0 * dt[1][j];
                a10 += s1 * t[1][j];
            }
            val += a00 * t[0][i];
            grad[0] += a00 * dt[0][i];
            grad[1] += a01 * t[0][i];
            grad[2] += a10 * t[0][i];
        }
        (val, grad)
    }
}

impl PeriodicKernel for KernelTable {
    fn k(&self) -> f64 {
        self.k
    }

    fn periods(&self) -> [f64; 2] {
        self.periods
    }

    fn gp_and_grad(&self, r: Vec3) -> Result<(C64, CVec3)> {
        let (mu, rf) = self.fold(r);
        let (t, dt) = self.regular(rf);
        let g = free_space_g(self.k, rf)?;
        let dg = grad_free_space_g(self.k, rf)?;
        let ph = self.lattice_phase(mu);
        Ok(((g + t) * ph, [(dg[0] + dt[0]) * ph, (dg[1] + dt[1]) * ph, (dg[2] + dt[2]) * ph]))
    }

    fn gp_minus_image(&self, r: Vec3, nu: [i32; 2]) -> (C64, CVec3) {
        let rs = [r[0] - nu[0] as f64 * self.periods[0], r[1] - nu[1] as f64 * self.periods[1], r[2]];
        let (mu, rf) = self.fold(rs);
        let ph = self.lattice_phase(nu);
        let (t, dt) = self.regular(rf);
        if mu == [0, 0] {
            return (t * ph, dt.map(|c| c * ph));
        }
        // rs is far from the origin, so both free-space terms are finite
        let phm = self.lattice_phase(mu);
        let g = free_space_g(self.k, rf).unwrap_or(CZERO) + t;
        let g0 = free_space_g(self.k, rs).unwrap_or(CZERO);
        let dgf = grad_free_space_g(self.k, rf).unwrap_or([CZERO; 3]);
        let dg0 = grad_free_space_g(self.k, rs).unwrap_or([CZERO; 3]);
        let mut grad = [CZERO; 3];
        for d in 0..3 {
            grad[d] = ((dgf[d] + dt[d]) * phm - dg0[d]) * ph;
        }
        ((g * phm - g0) * ph, grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const L: [f64; 2] = [1.0, 1.0];

    fn ctx(k: f64, a: Option<f64>) -> EwaldContext {
        EwaldContext::new(k, L, [4.0, 4.0], a, 1e-14).unwrap()
    }

    fn pts() -> Vec<Vec3> {
        // deterministic scatter of off-lattice points, some outside the cell
        (0..20)
            .map(|i| {
                let t = i as f64;
                [0.9 * math::sin(1.3 * t + 0.2), 0.8 * math::cos(0.7 * t + 1.1) + 0.3, 0.35 * math::sin(2.1 * t + 0.4)]
            })
            .collect()
    }

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).norm() / b.norm()
    }

    // Pure Rayleigh series, convergent for r3 ≠ 0.
    fn spectral_oracle(k: f64, kpar: [f64; 2], r: Vec3) -> C64 {
        let mut g = CZERO;
        let n = 40;
        for i in -n..=n {
            for j in -n..=n {
                let kt = [kpar[0] + 2.0 * PI * i as f64, kpar[1] + 2.0 * PI * j as f64];
                let kz = math::sqrt_upper(C64::new(k * k - kt[0] * kt[0] - kt[1] * kt[1], 0.0));
                let e = math::cexp(I * (kt[0] * r[0] + kt[1] * r[1]) + I * kz * r[2].abs());
                g += I * e / (2.0 * kz);
            }
        }
        g
    }

    #[test]
    fn agrees_with_spectral_series_off_plane() {
        for &k in &[8.0, 10.0, 16.0] {
            let c = ctx(k, None);
            for i in 0..6 {
                let r = [0.13 * i as f64 - 0.31, 0.4 - 0.11 * i as f64, if i % 2 == 0 { 0.4 } else { -0.4 }];
                let want = spectral_oracle(k, [4.0, 4.0], r);
                let got = c.gp(r).unwrap();
                assert!(rel(got, want) < 1e-10, "k={k} r={r:?} {got} {want} {}", rel(got, want));
            }
        }
    }

    #[test]
    fn lattice_shift_identity() {
        let c = ctx(8.0, None);
        let beta = c.phases();
        for r in pts() {
            let g = c.gp(r).unwrap();
            let g1 = c.gp([r[0] - 1.0, r[1], r[2]]).unwrap();
            let g2 = c.gp([r[0], r[1] - 1.0, r[2]]).unwrap();
            assert!(rel(g1, g * math::expi(-beta[0])) < 1e-10);
            assert!(rel(g2, g * math::expi(-beta[1])) < 1e-10);
            let d = c.grad_gp(r).unwrap();
            let d2 = c.grad_gp([r[0], r[1] - 1.0, r[2]]).unwrap();
            for m in 0..3 {
                assert!((d2[m] - d[m] * math::expi(-beta[1])).norm() < 1e-10 * math::cnorm(d));
            }
        }
    }

    #[test]
    fn split_parameter_independence() {
        for &k in &[8.0, 16.0] {
            let c1 = ctx(k, Some(default_split(k, L)));
            let c2 = ctx(k, Some(2.0 * default_split(k, L)));
            for r in pts() {
                let (a, b) = (c1.gp(r).unwrap(), c2.gp(r).unwrap());
                assert!(rel(a, b) < 1e-10, "k={k} r={r:?} {a} {b}");
            }
            let (a, b) = (c1.gp_regular([0.0; 3]), c2.gp_regular([0.0; 3]));
            assert!(rel(a, b) < 1e-10, "regular part at the origin: {a} {b}");
        }
    }

    #[test]
    fn helmholtz_residual() {
        let k = 8.0;
        let c = ctx(k, None);
        let h = 1e-3;
        for r in pts().into_iter().take(10) {
            let g = c.gp(r).unwrap();
            let mut lap = g * -6.0;
            for m in 0..3 {
                let mut rp = r;
                let mut rm = r;
                rp[m] += h;
                rm[m] -= h;
                lap += c.gp(rp).unwrap() + c.gp(rm).unwrap();
            }
            lap = lap / (h * h);
            let res = (lap + g * k * k).norm() / (g * k * k).norm();
            assert!(res < 1e-4, "r={r:?} residual {res}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for &k in &[8.0, 16.0] {
            let c = ctx(k, None);
            let h = 1e-6;
            for r in pts().into_iter().take(10) {
                let d = c.grad_gp(r).unwrap();
                for m in 0..3 {
                    let mut rp = r;
                    let mut rm = r;
                    rp[m] += h;
                    rm[m] -= h;
                    let fd = (c.gp(rp).unwrap() - c.gp(rm).unwrap()) / (2.0 * h);
                    assert!((fd - d[m]).norm() < 1e-6 * math::cnorm(d), "k={k} r={r:?} m={m} {fd} {}", d[m]);
                }
            }
        }
    }

    #[test]
    fn gradient_reflection_symmetry() {
        let c = ctx(8.0, None);
        let cm = EwaldContext::new(8.0, L, [-4.0, -4.0], None, 1e-14).unwrap();
        for r in pts() {
            let d = c.grad_gp([-r[0], -r[1], -r[2]]).unwrap();
            let e = cm.grad_gp(r).unwrap();
            for m in 0..3 {
                assert!((d[m] + e[m]).norm() < 1e-10 * math::cnorm(e));
            }
        }
    }

    #[test]
    fn regular_part_is_consistent_and_smooth() {
        let k = 10.0;
        let c = EwaldContext::new(k, L, [1.3, -0.4], None, 1e-14).unwrap();
        let dir = [0.48, -0.6, 0.64];
        let r = math::scale(dir, 0.05);
        let want = c.gp(r).unwrap() - free_space_g(k, r).unwrap();
        assert!(rel(c.gp_regular(r), want) < 1e-12);
        // Richardson extrapolation from 1e-3, 1e-4, 1e-5 towards r = 0 (the
        // function is smooth in |r| along a ray, first order term included).
        let f = |s: f64| c.gp_regular(math::scale(dir, s));
        let (f1, f2, f3) = (f(1e-3), f(1e-4), f(1e-5));
        let e12 = (f2 * 10.0 - f1) / 9.0;
        let e23 = (f3 * 10.0 - f2) / 9.0;
        let ext = (e23 * 100.0 - e12) / 99.0;
        assert!((ext - c.gp_regular([0.0; 3])).norm() < 1e-8, "{ext} {}", c.gp_regular([0.0; 3]));
        // gradient of the regular part against finite differences
        let rr = [0.02, -0.01, 0.015];
        let (_, d) = c.gp_regular_and_grad(rr);
        let h = 1e-6;
        for m in 0..3 {
            let mut rp = rr;
            let mut rm = rr;
            rp[m] += h;
            rm[m] -= h;
            let fd = (c.gp_regular(rp) - c.gp_regular(rm)) / (2.0 * h);
            assert!((fd - d[m]).norm() < 1e-6 * math::cnorm(d).max(1.0), "m={m} {fd} {}", d[m]);
        }
        // at larger radius both branches of the radial derivative agree
        let (_, d1) = c.gp_regular_and_grad(math::scale(dir, 0.5 / c.split().max(k) * 0.999));
        let (_, d2) = c.gp_regular_and_grad(math::scale(dir, 0.5 / c.split().max(k) * 1.001));
        assert!(math::cnorm([d1[0] - d2[0], d1[1] - d2[1], d1[2] - d2[2]]) < 1e-2 * math::cnorm(d1));
    }

    #[test]
    fn truncation_is_converged() {
        let k = 12.0;
        let c = EwaldContext::new(k, L, [4.0, 4.0], None, 1e-14).unwrap();
        let c2 = EwaldContext::with_extra_shells(k, L, [4.0, 4.0], None, 1e-14, 3).unwrap();
        assert!(c2.term_counts().0 > c.term_counts().0 && c2.term_counts().1 > c.term_counts().1);
        for r in pts() {
            let (a, b) = (c.gp(r).unwrap(), c2.gp(r).unwrap());
            assert!(rel(a, b) < 10.0 * 1e-14 * 10.0, "{}", rel(a, b));
        }
    }

    #[test]
    fn anomaly_and_lattice_point_are_rejected() {
        // k^inc = 0 and k = 2π: modes (±1, 0) graze.
        let e = EwaldContext::new(2.0 * PI, L, [0.0, 0.0], None, 1e-14).unwrap_err();
        assert!(matches!(e, crate::Error::Anomaly(_)));
        let c = ctx(8.0, None);
        assert!(c.gp([1.0, -2.0, 0.0]).is_err());
    }

    #[test]
    fn free_space_kernel() {
        let r = [0.6, 0.0, 0.8];
        let g = free_space_g(2.0 * PI, r).unwrap();
        assert!((g - C64::new(1.0 / (4.0 * PI), 0.0)).norm() < 1e-15);
        let g0 = free_space_g(1e-12, [0.0, 2.0, 0.0]).unwrap();
        assert!((g0.re - 1.0 / (8.0 * PI)).abs() < 1e-15);
        assert!(free_space_g(1.0, [0.0; 3]).is_err());
        let k = 3.0;
        let p = [0.3, -0.2, 0.5];
        let d = grad_free_space_g(k, p).unwrap();
        let h = 1e-6;
        for m in 0..3 {
            let mut a = p;
            let mut b = p;
            a[m] += h;
            b[m] -= h;
            let fd = (free_space_g(k, a).unwrap() - free_space_g(k, b).unwrap()) / (2.0 * h);
            assert!((fd - d[m]).norm() < 1e-8);
        }
    }

    #[test]
    fn kernel_table_matches_direct_evaluation() {
        let c = EwaldContext::new(10.0, L, [5.0, 5.0], None, 1e-14).unwrap();
        let tab = KernelTable::new(&c, (-0.25, 0.25)).unwrap();
        let (z0, z1) = tab.z_range();
        assert!(z0 <= -0.25 && z1 >= 0.25);
        let mut worst = (0.0f64, 0.0f64);
        for i in 0..200 {
            let t = i as f64;
            let r = [0.5 * math::sin(1.7 * t + 0.3), 0.5 * math::cos(0.9 * t + 1.1), 0.25 * math::sin(2.3 * t + 0.4)];
            let (a, da) = c.gp_regular_and_grad(r);
            let (b, db) = tab.regular(r);
            worst.0 = worst.0.max((a - b).norm());
            for d in 0..3 {
                worst.1 = worst.1.max((da[d] - db[d]).norm() / c.k());
            }
            // full kernel and image-subtracted kernel away from the origin
            let rr = [r[0] + 1.3, r[1] - 0.6, r[2]];
            let (g, dg) = PeriodicKernel::gp_and_grad(&tab, rr).unwrap();
            let (ge, dge) = c.gp_and_grad(rr).unwrap();
            assert!((g - ge).norm() < 1e-8 && (dg[2] - dge[2]).norm() < 1e-5 * c.k());
            for nu in [[0, 0], [1, -1], [1, 0]] {
                let (g, dg) = tab.gp_minus_image(rr, nu);
                let (ge, dge) = c.gp_minus_image(rr, nu);
                assert!((g - ge).norm() < 1e-8, "{nu:?}: {g} vs {ge}");
                assert!((dg[0] - dge[0]).norm() < 1e-5 * c.k());
            }
        }
        assert!(worst.0 < 2e-9 && worst.1 < 1e-7, "{worst:?}");
    }

    #[test]
    fn image_subtracted_kernel_is_finite_at_the_image() {
        let c = ctx(8.0, None);
        let nu = [1, 0];
        let (g, _) = c.gp_minus_image([1.0, 0.0, 0.0], nu);
        let near = c.gp_minus_image([1.0 + 1e-5, 0.0, 0.0], nu).0;
        assert!(g.norm().is_finite() && (g - near).norm() < 1e-3);
        // consistency with the full kernel off the image
        let r = [0.7, 0.2, 0.1];
        let free = free_space_g(8.0, [r[0] - 1.0, r[1], r[2]]).unwrap() * c.lattice_phase(nu);
        assert!((c.gp_minus_image(r, nu).0 - (c.gp(r).unwrap() - free)).norm() < 1e-12);
    }
}
