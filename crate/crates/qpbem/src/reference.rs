//! Closed-form oracles: transfer matrices for plane multilayers, the exact
//! currents of a stack whose layers are all the same medium, and the
//! surface-plasmon dispersion relation of a metal/air interface.

use alloc::vec::Vec;

use crate::assembly::{IncidentWave, Medium};
use crate::error::{bail, Result};
use crate::geometry::{PeriodicSurface, SurfacePoint};
use crate::math::{self, CVec3, Vec3, C64, CZERO, I, PI};

/// Speed of light in vacuum, m/s.
pub const C0: f64 = 299_792_458.0;

/// Plane layers D_0 .. D_{n−1} separated by the planes x_3 = heights[i].
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarStack {
    media: Vec<Medium>,
    heights: Vec<f64>,
}

impl PlanarStack {
    pub fn new(media: Vec<Medium>, heights: Vec<f64>) -> Result<Self> {
        if media.len() < 2 || heights.len() + 1 != media.len() {
            bail!(Argument, "{} layers need {} interface heights, got {}", media.len(), media.len().saturating_sub(1), heights.len());
        }
        if heights.windows(2).any(|w| !(w[1] < w[0])) {
            bail!(Argument, "interface heights must be strictly decreasing: {heights:?}");
        }
        Ok(PlanarStack { media, heights })
    }

    pub fn media(&self) -> &[Medium] {
        &self.media
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// Layer containing height z (the upper one on an interface).
    pub fn layer_of(&self, z: f64) -> usize {
        self.heights.iter().position(|&h| z >= h).unwrap_or(self.heights.len())
    }
}

/// Polarization frame of a horizontal wave vector: t̂ along k∥ (x̂ at normal
/// incidence) and ŝ = ẑ × t̂.
fn frame(kt: [f64; 2]) -> (Vec3, Vec3) {
    let n = math::hypot(kt[0], kt[1]);
    let t = if n > 0.0 { [kt[0] / n, kt[1] / n, 0.0] } else { [1.0, 0.0, 0.0] };
    (t, math::cross([0.0, 0.0, 1.0], t))
}

/// TE and TM parts of an incident wave: a = a_TE ŝ + (TM part) with
/// b·ŝ = a_TM-equivalent magnetic amplitude.
pub fn decompose(inc: &IncidentWave) -> (f64, f64) {
    let (_, s) = frame(inc.kpar());
    (math::dot(inc.a, s), math::dot(inc.b, s))
}

/// Inverse of [`decompose`]: the electric amplitude of a wave with TE
/// amplitude `te` (E along ŝ) and TM amplitude `tm` (H along ŝ).
pub fn recompose(inc: &IncidentWave, te: f64, tm: f64) -> Vec3 {
    let (_, s) = frame(inc.kpar());
    let e_tm = math::scale(math::cross(inc.k, s), -tm / (inc.omega * inc.medium.eps));
    math::add(math::scale(s, te), e_tm)
}

/// Up- and down-going amplitudes of one layer, referenced at `z_ref`:
/// ψ(z) = u e^{ik_3(z − z_ref)} + w e^{−ik_3(z − z_ref)}, for TE (ψ = E·ŝ)
/// and TM (ψ = H·ŝ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerAmplitudes {
    pub kz: C64,
    pub z_ref: f64,
    pub te: (C64, C64),
    pub tm: (C64, C64),
}

/// Plane-wave solution of a planar stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSolution {
    pub stack: PlanarStack,
    pub omega: f64,
    pub kt: [f64; 2],
    pub layers: Vec<LayerAmplitudes>,
    r: (C64, C64),
    k0: f64,
    cos_theta: f64,
    a_inc2: f64,
}

/// Transfer-matrix solution for an incident wave in the top layer.
pub fn tmatrix_solve(stack: &PlanarStack, inc: &IncidentWave) -> Result<PlanarSolution> {
    if stack.media[0] != inc.medium {
        bail!(Argument, "the incident wave must travel in the top layer's medium");
    }
    let omega = inc.omega;
    let kt = inc.kpar();
    let nl = stack.media.len();
    let kz: Vec<C64> = stack
        .media
        .iter()
        .map(|m| {
            let k = m.wavenumber(omega);
            math::sqrt_upper(C64::new(k * k - kt[0] * kt[0] - kt[1] * kt[1], 0.0))
        })
        .collect();
    for (d, m) in stack.media.iter().enumerate() {
        if math::cabs(kz[d]) < 1e-12 * m.wavenumber(omega) {
            bail!(Domain, "layer {d} has a grazing wave (k_3 = 0)");
        }
    }
    let y_te = |d: usize| -kz[d] / (omega * stack.media[d].mu);
    let y_tm = |d: usize| kz[d] / (omega * stack.media[d].eps);
    let z_ref = |d: usize| stack.heights[d.min(nl - 2)];

    // from the bottom: a single down-going wave of unit amplitude
    let mut amps: Vec<(C64, C64, C64, C64)> = alloc::vec![(CZERO, CZERO, CZERO, CZERO); nl];
    for (pol, y) in [(0, &y_te as &dyn Fn(usize) -> C64), (1, &y_tm)] {
        let (mut u, mut w) = (CZERO, C64::new(1.0, 0.0));
        set(&mut amps[nl - 1], pol, u, w);
        for d in (0..nl - 1).rev() {
            // ψ, φ on interface d seen from layer d + 1
            let dz = z_ref(d) - z_ref(d + 1);
            let (ep, em) = (math::cexp(I * kz[d + 1] * dz), math::cexp(-I * kz[d + 1] * dz));
            let psi = u * ep + w * em;
            let phi = y(d + 1) * (u * ep - w * em);
            u = 0.5 * (psi + phi / y(d));
            w = 0.5 * (psi - phi / y(d));
            set(&mut amps[d], pol, u, w);
        }
    }
    // normalize to the incident wave, whose phase at z_ref(0) is e^{−ik_3 h_0}
    let (te, tm) = decompose(inc);
    let ph = math::cexp(-I * kz[0] * stack.heights[0]);
    let (s_te, s_tm) = (te * ph / amps[0].1, tm * ph / amps[0].3);
    let layers = (0..nl)
        .map(|d| {
            let (u1, w1, u2, w2) = amps[d];
            LayerAmplitudes { kz: kz[d], z_ref: z_ref(d), te: (u1 * s_te, w1 * s_te), tm: (u2 * s_tm, w2 * s_tm) }
        })
        .collect();
    Ok(PlanarSolution {
        stack: stack.clone(),
        omega,
        kt,
        layers,
        r: (amps[0].0 / amps[0].1, amps[0].2 / amps[0].3),
        k0: inc.k0(),
        cos_theta: math::cos(inc.theta),
        a_inc2: math::dot(inc.a, inc.a),
    })
}

fn set(a: &mut (C64, C64, C64, C64), pol: usize, u: C64, w: C64) {
    if pol == 0 {
        a.0 = u;
        a.1 = w;
    } else {
        a.2 = u;
        a.3 = w;
    }
}

impl PlanarSolution {
    /// E and H of one plane wave with vertical wavenumber `kz` (sign gives the
    /// direction) and TE/TM amplitudes at the point's phase.
    fn wave(&self, d: usize, kz: C64, te: C64, tm: C64) -> (CVec3, CVec3) {
        let m = self.stack.media[d];
        let (_, s) = frame(self.kt);
        let kv = [C64::new(self.kt[0], 0.0), C64::new(self.kt[1], 0.0), kz];
        let e_te = math::cscale(s, te);
        let h_te = math::ccross(kv, e_te).map(|c| c / (self.omega * m.mu));
        let h_tm = math::cscale(s, tm);
        let e_tm = math::ccross(kv, h_tm).map(|c| -c / (self.omega * m.eps));
        ([e_te[0] + e_tm[0], e_te[1] + e_tm[1], e_te[2] + e_tm[2]], [h_te[0] + h_tm[0], h_te[1] + h_tm[1], h_te[2] + h_tm[2]])
    }

    /// Total E and H at x (incident included in the top layer).
    pub fn fields(&self, x: Vec3) -> (CVec3, CVec3) {
        self.fields_in(self.stack.layer_of(x[2]), x)
    }

    /// Fields of layer d's plane-wave expansion evaluated at x (x need not
    /// lie in the layer; used for the one-sided traces on interfaces).
    pub fn fields_in(&self, d: usize, x: Vec3) -> (CVec3, CVec3) {
        let l = &self.layers[d];
        let lat = math::expi(self.kt[0] * x[0] + self.kt[1] * x[1]);
        let dz = x[2] - l.z_ref;
        let up = math::cexp(I * l.kz * dz) * lat;
        let dn = math::cexp(-I * l.kz * dz) * lat;
        let (eu, hu) = self.wave(d, l.kz, l.te.0 * up, l.tm.0 * up);
        let (ed, hd) = self.wave(d, -l.kz, l.te.1 * dn, l.tm.1 * dn);
        (core::array::from_fn(|i| eu[i] + ed[i]), core::array::from_fn(|i| hu[i] + hd[i]))
    }

    /// Surface currents J = e_3 × H and M = E × e_3 on interface i (the
    /// upward normal of a plane is e_3).
    pub fn currents(&self, i: usize, x1: f64, x2: f64) -> (CVec3, CVec3) {
        let x = [x1, x2, self.stack.heights[i]];
        let (e, h) = self.fields_in(i + 1, x);
        let n = math::to_complex([0.0, 0.0, 1.0]);
        (math::ccross(n, h), math::ccross(e, n))
    }

    /// Electric amplitude a^+ of the reflected wave, E = a^+ e^{ik^+·x}.
    pub fn reflected_amplitude(&self) -> CVec3 {
        let l = &self.layers[0];
        let ph = math::cexp(-I * l.kz * l.z_ref);
        self.wave(0, l.kz, l.te.0 * ph, l.tm.0 * ph).0
    }

    /// Electric amplitude a^− of the transmitted wave, E = a^− e^{ik^−·x}.
    pub fn transmitted_amplitude(&self) -> CVec3 {
        let d = self.layers.len() - 1;
        let l = &self.layers[d];
        let ph = math::cexp(I * l.kz * l.z_ref);
        self.wave(d, -l.kz, l.te.1 * ph, l.tm.1 * ph).0
    }

    /// Complex TE and TM reflection coefficients at the top interface.
    pub fn reflection_coefficients(&self) -> (C64, C64) {
        self.r
    }

    pub fn reflectance(&self) -> f64 {
        let kz = self.layers[0].kz;
        kz.re * math::powi(math::cnorm(self.reflected_amplitude()), 2) / (self.k0 * self.cos_theta * self.a_inc2)
    }

    pub fn transmittance(&self) -> f64 {
        let d = self.layers.len() - 1;
        let kz = self.layers[d].kz;
        let m = self.stack.media[d];
        kz.re * math::powi(math::cnorm(self.transmitted_amplitude()), 2) * self.stack.media[0].mu / (m.mu * self.k0 * self.cos_theta * self.a_inc2)
    }
}

/// J = n × H^inc and M = E^inc × n at a surface point; the exact currents
/// when every layer is the same medium.
pub fn exact_same_media_at(inc: &IncidentWave, sp: &SurfacePoint) -> (CVec3, CVec3) {
    let n = math::to_complex(sp.normal);
    (math::ccross(n, inc.h_field(sp.x)), math::ccross(inc.e_field(sp.x), n))
}

pub fn exact_same_media(inc: &IncidentWave, s: &PeriodicSurface, t1: f64, t2: f64) -> Result<(CVec3, CVec3)> {
    Ok(exact_same_media_at(inc, &s.eval(t1, t2)?))
}

/// k_1^{SP} = (ω/c_0) √(ε/(1+ε)) (principal root); the backward branch is
/// its negative.
pub fn sp_dispersion(eps_metal: C64, omega: f64) -> Result<C64> {
    let den = eps_metal + 1.0;
    if math::cabs(den) < 1e-14 * (1.0 + math::cabs(eps_metal)) {
        bail!(Domain, "surface-plasmon pole at ε = −1");
    }
    Ok(math::csqrt(eps_metal / den) * (omega / C0))
}

/// Horizontal wavenumber (ω/c_0) sin θ + 2mπ/L of diffraction order m.
pub fn diffraction_line(omega: f64, theta: f64, period: f64, m: i32) -> f64 {
    omega / C0 * math::sin(theta) + 2.0 * PI * m as f64 / period
}

/// Wavelengths λ_0 (in the table's units, SI metres) where the backward
/// (`sign` = −1) or forward (+1) plasmon branch Re k^SP crosses diffraction
/// order m, located by linear interpolation between table rows
/// (λ_0, ε(λ_0)) sorted by wavelength.
pub fn sp_crossings(table: &[(f64, C64)], theta: f64, period: f64, m: i32, sign: f64) -> Result<Vec<f64>> {
    let mut f = Vec::with_capacity(table.len());
    for &(lambda, eps) in table {
        if !(lambda > 0.0) {
            bail!(Argument, "wavelength {lambda} is not positive");
        }
        let omega = 2.0 * PI * C0 / lambda;
        f.push((lambda, sign * sp_dispersion(eps, omega)?.re - diffraction_line(omega, theta, period, m)));
    }
    let mut out = Vec::new();
    for w in f.windows(2) {
        let ((l0, f0), (l1, f1)) = (w[0], w[1]);
        if f0 == 0.0 {
            out.push(l0);
        } else if f0 * f1 < 0.0 {
            out.push(l0 + (l1 - l0) * f0 / (f0 - f1));
        }
    }
    if let Some(&(l, v)) = f.last() {
        if v == 0.0 {
            out.push(l);
        }
    }
    Ok(out)
}
