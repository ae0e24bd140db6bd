//! Galerkin PMCHWT system for a stack of periodic interfaces.
//!
//! Unknowns on interface S_i are J^(i) = n × H and M^(i) = E × n with the
//! upward normal n; these are the currents of the layer below S_i, and the
//! layer above sees their negatives. Continuity of the tangential traces of E
//! and H across every S_i, tested with w = conj(N_a), gives
//!
//!   Σ_d c_d [ iωμ_d ⟨w, L_d J⟩ − ⟨w, K_d M⟩ ] = −δ_{i0} ⟨w, E^inc⟩
//!   Σ_d c_d [ iωε_d ⟨w, L_d M⟩ + ⟨w, K_d J⟩ ] = −δ_{i0} ⟨w, H^inc⟩
//!
//! where the sum runs over the layers touching both the test and the trial
//! interface, c_d = +1 on the diagonal blocks and −1 between neighbours, and
//!
//!   ⟨w, Lϑ⟩ = ∫∫ G^p [w·ϑ − (1/k²) div w div ϑ],
//!   ⟨w, Kϑ⟩ = −∫∫ ∇G^p(x − y)·(w(x) × ϑ(y)).
//!
//! Element pairs are integrated with a 4-point tensor rule by sum
//! factorization. Coincident, edge- and vertex-adjacent pairs (including
//! periodic replicas) subtract the free-space kernel of the touching image
//! and integrate it with Duffy rules; pairs that are close without touching
//! do the same with a finer tensor rule.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use faer::Mat;

use crate::basis::{BasisSet, Variant};
use crate::error::{bail, Error, Result};
use crate::geometry::{PeriodicSurface, SurfacePoint};
use crate::greens::{free_space_g, grad_free_space_g, EwaldContext, KernelTable, PeriodicKernel};
use crate::linalg;
use crate::math::{self, CVec3, Vec3, C64, CZERO, I, PI};
use crate::quadrature::{classify_pair, gauss_legendre, singular_pair_rule, GaussRule, PairClass, PairKind, PairPoint};

/// Homogeneous, lossless material.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    pub eps: f64,
    pub mu: f64,
}

impl Medium {
    pub fn new(eps: f64, mu: f64) -> Result<Self> {
        if !(eps > 0.0 && mu > 0.0 && eps.is_finite() && mu.is_finite()) {
            bail!(Argument, "material constants must be positive and finite (ε = {eps}, μ = {mu})");
        }
        Ok(Medium { eps, mu })
    }

    /// k = ω √(εμ).
    pub fn wavenumber(&self, omega: f64) -> f64 {
        omega * math::sqrt(self.eps * self.mu)
    }
}

/// Layers D_0 (top) .. D_{n−1} separated by interfaces S_0 .. S_{n−2}.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStack {
    media: Vec<Medium>,
    interfaces: Vec<PeriodicSurface>,
}

impl LayerStack {
    pub fn new(media: Vec<Medium>, interfaces: Vec<PeriodicSurface>) -> Result<Self> {
        if media.len() < 2 {
            bail!(Argument, "a stack needs at least two layers");
        }
        if interfaces.len() + 1 != media.len() {
            bail!(Argument, "{} layers need {} interfaces, got {}", media.len(), media.len() - 1, interfaces.len());
        }
        let l = interfaces[0].periods();
        for (i, s) in interfaces.iter().enumerate() {
            if s.periods() != l {
                bail!(Argument, "interface {i} has periods {:?}, expected {:?}", s.periods(), l);
            }
        }
        for i in 1..interfaces.len() {
            let (_, hi) = interfaces[i].height_range();
            let (lo, _) = interfaces[i - 1].height_range();
            if !(hi < lo) {
                bail!(Argument, "interfaces {} and {} are not separated in x3 ([.., {hi}] vs [{lo}, ..])", i - 1, i);
            }
        }
        Ok(LayerStack { media, interfaces })
    }

    pub fn media(&self) -> &[Medium] {
        &self.media
    }

    pub fn interfaces(&self) -> &[PeriodicSurface] {
        &self.interfaces
    }

    pub fn periods(&self) -> [f64; 2] {
        self.interfaces[0].periods()
    }

    /// Same stack with every interface replaced by `f(surface)`.
    pub fn map_interfaces(&self, f: impl Fn(&PeriodicSurface) -> Result<PeriodicSurface>) -> Result<Self> {
        let s: Result<Vec<_>> = self.interfaces.iter().map(f).collect();
        LayerStack::new(self.media.clone(), s?)
    }
}

/// Plane wave E = a e^{ik·x}, H = b e^{ik·x} in the top layer with
/// k = k_0 (cos φ sin θ, sin φ sin θ, −cos θ) and ωμ_0 b = k × a.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncidentWave {
    pub omega: f64,
    pub theta: f64,
    pub phi: f64,
    pub medium: Medium,
    pub k: Vec3,
    pub a: Vec3,
    pub b: Vec3,
}

impl IncidentWave {
    /// Requires a ⊥ k to 1e-12 relative.
    pub fn new(omega: f64, theta: f64, phi: f64, a: Vec3, medium: Medium) -> Result<Self> {
        let w = Self::unchecked(omega, theta, phi, a, medium)?;
        if math::dot(w.a, w.k).abs() > 1e-12 * math::norm(w.a) * math::norm(w.k) {
            bail!(Argument, "incident amplitude {:?} is not transverse to k = {:?}", a, w.k);
        }
        Ok(w)
    }

    /// Removes the component of `a` along k.
    pub fn projected(omega: f64, theta: f64, phi: f64, a: Vec3, medium: Medium) -> Result<Self> {
        let w = Self::unchecked(omega, theta, phi, a, medium)?;
        let kh = math::scale(w.k, 1.0 / math::norm(w.k));
        let at = math::sub(a, math::scale(kh, math::dot(a, kh)));
        Self::new(omega, theta, phi, at, medium)
    }

    fn unchecked(omega: f64, theta: f64, phi: f64, a: Vec3, medium: Medium) -> Result<Self> {
        if !(omega > 0.0) || !theta.is_finite() || !phi.is_finite() {
            bail!(Argument, "invalid incident wave parameters ω = {omega}, θ = {theta}, φ = {phi}");
        }
        if !(math::cos(theta) > 1e-10) {
            bail!(Argument, "θ = {theta} does not point into the structure");
        }
        let k0 = medium.wavenumber(omega);
        let (st, ct) = math::sin_cos(theta);
        let (sp, cp) = math::sin_cos(phi);
        let k = [k0 * cp * st, k0 * sp * st, -k0 * ct];
        let b = math::scale(math::cross(k, a), 1.0 / (omega * medium.mu));
        Ok(IncidentWave { omega, theta, phi, medium, k, a, b })
    }

    pub fn k0(&self) -> f64 {
        math::norm(self.k)
    }

    /// Horizontal wave vector (k_1, k_2).
    pub fn kpar(&self) -> [f64; 2] {
        [self.k[0], self.k[1]]
    }

    /// Phase shifts β_h = L_h k_h across one period.
    pub fn phases(&self, periods: [f64; 2]) -> [f64; 2] {
        [periods[0] * self.k[0], periods[1] * self.k[1]]
    }

    pub fn e_field(&self, x: Vec3) -> CVec3 {
        math::cscale(self.a, math::expi(math::dot(self.k, x)))
    }

    pub fn h_field(&self, x: Vec3) -> CVec3 {
        math::cscale(self.b, math::expi(math::dot(self.k, x)))
    }
}

/// Stack plus one quasi-periodic basis per interface.
#[derive(Debug, Clone)]
pub struct Discretization {
    stack: LayerStack,
    bases: Vec<BasisSet>,
}

impl Discretization {
    /// Same degrees and variant on every interface, phases from `inc`.
    pub fn new(stack: LayerStack, q: [usize; 2], variant: Variant, inc: &IncidentWave) -> Result<Self> {
        let ph = inc.phases(stack.periods());
        let bases: Result<Vec<_>> = stack.interfaces().iter().map(|s| BasisSet::new(s, q, variant, ph)).collect();
        Self::from_bases(stack, bases?)
    }

    pub fn from_bases(stack: LayerStack, bases: Vec<BasisSet>) -> Result<Self> {
        if bases.len() != stack.interfaces().len() {
            bail!(Argument, "{} basis sets for {} interfaces", bases.len(), stack.interfaces().len());
        }
        for (i, b) in bases.iter().enumerate() {
            let g = b.knots.element_grid();
            if g[0] < 3 || g[1] < 3 {
                bail!(Argument, "interface {i}: element grid {g:?} is smaller than 3x3");
            }
            if b.knots.q[0] > MAX_Q || b.knots.q[1] > MAX_Q || b.knots.q[0] == 0 || b.knots.q[1] == 0 {
                bail!(Argument, "interface {i}: basis degrees {:?} outside 1..={MAX_Q}", b.knots.q);
            }
        }
        Ok(Discretization { stack, bases })
    }

    pub fn stack(&self) -> &LayerStack {
        &self.stack
    }

    pub fn bases(&self) -> &[BasisSet] {
        &self.bases
    }

    pub fn layout(&self) -> Layout {
        let mut offsets = Vec::with_capacity(self.bases.len());
        let mut n = 0;
        for b in &self.bases {
            offsets.push(n);
            n += 2 * b.len();
        }
        Layout { offsets, sizes: self.bases.iter().map(|b| b.len()).collect(), total: n }
    }
}

/// Global numbering: on interface i the J coefficients occupy
/// offsets[i]..offsets[i]+n_a and the M coefficients the next n_a slots;
/// rows follow the same pattern with E-equations then H-equations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub offsets: Vec<usize>,
    pub sizes: Vec<usize>,
    pub total: usize,
}

impl Layout {
    pub fn j_range(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.sizes[i]
    }

    pub fn m_range(&self, i: usize) -> core::ops::Range<usize> {
        self.offsets[i] + self.sizes[i]..self.offsets[i] + 2 * self.sizes[i]
    }
}

/// Which kernel evaluator the assembly uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelMode {
    /// Direct Ewald sums for plane stacks (they only need a few thousand
    /// evaluations), interpolation tables otherwise.
    Auto,
    Direct,
    Table,
}

/// Quadrature and kernel settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssemblyOptions {
    /// Points per direction for separated element pairs.
    pub regular_order: usize,
    /// Points per variable of every Duffy subdomain.
    pub singular_order: usize,
    /// Points per direction for the free-space part of near pairs.
    pub near_order: usize,
    /// Pairs whose centres are closer than this many element diameters are near.
    pub near_factor: f64,
    pub ewald_eps: f64,
    pub ewald_split: Option<f64>,
    pub kernel: KernelMode,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            regular_order: 4,
            singular_order: 12,
            near_order: 12,
            near_factor: 1.5,
            ewald_eps: 1e-14,
            ewald_split: None,
            kernel: KernelMode::Auto,
        }
    }
}

impl AssemblyOptions {
    fn validate(&self) -> Result<()> {
        for (name, n) in [("regular", self.regular_order), ("singular", self.singular_order), ("near", self.near_order)] {
            if !(1..=32).contains(&n) {
                bail!(Argument, "{name} quadrature order {n} outside 1..=32");
            }
        }
        if !(self.near_factor >= 0.0) || !(self.ewald_eps > 0.0) {
            bail!(Argument, "invalid near factor or Ewald tolerance");
        }
        Ok(())
    }
}

/// Interpolation tables kept between assemblies of the same physical setup
/// (mesh or degree studies rebuild nothing).
#[derive(Debug, Default)]
pub struct KernelCache {
    tables: Vec<(f64, [f64; 2], [f64; 2], KernelTable)>,
}

impl KernelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.tables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tables.is_empty()
    }

    fn get_or_build(&mut self, ctx: &EwaldContext, z: (f64, f64)) -> Result<usize> {
        let found = self.tables.iter().position(|(k, l, kp, t)| {
            let (lo, hi) = t.z_range();
            *k == ctx.k() && *l == ctx.periods() && *kp == ctx.kpar() && lo <= z.0 && hi >= z.1
        });
        if let Some(i) = found {
            return Ok(i);
        }
        // a little slack so that refined meshes of the same geometry reuse it
        let pad = 0.05 * (z.1 - z.0) + 1e-6;
        let t = KernelTable::new(ctx, (z.0 - pad, z.1 + pad))?;
        self.tables.push((ctx.k(), ctx.periods(), ctx.kpar(), t));
        Ok(self.tables.len() - 1)
    }
}

/// Dense complex matrix type of the assembled systems.
pub type Matrix = Mat<C64>;

/// Assembled system.
#[derive(Debug, Clone)]
pub struct System {
    pub matrix: Matrix,
    pub rhs: Vec<C64>,
    pub layout: Layout,
}

/// Current coefficients of a solved system.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionState {
    pub coeffs: Vec<C64>,
    pub layout: Layout,
    /// ‖Ax − b‖ / ‖b‖ of the solve.
    pub residual: f64,
}

impl SolutionState {
    pub fn j(&self, i: usize) -> &[C64] {
        &self.coeffs[self.layout.j_range(i)]
    }

    pub fn m(&self, i: usize) -> &[C64] {
        &self.coeffs[self.layout.m_range(i)]
    }
}

/// Highest supported basis degree.
pub const MAX_Q: usize = 5;
const MAX_LOCAL: usize = 2 * (MAX_Q + 1) * MAX_Q;

/// Element view of one interface: parameter rectangles and the local raw
/// functions of each basis element.
struct Patch<'a> {
    surface: &'a PeriodicSurface,
    basis: &'a BasisSet,
    grid: [usize; 2],
    breaks: [Vec<f64>; 2],
    nloc: usize,
    /// Owner DOF and coefficient of each local function, per element.
    owners: Vec<(usize, C64)>,
}

/// Point data of local functions: J V_ℓ and J div V_ℓ, scaled by the
/// parametric element area (and by quadrature weights in point sets).
struct LocalValues {
    x: Vec3,
    jac: f64,
    v: [[f64; 3]; MAX_LOCAL],
    d: [f64; MAX_LOCAL],
}

impl LocalValues {
    fn new() -> Self {
        LocalValues { x: [0.0; 3], jac: 0.0, v: [[0.0; 3]; MAX_LOCAL], d: [0.0; MAX_LOCAL] }
    }
}

/// Weighted values on a tensor rule, layout [p * nloc + ℓ].
struct PointSet {
    x: Vec<Vec3>,
    v: Vec<[f64; 3]>,
    d: Vec<f64>,
}

impl<'a> Patch<'a> {
    fn new(surface: &'a PeriodicSurface, basis: &'a BasisSet) -> Self {
        let k = &basis.knots;
        let grid = k.element_grid();
        let breaks = [0, 1].map(|h| {
            let u = k.full[h].knots();
            (0..=grid[h]).map(|e| u[k.q[h] + e]).collect::<Vec<_>>()
        });
        let (q0, q1) = (k.q[0], k.q[1]);
        let nloc = 2 * q0 * q1 + q0 + q1;
        let mut owners = Vec::with_capacity(grid[0] * grid[1] * nloc);
        for e1 in 0..grid[0] {
            for e2 in 0..grid[1] {
                for a in 0..=q0 {
                    for b in 0..q1 {
                        owners.push(basis.raw_owner(0, e1 + a, e2 + b));
                    }
                }
                for a in 0..q0 {
                    for b in 0..=q1 {
                        owners.push(basis.raw_owner(1, e1 + a, e2 + b));
                    }
                }
            }
        }
        Patch { surface, basis, grid, breaks, nloc, owners }
    }

    fn n_elements(&self) -> usize {
        self.grid[0] * self.grid[1]
    }

    fn element(&self, id: usize) -> [usize; 2] {
        [id / self.grid[1], id % self.grid[1]]
    }

    fn owners(&self, id: usize) -> &[(usize, C64)] {
        &self.owners[id * self.nloc..(id + 1) * self.nloc]
    }

    fn rect(&self, e: [usize; 2]) -> ([f64; 2], [f64; 2]) {
        let lo = [self.breaks[0][e[0]], self.breaks[1][e[1]]];
        let w = [self.breaks[0][e[0] + 1] - lo[0], self.breaks[1][e[1] + 1] - lo[1]];
        (lo, w)
    }

    /// Local function data at local coordinates ξ ∈ [0,1]², scaled by `scale`
    /// times the parametric element area.
    fn eval(&self, e: [usize; 2], xi: [f64; 2], scale: f64, out: &mut LocalValues) {
        let (lo, w) = self.rect(e);
        let t = [lo[0] + w[0] * xi[0], lo[1] + w[1] * xi[1]];
        let sp = self.surface.eval_unchecked(t[0], t[1]);
        let k = &self.basis.knots;
        let (q0, q1) = (k.q[0], k.q[1]);
        let mut f = [[0.0; 2 * (MAX_Q + 1)]; 2];
        let mut r = [[0.0; MAX_Q]; 2];
        for h in 0..2 {
            k.full[h].nonzero_basis_ders(k.q[h] + e[h], t[h], 1, &mut f[h]);
            k.reduced[h].nonzero_basis(k.q[h] - 1 + e[h], t[h], &mut r[h]);
        }
        let s = scale * w[0] * w[1];
        let mut l = 0;
        for a in 0..=q0 {
            for b in 0..q1 {
                let bb = f[0][a] * r[1][b] * s;
                out.v[l] = math::scale(sp.d1, bb);
                out.d[l] = f[0][q0 + 1 + a] * r[1][b] * s;
                l += 1;
            }
        }
        for a in 0..q0 {
            for b in 0..=q1 {
                let bb = r[0][a] * f[1][b] * s;
                out.v[l] = math::scale(sp.d2, bb);
                out.d[l] = r[0][a] * f[1][q1 + 1 + b] * s;
                l += 1;
            }
        }
        out.x = sp.x;
        out.jac = sp.jac;
    }

    fn point_set(&self, id: usize, g: &GaussRule) -> PointSet {
        let e = self.element(id);
        let n = g.nodes.len();
        let nl = self.nloc;
        let mut ps = PointSet { x: Vec::with_capacity(n * n), v: Vec::with_capacity(n * n * nl), d: Vec::with_capacity(n * n * nl) };
        let mut lv = LocalValues::new();
        for a in 0..n {
            for b in 0..n {
                self.eval(e, [g.nodes[a], g.nodes[b]], g.weights[a] * g.weights[b], &mut lv);
                ps.x.push(lv.x);
                ps.v.extend_from_slice(&lv.v[..nl]);
                ps.d.extend_from_slice(&lv.d[..nl]);
            }
        }
        ps
    }

    /// Centre and diameter (longest diagonal) of an element.
    fn extent(&self, id: usize) -> (Vec3, f64) {
        let (lo, w) = self.rect(self.element(id));
        let at = |u: f64, v: f64| self.surface.eval_unchecked(lo[0] + w[0] * u, lo[1] + w[1] * v).x;
        let d1 = math::norm(math::sub(at(0.0, 0.0), at(1.0, 1.0)));
        let d2 = math::norm(math::sub(at(1.0, 0.0), at(0.0, 1.0)));
        (at(0.5, 0.5), d1.max(d2))
    }
}

/// L and K local matrices of one element pair, layout [ℓ * ny + m].
#[derive(Debug, Clone)]
struct LocalMats {
    l: Vec<C64>,
    k: Vec<C64>,
}

impl LocalMats {
    fn zeros(n: usize) -> Self {
        LocalMats { l: alloc::vec![CZERO; n], k: alloc::vec![CZERO; n] }
    }

    fn add(&mut self, o: &LocalMats) {
        for (a, b) in self.l.iter_mut().zip(&o.l) {
            *a += b;
        }
        for (a, b) in self.k.iter_mut().zip(&o.k) {
            *a += b;
        }
    }

    fn transposed(&self, nx: usize, ny: usize, f: C64) -> LocalMats {
        let mut t = LocalMats::zeros(nx * ny);
        for a in 0..nx {
            for b in 0..ny {
                t.l[b * nx + a] = self.l[a * ny + b] * f;
                t.k[b * nx + a] = self.k[a * ny + b] * f;
            }
        }
        t
    }
}

/// Tensor-rule pair integral by sum factorization over the trial points.
fn tensor_pair(
    px: &PointSet,
    py: &PointSet,
    nx: usize,
    ny: usize,
    inv_k2: f64,
    kern: &mut dyn FnMut(Vec3) -> Result<(C64, CVec3)>,
    out: &mut LocalMats,
) -> Result<()> {
    let nq = py.x.len();
    let mut g = alloc::vec![CZERO; nq];
    let mut dg = alloc::vec![[CZERO; 3]; nq];
    let mut u = alloc::vec![[CZERO; 3]; ny];
    let mut dd = alloc::vec![CZERO; ny];
    let mut vc = alloc::vec![[CZERO; 3]; ny];
    for (p, &x) in px.x.iter().enumerate() {
        for q in 0..nq {
            let (a, b) = kern(math::sub(x, py.x[q]))?;
            g[q] = a;
            dg[q] = b;
        }
        for m in 0..ny {
            let (mut um, mut dm, mut vm) = ([CZERO; 3], CZERO, [CZERO; 3]);
            for q in 0..nq {
                let yv = py.v[q * ny + m];
                let gq = g[q];
                um[0] += gq * yv[0];
                um[1] += gq * yv[1];
                um[2] += gq * yv[2];
                dm += gq * py.d[q * ny + m];
                // yv × ∇G
                let c = math::rcross(yv, dg[q]);
                vm[0] += c[0];
                vm[1] += c[1];
                vm[2] += c[2];
            }
            u[m] = um;
            dd[m] = dm * inv_k2;
            vc[m] = vm;
        }
        for l in 0..nx {
            let xv = px.v[p * nx + l];
            let xd = px.d[p * nx + l];
            let row_l = &mut out.l[l * ny..(l + 1) * ny];
            for m in 0..ny {
                row_l[m] += u[m][0] * xv[0] + u[m][1] * xv[1] + u[m][2] * xv[2] - dd[m] * xd;
            }
            let row_k = &mut out.k[l * ny..(l + 1) * ny];
            for m in 0..ny {
                row_k[m] -= vc[m][0] * xv[0] + vc[m][1] * xv[1] + vc[m][2] * xv[2];
            }
        }
    }
    Ok(())
}

/// Free-space part e^{ik∥·p_ν} G(x − y − p_ν) of a singular pair by a Duffy
/// rule.
fn duffy_pair(
    px: &Patch<'_>,
    py: &Patch<'_>,
    ex: [usize; 2],
    ey: [usize; 2],
    shift: Vec3,
    phase: C64,
    k: f64,
    inv_k2: f64,
    rule: &[PairPoint],
) -> LocalMats {
    let (nx, ny) = (px.nloc, py.nloc);
    let mut out = LocalMats::zeros(nx * ny);
    let mut lx = LocalValues::new();
    let mut ly = LocalValues::new();
    let mut a = [[CZERO; 3]; MAX_LOCAL];
    let mut b = [CZERO; MAX_LOCAL];
    let mut c = [[CZERO; 3]; MAX_LOCAL];
    for pt in rule {
        px.eval(ex, pt.xi, 1.0, &mut lx);
        py.eval(ey, pt.eta, pt.w, &mut ly);
        let r = math::sub(lx.x, math::add(ly.x, shift));
        let d = math::norm(r);
        let g = math::expi(k * d) / (4.0 * PI * d) * phase;
        let dg = math::cscale(r, g * C64::new(-1.0 / d, k) / d);
        for m in 0..ny {
            a[m] = math::cscale(ly.v[m], g);
            b[m] = g * (ly.d[m] * inv_k2);
            c[m] = math::rcross(ly.v[m], dg);
        }
        for l in 0..nx {
            let xv = lx.v[l];
            let xd = lx.d[l];
            for m in 0..ny {
                out.l[l * ny + m] += a[m][0] * xv[0] + a[m][1] * xv[1] + a[m][2] * xv[2] - b[m] * xd;
                out.k[l * ny + m] -= c[m][0] * xv[0] + c[m][1] * xv[1] + c[m][2] * xv[2];
            }
        }
    }
    out
}

/// Kernel of one layer plus the coefficients with which its L and K forms
/// enter the four sub-blocks (E,J), (E,M), (H,M), (H,J) of a block.
struct Group<'k> {
    kernel: &'k dyn PeriodicKernel,
    k: f64,
    /// Weight of the div-div term, 1/k² except in tests.
    inv_k2: f64,
    alpha: [C64; 4],
    /// Free-space singular parts per element and neighbour slot, for
    /// diagonal blocks of curved interfaces.
    singular: Option<Vec<[Option<LocalMats>; 9]>>,
}

impl<'k> Group<'k> {
    fn new(kernel: &'k dyn PeriodicKernel, alpha: [C64; 4]) -> Self {
        let k = kernel.k();
        Group { kernel, k, inv_k2: 1.0 / (k * k), alpha, singular: None }
    }
}

struct Block<'a, 'k> {
    x: &'a Patch<'a>,
    y: &'a Patch<'a>,
    xs: &'a [PointSet],
    ys: &'a [PointSet],
    xs_near: &'a [PointSet],
    ys_near: &'a [PointSet],
    x_ext: &'a [(Vec3, f64)],
    y_ext: &'a [(Vec3, f64)],
    same: bool,
    groups: Vec<Group<'k>>,
    periods: [f64; 2],
    kpar: [f64; 2],
}

fn slot(offset: [i32; 2]) -> usize {
    ((offset[0] + 1) * 3 + (offset[1] + 1)) as usize
}

impl Block<'_, '_> {
    fn lattice(&self, nu: [i32; 2]) -> (Vec3, C64) {
        let p = [nu[0] as f64 * self.periods[0], nu[1] as f64 * self.periods[1], 0.0];
        (p, math::expi(self.kpar[0] * p[0] + self.kpar[1] * p[1]))
    }

    fn classify(&self, ix: usize, iy: usize) -> PairClass {
        if !self.same {
            return PairClass::SEPARATED;
        }
        classify_pair(self.x.grid, self.x.element(ix), self.y.element(iy))
    }

    /// Nearest lattice image ν of the trial element if the pair is near.
    fn near_image(&self, ix: usize, iy: usize, factor: f64) -> Option<[i32; 2]> {
        let (cx, dx) = self.x_ext[ix];
        let (cy, dy) = self.y_ext[iy];
        let mut best: Option<([i32; 2], f64)> = None;
        for n1 in -1..=1 {
            for n2 in -1..=1 {
                let (p, _) = self.lattice([n1, n2]);
                let d = math::norm(math::sub(cx, math::add(cy, p)));
                if best.map_or(true, |b| d < b.1) {
                    best = Some(([n1, n2], d));
                }
            }
        }
        let (nu, d) = best.unwrap();
        (d < factor * dx.max(dy)).then_some(nu)
    }

    fn singular_free(&self, g: &Group<'_>, ix: usize, iy: usize, c: &PairClass, rule: &[PairPoint]) -> LocalMats {
        let (p, ph) = self.lattice(c.shift);
        duffy_pair(self.x, self.y, self.x.element(ix), self.y.element(iy), p, ph, g.k, g.inv_k2, rule)
    }

    /// The four sub-block local matrices of pair (ix, iy), summed over
    /// groups: [EJ, EM, HM, HJ] each nx × ny.
    fn pair(&self, ix: usize, iy: usize, opts: &AssemblyOptions, rules: &Rules) -> Result<Vec<C64>> {
        let (nx, ny) = (self.x.nloc, self.y.nloc);
        let nn = nx * ny;
        let mut out = alloc::vec![CZERO; 4 * nn];
        let class = self.classify(ix, iy);
        let near = if class.is_singular() { None } else { self.near_image(ix, iy, opts.near_factor) };
        for g in &self.groups {
            let inv_k2 = g.inv_k2;
            let mut lm = LocalMats::zeros(nn);
            let pair_err = |e: Error| match e {
                Error::Domain(m) => Error::Numerical(alloc::format!("element pair ({ix}, {iy}): {m}")),
                e => e,
            };
            if class.is_singular() {
                match g.singular.as_ref().and_then(|t| t[ix][slot(class.offset)].as_ref()) {
                    Some(s) => lm.add(s),
                    None => lm.add(&self.singular_free(g, ix, iy, &class, rules.singular(&class))),
                }
                let nu = class.shift;
                tensor_pair(&self.xs[ix], &self.ys[iy], nx, ny, inv_k2, &mut |r| Ok(g.kernel.gp_minus_image(r, nu)), &mut lm)
                    .map_err(pair_err)?;
            } else if let Some(nu) = near {
                let (p, ph) = self.lattice(nu);
                let k = g.k;
                tensor_pair(&self.xs_near[ix], &self.ys_near[iy], nx, ny, inv_k2, &mut |r| {
                    let s = math::sub(r, p);
                    Ok((free_space_g(k, s)? * ph, grad_free_space_g(k, s)?.map(|c| c * ph)))
                }, &mut lm)
                .map_err(pair_err)?;
                tensor_pair(&self.xs[ix], &self.ys[iy], nx, ny, inv_k2, &mut |r| Ok(g.kernel.gp_minus_image(r, nu)), &mut lm)
                    .map_err(pair_err)?;
            } else {
                tensor_pair(&self.xs[ix], &self.ys[iy], nx, ny, inv_k2, &mut |r| g.kernel.gp_and_grad(r), &mut lm).map_err(pair_err)?;
            }
            let [aej, aem, ahm, ahj] = g.alpha;
            for t in 0..nn {
                out[t] += aej * lm.l[t];
                out[nn + t] += aem * lm.k[t];
                out[2 * nn + t] += ahm * lm.l[t];
                out[3 * nn + t] += ahj * lm.k[t];
            }
        }
        Ok(out)
    }

    /// Precompute the free-space singular parts of all touching pairs of a
    /// diagonal block, using (e, e', ν) ↔ (e', e, −ν) symmetry.
    fn fill_singular_tables(&mut self, rules: &Rules) {
        let n = self.x.n_elements();
        let grid = self.x.grid;
        // unordered touching pairs: coincident, and offsets with slot > 4
        let mut work = Vec::new();
        for ix in 0..n {
            let e = self.x.element(ix);
            for o1 in -1..=1i32 {
                for o2 in -1..=1i32 {
                    if slot([o1, o2]) < 4 {
                        continue;
                    }
                    let ey = [(e[0] as i32 + o1).rem_euclid(grid[0] as i32) as usize, (e[1] as i32 + o2).rem_euclid(grid[1] as i32) as usize];
                    work.push((ix, ey[0] * grid[1] + ey[1]));
                }
            }
        }
        for gi in 0..self.groups.len() {
            let results = {
                let this = &*self;
                let g = &this.groups[gi];
                crate::par::map(work.len(), |w| {
                    let (ix, iy) = work[w];
                    let c = this.classify(ix, iy);
                    (c, this.singular_free(g, ix, iy, &c, rules.singular(&c)))
                })
            };
            let mut table: Vec<[Option<LocalMats>; 9]> = (0..n).map(|_| Default::default()).collect();
            let nl = self.x.nloc;
            for (&(ix, iy), (c, m)) in work.iter().zip(results) {
                if ix != iy {
                    let (_, ph) = self.lattice(c.shift);
                    let back = m.transposed(nl, nl, ph.conj() / ph);
                    table[iy][slot([-c.offset[0], -c.offset[1]])] = Some(back);
                }
                table[ix][slot(c.offset)] = Some(m);
            }
            self.groups[gi].singular = Some(table);
        }
    }
}

/// Duffy rules for the nine orientations, built once per assembly.
struct Rules {
    by_slot: Vec<Vec<PairPoint>>,
}

impl Rules {
    fn new(order: usize) -> Self {
        let g = gauss_legendre(order);
        let by_slot = (0..9)
            .map(|s| {
                let offset = [s / 3 - 1, s % 3 - 1];
                let kind = [PairKind::Coincident, PairKind::EdgeAdjacent, PairKind::VertexAdjacent][(offset[0] != 0) as usize + (offset[1] != 0) as usize];
                singular_pair_rule(&PairClass { kind, shift: [0, 0], offset }, &g)
            })
            .collect();
        Rules { by_slot }
    }

    fn singular(&self, c: &PairClass) -> &[PairPoint] {
        &self.by_slot[slot(c.offset)]
    }
}

/// Element data of all interfaces for one assembly.
struct Mesh<'a> {
    patches: Vec<Patch<'a>>,
    sets: Vec<Vec<PointSet>>,
    near_sets: Vec<Vec<PointSet>>,
    extents: Vec<Vec<(Vec3, f64)>>,
    rules: Rules,
}

impl<'a> Mesh<'a> {
    fn new(disc: &'a Discretization, opts: &AssemblyOptions) -> Self {
        let stack = &disc.stack;
        let patches: Vec<Patch<'_>> = (0..disc.bases.len()).map(|i| Patch::new(&stack.interfaces[i], &disc.bases[i])).collect();
        let g_reg = gauss_legendre(opts.regular_order);
        let g_near = gauss_legendre(opts.near_order);
        let sets = patches.iter().map(|p| (0..p.n_elements()).map(|e| p.point_set(e, &g_reg)).collect()).collect();
        let near_sets = patches.iter().map(|p| (0..p.n_elements()).map(|e| p.point_set(e, &g_near)).collect()).collect();
        let extents = patches.iter().map(|p| (0..p.n_elements()).map(|e| p.extent(e)).collect()).collect();
        Mesh { patches, sets, near_sets, extents, rules: Rules::new(opts.singular_order) }
    }

    /// Add block (i, j) for the given kernel groups.
    #[allow(clippy::too_many_arguments)]
    fn fill_block(
        &self,
        disc: &Discretization,
        i: usize,
        j: usize,
        groups: Vec<Group<'_>>,
        planar: bool,
        kpar: [f64; 2],
        opts: &AssemblyOptions,
        matrix: &mut Mat<C64>,
        layout: &Layout,
    ) -> Result<()> {
        let mut block = Block {
            x: &self.patches[i],
            y: &self.patches[j],
            xs: &self.sets[i],
            ys: &self.sets[j],
            xs_near: &self.near_sets[i],
            ys_near: &self.near_sets[j],
            x_ext: &self.extents[i],
            y_ext: &self.extents[j],
            same: i == j,
            groups,
            periods: disc.stack.periods(),
            kpar,
        };
        let rows = (layout.j_range(i).start, layout.m_range(i).start);
        let cols = (layout.j_range(j).start, layout.m_range(j).start);
        if planar && disc.bases[i].knots == disc.bases[j].knots {
            assemble_planar_block(&block, opts, &self.rules, matrix, rows, cols)
        } else {
            if block.same {
                block.fill_singular_tables(&self.rules);
            }
            assemble_general_block(&block, opts, &self.rules, matrix, rows, cols)
        }
    }
}

enum KernelSource {
    Direct(EwaldContext),
    Table(usize),
}

/// Assemble with a fresh kernel cache.
pub fn assemble(disc: &Discretization, inc: &IncidentWave, opts: &AssemblyOptions) -> Result<System> {
    assemble_with_cache(disc, inc, opts, &mut KernelCache::new())
}

/// Assemble the PMCHWT system; interpolation tables are taken from and
/// added to `cache`.
pub fn assemble_with_cache(disc: &Discretization, inc: &IncidentWave, opts: &AssemblyOptions, cache: &mut KernelCache) -> Result<System> {
    opts.validate()?;
    let stack = &disc.stack;
    if (inc.medium.eps, inc.medium.mu) != (stack.media[0].eps, stack.media[0].mu) {
        bail!(Argument, "the incident wave must travel in the top layer's medium");
    }
    let ni = stack.interfaces.len();
    let periods = stack.periods();
    let kpar = inc.kpar();
    let omega = inc.omega;
    let planar = stack.interfaces.iter().all(|s| s.is_planar());
    let use_table = match opts.kernel {
        KernelMode::Auto => !planar,
        KernelMode::Direct => false,
        KernelMode::Table => true,
    };

    // one kernel per distinct layer wavenumber
    let nd = stack.media.len();
    let mut kvals: Vec<f64> = Vec::new();
    let mut layer_kernel = Vec::with_capacity(nd);
    for m in &stack.media {
        let k = m.wavenumber(omega);
        let idx = match kvals.iter().position(|&v| v == k) {
            Some(i) => i,
            None => {
                kvals.push(k);
                kvals.len() - 1
            }
        };
        layer_kernel.push(idx);
    }
    let mut sources = Vec::with_capacity(kvals.len());
    for (ki, &k) in kvals.iter().enumerate() {
        let ctx = EwaldContext::new(k, periods, kpar, opts.ewald_split, opts.ewald_eps)?;
        if use_table {
            // vertical separations met by this kernel
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for d in (0..nd).filter(|&d| layer_kernel[d] == ki) {
                let touching: Vec<usize> = [d.wrapping_sub(1), d].into_iter().filter(|&i| i < ni).collect();
                for &a in &touching {
                    for &b in &touching {
                        let (a0, a1) = stack.interfaces[a].height_range();
                        let (b0, b1) = stack.interfaces[b].height_range();
                        lo = lo.min(a0 - b1);
                        hi = hi.max(a1 - b0);
                    }
                }
            }
            sources.push(KernelSource::Table(cache.get_or_build(&ctx, (lo, hi))?));
        } else {
            sources.push(KernelSource::Direct(ctx));
        }
    }
    let kernels: Vec<&dyn PeriodicKernel> = sources
        .iter()
        .map(|s| match s {
            KernelSource::Direct(c) => c as &dyn PeriodicKernel,
            KernelSource::Table(i) => &cache.tables[*i].3 as &dyn PeriodicKernel,
        })
        .collect();

    let mesh = Mesh::new(disc, opts);
    let layout = disc.layout();
    let n = layout.total;
    let mut matrix = Mat::<C64>::zeros(n, n);

    for i in 0..ni {
        for j in 0..ni {
            if i.abs_diff(j) > 1 {
                continue;
            }
            // layers shared by S_i and S_j with their signs
            let layers: Vec<(usize, f64)> = if i == j {
                alloc::vec![(i, 1.0), (i + 1, 1.0)]
            } else {
                alloc::vec![(i.max(j), -1.0)]
            };
            let mut groups: Vec<Group<'_>> = Vec::new();
            for (d, c) in layers {
                let m = stack.media[d];
                let alpha = [I * (c * omega * m.mu), C64::new(-c, 0.0), I * (c * omega * m.eps), C64::new(c, 0.0)];
                let ki = layer_kernel[d];
                match groups.iter_mut().find(|g| g.k == kvals[ki]) {
                    Some(g) => {
                        for t in 0..4 {
                            g.alpha[t] += alpha[t];
                        }
                    }
                    None => groups.push(Group::new(kernels[ki], alpha)),
                }
            }
            mesh.fill_block(disc, i, j, groups, planar, kpar, opts, &mut matrix, &layout)?;
        }
    }

    // right-hand side: tangential incident fields on S_0
    let mut rhs = alloc::vec![CZERO; n];
    let p0 = &mesh.patches[0];
    let nl = p0.nloc;
    for (e, ps) in mesh.sets[0].iter().enumerate() {
        let owners = p0.owners(e);
        for (p, &x) in ps.x.iter().enumerate() {
            let ef = inc.e_field(x);
            let hf = inc.h_field(x);
            for l in 0..nl {
                let v = ps.v[p * nl + l];
                let (a, c) = owners[l];
                let w = c.conj();
                rhs[layout.j_range(0).start + a] -= w * (ef[0] * v[0] + ef[1] * v[1] + ef[2] * v[2]);
                rhs[layout.m_range(0).start + a] -= w * (hf[0] * v[0] + hf[1] * v[1] + hf[2] * v[2]);
            }
        }
    }
    Ok(System { matrix, rhs, layout })
}

/// Scatter local sub-blocks of pair (ix, iy) with an extra factor.
fn scatter(block: &Block<'_, '_>, ix: usize, iy: usize, loc: &[C64], f: C64, matrix: &mut Mat<C64>, rows: (usize, usize), cols: (usize, usize)) {
    let (nx, ny) = (block.x.nloc, block.y.nloc);
    let nn = nx * ny;
    let ox = block.x.owners(ix);
    let oy = block.y.owners(iy);
    for (m, &(b, cb)) in oy.iter().enumerate() {
        let fb = cb * f;
        for (sub, col) in [(0, cols.0), (1, cols.1), (2, cols.1), (3, cols.0)] {
            let row0 = if sub < 2 { rows.0 } else { rows.1 };
            let column = matrix.col_as_slice_mut(col + b);
            for (l, &(a, ca)) in ox.iter().enumerate() {
                column[row0 + a] += ca.conj() * fb * loc[sub * nn + l * ny + m];
            }
        }
    }
}

const CHUNK: usize = 64;

fn assemble_general_block(block: &Block<'_, '_>, opts: &AssemblyOptions, rules: &Rules, matrix: &mut Mat<C64>, rows: (usize, usize), cols: (usize, usize)) -> Result<()> {
    let (nxe, nye) = (block.x.n_elements(), block.y.n_elements());
    let mut start = 0;
    while start < nxe {
        let end = (start + CHUNK).min(nxe);
        let locals = crate::par::map((end - start) * nye, |w| {
            let (ix, iy) = (start + w / nye, w % nye);
            block.pair(ix, iy, opts, rules)
        });
        for (w, loc) in locals.into_iter().enumerate() {
            let (ix, iy) = (start + w / nye, w % nye);
            scatter(block, ix, iy, &loc?, C64::new(1.0, 0.0), matrix, rows, cols);
        }
        start = end;
    }
    Ok(())
}

/// Plane interfaces with identical element grids: the local matrices of a
/// pair depend only on the element offset δ (taken in a centred range) up to
/// the Bloch factor of the lattice translation, G^p(r − p_μ) = e^{−ik∥·p_μ} G^p(r).
fn assemble_planar_block(block: &Block<'_, '_>, opts: &AssemblyOptions, rules: &Rules, matrix: &mut Mat<C64>, rows: (usize, usize), cols: (usize, usize)) -> Result<()> {
    let grid = block.x.grid;
    let half = [grid[0] / 2, grid[1] / 2];
    let centre = half[0] * grid[1] + half[1];
    let noff = grid[0] * grid[1];
    // canonical offset index c = (δ1 + half1) * E2 + (δ2 + half2)
    let locals = crate::par::map(noff, |c| {
        let (a, b) = (c / grid[1], c % grid[1]);
        block.pair(centre, a * grid[1] + b, opts, rules)
    });
    let locals: Result<Vec<Vec<C64>>> = locals.into_iter().collect();
    let locals = locals?;
    let mut phases = BTreeMap::new();
    for ix in 0..noff {
        let ex = block.x.element(ix);
        for iy in 0..noff {
            let ey = block.y.element(iy);
            let mut c = [0usize; 2];
            let mut mu = [0i32; 2];
            for h in 0..2 {
                let raw = ey[h] as i64 - ex[h] as i64;
                let d = (raw + half[h] as i64).rem_euclid(grid[h] as i64);
                c[h] = d as usize;
                mu[h] = ((raw + half[h] as i64 - d) / grid[h] as i64) as i32;
            }
            let f = *phases.entry(mu).or_insert_with(|| block.lattice(mu).1.conj());
            scatter(block, ix, iy, &locals[c[0] * grid[1] + c[1]], f, matrix, rows, cols);
        }
    }
    Ok(())
}

/// LU solve of an assembled system.
pub fn solve(system: &System) -> Result<SolutionState> {
    let s = linalg::solve(system.matrix.as_ref(), &system.rhs)?;
    Ok(SolutionState { coeffs: s.x, layout: system.layout.clone(), residual: s.residual })
}

/// Which surface current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Current {
    J,
    M,
}

/// J^(i) and M^(i) at parameters (t1, t2) of interface i.
pub fn eval_currents(disc: &Discretization, sol: &SolutionState, i: usize, t1: f64, t2: f64) -> Result<(CVec3, CVec3)> {
    if i >= disc.bases.len() {
        bail!(Argument, "interface {i} out of range");
    }
    let patch = Patch::new(&disc.stack.interfaces[i], &disc.bases[i]);
    let mut e = [0usize; 2];
    let mut xi = [0.0; 2];
    for (h, t) in [t1, t2].into_iter().enumerate() {
        let (lo, hi) = (patch.breaks[h][0], patch.breaks[h][patch.grid[h]]);
        if !(t >= lo && t <= hi) {
            bail!(Domain, "parameter {t} outside [{lo}, {hi}]");
        }
        let s = disc.bases[i].knots.full[h].span(t);
        e[h] = s - disc.bases[i].knots.q[h];
        let (a, b) = (patch.breaks[h][e[h]], patch.breaks[h][e[h] + 1]);
        xi[h] = (t - a) / (b - a);
    }
    let mut lv = LocalValues::new();
    Ok(currents_at(&patch, sol, i, e, xi, &mut lv))
}

fn currents_at(patch: &Patch<'_>, sol: &SolutionState, i: usize, e: [usize; 2], xi: [f64; 2], lv: &mut LocalValues) -> (CVec3, CVec3) {
    let id = e[0] * patch.grid[1] + e[1];
    let (lo, w) = patch.rect(e);
    let _ = lo;
    // unit scale: values are J V_ℓ times the parametric area
    patch.eval(e, xi, 1.0 / (w[0] * w[1]), lv);
    let (jc, mc) = (sol.j(i), sol.m(i));
    let mut jv = [CZERO; 3];
    let mut mv = [CZERO; 3];
    for (l, &(a, c)) in patch.owners(id).iter().enumerate() {
        let v = math::scale(lv.v[l], 1.0 / lv.jac);
        for d in 0..3 {
            jv[d] += jc[a] * c * v[d];
            mv[d] += mc[a] * c * v[d];
        }
    }
    (jv, mv)
}

/// Relative L2 error sqrt(Σ_i ∫|ϑ − ϑ_ref|²) / sqrt(Σ_i ∫|ϑ_ref|²) over all
/// interfaces, 4×4 Gauss points per basis element. `reference(i, point)`
/// returns the reference (J, M).
pub fn relative_l2_error(
    disc: &Discretization,
    sol: &SolutionState,
    reference: &dyn Fn(usize, &SurfacePoint) -> (CVec3, CVec3),
    which: Current,
) -> Result<f64> {
    let g = gauss_legendre(4);
    let mut num = 0.0;
    let mut den = 0.0;
    let mut lv = LocalValues::new();
    for i in 0..disc.bases.len() {
        let patch = Patch::new(&disc.stack.interfaces[i], &disc.bases[i]);
        for id in 0..patch.n_elements() {
            let e = patch.element(id);
            let (lo, w) = patch.rect(e);
            for a in 0..4 {
                for b in 0..4 {
                    let xi = [g.nodes[a], g.nodes[b]];
                    let (jv, mv) = currents_at(&patch, sol, i, e, xi, &mut lv);
                    let sp = disc.stack.interfaces[i].eval_unchecked(lo[0] + w[0] * xi[0], lo[1] + w[1] * xi[1]);
                    let (jr, mr) = reference(i, &sp);
                    let (t, r) = match which {
                        Current::J => (jv, jr),
                        Current::M => (mv, mr),
                    };
                    let ds = g.weights[a] * g.weights[b] * w[0] * w[1] * sp.jac;
                    num += ds * (0..3).map(|d| (t[d] - r[d]).norm_sqr()).sum::<f64>();
                    den += ds * (0..3).map(|d| r[d].norm_sqr()).sum::<f64>();
                }
            }
        }
    }
    if !(den > 0.0) {
        bail!(Domain, "reference field has zero norm");
    }
    Ok(math::sqrt(num / den))
}

/// Above the structure (reflected modes) or below it (transmitted modes).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Up,
    Down,
}

/// One Rayleigh mode of the scattered (Up) or total transmitted (Down)
/// electric field, E = a e^{i k·x}.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayleighMode {
    pub nu: [i32; 2],
    /// (k_1, k_2) of the mode.
    pub kt: [f64; 2],
    /// Vertical wavenumber, Im ≥ 0, sign already applied for the side.
    pub kz: C64,
    pub propagating: bool,
    pub amplitude: CVec3,
    /// Amplitude seen on the plane 0.1 min(L) beyond the interface's extreme
    /// height: a e^{i k_3 x_3}; evanescent orders are small there.
    pub at_plane: CVec3,
}

/// Rayleigh amplitudes for |ν_1|, |ν_2| ≤ `max_order`.
///
/// The layer potential of the outermost interface is projected on each mode
/// exactly: for x above (below) all sources, G^p(x − y) = Σ_ν
/// i e^{i k_ν^±·(x−y)} / (2 L1 L2 k_ν,3), so each amplitude is a surface
/// integral of the currents against e^{−i k_ν^±·y}, done with `order`²
/// Gauss points per element.
pub fn rayleigh_amplitudes(disc: &Discretization, sol: &SolutionState, inc: &IncidentWave, side: Side, max_order: usize, order: usize) -> Result<Vec<RayleighMode>> {
    let stack = &disc.stack;
    let (iface, medium, sign) = match side {
        Side::Up => (0, stack.media[0], 1.0),
        Side::Down => (stack.interfaces.len() - 1, *stack.media.last().unwrap(), -1.0),
    };
    let k = medium.wavenumber(inc.omega);
    let l = stack.periods();
    let area = l[0] * l[1];
    let (zlo, zhi) = stack.interfaces[iface].height_range();
    let margin = 0.1 * l[0].min(l[1]);
    let z_plane = if sign > 0.0 { zhi + margin } else { zlo - margin };
    let patch = Patch::new(&stack.interfaces[iface], &disc.bases[iface]);
    let g = gauss_legendre(order.max(1));
    let sets: Vec<PointSet> = (0..patch.n_elements()).map(|e| patch.point_set(e, &g)).collect();
    let (jc, mc) = (sol.j(iface), sol.m(iface));
    let nl = patch.nloc;
    let mo = max_order as i32;
    let mut out = Vec::new();
    for n1 in -mo..=mo {
        for n2 in -mo..=mo {
            let kt = [inc.k[0] + 2.0 * PI * n1 as f64 / l[0], inc.k[1] + 2.0 * PI * n2 as f64 / l[1]];
            let kz = math::sqrt_upper(C64::new(k * k - kt[0] * kt[0] - kt[1] * kt[1], 0.0));
            if math::cabs(kz) < 1e-8 * k {
                bail!(Anomaly, "mode ({n1}, {n2}) is at a Rayleigh anomaly");
            }
            let kv = [C64::new(kt[0], 0.0), C64::new(kt[1], 0.0), kz * sign];
            // ∫ e^{−ik·y} J, ∫ e^{−ik·y} div J, ∫ e^{−ik·y} M, ∫ e^{−ik·y} div M
            let mut sj = [CZERO; 3];
            let mut sdj = CZERO;
            let mut sm = [CZERO; 3];
            let mut sdm = CZERO;
            for (e, ps) in sets.iter().enumerate() {
                let owners = patch.owners(e);
                for (p, &y) in ps.x.iter().enumerate() {
                    let ph = math::cexp(-I * (kv[0] * y[0] + kv[1] * y[1] + kv[2] * y[2]));
                    let (mut jv, mut dj, mut mv, mut dm) = ([CZERO; 3], CZERO, [CZERO; 3], CZERO);
                    for (li, &(a, c)) in owners.iter().enumerate() {
                        let v = ps.v[p * nl + li];
                        let d = ps.d[p * nl + li];
                        let (cj, cm) = (jc[a] * c, mc[a] * c);
                        for t in 0..3 {
                            jv[t] += cj * v[t];
                            mv[t] += cm * v[t];
                        }
                        dj += cj * d;
                        dm += cm * d;
                    }
                    for t in 0..3 {
                        sj[t] += jv[t] * ph;
                        sm[t] += mv[t] * ph;
                    }
                    sdj += dj * ph;
                    sdm += dm * ph;
                }
            }
            let _ = sdm;
            let c = I / (2.0 * area * kz);
            let iwm = I * (inc.omega * medium.mu);
            let mxk = math::ccross(sm, kv);
            let mut a = [CZERO; 3];
            for t in 0..3 {
                let lj = sj[t] + I * kv[t] * sdj / (k * k);
                a[t] = c * sign * (iwm * lj + I * mxk[t]);
            }
            let lift = math::cexp(I * kv[2] * z_plane);
            out.push(RayleighMode { nu: [n1, n2], kt, kz: kz * sign, propagating: kz.im == 0.0, amplitude: a, at_plane: a.map(|c| c * lift) });
        }
    }
    Ok(out)
}

/// R = Σ_ν Re k_ν,3 |a_ν|² / (k_0 cos θ |a^inc|²) over propagating reflected modes.
pub fn energy_reflectance(modes: &[RayleighMode], inc: &IncidentWave) -> f64 {
    let den = inc.k0() * math::cos(inc.theta) * math::dot(inc.a, inc.a);
    modes.iter().filter(|m| m.propagating).map(|m| m.kz.re.abs() * math::powi(math::cnorm(m.amplitude), 2)).sum::<f64>() / den
}

/// T = Σ_ν (μ_0/μ_b) Re k_ν,3 |a_ν|² / (k_0 cos θ |a^inc|²) over propagating
/// transmitted modes in the bottom medium.
pub fn energy_transmittance(modes: &[RayleighMode], inc: &IncidentWave, bottom: Medium) -> f64 {
    let den = inc.k0() * math::cos(inc.theta) * math::dot(inc.a, inc.a) * bottom.mu / inc.medium.mu;
    modes.iter().filter(|m| m.propagating).map(|m| m.kz.re.abs() * math::powi(math::cnorm(m.amplitude), 2)).sum::<f64>() / den
}
