//! Gauss-Legendre rules and the Duffy-type rules for singular element pairs.

use alloc::vec::Vec;

use crate::error::Result;
use crate::math::{C64, PI};

/// Gauss-Legendre rule mapped to [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// n-point Gauss-Legendre rule on [0, 1], nodes from Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> GaussRule {
    let mut nodes = alloc::vec![0.0; n];
    let mut weights = alloc::vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = crate::math::cos(PI * (i as f64 + 0.75) / (nf + 0.5));
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = nf * (x * pn - pm) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    GaussRule { nodes, weights }
}

/// Relative position of two elements of the same periodic surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PairKind {
    Coincident,
    EdgeAdjacent,
    VertexAdjacent,
    Separated,
}

/// Adjacency of a test element and a (possibly shifted) trial element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairClass {
    pub kind: PairKind,
    /// Lattice shift ν: the trial element is taken at y + p^(ν).
    pub shift: [i32; 2],
    /// Grid offset of the shifted trial element relative to the test
    /// element, each entry in −1..=1; zero for separated pairs.
    pub offset: [i32; 2],
}

impl PairClass {
    pub const SEPARATED: PairClass = PairClass { kind: PairKind::Separated, shift: [0, 0], offset: [0, 0] };

    pub fn is_singular(&self) -> bool {
        self.kind != PairKind::Separated
    }
}

const SHIFTS: [[i32; 2]; 9] = [[0, 0], [-1, -1], [-1, 0], [-1, 1], [0, -1], [0, 1], [1, -1], [1, 0], [1, 1]];

/// Classify elements `ex` and `ey` of a `grid[0] × grid[1]` element grid,
/// taking the periodic replicas of `ey` into account.
///
/// Among several realizations the strongest adjacency wins, and the
/// unshifted one among equals. For grids of at least 3×3 the shift is unique.
pub fn classify_pair(grid: [usize; 2], ex: [usize; 2], ey: [usize; 2]) -> PairClass {
    let mut best = PairClass::SEPARATED;
    let mut rank = 3;
    for nu in SHIFTS {
        let d = [
            ey[0] as i64 + nu[0] as i64 * grid[0] as i64 - ex[0] as i64,
            ey[1] as i64 + nu[1] as i64 * grid[1] as i64 - ex[1] as i64,
        ];
        if d[0].abs() > 1 || d[1].abs() > 1 {
            continue;
        }
        let r = (d[0] != 0) as usize + (d[1] != 0) as usize;
        if r < rank {
            rank = r;
            let kind = [PairKind::Coincident, PairKind::EdgeAdjacent, PairKind::VertexAdjacent][r];
            best = PairClass { kind, shift: nu, offset: [d[0] as i32, d[1] as i32] };
        }
    }
    best
}

/// One node of a rule on [0,1]² × [0,1]²: test coordinates ξ, trial
/// coordinates η (both local to their element) and the weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPoint {
    pub xi: [f64; 2],
    pub eta: [f64; 2],
    pub w: f64,
}

/// Tensor rule on [0,1]^4 for separated pairs.
pub fn tensor_pair_rule(g: &GaussRule) -> Vec<PairPoint> {
    let n = g.nodes.len();
    let mut out = Vec::with_capacity(n * n * n * n);
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    out.push(PairPoint {
                        xi: [g.nodes[a], g.nodes[b]],
                        eta: [g.nodes[c], g.nodes[d]],
                        w: g.weights[a] * g.weights[b] * g.weights[c] * g.weights[d],
                    });
                }
            }
        }
    }
    out
}

fn for_each_node4(g: &GaussRule, mut f: impl FnMut([f64; 4], f64)) {
    let n = g.nodes.len();
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    let w = g.weights[a] * g.weights[b] * g.weights[c] * g.weights[d];
                    f([g.nodes[a], g.nodes[b], g.nodes[c], g.nodes[d]], w);
                }
            }
        }
    }
}

/// Coincident squares: z = η − ξ is split by the signs of its components and
/// by which of |z1|, |z2| is larger; polar-type coordinates ρ, t remove the
/// 1/|z| singularity. Eight subdomains.
fn coincident_rule(g: &GaussRule) -> Vec<PairPoint> {
    let mut out = Vec::new();
    for s1 in [-1.0, 1.0] {
        for s2 in [-1.0, 1.0] {
            for swap in [false, true] {
                for_each_node4(g, |[rho, t, u1, u2], w| {
                    let (a, b) = if swap { (rho * t, rho) } else { (rho, rho * t) };
                    let z = [s1 * a, s2 * b];
                    let xi0 = (-z[0]).max(0.0) + (1.0 - a) * u1;
                    let xi1 = (-z[1]).max(0.0) + (1.0 - b) * u2;
                    out.push(PairPoint {
                        xi: [xi0, xi1],
                        eta: [xi0 + z[0], xi1 + z[1]],
                        w: w * rho * (1.0 - a) * (1.0 - b),
                    });
                });
            }
        }
    }
    out
}

/// Squares sharing the edge ξ1 = 1 ↔ η1 = 0. With a = 1 − ξ1, b = η1 and
/// z = η2 − ξ2 the singular set is a = b = z = 0; the cube (a, b, |z|) is cut
/// into three pyramids by its largest coordinate. Six subdomains.
fn edge_rule(g: &GaussRule) -> Vec<PairPoint> {
    let mut out = Vec::new();
    for s in [-1.0, 1.0] {
        for apex in 0..3 {
            for_each_node4(g, |[lam, v1, v2, u], w| {
                let others: [usize; 2] = [[1, 2], [0, 2], [0, 1]][apex];
                let mut abc = [0.0; 3];
                abc[apex] = lam;
                abc[others[0]] = lam * v1;
                abc[others[1]] = lam * v2;
                let [a, b, c] = abc;
                let z = s * c;
                let xi2 = (-z).max(0.0) + (1.0 - c) * u;
                out.push(PairPoint { xi: [1.0 - a, xi2], eta: [b, xi2 + z], w: w * lam * lam * (1.0 - c) });
            });
        }
    }
    out
}

/// Squares sharing the vertex ξ = (1, 1) ↔ η = (0, 0); four pyramids in
/// (1 − ξ1, 1 − ξ2, η1, η2).
fn vertex_rule(g: &GaussRule) -> Vec<PairPoint> {
    let mut out = Vec::new();
    for apex in 0..4 {
        for_each_node4(g, |[lam, v1, v2, v3], w| {
            let mut c = [0.0; 4];
            let mut k = 0;
            let vs = [v1, v2, v3];
            for (i, ci) in c.iter_mut().enumerate() {
                if i == apex {
                    *ci = lam;
                } else {
                    *ci = lam * vs[k];
                    k += 1;
                }
            }
            out.push(PairPoint { xi: [1.0 - c[0], 1.0 - c[1]], eta: [c[2], c[3]], w: w * lam * lam * lam });
        });
    }
    out
}

/// Duffy-type rule for a singular pair, oriented for `class.offset`, with
/// `g` in every one of the four variables of each subdomain. The weights sum
/// to one (the volume of [0,1]^4).
pub fn singular_pair_rule(class: &PairClass, g: &GaussRule) -> Vec<PairPoint> {
    let [o1, o2] = class.offset;
    // canonical offsets are (0,0), (1,0) and (1,1); others follow by swapping
    // the two directions and reflecting ξ_k → 1 − ξ_k, η_k → 1 − η_k
    let (mut pts, swap) = match class.kind {
        PairKind::Separated => return tensor_pair_rule(g),
        PairKind::Coincident => (coincident_rule(g), false),
        PairKind::EdgeAdjacent => (edge_rule(g), o1 == 0),
        PairKind::VertexAdjacent => (vertex_rule(g), false),
    };
    if swap {
        for p in &mut pts {
            p.xi.swap(0, 1);
            p.eta.swap(0, 1);
        }
    }
    for (k, o) in [o1, o2].into_iter().enumerate() {
        if o < 0 {
            for p in &mut pts {
                p.xi[k] = 1.0 - p.xi[k];
                p.eta[k] = 1.0 - p.eta[k];
            }
        }
    }
    pts
}

/// ∫∫ f over [0,1]² × [0,1]² (local coordinates of the two elements) with the
/// rule matching `class`: the regular tensor rule for separated pairs, the
/// Duffy rule with the singular order otherwise. Parametric element areas and
/// surface Jacobians belong in `f`.
pub fn integrate_pair<F>(class: &PairClass, regular: &GaussRule, singular: &GaussRule, mut f: F) -> Result<C64>
where
    F: FnMut(&PairPoint) -> Result<C64>,
{
    let pts = if class.is_singular() { singular_pair_rule(class, singular) } else { tensor_pair_rule(regular) };
    let mut s = C64::new(0.0, 0.0);
    for p in &pts {
        s += f(p)? * p.w;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{self, I};

    #[test]
    fn gauss_legendre_basics() {
        let g = gauss_legendre(1);
        assert_eq!(g.nodes, [0.5]);
        assert_eq!(g.weights, [1.0]);
        let g = gauss_legendre(4);
        let s: f64 = g.nodes.iter().zip(&g.weights).map(|(x, w)| w * x.powi(7)).sum();
        assert!((s - 0.125).abs() < 1e-14);
        let g = gauss_legendre(12);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let s: f64 = g.nodes.iter().zip(&g.weights).map(|(x, w)| w * (10.0 * x).cos()).sum();
        assert!((s - 10f64.sin() / 10.0).abs() < 1e-12);
    }

    #[test]
    fn classification_examples() {
        let c = classify_pair([4, 4], [2, 1], [2, 1]);
        assert_eq!((c.kind, c.shift, c.offset), (PairKind::Coincident, [0, 0], [0, 0]));
        let c = classify_pair([4, 4], [0, 2], [3, 2]);
        assert_eq!((c.kind, c.shift, c.offset), (PairKind::EdgeAdjacent, [-1, 0], [-1, 0]));
        let c = classify_pair([5, 5], [0, 0], [4, 4]);
        assert_eq!((c.kind, c.shift, c.offset), (PairKind::VertexAdjacent, [-1, -1], [-1, -1]));
        let c = classify_pair([5, 5], [0, 0], [2, 0]);
        assert_eq!(c.kind, PairKind::Separated);
    }

    // Oracle: elements as unit squares in index space, replicas shifted by
    // whole grids; count the corners shared with the test element.
    fn corner_oracle(grid: [usize; 2], ex: [usize; 2], ey: [usize; 2]) -> (PairKind, [i32; 2]) {
        let corners = |e: [i64; 2]| [[e[0], e[1]], [e[0] + 1, e[1]], [e[0], e[1] + 1], [e[0] + 1, e[1] + 1]];
        let cx = corners([ex[0] as i64, ex[1] as i64]);
        let mut found = (PairKind::Separated, [0, 0]);
        for s1 in -1..=1i32 {
            for s2 in -1..=1i32 {
                let y = [ey[0] as i64 + s1 as i64 * grid[0] as i64, ey[1] as i64 + s2 as i64 * grid[1] as i64];
                let shared = corners(y).iter().filter(|c| cx.contains(c)).count();
                let kind = match shared {
                    4 => PairKind::Coincident,
                    2 => PairKind::EdgeAdjacent,
                    1 => PairKind::VertexAdjacent,
                    _ => continue,
                };
                assert_eq!(found.0, PairKind::Separated, "two shifts realize an adjacency");
                found = (kind, [s1, s2]);
            }
        }
        found
    }

    #[test]
    fn classification_matches_corner_oracle() {
        for grid in [[3, 3], [3, 5], [4, 4], [6, 3]] {
            let mut singular = 0;
            let n = grid[0] * grid[1];
            for a in 0..n {
                for b in 0..n {
                    let ex = [a / grid[1], a % grid[1]];
                    let ey = [b / grid[1], b % grid[1]];
                    let c = classify_pair(grid, ex, ey);
                    assert_eq!((c.kind, c.shift), corner_oracle(grid, ex, ey), "{grid:?} {ex:?} {ey:?}");
                    let back = classify_pair(grid, ey, ex);
                    assert_eq!(back.kind, c.kind);
                    assert_eq!(back.shift, [-c.shift[0], -c.shift[1]]);
                    singular += c.is_singular() as usize;
                }
            }
            assert_eq!(singular, 9 * n);
        }
    }

    fn all_singular_classes() -> Vec<PairClass> {
        let mut out = Vec::new();
        for o1 in -1..=1 {
            for o2 in -1..=1 {
                let kind = [PairKind::Coincident, PairKind::EdgeAdjacent, PairKind::VertexAdjacent][(o1 != 0) as usize + (o2 != 0) as usize];
                out.push(PairClass { kind, shift: [0, 0], offset: [o1, o2] });
            }
        }
        out
    }

    #[test]
    fn rules_cover_the_unit_hypercube() {
        let g = gauss_legendre(5);
        for c in all_singular_classes() {
            let pts = singular_pair_rule(&c, &g);
            let s: f64 = pts.iter().map(|p| p.w).sum();
            assert!((s - 1.0).abs() < 1e-13, "{c:?}: {s}");
            // polynomial moment: ∫ ξ1 η2² = 1/6
            let m: f64 = pts.iter().map(|p| p.w * p.xi[0] * p.eta[1] * p.eta[1]).sum();
            assert!((m - 1.0 / 6.0).abs() < 1e-13, "{c:?}: {m}");
            for p in &pts {
                assert!(p.xi.iter().chain(&p.eta).all(|&v| (0.0..=1.0).contains(&v)));
            }
        }
    }

    #[test]
    fn constant_kernel_gives_product_of_areas() {
        let (h1, h2) = (0.3, 0.7);
        let g4 = gauss_legendre(4);
        let v = integrate_pair(&PairClass::SEPARATED, &g4, &g4, |_| Ok(C64::new(h1 * h1 * h2 * h2, 0.0))).unwrap();
        assert!((v.re - h1 * h1 * h2 * h2).abs() < 1e-12 && v.im == 0.0);
    }

    fn kernel(k: f64, r: f64) -> C64 {
        math::cexp(I * (k * r)) / (4.0 * PI * r)
    }

    // Plane squares of side h, trial square at offset o (grid units).
    fn duffy_plane(o: [i32; 2], h: f64, k: f64, n: usize) -> C64 {
        let kind = [PairKind::Coincident, PairKind::EdgeAdjacent, PairKind::VertexAdjacent][(o[0] != 0) as usize + (o[1] != 0) as usize];
        let c = PairClass { kind, shift: [0, 0], offset: o };
        let g = gauss_legendre(n);
        integrate_pair(&c, &g, &g, |p| {
            let d = [h * (p.eta[0] + o[0] as f64 - p.xi[0]), h * (p.eta[1] + o[1] as f64 - p.xi[1])];
            Ok(kernel(k, math::hypot(d[0], d[1])) * h.powi(4))
        })
        .unwrap()
    }

    // Oracle: reduce to the difference variable z = y − x, which carries the
    // weight (1 − |z1 − o1|)(1 − |z2 − o2|), and integrate on unit cells; the
    // cell with the origin as a corner is done in polar coordinates.
    fn reduced_oracle(o: [i32; 2], h: f64, k: f64) -> C64 {
        let g = gauss_legendre(40);
        let f = |z: [f64; 2]| {
            let w = (1.0 - (z[0] - o[0] as f64).abs()) * (1.0 - (z[1] - o[1] as f64).abs());
            w * h.powi(3) * math::cexp(I * (k * h * math::hypot(z[0], z[1]))) / (4.0 * PI)
        };
        let mut total = C64::new(0.0, 0.0);
        for c1 in (o[0] - 1)..(o[0] + 1) {
            for c2 in (o[1] - 1)..(o[1] + 1) {
                let lo = [c1 as f64, c2 as f64];
                let at_origin = (c1 == 0 || c1 == -1) && (c2 == 0 || c2 == -1);
                if at_origin {
                    // corner at the origin; signs map the cell to [0,1]²
                    let s = [if c1 == 0 { 1.0 } else { -1.0 }, if c2 == 0 { 1.0 } else { -1.0 }];
                    for swap in [false, true] {
                        for (r, wr) in g.nodes.iter().zip(&g.weights) {
                            for (t, wt) in g.nodes.iter().zip(&g.weights) {
                                // triangle a ≥ b: a = ρ, b = ρ t, integrand f/|z| · ρ
                                let (a, b) = if swap { (r * t, *r) } else { (*r, r * t) };
                                let rr = math::hypot(a, b);
                                total += f([s[0] * a, s[1] * b]) * (wr * wt * r / rr);
                            }
                        }
                    }
                } else {
                    for (u, wu) in g.nodes.iter().zip(&g.weights) {
                        for (v, wv) in g.nodes.iter().zip(&g.weights) {
                            let z = [lo[0] + u, lo[1] + v];
                            total += f(z) * (wu * wv / math::hypot(z[0], z[1]));
                        }
                    }
                }
            }
        }
        total
    }

    #[test]
    fn coincident_static_kernel_closed_form() {
        // ∫∫ 1/|x−y| over the unit square twice = 4 ln(1+√2) − 4(√2−1)/3
        let exact = (4.0 * (1.0 + 2f64.sqrt()).ln() - 4.0 * (2f64.sqrt() - 1.0) / 3.0) / (4.0 * PI);
        let v = duffy_plane([0, 0], 1.0, 0.0, 12);
        assert!((v.re - exact).abs() < 1e-10 * exact, "{} vs {exact}", v.re);
        assert!((reduced_oracle([0, 0], 1.0, 0.0).re - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn singular_rules_match_reduced_oracle() {
        let h = 0.2;
        for c in all_singular_classes() {
            for k in [0.0, 10.0] {
                let v = duffy_plane(c.offset, h, k, 12);
                let o = reduced_oracle(c.offset, h, k);
                assert!((v - o).norm() < 1e-6 * o.norm(), "{c:?} k={k}: {v} vs {o}");
                let v10 = duffy_plane(c.offset, h, k, 10);
                assert!((v - v10).norm() < 1e-7 * v.norm(), "{c:?} k={k}: orders 10/12 differ");
            }
        }
    }

    #[test]
    fn replica_pair_equals_translated_pair() {
        use crate::geometry::PeriodicSurface;
        let l = [1.0, 1.0];
        let f = |x: f64, y: f64| 0.2 * (2.0 * PI * x).cos() * (2.0 * PI * y).cos() + 0.05 * (2.0 * PI * x).sin();
        let s = PeriodicSurface::from_height_fn(l, [6, 6], [2, 2], f).unwrap();
        // the same set translated by half a period in x1: element column c of
        // `t` is column c + 2 of `s`, moved by −L1/2
        let t = PeriodicSurface::from_height_fn(l, [6, 6], [2, 2], |x, y| f(x + 0.5, y)).unwrap();
        let grid = s.element_grid();
        assert_eq!(grid, [4, 4]);
        let els_s = s.bezier_elements();
        let els_t = t.bezier_elements();
        let g = gauss_legendre(12);
        let pair_integral = |surf: &PeriodicSurface, els: &[crate::geometry::BezierElement], a: usize, b: usize| {
            let (ea, eb) = (els[a], els[b]);
            let c = classify_pair(grid, [ea.e1, ea.e2], [eb.e1, eb.e2]);
            let shift = [c.shift[0] as f64 * l[0], c.shift[1] as f64 * l[1], 0.0];
            let v = integrate_pair(&c, &g, &g, |p| {
                let loc = |e: &crate::geometry::BezierElement, u: [f64; 2]| {
                    let (w1, w2) = (e.t1.1 - e.t1.0, e.t2.1 - e.t2.0);
                    let sp = surf.eval_unchecked(e.t1.0 + w1 * u[0], e.t2.0 + w2 * u[1]);
                    (sp.x, sp.jac * w1 * w2)
                };
                let (x, jx) = loc(&ea, p.xi);
                let (y, jy) = loc(&eb, p.eta);
                let r = math::norm(math::sub(x, math::add(y, shift)));
                Ok(kernel(7.0, r) * (jx * jy))
            })
            .unwrap();
            (c, v)
        };
        let id = |e1: usize, e2: usize| e1 * grid[1] + e2;
        // s: columns 0 and 3 touch only through the replica; t: columns 2 and 1
        for (a, b, ta, tb) in [(id(0, 1), id(3, 1), id(2, 1), id(1, 1)), (id(0, 0), id(3, 3), id(2, 0), id(1, 3))] {
            let (cs, vs) = pair_integral(&s, &els_s, a, b);
            let (ct, vt) = pair_integral(&t, &els_t, ta, tb);
            assert_ne!(cs.shift, [0, 0]);
            assert_eq!(cs.kind, ct.kind);
            assert!((vs - vt).norm() < 1e-10 * vt.norm(), "{vs} vs {vt}");
        }
    }
}
