mod common;

use common::*;
use faer::Mat;
use qpbem::assembly::*;
use qpbem::basis::Variant;
use qpbem::geometry::{PeriodicSurface, SurfacePoint};
use qpbem::linalg;
use qpbem::math::{self, CVec3, C64};
use qpbem::quadrature::gauss_legendre;
use qpbem::reference::{exact_same_media_at, tmatrix_solve, PlanarStack};

fn fast() -> AssemblyOptions {
    AssemblyOptions { singular_order: 8, near_order: 8, ..Default::default() }
}

fn same_media(s: PeriodicSurface, q: usize) -> (Discretization, IncidentWave) {
    let inc = oblique(10.0, vacuum());
    let stack = LayerStack::new(vec![vacuum(), vacuum()], vec![s]).unwrap();
    (Discretization::new(stack, [q, q], Variant::Np, &inc).unwrap(), inc)
}

/// L2-best approximation error of n × H^inc in the span of the basis,
/// from the Gram system with basis values taken from `BasisSet::eval`.
fn best_approximation(disc: &Discretization, inc: &IncidentWave) -> f64 {
    let s = &disc.stack().interfaces()[0];
    let b = &disc.bases()[0];
    let g = gauss_legendre(6);
    let mut pts = Vec::new();
    for e in s.bezier_elements() {
        for (a, &u) in g.nodes.iter().enumerate() {
            for (c, &v) in g.nodes.iter().enumerate() {
                let (w1, w2) = (e.t1.1 - e.t1.0, e.t2.1 - e.t2.0);
                let (t1, t2) = (e.t1.0 + w1 * u, e.t2.0 + w2 * v);
                let sp = s.eval(t1, t2).unwrap();
                pts.push((t1, t2, g.weights[a] * g.weights[c] * w1 * w2 * sp.jac, sp));
            }
        }
    }
    let n = b.len();
    let vals: Vec<Vec<CVec3>> = (0..n).map(|a| pts.iter().map(|p| b.eval(s, a, p.0, p.1).unwrap().0).collect()).collect();
    let exact: Vec<CVec3> = pts.iter().map(|p| exact_same_media_at(inc, &p.3).0).collect();
    let inner = |u: &CVec3, v: &CVec3| (0..3).map(|d| u[d].conj() * v[d]).sum::<C64>();
    let gram = Mat::<C64>::from_fn(n, n, |a, c| pts.iter().enumerate().map(|(k, p)| inner(&vals[a][k], &vals[c][k]) * p.2).sum());
    let rhs: Vec<C64> = (0..n).map(|a| pts.iter().enumerate().map(|(k, p)| inner(&vals[a][k], &exact[k]) * p.2).sum()).collect();
    let x = linalg::solve(gram.as_ref(), &rhs).unwrap().x;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, p) in pts.iter().enumerate() {
        for d in 0..3 {
            let v: C64 = (0..n).map(|a| x[a] * vals[a][k][d]).sum();
            num += (v - exact[k][d]).norm_sqr() * p.2;
            den += exact[k][d].norm_sqr() * p.2;
        }
    }
    (num / den).sqrt()
}

#[test]
fn same_media_flat_interface_reproduces_incident_currents() {
    let (disc, inc) = same_media(refine(PeriodicSurface::plane(L, [9, 9], [4, 4], 0.0).unwrap(), 1), 2);
    let sys = assemble(&disc, &inc, &fast()).unwrap();
    let sol = solve(&sys).unwrap();
    assert!(sol.residual < 1e-10);
    let exact = |_: usize, sp: &SurfacePoint| exact_same_media_at(&inc, sp);
    let ej = relative_l2_error(&disc, &sol, &exact, Current::J).unwrap();
    let em = relative_l2_error(&disc, &sol, &exact, Current::M).unwrap();
    assert!(ej < 1e-2 && em < 1e-2, "{ej} {em}");
    let up = rayleigh_amplitudes(&disc, &sol, &inc, Side::Up, 3, 8).unwrap();
    let a_inc = math::norm(inc.a);
    for m in &up {
        assert!(math::cnorm(m.at_plane) < 1e-3 * a_inc, "{:?}", m.nu);
    }
    assert!(energy_reflectance(&up, &inc) < 1e-6);
}

#[test]
fn same_media_curved_interface_is_quasi_optimal() {
    let (disc, inc) = same_media(problem2_surface(1), 2);
    let sys = assemble(&disc, &inc, &fast()).unwrap();
    let sol = solve(&sys).unwrap();
    assert!(sol.residual < 1e-10);
    let exact = |_: usize, sp: &SurfacePoint| exact_same_media_at(&inc, sp);
    let ej = relative_l2_error(&disc, &sol, &exact, Current::J).unwrap();
    let best = best_approximation(&disc, &inc);
    assert!(ej >= best * (1.0 - 1e-6) && ej < 1.05 * best, "{ej} vs best {best}");
    let up = rayleigh_amplitudes(&disc, &sol, &inc, Side::Up, 3, 8).unwrap();
    for m in &up {
        assert!(math::cnorm(m.at_plane) < 1e-3 * math::norm(inc.a), "{:?} {:?}", m.nu, m.at_plane);
    }
    let dn = rayleigh_amplitudes(&disc, &sol, &inc, Side::Down, 3, 8).unwrap();
    let t = energy_transmittance(&dn, &inc, vacuum());
    assert!((t - 1.0).abs() < 1e-4, "{t}");
}

#[test]
fn problem1_coarse_system() {
    let media = problem1_media();
    let inc = oblique(8.0, media[0]);
    let stack = LayerStack::new(media.clone(), problem1_planes(0)).unwrap();
    let disc = Discretization::new(stack, [1, 1], Variant::Np, &inc).unwrap();
    let layout = disc.layout();
    assert_eq!(layout.sizes, vec![50; 4]);
    let sys = assemble(&disc, &inc, &fast()).unwrap();
    assert_eq!((sys.matrix.nrows(), sys.matrix.ncols(), sys.rhs.len()), (400, 400, 400));

    // couplings only between neighbouring interfaces
    for i in 0..4 {
        for j in 0..4 {
            let (r0, r1) = (layout.offsets[i], layout.offsets[i] + 100);
            let (c0, c1) = (layout.offsets[j], layout.offsets[j] + 100);
            let max = (r0..r1).flat_map(|r| (c0..c1).map(move |c| (r, c))).map(|(r, c)| sys.matrix[(r, c)].norm()).fold(0.0, f64::max);
            if i.abs_diff(j) > 1 {
                assert_eq!(max, 0.0, "block ({i},{j})");
            } else {
                assert!(max > 0.0, "block ({i},{j})");
            }
        }
    }
    // the right-hand side only lives on the top interface
    assert!(sys.rhs[100..].iter().all(|v| *v == C64::new(0.0, 0.0)));
    assert!(sys.rhs[..100].iter().any(|v| v.norm() > 0.0));

    let sol = solve(&sys).unwrap();
    assert!(sol.residual < 1e-10);

    let tm = tmatrix_solve(&PlanarStack::new(media.clone(), PROBLEM1_HEIGHTS.to_vec()).unwrap(), &inc).unwrap();
    let reference = |i: usize, sp: &SurfacePoint| tm.currents(i, sp.x[0], sp.x[1]);
    let ej = relative_l2_error(&disc, &sol, &reference, Current::J).unwrap();
    assert!(ej < 0.3, "{ej}");
    let up = rayleigh_amplitudes(&disc, &sol, &inc, Side::Up, 2, 8).unwrap();
    let dn = rayleigh_amplitudes(&disc, &sol, &inc, Side::Down, 2, 8).unwrap();
    let (r, t) = (energy_reflectance(&up, &inc), energy_transmittance(&dn, &inc, media[4]));
    assert!((r - tm.reflectance()).abs() < 1e-3, "{r} vs {}", tm.reflectance());
    assert!((r + t - 1.0).abs() < 2e-3);
    // plane interfaces only scatter into the specular order
    let spec = up.iter().find(|m| m.nu == [0, 0]).unwrap();
    let want = tm.reflected_amplitude();
    assert!((0..3).all(|c| (spec.amplitude[c] - want[c]).norm() < 0.05 * math::cnorm(want)));
    for m in up.iter().filter(|m| m.nu != [0, 0]) {
        assert!(math::cnorm(m.amplitude) < 1e-8, "{:?}", m.nu);
    }
}

#[test]
fn strong_contrast_mirror() {
    let media = vec![vacuum(), Medium::new(400.0, 1.0).unwrap()];
    let inc = IncidentWave::new(4.0, 0.0, 0.0, [1.0, 0.0, 0.0], media[0]).unwrap();
    let s = refine(PeriodicSurface::plane(L, [6, 6], [1, 1], 0.0).unwrap(), 1);
    let stack = LayerStack::new(media.clone(), vec![s]).unwrap();
    let disc = Discretization::new(stack, [2, 2], Variant::Np, &inc).unwrap();
    let sol = solve(&assemble(&disc, &inc, &fast()).unwrap()).unwrap();
    let up = rayleigh_amplitudes(&disc, &sol, &inc, Side::Up, 1, 8).unwrap();
    let r = energy_reflectance(&up, &inc);
    let tm = tmatrix_solve(&PlanarStack::new(media, vec![0.0]).unwrap(), &inc).unwrap();
    assert!(tm.reflectance() > 0.8);
    assert!((r - tm.reflectance()).abs() < 5e-2, "{r} vs {}", tm.reflectance());
}

#[test]
fn kernel_tables_agree_with_direct_sums_and_are_reused() {
    let inc = oblique(6.0, vacuum());
    let media = vec![vacuum(), Medium::new(2.0, 1.0).unwrap()];
    let stack = LayerStack::new(media, vec![problem2_surface(0)]).unwrap();
    let disc = Discretization::new(stack, [1, 1], Variant::Np, &inc).unwrap();
    let direct = assemble(&disc, &inc, &AssemblyOptions { kernel: KernelMode::Direct, ..fast() }).unwrap();
    let mut cache = KernelCache::new();
    let table = assemble_with_cache(&disc, &inc, &AssemblyOptions { kernel: KernelMode::Table, ..fast() }, &mut cache).unwrap();
    assert_eq!(cache.len(), 2);
    let n = direct.layout.total;
    let scale = (0..n).map(|i| direct.matrix[(i, i)].norm()).fold(0.0, f64::max);
    let diff = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| (direct.matrix[(i, j)] - table.matrix[(i, j)]).norm()).fold(0.0, f64::max);
    assert!(diff < 1e-6 * scale, "{diff} vs {scale}");
    let again = assemble_with_cache(&disc, &inc, &AssemblyOptions { kernel: KernelMode::Table, ..fast() }, &mut cache).unwrap();
    assert_eq!(cache.len(), 2);
    // bit-identical on repetition
    assert!((0..n).all(|i| (0..n).all(|j| again.matrix[(i, j)] == table.matrix[(i, j)])));
}

#[test]
fn anomalous_configuration_is_rejected() {
    // normal incidence with k = 2π/L: the orders (±1, 0) and (0, ±1) graze
    let inc = IncidentWave::new(2.0 * std::f64::consts::PI, 0.0, 0.0, [0.0, 1.0, 0.0], vacuum()).unwrap();
    let stack = LayerStack::new(vec![vacuum(), vacuum()], vec![PeriodicSurface::plane(L, [6, 6], [1, 1], 0.0).unwrap()]).unwrap();
    let disc = Discretization::new(stack, [1, 1], Variant::Np, &inc).unwrap();
    match assemble(&disc, &inc, &fast()) {
        Err(qpbem::Error::Anomaly(_)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("anomaly not detected"),
    }
}
