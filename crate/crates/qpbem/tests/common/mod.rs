#![allow(dead_code)]

use qpbem::assembly::{IncidentWave, Medium};
use qpbem::geometry::PeriodicSurface;
use qpbem::math::{self, PI};

pub const L: [f64; 2] = [1.0, 1.0];
pub const PROBLEM1_HEIGHTS: [f64; 4] = [0.3, 0.1, -0.1, -0.3];
pub const PROBLEM1_EPS: [f64; 5] = [1.0, 2.25, 4.0, 2.25, 1.0];

pub fn vacuum() -> Medium {
    Medium::new(1.0, 1.0).unwrap()
}

pub fn problem1_media() -> Vec<Medium> {
    PROBLEM1_EPS.iter().map(|&e| Medium::new(e, 1.0).unwrap()).collect()
}

/// θ = φ = π/4 with a along (1,1,1) made transverse.
pub fn oblique(omega: f64, medium: Medium) -> IncidentWave {
    IncidentWave::projected(omega, PI / 4.0, PI / 4.0, [1.0, 1.0, 1.0], medium).unwrap()
}

pub fn problem1_planes(level: usize) -> Vec<PeriodicSurface> {
    PROBLEM1_HEIGHTS.iter().map(|&h| refine(PeriodicSurface::plane(L, [6, 6], [1, 1], h).unwrap(), level)).collect()
}

pub fn problem2_surface(level: usize) -> PeriodicSurface {
    let s = PeriodicSurface::from_height_fn(L, [9, 9], [4, 4], |x, y| 0.3 * math::cos(2.0 * PI * x) * math::cos(2.0 * PI * y)).unwrap();
    refine(s, level)
}

pub fn refine(mut s: PeriodicSurface, level: usize) -> PeriodicSurface {
    for _ in 0..level {
        s = s.refine().unwrap();
    }
    s
}
