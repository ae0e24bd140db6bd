//! Scalar and small-vector helpers shared by all modules.
//!
//! Transcendental functions go through `std` when available and through
//! `libm` otherwise, so the numerical core builds without the standard
//! library.

use num_complex::Complex64;

pub type C64 = Complex64;
pub type Vec3 = [f64; 3];
pub type CVec3 = [C64; 3];

pub const PI: f64 = core::f64::consts::PI;
pub const SQRT_PI: f64 = 1.772_453_850_905_516;
pub const I: C64 = C64::new(0.0, 1.0);
pub const CZERO: C64 = C64::new(0.0, 0.0);

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        x.exp()
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    #[inline]
    pub fn sin_cos(x: f64) -> (f64, f64) {
        x.sin_cos()
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        x.ln()
    }
    #[inline]
    pub fn hypot(x: f64, y: f64) -> f64 {
        x.hypot(y)
    }
    #[inline]
    pub fn atan2(y: f64, x: f64) -> f64 {
        y.atan2(x)
    }
    #[inline]
    pub fn floor(x: f64) -> f64 {
        x.floor()
    }

    #[inline]
    pub fn ceil(x: f64) -> f64 {
        x.ceil()
    }
    #[inline]
    pub fn round(x: f64) -> f64 {
        x.round()
    }
    #[inline]
    pub fn powi(x: f64, n: i32) -> f64 {
        x.powi(n)
    }
    #[inline]
    pub fn mul_add(a: f64, b: f64, c: f64) -> f64 {
        a.mul_add(b, c)
    }
}

#[cfg(not(feature = "std"))]
mod imp {
    #[inline]
    pub fn exp(x: f64) -> f64 {
        libm::exp(x)
    }
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn sin_cos(x: f64) -> (f64, f64) {
        libm::sincos(x)
    }
    #[inline]
    pub fn ln(x: f64) -> f64 {
        libm::log(x)
    }
    #[inline]
    pub fn hypot(x: f64, y: f64) -> f64 {
        libm::hypot(x, y)
    }
    #[inline]
    pub fn atan2(y: f64, x: f64) -> f64 {
        libm::atan2(y, x)
    }
    #[inline]
    pub fn floor(x: f64) -> f64 {
        libm::floor(x)
    }

    #[inline]
    pub fn ceil(x: f64) -> f64 {
        libm::ceil(x)
    }
    #[inline]
    pub fn round(x: f64) -> f64 {
        libm::round(x)
    }
    #[inline]
    pub fn powi(x: f64, n: i32) -> f64 {
        libm::pow(x, n as f64)
    }
    #[inline]
    pub fn mul_add(a: f64, b: f64, c: f64) -> f64 {
        libm::fma(a, b, c)
    }
}

pub use imp::*;

#[inline]
pub fn sin(x: f64) -> f64 {
    sin_cos(x).0
}

#[inline]
pub fn cos(x: f64) -> f64 {
    sin_cos(x).1
}

/// e^{iθ}.
#[inline]
pub fn expi(theta: f64) -> C64 {
    let (s, c) = sin_cos(theta);
    C64::new(c, s)
}

#[inline]
pub fn cexp(z: C64) -> C64 {
    expi(z.im) * exp(z.re)
}

#[inline]
pub fn cabs(z: C64) -> f64 {
    hypot(z.re, z.im)
}

/// Principal square root.
pub fn csqrt(z: C64) -> C64 {
    if z.im == 0.0 {
        return if z.re >= 0.0 {
            C64::new(sqrt(z.re), 0.0)
        } else {
            C64::new(0.0, sqrt(-z.re))
        };
    }
    let r = cabs(z);
    let re = sqrt(0.5 * (r + z.re));
    let im = sqrt(0.5 * (r - z.re));
    C64::new(re, if z.im < 0.0 { -im } else { im })
}

/// Square root on the branch Im ≥ 0, and Re ≥ 0 when the imaginary part
/// vanishes; this selects outgoing or decaying vertical wavenumbers.
pub fn sqrt_upper(z: C64) -> C64 {
    let mut w = csqrt(z);
    if w.im < 0.0 || (w.im == 0.0 && w.re < 0.0) {
        w = -w;
    }
    w
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    sqrt(dot(a, a))
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Bilinear (non-conjugating) product of complex vectors.
#[inline]
pub fn cdot(a: CVec3, b: CVec3) -> C64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn ccross(a: CVec3, b: CVec3) -> CVec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Cross product of a real and a complex vector.
#[inline]
pub fn rcross(a: Vec3, b: CVec3) -> CVec3 {
    [
        b[2] * a[1] - b[1] * a[2],
        b[0] * a[2] - b[2] * a[0],
        b[1] * a[0] - b[0] * a[1],
    ]
}

#[inline]
pub fn cscale(a: Vec3, s: C64) -> CVec3 {
    [s * a[0], s * a[1], s * a[2]]
}

#[inline]
pub fn cnorm(a: CVec3) -> f64 {
    sqrt(a[0].norm_sqr() + a[1].norm_sqr() + a[2].norm_sqr())
}

#[inline]
pub fn to_complex(a: Vec3) -> CVec3 {
    [C64::new(a[0], 0.0), C64::new(a[1], 0.0), C64::new(a[2], 0.0)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_upper_branch() {
        let w = sqrt_upper(C64::new(-4.0, 0.0));
        assert_eq!(w, C64::new(0.0, 2.0));
        let w = sqrt_upper(C64::new(4.0, 0.0));
        assert_eq!(w, C64::new(2.0, 0.0));
        let w = sqrt_upper(C64::new(-1.0, -1e-3));
        assert!(w.im > 0.0);
        let z = C64::new(0.3, -2.0);
        let w = sqrt_upper(z);
        assert!((w * w - z).norm() < 1e-15);
    }

    #[test]
    fn cross_is_orthogonal() {
        let a = [1.0, 2.0, 3.0];
        let b = [-0.5, 0.25, 4.0];
        let c = cross(a, b);
        assert!(dot(a, c).abs() < 1e-14 && dot(b, c).abs() < 1e-14);
        let cc = rcross(a, to_complex(b));
        for k in 0..3 {
            assert!((cc[k].re - c[k]).abs() < 1e-14);
        }
    }
}
