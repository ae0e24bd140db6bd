//! Error functions of real and complex argument and the upper incomplete
//! gamma functions Γ(1/2 − j, x) needed by the Ewald sums.
//!
//! The Faddeeva function follows Zaghloul & Ali (ACM TOMS Algorithm 916)
//! for moderate arguments and a Laplace continued fraction elsewhere, the
//! combination used by S. G. Johnson's Faddeeva package.

use crate::math::{self, C64, SQRT_PI};

const INV_SQRT_PI: f64 = 0.564_189_583_547_756_3;

#[inline]
pub fn erf(x: f64) -> f64 {
    libm::erf(x)
}

#[inline]
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// e^{x²} computed without the rounding error of forming x² in floating point.
fn exp_sq(x: f64) -> f64 {
    let hi = x * x;
    let lo = math::mul_add(x, x, -hi);
    math::exp(hi) * (1.0 + lo)
}

/// Scaled complementary error function erfcx(x) = e^{x²} erfc(x).
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        if x < -26.7 {
            return f64::INFINITY;
        }
        return 2.0 * exp_sq(x) - erfcx(-x);
    }
    if x < 26.0 {
        return exp_sq(x) * erfc(x);
    }
    // Laplace continued fraction, evaluated from the tail.
    let mut t = x;
    for k in (1..=14).rev() {
        t = x + 0.5 * k as f64 / t;
    }
    INV_SQRT_PI / t
}

#[inline]
fn sinc(x: f64, sinx: f64) -> f64 {
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        sinx / x
    }
}

#[inline]
fn sinh_taylor(x: f64) -> f64 {
    x * (1.0 + (x * x) * (1.0 / 6.0 + (1.0 / 120.0) * (x * x)))
}

/// Faddeeva function w(z) = e^{−z²} erfc(−iz), valid in the whole plane.
pub fn faddeeva(z: C64) -> C64 {
    let (zr, y) = (z.re, z.im);
    if zr == 0.0 {
        return C64::new(erfcx(y), zr);
    }
    let ya = y.abs();
    let x = zr.abs();
    const A: f64 = 0.518_321_480_430_085_9; // π / sqrt(−ln(ε/2))
    const C: f64 = 0.329_973_702_884_629_07; // 2a/π
    const A2: f64 = 0.268_657_157_075_235_95; // a²
    let relerr = f64::EPSILON;

    if ya > 7.0 || (x > 6.0 && (ya > 0.1 || (x > 8.0 && ya > 1e-10) || x > 28.0)) {
        // Continued fraction; computes w for the reflected argument when y < 0.
        let xs = if y < 0.0 { -zr } else { zr };
        let ret = if x + ya > 1e7 {
            if x > ya {
                let yax = ya / xs;
                let d = INV_SQRT_PI / (xs + yax * ya);
                C64::new(d * yax, d)
            } else {
                let xya = xs / ya;
                let d = INV_SQRT_PI / (xya * xs + ya);
                C64::new(d, d * xya)
            }
        } else if x + ya > 4000.0 {
            let dr = xs * xs - ya * ya - 0.5;
            let di = 2.0 * xs * ya;
            let d = INV_SQRT_PI / (dr * dr + di * di);
            C64::new(d * (xs * di - ya * dr), d * (xs * dr + ya * di))
        } else {
            let nu = math::floor(3.9 + 11.398 / (0.08254 * x + 0.1421 * ya + 0.2023));
            let (mut wr, mut wi) = (xs, ya);
            let mut nu = 0.5 * (nu - 1.0);
            while nu > 0.4 {
                let d = nu / (wr * wr + wi * wi);
                wr = xs - wr * d;
                wi = ya + wi * d;
                nu -= 0.5;
            }
            let d = INV_SQRT_PI / (wr * wr + wi * wi);
            C64::new(d * wi, d * wr)
        };
        if y < 0.0 {
            let e = math::cexp(C64::new((ya - xs) * (xs + ya), 2.0 * xs * y));
            return e * 2.0 - ret;
        }
        return ret;
    }

    let (mut sum1, mut sum2, mut sum3, mut sum4, mut sum5) = (0.0, 0.0, 0.0, 0.0, 0.0);
    if x < 10.0 {
        let mut prod2ax = 1.0;
        let mut prodm2ax = 1.0;
        let expx2;
        if x < 5e-4 {
            // sum4 and sum5 are accumulated together as sum5 − sum4.
            let x2 = x * x;
            expx2 = 1.0 - x2 * (1.0 - 0.5 * x2);
            let ax2 = 2.0 * A * x;
            let exp2ax = 1.0 + ax2 * (1.0 + ax2 * (0.5 + ax2 / 6.0));
            let expm2ax = 1.0 - ax2 * (1.0 - ax2 * (0.5 - ax2 / 6.0));
            let mut n = 1.0f64;
            loop {
                let coef = math::exp(-A2 * n * n) * expx2 / (A2 * n * n + y * y);
                prod2ax *= exp2ax;
                prodm2ax *= expm2ax;
                sum1 += coef;
                sum2 += coef * prodm2ax;
                sum3 += coef * prod2ax;
                sum5 += coef * (2.0 * A) * n * sinh_taylor(2.0 * A * n * x);
                if coef * prod2ax < relerr * sum3 {
                    break;
                }
                n += 1.0;
            }
        } else {
            expx2 = math::exp(-x * x);
            let exp2ax = math::exp(2.0 * A * x);
            let expm2ax = 1.0 / exp2ax;
            let mut n = 1.0f64;
            loop {
                let coef = math::exp(-A2 * n * n) * expx2 / (A2 * n * n + y * y);
                prod2ax *= exp2ax;
                prodm2ax *= expm2ax;
                sum1 += coef;
                sum2 += coef * prodm2ax;
                sum4 += coef * prodm2ax * (A * n);
                sum3 += coef * prod2ax;
                sum5 += coef * prod2ax * (A * n);
                if coef * prod2ax * A * n < relerr * sum5 {
                    break;
                }
                n += 1.0;
            }
        }
        let expx2erfcxy = if y > -6.0 {
            expx2 * erfcx(y)
        } else {
            2.0 * math::exp(y * y - x * x)
        };
        let ret = if y > 5.0 {
            let (sinxy, _) = math::sin_cos(x * y);
            let c2 = math::cos(2.0 * x * y);
            C64::new(
                (expx2erfcxy - C * y * sum1) * c2 + (C * x * expx2) * sinxy * sinc(x * y, sinxy),
                0.0,
            )
        } else {
            let xs = zr;
            let (sinxy, _) = math::sin_cos(xs * y);
            let (sin2xy, cos2xy) = math::sin_cos(2.0 * xs * y);
            let coef1 = expx2erfcxy - C * y * sum1;
            let coef2 = C * xs * expx2;
            C64::new(
                coef1 * cos2xy + coef2 * sinxy * sinc(xs * y, sinxy),
                coef2 * sinc(2.0 * xs * y, sin2xy) - coef1 * sin2xy,
            )
        };
        return ret + C64::new(0.5 * C * y * (sum2 + sum3), 0.5 * C * (sum5 - sum4).copysign(zr));
    }

    // x ≥ 10 with |y| ≤ 1e-10: only sum3 and sum5 contribute.
    let ret = C64::new(math::exp(-x * x), 0.0);
    let n0 = math::floor(x / A + 0.5);
    let dx = A * n0 - x;
    sum3 = math::exp(-dx * dx) / (A2 * (n0 * n0) + y * y);
    sum5 = A * n0 * sum3;
    let exp1 = math::exp(4.0 * A * dx);
    let mut exp1dn = 1.0;
    let mut dn = 1.0f64;
    let finish = |s3: f64, s5: f64| ret + C64::new(0.5 * C * y * (sum2 + s3), 0.5 * C * (s5 - sum4).copysign(zr));
    while dn < n0 {
        let np = n0 + dn;
        let nm = n0 - dn;
        let mut tp = math::exp(-(A * dn + dx) * (A * dn + dx));
        exp1dn *= exp1;
        let mut tm = tp * exp1dn;
        tp /= A2 * (np * np) + y * y;
        tm /= A2 * (nm * nm) + y * y;
        sum3 += tp + tm;
        sum5 += A * (np * tp + nm * tm);
        if A * (np * tp + nm * tm) < relerr * sum5 {
            return finish(sum3, sum5);
        }
        dn += 1.0;
    }
    loop {
        let np = n0 + dn;
        dn += 1.0;
        let tp = math::exp(-(A * dn + dx) * (A * dn + dx)) / (A2 * (np * np) + y * y);
        sum3 += tp;
        sum5 += A * np * tp;
        if A * np * tp < relerr * sum5 {
            return finish(sum3, sum5);
        }
    }
}

/// Complementary error function of complex argument.
pub fn cerfc(z: C64) -> C64 {
    let iz = C64::new(-z.im, z.re);
    if z.re >= 0.0 {
        math::cexp(-z * z) * faddeeva(iz)
    } else {
        C64::new(2.0, 0.0) - math::cexp(-z * z) * faddeeva(-iz)
    }
}

/// Scaled incomplete gamma values Q_j(y) = y^{2j−1} Γ(1/2 − j, y²) for
/// j = 0..out.len(), via the downward recurrence in the first argument
/// seeded from Γ(1/2, y²) = √π erfc(y).
///
/// The scaling keeps every Q_j with j ≥ 1 finite at y = 0 (Q_j(0) = 1/(j − 1/2)).
/// Q_0 is infinite at y = 0.
pub fn gamma_q_sequence(y: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    let x = y * y;
    let ex = math::exp(-x);
    out[0] = if y == 0.0 { f64::INFINITY } else { SQRT_PI * erfc(y) / y };
    for j in 1..out.len() {
        let prev = if y == 0.0 { 0.0 } else { x * out[j - 1] };
        out[j] = (ex - prev) / (j as f64 - 0.5);
    }
}

/// Γ(1/2 − j, x) for x > 0, by the downward recurrence
/// Γ(s − 1, x) = (Γ(s, x) − x^{s−1} e^{−x}) / (s − 1) from Γ(1/2, x) = √π erfc(√x).
pub fn upper_gamma_half_minus(j: usize, x: f64) -> f64 {
    let mut g = SQRT_PI * erfc(math::sqrt(x));
    let ex = math::exp(-x);
    let mut s = 0.5;
    for _ in 0..j {
        g = (g - libm::pow(x, s - 1.0) * ex) / (s - 1.0);
        s -= 1.0;
    }
    g
}
