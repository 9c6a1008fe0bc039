//! Cylindrical functions of orders 0 and 1 on the positive real axis.
//!
//! Below [`CROSSOVER`] the ascending power series are summed directly; above
//! it the Hankel asymptotic expansions are summed up to their smallest term.
//! Both branches stay below ~1e-11 absolute error, which is what the
//! Wronskian and the gradient checks downstream need.

use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::error::{Error, Result};

/// Argument at which evaluation switches from power series to asymptotics.
///
/// The series loses ~`e^x / x` to cancellation and the asymptotic series
/// bottoms out near `e^{-2x}`; the two error curves cross around 12.
pub const CROSSOVER: f64 = 12.0;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `J0(x)` for `x >= 0`. NaN outside the domain.
pub fn j0(x: f64) -> f64 {
    if !(x >= 0.0) {
        return f64::NAN;
    }
    if x < CROSSOVER {
        series_j(0, x)
    } else {
        asymptotic(0, x).0
    }
}

/// `J1(x)` for `x >= 0`. NaN outside the domain.
pub fn j1(x: f64) -> f64 {
    if !(x >= 0.0) {
        return f64::NAN;
    }
    if x < CROSSOVER {
        series_j(1, x)
    } else {
        asymptotic(1, x).0
    }
}

/// `Y0(x)` for `x > 0`. `-inf` at zero, NaN below.
pub fn y0(x: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x < CROSSOVER {
        series_y0(x)
    } else {
        asymptotic(0, x).1
    }
}

/// `Y1(x)` for `x > 0`. `-inf` at zero, NaN below.
pub fn y1(x: f64) -> f64 {
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if !(x > 0.0) {
        return f64::NAN;
    }
    if x < CROSSOVER {
        series_y1(x)
    } else {
        asymptotic(1, x).1
    }
}

/// `H0^(1)(x) = J0(x) + i Y0(x)`.
pub fn h0(x: f64) -> Complex64 {
    if x < CROSSOVER {
        Complex64::new(series_j(0, x), series_y0(x))
    } else {
        let (j, y) = asymptotic(0, x);
        Complex64::new(j, y)
    }
}

/// `H1^(1)(x) = J1(x) + i Y1(x)`.
pub fn h1(x: f64) -> Complex64 {
    if x < CROSSOVER {
        Complex64::new(series_j(1, x), series_y1(x))
    } else {
        let (j, y) = asymptotic(1, x);
        Complex64::new(j, y)
    }
}

fn check_order(order: u32) -> Result<()> {
    if order > 1 {
        return Err(Error::Domain(format!("Bessel order {order} unsupported (only 0 and 1)")));
    }
    Ok(())
}

/// Bessel function of the first kind, `J_order(x)`, for `order` in {0, 1}.
pub fn bessel_j(order: u32, x: f64) -> Result<f64> {
    check_order(order)?;
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("J_{order} needs a finite x >= 0, got {x}")));
    }
    Ok(if order == 0 { j0(x) } else { j1(x) })
}

/// Bessel function of the second kind, `Y_order(x)`, for `order` in {0, 1}.
pub fn bessel_y(order: u32, x: f64) -> Result<f64> {
    check_order(order)?;
    if !x.is_finite() || x <= 0.0 {
        return Err(Error::Domain(format!("Y_{order} needs a finite x > 0, got {x}")));
    }
    Ok(if order == 0 { y0(x) } else { y1(x) })
}

/// Hankel function of the first kind, `H_order^(1)(x) = J + iY`.
pub fn hankel1(order: u32, x: f64) -> Result<Complex64> {
    Ok(Complex64::new(bessel_j(order, x)?, bessel_y(order, x)?))
}

// sum_k (-1)^k (x/2)^(2k+n) / (k! (k+n)!)
fn series_j(n: u32, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    let mut term = if n == 0 { 1.0 } else { half };
    let mut sum = term;
    let n = n as f64;
    for k in 1..200 {
        let k = k as f64;
        term *= q / (k * (k + n));
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

fn series_y0(x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    // sum_{k>=1} H_k (-x^2/4)^k / (k!)^2
    let mut term = 1.0;
    let mut harmonic = 0.0;
    let mut tail = 0.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * kf);
        harmonic += 1.0 / kf;
        let t = harmonic * term;
        tail += t;
        if t.abs() < 1e-17 * tail.abs().max(1e-300) && k > 2 {
            break;
        }
    }
    (2.0 / PI) * ((half.ln() + EULER_GAMMA) * series_j(0, x) - tail)
}

fn series_y1(x: f64) -> f64 {
    let half = 0.5 * x;
    let q = -half * half;
    // sum_{k>=0} (H_k + H_{k+1}) (-x^2/4)^k / (k! (k+1)!)
    let mut term = 1.0;
    let mut h_k = 0.0;
    let mut h_k1 = 1.0;
    let mut tail = term * (h_k + h_k1);
    for k in 1..200 {
        let kf = k as f64;
        term *= q / (kf * (kf + 1.0));
        h_k = h_k1;
        h_k1 += 1.0 / (kf + 1.0);
        let t = term * (h_k + h_k1);
        tail += t;
        if t.abs() < 1e-17 * tail.abs().max(1e-300) && k > 2 {
            break;
        }
    }
    -2.0 / (PI * x) + (2.0 / PI) * (half.ln() + EULER_GAMMA) * series_j(1, x) - half * tail / PI
}

/// Hankel asymptotic expansion, returning `(J_n(x), Y_n(x))`.
fn asymptotic(n: u32, x: f64) -> (f64, f64) {
    let mu = 4.0 * (n * n) as f64;
    // a_k = prod_{j=1..k} (mu - (2j-1)^2) / (k! 8^k), divided by x^k.
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..100 {
        let kf = k as f64;
        let odd = 2.0 * kf - 1.0;
        let next = term * (mu - odd * odd) / (kf * 8.0 * x);
        if next.abs() >= last || next.abs() < 1e-17 {
            break;
        }
        last = next.abs();
        term = next;
        // even k contributes to P with sign (-1)^(k/2); odd k to Q with (-1)^((k-1)/2)
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
    }
    let omega = x - (n as f64) * FRAC_PI_2 - FRAC_PI_4;
    let (s, c) = omega.sin_cos();
    let amp = (2.0 / (PI * x)).sqrt();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}
