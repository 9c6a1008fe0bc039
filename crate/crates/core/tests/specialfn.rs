mod common;

use std::f64::consts::PI;

use isp_core::specialfn::{bessel_j, bessel_y, hankel1, j0, j1, y0, y1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn series_j0(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let (mut term, mut sum) = (1.0, 1.0);
    for k in 1..60 {
        term *= q / (k * k) as f64;
        sum += term;
    }
    sum
}

// (2/π)(ln(x/2) + γ) J0(x) + (2/π) Σ (-1)^{k+1} H_k (x²/4)^k / (k!)²
fn series_y0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let (mut term, mut harmonic, mut sum) = (1.0, 0.0, 0.0);
    for k in 1..60 {
        term *= -q / (k * k) as f64;
        harmonic += 1.0 / k as f64;
        sum -= term * harmonic;
    }
    2.0 / PI * (((0.5 * x).ln() + EULER_GAMMA) * series_j0(x) + sum)
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn random_points_match_quadrature_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x: f64 = 100.0 * (1.0 - rng.random::<f64>());
        let table = common::BesselTable::new(1, x);
        for (got, want) in [(j0(x), table.j[0]), (j1(x), table.j[1]), (y0(x), table.y[0]), (y1(x), table.y[1])] {
            worst = worst.max((got - want).abs());
        }
    }
    assert!(worst < 1e-8, "worst absolute error {worst:e}");
}

#[test]
fn large_arguments_stay_accurate() {
    for x in [150.0, 333.3, 640.0, 999.0] {
        let table = common::BesselTable::new(1, x);
        assert!((j0(x) - table.j[0]).abs() < 1e-8, "J0({x})");
        assert!((j1(x) - table.j[1]).abs() < 1e-8, "J1({x})");
        assert!((y0(x) - table.y[0]).abs() < 1e-8, "Y0({x})");
        assert!((y1(x) - table.y[1]).abs() < 1e-8, "Y1({x})");
    }
}

#[test]
fn first_zeros_agree_with_series_bisection() {
    let zj = bisect(series_j0, 2.0, 3.0);
    assert!((zj - 2.404825557695773).abs() < 1e-12);
    assert!(j0(zj).abs() < 1e-8 && j0(2.404825557695773).abs() < 1e-8);
    let zy = bisect(series_y0, 0.5, 1.5);
    assert!((zy - 0.8935769662791675).abs() < 1e-12);
    assert!(y0(zy).abs() < 1e-8 && y0(0.8935769662791675).abs() < 1e-8);
}

#[test]
fn wronskian() {
    let w = |x: f64| j1(x) * y0(x) - j0(x) * y1(x);
    assert!((w(1.0) - 2.0 / PI).abs() < 1e-10);
    for x in [0.1, 1.0, 5.0, 20.0, 100.0] {
        let want = 2.0 / (PI * x);
        assert!(((w(x) - want) / want).abs() < 1e-8, "x = {x}");
    }
}

#[test]
fn hankel_modulus() {
    for x in [0.3, 2.0, 11.9, 12.1, 80.0] {
        let h = hankel1(0, x).unwrap();
        let (j, y) = (bessel_j(0, x).unwrap(), bessel_y(0, x).unwrap());
        assert!((h.norm_sqr() - (j * j + y * y)).abs() < 1e-12);
    }
}

#[test]
fn unsupported_orders_are_rejected() {
    assert!(bessel_j(2, 1.0).is_err());
    assert!(bessel_y(0, 0.0).is_err());
    assert!(bessel_j(0, -1.0).is_err());
}
