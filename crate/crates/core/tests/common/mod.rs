//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the library's special functions: Bessel functions
//! come from quadrature of their integral representations, and gradients from
//! central differences.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::rc::Rc;

use isp_core::autodiff::complex::CVar;
use isp_core::autodiff::{Graph, Tensor, Var};
use isp_core::config::ProblemConfig;
use isp_core::data::shapes::{rasterize_circles, Circle};
use isp_core::operators::{simulate, OperatorSet};
use isp_core::spectral::contrast;
use isp_core::{CMatrix, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

/// Composite Gauss-Legendre quadrature of `f` over `[a, b]`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let rule = gauss_legendre(10);
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for &(x, w) in &rule {
            total += w * f(mid + 0.5 * h * x);
        }
    }
    0.5 * h * total
}

/// `J_n(x) = (1/2π) ∫_0^{2π} cos(nθ - x sin θ) dθ`, trapezoidal rule on the
/// periodic integrand (spectrally accurate).
pub fn bessel_j(n: i32, x: f64) -> f64 {
    let m = 64 + 4 * (x.abs() as usize + n.unsigned_abs() as usize);
    let h = 2.0 * PI / m as f64;
    (0..m).map(|k| (n as f64 * k as f64 * h - x * (k as f64 * h).sin()).cos()).sum::<f64>() / m as f64
}

/// `Y_n(x) = (1/π) ∫_0^π sin(x sin θ - nθ) dθ
///          - (1/π) ∫_0^∞ (e^{nt} + (-1)^n e^{-nt}) e^{-x sinh t} dt`.
pub fn bessel_y_integral(n: i32, x: f64) -> f64 {
    let nf = n as f64;
    let first = integrate(|t| (x * t.sin() - nf * t).sin(), 0.0, PI, 64 + 2 * x as usize);
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    let g = |t: f64| ((nf * t - x * t.sinh()).exp()) + sign * ((-nf * t - x * t.sinh()).exp());
    // the integrand is below e^-60 of its scale beyond T
    let mut upper = 1.0;
    while nf * upper - x * upper.sinh() > -60.0 {
        upper += 0.5;
    }
    let second = integrate(g, 0.0, upper, 4000);
    (first - second) / PI
}

/// `Y_n` for `n >= 0`: quadrature for orders 0 and 1, then the forward
/// recurrence, which is stable for the second kind.
pub fn bessel_y(n: u32, x: f64) -> f64 {
    let (mut y0, mut y1) = (bessel_y_integral(0, x), bessel_y_integral(1, x));
    if n == 0 {
        return y0;
    }
    for k in 1..n {
        let y2 = 2.0 * k as f64 / x * y1 - y0;
        y0 = y1;
        y1 = y2;
    }
    y1
}

/// `J_0..=J_n` and `Y_0..=Y_n` at one argument.
pub struct BesselTable {
    pub j: Vec<f64>,
    pub y: Vec<f64>,
}

impl BesselTable {
    pub fn new(orders: u32, x: f64) -> Self {
        let j = (0..=orders as i32 + 1).map(|n| bessel_j(n, x)).collect();
        let mut y = vec![bessel_y_integral(0, x), bessel_y_integral(1, x)];
        for k in 1..=orders as usize {
            y.push(2.0 * k as f64 / x * y[k] - y[k - 1]);
        }
        Self { j, y }
    }

    pub fn h(&self, n: usize) -> Complex64 {
        Complex64::new(self.j[n], self.y[n])
    }

    /// `Z_n' = Z_{n-1} - (n/x) Z_n`, `Z_0' = -Z_1`.
    fn dj(&self, n: usize, x: f64) -> f64 {
        if n == 0 { -self.j[1] } else { self.j[n - 1] - n as f64 / x * self.j[n] }
    }

    fn dh(&self, n: usize, x: f64) -> Complex64 {
        if n == 0 { -self.h(1) } else { self.h(n - 1) - self.h(n) * (n as f64 / x) }
    }
}

/// Coefficients `a_n` of the scattered field of a homogeneous dielectric
/// cylinder of radius `a` and relative permittivity `eps`, from continuity of
/// `E` and `∂E/∂ρ` at the boundary.
pub fn cylinder_coefficients(k0: f64, a: f64, eps: f64, orders: u32) -> Vec<Complex64> {
    let k1 = k0 * eps.sqrt();
    let (out, inn) = (BesselTable::new(orders, k0 * a), BesselTable::new(orders, k1 * a));
    (0..=orders as usize)
        .map(|n| {
            let (j0, dj0) = (out.j[n], out.dj(n, k0 * a));
            let (j1, dj1) = (inn.j[n], inn.dj(n, k1 * a));
            let num = Complex64::new(k1 * dj1 * j0 - k0 * dj0 * j1, 0.0);
            num / (out.dh(n, k0 * a) * (k0 * j1) - out.h(n) * (k1 * dj1))
        })
        .collect()
}

/// Scattered field of the cylinder at `(rho, phi)` under the line source
/// `(i/4) H0(k0 |r - r_s|)` at polar position `(rs, phis)`, for
/// `rho, rs > a`.
pub fn cylinder_scattered(coeffs: &[Complex64], src: &BesselTable, phis: f64, obs: &BesselTable, phi: f64) -> Complex64 {
    let mut total = Complex64::new(0.0, 0.0);
    for (n, an) in coeffs.iter().enumerate() {
        let term = an * src.h(n) * obs.h(n) * (n as f64 * (phi - phis)).cos();
        total += if n == 0 { term } else { term * 2.0 };
    }
    total * Complex64::new(0.0, 0.25)
}

/// Relative L2 error of the MoM scattered field of the radius-0.3 m, εr = 2
/// cylinder against the Bessel series, over every source/receiver pair.
pub fn cylinder_error(inv_grid: usize) -> f64 {
    let cfg = ProblemConfig { inv_grid, ..ProblemConfig::desk() };
    let ops = OperatorSet::inversion(&cfg).unwrap();
    let disc = Circle { cx: 0.0, cy: 0.0, radius: 0.3, eps: Complex64::new(2.0, 0.0) };
    let eps = rasterize_circles(&[disc], &ops.grid, 4);
    let es = simulate(&ops, &contrast(&ops, &eps)).unwrap().scattered;
    let coeffs = cylinder_coefficients(cfg.k0(), 0.3, 2.0, 40);
    let ring = BesselTable::new(40, cfg.k0() * cfg.ring_radius);
    let (mut num, mut den) = (0.0, 0.0);
    for (l, s) in ops.sources.iter().enumerate() {
        for (r, p) in ops.receivers.iter().enumerate() {
            let exact = cylinder_scattered(&coeffs, &ring, s.y.atan2(s.x), &ring, p.y.atan2(p.x));
            num += (es[(r, l)] - exact).norm_sqr();
            den += exact.norm_sqr();
        }
    }
    (num / den).sqrt()
}

/// `Re F(J)` in plain complex arithmetic: the real part of
/// `1 + i (η0/k0) Σ w conj(E^t) J / Σ w |E^t|²` with `E^t = E^i + G_D J`.
pub fn analytic_oracle(ops: &OperatorSet, j: &CMatrix, w: &[f64]) -> Vec<f64> {
    let gd = ops.gd.to_complex();
    let (m, ni) = j.shape();
    (0..m)
        .map(|r| {
            let (mut num, mut den) = (Complex64::new(0.0, 0.0), 0.0);
            for l in 0..ni {
                let et = ops.incident[(r, l)] + (0..m).map(|k| gd[(r, k)] * j[(k, l)]).sum::<Complex64>();
                num += w[l] * et.conj() * j[(r, l)];
                den += w[l] * et.norm_sqr();
            }
            (1.0 + Complex64::new(0.0, ops.eta0 / ops.k0) * (num / den)).re
        })
        .collect()
}

/// Worst relative error between reverse-mode and central-difference
/// gradients of `build` with respect to the selected entries of `inputs`.
///
/// `build` receives a fresh graph and the input leaves and returns the scalar
/// output. The relative error of each entry is
/// `|g_ad - g_fd| / max(|g_ad|, |g_fd|, floor)`.
pub fn gradcheck<F>(inputs: &[Tensor], picks: &[(usize, usize)], h: f64, floor: f64, build: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let eval = |ts: &[Tensor]| -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.param(t.clone())).collect();
        let out = build(&mut g, &vars);
        (g, vars, out)
    };
    let (g, vars, out) = eval(inputs);
    let grads = g.backward(out).expect("scalar output");
    let mut worst: f64 = 0.0;
    for &(ti, ei) in picks {
        let ad = grads.wrt(vars[ti]).data[ei];
        let mut plus = inputs.to_vec();
        plus[ti].data[ei] += h;
        let mut minus = inputs.to_vec();
        minus[ti].data[ei] -= h;
        let (gp, _, op) = eval(&plus);
        let (gm, _, om) = eval(&minus);
        let fd = (gp.scalar(op) - gm.scalar(om)) / (2.0 * h);
        let rel = (ad - fd).abs() / ad.abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

/// Every entry of every input.
pub fn all_entries(inputs: &[Tensor]) -> Vec<(usize, usize)> {
    inputs.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e))).collect()
}

/// Entries in ±[0.2, 1.2], away from the kinks of relu, abs and hypot.
pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.2..1.2);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// `Σ v ⊙ r` with a fixed random `r`, so every output entry matters.
pub fn project(g: &mut Graph, v: Var) -> Var {
    let r = random(g.shape(v), 99);
    let r = g.constant(r);
    let p = g.mul(v, r).unwrap();
    g.sum(p)
}

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Var>;

/// One primitive under a scalar projection, with its inputs.
pub struct PrimitiveCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn case(name: &str, inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var + 'static) -> PrimitiveCase {
    PrimitiveCase { name: name.to_string(), inputs, build: Box::new(build) }
}

/// Every differentiable primitive of the graph.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    let two = || vec![random(&[3, 4], 1), random(&[3, 4], 2)];
    let mut out = vec![
        case("add", two(), |g, v| { let o = g.add(v[0], v[1]).unwrap(); project(g, o) }),
        case("sub", two(), |g, v| { let o = g.sub(v[0], v[1]).unwrap(); project(g, o) }),
        case("mul", two(), |g, v| { let o = g.mul(v[0], v[1]).unwrap(); project(g, o) }),
        case("safe_div", two(), |g, v| { let o = g.safe_div(v[0], v[1], 1e-30).unwrap(); project(g, o) }),
        case("scale", two(), |g, v| { let o = g.scale(v[0], 2.5); project(g, o) }),
        case("affine", two(), |g, v| { let o = g.affine(v[0], -1.7, 0.3); project(g, o) }),
        case("relu", two(), |g, v| { let o = g.relu(v[0]); project(g, o) }),
        case("abs", two(), |g, v| { let o = g.abs(v[0]); project(g, o) }),
        case("square", two(), |g, v| { let o = g.square(v[0]); project(g, o) }),
        case("hypot", two(), |g, v| { let o = g.hypot(v[0], v[1]).unwrap(); project(g, o) }),
        case("sum", two(), |g, v| { let s = g.square(v[0]); g.sum(s) }),
        case("mean", two(), |g, v| { let s = g.square(v[0]); g.mean(s) }),
        case("sum_axis0", two(), |g, v| { let o = g.sum_axis0(v[0]).unwrap(); project(g, o) }),
        case("reshape", two(), |g, v| { let o = g.reshape(v[0], &[2, 6]).unwrap(); project(g, o) }),
        case("matmul", vec![random(&[3, 5], 6), random(&[5, 4], 7)], |g, v| {
            let o = g.matmul(v[0], v[1]).unwrap();
            project(g, o)
        }),
    ];
    let images = || vec![random(&[2, 3, 2, 2], 3), random(&[2, 1, 2, 2], 4), random(&[1, 2, 2, 2], 5)];
    out.push(case("concat_channels", images(), |g, v| { let o = g.concat_channels(&[v[0], v[1]]).unwrap(); project(g, o) }));
    out.push(case("slice_channels", images(), |g, v| { let o = g.slice_channels(v[0], 1, 2).unwrap(); project(g, o) }));
    out.push(case("repeat_batch", images(), |g, v| { let o = g.repeat_batch(v[2], 3).unwrap(); project(g, o) }));
    for k in [1, 3, 5] {
        let x = vec![random(&[2, 3, 5, 6], 8), random(&[4, 3, k, k], 9), random(&[4], 10)];
        out.push(case(&format!("conv2d k={k}"), x, |g, v| { let o = g.conv2d(v[0], v[1], Some(v[2])).unwrap(); project(g, o) }));
    }
    let taps = Rc::new(vec![0.2, 0.5, 0.3]);
    out.push(case("local_mean", vec![random(&[6, 7], 11)], move |g, v| {
        let o = g.local_mean(v[0], taps.clone()).unwrap();
        project(g, o)
    }));
    let cx = || (0..6).map(|i| random(if (2..4).contains(&i) { &[3, 2] } else { &[2, 3] }, 12 + i as u64)).collect::<Vec<_>>();
    let pair = |v: &[Var], i: usize| CVar { re: v[i], im: v[i + 1] };
    let both = |g: &mut Graph, z: CVar| { let a = project(g, z.re); let b = project(g, z.im); g.add(a, b).unwrap() };
    out.push(case("cadd", cx(), move |g, v| { let z = g.cadd(pair(v, 0), pair(v, 4)).unwrap(); both(g, z) }));
    out.push(case("csub", cx(), move |g, v| { let z = g.csub(pair(v, 0), pair(v, 4)).unwrap(); both(g, z) }));
    out.push(case("cmul", cx(), move |g, v| { let z = g.cmul(pair(v, 0), pair(v, 4)).unwrap(); both(g, z) }));
    out.push(case("cconj_mul", cx(), move |g, v| { let z = g.cconj_mul(pair(v, 0), pair(v, 4)).unwrap(); both(g, z) }));
    out.push(case("cmatmul", cx(), move |g, v| { let z = g.cmatmul(pair(v, 0), pair(v, 2)).unwrap(); both(g, z) }));
    out.push(case("cabs2", cx(), move |g, v| { let z = g.cabs2(pair(v, 0)).unwrap(); project(g, z) }));
    out.push(case("cabs", cx(), move |g, v| { let z = g.cabs(pair(v, 0)).unwrap(); project(g, z) }));
    out
}
