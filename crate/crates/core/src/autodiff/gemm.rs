/// `C = beta C + op(A) op(B)` on row-major buffers, where `op(A)` is `m × k`
/// and `op(B)` is `k × n`. With `a_t`, `a` holds `Aᵀ` (`k × m`); likewise
/// for `b_t`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffer sizes");
    if m == 0 || n == 0 {
        return;
    }
    if m <= SMALL_M && m * n <= SMALL_OUT {
        return gemm_small(m, k, n, a, a_t, b, b_t, c, beta);
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above address exactly the asserted buffer extents.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Shapes for which [`gemm_small`] replaces the packed kernel: at most
/// `SMALL_M` rows and an output that stays in cache.
///
/// The network multiplies a handful of current rows by dense `M × M`
/// operators; packing the operator on every call then costs more than the
/// product itself.
const SMALL_M: usize = 16;
const SMALL_OUT: usize = 32 * 1024;

#[allow(clippy::too_many_arguments)]
fn gemm_small(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
        // SAFETY: the features were just detected on this CPU.
        return unsafe { gemm_small_avx2(m, k, n, a, a_t, b, b_t, c, beta) };
    }
    gemm_small_body(m, k, n, a, a_t, b, b_t, c, beta)
}

/// [`gemm_small_body`] compiled with 256-bit vectors.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_small_avx2(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    gemm_small_body(m, k, n, a, a_t, b, b_t, c, beta)
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn gemm_small_body(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    let c = &mut c[..m * n];
    if beta == 0.0 {
        c.fill(0.0);
    } else if beta != 1.0 {
        c.iter_mut().for_each(|v| *v *= beta);
    }
    let a_rows: Vec<f64> = if a_t {
        (0..m * k).map(|i| a[(i % k) * m + i / k]).collect()
    } else {
        a[..m * k].to_vec()
    };
    if !b_t {
        // stream B once, row by row, into every output row
        for kk in 0..k {
            let brow = &b[kk * n..(kk + 1) * n];
            for r in 0..m {
                let s = a_rows[r * k + kk];
                if s == 0.0 {
                    continue;
                }
                for (cv, bv) in c[r * n..(r + 1) * n].iter_mut().zip(brow) {
                    *cv += s * bv;
                }
            }
        }
    } else {
        // rows of `b` are the columns of op(B)
        for j in 0..n {
            let bcol = &b[j * k..(j + 1) * k];
            for r in 0..m {
                c[r * n + j] += dot(&a_rows[r * k..(r + 1) * k], bcol);
            }
        }
    }
}

/// Dot product with eight independent partial sums, which the compiler keeps
/// in vector registers.
#[inline(always)]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (xc, yc) = (x.chunks_exact(8), y.chunks_exact(8));
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(p, q)| p * q).sum();
    for (p, q) in xc.zip(yc) {
        for i in 0..8 {
            acc[i] += p[i] * q[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool) -> Vec<f64> {
        let at = |r: usize, p: usize| if a_t { a[p * m + r] } else { a[r * k + p] };
        let bt = |p: usize, j: usize| if b_t { b[j * k + p] } else { b[p * n + j] };
        (0..m * n).map(|i| (0..k).map(|p| at(i / n, p) * bt(p, i % n)).sum()).collect()
    }

    #[test]
    fn both_paths_match_the_definition() {
        for (m, k, n) in [(3, 7, 5), (16, 9, 33), (17, 9, 33), (40, 13, 6), (2, 5, 20000)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.3).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 5 % 13) as f64 - 6.0) * 0.2).collect();
            for (a_t, b_t) in [(false, false), (true, false), (false, true), (true, true)] {
                let mut c = vec![1.0; m * n];
                gemm(m, k, n, &a, a_t, &b, b_t, &mut c, 0.5);
                let want = naive(m, k, n, &a, a_t, &b, b_t);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - (y + 0.5)).abs() < 1e-12, "{m}x{k}x{n} {a_t} {b_t}");
                }
            }
        }
    }
}
