//! Dense complex linear algebra shared by the physics modules.
//!
//! Large complex products are routed through real GEMMs on separately stored
//! real and imaginary parts, which is several times faster than nalgebra's
//! generic complex kernels.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::CMatrix;

/// Complex matrix stored as two real matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitMatrix {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

pub(crate) fn split(x: &CMatrix) -> (DMatrix<f64>, DMatrix<f64>) {
    (x.map(|z| z.re), x.map(|z| z.im))
}

pub(crate) fn join(re: &DMatrix<f64>, im: &DMatrix<f64>) -> CMatrix {
    re.zip_map(im, Complex64::new)
}

impl SplitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { re: DMatrix::zeros(rows, cols), im: DMatrix::zeros(rows, cols) }
    }

    pub fn from_complex(a: &CMatrix) -> Self {
        let (re, im) = split(a);
        Self { re, im }
    }

    pub fn to_complex(&self) -> CMatrix {
        join(&self.re, &self.im)
    }

    pub fn nrows(&self) -> usize {
        self.re.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.re.ncols()
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        Complex64::new(self.re[(r, c)], self.im[(r, c)])
    }

    /// Submatrix with the given rows and columns.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Self {
        let pick = |a: &DMatrix<f64>| DMatrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])]);
        Self { re: pick(&self.re), im: pick(&self.im) }
    }

    /// `A · X`.
    pub fn apply(&self, x: &CMatrix) -> CMatrix {
        assert_eq!(self.ncols(), x.nrows(), "SplitMatrix::apply shape");
        let (xr, xi) = split(x);
        let re = &self.re * &xr - &self.im * &xi;
        let im = &self.im * &xr + &self.re * &xi;
        join(&re, &im)
    }

    /// `Aᴴ · X`.
    pub fn apply_adjoint(&self, x: &CMatrix) -> CMatrix {
        assert_eq!(self.nrows(), x.nrows(), "SplitMatrix::apply_adjoint shape");
        let (xr, xi) = split(x);
        let re = self.re.tr_mul(&xr) + self.im.tr_mul(&xi);
        let im = self.re.tr_mul(&xi) - self.im.tr_mul(&xr);
        join(&re, &im)
    }
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Worst relative residual `‖b - Ax‖ / ‖b‖` over the right-hand sides.
    pub residual: f64,
}

fn dot(a: &CMatrix, b: &CMatrix, col: usize) -> Complex64 {
    a.column(col).iter().zip(b.column(col).iter()).map(|(x, y)| x.conj() * y).sum()
}

fn col_norm(a: &CMatrix, col: usize) -> f64 {
    a.column(col).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// BiCGStab on every column of `b` at once.
///
/// `apply` maps a block of vectors to `A` times that block; each column keeps
/// its own scalars so the block product is the only coupling.
pub fn bicgstab<F>(apply: F, b: &CMatrix, tol: f64, max_iter: usize) -> Result<(CMatrix, SolveStats)>
where
    F: Fn(&CMatrix) -> CMatrix,
{
    let (n, k) = b.shape();
    let mut x = CMatrix::zeros(n, k);
    let bnorm: Vec<f64> = (0..k).map(|c| col_norm(b, c)).collect();
    let mut r = b.clone();
    let mut r_hat = r.clone();
    let mut p = CMatrix::zeros(n, k);
    let mut v = CMatrix::zeros(n, k);
    let one = Complex64::new(1.0, 0.0);
    let mut rho = vec![one; k];
    let mut alpha = vec![one; k];
    let mut omega = vec![one; k];
    let mut done: Vec<bool> = bnorm.iter().map(|&bn| bn == 0.0).collect();
    let rel = |r: &CMatrix, c: usize| if bnorm[c] == 0.0 { 0.0 } else { col_norm(r, c) / bnorm[c] };

    let mut iterations = 0;
    while iterations < max_iter && done.iter().any(|d| !d) {
        iterations += 1;
        for c in (0..k).filter(|&c| !done[c]) {
            let mut rho_new = dot(&r_hat, &r, c);
            if rho_new.norm() < 1e-300 {
                // breakdown: restart the shadow residual
                r_hat.set_column(c, &r.column(c).clone_owned());
                rho_new = dot(&r_hat, &r, c);
                p.column_mut(c).fill(Complex64::new(0.0, 0.0));
                v.column_mut(c).fill(Complex64::new(0.0, 0.0));
                alpha[c] = one;
                omega[c] = one;
                rho[c] = one;
            }
            let beta = (rho_new / rho[c]) * (alpha[c] / omega[c]);
            rho[c] = rho_new;
            for i in 0..n {
                p[(i, c)] = r[(i, c)] + beta * (p[(i, c)] - omega[c] * v[(i, c)]);
            }
        }
        v = apply(&p);
        let mut s = r.clone();
        for c in (0..k).filter(|&c| !done[c]) {
            let denom = dot(&r_hat, &v, c);
            alpha[c] = if denom.norm() > 0.0 { rho[c] / denom } else { Complex64::new(0.0, 0.0) };
            for i in 0..n {
                s[(i, c)] = r[(i, c)] - alpha[c] * v[(i, c)];
            }
        }
        let t = apply(&s);
        let active: Vec<usize> = (0..k).filter(|&c| !done[c]).collect();
        for c in active {
            let tt: f64 = t.column(c).iter().map(|z| z.norm_sqr()).sum();
            omega[c] = if tt > 0.0 { dot(&t, &s, c) / tt } else { Complex64::new(0.0, 0.0) };
            for i in 0..n {
                x[(i, c)] += alpha[c] * p[(i, c)] + omega[c] * s[(i, c)];
                r[(i, c)] = s[(i, c)] - omega[c] * t[(i, c)];
            }
            if rel(&r, c) < tol || omega[c].norm() == 0.0 {
                done[c] = true;
            }
        }
    }

    // true residual, not the recursively updated one
    let ax = apply(&x);
    let residual = (0..k)
        .map(|c| {
            if bnorm[c] == 0.0 {
                0.0
            } else {
                let d: f64 = b.column(c).iter().zip(ax.column(c).iter()).map(|(p, q)| (p - q).norm_sqr()).sum();
                d.sqrt() / bnorm[c]
            }
        })
        .fold(0.0, f64::max);
    let stats = SolveStats { iterations, residual };
    if residual > tol * 10.0 {
        return Err(Error::Convergence { iterations, residual });
    }
    Ok((x, stats))
}

/// Direct solve `A X = B` by LU with partial pivoting.
pub fn lu_solve(a: CMatrix, b: &CMatrix) -> Result<CMatrix> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "lu_solve: {}x{} system with {} right-hand rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    a.lu().solve(b).ok_or_else(|| Error::Singular("LU factorization hit a zero pivot".into()))
}

/// Frobenius norm.
pub fn fro(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
