//! Subspace split of the induced current and back-propagation initialization.
//!
//! With `G_S = U Σ Vᴴ`, the first `L` right singular vectors carry the part of
//! the current that the receivers observe reliably:
//!
//! ```text
//! J⁺ = Σ_{j ≤ L} (u_jᴴ E^s / σ_j) v_j          J = J⁺ + V⁻ α⁻
//! ```
//!
//! `V⁻` spans the orthogonal complement of `span{v_1..v_L}` in `C^M`. Besides
//! the explicit basis, the decomposition offers the projector
//! `P⊥ = I - V_L V_Lᴴ`: optimizing `J⁻ = P⊥ w` over `w` is the same problem as
//! optimizing `α⁻` because `V⁻` is an isometry onto the range of `P⊥`.

use num_complex::Complex64;

use crate::config::PermittivityMap;
use crate::error::{Error, Result};
use crate::operators::OperatorSet;
use crate::{CMatrix, CVector};

/// Thin SVD `A = U diag(σ) Vᴴ` with `σ` descending.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    /// `rows × r`.
    pub u: CMatrix,
    pub sigma: Vec<f64>,
    /// `cols × r`.
    pub v: CMatrix,
}

impl ThinSvd {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(σ) Vᴴ`.
    pub fn reconstruct(&self) -> CMatrix {
        let mut us = self.u.clone();
        for (j, s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.adjoint()
    }

    fn check_dim(&self, l: usize) -> Result<()> {
        if l == 0 || l > self.rank() {
            return Err(Error::Domain(format!("subspace dimension {l} outside 1..={}", self.rank())));
        }
        let s1 = self.sigma[0];
        let sl = self.sigma[l - 1];
        let threshold = 1e-12 * s1;
        if !(sl > threshold) {
            return Err(Error::RankDeficient { index: l, value: sl, threshold });
        }
        Ok(())
    }
}

/// Thin SVD of `a`, singular values sorted descending.
pub fn thin_svd(a: &CMatrix) -> Result<ThinSvd> {
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 10_000)
        .ok_or(Error::Convergence { iterations: 10_000, residual: f64::NAN })?;
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested Vᴴ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = CMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = CMatrix::from_fn(vt.ncols(), order.len(), |r, c| vt[(order[c], r)].conj());
    Ok(ThinSvd { u, sigma, v })
}

/// `J⁺ = V_L diag(1/σ) U_Lᴴ E^s` for every column of `es`.
pub fn deterministic_currents(svd: &ThinSvd, es: &CMatrix, l: usize) -> Result<CMatrix> {
    svd.check_dim(l)?;
    if es.nrows() != svd.u.nrows() {
        return Err(Error::Dimension(format!("E^s has {} rows, G_S has {}", es.nrows(), svd.u.nrows())));
    }
    let mut coef = svd.u.columns(0, l).adjoint() * es;
    for j in 0..l {
        coef.row_mut(j).scale_mut(1.0 / svd.sigma[j]);
    }
    Ok(svd.v.columns(0, l) * coef)
}

/// Single-incidence form of [`deterministic_currents`].
pub fn deterministic_current(svd: &ThinSvd, es: &CVector, l: usize) -> Result<CVector> {
    let m = CMatrix::from_column_slice(es.len(), 1, es.as_slice());
    Ok(deterministic_currents(svd, &m, l)?.column(0).into_owned())
}

/// Orthonormal basis of the complement of `span{v_1..v_L}` in `C^M`,
/// an `M × (M - L)` matrix. With `L` equal to the rank of `G_S` it spans
/// the null space of `G_S`.
pub fn ambiguous_basis(svd: &ThinSvd, l: usize) -> Result<CMatrix> {
    let m = svd.v.nrows();
    if l >= m || l > svd.rank() {
        return Err(Error::Domain(format!("subspace dimension {l} leaves no ambiguous space in C^{m}")));
    }
    // Householder QR of [V_L | I]: the leading L columns of Q span V_L, the
    // rest complete an orthonormal basis.
    let mut aug = CMatrix::zeros(m, l + m);
    aug.columns_mut(0, l).copy_from(&svd.v.columns(0, l));
    for i in 0..m {
        aug[(i, l + i)] = Complex64::new(1.0, 0.0);
    }
    let q = aug.qr().q();
    Ok(q.columns(l, m - l).into_owned())
}

/// Deterministic currents plus the projector onto the ambiguous space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceDecomposition {
    pub l: usize,
    /// `M × Ni`.
    pub j_plus: CMatrix,
    /// `‖J⁺_l‖` per incidence.
    pub j_plus_norms: Vec<f64>,
    /// First `L` right singular vectors, `M × L`.
    pub v_l: CMatrix,
}

impl SubspaceDecomposition {
    pub fn new(svd: &ThinSvd, es: &CMatrix, l: usize) -> Result<Self> {
        let j_plus = deterministic_currents(svd, es, l)?;
        let j_plus_norms = j_plus.column_iter().map(|c| c.norm()).collect();
        Ok(Self { l, j_plus, j_plus_norms, v_l: svd.v.columns(0, l).into_owned() })
    }

    /// `(I - V_L V_Lᴴ) W`, the component of `W` in the ambiguous space.
    pub fn project_ambiguous(&self, w: &CMatrix) -> CMatrix {
        w - &self.v_l * (self.v_l.adjoint() * w)
    }

    /// Coefficients `α⁻ = V⁻ᴴ J⁻` of an ambiguous current in `basis`.
    pub fn coefficients(&self, basis: &CMatrix, j_minus: &CMatrix) -> CMatrix {
        basis.adjoint() * j_minus
    }
}

/// Starting point shared by SOM and SOM-Net.
#[derive(Debug, Clone, PartialEq)]
pub struct InitBundle {
    /// Back-propagation contrast, as produced by the contrast update.
    pub chi_bp: CVector,
    /// Permittivity of `chi_bp`, real part clamped to at least 1 and the
    /// imaginary part dropped unless the problem is lossy.
    pub eps_bp: PermittivityMap,
    /// Back-propagation currents `γ_l G_Sᴴ E^s_l`, `M × Ni`.
    pub bp_current: CMatrix,
    /// `E^i + G_D J^bp`, `M × Ni`.
    pub total: CMatrix,
    pub subspace: SubspaceDecomposition,
}

/// Back-propagation initialization for all incidences of `es` (`Nr × Ni`).
///
/// The scalar `γ_l = (G_S G_Sᴴ E)ᴴ E / ‖G_S G_Sᴴ E‖²` is the least-squares
/// fit of `γ G_S (G_Sᴴ E)` to `E`.
pub fn bp_init(ops: &OperatorSet, es: &CMatrix, l: usize, lossy: bool) -> Result<InitBundle> {
    if es.nrows() != ops.n_receivers() || es.ncols() != ops.n_sources() {
        return Err(Error::Dimension(format!(
            "E^s is {}x{}, expected {}x{}",
            es.nrows(),
            es.ncols(),
            ops.n_receivers(),
            ops.n_sources()
        )));
    }
    let back = ops.gs.adjoint() * es;
    let fwd = &ops.gs * &back;
    let mut bp_current = back;
    for c in 0..es.ncols() {
        let den = fwd.column(c).norm_squared();
        let gamma = if den > 0.0 { fwd.column(c).dotc(&es.column(c)) / den } else { Complex64::new(0.0, 0.0) };
        for z in bp_current.column_mut(c).iter_mut() {
            *z *= gamma;
        }
    }
    let total = &ops.incident + ops.gd.apply(&bp_current);
    let (chi_bp, _) = crate::som::update_contrast(&total, &bp_current, &vec![1.0; es.ncols()])?;
    let eps_bp = clamp_for_input(&permittivity(ops, &chi_bp), lossy);
    let subspace = SubspaceDecomposition::new(ops.svd()?, es, l)?;
    Ok(InitBundle { chi_bp, eps_bp, bp_current, total, subspace })
}

/// `εr = 1 + i (η0/k0) χ` on the grid of `ops`.
pub fn permittivity(ops: &OperatorSet, chi: &CVector) -> PermittivityMap {
    let s = Complex64::new(0.0, ops.eta0 / ops.k0);
    PermittivityMap { n: ops.grid.n, values: chi.iter().map(|&c| 1.0 + s * c).collect() }
}

/// `χ = -i (k0/η0)(εr - 1)` on the grid of `ops`.
pub fn contrast(ops: &OperatorSet, eps: &PermittivityMap) -> CVector {
    let s = Complex64::new(0.0, -ops.k0 / ops.eta0);
    CVector::from_iterator(eps.values.len(), eps.values.iter().map(|&e| s * (e - 1.0)))
}

fn clamp_for_input(eps: &PermittivityMap, lossy: bool) -> PermittivityMap {
    PermittivityMap {
        n: eps.n,
        values: eps
            .values
            .iter()
            .map(|v| Complex64::new(v.re.max(1.0), if lossy { v.im } else { 0.0 }))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemConfig;
    use crate::linalg::fro;
    use rand::{Rng, SeedableRng};

    fn random(n: usize, k: usize, seed: u64) -> CMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        CMatrix::from_fn(n, k, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn svd_is_sorted_and_reconstructs() {
        let a = random(6, 20, 1);
        let s = thin_svd(&a).unwrap();
        assert_eq!(s.rank(), 6);
        assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        assert!(fro(&(s.reconstruct() - &a)) / fro(&a) < 1e-12);
        let eye = CMatrix::identity(6, 6);
        assert!(fro(&(s.u.adjoint() * &s.u - &eye)) < 1e-12);
        assert!(fro(&(s.v.adjoint() * &s.v - &eye)) < 1e-12);
    }

    #[test]
    fn single_triplet_inverts_to_v1() {
        let s = thin_svd(&random(5, 12, 2)).unwrap();
        let es = s.u.column(0) * Complex64::new(s.sigma[0], 0.0);
        let j = deterministic_current(&s, &es.into_owned(), 3).unwrap();
        assert!((j - s.v.column(0)).norm() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let mut a = random(4, 10, 3);
        let r0 = a.row(0).into_owned();
        a.set_row(3, &(r0 * Complex64::new(2.0, 0.0)));
        let s = thin_svd(&a).unwrap();
        let es = random(4, 1, 4);
        assert!(matches!(deterministic_currents(&s, &es, 4), Err(Error::RankDeficient { index: 4, .. })));
        assert!(deterministic_currents(&s, &es, 3).is_ok());
        assert!(deterministic_currents(&s, &es, 0).is_err());
    }

    #[test]
    fn projector_matches_explicit_basis() {
        let a = random(5, 16, 5);
        let s = thin_svd(&a).unwrap();
        let es = random(5, 2, 6);
        let d = SubspaceDecomposition::new(&s, &es, 3).unwrap();
        let vm = ambiguous_basis(&s, 3).unwrap();
        assert_eq!(vm.shape(), (16, 13));
        let w = random(16, 2, 7);
        let p = d.project_ambiguous(&w);
        let explicit = &vm * (vm.adjoint() * &w);
        assert!(fro(&(p - explicit)) < 1e-12);
    }

    #[test]
    fn empty_field_gives_background() {
        let cfg = ProblemConfig { inv_grid: 8, ..ProblemConfig::desk() };
        let ops = OperatorSet::inversion(&cfg).unwrap();
        let es = CMatrix::zeros(16, 8);
        let init = bp_init(&ops, &es, 7, false).unwrap();
        assert!(init.chi_bp.iter().all(|z| z.norm() == 0.0));
        assert!(init.eps_bp.values.iter().all(|z| *z == Complex64::new(1.0, 0.0)));
    }
}
