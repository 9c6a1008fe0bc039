//! Method-of-moments discretization of the state and data equations.
//!
//! Cells are pulse basis functions with point matching at their centers.
//! Each square cell is replaced by the disc of equal area (radius
//! `a = h/√π`), for which the Green's function integrates in closed form:
//!
//! ```text
//! off-diagonal   G[m,n] = c · (iπ k0 a / 2) J1(k0 a) H0(k0 |r_m - r_n|)
//! diagonal       G[m,m] = c · ((iπ k0 a / 2) H1(k0 a) - 1)
//! ```
//!
//! With the current defined as `J = χ E` and `χ = -i (k0/η0)(εr - 1)`, the
//! remaining constant is `c = i η0 / k0`: it turns `G·J` back into
//! `k0² (εr - 1) ∫ g E` with the free-space Green's function
//! `g = (i/4) H0(k0 ρ)`.

use std::sync::OnceLock;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{incident_field_at, Grid, Point, ProblemConfig};
use crate::error::{Error, Result};
use crate::linalg::{bicgstab, fro, lu_solve, SolveStats, SplitMatrix};
use crate::spectral::ThinSvd;
use crate::{specialfn, CMatrix, CVector};

/// Discretized operators for one grid and one measurement geometry.
#[derive(Debug)]
pub struct OperatorSet {
    pub k0: f64,
    pub eta0: f64,
    pub grid: Grid,
    pub sources: Vec<Point>,
    pub receivers: Vec<Point>,
    /// `G_D`, `M × M`, symmetric.
    pub gd: SplitMatrix,
    /// `G_S`, `Nr × M`.
    pub gs: CMatrix,
    /// Incident fields, `M × Ni`.
    pub incident: CMatrix,
    svd: OnceLock<ThinSvd>,
}

/// Scale `c = i η0 / k0` tying the discrete operators to `J = χ E`.
pub fn kernel_scale(k0: f64, eta0: f64) -> Complex64 {
    Complex64::new(0.0, eta0 / k0)
}

/// Builds `G_D`, `G_S` and the incident fields of `config`'s sources.
pub fn build_operators(grid: &Grid, receivers: &[Point], config: &ProblemConfig) -> Result<OperatorSet> {
    build_operators_with_sources(grid, &config.sources()?, receivers, config.k0(), config.eta0())
}

/// Same as [`build_operators`] with explicit source positions and constants.
pub fn build_operators_with_sources(
    grid: &Grid,
    sources: &[Point],
    receivers: &[Point],
    k0: f64,
    eta0: f64,
) -> Result<OperatorSet> {
    let a = grid.equivalent_radius();
    let c = kernel_scale(k0, eta0);
    let i_half = Complex64::new(0.0, std::f64::consts::PI * k0 * a / 2.0);
    let off = c * i_half * specialfn::j1(k0 * a);
    let diag = c * (i_half * specialfn::h1(k0 * a) - 1.0);

    for (q, r) in receivers.iter().enumerate() {
        if grid.contains(*r) {
            return Err(Error::Geometry(format!("receiver {q} at ({}, {}) lies inside the DOI", r.x, r.y)));
        }
    }

    // The kernel depends only on the cell offset, so tabulate it once per
    // (|drow|, |dcol|).
    let n = grid.n;
    let h = grid.cell_side;
    let mut table = vec![Complex64::new(0.0, 0.0); n * n];
    for dr in 0..n {
        for dc in 0..n {
            table[dr * n + dc] = if dr == 0 && dc == 0 {
                diag
            } else {
                let rho = h * ((dr * dr + dc * dc) as f64).sqrt();
                off * specialfn::h0(k0 * rho)
            };
        }
    }
    let m = grid.len();
    let mut gd = SplitMatrix::zeros(m, m);
    for col in 0..m {
        let (cr, cc) = (col / n, col % n);
        for row in 0..m {
            let (rr, rc) = (row / n, row % n);
            let v = table[rr.abs_diff(cr) * n + rc.abs_diff(cc)];
            gd.re[(row, col)] = v.re;
            gd.im[(row, col)] = v.im;
        }
    }

    let mut gs = CMatrix::zeros(receivers.len(), m);
    for (q, r) in receivers.iter().enumerate() {
        for (k, cell) in grid.centers.iter().enumerate() {
            let rho = r.dist(*cell);
            if rho <= a {
                return Err(Error::Geometry(format!("receiver {q} coincides with cell {k}")));
            }
            gs[(q, k)] = off * specialfn::h0(k0 * rho);
        }
    }

    let mut incident = CMatrix::zeros(m, sources.len());
    for (l, s) in sources.iter().enumerate() {
        incident.set_column(l, &incident_field_at(k0, grid, *s)?);
    }

    Ok(OperatorSet {
        k0,
        eta0,
        grid: grid.clone(),
        sources: sources.to_vec(),
        receivers: receivers.to_vec(),
        gd,
        gs,
        incident,
        svd: OnceLock::new(),
    })
}

impl OperatorSet {
    /// Operators on the inversion grid of `config`.
    pub fn inversion(config: &ProblemConfig) -> Result<Self> {
        build_operators(&config.inv(), &config.receivers()?, config)
    }

    /// Operators on the simulation grid of `config`.
    pub fn simulation(config: &ProblemConfig) -> Result<Self> {
        build_operators(&config.sim(), &config.receivers()?, config)
    }

    pub fn n_cells(&self) -> usize {
        self.grid.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.receivers.len()
    }

    pub fn n_sources(&self) -> usize {
        self.sources.len()
    }

    /// Thin SVD of `G_S`, computed on first use and cached.
    pub fn svd(&self) -> Result<&ThinSvd> {
        if let Some(s) = self.svd.get() {
            return Ok(s);
        }
        let s = crate::spectral::thin_svd(&self.gs)?;
        Ok(self.svd.get_or_init(|| s))
    }
}

/// Incident, total and scattered fields plus currents for every incidence.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBundle {
    /// `M × Ni`.
    pub incident: CMatrix,
    /// `M × Ni`.
    pub total: CMatrix,
    /// `M × Ni`.
    pub current: CMatrix,
    /// `Nr × Ni`.
    pub scattered: CMatrix,
}

/// Linear solver used for the state equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ForwardSolver {
    /// LU factorization of the system restricted to the scatterer support.
    Direct,
    /// Block BiCGStab on the same restricted system.
    Iterative { tol: f64, max_iter: usize },
    /// Direct below `DIRECT_LIMIT` unknowns, iterative above.
    Auto,
}

/// Largest support solved by LU under [`ForwardSolver::Auto`].
pub const DIRECT_LIMIT: usize = 400;

/// Solution of the state equation for a block of incident fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSolution {
    pub total: CMatrix,
    pub current: CMatrix,
    /// `‖(I - G_D diag χ) E^t - E^i‖ / ‖E^i‖`.
    pub residual: f64,
    pub stats: Option<SolveStats>,
}

/// Solves `(I - G_D diag(χ)) E^t = E^i` for every column of `e_inc`.
pub fn forward_solve(ops: &OperatorSet, chi: &CVector, e_inc: &CMatrix) -> Result<ForwardSolution> {
    forward_solve_with(ops, chi, e_inc, ForwardSolver::Auto)
}

/// [`forward_solve`] with an explicit solver.
///
/// The current vanishes wherever `χ = 0`, so the unknowns are the currents on
/// the support `S` of `χ`: `(I - diag(χ_S) G_D[S,S]) J_S = χ_S E^i_S`. The
/// total field then follows from `E^t = E^i + G_D J`.
pub fn forward_solve_with(
    ops: &OperatorSet,
    chi: &CVector,
    e_inc: &CMatrix,
    solver: ForwardSolver,
) -> Result<ForwardSolution> {
    let m = ops.n_cells();
    if chi.len() != m || e_inc.nrows() != m {
        return Err(Error::Dimension(format!(
            "forward_solve: {} cells, χ has {}, E^i has {} rows",
            m,
            chi.len(),
            e_inc.nrows()
        )));
    }
    if chi.iter().chain(e_inc.iter()).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Domain("forward_solve: non-finite input".into()));
    }
    let k = e_inc.ncols();
    let support: Vec<usize> = (0..m).filter(|&i| chi[i] != Complex64::new(0.0, 0.0)).collect();
    let mut current = CMatrix::zeros(m, k);
    let mut stats = None;
    if !support.is_empty() {
        let s = support.len();
        let sub = ops.gd.select(&support, &support);
        let rhs = CMatrix::from_fn(s, k, |i, c| chi[support[i]] * e_inc[(support[i], c)]);
        let chi_s: Vec<Complex64> = support.iter().map(|&i| chi[i]).collect();
        let use_direct = match solver {
            ForwardSolver::Direct => true,
            ForwardSolver::Iterative { .. } => false,
            ForwardSolver::Auto => s <= DIRECT_LIMIT,
        };
        let js = if use_direct {
            let mut a = sub.to_complex();
            for i in 0..s {
                for j in 0..s {
                    a[(i, j)] *= -chi_s[i];
                }
                a[(i, i)] += 1.0;
            }
            lu_solve(a, &rhs)?
        } else {
            let (tol, max_iter) = match solver {
                ForwardSolver::Iterative { tol, max_iter } => (tol, max_iter),
                _ => (1e-13, 1000),
            };
            let (x, st) = bicgstab(
                |v| {
                    let mut y = sub.apply(v);
                    for c in 0..y.ncols() {
                        for i in 0..s {
                            y[(i, c)] = v[(i, c)] - chi_s[i] * y[(i, c)];
                        }
                    }
                    y
                },
                &rhs,
                tol,
                max_iter,
            )?;
            stats = Some(st);
            x
        };
        for (i, &cell) in support.iter().enumerate() {
            for c in 0..k {
                current[(cell, c)] = js[(i, c)];
            }
        }
    }
    let total = e_inc + ops.gd.apply(&current);
    let residual = state_residual(ops, chi, e_inc, &total);
    Ok(ForwardSolution { total, current, residual, stats })
}

/// `‖(I - G_D diag χ) E^t - E^i‖_F / ‖E^i‖_F`.
pub fn state_residual(ops: &OperatorSet, chi: &CVector, e_inc: &CMatrix, total: &CMatrix) -> f64 {
    let mut chi_e = total.clone();
    for c in 0..chi_e.ncols() {
        for i in 0..chi_e.nrows() {
            chi_e[(i, c)] *= chi[i];
        }
    }
    let r = total - ops.gd.apply(&chi_e) - e_inc;
    let denom = fro(e_inc);
    if denom == 0.0 {
        fro(&r)
    } else {
        fro(&r) / denom
    }
}

/// `G_S · J` for a block of currents (`M × k`).
pub fn scattered_field(ops: &OperatorSet, current: &CMatrix) -> Result<CMatrix> {
    if current.nrows() != ops.n_cells() {
        return Err(Error::Dimension(format!(
            "scattered_field: current has {} rows, grid has {} cells",
            current.nrows(),
            ops.n_cells()
        )));
    }
    Ok(&ops.gs * current)
}

/// Forward problem for all of `ops`' sources: fields, currents and `E^s`.
pub fn simulate(ops: &OperatorSet, chi: &CVector) -> Result<FieldBundle> {
    let sol = forward_solve(ops, chi, &ops.incident)?;
    if sol.residual > 1e-10 {
        return Err(Error::Convergence { iterations: sol.stats.map_or(0, |s| s.iterations), residual: sol.residual });
    }
    let scattered = scattered_field(ops, &sol.current)?;
    Ok(FieldBundle { incident: ops.incident.clone(), total: sol.total, current: sol.current, scattered })
}

/// Adds complex white Gaussian noise with `‖n‖_F / ‖E^s‖_F = level`.
pub fn add_noise(es: &CMatrix, level: f64, seed: u64) -> Result<CMatrix> {
    if !(level >= 0.0) {
        return Err(Error::Domain(format!("noise level {level} must be non-negative")));
    }
    if level == 0.0 {
        return Ok(es.clone());
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = CMatrix::from_fn(es.nrows(), es.ncols(), |_, _| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        Complex64::new(re, im)
    });
    let scale = level * fro(es) / fro(&noise);
    Ok(es + noise * Complex64::new(scale, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{contrast_from_permittivity, PermittivityMap};
    use rand::{Rng, SeedableRng};

    fn small(n: usize) -> (ProblemConfig, OperatorSet) {
        let cfg = ProblemConfig { inv_grid: n, ..ProblemConfig::desk() };
        let ops = OperatorSet::inversion(&cfg).unwrap();
        (cfg, ops)
    }

    fn random_chi(cfg: &ProblemConfig, n: usize, seed: u64) -> CVector {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..n * n).map(|_| 1.0 + rng.random_range(0.0..1.0)).collect();
        contrast_from_permittivity(&PermittivityMap::from_real(n, &vals), cfg)
    }

    #[test]
    fn gd_is_exactly_symmetric() {
        let (_, ops) = small(8);
        let g = ops.gd.to_complex();
        let asym = (&g - g.transpose()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(asym < 1e-12);
    }

    #[test]
    fn equidistant_pairs_share_gs_entries() {
        let (_, ops) = small(8);
        // receiver 0 sits on the +x axis: cells mirrored in y are equidistant
        let n = 8;
        for row in 0..n / 2 {
            for col in 0..n {
                let a = ops.gs[(0, row * n + col)];
                let b = ops.gs[(0, (n - 1 - row) * n + col)];
                assert!((a - b).norm() <= 1e-15 * a.norm());
            }
        }
    }

    #[test]
    fn receiver_inside_doi_is_rejected() {
        let cfg = ProblemConfig::desk();
        let grid = Grid::new(4, 2.0);
        let r = [Point::new(0.1, 0.1)];
        assert!(matches!(build_operators(&grid, &r, &cfg), Err(Error::Geometry(_))));
    }

    #[test]
    fn empty_scatterer_leaves_incident_field() {
        let (_, ops) = small(8);
        let chi = CVector::zeros(64);
        let sol = forward_solve(&ops, &chi, &ops.incident).unwrap();
        assert_eq!(sol.total, ops.incident);
        assert!(sol.current.iter().all(|z| z.norm() == 0.0));
        let fb = simulate(&ops, &chi).unwrap();
        assert!(fb.scattered.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn residual_is_tiny_for_random_contrast() {
        let (cfg, ops) = small(10);
        let chi = random_chi(&cfg, 10, 3);
        for solver in [ForwardSolver::Direct, ForwardSolver::Iterative { tol: 1e-13, max_iter: 500 }] {
            let sol = forward_solve_with(&ops, &chi, &ops.incident, solver).unwrap();
            let r = &sol.total - &ops.incident - ops.gd.apply(&sol.current);
            assert!(fro(&r) / fro(&ops.incident) < 1e-10);
            assert!(sol.residual < 1e-10, "{solver:?}: {}", sol.residual);
        }
    }

    #[test]
    fn iterative_agrees_with_direct_on_16x16() {
        let (cfg, ops) = small(16);
        let chi = random_chi(&cfg, 16, 4);
        let d = forward_solve_with(&ops, &chi, &ops.incident, ForwardSolver::Direct).unwrap();
        let it = forward_solve_with(&ops, &chi, &ops.incident, ForwardSolver::Iterative { tol: 1e-13, max_iter: 1000 })
            .unwrap();
        assert!(fro(&(&d.total - &it.total)) / fro(&d.total) < 1e-8);
    }

    #[test]
    fn scattered_field_is_linear() {
        let (_, ops) = small(6);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut rand_mat =
            || CMatrix::from_fn(36, 2, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let (a, b) = (rand_mat(), rand_mat());
        let lhs = scattered_field(&ops, &(&a + &b)).unwrap();
        let rhs = scattered_field(&ops, &a).unwrap() + scattered_field(&ops, &b).unwrap();
        assert!(fro(&(lhs - rhs)) < 1e-12 * (1.0 + fro(&scattered_field(&ops, &a).unwrap())));
        assert!(scattered_field(&ops, &CMatrix::zeros(36, 1)).unwrap().iter().all(|z| z.norm() == 0.0));
        assert!(matches!(scattered_field(&ops, &CMatrix::zeros(5, 1)), Err(Error::Dimension(_))));
    }

    #[test]
    fn noise_has_requested_level() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let es = CMatrix::from_fn(16, 8, |_, _| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        assert_eq!(add_noise(&es, 0.0, 3).unwrap(), es);
        let noisy = add_noise(&es, 0.1, 3).unwrap();
        let ratio = fro(&(&noisy - &es)) / fro(&es);
        assert!((ratio - 0.1).abs() < 1e-12);
        assert_eq!(noisy, add_noise(&es, 0.1, 3).unwrap());
        assert_ne!(noisy, add_noise(&es, 0.1, 4).unwrap());
        assert!(add_noise(&es, -0.1, 3).is_err());
    }
}
