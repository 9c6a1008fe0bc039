//! Subspace-based optimization.
//!
//! The current of incidence `l` is `J_l = J⁺_l + J⁻_l` with `J⁻_l` confined to
//! the ambiguous space. For a fixed contrast the objective
//!
//! ```text
//! Δ = Σ_l ‖G_S J_l - E^s_l‖² / ‖E^s_l‖²  +  ‖J_l - χ ⊙ (E^i_l + G_D J_l)‖² / ‖J⁺_l‖²
//! ```
//!
//! is a complex quadratic in `J⁻`, minimized by conjugate gradients with an
//! exact line search. For fixed currents the state term is minimized cell by
//! cell in closed form ([`update_contrast`]), so the alternation never
//! increases `Δ`.

use std::io::Write;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::PermittivityMap;
use crate::error::{Error, Result};
use crate::operators::OperatorSet;
use crate::spectral::{permittivity, InitBundle, SubspaceDecomposition};
use crate::{CMatrix, CVector};

/// Iteration counts for [`som_invert`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SomConfig {
    /// Outer alternations.
    pub iterations: usize,
    /// Conjugate-gradient steps on the currents per alternation.
    pub cg_steps: usize,
}

impl Default for SomConfig {
    fn default() -> Self {
        Self { iterations: 50, cg_steps: 2 }
    }
}

/// Current and contrast estimates during the alternation.
#[derive(Debug, Clone, PartialEq)]
pub struct SomState {
    /// Ambiguous currents `J⁻ = V⁻ α⁻`, `M × Ni`.
    pub j_minus: CMatrix,
    /// `J⁺ + J⁻`.
    pub current: CMatrix,
    /// `E^i + G_D J`.
    pub total: CMatrix,
    pub chi: CVector,
    pub iteration: usize,
}

impl SomState {
    /// `J = J⁺`, `J⁻ = 0` and the given contrast.
    pub fn new(ops: &OperatorSet, sub: &SubspaceDecomposition, chi: CVector) -> Self {
        let current = sub.j_plus.clone();
        let total = &ops.incident + ops.gd.apply(&current);
        Self { j_minus: CMatrix::zeros(current.nrows(), current.ncols()), current, total, chi, iteration: 0 }
    }

    /// Replaces `J⁻` and refreshes the current and total field.
    pub fn set_ambiguous(&mut self, ops: &OperatorSet, sub: &SubspaceDecomposition, j_minus: CMatrix) {
        self.current = &sub.j_plus + &j_minus;
        self.total = &ops.incident + ops.gd.apply(&self.current);
        self.j_minus = j_minus;
    }
}

/// Per-incidence weights `(1/‖E^s_l‖², 1/‖J⁺_l‖²)`; a zero norm gets weight 1.
pub fn objective_weights(es: &CMatrix, sub: &SubspaceDecomposition) -> (Vec<f64>, Vec<f64>) {
    let inv = |x: f64| if x > 0.0 { 1.0 / x } else { 1.0 };
    let wd = es.column_iter().map(|c| inv(c.norm_squared())).collect();
    let ws = sub.j_plus_norms.iter().map(|n| inv(n * n)).collect();
    (wd, ws)
}

/// Data and state parts of the objective, already weighted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub data: f64,
    pub state: f64,
}

impl ObjectiveParts {
    pub fn total(&self) -> f64 {
        self.data + self.state
    }
}

/// Evaluates both terms of the objective on an explicit state.
pub fn objective_parts(
    ops: &OperatorSet,
    es: &CMatrix,
    sub: &SubspaceDecomposition,
    current: &CMatrix,
    chi: &CVector,
) -> ObjectiveParts {
    let (wd, ws) = objective_weights(es, sub);
    let rd = &ops.gs * current - es;
    let total = &ops.incident + ops.gd.apply(current);
    let mut data = 0.0;
    let mut state = 0.0;
    for l in 0..current.ncols() {
        data += wd[l] * rd.column(l).norm_squared();
        let s: f64 = (0..current.nrows()).map(|m| (current[(m, l)] - chi[m] * total[(m, l)]).norm_sqr()).sum();
        state += ws[l] * s;
    }
    ObjectiveParts { data, state }
}

/// The objective `Δ` at `state`.
pub fn som_objective(state: &SomState, ops: &OperatorSet, es: &CMatrix, sub: &SubspaceDecomposition) -> f64 {
    objective_parts(ops, es, sub, &state.current, &state.chi).total()
}

/// `A X = X - χ ⊙ (G_D X)`, columnwise.
fn state_operator(ops: &OperatorSet, chi: &CVector, x: &CMatrix) -> CMatrix {
    let mut y = ops.gd.apply(x);
    for c in 0..y.ncols() {
        for m in 0..y.nrows() {
            y[(m, c)] = x[(m, c)] - chi[m] * y[(m, c)];
        }
    }
    y
}

/// `Aᴴ Y = Y - G_Dᴴ (conj(χ) ⊙ Y)`.
fn state_adjoint(ops: &OperatorSet, chi: &CVector, y: &CMatrix) -> CMatrix {
    let mut cy = y.clone();
    for c in 0..cy.ncols() {
        for m in 0..cy.nrows() {
            cy[(m, c)] *= chi[m].conj();
        }
    }
    y - ops.gd.apply_adjoint(&cy)
}

fn col_dot(a: &CMatrix, b: &CMatrix, c: usize) -> Complex64 {
    a.column(c).dotc(&b.column(c))
}

/// What the last call to [`update_current_cg`] had to do.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CgReport {
    pub steps: usize,
    /// Steps where the conjugate direction was replaced by steepest descent.
    pub fallbacks: usize,
}

/// Advances `J⁻` by `n_cg` conjugate-gradient steps with `χ` frozen.
///
/// Each incidence is an independent quadratic; they are stepped together so
/// the operator products run as matrix-matrix products. Every call starts
/// from steepest descent.
pub fn update_current_cg(
    state: &mut SomState,
    ops: &OperatorSet,
    es: &CMatrix,
    sub: &SubspaceDecomposition,
    n_cg: usize,
) -> CgReport {
    let (wd, ws) = objective_weights(es, sub);
    let ni = es.ncols();
    let mut report = CgReport::default();
    let rhs_state = {
        let mut e = ops.incident.clone();
        for c in 0..ni {
            for m in 0..e.nrows() {
                e[(m, c)] *= state.chi[m];
            }
        }
        e
    };
    let mut rd = &ops.gs * &state.current - es;
    let mut rs = state_operator(ops, &state.chi, &state.current) - &rhs_state;
    let gradient = |rd: &CMatrix, rs: &CMatrix| {
        let mut gd = ops.gs.adjoint() * rd;
        let gs = state_adjoint(ops, &state.chi, rs);
        for c in 0..ni {
            for m in 0..gd.nrows() {
                gd[(m, c)] = wd[c] * gd[(m, c)] + ws[c] * gs[(m, c)];
            }
        }
        // a second pass: near a stationary point one projection leaves
        // rounding residue in span(V_L) as large as the ambiguous part
        sub.project_ambiguous(&sub.project_ambiguous(&gd))
    };
    let mut g = gradient(&rd, &rs);
    let mut dir = -g.clone();
    let mut j_minus = state.j_minus.clone();
    for step in 0..n_cg {
        let qd = &ops.gs * &dir;
        let qs = state_operator(ops, &state.chi, &dir);
        let mut moved = false;
        for c in 0..ni {
            let den = wd[c] * qd.column(c).norm_squared() + ws[c] * qs.column(c).norm_squared();
            if !(den > 0.0) {
                continue;
            }
            let t = -(col_dot(&qd, &rd, c) * wd[c] + col_dot(&qs, &rs, c) * ws[c]) / den;
            if t == Complex64::new(0.0, 0.0) {
                continue;
            }
            moved = true;
            for m in 0..j_minus.nrows() {
                j_minus[(m, c)] += t * dir[(m, c)];
            }
            for q in 0..rd.nrows() {
                rd[(q, c)] += t * qd[(q, c)];
            }
            for m in 0..rs.nrows() {
                rs[(m, c)] += t * qs[(m, c)];
            }
        }
        report.steps += 1;
        if !moved {
            break;
        }
        if step + 1 == n_cg {
            break;
        }
        let g_new = gradient(&rd, &rs);
        for c in 0..ni {
            let old = g.column(c).norm_squared();
            let beta = if old > 0.0 { (col_dot(&g_new, &g_new, c) - col_dot(&g, &g_new, c)).re / old } else { 0.0 };
            // Polak-Ribière+: a negative β means the conjugacy is lost
            let beta = if beta.is_finite() && beta >= 0.0 {
                beta
            } else {
                report.fallbacks += 1;
                0.0
            };
            let mut descent = Complex64::new(0.0, 0.0);
            for m in 0..dir.nrows() {
                dir[(m, c)] = -g_new[(m, c)] + beta * dir[(m, c)];
                descent += g_new[(m, c)].conj() * dir[(m, c)];
            }
            if descent.re >= 0.0 {
                report.fallbacks += 1;
                for m in 0..dir.nrows() {
                    dir[(m, c)] = -g_new[(m, c)];
                }
            }
        }
        g = g_new;
    }
    // the recursive updates can drift out of the ambiguous space by rounding
    let j_minus = sub.project_ambiguous(&j_minus);
    state.set_ambiguous(ops, sub, j_minus);
    report
}

/// Cell-wise contrast that best explains `J = χ ⊙ E^t` in the weighted
/// least-squares sense:
///
/// ```text
/// χ_m = Σ_l w_l conj(E^t_lm) J_lm / Σ_l w_l |E^t_lm|²
/// ```
///
/// Returns the contrast and the cells whose denominator fell below `1e-30`
/// (their contrast is set to zero).
pub fn update_contrast(total: &CMatrix, current: &CMatrix, weights: &[f64]) -> Result<(CVector, Vec<usize>)> {
    if total.shape() != current.shape() || weights.len() != total.ncols() {
        return Err(Error::Dimension(format!(
            "update_contrast: E^t {:?}, J {:?}, {} weights",
            total.shape(),
            current.shape(),
            weights.len()
        )));
    }
    let m = total.nrows();
    let mut chi = CVector::zeros(m);
    let mut flagged = Vec::new();
    for i in 0..m {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for (l, &w) in weights.iter().enumerate() {
            let e = total[(i, l)];
            num += w * e.conj() * current[(i, l)];
            den += w * e.norm_sqr();
        }
        if den < 1e-30 {
            flagged.push(i);
        } else {
            chi[i] = num / den;
        }
    }
    Ok((chi, flagged))
}

/// Restricts `χ` to lossless media (real `εr`), the constrained minimizer of
/// the state term since each cell's problem is a one-dimensional quadratic.
pub fn lossless_projection(chi: &CVector) -> CVector {
    chi.map(|c| Complex64::new(0.0, c.im))
}

/// One row of the iteration history.
#[derive(Debug, Clone, PartialEq)]
pub struct SomRecord {
    pub iteration: usize,
    pub objective: f64,
    pub data_residual: f64,
    pub state_residual: f64,
    pub rmse: Option<f64>,
    pub fallbacks: usize,
}

/// Result of [`som_invert`].
#[derive(Debug, Clone, PartialEq)]
pub struct SomResult {
    pub eps: PermittivityMap,
    pub state: SomState,
    pub history: Vec<SomRecord>,
}

/// Classical SOM from the back-propagation starting point.
///
/// `history[0]` is the starting objective; row `k` follows alternation `k`.
pub fn som_invert(
    es: &CMatrix,
    ops: &OperatorSet,
    init: &InitBundle,
    cfg: &SomConfig,
    lossy: bool,
    truth: Option<&PermittivityMap>,
) -> Result<SomResult> {
    let sub = &init.subspace;
    let mut state = SomState::new(ops, sub, init.chi_bp.clone());
    let (_, ws) = objective_weights(es, sub);
    let rmse = |s: &SomState| truth.map(|t| crate::data::rmse(&permittivity(ops, &s.chi), t));
    let record = |s: &SomState, fallbacks| {
        let p = objective_parts(ops, es, sub, &s.current, &s.chi);
        SomRecord {
            iteration: s.iteration,
            objective: p.total(),
            data_residual: p.data,
            state_residual: p.state,
            rmse: rmse(s),
            fallbacks,
        }
    };
    let mut history = vec![record(&state, 0)];
    for _ in 0..cfg.iterations {
        let rep = update_current_cg(&mut state, ops, es, sub, cfg.cg_steps);
        let (chi, _) = update_contrast(&state.total, &state.current, &ws)?;
        state.chi = if lossy { chi } else { lossless_projection(&chi) };
        state.iteration += 1;
        let row = record(&state, rep.fallbacks);
        if !row.objective.is_finite() {
            return Err(Error::Domain(format!("objective became {} at iteration {}", row.objective, state.iteration)));
        }
        history.push(row);
    }
    let mut eps = permittivity(ops, &state.chi);
    if !lossy {
        eps = eps.to_lossless();
    }
    Ok(SomResult { eps, state, history })
}

/// Writes the history as CSV with a header row.
pub fn write_history_csv<W: Write>(mut w: W, history: &[SomRecord]) -> Result<()> {
    writeln!(w, "iteration,objective,data_residual,state_residual,rmse,fallbacks")?;
    for r in history {
        let rmse = r.rmse.map(|v| format!("{v:.12e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{:.12e},{:.12e},{:.12e},{},{}",
            r.iteration, r.objective, r.data_residual, r.state_residual, rmse, r.fallbacks
        )?;
    }
    Ok(())
}
