use isp_core::config::{PermittivityMap, ProblemConfig};
use isp_core::data::shapes::{rasterize_circles, Circle};
use isp_core::operators::{simulate, OperatorSet};
use isp_core::som::{
    objective_parts, objective_weights, som_invert, som_objective, update_contrast, update_current_cg, write_history_csv,
    SomConfig, SomState,
};
use isp_core::spectral::{ambiguous_basis, bp_init, contrast, SubspaceDecomposition};
use isp_core::{CMatrix, CVector, Complex64};

struct Case {
    ops: OperatorSet,
    es: CMatrix,
    chi: CVector,
    sub: SubspaceDecomposition,
}

fn case(n: usize, lossy: bool) -> Case {
    let ops = OperatorSet::inversion(&ProblemConfig { inv_grid: n, ..ProblemConfig::desk() }).unwrap();
    let im = if lossy { 0.6 } else { 0.0 };
    let circles = [Circle { cx: 0.2, cy: -0.15, radius: 0.4, eps: Complex64::new(1.9, im) }];
    let chi = contrast(&ops, &rasterize_circles(&circles, &ops.grid, 4));
    let es = simulate(&ops, &chi).unwrap().scattered;
    let sub = SubspaceDecomposition::new(ops.svd().unwrap(), &es, 7).unwrap();
    Case { ops, es, chi, sub }
}

/// Straightforward evaluation of the objective, one cell at a time.
fn brute_objective(c: &Case, current: &CMatrix, chi: &CVector) -> f64 {
    let (m, ni, nr) = (c.ops.n_cells(), c.es.ncols(), c.es.nrows());
    let mut total = 0.0;
    for l in 0..ni {
        let (mut rd, mut es2) = (0.0, 0.0);
        for q in 0..nr {
            let mut pred = Complex64::new(0.0, 0.0);
            for k in 0..m {
                pred += c.ops.gs[(q, k)] * current[(k, l)];
            }
            rd += (pred - c.es[(q, l)]).norm_sqr();
            es2 += c.es[(q, l)].norm_sqr();
        }
        let (mut rs, mut jp2) = (0.0, 0.0);
        for i in 0..m {
            let mut et = c.ops.incident[(i, l)];
            for k in 0..m {
                et += c.ops.gd.get(i, k) * current[(k, l)];
            }
            rs += (current[(i, l)] - chi[i] * et).norm_sqr();
            jp2 += c.sub.j_plus[(i, l)].norm_sqr();
        }
        total += rd / es2 + rs / jp2;
    }
    total
}

/// Minimizer of the frozen-contrast quadratic from the dense normal equations
/// in the explicit ambiguous basis.
fn dense_minimizer(c: &Case, chi: &CVector) -> (CMatrix, f64) {
    let vm = ambiguous_basis(c.ops.svd().unwrap(), c.sub.l).unwrap();
    let (wd, ws) = objective_weights(&c.es, &c.sub);
    let a = CMatrix::from_fn(c.ops.n_cells(), c.ops.n_cells(), |i, k| {
        let delta = if i == k { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
        delta - chi[i] * c.ops.gd.get(i, k)
    });
    let (ad, as_) = (&c.ops.gs * &vm, &a * &vm);
    let mut j_minus = CMatrix::zeros(c.ops.n_cells(), c.es.ncols());
    for l in 0..c.es.ncols() {
        let jp = c.sub.j_plus.column(l);
        let bd = c.es.column(l) - &c.ops.gs * jp;
        let bs = chi.component_mul(&c.ops.incident.column(l)) - &a * jp;
        let lhs = ad.adjoint() * &ad * Complex64::from(wd[l]) + as_.adjoint() * &as_ * Complex64::from(ws[l]);
        let rhs = ad.adjoint() * bd * Complex64::from(wd[l]) + as_.adjoint() * bs * Complex64::from(ws[l]);
        let alpha = lhs.lu().solve(&rhs).unwrap();
        j_minus.set_column(l, &(&vm * alpha));
    }
    let current = &c.sub.j_plus + &j_minus;
    let phi = objective_parts(&c.ops, &c.es, &c.sub, &current, chi).total();
    (j_minus, phi)
}

fn rough_contrast(c: &Case) -> CVector {
    c.chi.map(|z| z * 0.7 + Complex64::new(0.0, -1e-3))
}

#[test]
fn objective_matches_brute_force() {
    let c = case(8, true);
    let chi = rough_contrast(&c);
    let current = CMatrix::from_fn(64, c.es.ncols(), |i, l| Complex64::new((i + l) as f64 * 1e-4, 1e-4 * (i as f64).sin()));
    let fast = objective_parts(&c.ops, &c.es, &c.sub, &current, &chi).total();
    let slow = brute_objective(&c, &current, &chi);
    assert!((fast - slow).abs() < 1e-12 * slow.max(1.0), "{fast} vs {slow}");
}

#[test]
fn objective_limits() {
    let c = case(8, false);
    let sol = simulate(&c.ops, &c.chi).unwrap();
    let exact = objective_parts(&c.ops, &c.es, &c.sub, &sol.current, &c.chi).total();
    assert!(exact < 1e-16, "{exact:e}");
    let zero = objective_parts(&c.ops, &c.es, &c.sub, &CMatrix::zeros(64, c.es.ncols()), &CVector::zeros(64)).total();
    assert!((zero - c.es.ncols() as f64).abs() < 1e-12);
}

#[test]
fn fifty_cg_steps_reach_the_dense_optimum() {
    let c = case(12, false);
    let chi = rough_contrast(&c);
    let (_, optimum) = dense_minimizer(&c, &chi);
    let mut state = SomState::new(&c.ops, &c.sub, chi);
    let start = som_objective(&state, &c.ops, &c.es, &c.sub);
    update_current_cg(&mut state, &c.ops, &c.es, &c.sub, 50);
    let reached = som_objective(&state, &c.ops, &c.es, &c.sub);
    assert!(optimum < start);
    assert!((reached - optimum).abs() < 1e-6, "CG {reached}, dense {optimum}");
}

#[test]
fn the_minimizer_is_stationary() {
    let c = case(12, false);
    let chi = rough_contrast(&c);
    let (j_minus, optimum) = dense_minimizer(&c, &chi);
    let mut state = SomState::new(&c.ops, &c.sub, chi);
    state.set_ambiguous(&c.ops, &c.sub, j_minus);
    let before = som_objective(&state, &c.ops, &c.es, &c.sub);
    update_current_cg(&mut state, &c.ops, &c.es, &c.sub, 3);
    let after = som_objective(&state, &c.ops, &c.es, &c.sub);
    assert!((before - optimum).abs() < 1e-12 * optimum.max(1.0), "{before} vs {optimum}");
    assert!((after - before).abs() < 1e-10 * before.max(1.0), "{after} vs {before}");
}

#[test]
fn first_cg_step_is_an_exact_line_search_along_the_gradient() {
    let c = case(8, false);
    let chi = rough_contrast(&c);
    let mut state = SomState::new(&c.ops, &c.sub, chi.clone());
    update_current_cg(&mut state, &c.ops, &c.es, &c.sub, 1);
    // dense oracle: g = P⊥ (w_d G_Sᴴ r_d + w_s Aᴴ r_s), then the complex step
    // t minimizing the quadratic along -g
    let (wd, ws) = objective_weights(&c.es, &c.sub);
    let m = c.ops.n_cells();
    let a = CMatrix::from_fn(m, m, |i, k| {
        let delta = if i == k { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
        delta - chi[i] * c.ops.gd.get(i, k)
    });
    for l in 0..c.es.ncols() {
        let jp = c.sub.j_plus.column(l).into_owned();
        let rd = &c.ops.gs * &jp - c.es.column(l);
        let rs = &a * &jp - chi.component_mul(&c.ops.incident.column(l));
        let g = c.ops.gs.adjoint() * &rd * Complex64::from(wd[l]) + a.adjoint() * &rs * Complex64::from(ws[l]);
        let g = c.sub.project_ambiguous(&CMatrix::from_column_slice(m, 1, g.as_slice()));
        let d = -g.column(0);
        let (qd, qs) = (&c.ops.gs * &d, &a * &d);
        let t = -(qd.dotc(&rd) * wd[l] + qs.dotc(&rs) * ws[l]) / (wd[l] * qd.norm_squared() + ws[l] * qs.norm_squared());
        let want = &d * t;
        let err = (state.j_minus.column(l) - &want).norm() / want.norm();
        assert!(err < 1e-9, "incidence {l}: {err:e}");
    }
}

#[test]
fn inversion_is_monotone_and_keeps_the_decomposition() {
    let c = case(12, false);
    let init = bp_init(&c.ops, &c.es, 7, false).unwrap();
    let res = som_invert(&c.es, &c.ops, &init, &SomConfig { iterations: 15, cg_steps: 2 }, false, None).unwrap();
    assert_eq!(res.history.len(), 16);
    for w in res.history.windows(2) {
        assert!(w[1].objective <= w[0].objective + 1e-8, "{} -> {}", w[0].objective, w[1].objective);
    }
    let recon = &init.subspace.j_plus + &res.state.j_minus - &res.state.current;
    assert!(recon.norm() < 1e-10 * res.state.current.norm());
    let leak = init.subspace.v_l.adjoint() * &res.state.j_minus;
    assert!(leak.norm() < 1e-10 * res.state.j_minus.norm().max(1e-300));
    assert!(res.eps.values.iter().all(|e| e.im == 0.0));
    let mut csv = Vec::new();
    write_history_csv(&mut csv, &res.history).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 17);
    assert!(text.starts_with("iteration,objective,data_residual,state_residual,rmse,fallbacks"));
}

#[test]
fn lossy_inversion_is_monotone() {
    let c = case(10, true);
    let init = bp_init(&c.ops, &c.es, 7, true).unwrap();
    let res = som_invert(&c.es, &c.ops, &init, &SomConfig { iterations: 10, cg_steps: 2 }, true, None).unwrap();
    for w in res.history.windows(2) {
        assert!(w[1].objective <= w[0].objective + 1e-8);
    }
}

#[test]
fn zero_field_gives_vacuum() {
    let c = case(8, false);
    let es = CMatrix::zeros(c.es.nrows(), c.es.ncols());
    let init = bp_init(&c.ops, &es, 7, false).unwrap();
    let truth = PermittivityMap::vacuum(8);
    let res = som_invert(&es, &c.ops, &init, &SomConfig { iterations: 3, cg_steps: 2 }, false, Some(&truth)).unwrap();
    assert!(res.eps.values.iter().all(|e| (e - 1.0).norm() < 1e-12));
    assert!(res.history.last().unwrap().rmse.unwrap() < 1e-12);
}

#[test]
fn contrast_update_single_cell() {
    let e = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    let j = CMatrix::from_element(1, 1, Complex64::new(0.5, 0.0));
    let (chi, flagged) = update_contrast(&e, &j, &[1.0]).unwrap();
    assert_eq!(chi[0], Complex64::new(0.5, 0.0));
    assert!(flagged.is_empty());
    let (chi, flagged) = update_contrast(&CMatrix::zeros(1, 1), &j, &[1.0]).unwrap();
    assert_eq!((chi[0], flagged), (Complex64::new(0.0, 0.0), vec![0]));
}

#[test]
fn contrast_update_on_a_16_grid() {
    let c = case(16, true);
    let sol = simulate(&c.ops, &c.chi).unwrap();
    let (wd, _) = objective_weights(&c.es, &c.sub);
    let (chi, _) = update_contrast(&sol.total, &sol.current, &wd).unwrap();
    let err = (0..chi.len()).map(|i| (chi[i] - c.chi[i]).norm()).fold(0.0, f64::max);
    assert!(err < 1e-12 * c.chi.camax(), "{err:e}");
}

