//! The unrolled subspace network.
//!
//! Stage `k` refines the currents with a small residual CNN `S_θk` that sees
//! the current and the previous permittivity estimate, then maps the refined
//! currents back to a permittivity with the same closed-form layer SOM uses:
//!
//! ```text
//! J_0 = J⁺,  ε_0 = ε^bp
//! J_k = J_{k-1} + S_θk(J_{k-1}, ε_{k-1})
//! E^t = E^i + G_D J_k,  χ = Σ_l w_l conj(E^t_l) J_l / Σ_l w_l |E^t_l|²,  ε_k = 1 + i (η0/k0) χ
//! J^pre = J_K,  E^s,pre = G_S J^pre,  ε^pre = ε_K
//! ```
//!
//! with `w_l = 1/‖J⁺_l‖²`. The incidences of one scatterer form the batch.
//! Currents are laid out as `[Ni, M]` tensors (one row per incidence), so the
//! operators act from the right as `J G_Dᵀ` and `J G_Sᵀ`.

mod model;
mod train;

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::complex::CVar;
use crate::autodiff::{Graph, Tensor, Var};
use crate::config::PermittivityMap;
use crate::data::metrics::{gaussian_taps, ssim_constants, ssim_window_size, SSIM_SIGMA};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::operators::{add_noise, OperatorSet};
use crate::spectral::bp_init;
use crate::CMatrix;

pub use model::{ConvLayer, SomNetModel, StageBlock};
pub use train::{evaluate, train, TrainRecord, TrainReport};

/// Architecture, loss and optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Weight of the SSIM term.
    pub lambda1: f64,
    /// Weight of the permittivity MSE term.
    pub lambda2: f64,
    /// Feature channels of the hidden convolutions.
    pub hidden: usize,
    /// Convolutions per stage block.
    pub layers: usize,
    /// Kernel side (odd).
    pub kernel: usize,
    /// Divide the current and field terms by the size of their references.
    pub normalize_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda1: 2.0,
            lambda2: 2.0,
            hidden: 16,
            layers: 3,
            kernel: 3,
            normalize_loss: false,
            seed: 1,
        }
    }
}

/// Row-major `[cols, rows]` tensors of the transpose of `m`.
///
/// nalgebra stores column-major, so the buffer of `m` read row-major is
/// exactly `mᵀ`.
pub fn transposed_parts(m: &CMatrix) -> (Tensor, Tensor) {
    let shape = vec![m.ncols(), m.nrows()];
    let re = m.iter().map(|z| z.re).collect();
    let im = m.iter().map(|z| z.im).collect();
    (Tensor { shape: shape.clone(), data: re }, Tensor { shape, data: im })
}

/// Inverse of [`transposed_parts`].
pub fn from_transposed_parts(re: &Tensor, im: &Tensor) -> CMatrix {
    let (cols, rows) = (re.shape[0], re.shape[1]);
    CMatrix::from_iterator(rows, cols, re.data.iter().zip(&im.data).map(|(&a, &b)| crate::Complex64::new(a, b)))
}

/// Operators of one inversion grid as shared tensors.
#[derive(Debug, Clone)]
pub struct Physics {
    pub n: usize,
    pub m: usize,
    pub ni: usize,
    pub nr: usize,
    /// `η0 / k0`.
    pub eps_scale: f64,
    gd: (Rc<Tensor>, Rc<Tensor>),
    gs_t: (Rc<Tensor>, Rc<Tensor>),
    e_inc: (Rc<Tensor>, Rc<Tensor>),
}

impl Physics {
    pub fn new(ops: &OperatorSet) -> Self {
        let m = ops.n_cells();
        // G_D is symmetric, so its column-major buffer is G_Dᵀ row-major.
        let gd_re = Tensor { shape: vec![m, m], data: ops.gd.re.as_slice().to_vec() };
        let gd_im = Tensor { shape: vec![m, m], data: ops.gd.im.as_slice().to_vec() };
        let (gs_re, gs_im) = transposed_parts(&ops.gs);
        let (ei_re, ei_im) = transposed_parts(&ops.incident);
        Self {
            n: ops.grid.n,
            m,
            ni: ops.n_sources(),
            nr: ops.n_receivers(),
            eps_scale: ops.eta0 / ops.k0,
            gd: (Rc::new(gd_re), Rc::new(gd_im)),
            gs_t: (Rc::new(gs_re), Rc::new(gs_im)),
            e_inc: (Rc::new(ei_re), Rc::new(ei_im)),
        }
    }

    fn add_to(&self, g: &mut Graph) -> PhysicsVars {
        let pair = |g: &mut Graph, p: &(Rc<Tensor>, Rc<Tensor>)| CVar { re: g.constant_rc(p.0.clone()), im: g.constant_rc(p.1.clone()) };
        PhysicsVars { gd: pair(g, &self.gd), gs_t: pair(g, &self.gs_t), e_inc: pair(g, &self.e_inc) }
    }
}

/// Graph handles of the physics constants.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsVars {
    pub gd: CVar,
    pub gs_t: CVar,
    pub e_inc: CVar,
}

/// Network inputs of one scatterer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetInput {
    /// `M × Ni`.
    pub j_plus: CMatrix,
    /// `1/‖J⁺_l‖²` per incidence (1 for a vanishing `J⁺_l`).
    pub weights: Vec<f64>,
    pub eps_bp: PermittivityMap,
}

impl NetInput {
    /// Back-propagation initialization of a measured `Nr × Ni` field.
    pub fn from_measurements(ops: &OperatorSet, es: &CMatrix, l: usize, lossy: bool) -> Result<Self> {
        let init = bp_init(ops, es, l, lossy)?;
        let weights = init.subspace.j_plus_norms.iter().map(|n| if *n > 0.0 { 1.0 / (n * n) } else { 1.0 }).collect();
        Ok(Self { j_plus: init.subspace.j_plus.clone(), weights, eps_bp: init.eps_bp })
    }

    /// `1 / rms(J⁺)`, which brings the current channels to order one.
    pub fn current_scale(&self) -> f64 {
        let ms = self.j_plus.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.j_plus.len() as f64;
        if ms > 0.0 {
            1.0 / ms.sqrt()
        } else {
            1.0
        }
    }
}

/// References for the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NetTargets {
    /// Inversion-grid forward currents of the truth, `M × Ni`.
    pub j_mom: CMatrix,
    /// Measured scattered field, `Nr × Ni`.
    pub es: CMatrix,
    pub truth: PermittivityMap,
}

/// Inputs and references of one scatterer; all its incidences travel together.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub input: NetInput,
    pub target: NetTargets,
}

impl TrainingSample {
    /// Adds noise to the measurements and runs the back-propagation
    /// initialization on the inversion operators.
    pub fn prepare(ops: &OperatorSet, sample: &Sample, l: usize, noise: f64, noise_seed: u64, lossy: bool) -> Result<Self> {
        let es = add_noise(&sample.es, noise, noise_seed)?;
        Ok(Self {
            input: NetInput::from_measurements(ops, &es, l, lossy)?,
            target: NetTargets { j_mom: sample.j_mom.clone(), es, truth: sample.truth.clone() },
        })
    }
}

/// Graph handles of the network outputs.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    /// `J^pre`, `[Ni, M]`.
    pub current: CVar,
    /// `E^s,pre`, `[Ni, Nr]`.
    pub scattered: CVar,
    /// `Re ε^pre`, `[M]`.
    pub eps_re: Var,
    /// `Im ε^pre` in lossy mode.
    pub eps_im: Option<Var>,
}

/// Parameter handles of one convolution.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// Adds every parameter of `model` to `g` as a differentiable leaf.
pub fn model_vars(g: &mut Graph, model: &SomNetModel) -> Vec<Vec<LayerVars>> {
    model
        .stages
        .iter()
        .map(|s| {
            s.layers
                .iter()
                .map(|l| LayerVars { weight: g.param(l.weight.clone()), bias: g.param(l.bias.clone()) })
                .collect()
        })
        .collect()
}

/// One learnable stage: `J + S_θ(J, ε)`.
pub fn stage_forward(
    g: &mut Graph,
    j: CVar,
    eps: (Var, Option<Var>),
    block: &[LayerVars],
    n: usize,
    scale: f64,
) -> Result<CVar> {
    let ni = g.shape(j.re)[0];
    let as_image = |g: &mut Graph, v: Var, s: f64| -> Result<Var> {
        let v = g.scale(v, s);
        g.reshape(v, &[ni, 1, n, n])
    };
    let jr = as_image(g, j.re, scale)?;
    let ji = as_image(g, j.im, scale)?;
    let mut channels = vec![jr, ji];
    for e in std::iter::once(eps.0).chain(eps.1) {
        let e = g.reshape(e, &[1, 1, n, n])?;
        channels.push(g.repeat_batch(e, ni)?);
    }
    let mut h = g.concat_channels(&channels)?;
    for (i, layer) in block.iter().enumerate() {
        h = g.conv2d(h, layer.weight, Some(layer.bias))?;
        if i + 1 < block.len() {
            h = g.relu(h);
        }
    }
    if g.shape(h)[1] != 2 {
        return Err(Error::Dimension(format!("stage block emits {} channels, expected 2", g.shape(h)[1])));
    }
    let mut parts = [j.re, j.im];
    for (c, part) in parts.iter_mut().enumerate() {
        let d = g.slice_channels(h, c, 1)?;
        let d = g.reshape(d, &[ni, n * n])?;
        let d = g.scale(d, 1.0 / scale);
        *part = g.add(*part, d)?;
    }
    Ok(CVar { re: parts[0], im: parts[1] })
}

/// `F(J)`: total fields, the weighted contrast update and `εr`.
///
/// `weights` is a constant `[Ni, M]` tensor holding `w_l` along row `l`.
/// Returns `(Re ε, Im ε)`; the imaginary part only when `lossy`.
pub fn analytic_update(
    g: &mut Graph,
    j: CVar,
    phys: &PhysicsVars,
    weights: Var,
    eps_scale: f64,
    lossy: bool,
) -> Result<(Var, Option<Var>)> {
    let scattered_inside = g.cmatmul(j, phys.gd)?;
    let total = g.cadd(phys.e_inc, scattered_inside)?;
    let prod = g.cconj_mul(total, j)?;
    let num_im = g.mul(prod.im, weights)?;
    let num_im = g.sum_axis0(num_im)?;
    let power = g.cabs2(total)?;
    let power = g.mul(power, weights)?;
    let den = g.sum_axis0(power)?;
    let chi_im = g.safe_div(num_im, den, 1e-30)?;
    // ε = 1 + i c χ  =>  Re ε = 1 - c Im χ,  Im ε = c Re χ
    let eps_re = g.affine(chi_im, -eps_scale, 1.0);
    let eps_im = if lossy {
        let num_re = g.mul(prod.re, weights)?;
        let num_re = g.sum_axis0(num_re)?;
        let chi_re = g.safe_div(num_re, den, 1e-30)?;
        Some(g.scale(chi_re, eps_scale))
    } else {
        None
    };
    Ok((eps_re, eps_im))
}

fn weight_tensor(input: &NetInput, m: usize) -> Tensor {
    let ni = input.weights.len();
    Tensor { shape: vec![ni, m], data: input.weights.iter().flat_map(|w| std::iter::repeat_n(*w, m)).collect() }
}

fn map_tensor(values: impl Iterator<Item = f64>, m: usize) -> Tensor {
    Tensor { shape: vec![m], data: values.collect() }
}

/// The full unrolled forward pass on `g`.
pub fn somnet_forward(
    g: &mut Graph,
    model: &SomNetModel,
    params: &[Vec<LayerVars>],
    phys: &Physics,
    input: &NetInput,
) -> Result<ForwardVars> {
    if input.j_plus.nrows() != phys.m || input.j_plus.ncols() != phys.ni || input.eps_bp.n != phys.n {
        return Err(Error::Dimension(format!(
            "network input {}x{} on a {}-grid, physics has M = {}, Ni = {}, n = {}",
            input.j_plus.nrows(),
            input.j_plus.ncols(),
            input.eps_bp.n,
            phys.m,
            phys.ni,
            phys.n
        )));
    }
    let pv = phys.add_to(g);
    let (jr, ji) = transposed_parts(&input.j_plus);
    let mut j = g.complex_constant(jr, ji);
    let weights = g.constant(weight_tensor(input, phys.m));
    let mut eps = (
        g.constant(map_tensor(input.eps_bp.values.iter().map(|v| v.re), phys.m)),
        model.lossy.then(|| g.constant(map_tensor(input.eps_bp.values.iter().map(|v| v.im), phys.m))),
    );
    let scale = input.current_scale();
    for block in params {
        j = stage_forward(g, j, eps, block, phys.n, scale)?;
        eps = analytic_update(g, j, &pv, weights, phys.eps_scale, model.lossy)?;
    }
    let scattered = g.cmatmul(j, pv.gs_t)?;
    Ok(ForwardVars { current: j, scattered, eps_re: eps.0, eps_im: eps.1 })
}

/// SSIM of a graph image `x` (`n × n` entries) against a fixed image.
pub fn ssim_graph(g: &mut Graph, x: Var, y: &[f64], n: usize, data_range: f64) -> Result<Var> {
    if !(data_range > 0.0) || !data_range.is_finite() {
        return Err(Error::Domain(format!("ssim: data range {data_range} must be positive")));
    }
    let taps = Rc::new(gaussian_taps(ssim_window_size(n, n), SSIM_SIGMA));
    let (c1, c2) = ssim_constants(data_range);
    let x = g.reshape(x, &[n, n])?;
    let yv = g.constant(Tensor::new(vec![n, n], y.to_vec())?);
    let ysq = g.square(yv);
    let mu_x = g.local_mean(x, taps.clone())?;
    let mu_y = g.local_mean(yv, taps.clone())?;
    let xsq = g.square(x);
    let xx = g.local_mean(xsq, taps.clone())?;
    let yy = g.local_mean(ysq, taps.clone())?;
    let xy = g.mul(x, yv)?;
    let xy = g.local_mean(xy, taps)?;
    let mu_x2 = g.square(mu_x);
    let mu_y2 = g.square(mu_y);
    let mu_xy = g.mul(mu_x, mu_y)?;
    let var_x = g.sub(xx, mu_x2)?;
    let var_y = g.sub(yy, mu_y2)?;
    let cov = g.sub(xy, mu_xy)?;
    let a = g.affine(mu_xy, 2.0, c1);
    let b = g.affine(cov, 2.0, c2);
    let num = g.mul(a, b)?;
    let lum = g.add(mu_x2, mu_y2)?;
    let lum = g.affine(lum, 1.0, c1);
    let con = g.add(var_x, var_y)?;
    let con = g.affine(con, 1.0, c2);
    let den = g.mul(lum, con)?;
    let map = g.safe_div(num, den, 0.0)?;
    Ok(g.mean(map))
}

/// Graph handles of the loss and its four terms.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub current: Var,
    pub field: Var,
    pub ssim: Var,
    pub mse: Var,
}

/// Values of the loss terms, unweighted, and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub current: f64,
    pub field: f64,
    pub ssim: f64,
    pub mse: f64,
    pub total: f64,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            current: g.scalar(self.current),
            field: g.scalar(self.field),
            ssim: g.scalar(self.ssim),
            mse: g.scalar(self.mse),
            total: g.scalar(self.total),
        }
    }
}

fn range_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// `L_J + L_E + λ1 L_SSIM + λ2 L_MSE`:
///
/// * `L_J = (1/Ni) Σ_l ‖J^pre_l - J^MoM_l‖²`
/// * `L_E = mean over receivers and incidences of |E^s,pre - E^s|` (an L1 term)
/// * `L_SSIM = 1 - SSIM(Re ε^pre, Re ε^t)`, averaged with the imaginary-part
///   term in lossy mode when the true imaginary part is not constant
/// * `L_MSE = mean over cells of |ε^pre - ε^t|²` (real parts only unless lossy)
pub fn loss_total(g: &mut Graph, out: &ForwardVars, target: &NetTargets, cfg: &TrainConfig) -> Result<LossVars> {
    let ni = target.j_mom.ncols();
    let n = target.truth.n;
    let (jr, ji) = transposed_parts(&target.j_mom);
    let jref = g.complex_constant(jr, ji);
    let dj = g.csub(out.current, jref)?;
    let dj2 = g.cabs2(dj)?;
    let sj = g.sum(dj2);
    let mut current = g.scale(sj, 1.0 / ni as f64);

    let (er, ei) = transposed_parts(&target.es);
    let eref = g.complex_constant(er, ei);
    let de = g.csub(out.scattered, eref)?;
    let de = g.cabs(de)?;
    let mut field = g.mean(de);

    if cfg.normalize_loss {
        let jn = target.j_mom.iter().map(|z| z.norm_sqr()).sum::<f64>() / ni as f64;
        let en = target.es.iter().map(|z| z.norm()).sum::<f64>() / target.es.len() as f64;
        if jn > 0.0 {
            current = g.scale(current, 1.0 / jn);
        }
        if en > 0.0 {
            field = g.scale(field, 1.0 / en);
        }
    }

    let truth_re = target.truth.real();
    let s_re = ssim_graph(g, out.eps_re, &truth_re, n, range_of(&truth_re))?;
    let mut ssim = g.affine(s_re, -1.0, 1.0);
    let tre = g.constant(Tensor::new(vec![n * n], truth_re)?);
    let dre = g.sub(out.eps_re, tre)?;
    let mut sq = g.square(dre);
    if let Some(eps_im) = out.eps_im {
        let truth_im = target.truth.imag();
        let range = range_of(&truth_im);
        if range > 0.0 {
            let s_im = ssim_graph(g, eps_im, &truth_im, n, range)?;
            let l_im = g.affine(s_im, -1.0, 1.0);
            let both = g.add(ssim, l_im)?;
            ssim = g.scale(both, 0.5);
        }
        let tim = g.constant(Tensor::new(vec![n * n], truth_im)?);
        let dim = g.sub(eps_im, tim)?;
        let sq_im = g.square(dim);
        sq = g.add(sq, sq_im)?;
    }
    let mse = g.mean(sq);

    let a = g.add(current, field)?;
    let b = g.scale(ssim, cfg.lambda1);
    let c = g.scale(mse, cfg.lambda2);
    let total = g.add(a, b)?;
    let total = g.add(total, c)?;
    Ok(LossVars { total, current, field, ssim, mse })
}

/// Network outputs as plain matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `M × Ni`.
    pub current: CMatrix,
    /// `Nr × Ni`.
    pub scattered: CMatrix,
    pub eps: PermittivityMap,
}

/// Runs the network without keeping the graph.
pub fn infer(model: &SomNetModel, phys: &Physics, input: &NetInput) -> Result<Prediction> {
    let mut g = Graph::new();
    let params = model_vars(&mut g, model);
    let out = somnet_forward(&mut g, model, &params, phys, input)?;
    Ok(read_prediction(&g, &out, phys.n))
}

/// Extracts the outputs of a forward pass.
pub fn read_prediction(g: &Graph, out: &ForwardVars, n: usize) -> Prediction {
    let current = from_transposed_parts(g.value(out.current.re), g.value(out.current.im));
    let scattered = from_transposed_parts(g.value(out.scattered.re), g.value(out.scattered.im));
    let re = &g.value(out.eps_re).data;
    let values = match out.eps_im {
        Some(im) => re.iter().zip(&g.value(im).data).map(|(&a, &b)| crate::Complex64::new(a, b)).collect(),
        None => re.iter().map(|&a| crate::Complex64::new(a, 0.0)).collect(),
    };
    Prediction { current, scattered, eps: PermittivityMap { n, values } }
}
