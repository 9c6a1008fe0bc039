use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{infer, loss_total, model_vars, somnet_forward, LossValues, Physics, SomNetModel, TrainConfig, TrainingSample};
use crate::autodiff::{learning_rate, Adam, Graph, Tensor};
use crate::data::metrics::metrics;
use crate::error::{Error, Result};

/// Loss terms of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossValues,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<TrainRecord>,
    /// Mean total loss of each epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainReport {
    /// CSV with columns `epoch,step,L_J,L_E,L_SSIM,L_MSE,total,lr`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,step,L_J,L_E,L_SSIM,L_MSE,total,lr")?;
        for r in &self.history {
            writeln!(
                w,
                "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.6e}",
                r.epoch, r.step, r.loss.current, r.loss.field, r.loss.ssim, r.loss.mse, r.loss.total, r.lr
            )?;
        }
        Ok(())
    }
}

/// Loss and parameter gradients of one sample.
pub fn loss_and_grads(
    model: &SomNetModel,
    phys: &Physics,
    sample: &TrainingSample,
    cfg: &TrainConfig,
) -> Result<(LossValues, Vec<Tensor>)> {
    let mut g = Graph::new();
    let params = model_vars(&mut g, model);
    let out = somnet_forward(&mut g, model, &params, phys, &sample.input)?;
    let loss = loss_total(&mut g, &out, &sample.target, cfg)?;
    let values = loss.values(&g);
    let grads = g.backward(loss.total)?;
    let flat = params.iter().flatten().flat_map(|l| [grads.wrt(l.weight), grads.wrt(l.bias)]).collect();
    Ok((values, flat))
}

/// Adam over `samples`, one scatterer per step, in a seeded random order.
///
/// With `checkpoints`, the model is saved as `epoch_XXX.ckpt` after every
/// epoch, and a non-finite loss leaves a `nonfinite.txt` diagnostic there.
pub fn train(
    model: &mut SomNetModel,
    samples: &[TrainingSample],
    phys: &Physics,
    cfg: &TrainConfig,
    checkpoints: Option<&Path>,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::Config("training needs at least one sample".into()));
    }
    let owned: Vec<Tensor> = model.params().into_iter().cloned().collect();
    let mut adam = Adam::new(&owned, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut report = TrainReport { history: Vec::new(), epoch_loss: Vec::new() };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for (step, &idx) in order.iter().enumerate() {
            let lr = learning_rate(cfg.lr, cfg.epochs, epoch, step, samples.len());
            let (loss, grads) = loss_and_grads(model, phys, &samples[idx], cfg)?;
            let finite_grads = grads.iter().all(|g| g.data.iter().all(|v| v.is_finite()));
            if !loss.total.is_finite() || !finite_grads {
                let detail = format!(
                    "sample {idx}: L_J {:e}, L_E {:e}, L_SSIM {:e}, L_MSE {:e}, total {:e}, finite gradients {finite_grads}",
                    loss.current, loss.field, loss.ssim, loss.mse, loss.total
                );
                if let Some(dir) = checkpoints {
                    std::fs::write(dir.join("nonfinite.txt"), format!("epoch {epoch} step {step}\n{detail}\n"))?;
                }
                return Err(Error::NonFinite { epoch, step, detail });
            }
            let mut params: Vec<Tensor> = model.params().into_iter().cloned().collect();
            adam.step(&mut params, &grads, lr)?;
            for (dst, src) in model.params_mut().into_iter().zip(params) {
                *dst = src;
            }
            sum += loss.total;
            report.history.push(TrainRecord { epoch, step, loss, lr });
        }
        report.epoch_loss.push(sum / samples.len() as f64);
        if let Some(dir) = checkpoints {
            model.save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
    }
    Ok(report)
}

/// `(SSIM, RMSE)` of the network prediction for each sample.
pub fn evaluate(model: &SomNetModel, phys: &Physics, samples: &[TrainingSample]) -> Result<Vec<(f64, f64)>> {
    samples
        .iter()
        .map(|s| {
            let pred = infer(model, phys, &s.input)?;
            metrics(&pred.eps, &s.target.truth)
        })
        .collect()
}
