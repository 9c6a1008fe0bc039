use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::TrainConfig;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::{read_bundle, write_bundle, Field};

/// One convolution: `weight: [out, in, k, k]`, `bias: [out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Residual block of one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBlock {
    pub layers: Vec<ConvLayer>,
}

/// Parameters of all stages plus the loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SomNetModel {
    pub stages: Vec<StageBlock>,
    pub lossy: bool,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl SomNetModel {
    /// He-initialized blocks whose last convolution starts at zero, so the
    /// untrained network is the pure physics pipeline.
    pub fn new(stages: usize, cfg: &TrainConfig, lossy: bool, seed: u64) -> Result<Self> {
        Self::with_init(stages, cfg, lossy, seed, true)
    }

    /// As [`SomNetModel::new`], optionally with a random last layer too.
    pub fn with_init(stages: usize, cfg: &TrainConfig, lossy: bool, seed: u64, zero_last: bool) -> Result<Self> {
        if stages == 0 || cfg.layers == 0 || cfg.kernel % 2 == 0 || cfg.hidden == 0 {
            return Err(Error::Config(format!(
                "need stages >= 1, layers >= 1, hidden >= 1 and an odd kernel; got {stages}, {}, {}, {}",
                cfg.layers, cfg.hidden, cfg.kernel
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = cfg.kernel;
        let input = if lossy { 4 } else { 3 };
        let blocks = (0..stages)
            .map(|_| {
                let layers = (0..cfg.layers)
                    .map(|i| {
                        let cin = if i == 0 { input } else { cfg.hidden };
                        let last = i + 1 == cfg.layers;
                        let cout = if last { 2 } else { cfg.hidden };
                        let shape = vec![cout, cin, k, k];
                        let weight = if last && zero_last {
                            Tensor::zeros(&shape)
                        } else {
                            let std = (2.0 / (cin * k * k) as f64).sqrt();
                            let normal = Normal::new(0.0, std).expect("positive std");
                            let data = (0..cout * cin * k * k).map(|_| normal.sample(&mut rng)).collect();
                            Tensor { shape, data }
                        };
                        ConvLayer { weight, bias: Tensor::zeros(&[cout]) }
                    })
                    .collect();
                StageBlock { layers }
            })
            .collect();
        Ok(Self { stages: blocks, lossy, lambda1: cfg.lambda1, lambda2: cfg.lambda2 })
    }

    pub fn input_channels(&self) -> usize {
        if self.lossy {
            4
        } else {
            3
        }
    }

    /// Parameters in a fixed order: stage, layer, weight before bias.
    pub fn params(&self) -> Vec<&Tensor> {
        self.stages.iter().flat_map(|s| s.layers.iter().flat_map(|l| [&l.weight, &l.bias])).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.stages.iter_mut().flat_map(|s| s.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])).collect()
    }

    /// `stage{k}.conv{i}.weight` / `.bias` names matching [`SomNetModel::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (k, s) in self.stages.iter().enumerate() {
            for i in 0..s.layers.len() {
                out.push(format!("stage{k}.conv{i}.weight"));
                out.push(format!("stage{k}.conv{i}.bias"));
            }
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Checkpoint bundle. Each tensor is stored as a `1 × len` real record,
    /// with its full shape in a companion `<name>.shape` record; a `meta`
    /// record holds `[stages, layers, lossy, λ1, λ2]`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let layers = self.stages.first().map_or(0, |s| s.layers.len());
        let meta = vec![self.stages.len() as f64, layers as f64, self.lossy as u8 as f64, self.lambda1, self.lambda2];
        let mut entries = vec![("meta".to_string(), Field::Real { rows: 1, cols: meta.len(), data: meta })];
        for (name, p) in self.param_names().into_iter().zip(self.params()) {
            let shape = p.shape.iter().map(|&d| d as f64).collect::<Vec<_>>();
            entries.push((format!("{name}.shape"), Field::Real { rows: 1, cols: shape.len(), data: shape }));
            entries.push((name, Field::Real { rows: 1, cols: p.len(), data: p.data.clone() }));
        }
        write_bundle(path, &entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let entries = read_bundle(path)?;
        let bad = |m: String| Error::Format { path: path.to_path_buf(), message: m };
        let get = |name: &str| -> Result<Vec<f64>> {
            let (_, f) = entries.iter().find(|(n, _)| n == name).ok_or_else(|| bad(format!("missing record `{name}`")))?;
            Ok(f.to_real()?.as_slice().to_vec())
        };
        let meta = get("meta")?;
        let [stages, layers, lossy, lambda1, lambda2] = meta[..] else {
            return Err(bad("meta record has the wrong length".into()));
        };
        let mut model = SomNetModel {
            stages: Vec::with_capacity(stages as usize),
            lossy: lossy != 0.0,
            lambda1,
            lambda2,
        };
        for k in 0..stages as usize {
            let mut block = StageBlock { layers: Vec::new() };
            for i in 0..layers as usize {
                let tensor = |part: &str| -> Result<Tensor> {
                    let name = format!("stage{k}.conv{i}.{part}");
                    let shape = get(&format!("{name}.shape"))?.iter().map(|&d| d as usize).collect();
                    Tensor::new(shape, get(&name)?)
                };
                block.layers.push(ConvLayer { weight: tensor("weight")?, bias: tensor("bias")? });
            }
            model.stages.push(block);
        }
        Ok(model)
    }
}
