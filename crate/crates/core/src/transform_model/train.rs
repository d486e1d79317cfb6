//! Training by backpropagation through closed-loop rollouts.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Architecture, TMParams, TransformModel};
use crate::error::{ensure, Result};
use crate::image::Image;
use crate::predictor::{rollout_loss_and_grad, LossParts, LossWeights, Predictor, PredictorConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub predictor: PredictorConfig,
    pub loss: LossWeights,
    pub lr_base: f64,
    pub lr_max: f64,
    /// Length of one triangular learning-rate cycle, in epochs.
    pub lr_period: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Optional per-epoch CSV log.
    pub log_path: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::default(),
            predictor: PredictorConfig::default(),
            loss: LossWeights::default(),
            lr_base: 1e-4,
            lr_max: 1e-2,
            lr_period: 20.0,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            log_path: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        let positive = [
            ("lr_base", self.lr_base),
            ("lr_max", self.lr_max),
            ("lr_period", self.lr_period),
            ("gamma", self.loss.gamma),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            ensure!(v > 0.0 && v.is_finite(), Validation, "{} must be positive, got {}", name, v);
        }
        ensure!(self.lr_max >= self.lr_base, Validation, "lr_max must be >= lr_base");
        ensure!(self.weight_decay >= 0.0, Validation, "weight_decay must be nonnegative");
        ensure!(
            self.loss.alpha >= 0.0 && self.loss.beta >= 0.0 && self.loss.alpha + self.loss.beta > 0.0,
            Validation,
            "loss weights must be nonnegative with a positive sum"
        );
        ensure!((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2), Validation, "Adam betas must lie in [0, 1)");
        ensure!(self.epochs >= 1 && self.batch_size >= 1, Validation, "epochs and batch_size must be positive");
        Ok(())
    }

    /// Triangular cyclic learning rate at fractional epoch `e`.
    pub fn learning_rate(&self, e: f64) -> f64 {
        let x = (e / self.lr_period).fract();
        let tri = 1.0 - (2.0 * x - 1.0).abs();
        self.lr_base + (self.lr_max - self.lr_base) * tri
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub dssim: f64,
    pub mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Final parameters, or the last finite ones if training diverged.
    pub params: TMParams,
    pub log: Vec<TrainLogRow>,
    pub diverged: bool,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("epoch,lr,loss,dssim,mse\n");
        for r in &self.log {
            s += &format!("{},{},{},{},{}\n", r.epoch, r.lr, r.loss, r.dssim, r.mse);
        }
        s
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn step(&mut self, cfg: &TrainConfig, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let b1c = 1.0 - cfg.beta1.powi(self.t);
        let b2c = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / b1c;
            let vh = self.v[i] / b2c;
            params[i] -= lr * (mh / (vh.sqrt() + cfg.adam_eps) + cfg.weight_decay * params[i]);
        }
    }
}

/// Trains a transform model on `sequences`; the first `seed_count` frames of
/// each sequence are given, the rest are rollout targets.
pub fn train(sequences: &[Vec<Image>], seed_count: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    ensure!(!sequences.is_empty(), Validation, "training set is empty");
    ensure!(seed_count >= 2, Validation, "seed_count must be at least 2");
    let (h, w) = sequences[0][0].dims();
    ensure!(
        sequences.iter().all(|s| s.len() > seed_count && s.iter().all(|f| f.dims() == (h, w))),
        Validation,
        "every sequence needs more than {} frames of size {}x{}",
        seed_count,
        h,
        w
    );
    let pred = Predictor::new(cfg.predictor, TransformModel::Identity, h, w)?;
    let mut params = TMParams::init(cfg.architecture, cfg.seed)?;
    let mut adam = Adam {
        m: vec![0.0; params.values.len()],
        v: vec![0.0; params.values.len()],
        t: 0,
    };
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let batches_per_epoch = sequences.len().div_ceil(cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let good = params.clone();
        let mut sum = LossParts::default();
        let mut lr = cfg.lr_base;
        let mut diverged = false;
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<Result<(LossParts, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let seq = &sequences[i];
                    rollout_loss_and_grad(&pred, &params, &seq[..seed_count], &seq[seed_count..], cfg.loss)
                })
                .collect();
            let mut grad = vec![0.0; params.values.len()];
            for r in results {
                let (loss, g) = match r {
                    Ok(v) => v,
                    Err(crate::Error::Numerical(msg)) => {
                        log::error!("epoch {epoch}: {msg}");
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                sum.total += loss.total;
                sum.dssim += loss.dssim;
                sum.mse += loss.mse;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / batch.len() as f64;
                }
            }
            if diverged || grad.iter().any(|g| !g.is_finite()) {
                diverged = true;
                break;
            }
            lr = cfg.learning_rate(step as f64 / batches_per_epoch as f64);
            adam.step(cfg, &mut params.values, &grad, lr);
            step += 1;
        }
        if diverged || params.values.iter().any(|v| !v.is_finite()) {
            log::error!("training diverged in epoch {epoch}; keeping parameters from epoch start");
            return Ok(TrainOutcome {
                params: good,
                log,
                diverged: true,
            });
        }
        let n = sequences.len() as f64;
        let row = TrainLogRow {
            epoch,
            lr,
            loss: sum.total / n,
            dssim: sum.dssim / n,
            mse: sum.mse / n,
        };
        log::info!("epoch {epoch}: lr {lr:.5} loss {:.6} dssim {:.6} mse {:.6}", row.loss, row.dssim, row.mse);
        log.push(row);
        if let Some(path) = &cfg.log_path {
            let partial = TrainOutcome {
                params: params.clone(),
                log: log.clone(),
                diverged: false,
            };
            crate::tensor_io::write_bytes(path, partial.log_csv().as_bytes())?;
        }
    }
    Ok(TrainOutcome {
        params,
        log,
        diverged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cyclic_learning_rate() {
        let c = TrainConfig::default();
        assert!((c.learning_rate(0.0) - 1e-4).abs() < 1e-15);
        assert!((c.learning_rate(10.0) - 1e-2).abs() < 1e-12);
        assert!((c.learning_rate(20.0) - 1e-4).abs() < 1e-12);
        assert!((c.learning_rate(5.0) - (1e-4 + 0.5 * (1e-2 - 1e-4))).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = TrainConfig {
            lr_base: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            loss: LossWeights {
                alpha: 0.0,
                beta: 0.0,
                gamma: 0.9,
            },
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn static_sequences() -> Vec<Vec<Image>> {
        (0..2)
            .map(|k| {
                let f = Image::from_fn(17, 17, |r, c| if (r as i32 - 8).abs() + (c as i32 - 8 + k).abs() < 4 { 0.8 } else { 0.0 });
                vec![f; 4]
            })
            .collect()
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            predictor: PredictorConfig {
                window: 9,
                stride: 8,
                pad: 2,
                ..PredictorConfig::default()
            },
            architecture: Architecture {
                layers: 2,
                growth: 2,
                history: 1,
            },
            epochs: 2,
            batch_size: 2,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn static_scenes_keep_identity_and_are_deterministic() {
        let seqs = static_sequences();
        let a = train(&seqs, 2, &small_config()).unwrap();
        let b = train(&seqs, 2, &small_config()).unwrap();
        assert_eq!(a.params, b.params);
        assert!(!a.diverged);
        assert_eq!(a.log.len(), 2);
        assert!(a.log.iter().all(|r| r.loss < 1e-6));
        assert_eq!(a.log_csv().lines().next(), Some("epoch,lr,loss,dssim,mse"));
    }
}
