//! SGD with momentum under a cosine learning-rate schedule.

use std::f64::consts::PI;

use log::info;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::stream_rng;

use super::model::{ToyNet, ToyNetConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub steps: usize,
    pub seed: u64,
    /// Record the loss every `log_every` steps (and at the last step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            momentum: 0.9,
            batch: 32,
            steps: 3000,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum {} not in [0, 1)",
                self.momentum
            )));
        }
        if self.batch == 0 || self.steps == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "batch, steps and log_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `base * 0.5 * (1 + cos(pi * t / total))`; zero at `t = total`.
pub fn cosine_lr(base: f64, t: usize, total: usize) -> f64 {
    base * 0.5 * (1.0 + (PI * t as f64 / total as f64).cos())
}

/// Heavy-ball SGD: `v = mu * v + g`, `p -= lr * v`.
pub struct Sgd {
    momentum: f64,
    velocity: ToyNet,
}

impl Sgd {
    pub fn new(model: &ToyNet, momentum: f64) -> Self {
        Self {
            momentum,
            velocity: model.zeros_like(),
        }
    }

    pub fn step(&mut self, model: &mut ToyNet, grads: &ToyNet, lr: f64) {
        let mu = self.momentum;
        for ((p, g), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.velocity.tensors_mut())
        {
            if !p.trainable {
                continue;
            }
            for ((pv, gv), vv) in p.data.iter_mut().zip(g.data).zip(v.data.iter_mut()) {
                *vv = mu * *vv + gv;
                *pv -= lr * *vv;
            }
        }
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    pub model: ToyNet,
    /// `(step, mean batch loss)` at every logged step.
    pub losses: Vec<(usize, f64)>,
    pub steps: usize,
    /// Shuffle generator after the last step.
    pub rng: ChaCha8Rng,
}

/// Deterministic training: parameters come from the `model-init` stream and
/// the epoch shuffles from the `shuffle` stream of `train.seed`.
pub fn train(
    model_cfg: &ToyNetConfig,
    train_cfg: &TrainConfig,
    data: &[(Image, usize)],
) -> Result<TrainOutcome> {
    train_cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if !(data.iter().any(|(_, l)| *l == 0) && data.iter().any(|(_, l)| *l == 1)) {
        return Err(Error::Data("training set must contain both classes".into()));
    }
    let mut init_rng = stream_rng(train_cfg.seed, "model-init");
    let mut model = ToyNet::new(model_cfg.clone(), &mut init_rng)?;
    model.fit_input_norm(data.iter().map(|(img, _)| img))?;
    let mut rng = stream_rng(train_cfg.seed, "shuffle");
    let mut opt = Sgd::new(&model, train_cfg.momentum);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::new();
    let mut images = Vec::with_capacity(train_cfg.batch);
    let mut labels = Vec::with_capacity(train_cfg.batch);
    for step in 0..train_cfg.steps {
        images.clear();
        labels.clear();
        while images.len() < train_cfg.batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (img, label) = &data[order[cursor]];
            images.push(img.clone());
            labels.push(*label);
            cursor += 1;
        }
        let (loss, grads) = model.loss_and_grads(&images, &labels)?;
        if !loss.is_finite() {
            return Err(Error::Data(format!("loss diverged at step {step}")));
        }
        let lr = cosine_lr(train_cfg.lr, step, train_cfg.steps);
        opt.step(&mut model, &grads, lr);
        if step % train_cfg.log_every == 0 || step + 1 == train_cfg.steps {
            info!("step {step} loss {loss:.6} lr {lr:.3e}");
            losses.push((step, loss));
        }
    }
    Ok(TrainOutcome {
        model,
        losses,
        steps: train_cfg.steps,
        rng,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.002, 0, 100), 0.002);
        assert!((cosine_lr(0.002, 50, 100) - 0.001).abs() < 1e-15);
        assert!(cosine_lr(0.002, 100, 100).abs() < 1e-18);
    }

    #[test]
    fn rejects_single_class() {
        let img = Image::filled(16, 16, 3, 0.5).unwrap();
        let data = vec![(img.clone(), 1), (img, 1)];
        let cfg = ToyNetConfig {
            side: 16,
            ..ToyNetConfig::default()
        };
        let err = train(&cfg, &TrainConfig::default(), &data).err().unwrap();
        assert!(matches!(err, Error::Data(_)));
        assert!(train(&cfg, &TrainConfig::default(), &[]).is_err());
    }
}
