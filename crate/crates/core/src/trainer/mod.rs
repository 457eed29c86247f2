//! Two-stage training: the generator first minimizes the perceptual loss
//! alone, then trains jointly with the discriminator under the sphere
//! adversarial objective.

mod dataset;
mod history;

pub use dataset::{PairDataset, Tool};
pub use history::{LossHistory, LossRecord};

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::losscal::perceptual_loss_lp;
use crate::nnarch::{CveNet, Discriminator, NetConfig, Network};
use crate::spheregan::{
    discriminator_loss_tensor, generator_adv_loss_tensor, FeatureBatch, Pairing, ReSphereConfig,
};
use crate::tensor::{no_grad, Adam, AdamConfig, Grads, Params, Tensor};

/// How the "0.1 every 100 epochs" decay is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecayMode {
    /// Learning rate multiplied by `lr_decay_factor` every `lr_decay_every` epochs.
    #[default]
    LrStep,
    /// Constant learning rate with decoupled weight decay of
    /// `lr_decay_factor` in the optimizer.
    WeightDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub decay_mode: DecayMode,
    pub adv_weight: f64,
    /// Moment count `M` of the adversarial objective.
    pub moments: u32,
    pub pairing: Pairing,
    pub seed: u64,
    /// Optional global gradient-norm clip.
    pub grad_clip: Option<f64>,
    pub shuffle: bool,
    /// Verify after every step that all parameters are finite.
    pub check_finite_params: bool,
    /// Keep the feature batches of every generator step (stage 2).
    pub log_features: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 16,
            epochs: 200,
            lr0: 1e-4,
            lr_decay_factor: 0.1,
            lr_decay_every: 100,
            decay_mode: DecayMode::LrStep,
            adv_weight: 0.005,
            moments: 3,
            pairing: Pairing::Index,
            seed: 0,
            grad_clip: None,
            shuffle: true,
            check_finite_params: true,
            log_features: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("Adam betas must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.lr_decay_every == 0 {
            return fail("batch size, epochs and decay interval must be at least 1");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail("initial learning rate must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return fail("decay factor must be positive");
        }
        if !(self.adv_weight >= 0.0 && self.adv_weight.is_finite()) {
            return fail("adversarial weight must be non-negative");
        }
        if self.moments == 0 {
            return fail("moment count must be at least 1");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return fail("gradient clip must be positive");
        }
        Ok(())
    }

    /// `lr0 * factor^floor(epoch / every)` in step mode, `lr0` otherwise.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.decay_mode {
            DecayMode::LrStep => self.lr0 * self.lr_decay_factor.powi((epoch / self.lr_decay_every) as i32),
            DecayMode::WeightDecay => self.lr0,
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            weight_decay: match self.decay_mode {
                DecayMode::LrStep => 0.0,
                DecayMode::WeightDecay => self.lr_decay_factor,
            },
            ..AdamConfig::default()
        }
    }

    pub fn sphere(&self, feature_dim: usize) -> ReSphereConfig {
        ReSphereConfig {
            moments: self.moments,
            adv_weight: self.adv_weight,
            feature_dim,
            pairing: self.pairing,
        }
    }
}

/// Sample order for one epoch; a pure function of seed and epoch so both
/// stages visit batches identically.
pub fn epoch_order(seed: u64, epoch: usize, n: usize, shuffle: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        idx.shuffle(&mut rng);
    }
    idx
}

fn check_dataset(data: &PairDataset, net: &NetConfig) -> Result<()> {
    if data.is_empty() {
        return Err(invalid("training dataset is empty"));
    }
    data.validate()?;
    if data.block_size() != net.block_size {
        return Err(invalid(format!(
            "dataset blocks are {}x{} but the network expects {}",
            data.block_size(),
            data.block_size(),
            net.block_size
        )));
    }
    Ok(())
}

fn finite_loss(loss: &Tensor<f32>, what: &str, epoch: usize, step: usize) -> Result<f64> {
    let v = f64::from(loss.item()?);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{what} = {v} at epoch {epoch}, step {step}")))
    }
}

fn update(
    opt: &mut Adam<f32>,
    params: &Params<f32>,
    mut grads: Grads<f32>,
    cfg: &TrainConfig,
    lr: f64,
    what: &str,
    epoch: usize,
    step: usize,
) -> Result<()> {
    if let Some(c) = cfg.grad_clip {
        grads.clip_norm(params, c);
    }
    opt.step(params, &grads, lr)?;
    if cfg.check_finite_params && !params.all_finite() {
        return Err(Error::NonFinite(format!(
            "{what} parameters after epoch {epoch}, step {step}"
        )));
    }
    Ok(())
}

pub struct Stage1Output {
    pub generator: CveNet,
    /// Per-step `lp`, per-epoch `lp_epoch_mean` and `lr`.
    pub history: LossHistory,
}

impl Stage1Output {
    pub fn epoch_means(&self) -> Vec<f64> {
        self.history.series("lp_epoch_mean")
    }
}

/// Stage 1 from a freshly initialized generator.
pub fn stage1_train(data: &PairDataset, net: &NetConfig, cfg: &TrainConfig) -> Result<Stage1Output> {
    stage1_continue(CveNet::new(net)?, data, cfg)
}

/// Stage 1 starting from an existing generator.
pub fn stage1_continue(generator: CveNet, data: &PairDataset, cfg: &TrainConfig) -> Result<Stage1Output> {
    cfg.validate()?;
    check_dataset(data, generator.config())?;
    let mut opt = Adam::new(cfg.adam(), generator.params());
    let mut history = LossHistory::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let order = epoch_order(cfg.seed, epoch, data.len(), cfg.shuffle);
        let mut sum = 0.0;
        let mut count = 0;
        for idx in order.chunks(cfg.batch_size) {
            let (x, y) = data.batch(idx);
            let out = generator.forward(&x.to_tensor())?;
            let loss = perceptual_loss_lp(&out, &y.to_tensor())?;
            let v = finite_loss(&loss, "perceptual loss", epoch, step)?;
            update(&mut opt, generator.params(), loss.backward()?, cfg, lr, "generator", epoch, step)?;
            history.push(epoch, step, "lp", v);
            sum += v;
            count += 1;
            step += 1;
        }
        let mean = sum / count as f64;
        history.push(epoch, step, "lp_epoch_mean", mean);
        history.push(epoch, step, "lr", lr);
        info!("stage 1 epoch {epoch}: mean L_P {mean:.6}, lr {lr:e}");
    }
    Ok(Stage1Output { generator, history })
}

/// Feature points seen by one generator step.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureLog {
    pub step: usize,
    pub real: FeatureBatch,
    pub fake: FeatureBatch,
}

pub struct Stage2Output {
    pub generator: CveNet,
    pub discriminator: Discriminator,
    /// Per-step `d_loss`, `g_lp`, `g_adv`, `g_total`, plus per-epoch `lr`.
    pub history: LossHistory,
    pub features: Vec<FeatureLog>,
}

/// Stage 2: per batch one discriminator step on detached fakes, then one
/// generator step on `L_P + adv_weight * adversarial`.
pub fn stage2_train(
    generator: CveNet,
    discriminator: Option<Discriminator>,
    data: &PairDataset,
    cfg: &TrainConfig,
) -> Result<Stage2Output> {
    cfg.validate()?;
    check_dataset(data, generator.config())?;
    let discriminator = match discriminator {
        Some(d) if d.config() != generator.config() => {
            return Err(Error::Checkpoint(
                "discriminator configuration differs from the generator's".into(),
            ))
        }
        Some(d) => d,
        None => Discriminator::new(generator.config())?,
    };
    let sphere = cfg.sphere(generator.config().feature_dim);
    let mut g_opt = Adam::new(cfg.adam(), generator.params());
    let mut d_opt = Adam::new(cfg.adam(), discriminator.params());
    let mut history = LossHistory::new();
    let mut features = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        for idx in epoch_order(cfg.seed, epoch, data.len(), cfg.shuffle).chunks(cfg.batch_size) {
            let (x, y) = data.batch(idx);
            let target = y.to_tensor();
            let fake = generator.forward(&x.to_tensor())?;

            let d_real = discriminator.forward(&target)?;
            let d_fake = discriminator.forward(&fake.detach())?;
            let d_loss = discriminator_loss_tensor(&d_real, &d_fake, &sphere)?;
            let dv = finite_loss(&d_loss, "discriminator loss", epoch, step)?;
            update(&mut d_opt, discriminator.params(), d_loss.backward()?, cfg, lr, "discriminator", epoch, step)?;

            let real_feats = {
                let _g = no_grad();
                discriminator.forward(&target)?
            };
            let fake_feats = discriminator.forward(&fake)?;
            let adv = generator_adv_loss_tensor(&real_feats, &fake_feats, &sphere)?;
            let lp = perceptual_loss_lp(&fake, &target)?;
            let total = lp.add(&adv.scale(cfg.adv_weight))?;
            let gv = finite_loss(&total, "generator loss", epoch, step)?;
            let (lpv, advv) = (finite_loss(&lp, "L_P", epoch, step)?, finite_loss(&adv, "adversarial", epoch, step)?);
            update(&mut g_opt, generator.params(), total.backward()?, cfg, lr, "generator", epoch, step)?;
            if cfg.log_features {
                features.push(FeatureLog {
                    step,
                    real: FeatureBatch::from_tensor(&real_feats)?,
                    fake: FeatureBatch::from_tensor(&fake_feats)?,
                });
            }
            history.push(epoch, step, "d_loss", dv);
            history.push(epoch, step, "g_lp", lpv);
            history.push(epoch, step, "g_adv", advv);
            history.push(epoch, step, "g_total", gv);
            step += 1;
        }
        history.push(epoch, step, "lr", lr);
        info!("stage 2 epoch {epoch} done, lr {lr:e}");
    }
    Ok(Stage2Output {
        generator,
        discriminator,
        history,
        features,
    })
}
