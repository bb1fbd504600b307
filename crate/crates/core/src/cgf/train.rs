use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::data::{prepare_dataset, PreparedDataset};
use super::loss::{loss_and_gradients, LossComponents, LossWeights};
use super::params::CgfParams;
use super::{CgfError, FRAMES};
use crate::autodiff::{Adam, AdamConfig, AutodiffError, Checkpoint, Parameters, RngState};
use crate::demo::Demonstration;
use crate::kinematics::HandModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_q: f64,
    pub lambda_j: f64,
    pub lambda_kl: f64,
    pub lambda_c: f64,
    pub lr: f64,
    /// The learning rate halves after every this many epochs.
    pub lr_halving_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub frames: usize,
    pub points_per_cloud: usize,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_q: 1.0,
            lambda_j: 10.0,
            lambda_kl: 1e-3,
            lambda_c: 50.0,
            lr: 5e-4,
            lr_halving_epochs: 500,
            epochs: 1000,
            batch_size: 32,
            frames: FRAMES,
            points_per_cloud: 2000,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CgfError> {
        let lambdas = [self.lambda_q, self.lambda_j, self.lambda_kl, self.lambda_c];
        if lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(CgfError::Config("loss weights must be finite and non-negative".into()));
        }
        if self.frames != FRAMES {
            return Err(CgfError::Config(format!("the encoder layout fixes frames at {FRAMES}")));
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.lr_halving_epochs == 0 || self.points_per_cloud == 0 {
            return Err(CgfError::Config("lr, batch size, halving period and point count must be positive".into()));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_q: self.lambda_q,
            lambda_j: self.lambda_j,
            lambda_kl: self.lambda_kl,
            lambda_c: self.lambda_c,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * 0.5f64.powi((epoch / self.lr_halving_epochs) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossComponents,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: CgfParams,
    pub history: Vec<EpochRecord>,
    pub optimizer: Adam,
    pub rng: RngState,
}

impl TrainOutcome {
    pub fn to_checkpoint(&self, epoch: usize) -> Checkpoint {
        let mut ck = self.params.to_checkpoint();
        ck.metadata.push(("epoch".into(), epoch.to_string()));
        ck.optimizer = Some(self.optimizer.clone());
        ck.rng = Some(self.rng);
        ck
    }
}

/// Standard-normal noise of one demonstration in one epoch. It depends on
/// the demo id rather than its position, so repeated demos draw the same
/// sample.
pub fn demo_noise(seed: u64, epoch: usize, id: &str, dim: usize) -> Vec<f64> {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((epoch as u64).to_le_bytes());
    h.update(id.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn run_epoch(
    params: &mut CgfParams,
    adam: &mut Adam,
    model: &HandModel,
    data: &PreparedDataset,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LossComponents, CgfError> {
    let mut order: Vec<usize> = (0..data.demos.len()).collect();
    order.shuffle(rng);
    let weights = cfg.weights();
    let lr = cfg.lr_at(epoch);
    let total_weight: f64 = data.demos.iter().map(|d| d.weight).sum();
    let mut acc = LossComponents::default();
    for batch in order.chunks(cfg.batch_size) {
        let noise: Vec<Vec<f64>> = batch
            .iter()
            .map(|i| demo_noise(cfg.seed, epoch, &data.demos[*i].id, params.latent_dim()))
            .collect();
        let (c, grads) = loss_and_gradients(params, model, data, batch, &noise, &weights)?;
        if !c.total.is_finite() {
            return Err(AutodiffError::NonFiniteGradient { param: "loss".into() }.into());
        }
        adam.step(&mut params.params_mut(), &grads, lr)?;
        let share = batch.iter().map(|i| data.demos[*i].weight).sum::<f64>() / total_weight;
        acc.total += share * c.total;
        acc.l_q += share * c.l_q;
        acc.l_j += share * c.l_j;
        acc.l_kl += share * c.l_kl;
        acc.l_contact += share * c.l_contact;
    }
    Ok(acc)
}

/// Trains from scratch with Adam. Loss records are per epoch, averaged
/// over batches by demonstration weight. When `checkpoint_dir` is given,
/// checkpoints are written every `checkpoint_every` epochs and at the end.
pub fn train(
    model: &HandModel,
    demos: &[Demonstration],
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, CgfError> {
    cfg.validate()?;
    let data = prepare_dataset(model, demos, cfg.frames, cfg.points_per_cloud, cfg.seed)?;
    let mut params = CgfParams::new(cfg.seed);
    let mut adam = Adam::new(AdamConfig::default(), &params.named_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs);
    info!(
        "training on {} demonstrations ({} clouds) for {} epochs",
        data.demos.len(),
        data.clouds.len(),
        cfg.epochs
    );
    for epoch in 0..cfg.epochs {
        let before = params.clone();
        let before_adam = adam.clone();
        match run_epoch(&mut params, &mut adam, model, &data, cfg, epoch, &mut rng) {
            Ok(loss) => {
                debug!("epoch {epoch}: total {:.6e} q {:.3e} j {:.3e}", loss.total, loss.l_q, loss.l_j);
                history.push(EpochRecord {
                    epoch,
                    lr: cfg.lr_at(epoch),
                    loss,
                });
            }
            Err(CgfError::Autodiff(AutodiffError::NonFiniteGradient { .. })) => {
                if let Some(dir) = checkpoint_dir {
                    let outcome = TrainOutcome {
                        params: before.clone(),
                        history: history.clone(),
                        optimizer: before_adam,
                        rng: RngState::capture(&rng),
                    };
                    outcome.to_checkpoint(epoch).save(&dir.join("last_good.ckpt"))?;
                }
                return Err(CgfError::NonFinite {
                    epoch,
                    last_good: Box::new(before),
                });
            }
            Err(e) => return Err(e),
        }
        let done = epoch + 1;
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.epochs {
                let outcome = TrainOutcome {
                    params: params.clone(),
                    history: Vec::new(),
                    optimizer: adam.clone(),
                    rng: RngState::capture(&rng),
                };
                outcome.to_checkpoint(done).save(&dir.join(format!("epoch_{done:05}.ckpt")))?;
            }
        }
    }
    let outcome = TrainOutcome {
        params,
        history,
        optimizer: adam,
        rng: RngState::capture(&rng),
    };
    if let Some(dir) = checkpoint_dir {
        outcome.to_checkpoint(cfg.epochs).save(&dir.join("final.ckpt"))?;
    }
    Ok(outcome)
}
