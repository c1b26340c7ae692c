use dfc_nn::{adam_step, AdamState, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::RolloutBuffer;
use crate::error::{AgentError, Result};
use crate::nets::ActorCritic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub lr: f64,
    pub clip: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub rollout_len: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub seeds: usize,
    /// Run the policy with dropout active while computing new log-probs.
    pub dropout_in_update: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            lr: 7e-4,
            clip: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            rollout_len: 2048,
            epochs: 4,
            minibatch: 64,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            seeds: 8,
            dropout_in_update: false,
        }
    }
}

impl PpoConfig {
    pub fn check(&self) -> Result<()> {
        let positive = self.lr > 0.0
            && self.gamma > 0.0
            && self.gae_lambda > 0.0
            && self.rollout_len > 0
            && self.epochs > 0
            && self.minibatch > 0
            && self.max_grad_norm > 0.0
            && self.seeds > 0
            && self.entropy_coef >= 0.0
            && self.value_coef >= 0.0;
        if !positive || !(0.0 < self.clip && self.clip < 1.0) || self.gamma > 1.0 || self.gae_lambda > 1.0 {
            return Err(AgentError::Contract(format!("invalid PPO config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub minibatches: usize,
}

/// Clipped-surrogate PPO over `epochs` passes of shuffled minibatches.
/// Advantages are normalized over the whole buffer first.
pub fn ppo_update<R: Rng + ?Sized>(
    ac: &mut ActorCritic,
    adam: &mut AdamState,
    buf: &RolloutBuffer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = buf.len();
    if n == 0 {
        return Ok(UpdateStats::default());
    }
    if buf.advantages.len() != n || buf.returns.len() != n {
        return Err(AgentError::Contract("advantages not computed for this buffer".into()));
    }
    let mean = buf.advantages.iter().sum::<f64>() / n as f64;
    let var = buf.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let adv: Vec<f64> = buf.advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

    let (policy_ids, value_ids) = ac.param_groups();
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch) {
            let b = idx.len();
            let mut tape = Tape::new();
            let obs = Tensor {
                shape: vec![b, ac.obs_dim],
                values: idx.iter().flat_map(|&i| buf.obs[i].iter().copied()).collect(),
            };
            let x = tape.constant(obs);
            let logits = ac
                .policy
                .forward(&mut tape, &ac.store, x, ac.dropout, cfg.dropout_in_update, rng)?;
            let logp_all = tape.log_softmax(logits);
            let actions: Vec<usize> = idx.iter().map(|&i| buf.actions[i]).collect();
            let logp = tape.gather_cols(logp_all, &actions)?;
            let old = tape.constant(Tensor::matrix(b, 1, idx.iter().map(|&i| buf.log_probs[i]).collect())?);
            let diff = tape.sub(logp, old)?;
            let ratio = tape.exp(diff);
            let a = tape.constant(Tensor::matrix(b, 1, idx.iter().map(|&i| adv[i]).collect())?);
            let s1 = tape.mul(ratio, a)?;
            let clipped = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip);
            let s2 = tape.mul(clipped, a)?;
            let surr = tape.minimum(s1, s2)?;
            let surr_mean = tape.mean(surr);
            let policy_loss = tape.scale(surr_mean, -1.0);

            let probs = tape.exp(logp_all);
            let plogp = tape.mul(probs, logp_all)?;
            let neg_ent_sum = tape.sum(plogp);
            let neg_entropy = tape.scale(neg_ent_sum, 1.0 / b as f64);

            let v = ac.value.forward(&mut tape, &ac.store, x, ac.dropout, false, rng)?;
            let ret = tape.constant(Tensor::matrix(b, 1, idx.iter().map(|&i| buf.returns[i]).collect())?);
            let verr = tape.sub(v, ret)?;
            let vsq = tape.square(verr);
            let value_loss = tape.mean(vsq);

            let ent_term = tape.scale(neg_entropy, cfg.entropy_coef);
            let val_term = tape.scale(value_loss, cfg.value_coef);
            let l1 = tape.add(policy_loss, ent_term)?;
            let loss = tape.add(l1, val_term)?;

            let r = tape.value(ratio).values.clone();
            let d = tape.value(diff).values.clone();
            stats.policy_loss += tape.value(policy_loss).item();
            stats.value_loss += tape.value(value_loss).item();
            stats.entropy -= tape.value(neg_entropy).item();
            stats.clip_fraction += r.iter().filter(|x| (*x - 1.0).abs() > cfg.clip).count() as f64 / b as f64;
            stats.approx_kl += r.iter().zip(&d).map(|(r, d)| (r - 1.0) - d).sum::<f64>() / b as f64;
            stats.minibatches += 1;

            ac.store.zero_grads();
            tape.backward(loss)?.accumulate(&mut ac.store);
            ac.store.clip_grad_norm_of(&policy_ids, cfg.max_grad_norm);
            ac.store.clip_grad_norm_of(&value_ids, cfg.max_grad_norm);
            adam_step(&mut ac.store, adam, cfg.lr);
        }
    }
    let k = stats.minibatches as f64;
    stats.policy_loss /= k;
    stats.value_loss /= k;
    stats.entropy /= k;
    stats.clip_fraction /= k;
    stats.approx_kl /= k;
    Ok(stats)
}
