use dfc_nn::{Linear, ParamId, ParamStore, Tape, Tensor, Var};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AgentError, Result};

pub const HIDDEN: usize = 256;
pub const DROPOUT: f64 = 0.1;

/// `in → 256 → 256 → out` with ReLU and dropout after the first layer.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
    pub l3: Linear,
}

impl Mlp {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        Ok(Mlp {
            l1: Linear::new(store, &format!("{name}.0"), d_in, hidden, rng)?,
            l2: Linear::new(store, &format!("{name}.1"), hidden, hidden, rng)?,
            l3: Linear::new(store, &format!("{name}.2"), hidden, d_out, rng)?,
        })
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        dropout: f64,
        train: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let h = self.l1.forward(tape, store, x)?;
        let h = tape.relu(h);
        let h = tape.dropout(h, dropout, train, rng)?;
        let h = self.l2.forward(tape, store, h)?;
        let h = tape.relu(h);
        Ok(self.l3.forward(tape, store, h)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActOutput {
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub probs: Vec<f64>,
}

/// Policy and value networks sharing one parameter store.
#[derive(Debug, Clone)]
pub struct ActorCritic {
    pub store: ParamStore,
    pub policy: Mlp,
    pub value: Mlp,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub dropout: f64,
}

impl ActorCritic {
    pub fn new(obs_dim: usize, n_actions: usize, seed: u64) -> Result<Self> {
        Self::with_hidden(obs_dim, n_actions, HIDDEN, seed)
    }

    pub fn with_hidden(obs_dim: usize, n_actions: usize, hidden: usize, seed: u64) -> Result<Self> {
        if obs_dim == 0 || n_actions == 0 || hidden == 0 {
            return Err(AgentError::Contract(format!(
                "degenerate network {obs_dim} → {hidden} → {n_actions}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let policy = Mlp::new(&mut store, "policy", obs_dim, hidden, n_actions, &mut rng)?;
        let value = Mlp::new(&mut store, "value", obs_dim, hidden, 1, &mut rng)?;
        Ok(ActorCritic {
            store,
            policy,
            value,
            obs_dim,
            n_actions,
            dropout: DROPOUT,
        })
    }

    pub fn is_policy_param(&self, name: &str) -> bool {
        name.starts_with("policy.")
    }

    /// Parameter ids of the policy and of the value network.
    pub fn param_groups(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        self.store.ids().partition(|id| self.is_policy_param(self.store.name(*id)))
    }

    pub fn zero_params(&mut self) {
        for id in self.store.ids().collect::<Vec<_>>() {
            self.store.value_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn check_obs(&self, obs: &[f64]) -> Result<()> {
        if obs.len() != self.obs_dim {
            return Err(AgentError::Contract(format!(
                "observation has {} values, network expects {}",
                obs.len(),
                self.obs_dim
            )));
        }
        Ok(())
    }

    /// Action probabilities and state value with dropout off.
    pub fn evaluate(&self, obs: &[f64]) -> Result<(Vec<f64>, f64)> {
        self.check_obs(obs)?;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row(obs.to_vec()));
        let mut no_rng = rand::rngs::mock::StepRng::new(0, 0);
        let logits = self.policy.forward(&mut tape, &self.store, x, self.dropout, false, &mut no_rng)?;
        let p = tape.softmax(logits, 1)?;
        let v = self.value.forward(&mut tape, &self.store, x, self.dropout, false, &mut no_rng)?;
        Ok((tape.value(p).values.clone(), tape.value(v).item()))
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], mode: ActMode, rng: &mut R) -> Result<ActOutput> {
        let (probs, value) = self.evaluate(obs)?;
        let action = match mode {
            ActMode::Greedy => argmax(&probs),
            ActMode::Sample => WeightedIndex::new(&probs)
                .map_err(|e| AgentError::Contract(format!("policy distribution: {e}")))?
                .sample(rng),
        };
        Ok(ActOutput {
            action,
            log_prob: probs[action].ln(),
            value,
            probs,
        })
    }
}

/// First index of the largest entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_uniform_policy() {
        let mut ac = ActorCritic::new(36, 29, 0).unwrap();
        ac.zero_params();
        let (p, v) = ac.evaluate(&[0.3; 36]).unwrap();
        for x in &p {
            assert!((x - 1.0 / 29.0).abs() < 1e-15);
        }
        assert_eq!(v, 0.0);
    }

    #[test]
    fn probabilities_sum_to_one_and_greedy_is_stable() {
        let ac = ActorCritic::new(36, 29, 4).unwrap();
        let obs: Vec<f64> = (0..36).map(|k| (k as f64 * 0.37).sin().abs()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ac.act(&obs, ActMode::Greedy, &mut rng).unwrap();
        assert!((a.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for _ in 0..5 {
            assert_eq!(ac.act(&obs, ActMode::Greedy, &mut rng).unwrap().action, a.action);
        }
        assert_eq!(a.action, argmax(&a.probs));
        let s = ac.act(&obs, ActMode::Sample, &mut rng).unwrap();
        assert!((s.log_prob - s.probs[s.action].ln()).abs() < 1e-15);
    }

    #[test]
    fn wrong_observation_length_is_rejected() {
        let ac = ActorCritic::new(36, 29, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(ac.act(&[0.0; 35], ActMode::Sample, &mut rng), Err(AgentError::Contract(_))));
    }
}
