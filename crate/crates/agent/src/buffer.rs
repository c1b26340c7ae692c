/// One rollout of transitions plus the derived targets.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBuffer {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn push(&mut self, obs: Vec<f64>, action: usize, log_prob: f64, reward: f64, value: f64, done: bool) {
        self.obs.push(obs);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    pub fn clear(&mut self) {
        *self = Self::default();
    }
}

/// Generalized advantage estimation. `last_value` bootstraps the state after
/// the final transition when that transition did not end an episode.
pub fn compute_gae(buf: &mut RolloutBuffer, gamma: f64, lambda: f64, last_value: f64) {
    let n = buf.len();
    buf.advantages = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let nonterminal = if buf.dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { buf.values[t + 1] } else { last_value };
        let delta = buf.rewards[t] + gamma * next_value * nonterminal - buf.values[t];
        gae = delta + gamma * lambda * nonterminal * gae;
        buf.advantages[t] = gae;
    }
    buf.returns = buf.advantages.iter().zip(&buf.values).map(|(a, v)| a + v).collect();
}
