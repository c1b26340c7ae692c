use dfc_core::env::{Evaluation, FilterEnv, InitialState};
use dfc_nn::AdamState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::{compute_gae, RolloutBuffer};
use crate::error::{AgentError, Result};
use crate::nets::{ActMode, ActorCritic};
use crate::ppo::{ppo_update, PpoConfig, UpdateStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RldfcdoConfig {
    pub rounds: usize,
    pub steps_per_round: usize,
    pub ppo: PpoConfig,
    /// Multiplier applied to rewards after every update; 1 disables decay.
    pub reward_decay: f64,
    /// Run one greedy episode from the round's start layout after training.
    pub greedy_eval: bool,
}

impl Default for RldfcdoConfig {
    fn default() -> Self {
        RldfcdoConfig {
            rounds: 10,
            steps_per_round: 4096,
            ppo: PpoConfig::default(),
            reward_decay: 1.0,
            greedy_eval: true,
        }
    }
}

impl RldfcdoConfig {
    pub fn check(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(AgentError::Contract("at least one round is required".into()));
        }
        if !(self.reward_decay > 0.0 && self.reward_decay <= 1.0) {
            return Err(AgentError::Contract(format!("reward_decay {} outside (0, 1]", self.reward_decay)));
        }
        self.ppo.check()
    }
}

/// One row of the training-curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub round: usize,
    pub step: u64,
    pub mean_step_reward: f64,
    pub best_score: f64,
    pub iou: f64,
    pub loss_db: f64,
    pub invalid_fraction: f64,
}

pub const CURVE_HEADER: &str = "round,step,mean_step_reward,best_score,iou,loss_db,invalid_fraction";

pub fn curves_to_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.round, r.step, r.mean_step_reward, r.best_score, r.iou, r.loss_db, r.invalid_fraction
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub start_score: f64,
    pub best_score: f64,
    pub steps: u64,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct RldfcdoResult {
    pub initial: Evaluation,
    pub best: Evaluation,
    pub rounds: Vec<RoundRecord>,
    pub curves: Vec<CurveRow>,
    pub updates: Vec<UpdateStats>,
    /// Per training step: whether the chosen edit was invalid.
    pub invalid_attempts: Vec<bool>,
    pub success: bool,
    pub total_steps: u64,
    pub agent: ActorCritic,
}

/// Multi-round optimization. Each round restarts from the best layout found
/// so far (the first from `init`), collects rollouts, runs PPO updates and
/// optionally one greedy episode. Stops once the best layout meets the
/// success predicate.
pub fn train_rldfcdo(env: &mut FilterEnv, init: InitialState, cfg: &RldfcdoConfig, seed: u64) -> Result<RldfcdoResult> {
    cfg.check()?;
    env.reset(init)?;
    let initial = current_state(env)?.initial.clone();
    let agent = ActorCritic::new(env.observation_dim(), env.catalog().len(), seed)?;
    let mut run = Run {
        adam: AdamState::new(&agent.store),
        agent,
        rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe),
        curves: Vec::new(),
        updates: Vec::new(),
        invalid_attempts: Vec::new(),
        reward_scale: 1.0,
        steps: 0,
    };
    let mut rounds = Vec::new();
    let mut success = is_success(env)?;

    for round in 0..cfg.rounds {
        if success {
            break;
        }
        let start = current_state(env)?.best.clone();
        let mut obs = env.reset(InitialState::Layout(start.layout.clone()))?;
        let mut done_steps = 0;
        while done_steps < cfg.steps_per_round && !success {
            let chunk = cfg.ppo.rollout_len.min(cfg.steps_per_round - done_steps);
            let (next_obs, stop) = run.rollout(env, obs, chunk, round, cfg)?;
            obs = next_obs;
            done_steps += chunk;
            success = stop;
        }
        if cfg.greedy_eval && !success {
            let mut o = env.reset(InitialState::Layout(start.layout.clone()))?;
            loop {
                let a = run.agent.act(&o, ActMode::Greedy, &mut run.rng)?;
                let out = env.step(a.action)?;
                if out.done {
                    break;
                }
                o = out.observation;
            }
            success = is_success(env)?;
        }
        let s = current_state(env)?;
        rounds.push(RoundRecord {
            round,
            start_score: start.score,
            best_score: s.best.score,
            steps: done_steps as u64,
            success,
        });
    }

    let best = current_state(env)?.best.clone();
    Ok(RldfcdoResult {
        initial,
        best,
        rounds,
        curves: run.curves,
        updates: run.updates,
        invalid_attempts: run.invalid_attempts,
        success,
        total_steps: run.steps,
        agent: run.agent,
    })
}

fn current_state(env: &FilterEnv) -> Result<&dfc_core::env::EnvState> {
    env.state()
        .ok_or_else(|| AgentError::Contract("environment has not been reset".into()))
}

fn is_success(env: &FilterEnv) -> Result<bool> {
    Ok(env.config().is_success(&current_state(env)?.best.breakdown))
}

struct Run {
    agent: ActorCritic,
    adam: AdamState,
    rng: ChaCha8Rng,
    curves: Vec<CurveRow>,
    updates: Vec<UpdateStats>,
    invalid_attempts: Vec<bool>,
    reward_scale: f64,
    steps: u64,
}

impl Run {
    /// Collects `n` transitions, updates the agent and records one curve
    /// row. Returns the next observation and whether success was reached.
    fn rollout(
        &mut self,
        env: &mut FilterEnv,
        mut obs: Vec<f64>,
        n: usize,
        round: usize,
        cfg: &RldfcdoConfig,
    ) -> Result<(Vec<f64>, bool)> {
        let mut buf = RolloutBuffer::new();
        let mut invalid = 0usize;
        let mut reward_sum = 0.0;
        let mut success = false;
        for _ in 0..n {
            let a = self.agent.act(&obs, ActMode::Sample, &mut self.rng)?;
            let out = env.step(a.action)?;
            self.steps += 1;
            self.invalid_attempts.push(!out.info.valid);
            invalid += usize::from(!out.info.valid);
            reward_sum += out.reward;
            buf.push(obs, a.action, a.log_prob, out.reward * self.reward_scale, a.value, out.done);
            obs = if out.done { env.reset_episode()? } else { out.observation };
            if is_success(env)? {
                success = true;
                break;
            }
        }
        let last_value = self.agent.evaluate(&obs)?.1;
        compute_gae(&mut buf, cfg.ppo.gamma, cfg.ppo.gae_lambda, last_value);
        let stats = ppo_update(&mut self.agent, &mut self.adam, &buf, &cfg.ppo, &mut self.rng)?;
        self.updates.push(stats);
        self.reward_scale *= cfg.reward_decay;

        let best = &current_state(env)?.best;
        let len = buf.len().max(1) as f64;
        self.curves.push(CurveRow {
            round,
            step: self.steps,
            mean_step_reward: reward_sum / len,
            best_score: best.score,
            iou: best.breakdown.iou_percent,
            loss_db: best.breakdown.insertion_loss_db,
            invalid_fraction: invalid as f64 / len,
        });
        Ok((obs, success))
    }
}
