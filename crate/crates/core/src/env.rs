//! Sequential layout-editing environment.
//!
//! The agent edits one layout through a discrete catalog of parameter
//! nudges. Each step is validity-checked; invalid edits are penalized and by
//! default end the episode. Valid edits are evaluated by an [`Oracle`] and
//! rewarded by the powered change in the composite reward.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{
    is_valid, sample_layout_with, state_matrix, Layout, ParamBounds, TemplateSpec,
};
use crate::error::{CoreError, Result};
use crate::metrics::{
    response_metrics, reward_full, reward_init, step_reward, PassbandSpec, RewardBreakdown,
    RewardConfig, StepRewardConfig,
};
use crate::surrogate::{Oracle, SParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    X,
    Y,
    L,
    W,
    U,
}

impl ParamKind {
    pub const ALL: [ParamKind; 5] = [ParamKind::X, ParamKind::Y, ParamKind::L, ParamKind::W, ParamKind::U];

    /// `x`, `y` and `u` act on one resonator; `l` and `w` on all of them.
    pub fn is_per_resonator(self) -> bool {
        matches!(self, ParamKind::X | ParamKind::Y | ParamKind::U)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "x" => Ok(ParamKind::X),
            "y" => Ok(ParamKind::Y),
            "l" | "a" => Ok(ParamKind::L),
            "w" => Ok(ParamKind::W),
            "u" => Ok(ParamKind::U),
            other => Err(CoreError::Parse(format!("unknown parameter `{other}`"))),
        }
    }
}

impl fmt::Display for ParamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParamKind::X => "x",
            ParamKind::Y => "y",
            ParamKind::L => "l",
            ParamKind::W => "w",
            ParamKind::U => "u",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Resonator { index: usize, param: ParamKind, up: bool },
    Global { param: ParamKind, up: bool },
    NoOp,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = |up: bool| if up { '+' } else { '-' };
        match self {
            Action::Resonator { index, param, up } => write!(f, "{param}{}@{index}", sign(*up)),
            Action::Global { param, up } => write!(f, "{param}{}", sign(*up)),
            Action::NoOp => f.write_str("noop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionCatalog {
    pub selected: Vec<ParamKind>,
    pub n: usize,
    pub actions: Vec<Action>,
}

impl ActionCatalog {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<Action> {
        self.actions.get(index).copied()
    }
}

/// Decodes the selected parameter subset into its action list: resonator-major
/// `±` nudges for `x, y, u`, then `l+, l−, w+, w−`, then a trailing no-op.
pub fn decode_action_catalog(selected: &[ParamKind], n: usize) -> Result<ActionCatalog> {
    if selected.is_empty() {
        return Err(CoreError::Contract("action catalog needs at least one parameter".into()));
    }
    let mut sel = selected.to_vec();
    sel.sort();
    sel.dedup();
    let per: Vec<ParamKind> = sel.iter().copied().filter(|p| p.is_per_resonator()).collect();
    let mut actions = Vec::new();
    for index in 0..n {
        for &param in &per {
            actions.push(Action::Resonator { index, param, up: true });
            actions.push(Action::Resonator { index, param, up: false });
        }
    }
    for param in [ParamKind::L, ParamKind::W] {
        if sel.contains(&param) {
            actions.push(Action::Global { param, up: true });
            actions.push(Action::Global { param, up: false });
        }
    }
    actions.push(Action::NoOp);
    Ok(ActionCatalog {
        selected: sel,
        n,
        actions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Deltas {
    pub x: f64,
    pub y: f64,
    pub l: f64,
    pub w: f64,
    pub u: f64,
}

impl Default for Deltas {
    fn default() -> Self {
        Deltas {
            x: 0.1,
            y: 0.1,
            l: 0.05,
            w: 0.05,
            u: 0.01,
        }
    }
}

impl Deltas {
    pub fn of(&self, p: ParamKind) -> f64 {
        match p {
            ParamKind::X => self.x,
            ParamKind::Y => self.y,
            ParamKind::L => self.l,
            ParamKind::W => self.w,
            ParamKind::U => self.u,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleKind {
    #[default]
    Analytic,
    Gnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub deltas: Deltas,
    pub max_steps_per_episode: usize,
    pub success_iou_percent: f64,
    pub success_loss_db: f64,
    /// Probability that an invalid edit is accepted instead of ending the
    /// episode.
    pub eps_invalid: f64,
    /// Added to the step reward when an invalid edit is accepted.
    pub invalid_surcharge: f64,
    pub step_reward: StepRewardConfig,
    pub reward: RewardConfig,
    pub selected_params: Vec<ParamKind>,
    /// Total environment steps planned, used as the schedule's progress
    /// denominator. Zero means progress is always 0.
    pub planned_total_steps: u64,
    pub oracle: OracleKind,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            deltas: Deltas::default(),
            max_steps_per_episode: 128,
            success_iou_percent: 99.0,
            success_loss_db: 3.0,
            eps_invalid: 0.05,
            invalid_surcharge: -50.0,
            step_reward: StepRewardConfig::default(),
            reward: RewardConfig::default(),
            selected_params: ParamKind::ALL.to_vec(),
            planned_total_steps: 0,
            oracle: OracleKind::Analytic,
        }
    }
}

impl EnvConfig {
    pub fn check(&self) -> Result<()> {
        let d = &self.deltas;
        if ![d.x, d.y, d.l, d.w, d.u].iter().all(|v| *v > 0.0) {
            return Err(CoreError::Contract("deltas must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.eps_invalid) {
            return Err(CoreError::Contract(format!(
                "eps_invalid must lie in [0, 1), got {}",
                self.eps_invalid
            )));
        }
        if self.max_steps_per_episode == 0 {
            return Err(CoreError::Contract("max_steps_per_episode must be positive".into()));
        }
        self.reward.check()
    }

    pub fn is_success(&self, m: &RewardBreakdown) -> bool {
        m.iou_percent >= self.success_iou_percent && m.insertion_loss_db <= self.success_loss_db
    }
}

/// Applies `action` without validity checking. `u` wraps into `[0, 1)`;
/// gap fields are re-derived on every touched resonator.
pub fn apply_action(layout: &Layout, action: Action, deltas: &Deltas, bounds: &ParamBounds) -> Layout {
    let mut out = layout.clone();
    let nudge = |r: &mut crate::circuit::Resonator, p: ParamKind, up: bool| {
        let d = if up { deltas.of(p) } else { -deltas.of(p) };
        match p {
            ParamKind::X => r.x += d,
            ParamKind::Y => r.y += d,
            ParamKind::L => r.l += d,
            ParamKind::W => r.w += d,
            ParamKind::U => {
                let mut u = (r.u + d).rem_euclid(1.0);
                if u >= 1.0 {
                    u = 0.0;
                }
                r.u = u;
            }
        }
        r.rederive(bounds);
    };
    match action {
        Action::Resonator { index, param, up } => {
            if let Some(r) = out.resonators.get_mut(index) {
                nudge(r, param, up);
            }
        }
        Action::Global { param, up } => {
            for r in &mut out.resonators {
                nudge(r, param, up);
            }
        }
        Action::NoOp => {}
    }
    out
}

/// A layout together with its cached response and scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub layout: Layout,
    pub s21: SParams,
    pub breakdown: RewardBreakdown,
    /// Initialization score (IOU plus loss term), progress independent.
    pub score: f64,
}

pub fn evaluate_layout(
    layout: &Layout,
    oracle: &dyn Oracle,
    spec: &PassbandSpec,
    reward: &RewardConfig,
) -> Evaluation {
    let s21 = oracle.evaluate(layout);
    let breakdown = response_metrics(&s21, spec);
    let score = reward_init(&breakdown, reward);
    Evaluation {
        layout: layout.clone(),
        s21,
        breakdown,
        score,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepInfo {
    pub valid: bool,
    pub success: bool,
    /// The episode ended because an invalid edit was rejected.
    pub terminated_invalid: bool,
    pub episode_step: usize,
    pub breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One line of the episode trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: u64,
    pub step: usize,
    pub action_index: usize,
    pub valid: bool,
    pub step_reward: f64,
    pub total_reward: f64,
    pub iou: f64,
    pub loss_db: f64,
    pub dc: f64,
}

#[derive(Debug, Clone)]
pub struct EnvState {
    pub initial: Evaluation,
    pub current: Evaluation,
    pub episode_step: usize,
    pub episode: u64,
    pub global_step: u64,
    pub best: Evaluation,
    pub done: bool,
    episode_return: f64,
    rng: ChaCha8Rng,
}

impl EnvState {
    pub fn best_score(&self) -> f64 {
        self.best.score
    }
}

/// How to obtain the starting layout on reset.
#[derive(Debug, Clone)]
pub enum InitialState {
    Layout(Layout),
    Bri(BriRequest),
}

#[derive(Debug, Clone)]
pub struct BriRequest {
    pub template: TemplateSpec,
    pub candidates: usize,
    pub seed: u64,
}

pub struct FilterEnv {
    oracle: Arc<dyn Oracle>,
    spec: PassbandSpec,
    cfg: EnvConfig,
    bounds: ParamBounds,
    catalog: ActionCatalog,
    seed: u64,
    state: Option<EnvState>,
    trace: Option<Vec<TraceRecord>>,
}

impl fmt::Debug for FilterEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilterEnv")
            .field("oracle", &self.oracle.name())
            .field("spec", &self.spec)
            .field("actions", &self.catalog.len())
            .finish()
    }
}

impl FilterEnv {
    pub fn new(
        oracle: Arc<dyn Oracle>,
        spec: PassbandSpec,
        cfg: EnvConfig,
        bounds: ParamBounds,
        n_resonators: usize,
        seed: u64,
    ) -> Result<Self> {
        cfg.check()?;
        bounds.check()?;
        let catalog = decode_action_catalog(&cfg.selected_params, n_resonators)?;
        Ok(FilterEnv {
            oracle,
            spec,
            cfg,
            bounds,
            catalog,
            seed,
            state: None,
            trace: None,
        })
    }

    pub fn catalog(&self) -> &ActionCatalog {
        &self.catalog
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn spec(&self) -> &PassbandSpec {
        &self.spec
    }

    pub fn bounds(&self) -> &ParamBounds {
        &self.bounds
    }

    pub fn oracle(&self) -> &Arc<dyn Oracle> {
        &self.oracle
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn observation_dim(&self) -> usize {
        self.catalog.n * crate::circuit::PARAMS_PER_RESONATOR
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn evaluate(&self, layout: &Layout) -> Evaluation {
        evaluate_layout(layout, self.oracle.as_ref(), &self.spec, &self.cfg.reward)
    }

    fn observe(&self, layout: &Layout) -> Vec<f64> {
        state_matrix(layout, &self.bounds).flatten()
    }

    fn progress(&self, global_step: u64) -> f64 {
        if self.cfg.planned_total_steps == 0 {
            0.0
        } else {
            (global_step as f64 / self.cfg.planned_total_steps as f64).min(1.0)
        }
    }

    /// Starts a new round from `init`. Best-so-far carries over when the
    /// environment was already running.
    pub fn reset(&mut self, init: InitialState) -> Result<Vec<f64>> {
        let layout = match init {
            InitialState::Layout(l) => l,
            InitialState::Bri(req) => {
                bri_initialize(
                    &req.template,
                    &self.bounds,
                    &self.spec,
                    self.oracle.as_ref(),
                    &self.cfg.reward,
                    req.candidates,
                    req.seed,
                )?
                .best
                .layout
            }
        };
        if layout.len() != self.catalog.n {
            return Err(CoreError::Contract(format!(
                "layout has {} resonators, environment expects {}",
                layout.len(),
                self.catalog.n
            )));
        }
        if !is_valid(&layout, &self.bounds) {
            return Err(CoreError::Contract("reset layout is not valid".into()));
        }
        let eval = match &self.state {
            Some(s) if s.initial.layout == layout => s.initial.clone(),
            _ => self.evaluate(&layout),
        };
        let obs = self.observe(&layout);
        let state = match self.state.take() {
            Some(mut s) => {
                if eval.score > s.best.score {
                    s.best = eval.clone();
                }
                s.initial = eval.clone();
                s.current = eval;
                s.episode_step = 0;
                s.episode += 1;
                s.done = false;
                s.episode_return = 0.0;
                s
            }
            None => EnvState {
                initial: eval.clone(),
                current: eval.clone(),
                episode_step: 0,
                episode: 0,
                global_step: 0,
                best: eval,
                done: false,
                episode_return: 0.0,
                rng: ChaCha8Rng::seed_from_u64(self.seed),
            },
        };
        self.state = Some(state);
        Ok(obs)
    }

    /// Restarts the episode from the cached initial triple.
    pub fn reset_episode(&mut self) -> Result<Vec<f64>> {
        let s = self
            .state
            .as_mut()
            .ok_or_else(|| CoreError::Contract("reset_episode before reset".into()))?;
        s.current = s.initial.clone();
        s.episode_step = 0;
        s.episode += 1;
        s.done = false;
        s.episode_return = 0.0;
        let layout = s.current.layout.clone();
        Ok(self.observe(&layout))
    }

    pub fn step(&mut self, action_index: usize) -> Result<StepOutcome> {
        let action = self.catalog.get(action_index).ok_or_else(|| {
            CoreError::Contract(format!(
                "action {action_index} outside catalog of {}",
                self.catalog.len()
            ))
        })?;
        let mut state = self
            .state
            .take()
            .ok_or_else(|| CoreError::Contract("step before reset".into()))?;
        if state.done {
            self.state = Some(state);
            return Err(CoreError::Contract("episode already finished; reset first".into()));
        }
        let progress = self.progress(state.global_step);
        let r1 = reward_full(&state.current.breakdown, &self.cfg.reward, progress);
        let candidate = apply_action(&state.current.layout, action, &self.cfg.deltas, &self.bounds);
        let valid = is_valid(&candidate, &self.bounds);
        state.episode_step += 1;
        state.global_step += 1;

        let (reward, terminated_invalid) = if valid {
            let eval = self.evaluate(&candidate);
            let r2 = reward_full(&eval.breakdown, &self.cfg.reward, progress);
            if eval.score > state.best.score {
                state.best = eval.clone();
            }
            state.current = eval;
            (step_reward(r1, r2, &self.cfg.step_reward, true), false)
        } else {
            let accept = state.rng.gen::<f64>() < self.cfg.eps_invalid;
            if accept {
                let eval = self.evaluate(&candidate);
                let r2 = reward_full(&eval.breakdown, &self.cfg.reward, progress);
                state.current = eval;
                (
                    step_reward(r1, r2, &self.cfg.step_reward, true) + self.cfg.invalid_surcharge,
                    false,
                )
            } else {
                (self.cfg.step_reward.invalid_penalty(), true)
            }
        };

        let success = valid && self.cfg.is_success(&state.current.breakdown);
        let done = terminated_invalid
            || success
            || state.episode_step >= self.cfg.max_steps_per_episode;
        state.done = done;
        state.episode_return += reward;

        if let Some(trace) = self.trace.as_mut() {
            let m = &state.current.breakdown;
            trace.push(TraceRecord {
                episode: state.episode,
                step: state.episode_step,
                action_index,
                valid,
                step_reward: reward,
                total_reward: state.episode_return,
                iou: m.iou_percent,
                loss_db: m.insertion_loss_db,
                dc: m.dc_ghz,
            });
        }

        let outcome = StepOutcome {
            observation: self.observe(&state.current.layout),
            reward,
            done,
            info: StepInfo {
                valid,
                success,
                terminated_invalid,
                episode_step: state.episode_step,
                breakdown: state.current.breakdown,
            },
        };
        self.state = Some(state);
        Ok(outcome)
    }
}

#[derive(Debug, Clone)]
pub struct BriResult {
    pub best: Evaluation,
    pub best_index: usize,
    /// Score of every candidate in sampling order.
    pub scores: Vec<f64>,
}

/// Samples `candidates` random layouts from one seeded stream and keeps the
/// one with the highest initialization score; ties go to the earliest.
pub fn bri_initialize(
    template: &TemplateSpec,
    bounds: &ParamBounds,
    spec: &PassbandSpec,
    oracle: &dyn Oracle,
    reward: &RewardConfig,
    candidates: usize,
    seed: u64,
) -> Result<BriResult> {
    if candidates == 0 {
        return Err(CoreError::Contract("BRI needs at least one candidate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, Evaluation)> = None;
    let mut scores = Vec::with_capacity(candidates);
    for i in 0..candidates {
        let layout = sample_layout_with(template, bounds, &mut rng)?;
        let eval = evaluate_layout(&layout, oracle, spec, reward);
        scores.push(eval.score);
        if best.as_ref().map_or(true, |(_, b)| eval.score > b.score) {
            best = Some((i, eval));
        }
    }
    let (best_index, best) = best.expect("candidates > 0");
    Ok(BriResult {
        best,
        best_index,
        scores,
    })
}
