//! Passband extraction, passband IOU, and the reward family used for
//! initialization scoring and step-wise optimization.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::surrogate::SParams;

/// A response is "passing" where `s21_db` exceeds this level.
pub const DEFAULT_THRESHOLD_DB: f64 = -6.0;

/// Closed frequency interval in GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Band { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn intersection(&self, other: &Band) -> f64 {
        (self.hi.min(other.hi) - self.lo.max(other.lo)).max(0.0)
    }

    pub fn union(&self, other: &Band) -> f64 {
        self.width() + other.width() - self.intersection(other)
    }
}

impl From<(f64, f64)> for Band {
    fn from((lo, hi): (f64, f64)) -> Self {
        Band { lo, hi }
    }
}

fn check_bands(bands: &[Band]) -> Result<()> {
    for (i, b) in bands.iter().enumerate() {
        if !(b.lo < b.hi) {
            return Err(CoreError::Contract(format!(
                "band {i} must satisfy lo < hi, got ({}, {})",
                b.lo, b.hi
            )));
        }
        if i > 0 && !(bands[i - 1].hi < b.lo) {
            return Err(CoreError::Contract(format!(
                "bands {} and {i} are not sorted and disjoint",
                i - 1
            )));
        }
    }
    Ok(())
}

/// Target passbands of a design task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassbandSpec {
    bands: Vec<Band>,
}

impl PassbandSpec {
    pub fn new(bands: Vec<Band>) -> Result<Self> {
        if bands.is_empty() {
            return Err(CoreError::Contract("passband spec needs at least one band".into()));
        }
        check_bands(&bands)?;
        Ok(PassbandSpec { bands })
    }

    pub fn single(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![Band::new(lo, hi)])
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    /// Target centre of every band.
    pub fn centers(&self) -> Vec<f64> {
        self.bands.iter().map(Band::center).collect()
    }

    /// The target centre closest to `f`.
    pub fn nearest_center(&self, f: f64) -> f64 {
        self.centers()
            .into_iter()
            .min_by(|a, b| (a - f).abs().total_cmp(&(b - f).abs()))
            .expect("spec is non-empty")
    }
}

/// Passbands delivered by a response; possibly empty.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PassbandSet {
    pub bands: Vec<Band>,
}

/// Maximal intervals where `s21_db > threshold_db`, with crossings linearly
/// interpolated between grid points. Intervals touching the grid edge end at
/// the edge frequency.
pub fn extract_passbands(s: &SParams, threshold_db: f64) -> PassbandSet {
    let db = &s.s21_db;
    let f = |k: usize| s.grid.freq(k);
    let cross = |k0: usize, k1: usize| {
        let (d0, d1) = (db[k0], db[k1]);
        f(k0) + (threshold_db - d0) / (d1 - d0) * (f(k1) - f(k0))
    };
    let mut bands = Vec::new();
    let mut start: Option<f64> = None;
    for k in 0..db.len() {
        let above = db[k] > threshold_db;
        match (above, start) {
            (true, None) => start = Some(if k == 0 { f(0) } else { cross(k - 1, k) }),
            (false, Some(lo)) => {
                bands.push(Band::new(lo, cross(k - 1, k)));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(lo) = start {
        bands.push(Band::new(lo, f(db.len() - 1)));
    }
    // degenerate zero-width runs can appear when a sample sits exactly on
    // the threshold's neighbourhood
    bands.retain(|b| b.hi > b.lo);
    PassbandSet { bands }
}

/// IOU of two intervals in percent.
pub fn iou_single(a: &Band, b: &Band) -> f64 {
    let u = a.union(b);
    if u > 0.0 {
        100.0 * a.intersection(b) / u
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IouAggregation {
    /// Dynamic-programming table filled with running maxima of pairwise IOU.
    #[default]
    Max,
    /// Best monotone one-to-one alignment, summing pairwise IOU and dividing
    /// by the longer list length. Not used by default.
    SumAlignment,
}

/// Multi-band IOU as a fraction in `[0, 1]`.
///
/// The table `t` has `(|X|+1) × (|Y|+1)` cells initialised to zero; cell
/// `(i, j)` takes the maximum of the pairwise `I/U` of `X[i-1], Y[j-1]` (when
/// the union is positive) and the cells above and to the left.
pub fn multiband_iou(x: &[Band], y: &[Band]) -> f64 {
    let (lx, ly) = (x.len(), y.len());
    let mut t = vec![vec![0.0f64; ly + 1]; lx + 1];
    for i in 1..=lx {
        for j in 1..=ly {
            let inter = x[i - 1].intersection(&y[j - 1]);
            let uni = x[i - 1].union(&y[j - 1]);
            t[i][j] = if uni > 0.0 {
                (inter / uni).max(t[i - 1][j]).max(t[i][j - 1])
            } else {
                t[i - 1][j].max(t[i][j - 1])
            };
        }
    }
    t[lx][ly]
}

pub fn multiband_iou_with(x: &[Band], y: &[Band], agg: IouAggregation) -> f64 {
    match agg {
        IouAggregation::Max => multiband_iou(x, y),
        IouAggregation::SumAlignment => {
            let (lx, ly) = (x.len(), y.len());
            if lx == 0 || ly == 0 {
                return 0.0;
            }
            let mut t = vec![vec![0.0f64; ly + 1]; lx + 1];
            for i in 1..=lx {
                for j in 1..=ly {
                    let uni = x[i - 1].union(&y[j - 1]);
                    let p = if uni > 0.0 { x[i - 1].intersection(&y[j - 1]) / uni } else { 0.0 };
                    t[i][j] = (t[i - 1][j - 1] + p).max(t[i - 1][j]).max(t[i][j - 1]);
                }
            }
            t[lx][ly] / lx.max(ly) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub iou_percent: f64,
    pub max_s21_db: f64,
    pub insertion_loss_db: f64,
    pub dc_ghz: f64,
    pub dev_ghz: f64,
    pub total: Option<f64>,
}

impl RewardBreakdown {
    pub fn with_total(mut self, total: f64) -> Self {
        self.total = Some(total);
        self
    }
}

pub fn response_metrics(s: &SParams, spec: &PassbandSpec) -> RewardBreakdown {
    response_metrics_with(s, spec, DEFAULT_THRESHOLD_DB, IouAggregation::Max)
}

pub fn response_metrics_with(
    s: &SParams,
    spec: &PassbandSpec,
    threshold_db: f64,
    agg: IouAggregation,
) -> RewardBreakdown {
    let delivered = extract_passbands(s, threshold_db);
    let iou_percent = 100.0 * multiband_iou_with(&delivered.bands, spec.bands(), agg);
    // first maximum wins ties
    let (k_max, max_db) = s
        .s21_db
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best });
    let dc = s.grid.freq(k_max);
    RewardBreakdown {
        iou_percent,
        max_s21_db: max_db,
        insertion_loss_db: -max_db,
        dc_ghz: dc,
        dev_ghz: (dc - spec.nearest_center(dc)).abs(),
        total: None,
    }
}

/// Weights of the IOU, insertion-loss and deviation terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseWeights {
    pub iou: f64,
    pub loss: f64,
    pub dev: f64,
}

impl PhaseWeights {
    pub const UNIT: PhaseWeights = PhaseWeights {
        iou: 1.0,
        loss: 1.0,
        dev: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub schedule_enabled: bool,
    /// Progress fractions where the schedule switches phase.
    pub phase_boundaries: [f64; 2],
    pub phases: [PhaseWeights; 3],
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            alpha: 1.0,
            beta: 10.0,
            schedule_enabled: false,
            phase_boundaries: [0.3, 0.6],
            phases: [
                // loss first, then centre frequency, then IOU
                PhaseWeights { iou: 0.25, loss: 2.0, dev: 0.5 },
                PhaseWeights { iou: 0.5, loss: 1.0, dev: 2.0 },
                PhaseWeights { iou: 1.0, loss: 1.0, dev: 1.0 },
            ],
        }
    }
}

impl RewardConfig {
    pub fn weights(&self, progress: f64) -> PhaseWeights {
        if !self.schedule_enabled {
            return PhaseWeights::UNIT;
        }
        if progress < self.phase_boundaries[0] {
            self.phases[0]
        } else if progress < self.phase_boundaries[1] {
            self.phases[1]
        } else {
            self.phases[2]
        }
    }

    pub fn check(&self) -> Result<()> {
        let ws = self.phases.iter().flat_map(|p| [p.iou, p.loss, p.dev]);
        if self.alpha > 0.0 && self.beta > 0.0 && ws.into_iter().all(|w| w >= 0.0) {
            Ok(())
        } else {
            Err(CoreError::Contract(
                "reward needs alpha, beta > 0 and non-negative weights".into(),
            ))
        }
    }
}

/// `IOU + α·(6 + max s21) − β·|DC − TC|` with schedule weights.
pub fn reward_full(m: &RewardBreakdown, cfg: &RewardConfig, progress: f64) -> f64 {
    let w = cfg.weights(progress);
    w.iou * m.iou_percent + w.loss * cfg.alpha * (6.0 + m.max_s21_db) - w.dev * cfg.beta * m.dev_ghz
}

/// Initialization score `IOU + α·(6 + max s21)`.
pub fn reward_init(m: &RewardBreakdown, cfg: &RewardConfig) -> f64 {
    m.iou_percent + cfg.alpha * (6.0 + m.max_s21_db)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepRewardConfig {
    pub power: u32,
}

impl Default for StepRewardConfig {
    fn default() -> Self {
        StepRewardConfig { power: 2 }
    }
}

impl StepRewardConfig {
    pub fn invalid_penalty(&self) -> f64 {
        -(200f64.powi(self.power as i32))
    }
}

/// Signed powered reward difference. The sign is `+1` only when the reward
/// went up; the magnitude is `|r2 − r1|^power`.
pub fn step_reward(r1: f64, r2: f64, cfg: &StepRewardConfig, valid: bool) -> f64 {
    if !valid {
        return cfg.invalid_penalty();
    }
    let sign = if r1 < r2 { 1.0 } else { -1.0 };
    sign * (r2 - r1).abs().powi(cfg.power as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::FrequencyGrid;
    use proptest::prelude::*;

    fn b(lo: f64, hi: f64) -> Band {
        Band::new(lo, hi)
    }

    fn synthetic(f: impl Fn(f64) -> f64) -> SParams {
        let g = FrequencyGrid::default();
        let db: Vec<f64> = g.frequencies().into_iter().map(f).collect();
        SParams::from_db(g, &db)
    }

    #[test]
    fn flat_low_response_has_no_passband() {
        let s = synthetic(|_| -60.0);
        assert!(extract_passbands(&s, -6.0).bands.is_empty());
    }

    #[test]
    fn step_profile_passband() {
        let s = synthetic(|f| if (280.0..=320.0).contains(&f) { -3.0 } else { -60.0 });
        let p = extract_passbands(&s, -6.0);
        assert_eq!(p.bands.len(), 1);
        let step = FrequencyGrid::default().step();
        assert!((p.bands[0].lo - 280.0).abs() <= step);
        assert!((p.bands[0].hi - 320.0).abs() <= step);
    }

    #[test]
    fn two_lobes_are_sorted() {
        let s = synthetic(|f| {
            if (240.0..=250.0).contains(&f) || (300.0..=330.0).contains(&f) {
                -1.0
            } else {
                -40.0
            }
        });
        let p = extract_passbands(&s, -6.0);
        assert_eq!(p.bands.len(), 2);
        assert!(p.bands[0].hi < p.bands[1].lo);
    }

    #[test]
    fn band_touching_grid_edge() {
        let s = synthetic(|f| if f < 210.0 { -1.0 } else { -30.0 });
        let p = extract_passbands(&s, -6.0);
        assert_eq!(p.bands[0].lo, 200.0);
    }

    #[test]
    fn interpolated_crossing() {
        let g = FrequencyGrid::new(0.0, 3.0, 4).unwrap();
        let s = SParams::from_db(g, &[-10.0, -2.0, -2.0, -10.0]);
        let p = extract_passbands(&s, -6.0);
        assert_eq!(p.bands, vec![b(0.5, 2.5)]);
    }

    #[test]
    fn single_interval_iou() {
        assert_eq!(iou_single(&b(240.0, 250.0), &b(240.0, 250.0)), 100.0);
        assert!((iou_single(&b(240.0, 250.0), &b(245.0, 255.0)) - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(iou_single(&b(240.0, 250.0), &b(300.0, 310.0)), 0.0);
    }

    #[test]
    fn multiband_examples() {
        assert_eq!(multiband_iou(&[b(240.0, 250.0)], &[b(240.0, 250.0)]), 1.0);
        assert_eq!(
            multiband_iou(&[b(240.0, 245.0)], &[b(240.0, 250.0), b(300.0, 310.0)]),
            0.5
        );
        assert_eq!(multiband_iou(&[], &[b(240.0, 250.0)]), 0.0);
    }

    #[test]
    fn sum_alignment_variant_rewards_covering_all_bands() {
        let y = [b(240.0, 250.0), b(300.0, 310.0)];
        assert_eq!(multiband_iou_with(&[b(300.0, 310.0)], &y, IouAggregation::SumAlignment), 0.5);
        assert_eq!(multiband_iou_with(&y, &y, IouAggregation::SumAlignment), 1.0);
        assert_eq!(multiband_iou_with(&[b(300.0, 310.0)], &y, IouAggregation::Max), 1.0);
    }

    #[test]
    fn flat_response_metrics() {
        let spec = PassbandSpec::single(280.0, 320.0).unwrap();
        let m = response_metrics(&synthetic(|_| -60.0), &spec);
        assert_eq!(m.iou_percent, 0.0);
        assert_eq!(m.insertion_loss_db, 60.0);
    }

    #[test]
    fn lobe_at_target_centre() {
        let g = FrequencyGrid::new(200.0, 400.0, 201).unwrap();
        let db: Vec<f64> = g
            .frequencies()
            .iter()
            .map(|f| -1.44 - 0.01 * (f - 300.0).powi(2))
            .collect();
        let s = SParams::from_db(g, &db);
        let m = response_metrics(&s, &PassbandSpec::single(290.0, 310.0).unwrap());
        assert_eq!(m.dev_ghz, 0.0);
        assert!((m.max_s21_db + 1.44).abs() < 1e-12);
        assert_eq!(m.dc_ghz, 300.0);
    }

    #[test]
    fn dual_band_saturates_on_one_perfect_band() {
        let spec = PassbandSpec::new(vec![b(240.0, 250.0), b(300.0, 310.0)]).unwrap();
        let g = FrequencyGrid::new(200.0, 400.0, 2001).unwrap();
        let db: Vec<f64> = g
            .frequencies()
            .iter()
            .map(|f| if (300.0..=310.0).contains(f) { -1.0 } else { -60.0 })
            .collect();
        let m = response_metrics(&SParams::from_db(g, &db), &spec);
        assert!((m.iou_percent - 100.0).abs() < 0.5, "{}", m.iou_percent);
        assert!((m.dev_ghz - 5.0).abs() < 5.1);
    }

    fn bd(iou: f64, max_db: f64, dev: f64) -> RewardBreakdown {
        RewardBreakdown {
            iou_percent: iou,
            max_s21_db: max_db,
            insertion_loss_db: -max_db,
            dc_ghz: 300.0,
            dev_ghz: dev,
            total: None,
        }
    }

    #[test]
    fn reward_examples() {
        let c = RewardConfig::default();
        assert!((reward_full(&bd(100.0, -1.44, 0.0), &c, 0.0) - 104.56).abs() < 1e-12);
        assert!((reward_full(&bd(100.0, -1.44, 2.0), &c, 0.0) - 84.56).abs() < 1e-12);
        assert!((reward_full(&bd(0.0, -60.0, 0.0), &c, 0.0) + 54.0).abs() < 1e-12);
        assert!((reward_init(&bd(100.0, -1.44, 7.0), &c) - 104.56).abs() < 1e-12);
        assert_eq!(reward_init(&bd(0.0, -6.0, 0.0), &c), 0.0);
        let m = bd(63.0, -2.5, 0.0);
        assert_eq!(reward_init(&m, &c), reward_full(&m, &c, 0.7));
    }

    #[test]
    fn schedule_phases() {
        let c = RewardConfig {
            schedule_enabled: true,
            ..Default::default()
        };
        assert_eq!(c.weights(0.1).loss, 2.0);
        assert_eq!(c.weights(0.3).dev, 2.0);
        assert_eq!(c.weights(0.9), PhaseWeights::UNIT);
        assert_eq!(RewardConfig::default().weights(0.1), PhaseWeights::UNIT);
        let m = bd(50.0, -3.0, 1.0);
        assert!((reward_full(&m, &c, 0.0) - (0.25 * 50.0 + 2.0 * 3.0 - 0.5 * 10.0)).abs() < 1e-12);
    }

    #[test]
    fn step_reward_examples() {
        let c2 = StepRewardConfig { power: 2 };
        let c1 = StepRewardConfig { power: 1 };
        assert_eq!(step_reward(10.0, 15.0, &c2, true), 25.0);
        assert_eq!(step_reward(15.0, 10.0, &c2, true), -25.0);
        assert_eq!(step_reward(1.0, 2.0, &c1, false), -200.0);
        assert_eq!(step_reward(1.0, 2.0, &c2, false), -40000.0);
        for p in 1..=3 {
            assert_eq!(step_reward(4.0, 4.0, &StepRewardConfig { power: p }, true).abs(), 0.0);
        }
        assert_eq!(step_reward(4.0, 4.5, &StepRewardConfig { power: 3 }, true), 0.125);
    }

    #[test]
    fn spec_rejects_bad_bands() {
        assert!(PassbandSpec::single(250.0, 240.0).is_err());
        assert!(PassbandSpec::new(vec![b(240.0, 260.0), b(250.0, 270.0)]).is_err());
        assert!(PassbandSpec::new(vec![]).is_err());
    }

    #[test]
    fn breakdown_json_field_names() {
        let v = serde_json::to_value(bd(1.0, -2.0, 3.0).with_total(4.0)).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["dc_ghz", "dev_ghz", "insertion_loss_db", "iou_percent", "max_s21_db", "total"]
        );
    }

    fn band_list() -> impl Strategy<Value = Vec<Band>> {
        proptest::collection::vec((200.0..400.0f64, 200.0..400.0f64), 0..4).prop_map(|pts| {
            let mut v: Vec<f64> = pts.into_iter().flat_map(|(a, c)| [a, c]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.chunks_exact(2).map(|c| Band::new(c[0], c[1])).collect()
        })
    }

    proptest! {
        #[test]
        fn singletons_match_single_iou(a in 200.0..390.0f64, wa in 1.0..50.0f64,
                                       c in 200.0..390.0f64, wc in 1.0..50.0f64) {
            let x = b(a, a + wa);
            let y = b(c, c + wc);
            prop_assert!((multiband_iou(&[x], &[y]) - iou_single(&x, &y) / 100.0).abs() < 1e-12);
        }

        #[test]
        fn enlarging_nested_band_never_hurts(x in band_list(), y in band_list(), pick in 0usize..4,
                                              t0 in 0.0..1.0f64, t1 in 0.0..1.0f64, grow in 0.0..1.0f64) {
            prop_assume!(!y.is_empty());
            let host = y[pick % y.len()];
            let (a, c) = if t0 < t1 { (t0, t1) } else { (t1, t0) };
            prop_assume!(c - a > 1e-6);
            let inner = b(host.lo + a * host.width(), host.lo + c * host.width());
            // other delivered bands stay clear of the host target
            let mut xs: Vec<Band> = x.into_iter().filter(|q| q.intersection(&host) == 0.0 && (q.hi < host.lo || q.lo > host.hi)).collect();
            xs.push(inner);
            xs.sort_by(|p, q| p.lo.total_cmp(&q.lo));
            let before = multiband_iou(&xs, &y);
            let pos = xs.iter().position(|q| *q == inner).unwrap();
            xs[pos].hi = inner.hi + grow * (host.hi - inner.hi);
            xs[pos].lo = inner.lo - grow * (inner.lo - host.lo);
            prop_assert!(multiband_iou(&xs, &y) >= before);
        }

        #[test]
        fn reward_is_monotone(iou in 0.0..100.0f64, db in -50.0..0.0f64, dev in 0.0..50.0f64,
                              d in 0.01..5.0f64, progress in 0.0..1.0f64, sched: bool) {
            let c = RewardConfig { schedule_enabled: sched, ..Default::default() };
            let base = reward_full(&bd(iou, db, dev), &c, progress);
            prop_assert!(reward_full(&bd(iou, db, dev + d), &c, progress) < base);
            prop_assert!(reward_full(&bd(iou + d, db, dev), &c, progress) > base);
            prop_assert!(reward_full(&bd(iou, db + d, dev), &c, progress) > base);
        }

        #[test]
        fn step_reward_is_antisymmetric(r1 in -1e3..1e3f64, r2 in -1e3..1e3f64, power in 0u32..4) {
            prop_assume!(r1 != r2);
            let c = StepRewardConfig { power };
            prop_assert_eq!(step_reward(r1, r2, &c, true), -step_reward(r2, r1, &c, true));
        }
    }
}
