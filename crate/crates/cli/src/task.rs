//! Design tasks and the bandwidth-bucket task sampler.

use anyhow::{bail, Result};
use dfc_core::env::OracleKind;
use dfc_core::metrics::{Band, PassbandSpec};
use dfc_core::surrogate::FrequencyGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;

/// Auto-generated centres keep the band inside this range.
pub const CENTER_RANGE: (f64, f64) = (230.0, 370.0);

/// Bandwidths (GHz) drawn uniformly from `[lo, hi]` for a share of tasks
/// proportional to `weight`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthBucket {
    pub lo: f64,
    pub hi: f64,
    pub weight: f64,
}

impl BandwidthBucket {
    pub fn table() -> Vec<BandwidthBucket> {
        [(10.0, 19.0, 500.0), (20.0, 40.0, 200.0), (41.0, 59.0, 300.0), (60.0, 80.0, 500.0)]
            .iter()
            .map(|&(lo, hi, weight)| BandwidthBucket { lo, hi, weight })
            .collect()
    }

    pub fn is_valid(&self) -> bool {
        self.lo > 0.0 && self.lo <= self.hi && self.weight > 0.0 && self.hi < CENTER_RANGE.1 - CENTER_RANGE.0
    }
}

/// Splits `n` tasks across buckets by largest remainder. Ties on the
/// remainder go to the earlier bucket.
pub fn bucket_counts(n: usize, buckets: &[BandwidthBucket]) -> Vec<usize> {
    let total: f64 = buckets.iter().map(|b| b.weight).sum();
    let quotas: Vec<f64> = buckets.iter().map(|b| n as f64 * b.weight / total).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q + 1e-9).floor() as usize).collect();
    let mut order: Vec<usize> = (0..buckets.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignTask {
    pub name: String,
    pub bands: Vec<Band>,
    pub oracle: OracleKind,
    pub seed: u64,
    /// Zero runs BRI only.
    pub rounds: usize,
    pub steps_per_round: usize,
}

impl DesignTask {
    /// Oracle and budgets come from `cfg`.
    pub fn new(name: impl Into<String>, bands: Vec<Band>, seed: u64, cfg: &PipelineConfig) -> Self {
        DesignTask {
            name: name.into(),
            bands,
            oracle: cfg.env.oracle,
            seed,
            rounds: cfg.rldfcdo.rounds,
            steps_per_round: cfg.rldfcdo.steps_per_round,
        }
    }

    pub fn check(&self, grid: &FrequencyGrid) -> Result<()> {
        if !(1..=2).contains(&self.bands.len()) {
            bail!("a task has one or two target bands, got {}", self.bands.len());
        }
        for b in &self.bands {
            if b.lo < grid.f_min || b.hi > grid.f_max {
                bail!("band [{}, {}] leaves the grid [{}, {}]", b.lo, b.hi, grid.f_min, grid.f_max);
            }
        }
        if self.rounds > 0 && self.steps_per_round == 0 {
            bail!("steps_per_round must be positive when rounds > 0");
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<PassbandSpec> {
        Ok(PassbandSpec::new(self.bands.clone())?)
    }
}

/// Parses `"240:250"` or `"240:250,300:310"`.
pub fn parse_bands(text: &str) -> Result<Vec<Band>> {
    text.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| anyhow::anyhow!("band '{part}' is not lo:hi"))?;
            let (lo, hi): (f64, f64) = (lo.trim().parse()?, hi.trim().parse()?);
            if !(lo < hi) {
                bail!("band '{part}' needs lo < hi");
            }
            Ok(Band::new(lo, hi))
        })
        .collect()
}

/// `n` single-band tasks over `cfg.buckets`, bucket by bucket, each with a uniform bandwidth
/// from its bucket and a uniform centre keeping the band in
/// [`CENTER_RANGE`]. Task `i` gets seed `seed + i`.
pub fn sample_tasks(n: usize, cfg: &PipelineConfig, seed: u64) -> Vec<DesignTask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts = bucket_counts(n, &cfg.buckets);
    let mut tasks = Vec::with_capacity(n);
    for (b, &count) in cfg.buckets.iter().zip(&counts) {
        for _ in 0..count {
            let bw = if b.hi > b.lo { rng.gen_range(b.lo..=b.hi) } else { b.lo };
            let lo_c = CENTER_RANGE.0 + bw / 2.0;
            let hi_c = CENTER_RANGE.1 - bw / 2.0;
            let c = rng.gen_range(lo_c..=hi_c);
            let i = tasks.len();
            let band = Band::new(c - bw / 2.0, c + bw / 2.0);
            tasks.push(DesignTask::new(format!("task-{i:04}"), vec![band], seed.wrapping_add(i as u64), cfg));
        }
    }
    tasks
}
