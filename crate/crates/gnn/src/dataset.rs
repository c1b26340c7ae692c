use std::io::{BufRead, Write};
use std::path::Path;

use dfc_core::circuit::{sample_layout_with, Layout, ParamBounds, TemplateSpec};
use dfc_core::surrogate::{FrequencyGrid, Oracle, SParams};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GnnError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub layout: Layout,
    pub s21: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub grid: FrequencyGrid,
    pub samples: Vec<Sample>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    grid: FrequencyGrid,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    layout: Layout,
    s21_csv: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// JSON lines: a header `{grid, count}` followed by one
    /// `{layout, s21_csv}` record per sample.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = Header {
            grid: self.grid,
            count: self.samples.len(),
        };
        writeln!(f, "{}", serde_json::to_string(&header).map_err(|e| GnnError::Dataset(e.to_string()))?)?;
        for s in &self.samples {
            let rec = Record {
                layout: s.layout.clone(),
                s21_csv: SParams::from_complex(self.grid, s.s21.clone()).to_csv(),
            };
            writeln!(f, "{}", serde_json::to_string(&rec).map_err(|e| GnnError::Dataset(e.to_string()))?)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = f.lines();
        let first = lines
            .next()
            .ok_or_else(|| GnnError::Dataset("empty dataset file".into()))??;
        let header: Header = serde_json::from_str(&first).map_err(|e| GnnError::Dataset(format!("header: {e}")))?;
        let mut samples = Vec::with_capacity(header.count);
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| GnnError::Dataset(format!("record {k}: {e}")))?;
            let s = SParams::from_csv(&rec.s21_csv)?;
            if s.s21.len() != header.grid.n_points {
                return Err(GnnError::Dataset(format!(
                    "record {k}: {} points, grid has {}",
                    s.s21.len(),
                    header.grid.n_points
                )));
            }
            samples.push(Sample {
                layout: rec.layout,
                s21: s.s21,
            });
        }
        if samples.len() != header.count {
            return Err(GnnError::Dataset(format!(
                "header promises {} records, found {}",
                header.count,
                samples.len()
            )));
        }
        Ok(Dataset {
            grid: header.grid,
            samples,
        })
    }
}

/// `n_samples` random valid layouts labelled by `oracle`.
pub fn generate_dataset(
    template: &TemplateSpec,
    bounds: &ParamBounds,
    oracle: &dyn Oracle,
    n_samples: usize,
    rng_seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(GnnError::Contract("dataset needs at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut samples = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let layout = sample_layout_with(template, bounds, &mut rng)?;
        let s21 = oracle.evaluate(&layout).s21;
        samples.push(Sample { layout, s21 });
    }
    Ok(Dataset {
        grid: *oracle.grid(),
        samples,
    })
}
