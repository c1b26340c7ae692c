use dfc_core::circuit::{Layout, ParamBounds};
use dfc_core::surrogate::{FrequencyGrid, Oracle, SParams, SurrogateConfig};

use crate::error::{GnnError, Result};
use crate::model::GatSurrogate;

/// Trained GAT used as a drop-in response oracle.
#[derive(Debug, Clone)]
pub struct GnnOracle {
    pub model: GatSurrogate,
    pub bounds: ParamBounds,
    pub coupling: SurrogateConfig,
    pub grid: FrequencyGrid,
}

impl GnnOracle {
    pub fn new(model: GatSurrogate, bounds: ParamBounds, coupling: SurrogateConfig, grid: FrequencyGrid) -> Result<Self> {
        if model.n_points != grid.n_points {
            return Err(GnnError::Contract(format!(
                "model predicts {} points, grid has {}",
                model.n_points, grid.n_points
            )));
        }
        Ok(GnnOracle {
            model,
            bounds,
            coupling,
            grid,
        })
    }
}

impl Oracle for GnnOracle {
    fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    fn evaluate(&self, layout: &Layout) -> SParams {
        match self.model.predict_s21(layout, &self.bounds, &self.coupling, &self.grid) {
            Ok(s) => s,
            Err(_) => SParams::from_db(self.grid, &vec![-120.0; self.grid.n_points]),
        }
    }

    fn name(&self) -> &'static str {
        "gnn"
    }
}
