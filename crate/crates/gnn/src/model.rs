use dfc_core::circuit::{Layout, ParamBounds, PARAMS_PER_RESONATOR};
use dfc_core::surrogate::{FrequencyGrid, SParams, SurrogateConfig};
use dfc_nn::params::glorot;
use dfc_nn::{attention_weights, Linear, ParamId, ParamStore, Tape, Tensor, Var};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GnnError, Result};
use crate::graph::{layout_to_graph, CircuitGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_head: usize,
    pub head_width: usize,
    pub slope: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            layers: 4,
            heads: 3,
            d_head: 32,
            head_width: 128,
            slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    pub w: ParamId,
    pub a_src: ParamId,
    pub a_dst: ParamId,
}

/// Two-layer dense predictor `G → width → n_points`.
#[derive(Debug, Clone, Copy)]
pub struct Predictor {
    pub hidden: Linear,
    pub out: Linear,
}

impl Predictor {
    fn forward(&self, tape: &mut Tape, store: &ParamStore, g: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, g)?;
        let h = tape.relu(h);
        Ok(self.out.forward(tape, store, h)?)
    }
}

/// Several graphs packed into one disconnected graph.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub features: Tensor,
    pub neighbors: Vec<Vec<usize>>,
    pub port_in: Vec<usize>,
    pub port_out: Vec<usize>,
}

impl GraphBatch {
    pub fn new(graphs: &[&CircuitGraph]) -> Self {
        let mut values = Vec::new();
        let mut neighbors = Vec::new();
        let (mut port_in, mut port_out) = (Vec::new(), Vec::new());
        for g in graphs {
            let off = neighbors.len();
            for row in &g.node_features {
                values.extend_from_slice(row);
            }
            for list in g.neighbors() {
                neighbors.push(list.into_iter().map(|j| j + off).collect());
            }
            port_in.push(g.ports.0 + off);
            port_out.push(g.ports.1 + off);
        }
        let m = neighbors.len();
        GraphBatch {
            features: Tensor {
                shape: vec![m, PARAMS_PER_RESONATOR],
                values,
            },
            neighbors,
            port_in,
            port_out,
        }
    }
}

/// Vars produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub nodes: Var,
    pub global: Var,
    pub re: Var,
    pub im: Var,
}

#[derive(Debug, Clone)]
pub struct GatSurrogate {
    pub cfg: GatConfig,
    pub n_points: usize,
    pub store: ParamStore,
    pub layers: Vec<Vec<HeadParams>>,
    pub re_head: Predictor,
    pub im_head: Predictor,
}

impl GatSurrogate {
    pub fn new(cfg: GatConfig, n_points: usize, seed: u64) -> Result<Self> {
        if cfg.layers == 0 || cfg.heads == 0 || cfg.d_head == 0 || n_points == 0 {
            return Err(GnnError::Contract(format!("degenerate model config {cfg:?}, {n_points} outputs")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let d_in = if l == 0 { PARAMS_PER_RESONATOR } else { cfg.d_head };
            let mut heads = Vec::new();
            for h in 0..cfg.heads {
                let w = store.add(format!("gat{l}.h{h}.w"), glorot(d_in, cfg.d_head, &mut rng))?;
                let a_src = store.add(format!("gat{l}.h{h}.a_src"), glorot(cfg.d_head, 1, &mut rng))?;
                let a_dst = store.add(format!("gat{l}.h{h}.a_dst"), glorot(cfg.d_head, 1, &mut rng))?;
                heads.push(HeadParams { w, a_src, a_dst });
            }
            layers.push(heads);
        }
        let g = 2 * cfg.d_head;
        let mut head = |name: &str, store: &mut ParamStore| -> Result<Predictor> {
            Ok(Predictor {
                hidden: Linear::new(store, &format!("{name}.0"), g, cfg.head_width, &mut rng)?,
                out: Linear::new(store, &format!("{name}.1"), cfg.head_width, n_points, &mut rng)?,
            })
        };
        let re_head = head("re", &mut store)?;
        let im_head = head("im", &mut store)?;
        Ok(GatSurrogate {
            cfg,
            n_points,
            store,
            layers,
            re_head,
            im_head,
        })
    }

    pub fn zero_params(&mut self) {
        for id in self.store.ids().collect::<Vec<_>>() {
            self.store.value_mut(id).values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    fn gat_layer(&self, tape: &mut Tape, x: Var, layer: usize, nbr: &[Vec<usize>]) -> Result<Var> {
        let heads = &self.layers[layer];
        let mut acc: Option<Var> = None;
        for hp in heads {
            let w = tape.param(&self.store, hp.w);
            let hprime = tape.matmul(x, w)?;
            let a_src = tape.param(&self.store, hp.a_src);
            let a_dst = tape.param(&self.store, hp.a_dst);
            let s = tape.matmul(hprime, a_src)?;
            let t = tape.matmul(hprime, a_dst)?;
            let agg = tape.edge_attention(hprime, s, t, nbr, self.cfg.slope)?;
            let out = tape.leaky_relu(agg, self.cfg.slope);
            acc = Some(match acc {
                None => out,
                Some(a) => tape.add(a, out)?,
            });
        }
        let sum = acc.ok_or_else(|| GnnError::Contract("layer without heads".into()))?;
        Ok(tape.scale(sum, 1.0 / heads.len() as f64))
    }

    /// GAT stack, port concatenation and both predictor heads.
    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Forward> {
        if batch.features.cols() != PARAMS_PER_RESONATOR {
            return Err(GnnError::Contract(format!(
                "node features have {} columns, expected {PARAMS_PER_RESONATOR}",
                batch.features.cols()
            )));
        }
        let mut h = tape.constant(batch.features.clone());
        for l in 0..self.layers.len() {
            h = self.gat_layer(tape, h, l, &batch.neighbors)?;
        }
        let a = tape.rows(h, &batch.port_in)?;
        let b = tape.rows(h, &batch.port_out)?;
        let global = tape.concat(&[a, b], 1)?;
        let re = self.re_head.forward(tape, &self.store, global)?;
        let im = self.im_head.forward(tape, &self.store, global)?;
        Ok(Forward {
            nodes: h,
            global,
            re,
            im,
        })
    }

    /// Global embedding `G` of one graph.
    pub fn embed(&self, graph: &CircuitGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, &GraphBatch::new(&[graph]))?;
        Ok(tape.value(f.global).values.clone())
    }

    /// Attention coefficients of every layer and head, per node in
    /// [`CircuitGraph::neighbors`] order.
    pub fn attention(&self, graph: &CircuitGraph) -> Result<Vec<Vec<Vec<Vec<f64>>>>> {
        let batch = GraphBatch::new(&[graph]);
        let mut tape = Tape::new();
        let mut h = tape.constant(batch.features.clone());
        let mut out = Vec::new();
        for l in 0..self.layers.len() {
            let mut per_head = Vec::new();
            for hp in &self.layers[l] {
                let w = tape.param(&self.store, hp.w);
                let hprime = tape.matmul(h, w)?;
                let a_src = tape.param(&self.store, hp.a_src);
                let a_dst = tape.param(&self.store, hp.a_dst);
                let s = tape.matmul(hprime, a_src)?;
                let t = tape.matmul(hprime, a_dst)?;
                per_head.push(attention_weights(
                    &tape.value(s).values,
                    &tape.value(t).values,
                    &batch.neighbors,
                    self.cfg.slope,
                ));
            }
            out.push(per_head);
            h = self.gat_layer(&mut tape, h, l, &batch.neighbors)?;
        }
        Ok(out)
    }

    /// Complex predictions for a batch of graphs.
    pub fn predict_graphs(&self, graphs: &[&CircuitGraph]) -> Result<Vec<Vec<Complex64>>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, &GraphBatch::new(graphs))?;
        let (re, im) = (tape.value(f.re), tape.value(f.im));
        let p = self.n_points;
        Ok((0..graphs.len())
            .map(|b| {
                (0..p)
                    .map(|k| Complex64::new(re.values[b * p + k], im.values[b * p + k]))
                    .collect()
            })
            .collect())
    }

    pub fn predict_s21(
        &self,
        layout: &Layout,
        bounds: &ParamBounds,
        coupling: &SurrogateConfig,
        grid: &FrequencyGrid,
    ) -> Result<SParams> {
        if grid.n_points != self.n_points {
            return Err(GnnError::Contract(format!(
                "grid has {} points, model predicts {}",
                grid.n_points, self.n_points
            )));
        }
        let g = layout_to_graph(layout, bounds, coupling);
        let s21 = self.predict_graphs(&[&g])?.remove(0);
        Ok(SParams::from_complex(*grid, s21))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dfc_core::circuit::{sample_random_layout, TemplateSpec};

    fn small() -> GatConfig {
        GatConfig {
            d_head: 8,
            head_width: 16,
            ..GatConfig::default()
        }
    }

    fn graph(seed: u64) -> CircuitGraph {
        let b = ParamBounds::default();
        let l = sample_random_layout(&TemplateSpec::chain(4), &b, seed).unwrap();
        layout_to_graph(&l, &b, &SurrogateConfig::default())
    }

    #[test]
    fn output_has_one_value_per_grid_point() {
        let grid = FrequencyGrid::default();
        let m = GatSurrogate::new(GatConfig::default(), grid.n_points, 0).unwrap();
        let b = ParamBounds::default();
        let l = sample_random_layout(&TemplateSpec::chain(4), &b, 1).unwrap();
        let s = m.predict_s21(&l, &b, &SurrogateConfig::default(), &grid).unwrap();
        assert_eq!(s.s21.len(), 256);
    }

    #[test]
    fn zero_params_predict_the_bias_for_every_layout() {
        let mut m = GatSurrogate::new(small(), 10, 0).unwrap();
        m.zero_params();
        let bias: Vec<f64> = (0..10).map(|k| k as f64 * 0.1).collect();
        let id = m.store.find("re.1.b").unwrap();
        m.store.value_mut(id).values = bias.clone();
        let out = m.predict_graphs(&[&graph(1), &graph(2), &graph(3)]).unwrap();
        for p in &out {
            for k in 0..10 {
                assert_eq!(p[k], Complex64::new(bias[k], 0.0));
            }
        }
    }

    #[test]
    fn attention_is_normalized_and_singleton_is_one() {
        let m = GatSurrogate::new(small(), 4, 5).unwrap();
        for layer in m.attention(&graph(4)).unwrap() {
            for head in layer {
                for row in head {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
        let single = CircuitGraph {
            node_features: vec![[0.5; PARAMS_PER_RESONATOR]],
            edges: vec![],
            ports: (0, 0),
        };
        for layer in m.attention(&single).unwrap() {
            for head in layer {
                assert_eq!(head, vec![vec![1.0]]);
            }
        }
    }

    #[test]
    fn batching_matches_single_graph_prediction() {
        let m = GatSurrogate::new(small(), 6, 2).unwrap();
        let (a, b) = (graph(7), graph(8));
        let both = m.predict_graphs(&[&a, &b]).unwrap();
        let one = m.predict_graphs(&[&b]).unwrap();
        for k in 0..6 {
            assert!((both[1][k] - one[0][k]).norm() < 1e-12);
        }
    }
}
