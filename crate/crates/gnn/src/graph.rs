use dfc_core::circuit::{state_matrix, Layout, ParamBounds, PARAMS_PER_RESONATOR};
use dfc_core::surrogate::{coupled_pairs, SurrogateConfig};

/// Layout as a graph: one node per resonator, an undirected edge per coupled
/// pair. Self-loops are implicit and added by [`CircuitGraph::neighbors`].
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitGraph {
    pub node_features: Vec<[f64; PARAMS_PER_RESONATOR]>,
    /// Undirected pairs `(i, j)` with `i < j`.
    pub edges: Vec<(usize, usize)>,
    pub ports: (usize, usize),
}

impl CircuitGraph {
    pub fn len(&self) -> usize {
        self.node_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_features.is_empty()
    }

    /// Neighbor lists with the node itself first.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = (0..self.len()).map(|i| vec![i]).collect();
        for &(i, j) in &self.edges {
            out[i].push(j);
            out[j].push(i);
        }
        out
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        let (a, b) = (i.min(j), i.max(j));
        self.edges.contains(&(a, b))
    }

    pub fn without_edge(&self, i: usize, j: usize) -> Self {
        let (a, b) = (i.min(j), i.max(j));
        let mut g = self.clone();
        g.edges.retain(|e| *e != (a, b));
        g
    }

    /// Relabels nodes so that old node `perm[k]` becomes node `k`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inv = vec![0; perm.len()];
        for (k, &p) in perm.iter().enumerate() {
            inv[p] = k;
        }
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .map(|&(i, j)| (inv[i].min(inv[j]), inv[i].max(inv[j])))
            .collect();
        edges.sort_unstable();
        CircuitGraph {
            node_features: perm.iter().map(|&p| self.node_features[p]).collect(),
            edges,
            ports: (inv[self.ports.0], inv[self.ports.1]),
        }
    }
}

pub fn layout_to_graph(layout: &Layout, bounds: &ParamBounds, cfg: &SurrogateConfig) -> CircuitGraph {
    CircuitGraph {
        node_features: state_matrix(layout, bounds).rows,
        edges: coupled_pairs(layout, cfg),
        ports: (0, layout.len().saturating_sub(1)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use dfc_core::circuit::Resonator;

    fn pair(gap: f64) -> Layout {
        let b = ParamBounds::default();
        let l = 0.7;
        Layout::new(
            "chain-2",
            vec![
                Resonator::new(2.0, 3.0, l, 0.1, 0.25, &b),
                Resonator::new(2.0 + l + gap, 3.0, l, 0.1, 0.75, &b),
            ],
        )
    }

    #[test]
    fn close_pair_has_one_edge() {
        let cfg = SurrogateConfig::default();
        let g = layout_to_graph(&pair(0.5 * cfg.g_threshold()), &ParamBounds::default(), &cfg);
        assert_eq!(g.edges, vec![(0, 1)]);
        assert_eq!(g.neighbors(), vec![vec![0, 1], vec![1, 0]]);
    }

    #[test]
    fn distant_pair_has_only_self_loops() {
        let cfg = SurrogateConfig::default();
        let g = layout_to_graph(&pair(1.5 * cfg.g_threshold()), &ParamBounds::default(), &cfg);
        assert!(g.edges.is_empty());
        assert_eq!(g.neighbors(), vec![vec![0], vec![1]]);
    }
}
