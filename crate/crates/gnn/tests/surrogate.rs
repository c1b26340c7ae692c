use dfc_core::circuit::{sample_random_layout, ParamBounds, TemplateSpec};
use dfc_core::surrogate::{build_coupling_graph, AnalyticOracle, SurrogateConfig};
use dfc_gnn::model::GraphBatch;
use dfc_gnn::train::SurrogateTrainConfig;
use dfc_gnn::*;
use dfc_nn::gradcheck::{check_params, spread_coords};
use dfc_nn::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn layout(seed: u64, n: usize) -> dfc_core::Layout {
    sample_random_layout(&TemplateSpec::chain(n), &ParamBounds::default(), seed).unwrap()
}

#[test]
fn graph_edges_agree_with_coupling_graph() {
    let cfg = SurrogateConfig::default();
    let b = ParamBounds::default();
    for seed in 0..200 {
        let n = [2, 3, 4, 5, 6, 8][seed as usize % 6];
        let l = layout(seed, n);
        let g = layout_to_graph(&l, &b, &cfg);
        let mut cg: Vec<(usize, usize)> = build_coupling_graph(&l, &cfg).edges.iter().map(|e| (e.i, e.j)).collect();
        cg.sort_unstable();
        assert_eq!(g.edges, cg, "seed {seed}");
        for &(i, j) in &g.edges {
            assert!(g.neighbors()[i].contains(&j) && g.neighbors()[j].contains(&i));
        }
    }
}

#[test]
fn interior_relabeling_leaves_global_embedding_unchanged() {
    let m = GatSurrogate::new(GatConfig::default(), 16, 3).unwrap();
    let (b, cfg) = (ParamBounds::default(), SurrogateConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..10 {
        let n = [4, 5, 6, 8][seed % 4];
        let g = layout_to_graph(&layout(seed as u64, n), &b, &cfg);
        let mut interior: Vec<usize> = (1..n - 1).collect();
        for i in (1..interior.len()).rev() {
            interior.swap(i, rng.gen_range(0..=i));
        }
        let mut perm = vec![0];
        perm.extend(interior);
        perm.push(n - 1);
        let p = g.permuted(&perm);
        let (a, c) = (m.embed(&g).unwrap(), m.embed(&p).unwrap());
        for (x, y) in a.iter().zip(&c) {
            assert!((x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn removing_an_edge_only_changes_its_endpoints_attention() {
    let m = GatSurrogate::new(GatConfig::default(), 4, 8).unwrap();
    let (b, cfg) = (ParamBounds::default(), SurrogateConfig::default());
    let mut tested = 0;
    for seed in 0..40 {
        let g = layout_to_graph(&layout(seed, 5), &b, &cfg);
        let Some(&(i, j)) = g.edges.first() else { continue };
        let cut = g.without_edge(i, j);
        let (before, after) = (m.attention(&g).unwrap(), m.attention(&cut).unwrap());
        for h in 0..3 {
            for node in 0..g.len() {
                if node != i && node != j {
                    assert_eq!(before[0][h][node], after[0][h][node]);
                } else {
                    assert_eq!(after[0][h][node].len() + 1, before[0][h][node].len());
                }
            }
        }
        tested += 1;
    }
    assert!(tested > 10);
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let m = GatSurrogate::new(GatConfig::default(), 256, 4).unwrap();
    let (b, cfg) = (ParamBounds::default(), SurrogateConfig::default());
    let g = layout_to_graph(&layout(2, 3), &b, &cfg);
    let batch = GraphBatch::new(&[&g]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w: Vec<f64> = (0..512).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let model = m.clone();
    let loss = move |store: &dfc_nn::ParamStore, tape: &mut Tape| {
        let mut mm = model.clone();
        mm.store = store.clone();
        let f = mm.forward(tape, &batch).unwrap();
        let both = tape.concat(&[f.re, f.im], 1).unwrap();
        let c = tape.constant(Tensor::row(w.clone()));
        let p = tape.mul(both, c).unwrap();
        let s = tape.sum(p);
        let q = tape.square(s);
        tape.scale(q, 0.5)
    };
    let r = check_params(&m.store, &spread_coords(&m.store, 6), 1e-5, 1e-6, &loss).unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn training_progresses_and_schedule_halves() {
    let cfg = SurrogateTrainConfig::default();
    assert_eq!(cfg.lr_at(201), 0.5 * cfg.lr_at(1));
    assert_eq!(cfg.lr_at(200), cfg.lr_at(1));

    let b = ParamBounds::default();
    let data = generate_dataset(&TemplateSpec::chain(4), &b, &AnalyticOracle::default(), 600, 5).unwrap();
    let small = GatConfig {
        d_head: 16,
        head_width: 64,
        ..GatConfig::default()
    };
    let tc = SurrogateTrainConfig {
        max_epochs: 20,
        patience: 19,
        lr: 1e-3,
        ..cfg
    };
    let (_, r) = train_surrogate(&data, &b, &SurrogateConfig::default(), small, &tc, 0).unwrap();
    assert!(r.epochs.last().unwrap().train_loss < r.epochs[0].train_loss);
}

#[test]
fn early_stopping_fires_after_patience() {
    let b = ParamBounds::default();
    let data = generate_dataset(&TemplateSpec::chain(3), &b, &AnalyticOracle::default(), 40, 5).unwrap();
    let tiny = GatConfig {
        d_head: 4,
        head_width: 8,
        ..GatConfig::default()
    };
    let tc = SurrogateTrainConfig {
        max_epochs: 400,
        patience: 3,
        lr: 0.0,
        ..Default::default()
    };
    let (_, r) = train_surrogate(&data, &b, &SurrogateConfig::default(), tiny, &tc, 0).unwrap();
    assert!(r.stopped_early);
    assert_eq!(r.best_epoch, 1);
    assert_eq!(r.epochs.len(), 1 + 3);
}

#[test]
fn empty_or_tiny_dataset_is_rejected() {
    let b = ParamBounds::default();
    let mut data = generate_dataset(&TemplateSpec::chain(3), &b, &AnalyticOracle::default(), 1, 5).unwrap();
    let r = train_surrogate(&data, &b, &SurrogateConfig::default(), GatConfig::default(), &SurrogateTrainConfig::default(), 0);
    assert!(matches!(r, Err(GnnError::Contract(_))));
    data.samples.clear();
    let r = train_surrogate(&data, &b, &SurrogateConfig::default(), GatConfig::default(), &SurrogateTrainConfig::default(), 0);
    assert!(matches!(r, Err(GnnError::Contract(_))));
}

#[test]
fn dataset_file_round_trip() {
    let b = ParamBounds::default();
    let data = generate_dataset(&TemplateSpec::chain(4), &b, &AnalyticOracle::default(), 12, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.jsonl");
    data.save(&p).unwrap();
    let back = Dataset::load(&p).unwrap();
    assert_eq!(back.len(), 12);
    for (a, c) in data.samples.iter().zip(&back.samples) {
        assert_eq!(a.layout, c.layout);
        for (x, y) in a.s21.iter().zip(&c.s21) {
            assert!((x - y).norm() <= 1e-8 * x.norm().max(1e-6));
        }
    }
}
