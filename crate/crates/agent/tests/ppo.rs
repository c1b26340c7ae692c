use std::sync::Arc;

use dfc_agent::*;
use dfc_core::circuit::{ParamBounds, TemplateSpec};
use dfc_core::env::{BriRequest, EnvConfig, FilterEnv, InitialState};
use dfc_core::metrics::PassbandSpec;
use dfc_core::surrogate::AnalyticOracle;
use dfc_nn::gradcheck::{check_params, spread_coords};
use dfc_nn::{AdamState, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_buffer(ac: &ActorCritic, n: usize, seed: u64) -> RolloutBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = RolloutBuffer::new();
    for t in 0..n {
        let obs: Vec<f64> = (0..ac.obs_dim).map(|_| rng.gen::<f64>()).collect();
        let a = ac.act(&obs, ActMode::Sample, &mut rng).unwrap();
        buf.push(obs, a.action, a.log_prob, rng.gen_range(-1.0..1.0), a.value, t % 17 == 16);
    }
    compute_gae(&mut buf, 0.99, 0.95, 0.0);
    buf
}

#[test]
fn tiny_networks_match_finite_differences() {
    let ac = ActorCritic::with_hidden(9, 5, 8, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let obs = Tensor::matrix(4, 9, (0..36).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let actions = [0usize, 3, 4, 1];
    let net = ac.clone();
    let loss = move |store: &dfc_nn::ParamStore, tape: &mut Tape| {
        let mut no_rng = ChaCha8Rng::seed_from_u64(0);
        let x = tape.constant(obs.clone());
        let logits = net.policy.forward(tape, store, x, 0.1, false, &mut no_rng).unwrap();
        let lp = tape.log_softmax(logits);
        let g = tape.gather_cols(lp, &actions).unwrap();
        let v = net.value.forward(tape, store, x, 0.1, false, &mut no_rng).unwrap();
        let v2 = tape.square(v);
        let both = tape.concat(&[g, v2], 0).unwrap();
        tape.sum(both)
    };
    let r = check_params(&ac.store, &spread_coords(&ac.store, 1000), 1e-5, 1e-6, &loss).unwrap();
    assert!(r.max_rel_error <= 1e-4, "{r:?}");
}

#[test]
fn zero_advantages_without_entropy_leave_policy_untouched() {
    let mut ac = ActorCritic::new(36, 29, 1).unwrap();
    let mut buf = random_buffer(&ac, 256, 4);
    buf.advantages = vec![0.0; buf.len()];
    let before = ac.store.clone();
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let mut adam = AdamState::new(&ac.store);
    ppo_update(&mut ac, &mut adam, &buf, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut value_moved = false;
    for id in ac.store.ids() {
        let (a, b) = (&before.value(id).values, &ac.store.value(id).values);
        if ac.is_policy_param(ac.store.name(id)) {
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12));
        } else {
            value_moved |= a != b;
        }
    }
    assert!(value_moved);
}

#[test]
fn clipped_samples_contribute_no_policy_gradient() {
    // ratio far above 1 + clip with a positive advantage
    let mut tape = Tape::new();
    let logp = tape.var(Tensor::matrix(1, 1, vec![0.0]).unwrap());
    let old = tape.constant(Tensor::matrix(1, 1, vec![-1.0]).unwrap());
    let a = tape.constant(Tensor::matrix(1, 1, vec![2.0]).unwrap());
    let d = tape.sub(logp, old).unwrap();
    let ratio = tape.exp(d);
    let s1 = tape.mul(ratio, a).unwrap();
    let c = tape.clamp(ratio, 0.8, 1.2);
    let s2 = tape.mul(c, a).unwrap();
    let m = tape.minimum(s1, s2).unwrap();
    let loss = tape.sum(m);
    assert_eq!(tape.backward(loss).unwrap().wrt(logp).unwrap(), vec![0.0]);
}

#[test]
fn update_is_reproducible_and_stable() {
    let ac = ActorCritic::new(36, 29, 5).unwrap();
    let buf = random_buffer(&ac, 512, 6);
    let run = || {
        let mut a = ac.clone();
        let mut adam = AdamState::new(&a.store);
        let s = ppo_update(&mut a, &mut adam, &buf, &PpoConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        (a, s)
    };
    let (a, s) = run();
    let (b, t) = run();
    assert_eq!(s, t);
    for id in a.store.ids() {
        assert_eq!(a.store.value(id), b.store.value(id));
    }
    assert!(s.approx_kl.abs() < 0.5);
}

#[test]
fn policy_learns_a_one_step_bandit() {
    let mut ac = ActorCritic::with_hidden(3, 4, 32, 0).unwrap();
    let mut adam = AdamState::new(&ac.store);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let obs = vec![0.2, 0.5, 0.9];
    let cfg = PpoConfig {
        entropy_coef: 0.0,
        ..PpoConfig::default()
    };
    let p0 = ac.evaluate(&obs).unwrap().0[2];
    for _ in 0..10 {
        let mut buf = RolloutBuffer::new();
        for _ in 0..256 {
            let a = ac.act(&obs, ActMode::Sample, &mut rng).unwrap();
            let r = if a.action == 2 { 1.0 } else { -1.0 };
            buf.push(obs.clone(), a.action, a.log_prob, r, a.value, true);
        }
        compute_gae(&mut buf, cfg.gamma, cfg.gae_lambda, 0.0);
        ppo_update(&mut ac, &mut adam, &buf, &cfg, &mut rng).unwrap();
    }
    let p1 = ac.evaluate(&obs).unwrap().0[2];
    assert!(p1 > 0.9 && p1 > p0, "{p0} -> {p1}");
}

fn env(seed: u64) -> FilterEnv {
    FilterEnv::new(
        Arc::new(AnalyticOracle::default()),
        PassbandSpec::single(285.0, 315.0).unwrap(),
        EnvConfig::default(),
        ParamBounds::default(),
        4,
        seed,
    )
    .unwrap()
}

fn bri(seed: u64) -> InitialState {
    InitialState::Bri(BriRequest {
        template: TemplateSpec::chain(4),
        candidates: 50,
        seed,
    })
}

#[test]
fn zero_steps_return_the_bri_layout() {
    let mut e = env(0);
    let cfg = RldfcdoConfig {
        rounds: 1,
        steps_per_round: 0,
        ..RldfcdoConfig::default()
    };
    let r = train_rldfcdo(&mut e, bri(3), &cfg, 0).unwrap();
    assert_eq!(r.best.layout, r.initial.layout);
    assert_eq!(r.total_steps, 0);
    let zero_rounds = RldfcdoConfig { rounds: 0, ..cfg };
    assert!(train_rldfcdo(&mut env(0), bri(3), &zero_rounds, 0).is_err());
}

#[test]
fn rounds_never_lose_the_best_and_runs_are_deterministic() {
    let cfg = RldfcdoConfig {
        rounds: 3,
        steps_per_round: 300,
        ppo: PpoConfig {
            rollout_len: 150,
            ..PpoConfig::default()
        },
        ..RldfcdoConfig::default()
    };
    let a = train_rldfcdo(&mut env(1), bri(4), &cfg, 7).unwrap();
    let b = train_rldfcdo(&mut env(1), bri(4), &cfg, 7).unwrap();
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.best.layout, b.best.layout);
    let mut last = a.initial.score;
    for r in &a.rounds {
        assert!(r.start_score >= last - 1e-12 && r.best_score >= r.start_score);
        last = r.best_score;
    }
    assert!(a.best.score >= a.initial.score);
    let csv = curves_to_csv(&a.curves);
    assert!(csv.starts_with("round,step,mean_step_reward,best_score,iou,loss_db,invalid_fraction\n"));
    assert_eq!(csv.lines().count(), a.curves.len() + 1);
}
