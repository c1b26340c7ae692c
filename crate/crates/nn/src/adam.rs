use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros = || store.ids().map(|id| Tensor::zeros(&store.value(id).shape)).collect();
        AdamState {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update from the store's gradients, which are
/// zeroed afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let g = store.grad(id).values.clone();
        let (m, v) = (&mut state.m[k].values, &mut state.v[k].values);
        let p = &mut store.value_mut(id).values;
        for i in 0..g.len() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + EPS);
        }
    }
    store.zero_grads();
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("p", Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_grads_leave_params_and_count_the_step() {
        let mut s = store();
        let mut st = AdamState::new(&s);
        let before = s.value(s.find("p").unwrap()).clone();
        adam_step(&mut s, &mut st, 1e-3);
        assert_eq!(st.step, 1);
        assert_eq!(s.value(s.find("p").unwrap()), &before);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut s = store();
        let id = s.find("p").unwrap();
        let mut st = AdamState::new(&s);
        let before = s.value(id).clone();
        for _ in 0..5 {
            s.add_grad(id, &[1.0, -2.0, 0.3]);
            adam_step(&mut s, &mut st, 0.0);
        }
        assert_eq!(s.value(id), &before);
        assert!(s.grad(id).values.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn constant_gradient_update_tends_to_lr_sign() {
        let mut s = store();
        let id = s.find("p").unwrap();
        let mut st = AdamState::new(&s);
        let lr = 1e-3;
        let g = [0.7, -3.0, 1e-3];
        let mut last = s.value(id).values.clone();
        for _ in 0..10_000 {
            s.add_grad(id, &g);
            last = s.value(id).values.clone();
            adam_step(&mut s, &mut st, lr);
        }
        // closed form: m̂ = g, v̂ = g², so Δ = lr·g/(|g| + eps)
        for i in 0..3 {
            let step = s.value(id).values[i] - last[i];
            let expect = -lr * g[i] / (g[i].abs() + EPS);
            assert!((step - expect).abs() < 1e-9, "{step} vs {expect}");
            assert!((step + lr * g[i].signum()).abs() < 1e-7);
        }
    }
}
