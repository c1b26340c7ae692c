//! Central finite-difference comparison against the tape gradients.

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares analytic and numeric derivatives of the scalar built by `loss`
/// for the parameter coordinates `coords`. Relative error uses
/// `max(|a|, |n|, floor)` as denominator.
pub fn check_params(
    store: &ParamStore,
    coords: &[(ParamId, usize)],
    h: f64,
    floor: f64,
    loss: &dyn Fn(&ParamStore, &mut Tape) -> Var,
) -> crate::Result<GradCheck> {
    let mut work = store.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let out = loss(&work, &mut tape);
    tape.backward(out)?.accumulate(&mut work);
    let mut worst: f64 = 0.0;
    for &(id, k) in coords {
        let analytic = work.grad(id).values[k];
        let eval = |d: f64| {
            let mut s = store.clone();
            s.value_mut(id).values[k] += d;
            let mut t = Tape::new();
            let v = loss(&s, &mut t);
            t.value(v).item()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked: coords.len(),
    })
}

/// Up to `per_param` evenly spread coordinates from every parameter.
pub fn spread_coords(store: &ParamStore, per_param: usize) -> Vec<(ParamId, usize)> {
    let mut out = Vec::new();
    for id in store.ids() {
        let n = store.value(id).len();
        let take = per_param.min(n);
        for i in 0..take {
            out.push((id, i * n / take + (n / take) / 2));
        }
    }
    out
}
