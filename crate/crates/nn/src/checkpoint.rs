use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// JSON object mapping parameter name to `{shape, values}`.
pub fn to_json(store: &ParamStore) -> Result<String> {
    let mut map = BTreeMap::new();
    for (name, t) in store.entries() {
        if t.values.iter().any(|v| !v.is_finite()) {
            return Err(NnError::Checkpoint(format!("parameter {name} has non-finite values")));
        }
        map.insert(
            name.to_string(),
            Entry {
                shape: t.shape.clone(),
                values: t.values.clone(),
            },
        );
    }
    serde_json::to_string(&map).map_err(|e| NnError::Checkpoint(e.to_string()))
}

/// Overwrites every parameter of `store` from a checkpoint. Names and shapes
/// must match exactly.
pub fn load_json(store: &mut ParamStore, json: &str) -> Result<()> {
    let map: BTreeMap<String, Entry> = serde_json::from_str(json).map_err(|e| NnError::Checkpoint(e.to_string()))?;
    if map.len() != store.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            map.len(),
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let e = map
            .get(&name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing parameter {name}")))?;
        if e.shape != store.value(id).shape {
            return Err(NnError::Checkpoint(format!(
                "parameter {name}: shape {:?} in checkpoint, {:?} in model",
                e.shape,
                store.value(id).shape
            )));
        }
        *store.value_mut(id) = Tensor::new(e.shape.clone(), e.values.clone())?;
    }
    Ok(())
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(store)?).map_err(|e| NnError::Io(e.to_string()))
}

pub fn load(store: &mut ParamStore, path: &Path) -> Result<()> {
    let s = std::fs::read_to_string(path).map_err(|e| NnError::Io(e.to_string()))?;
    load_json(store, &s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Linear;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        Linear::new(&mut a, "l0", 7, 5, &mut rng).unwrap();
        let id = a.find("l0.b").unwrap();
        a.value_mut(id).values = (0..5).map(|k| rng.gen::<f64>() * 10f64.powi(k * 40 - 100)).collect();
        a.value_mut(id).values[0] = 0.1 + 0.2;
        a.value_mut(id).values[1] = f64::MIN_POSITIVE;
        let json = to_json(&a).unwrap();

        let mut b = ParamStore::new();
        Linear::new(&mut b, "l0", 7, 5, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        load_json(&mut b, &json).unwrap();
        for id in a.ids() {
            let (x, y) = (&a.value(id).values, &b.value(id).values);
            assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn mismatched_shape_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = ParamStore::new();
        Linear::new(&mut a, "l0", 7, 5, &mut rng).unwrap();
        let mut b = ParamStore::new();
        Linear::new(&mut b, "l0", 7, 4, &mut rng).unwrap();
        assert!(matches!(load_json(&mut b, &to_json(&a).unwrap()), Err(NnError::Checkpoint(_))));
    }
}
