//! Random instances for property and acceptance tests.
//!
//! Not part of the stable API.

use rand::Rng;

use crate::estimator::{Model, ModelFamily};
use crate::harvest::{HarvestDataset, HarvestRecord, PositionMask};
use crate::rng::stream;

/// A small random harvested dataset with up to `max_records` records over
/// `n_contexts` distinct contexts of dimension `t` and positions 1..=k_max.
/// Records may have singleton attainable sets (they contribute nothing).
pub fn random_dataset(
    seed: u64,
    max_records: usize,
    k_max: usize,
    t: usize,
    n_contexts: usize,
) -> HarvestDataset {
    let mut rng = stream(seed, "testutil-dataset", 0);
    let contexts: Vec<Vec<f64>> = (0..n_contexts)
        .map(|_| (0..t).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();

    let n_records = rng.random_range(1..=max_records.max(1));
    let records = (0..n_records)
        .map(|i| {
            let mut mask = PositionMask::default();
            let size = rng.random_range(1..=k_max.min(4));
            while mask.len() < size {
                mask.add(rng.random_range(1..=k_max));
            }
            let positions: Vec<usize> = mask.positions().collect();
            let position = positions[rng.random_range(0..positions.len())];
            HarvestRecord {
                query_id: i as u64,
                doc_id: i as u64,
                serving_index: i as u64,
                context_id: rng.random_range(0..n_contexts as u32),
                position,
                clicked: rng.random::<f64>() < 0.4,
                ips_weight: rng.random_range(1.0..5.0),
                attainable: mask,
            }
        })
        .collect();

    HarvestDataset {
        k_max,
        contexts,
        records,
    }
}

/// A model of the requested family with all parameters drawn uniformly from
/// `[-0.8, 0.8]`.
pub fn random_model(family: ModelFamily, t: usize, k_max: usize, seed: u64) -> Model {
    let mut model = Model::init(family, t, k_max, 0.1, seed);
    let mut rng = stream(seed, "testutil-model", 1);
    for p in model.params_mut() {
        *p = rng.random_range(-0.8..0.8);
    }
    model
}
