//! Deterministic training loop for the AllPairs objective.
//!
//! Full-batch mode (the default) is gradient ascent with per-parameter
//! adaptive step scaling (Adam-style moment estimates) plus step-size
//! backtracking: a step that does not improve the objective is rolled back
//! and the step size halved, so the training objective is non-decreasing
//! across accepted epochs by construction. Mini-batch mode shuffles records
//! deterministically per epoch and takes fixed-size adaptive steps.
//!
//! Early stopping watches the validation objective and the best-validation
//! snapshot is returned. Everything is sequential and seed-deterministic.

use rand::Rng;

use crate::error::{Error, Result};
use crate::harvest::HarvestDataset;
use crate::rng::stream;

use super::objective::{group_records_by_context, objective_core};
use super::{ForwardBuffers, Model, ModelFamily};

/// Hyper-parameters for [`fit`]. All defaults are artifact choices.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Base step size applied to the weight-normalized gradient.
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// 0 = full batch; otherwise records per mini-batch.
    pub batch_size: usize,
    /// Accepted epochs without validation improvement before stopping.
    pub early_stopping_patience: usize,
    /// Output clamp inside the logs.
    pub output_clamp: f64,
    /// Dense-weight initialization half-width.
    pub init_scale: f64,
    /// L2 decay on dense context weights, per unit of label mass. Keeps the
    /// context sensitivity of both heads tied to the data that supports it;
    /// logits and biases are never decayed, so the PBM is unaffected.
    pub weight_decay: f64,
    /// Separate decay for the relevance head's dense weights; falls back to
    /// `weight_decay` when unset.
    pub relevance_weight_decay: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            max_epochs: 500,
            batch_size: 0,
            early_stopping_patience: 60,
            output_clamp: 1e-6,
            init_scale: 0.1,
            weight_decay: 1e-3,
            relevance_weight_decay: None,
            seed: 1,
        }
    }
}

/// First/second moment decay rates of the adaptive step scaling.
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Per-parameter adaptive scaling state (Adam moment estimates).
struct AdaptiveState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
}

impl AdaptiveState {
    fn new(n: usize) -> Self {
        AdaptiveState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step_count: 0,
        }
    }

    /// Ascend `params` along the bias-corrected adaptive direction.
    fn ascend(&mut self, params: &mut [f64], grad: &[f64], step: f64) {
        self.step_count += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step_count as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step_count as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += step * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }

    fn snapshot(&self) -> (Vec<f64>, Vec<f64>, u64) {
        (self.m.clone(), self.v.clone(), self.step_count)
    }

    fn restore(&mut self, snap: &(Vec<f64>, Vec<f64>, u64)) {
        self.m.copy_from_slice(&snap.0);
        self.v.copy_from_slice(&snap.1);
        self.step_count = snap.2;
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.output_clamp.is_nan() || self.output_clamp <= 0.0 || self.output_clamp >= 0.5 {
            return Err(Error::config("output_clamp must lie in (0, 0.5)"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be nonnegative"));
        }
        if self.relevance_weight_decay.is_some_and(|d| d < 0.0) {
            return Err(Error::config("relevance_weight_decay must be nonnegative"));
        }
        Ok(())
    }
}

/// L2 penalty on the dense context weights: the trainer ascends
/// `objective - 0.5 * sum lambda_i * |W_i|^2` with each head's lambda
/// scaled by the training label mass.
struct Penalty {
    ranges: Vec<(std::ops::Range<usize>, f64)>,
}

impl Penalty {
    fn new(model: &Model, config: &TrainConfig, mass: f64) -> Self {
        let (propensity, relevance) = model.dense_weight_ranges();
        let lambda_p = config.weight_decay * mass;
        let lambda_r = config.relevance_weight_decay.unwrap_or(config.weight_decay) * mass;
        let mut ranges = Vec::new();
        for r in propensity {
            ranges.push((r, lambda_p));
        }
        for r in relevance {
            ranges.push((r, lambda_r));
        }
        ranges.retain(|(_, lambda)| *lambda > 0.0);
        Penalty { ranges }
    }

    fn value(&self, params: &[f64]) -> f64 {
        let mut total = 0.0;
        for (r, lambda) in &self.ranges {
            let sq: f64 = params[r.clone()].iter().map(|w| w * w).sum();
            total -= 0.5 * lambda * sq;
        }
        total
    }

    fn add_gradient(&self, params: &[f64], grad: &mut [f64]) {
        for (r, lambda) in &self.ranges {
            for i in r.clone() {
                grad[i] -= lambda * params[i];
            }
        }
    }
}

/// Per-epoch objective trace.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochStat {
    pub epoch: usize,
    /// The quantity being ascended: the AllPairs objective minus the
    /// weight-decay penalty (identical to the raw objective when
    /// `weight_decay` is 0).
    pub train_objective: f64,
    /// Raw AllPairs objective on the validation records; this is what early
    /// stopping maximizes.
    pub val_objective: f64,
    /// Whether the epoch's step was kept (always true in mini-batch mode).
    pub accepted: bool,
}

/// A fitted model plus its training curve.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub curve: Vec<EpochStat>,
    /// Best validation objective seen (the returned model's score).
    pub best_val_objective: f64,
}

/// Fit a model of `family` by maximizing the AllPairs objective on `train`,
/// early-stopping on `val`. Deterministic given `config.seed`.
pub fn fit(
    family: ModelFamily,
    train: &HarvestDataset,
    val: &HarvestDataset,
    config: &TrainConfig,
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::data(
            "no interventions harvested: the training dataset is empty",
        ));
    }

    let t = train.context_dim();
    let model = Model::init(family, t, train.k_max, config.init_scale, config.seed);
    if config.batch_size == 0 {
        fit_full_batch(model, train, val, config)
    } else {
        fit_mini_batch(model, train, val, config)
    }
}

/// [`fit`] with the context-free PBM family.
pub fn fit_pbm(train: &HarvestDataset, val: &HarvestDataset, config: &TrainConfig) -> Result<FitResult> {
    fit(ModelFamily::Pbm, train, val, config)
}

/// [`fit`] with the neural-relevance CPBM family.
pub fn fit_cpbm(train: &HarvestDataset, val: &HarvestDataset, config: &TrainConfig) -> Result<FitResult> {
    fit(ModelFamily::Cpbm, train, val, config)
}

/// Total IPS label mass, used to normalize gradient step sizes.
fn label_mass(data: &HarvestDataset) -> f64 {
    data.records
        .iter()
        .map(|r| (r.attainable.len() - 1) as f64 * r.ips_weight)
        .sum()
}

struct Evaluator<'a> {
    data: &'a HarvestDataset,
    groups: Vec<Vec<u32>>,
    buf: ForwardBuffers,
}

impl<'a> Evaluator<'a> {
    fn new(data: &'a HarvestDataset) -> Self {
        Evaluator {
            data,
            groups: group_records_by_context(data),
            buf: ForwardBuffers::default(),
        }
    }

    fn objective(&mut self, model: &Model, clamp: f64) -> Result<f64> {
        objective_core(self.data, &self.groups, model, clamp, None, &mut self.buf)
    }

    fn gradient_into(&mut self, model: &Model, clamp: f64, grad: &mut [f64]) -> Result<f64> {
        objective_core(
            self.data,
            &self.groups,
            model,
            clamp,
            Some(grad),
            &mut self.buf,
        )
    }
}

fn fit_full_batch(
    mut model: Model,
    train: &HarvestDataset,
    val: &HarvestDataset,
    config: &TrainConfig,
) -> Result<FitResult> {
    let clamp = config.output_clamp;
    let penalty = Penalty::new(&model, config, label_mass(train));
    let mut train_eval = Evaluator::new(train);
    let mut val_eval = Evaluator::new(val);

    let mut grad = vec![0.0; model.params().len()];
    let mut adaptive = AdaptiveState::new(model.params().len());
    let mut objective = train_eval.objective(&model, clamp)? + penalty.value(model.params());
    let mut val_objective = if val.is_empty() {
        objective
    } else {
        val_eval.objective(&model, clamp)?
    };

    let mut best = model.clone();
    let mut best_val = val_objective;
    let mut stale_epochs = 0usize;
    let mut step = config.learning_rate;
    let mut curve = Vec::with_capacity(config.max_epochs);
    let mut previous = model.params().to_vec();

    for epoch in 1..=config.max_epochs {
        train_eval.gradient_into(&model, clamp, &mut grad)?;
        penalty.add_gradient(model.params(), &mut grad);

        previous.copy_from_slice(model.params());
        let moments = adaptive.snapshot();
        adaptive.ascend(model.params_mut(), &grad, step);

        let candidate =
            train_eval.objective(&model, clamp).map(|v| v + penalty.value(model.params()));
        let candidate = match candidate {
            Ok(v) if v.is_finite() => v,
            Ok(_) | Err(_) => {
                return Err(Error::numeric(format!(
                    "objective diverged at epoch {epoch} (step {step:.3e})"
                )))
            }
        };

        let accepted = candidate >= objective;
        if accepted {
            objective = candidate;
            step = (step * 1.1).min(config.learning_rate * 8.0);
            if !val.is_empty() {
                val_objective = val_eval.objective(&model, clamp)?;
            } else {
                val_objective = objective;
            }
            if val_objective > best_val {
                best_val = val_objective;
                best = model.clone();
                stale_epochs = 0;
            } else {
                stale_epochs += 1;
            }
        } else {
            model.params_mut().copy_from_slice(&previous);
            adaptive.restore(&moments);
            step *= 0.5;
        }

        curve.push(EpochStat {
            epoch,
            train_objective: if accepted { objective } else { candidate },
            val_objective,
            accepted,
        });

        if stale_epochs > config.early_stopping_patience || step < 1e-14 {
            break;
        }
    }

    Ok(FitResult {
        model: best,
        curve,
        best_val_objective: best_val,
    })
}

fn fit_mini_batch(
    mut model: Model,
    train: &HarvestDataset,
    val: &HarvestDataset,
    config: &TrainConfig,
) -> Result<FitResult> {
    let clamp = config.output_clamp;
    let mut train_eval = Evaluator::new(train);
    let mut val_eval = Evaluator::new(val);
    let mut grad = vec![0.0; model.params().len()];
    let mut adaptive = AdaptiveState::new(model.params().len());

    let mut order: Vec<u32> = (0..train.records.len() as u32).collect();
    let mut best_val = f64::NEG_INFINITY;
    let mut best = model.clone();
    let mut stale_epochs = 0usize;
    let mut curve = Vec::with_capacity(config.max_epochs);

    let mut batch = HarvestDataset {
        k_max: train.k_max,
        contexts: train.contexts.clone(),
        records: Vec::with_capacity(config.batch_size),
    };

    for epoch in 1..=config.max_epochs {
        // Deterministic per-epoch shuffle.
        let mut rng = stream(config.seed, "epoch-shuffle", epoch as u64);
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        for chunk in order.chunks(config.batch_size) {
            batch.records.clear();
            batch
                .records
                .extend(chunk.iter().map(|&i| train.records[i as usize].clone()));
            let groups = group_records_by_context(&batch);
            let mut buf = ForwardBuffers::default();
            objective_core(&batch, &groups, &model, clamp, Some(&mut grad), &mut buf)?;
            let batch_penalty = Penalty::new(&model, config, label_mass(&batch));
            batch_penalty.add_gradient(model.params(), &mut grad);
            adaptive.ascend(model.params_mut(), &grad, config.learning_rate);
        }

        let epoch_penalty = Penalty::new(&model, config, label_mass(train));
        let train_objective =
            train_eval.objective(&model, clamp)? + epoch_penalty.value(model.params());
        if !train_objective.is_finite() {
            return Err(Error::numeric(format!(
                "objective diverged at epoch {epoch}"
            )));
        }
        let val_objective = if val.is_empty() {
            train_objective
        } else {
            val_eval.objective(&model, clamp)?
        };
        if val_objective > best_val {
            best_val = val_objective;
            best = model.clone();
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
        }
        curve.push(EpochStat {
            epoch,
            train_objective,
            val_objective,
            accepted: true,
        });
        if stale_epochs > config.early_stopping_patience {
            break;
        }
    }

    Ok(FitResult {
        model: best,
        curve,
        best_val_objective: best_val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::random_dataset;

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            max_epochs: 200,
            early_stopping_patience: 200,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_train_set_is_rejected() {
        let empty = HarvestDataset::default();
        let err = fit_pbm(&empty, &empty, &quick_config(1)).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
        assert!(err.to_string().contains("no interventions harvested"));
    }

    #[test]
    fn training_objective_is_non_decreasing_on_accepted_epochs() {
        let data = random_dataset(3, 60, 5, 3, 4);
        let result = fit_cpbm(&data, &data, &quick_config(3)).unwrap();
        let mut last = f64::NEG_INFINITY;
        for stat in result.curve.iter().filter(|s| s.accepted) {
            assert!(
                stat.train_objective >= last - 1e-12,
                "objective decreased: {} -> {}",
                last,
                stat.train_objective
            );
            last = stat.train_objective;
        }
        // Training actually moved the objective.
        assert!(result.curve.iter().any(|s| s.accepted));
    }

    #[test]
    fn fits_are_bit_deterministic() {
        let data = random_dataset(5, 80, 4, 2, 5);
        let (tr, val) = data.split_records(|r| r.serving_index % 10 != 9);
        for family in [ModelFamily::Pbm, ModelFamily::Cpbm] {
            let a = fit(family, &tr, &val, &quick_config(11)).unwrap();
            let b = fit(family, &tr, &val, &quick_config(11)).unwrap();
            assert_eq!(a.model, b.model);
            assert_eq!(a.curve, b.curve);
        }
    }

    #[test]
    fn mini_batch_mode_trains() {
        let data = random_dataset(9, 120, 4, 2, 6);
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 60,
            learning_rate: 1.0,
            ..quick_config(9)
        };
        let result = fit_cpbm(&data, &data, &cfg).unwrap();
        let first = result.curve.first().unwrap().train_objective;
        let best = result.best_val_objective;
        assert!(best >= first);
    }

    #[test]
    fn pbm_and_cpbm_agree_on_constant_contexts() {
        // With a constant context the CPBM family contains the PBM; both
        // should reach comparable objectives on the same data.
        let mut data = random_dataset(13, 120, 4, 3, 1);
        data.contexts = vec![vec![0.4, -0.2, 0.9]];
        for r in &mut data.records {
            r.context_id = 0;
        }
        let cfg = TrainConfig {
            max_epochs: 900,
            ..quick_config(13)
        };
        let pbm = fit_pbm(&data, &data, &cfg).unwrap();
        let cpbm = fit_cpbm(&data, &data, &cfg).unwrap();
        let a = pbm.best_val_objective;
        let b = cpbm.best_val_objective;
        let rel = (a - b).abs() / (a.abs().max(b.abs()) + 1e-9);
        assert!(rel < 0.02, "pbm {a} vs cpbm {b} (rel {rel})");
    }

    #[test]
    fn invalid_config_is_rejected() {
        let data = random_dataset(1, 10, 3, 1, 1);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            fit_pbm(&data, &data, &cfg),
            Err(Error::Config(_))
        ));
    }
}
