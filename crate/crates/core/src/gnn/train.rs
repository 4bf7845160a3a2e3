use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{sample_loss_grad, ClassifierConfig, ParamLayout, TrainingSummary, TreeClassifier};
use crate::error::{Error, Result};
use crate::features::{GraphSample, NormStats};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;
const MIN_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + EPS);
        }
    }
}

fn label_of(s: &GraphSample) -> Result<f64> {
    match s.label {
        Some(0) => Ok(0.0),
        Some(1) => Ok(1.0),
        Some(l) => Err(Error::Integrity(format!("sample {}: label {l} is not binary", s.sample_id))),
        None => Err(Error::Integrity(format!("sample {} has no label", s.sample_id))),
    }
}

fn has_both_classes(samples: &[&GraphSample]) -> bool {
    samples.iter().any(|s| s.label == Some(0)) && samples.iter().any(|s| s.label == Some(1))
}

/// Mean loss and accuracy of `params` on normalized samples.
fn evaluate(params: &[f64], layout: &ParamLayout, samples: &[GraphSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let results: Vec<Result<(f64, bool)>> = samples
        .par_iter()
        .map(|s| {
            let y = label_of(s)?;
            let graph = super::PreparedGraph::new(s)?;
            let logit = super::forward_pass(params, layout, &graph, None).logit;
            let correct = super::classify_score(super::sigmoid(logit), 0.5) == (y == 1.0);
            Ok((super::bce_with_logit(logit, y), correct))
        })
        .collect();
    let mut loss = 0.0;
    let mut hits = 0usize;
    for r in results {
        let (l, c) = r?;
        loss += l;
        hits += c as usize;
    }
    Ok((loss / samples.len() as f64, hits as f64 / samples.len() as f64))
}

/// Trains a classifier on labeled raw samples.
///
/// A seeded shuffle carves off `validation_fraction` for model selection;
/// the parameters from the epoch with the best validation accuracy (earliest
/// on ties) are returned. Per-sample gradients may be computed in parallel
/// but are always summed in batch order.
pub fn train(dataset: &[GraphSample], config: &ClassifierConfig) -> Result<(TreeClassifier, TrainingLog)> {
    config.validate()?;
    if dataset.len() < MIN_SAMPLES {
        return Err(Error::DegenerateDataset(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            dataset.len()
        )));
    }
    for s in dataset {
        label_of(s)?;
    }
    if !has_both_classes(&dataset.iter().collect::<Vec<_>>()) {
        return Err(Error::DegenerateDataset("dataset contains a single class".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((dataset.len() as f64 * config.validation_fraction).round() as usize).clamp(1, dataset.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_raw: Vec<&GraphSample> = train_idx.iter().map(|&i| &dataset[i]).collect();
    if !has_both_classes(&train_raw) {
        return Err(Error::DegenerateDataset("training split contains a single class".into()));
    }

    let train_owned: Vec<GraphSample> = train_raw.iter().map(|s| (*s).clone()).collect();
    let stats = NormStats::fit(&train_owned)?;
    let train_set: Vec<GraphSample> = train_owned.iter().map(|s| stats.apply(s)).collect();
    let val_set: Vec<GraphSample> = val_idx.iter().map(|&i| stats.apply(&dataset[i])).collect();

    let mut model = TreeClassifier::init(config.clone(), &mut rng)?;
    let layout = model.layout();
    let mut adam = Adam::new(layout.len, config.learning_rate);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut batch_order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        batch_order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_hits = 0usize;
        for batch in batch_order.chunks(config.batch_size) {
            let per_sample: Vec<Result<(f64, f64, Vec<f64>)>> = batch
                .par_iter()
                .map(|&i| {
                    let s = &train_set[i];
                    sample_loss_grad(&model.params, &layout, s, label_of(s)?)
                })
                .collect();
            let mut grad = vec![0.0; layout.len];
            for (r, &i) in per_sample.into_iter().zip(batch) {
                let (loss, p, g) = r?;
                epoch_loss += loss;
                epoch_hits += (super::classify_score(p, 0.5) == (train_set[i].label == Some(1))) as usize;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            adam.step(&mut model.params, &grad);
        }

        let (val_loss, val_accuracy) = evaluate(&model.params, &layout, &val_set)?;
        let log = EpochLog {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            train_accuracy: epoch_hits as f64 / train_set.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::debug!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3}",
            log.train_loss,
            log.train_accuracy,
            val_loss,
            val_accuracy
        );
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, model.params.clone()));
        }
        epochs.push(log);
    }

    let (best_val_accuracy, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    model.stats = Some(stats);
    model.summary = Some(TrainingSummary {
        epochs_run: epochs.len(),
        best_epoch,
        best_val_accuracy,
        train_size: train_set.len(),
        val_size: val_set.len(),
        test_accuracy: None,
    });
    Ok((model, TrainingLog { epochs, best_epoch }))
}

/// Accuracy of a trained model on labeled raw samples (threshold 0.5).
pub fn accuracy(model: &TreeClassifier, samples: &[GraphSample]) -> Result<f64> {
    let stats = model.stats.as_ref().ok_or(Error::NotTrained)?;
    let normalized: Vec<GraphSample> = samples.iter().map(|s| stats.apply(s)).collect();
    Ok(evaluate(&model.params, &model.layout(), &normalized)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::NodeFeatures;

    /// Star graphs: label 1 iff the hub has many children.
    fn toy(n: usize) -> Vec<GraphSample> {
        (0..n)
            .map(|i| {
                let leaves = if i % 2 == 0 { 1 + i % 3 } else { 6 + i % 3 };
                let mut node_features: Vec<NodeFeatures> = vec![[0.0, 0.0, 0.0, leaves as f64, 1.0]];
                let mut edge_index = Vec::new();
                let mut edge_codes = Vec::new();
                for k in 0..leaves {
                    node_features.push([1.0 + k as f64, 1.0, 10.0 * (k + 1) as f64, 0.0, 1.0 + k as f64]);
                    edge_index.push([0, k + 1]);
                    edge_codes.push(2);
                    edge_index.push([k + 1, 0]);
                    edge_codes.push(-2);
                }
                GraphSample {
                    sample_id: format!("t{i}"),
                    label: Some((i % 2) as u8),
                    node_features,
                    edge_index,
                    edge_codes,
                }
            })
            .collect()
    }

    fn quick() -> ClassifierConfig {
        ClassifierConfig {
            hidden_size: 8,
            max_epochs: 15,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn learns_toy_task_and_is_deterministic() {
        let data = toy(60);
        let (m1, log) = train(&data, &quick()).unwrap();
        let (m2, _) = train(&data, &quick()).unwrap();
        assert_eq!(m1.params, m2.params);
        assert_eq!(log.epochs.len(), 15);
        assert!(log.epochs[14].train_loss < log.epochs[0].train_loss);
        assert!(accuracy(&m1, &data).unwrap() > 0.9);
        let summary = m1.summary.as_ref().unwrap();
        assert_eq!(summary.val_size, 6);
        assert_eq!(summary.train_size, 54);
        let best = &log.epochs[log.best_epoch - 1];
        assert!(log.epochs.iter().all(|e| e.val_accuracy <= best.val_accuracy));
        assert!(log.epochs[..log.best_epoch - 1].iter().all(|e| e.val_accuracy < best.val_accuracy));
    }

    #[test]
    fn rejects_degenerate_data() {
        let mut data = toy(20);
        for s in &mut data {
            s.label = Some(1);
        }
        assert!(matches!(train(&data, &quick()), Err(Error::DegenerateDataset(_))));
        assert!(matches!(train(&toy(5), &quick()), Err(Error::DegenerateDataset(_))));
        let mut data = toy(20);
        data[3].label = None;
        assert!(train(&data, &quick()).is_err());
    }
}
