use std::collections::{BTreeMap, HashMap};

use candle_core::{Tensor, D};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::ClassifierConfig;
use crate::datagen::{augment_flip, one_hot_matrix, stack_images, LabeledImage};
use crate::error::{Error, Result};
use crate::networks::{ConvClassifier, ModelBundle};
use crate::nn::{log_softmax, Adam, AdamConfig, NormMode};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierReport {
    /// Accuracy on the evaluation split after training.
    pub accuracy: f64,
    pub best_accuracy: f64,
    pub epochs: usize,
    pub train_images: usize,
    pub synthetic_images: usize,
    pub eval_images: usize,
    pub per_epoch_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub config: ClassifierConfig,
    pub seed: u64,
    pub flip: bool,
    /// Stop after `patience` epochs without improvement and restore the best
    /// parameters; otherwise run all `max_epochs`.
    pub early_stopping: bool,
}

const EVAL_BATCH: usize = 64;

/// Fraction of `items` the classifier labels correctly.
pub fn accuracy(net: &ConvClassifier, items: &[(&LabeledImage, usize)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let store = net.store();
    let trainable = store.is_trainable();
    store.set_trainable(false);
    let mut correct = 0usize;
    for chunk in items.chunks(EVAL_BATCH) {
        let x = stack_images(chunk.iter().map(|(im, _)| *im))?.to_dtype(store.dtype())?;
        let predicted: Vec<u32> = net.logits(&x)?.argmax(D::Minus1)?.to_vec1()?;
        correct += predicted
            .iter()
            .zip(chunk)
            .filter(|(p, (_, label))| **p as usize == *label)
            .count();
    }
    store.set_trainable(trainable);
    Ok(correct as f64 / items.len() as f64)
}

fn cross_entropy(logits: &Tensor, labels: &[usize], classes: usize) -> Result<Tensor> {
    let onehot = one_hot_matrix(labels, classes)?.to_dtype(logits.dtype())?;
    Ok((log_softmax(logits)? * onehot)?.sum(D::Minus1)?.mean_all()?.neg()?)
}

/// Minibatch cross-entropy training with Adam. Returns the accuracy on `eval`
/// after each epoch.
pub fn fit_classifier(
    net: &ConvClassifier,
    train: &[(&LabeledImage, usize)],
    eval: &[(&LabeledImage, usize)],
    opts: FitOptions,
) -> Result<(usize, Vec<f64>)> {
    let cfg = opts.config;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let store = net.store();
    store.set_trainable(true);
    store.set_norm_mode(NormMode::Train);
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut opt = Adam::new(adam, store.named_vars().map(|(k, v)| (k.clone(), v)))?;
    let batch = cfg.batch_size.min(train.len());
    let mut history = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut best_params: Option<HashMap<String, Tensor>> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.max_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(opts.seed, &["order", &epoch.to_string()]));
        let mut rng = rng_for(opts.seed, &["flip", &epoch.to_string()]);
        for chunk in order.chunks(batch).filter(|c| c.len() == batch) {
            let images: Vec<LabeledImage> = chunk
                .iter()
                .map(|i| {
                    if opts.flip {
                        augment_flip(train[*i].0, &mut rng)
                    } else {
                        train[*i].0.clone()
                    }
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|i| train[*i].1).collect();
            let x = stack_images(&images)?.to_dtype(store.dtype())?;
            let loss = cross_entropy(&net.logits(&x)?, &labels, net.classes())?;
            let value = crate::losses::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    term: "classifier cross-entropy".into(),
                });
            }
            opt.step(&loss.backward()?)?;
        }
        let acc = if eval.is_empty() { 0.0 } else { accuracy(net, eval)? };
        history.push(acc);
        if acc > best {
            best = acc;
            since_best = 0;
            if opts.early_stopping {
                best_params = Some(store.owned_tensors()?);
            }
        } else {
            since_best += 1;
        }
        if opts.early_stopping && since_best >= cfg.patience {
            break;
        }
    }
    if let Some(params) = best_params {
        store.load(&params)?;
    }
    store.set_trainable(false);
    store.set_norm_mode(NormMode::Eval);
    Ok((history.len(), history))
}

/// Split each identity's images into train and validation parts.
fn holdout_per_identity<'a>(
    data: &'a [LabeledImage],
    fraction: f64,
    seed: u64,
) -> (Vec<&'a LabeledImage>, Vec<&'a LabeledImage>) {
    let mut by_id: BTreeMap<usize, Vec<&LabeledImage>> = BTreeMap::new();
    for im in data {
        by_id.entry(im.identity_id).or_default().push(im);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (id, mut images) in by_id {
        images.shuffle(&mut rng_for(seed, &["holdout", &id.to_string()]));
        let n_val = ((images.len() as f64 * fraction).round() as usize).clamp(1, images.len().saturating_sub(1).max(1));
        let n_val = if images.len() < 2 { 0 } else { n_val };
        val.extend_from_slice(&images[..n_val]);
        train.extend_from_slice(&images[n_val..]);
    }
    (train, val)
}

/// Train φ to separate the identities of `data`, stopping once held-out
/// accuracy plateaus, then freeze it.
pub fn pretrain_feature_net(
    bundle: &mut ModelBundle,
    data: &[LabeledImage],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<ClassifierReport> {
    let ids: Vec<usize> = crate::datagen::identities(data).into_iter().collect();
    if ids.len() < 2 {
        return Err(Error::TooFewIdentities {
            needed: 2,
            found: ids.len(),
        });
    }
    let net = bundle.feature_net.classifier();
    if net.classes() != ids.len() {
        return Err(Error::Shape(format!(
            "feature network separates {} identities, data has {}",
            net.classes(),
            ids.len()
        )));
    }
    let index: HashMap<usize, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let (train, val) = holdout_per_identity(data, config.validation_fraction, seed);
    let train: Vec<(&LabeledImage, usize)> = train.into_iter().map(|im| (im, index[&im.identity_id])).collect();
    let val: Vec<(&LabeledImage, usize)> = val.into_iter().map(|im| (im, index[&im.identity_id])).collect();
    let (epochs, history) = fit_classifier(
        net,
        &train,
        &val,
        FitOptions {
            config: *config,
            seed,
            flip: true,
            early_stopping: true,
        },
    )?;
    let acc = if val.is_empty() { 0.0 } else { accuracy(net, &val)? };
    bundle.feature_net.mark_trained();
    Ok(ClassifierReport {
        accuracy: acc,
        best_accuracy: history.iter().copied().fold(0.0, f64::max),
        epochs,
        train_images: train.len(),
        synthetic_images: 0,
        eval_images: val.len(),
        per_epoch_accuracy: history,
    })
}

/// Train an expression classifier on real (plus optional synthetic) images
/// for a fixed number of epochs and measure it on `test`.
pub fn train_expression_classifier(
    net: &ConvClassifier,
    train: &[LabeledImage],
    synthetic: &[LabeledImage],
    test: &[LabeledImage],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<ClassifierReport> {
    if train.is_empty() && synthetic.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let items: Vec<(&LabeledImage, usize)> = train.iter().chain(synthetic).map(|im| (im, im.class())).collect();
    let eval: Vec<(&LabeledImage, usize)> = test.iter().map(|im| (im, im.class())).collect();
    let (epochs, history) = fit_classifier(
        net,
        &items,
        &[],
        FitOptions {
            config: *config,
            seed,
            flip: true,
            early_stopping: false,
        },
    )?;
    let _ = history;
    let acc = accuracy(net, &eval)?;
    Ok(ClassifierReport {
        accuracy: acc,
        best_accuracy: acc,
        epochs,
        train_images: train.len(),
        synthetic_images: synthetic.len(),
        eval_images: eval.len(),
        per_epoch_accuracy: vec![acc],
    })
}
