//! Episodic first-order meta-training.
//!
//! Each epoch rebuilds a pool of tasks from the source samples, where a task
//! is a disjoint 80/20 split into a virtual train and virtual test domain.
//! Tasks are consumed in groups of `tasks_per_iteration`. For each task the
//! meta-train stage takes one gradient step from `φ` on the train split and
//! its enhanced copy, producing `θ̂`; the meta-test stage evaluates the
//! objective at `θ̂` on the test split and its enhanced copy and stores
//! `∇_θ̂ L`. After the group, `φ ← φ − β · mean(stored gradients)`.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::augment::{enhance_batch, CorruptionConfig, LabeledImage};
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossBreakdown, LossWeights};
use crate::model::TinyCnn;
use crate::ops::sgd_step;
use crate::params::ParamSet;
use crate::rng::{self, Stream};

/// Fraction of each task's samples assigned to the virtual train split.
pub const TRAIN_SPLIT_RATIO: f64 = 0.8;

const TAG_INIT: u64 = 1;
const TAG_VALIDATION: u64 = 2;
const TAG_EPOCH: u64 = 3;

/// A model the meta-loop can train.
pub trait Learner {
    fn init_params(&self, rng: &mut Stream) -> ParamSet;

    /// Objective and parameter gradient for one original/enhanced pair.
    fn pair_loss(
        &self,
        params: &ParamSet,
        original: &LabeledImage,
        enhanced: &LabeledImage,
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, ParamSet)>;

    fn predict(&self, params: &ParamSet, image: &LabeledImage) -> Result<usize>;
}

impl Learner for TinyCnn {
    fn init_params(&self, rng: &mut Stream) -> ParamSet {
        TinyCnn::init_params(self, rng)
    }

    fn pair_loss(
        &self,
        params: &ParamSet,
        original: &LabeledImage,
        enhanced: &LabeledImage,
        weights: &LossWeights,
    ) -> Result<(LossBreakdown, ParamSet)> {
        let label = original.label;
        let ori = self.forward(params, original.pixels(), label)?;
        let aug = self.forward(params, enhanced.pixels(), label)?;
        let (breakdown, grads) = total_loss(&ori, &aug, label, weights)?;
        let mut g = self.backward(params, &ori, &grads.ori)?;
        g.axpy(1.0, &self.backward(params, &aug, &grads.aug)?)?;
        Ok((breakdown, g))
    }

    fn predict(&self, params: &ParamSet, image: &LabeledImage) -> Result<usize> {
        TinyCnn::predict(self, params, image.pixels())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct MetaConfig {
    /// Meta-train step size (`lr`).
    pub inner_lr: f64,
    /// Outer step size (`β`).
    pub outer_lr: f64,
    /// Tasks per outer update (`n`).
    pub tasks_per_iteration: usize,
    /// Tasks built per epoch (`N`).
    pub pool_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of the source held out for validation accuracy.
    pub validation_fraction: f64,
    /// Reserved; only first-order updates exist.
    pub second_order: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            inner_lr: 4e-3,
            outer_lr: 0.15,
            tasks_per_iteration: 1,
            pool_size: 48,
            epochs: 30,
            batch_size: 4,
            seed: 0,
            validation_fraction: 0.2,
            second_order: false,
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.inner_lr >= 0.0 && self.inner_lr.is_finite()) {
            return bad("inner_lr must be finite and non-negative");
        }
        if !(self.outer_lr >= 0.0 && self.outer_lr.is_finite()) {
            return bad("outer_lr must be finite and non-negative");
        }
        if self.tasks_per_iteration == 0 {
            return bad("tasks_per_iteration must be at least 1");
        }
        if self.pool_size < self.tasks_per_iteration {
            return bad("pool_size must be at least tasks_per_iteration");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.second_order {
            return bad("second-order meta-gradients are not implemented");
        }
        Ok(())
    }

    /// Outer updates per epoch: the pool is walked in disjoint groups.
    pub fn iterations_per_epoch(&self) -> usize {
        self.pool_size / self.tasks_per_iteration
    }
}

/// Everything besides data that a training run needs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainSetup {
    pub meta: MetaConfig,
    pub weights: LossWeights,
    pub corruption: CorruptionConfig,
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        self.weights.validate()?;
        self.corruption.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub train_split: Vec<LabeledImage>,
    pub test_split: Vec<LabeledImage>,
}

fn distinct_labels(items: &[LabeledImage]) -> usize {
    let mut labels: Vec<usize> = items.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    labels.dedup();
    labels.len()
}

impl Task {
    /// Disjoint ids, both splits non-empty with at least two classes.
    pub fn check(&self) -> Result<()> {
        for (name, split) in [("train", &self.train_split), ("test", &self.test_split)] {
            if distinct_labels(split) < 2 {
                return Err(Error::InsufficientData(format!(
                    "{name} split needs at least two classes"
                )));
            }
        }
        if self
            .train_split
            .iter()
            .any(|a| self.test_split.iter().any(|b| a.id == b.id))
        {
            return Err(Error::InsufficientData("splits share samples".into()));
        }
        Ok(())
    }
}

const SPLIT_ATTEMPTS: usize = 1000;

fn check_source(source: &[LabeledImage]) -> Result<()> {
    let mut labels: Vec<usize> = source.iter().map(|s| s.label).collect();
    labels.sort_unstable();
    let mut classes_with_two = 0;
    for chunk in labels.chunk_by(|a, b| a == b) {
        if chunk.len() >= 2 {
            classes_with_two += 1;
        }
    }
    if source.len() < 10 || classes_with_two < 2 {
        return Err(Error::InsufficientData(format!(
            "source needs at least 10 samples and two classes with two samples each, got {} samples",
            source.len()
        )));
    }
    Ok(())
}

fn draw_task(source: &[LabeledImage], rng: &mut impl Rng) -> Result<Task> {
    let n_train = libm::round(source.len() as f64 * TRAIN_SPLIT_RATIO) as usize;
    let mut order: Vec<usize> = (0..source.len()).collect();
    for _ in 0..SPLIT_ATTEMPTS {
        order.shuffle(rng);
        let task = Task {
            train_split: order[..n_train].iter().map(|&i| source[i].clone()).collect(),
            test_split: order[n_train..].iter().map(|&i| source[i].clone()).collect(),
        };
        if task.check().is_ok() {
            return Ok(task);
        }
    }
    Err(Error::InsufficientData(
        "could not draw a split with two classes on each side".into(),
    ))
}

/// `pool_size` random 80/20 splits of `source`.
pub fn build_task_pool(source: &[LabeledImage], config: &MetaConfig, rng: &mut impl Rng) -> Result<Vec<Task>> {
    check_source(source)?;
    (0..config.pool_size).map(|_| draw_task(source, rng)).collect()
}

/// Mean objective and gradient over aligned original/enhanced batches.
pub fn batch_loss<L: Learner + ?Sized>(
    learner: &L,
    params: &ParamSet,
    originals: &[LabeledImage],
    enhanced: &[LabeledImage],
    weights: &LossWeights,
) -> Result<(LossBreakdown, ParamSet)> {
    if originals.is_empty() || originals.len() != enhanced.len() {
        return Err(Error::InsufficientData(format!(
            "batch of {} originals and {} enhanced images",
            originals.len(),
            enhanced.len()
        )));
    }
    let mut grads = params.zeros_like();
    let mut parts = Vec::with_capacity(originals.len());
    for (o, e) in originals.iter().zip(enhanced) {
        let (b, g) = learner.pair_loss(params, o, e, weights)?;
        grads.axpy(1.0, &g)?;
        parts.push(b);
    }
    grads.scale(1.0 / originals.len() as f64);
    Ok((LossBreakdown::mean(&parts), grads))
}

/// Draws at most `batch_size` items of `split` and enhances them using the
/// whole split as the donor pool.
fn phase_batch(
    split: &[LabeledImage],
    setup: &TrainSetup,
    rng: &mut impl Rng,
) -> Result<(Vec<LabeledImage>, Vec<LabeledImage>)> {
    let batch: Vec<LabeledImage> = if split.len() > setup.meta.batch_size {
        let mut picked = index::sample(rng, split.len(), setup.meta.batch_size).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| split[i].clone()).collect()
    } else {
        split.to_vec()
    };
    let enhanced = enhance_batch(&batch, split, &setup.corruption, rng)?;
    Ok((batch, enhanced))
}

/// Meta-train stage: `θ̂ = φ − lr ∇_φ L` on the train split. `phi` is untouched.
pub fn meta_train_step<L: Learner + ?Sized>(
    learner: &L,
    phi: &ParamSet,
    task: &Task,
    setup: &TrainSetup,
    rng: &mut impl Rng,
) -> Result<(ParamSet, LossBreakdown)> {
    let (batch, enhanced) = phase_batch(&task.train_split, setup, rng)?;
    let (loss, grads) = batch_loss(learner, phi, &batch, &enhanced, &setup.weights)?;
    Ok((sgd_step(phi, &grads, setup.meta.inner_lr)?, loss))
}

/// Meta-test stage: `∇_θ̂ L` on the test split.
pub fn meta_test_grads<L: Learner + ?Sized>(
    learner: &L,
    adapted: &ParamSet,
    task: &Task,
    setup: &TrainSetup,
    rng: &mut impl Rng,
) -> Result<(ParamSet, LossBreakdown)> {
    let (batch, enhanced) = phase_batch(&task.test_split, setup, rng)?;
    let (loss, grads) = batch_loss(learner, adapted, &batch, &enhanced, &setup.weights)?;
    Ok((grads, loss))
}

/// `φ − β · mean(task_grads)`.
pub fn outer_update(phi: &ParamSet, task_grads: &[ParamSet], outer_lr: f64) -> Result<ParamSet> {
    if task_grads.is_empty() {
        return Err(Error::InsufficientData("outer update needs at least one task gradient".into()));
    }
    let mut mean = phi.zeros_like();
    for g in task_grads {
        mean.axpy(1.0, g)?;
    }
    mean.scale(1.0 / task_grads.len() as f64);
    sgd_step(phi, &mean, outer_lr)
}

/// Top-1 accuracy; an empty set scores 0.
pub fn accuracy<L: Learner + ?Sized>(learner: &L, params: &ParamSet, samples: &[LabeledImage]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for s in samples {
        if learner.predict(params, s)? == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean meta-train objective (evaluated at `φ`) over the epoch's tasks.
    pub train_loss: LossBreakdown,
    /// Mean meta-test objective (evaluated at `θ̂`).
    pub test_loss: LossBreakdown,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: ParamSet,
    pub params: ParamSet,
    pub history: Vec<EpochRecord>,
}

/// Splits off a class-stratified validation share of the source.
pub fn holdout_split(
    source: &[LabeledImage],
    fraction: f64,
    rng: &mut impl Rng,
) -> (Vec<LabeledImage>, Vec<LabeledImage>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let max_label = source.iter().map(|s| s.label).max().unwrap_or(0);
    for label in 0..=max_label {
        let mut members: Vec<&LabeledImage> = source.iter().filter(|s| s.label == label).collect();
        members.shuffle(rng);
        let k = libm::round(members.len() as f64 * fraction) as usize;
        val.extend(members[..k].iter().map(|s| (*s).clone()));
        train.extend(members[k..].iter().map(|s| (*s).clone()));
    }
    (train, val)
}

/// Runs the full meta-training loop from a seeded initialization.
pub fn train<L: Learner + ?Sized>(learner: &L, source: &[LabeledImage], setup: &TrainSetup) -> Result<TrainOutcome> {
    setup.validate()?;
    let seed = setup.meta.seed;
    let initial = learner.init_params(&mut rng::stream(seed, &[TAG_INIT]));
    let (train_part, val_part) = holdout_split(
        source,
        setup.meta.validation_fraction,
        &mut rng::stream(seed, &[TAG_VALIDATION]),
    );
    check_source(&train_part)?;
    let val_set = if val_part.is_empty() { &train_part } else { &val_part };
    train_from(learner, initial, &train_part, val_set, setup)
}

/// Meta-training from given parameters on an already separated source.
pub fn train_from<L: Learner + ?Sized>(
    learner: &L,
    initial: ParamSet,
    train_part: &[LabeledImage],
    val_set: &[LabeledImage],
    setup: &TrainSetup,
) -> Result<TrainOutcome> {
    setup.validate()?;
    let meta = &setup.meta;
    let mut phi = initial.clone();
    let mut history = Vec::with_capacity(meta.epochs);
    for epoch in 0..meta.epochs {
        let mut erng = rng::stream(meta.seed, &[TAG_EPOCH, epoch as u64]);
        let pool = build_task_pool(train_part, meta, &mut erng)?;
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.shuffle(&mut erng);
        let mut train_losses = Vec::new();
        let mut test_losses = Vec::new();
        for group in order.chunks_exact(meta.tasks_per_iteration) {
            let mut grads = Vec::with_capacity(group.len());
            for &t in group {
                let mut trng = rng::fork(&mut erng);
                let (adapted, tl) = meta_train_step(learner, &phi, &pool[t], setup, &mut trng)?;
                let (g, sl) = meta_test_grads(learner, &adapted, &pool[t], setup, &mut trng)?;
                grads.push(g);
                train_losses.push(tl);
                test_losses.push(sl);
            }
            phi = outer_update(&phi, &grads, meta.outer_lr)?;
        }
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: LossBreakdown::mean(&train_losses),
            test_loss: LossBreakdown::mean(&test_losses),
            val_accuracy: accuracy(learner, &phi, val_set)?,
        });
    }
    Ok(TrainOutcome {
        initial,
        params: phi,
        history,
    })
}
