//! KDIS importance scoring and the joint distillation-aware pruning loop.
//!
//! Importance of a weight is the accumulated squared product of its gradient
//! and value over a window of fine-tuning minibatches. After each window the
//! lowest-scoring still-active weights of every hidden block layer are masked
//! to zero, and fine-tuning continues under the grown masks until each layer
//! reaches the target sparsity.

use ndarray::{Array4, ArrayD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datahub::WindowedDataset;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{MaskSet, ModelGrads, ScaledLaplacian, StGcn, HIDDEN_WEIGHT_NAMES};
use crate::train::{
    epoch_batches, kd_step, lr_at, normalized_first_step_targets, regression_step, select_inputs,
    validation_loss, Adam, LossKind, StepOutcome, TrainConfig,
};

/// Unit of pruning: individual weights, or whole output filters of each
/// layer (the trailing tensor axis), scored by their summed importance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    PerParameter,
    PerFilter,
}

/// When and how much to prune during the joint loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PruneSchedule {
    /// Number of fine-tuning minibatches between prune events; also the
    /// divisor that turns accumulated importance into a window average.
    pub pruning_minibatch: usize,
    /// Fraction of each layer's original unit count masked per event.
    pub per_event_fraction: f64,
    /// Final fraction of each layer's units to mask. Zero disables pruning
    /// and reduces the loop to plain fine-tuning.
    pub target_sparsity: f64,
    pub granularity: Granularity,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        PruneSchedule {
            pruning_minibatch: 50,
            per_event_fraction: 0.05,
            target_sparsity: 0.97,
            granularity: Granularity::PerParameter,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.pruning_minibatch == 0 {
            return Err(Error::Config("pruning_minibatch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.target_sparsity) {
            return Err(Error::Config(format!(
                "target_sparsity must lie in [0, 1], got {}",
                self.target_sparsity
            )));
        }
        if self.target_sparsity > 0.0
            && !(self.per_event_fraction > 0.0 && self.per_event_fraction <= self.target_sparsity)
        {
            return Err(Error::Config(format!(
                "per_event_fraction must lie in (0, target_sparsity], got {} with target {}",
                self.per_event_fraction, self.target_sparsity
            )));
        }
        Ok(())
    }
}

/// Adds each weight's squared gradient-weight product to its running score.
pub fn accumulate_kdis(scores: &mut ArrayD<f64>, grad: &ArrayD<f64>, weight: &ArrayD<f64>) -> Result<()> {
    if scores.shape() != grad.shape() || grad.shape() != weight.shape() {
        return Err(Error::Shape(format!(
            "importance accumulation shapes disagree: scores {:?}, grad {:?}, weight {:?}",
            scores.shape(),
            grad.shape(),
            weight.shape()
        )));
    }
    for ((s, &g), &w) in scores.iter_mut().zip(grad.iter()).zip(weight.iter()) {
        *s += (g * w) * (g * w);
    }
    Ok(())
}

/// Running importance scores for the six hidden weight tensors, accumulated
/// one minibatch at a time between prune events.
pub struct KdisAccumulator {
    pub scores: Vec<(String, ArrayD<f64>)>,
    pub counter: usize,
}

impl KdisAccumulator {
    pub fn new(model: &StGcn) -> Self {
        let scores = model
            .tensors()
            .into_iter()
            .filter(|(name, _)| HIDDEN_WEIGHT_NAMES.contains(name))
            .map(|(name, t)| (name.to_string(), ArrayD::zeros(t.shape())))
            .collect();
        KdisAccumulator { scores, counter: 0 }
    }

    /// Folds one minibatch's gradients into the scores.
    pub fn accumulate(&mut self, model: &StGcn, grads: &ModelGrads) -> Result<()> {
        let weights = model.tensors();
        let gtensors = grads.tensors();
        for (name, score) in &mut self.scores {
            let w = weights
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.to_owned())
                .ok_or_else(|| Error::Shape(format!("model has no tensor {name}")))?;
            let g = gtensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.to_owned())
                .ok_or_else(|| Error::Shape(format!("gradients have no tensor {name}")))?;
            accumulate_kdis(score, &g, &w)?;
        }
        self.counter += 1;
        Ok(())
    }

    /// Scores divided by the window length.
    pub fn averaged(&self) -> Vec<(String, ArrayD<f64>)> {
        let d = self.counter.max(1) as f64;
        self.scores
            .iter()
            .map(|(n, s)| (n.clone(), s.mapv(|v| v / d)))
            .collect()
    }

    pub fn reset(&mut self) {
        for (_, s) in &mut self.scores {
            s.fill(0.0);
        }
        self.counter = 0;
    }
}

/// Per-unit view of a layer under a granularity: unit count and the stride
/// of elements per unit.
fn layer_units(shape: &[usize], g: Granularity) -> (usize, usize) {
    let total: usize = shape.iter().product();
    match g {
        Granularity::PerParameter => (total, 1),
        Granularity::PerFilter => {
            let filters = *shape.last().unwrap_or(&1);
            (filters, total / filters.max(1))
        }
    }
}

/// Score of each unit and whether it is still fully active. With per-filter
/// granularity the trailing axis indexes units, so a unit's elements are the
/// flat positions congruent to it modulo the filter count.
fn unit_view(score: &ArrayD<f64>, mask: &ArrayD<f64>, g: Granularity) -> Vec<(f64, bool)> {
    let (units, _) = layer_units(score.shape(), g);
    match g {
        Granularity::PerParameter => score
            .iter()
            .zip(mask.iter())
            .map(|(&s, &m)| (s, m != 0.0))
            .collect(),
        Granularity::PerFilter => {
            let s: Vec<f64> = score.iter().copied().collect();
            let m: Vec<f64> = mask.iter().copied().collect();
            (0..units)
                .map(|u| {
                    let mut total = 0.0;
                    let mut active = false;
                    for (i, &v) in s.iter().enumerate() {
                        if i % units == u {
                            total += v;
                            if m[i] != 0.0 {
                                active = true;
                            }
                        }
                    }
                    (total, active)
                })
                .collect()
        }
    }
}

fn mask_unit(mask: &mut ArrayD<f64>, unit: usize, g: Granularity) {
    match g {
        Granularity::PerParameter => {
            mask.as_slice_mut().unwrap()[unit] = 0.0;
        }
        Granularity::PerFilter => {
            let units = *mask.shape().last().unwrap_or(&1);
            for (i, v) in mask.as_slice_mut().unwrap().iter_mut().enumerate() {
                if i % units == unit {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Per-layer record of one prune event.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerEvent {
    pub layer: String,
    pub newly_pruned: usize,
    pub sparsity: f64,
    pub mean_kdis: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruneEvent {
    pub event: usize,
    pub minibatch: usize,
    pub layers: Vec<LayerEvent>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PruneHistory {
    pub events: Vec<PruneEvent>,
}

impl PruneHistory {
    pub fn csv(&self) -> String {
        let mut out = String::from("event,minibatch,layer,newly_pruned,sparsity,mean_kdis\n");
        for e in &self.events {
            for l in &e.layers {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    e.event, e.minibatch, l.layer, l.newly_pruned, l.sparsity, l.mean_kdis
                ));
            }
        }
        out
    }
}

/// Whether every layer has reached its rounded per-layer target unit count.
pub fn at_target(masks: &MaskSet, schedule: &PruneSchedule) -> bool {
    masks.masks.iter().all(|(_, mask)| {
        let (units, _) = layer_units(mask.shape(), schedule.granularity);
        let goal = (schedule.target_sparsity * units as f64).round() as usize;
        let pruned = units
            - unit_view(&ArrayD::zeros(mask.shape()), mask, schedule.granularity)
                .iter()
                .filter(|(_, active)| *active)
                .count();
        pruned >= goal
    })
}

/// One pruning step: averages the accumulated scores, masks each layer's
/// lowest-scoring still-active units (ties broken by ascending index), and
/// resets the accumulator. Never takes a layer past its target count.
pub fn prune_event(
    acc: &mut KdisAccumulator,
    masks: &mut MaskSet,
    schedule: &PruneSchedule,
) -> Result<Vec<LayerEvent>> {
    schedule.validate()?;
    if acc.counter != schedule.pruning_minibatch {
        return Err(Error::Sequencing(format!(
            "prune event fired after {} minibatches, expected {}",
            acc.counter, schedule.pruning_minibatch
        )));
    }
    let averaged = acc.averaged();
    let mut out = Vec::with_capacity(averaged.len());
    for (name, score) in &averaged {
        let mask = masks
            .get_mut(name)
            .ok_or_else(|| Error::Shape(format!("mask set has no tensor {name}")))?;
        let g = schedule.granularity;
        let (units, _) = layer_units(score.shape(), g);
        let view = unit_view(score, mask, g);
        let already = view.iter().filter(|(_, active)| !*active).count();
        let goal = (schedule.target_sparsity * units as f64).round() as usize;
        // At least one unit per event so tiny layers still make progress.
        let per_event = ((schedule.per_event_fraction * units as f64).round() as usize).max(1);
        let k = per_event.min(goal.saturating_sub(already));

        let mut candidates: Vec<(usize, f64)> = view
            .iter()
            .enumerate()
            .filter(|(_, (_, active))| *active)
            .map(|(i, (s, _))| (i, *s))
            .collect();
        candidates.sort_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.0.cmp(&b.0))
        });
        for &(unit, _) in candidates.iter().take(k) {
            mask_unit(mask, unit, g);
        }

        let active_after = unit_view(score, mask, g).iter().filter(|(_, a)| *a).count();
        let active_scores: Vec<f64> = score
            .iter()
            .zip(mask.iter())
            .filter(|(_, &m)| m != 0.0)
            .map(|(&s, _)| s)
            .collect();
        let mean_kdis = if active_scores.is_empty() {
            0.0
        } else {
            active_scores.iter().sum::<f64>() / active_scores.len() as f64
        };
        out.push(LayerEvent {
            layer: name.clone(),
            newly_pruned: k,
            sparsity: (units - active_after) as f64 / units as f64,
            mean_kdis,
        });
    }
    acc.reset();
    Ok(out)
}

/// Result of a full pruning run.
pub struct PruneOutcome {
    pub model: StGcn,
    pub masks: MaskSet,
    pub history: PruneHistory,
    pub final_val_loss: f64,
}

enum FineTune<'a> {
    Distill { teacher: &'a StGcn, weights: &'a LossWeights },
    Regression,
}

fn prune_loop(
    mut model: StGcn,
    lap: &ScaledLaplacian,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    schedule: &PruneSchedule,
    objective: FineTune<'_>,
) -> Result<PruneOutcome> {
    cfg.validate()?;
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    let mut masks = MaskSet::ones(&model);
    let mut acc = KdisAccumulator::new(&model);
    let mut opt = Adam::new(&model, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = PruneHistory::default();
    let mut minibatch = 0usize;
    let mut epoch = 0usize;

    let step = |model: &StGcn, x: &Array4<f64>, t: &Array4<f64>| -> Result<StepOutcome> {
        match &objective {
            FineTune::Distill { teacher, weights } => {
                kd_step(model, teacher, lap, x, t, LossKind::Stcd, weights)
            }
            FineTune::Regression => regression_step(model, lap, x, t),
        }
    };

    // Pruning phase: fine-tune, accumulate importance, fire events on
    // schedule; extra passes over the data are taken if the target is not
    // reached within one epoch.
    while !at_target(&masks, schedule) {
        opt.lr = lr_at(cfg.lr, cfg.lr_decay, cfg.lr_decay_every, epoch);
        for idx in epoch_batches(train.n_samples(), cfg.batch_size, &mut rng) {
            let x = select_inputs(train, &idx);
            let t = normalized_first_step_targets(train, &idx);
            let outcome = step(&model, &x, &t)?;
            if !outcome.loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "loss became non-finite during pruning at minibatch {minibatch}"
                )));
            }
            acc.accumulate(&model, &outcome.grads)?;
            opt.step(&mut model, &outcome.grads, Some(&masks))?;
            minibatch += 1;
            if acc.counter == schedule.pruning_minibatch {
                let layers = prune_event(&mut acc, &mut masks, schedule)?;
                masks.apply(&mut model)?;
                history.events.push(PruneEvent {
                    event: history.events.len(),
                    minibatch,
                    layers,
                });
                if at_target(&masks, schedule) {
                    break;
                }
            }
        }
        epoch += 1;
    }

    // Final fine-tuning under the frozen masks.
    for ft_epoch in 0..cfg.epochs {
        opt.lr = lr_at(cfg.lr, cfg.lr_decay, cfg.lr_decay_every, epoch + ft_epoch);
        for idx in epoch_batches(train.n_samples(), cfg.batch_size, &mut rng) {
            let x = select_inputs(train, &idx);
            let t = normalized_first_step_targets(train, &idx);
            let outcome = step(&model, &x, &t)?;
            if !outcome.loss.is_finite() {
                return Err(Error::Diverged(
                    "loss became non-finite during post-prune fine-tuning".into(),
                ));
            }
            opt.step(&mut model, &outcome.grads, Some(&masks))?;
        }
    }
    let final_val_loss = validation_loss(&model, lap, val, cfg.batch_size)?;
    Ok(PruneOutcome { model, masks, history, final_val_loss })
}

/// Joint distillation-aware pruning: fine-tunes the base model against a
/// frozen teacher with the combined routed-response and correlation loss,
/// scores weights from those gradients, and prunes on schedule.
pub fn run_algorithm1(
    base_model: StGcn,
    teacher: &StGcn,
    lap: &ScaledLaplacian,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    schedule: &PruneSchedule,
    weights: &LossWeights,
) -> Result<PruneOutcome> {
    prune_loop(
        base_model,
        lap,
        train,
        val,
        cfg,
        schedule,
        FineTune::Distill { teacher, weights },
    )
}

/// The same pruning loop driven by plain target regression, without a
/// teacher; the classical magnitude-times-gradient baseline.
pub fn traditional_prune_baseline(
    base_model: StGcn,
    lap: &ScaledLaplacian,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    schedule: &PruneSchedule,
) -> Result<PruneOutcome> {
    prune_loop(base_model, lap, train, val, cfg, schedule, FineTune::Regression)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{ArrayD, IxDyn};

    use crate::datahub::{generate_synthetic, window, SyntheticSpec};
    use crate::model::{build_model, scaled_laplacian, ModelConfig};

    fn arr(v: &[f64]) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap()
    }

    #[test]
    fn kdis_hand_values() {
        let mut s = arr(&[0.0, 0.0]);
        accumulate_kdis(&mut s, &arr(&[0.5, -1.0]), &arr(&[1.0, 2.0])).unwrap();
        assert_eq!(s.as_slice().unwrap(), &[0.25, 4.0]);
        // One filter spanning both entries sums the contributions.
        let mask = arr(&[1.0, 1.0]);
        let grouped = unit_view(
            &s,
            &mask,
            Granularity::PerFilter,
        );
        // Trailing axis has length 2 here, so per-filter yields two units;
        // reshape to (2, 1) to get a single filter.
        let s2 = s.clone().into_shape(IxDyn(&[2, 1])).unwrap();
        let m2 = mask.clone().into_shape(IxDyn(&[2, 1])).unwrap();
        let one_group = unit_view(&s2, &m2, Granularity::PerFilter);
        assert_eq!(one_group.len(), 1);
        assert_eq!(one_group[0].0, 4.25);
        assert_eq!(grouped.len(), 2);
    }

    #[test]
    fn zero_gradient_contributes_nothing() {
        let mut s = arr(&[0.0, 0.0]);
        accumulate_kdis(&mut s, &arr(&[0.0, 0.0]), &arr(&[5.0, -7.0])).unwrap();
        assert_eq!(s.as_slice().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn accumulate_shape_mismatch_rejected() {
        let mut s = arr(&[0.0, 0.0]);
        assert!(accumulate_kdis(&mut s, &arr(&[1.0]), &arr(&[1.0, 2.0])).is_err());
    }

    fn toy_model() -> StGcn {
        let mut cfg = ModelConfig::new([1, 2, 3], [3, 2, 4], 4, 6);
        cfg.temporal_kernel = 2;
        cfg.spatial_order = 2;
        build_model(&cfg, 91).unwrap()
    }

    /// A schedule plus an accumulator whose counter is already at the event
    /// boundary, with externally supplied scores for one layer.
    fn primed(model: &StGcn, schedule: &PruneSchedule) -> KdisAccumulator {
        let mut acc = KdisAccumulator::new(model);
        acc.counter = schedule.pruning_minibatch;
        acc
    }

    #[test]
    fn event_before_interval_is_sequencing_error() {
        let model = toy_model();
        let schedule = PruneSchedule { pruning_minibatch: 10, ..PruneSchedule::default() };
        let mut acc = KdisAccumulator::new(&model);
        acc.counter = 3;
        let mut masks = MaskSet::ones(&model);
        assert!(matches!(
            prune_event(&mut acc, &mut masks, &schedule),
            Err(Error::Sequencing(_))
        ));
    }

    #[test]
    fn uniform_scores_tie_break_by_index() {
        let model = toy_model();
        let schedule = PruneSchedule {
            pruning_minibatch: 1,
            per_event_fraction: 0.25,
            target_sparsity: 0.97,
            granularity: Granularity::PerParameter,
        };
        let mut acc = primed(&model, &schedule);
        for (_, s) in &mut acc.scores {
            s.fill(1.0);
        }
        let mut masks = MaskSet::ones(&model);
        prune_event(&mut acc, &mut masks, &schedule).unwrap();
        for (_, mask) in &masks.masks {
            let flat: Vec<f64> = mask.iter().copied().collect();
            let k = (0.25 * flat.len() as f64).round() as usize;
            for (i, v) in flat.iter().enumerate() {
                if i < k {
                    assert_eq!(*v, 0.0, "lowest indices must be masked first");
                } else {
                    assert_eq!(*v, 1.0);
                }
            }
        }
    }

    #[test]
    fn lowest_scores_pruned_first() {
        let model = toy_model();
        let schedule = PruneSchedule {
            pruning_minibatch: 1,
            per_event_fraction: 0.25,
            target_sparsity: 0.97,
            granularity: Granularity::PerParameter,
        };
        let mut acc = primed(&model, &schedule);
        // First layer gets the constructed scores [4, 1, 3, 2, ...]; rest 1.
        let pattern = [4.0, 1.0, 3.0, 2.0];
        for (li, (_, s)) in acc.scores.iter_mut().enumerate() {
            if li == 0 {
                for (i, v) in s.iter_mut().enumerate() {
                    *v = pattern[i % 4] + (i / 4) as f64 * 10.0;
                }
            } else {
                s.fill(1.0);
            }
        }
        let mut masks = MaskSet::ones(&model);
        prune_event(&mut acc, &mut masks, &schedule).unwrap();
        let first = &masks.masks[0].1;
        let flat: Vec<f64> = first.iter().copied().collect();
        // Among the first group of four, the scores 1 and 2 sit at indices
        // 1 and 3 and must fall before 4 and 3 at indices 0 and 2.
        assert_eq!(flat[1], 0.0);
        assert_eq!(flat[3], 0.0);
        assert_eq!(flat[0], 1.0);
        assert_eq!(flat[2], 1.0);
    }

    #[test]
    fn schedule_reaches_target_and_is_idempotent_there() {
        let model = toy_model();
        let schedule = PruneSchedule {
            pruning_minibatch: 1,
            per_event_fraction: 0.25,
            target_sparsity: 0.5,
            granularity: Granularity::PerParameter,
        };
        let mut masks = MaskSet::ones(&model);
        let mut sparsities = Vec::new();
        for _ in 0..3 {
            let mut acc = primed(&model, &schedule);
            for (_, s) in &mut acc.scores {
                s.fill(1.0);
            }
            prune_event(&mut acc, &mut masks, &schedule).unwrap();
            sparsities.push(masks.pruned() as f64 / masks.total() as f64);
        }
        // 25%, then 50%, then no change at target.
        assert!((sparsities[0] - 0.25).abs() < 0.02);
        assert!((sparsities[1] - 0.5).abs() < 0.02);
        assert_eq!(sparsities[1], sparsities[2]);
        assert!(at_target(&masks, &schedule));
    }

    #[test]
    fn zero_gradient_weights_fall_before_high_importance_ones() {
        let model = toy_model();
        let schedule = PruneSchedule {
            pruning_minibatch: 2,
            per_event_fraction: 0.5,
            target_sparsity: 0.97,
            granularity: Granularity::PerParameter,
        };
        let mut acc = KdisAccumulator::new(&model);
        // Two accumulation rounds: even indices always get zero gradient,
        // odd indices a large one.
        for _ in 0..2 {
            let fake: Vec<(String, ArrayD<f64>)> = acc
                .scores
                .iter()
                .map(|(n, s)| {
                    let mut g = ArrayD::zeros(s.shape());
                    for (i, v) in g.iter_mut().enumerate() {
                        *v = if i % 2 == 0 { 0.0 } else { 3.0 };
                    }
                    (n.clone(), g)
                })
                .collect();
            for ((name, score), (_, g)) in acc.scores.iter_mut().zip(&fake) {
                let w = ArrayD::from_elem(g.shape(), 1.5);
                accumulate_kdis(score, g, &w).unwrap();
                let _ = name;
            }
            acc.counter += 1;
        }
        let mut masks = MaskSet::ones(&model);
        prune_event(&mut acc, &mut masks, &schedule).unwrap();
        for (_, mask) in &masks.masks {
            for (i, &v) in mask.iter().enumerate() {
                if v == 0.0 {
                    assert_eq!(i % 2, 0, "only zero-gradient weights may be pruned");
                }
            }
        }
    }

    fn toy_setup() -> (ScaledLaplacian, WindowedDataset, WindowedDataset) {
        let spec = SyntheticSpec {
            n_nodes: 4,
            n_timesteps: 120,
            seed: 92,
            ..SyntheticSpec::default()
        };
        let (speeds, adj) = generate_synthetic(&spec).unwrap();
        let lap = scaled_laplacian(&adj).unwrap();
        let (train, val, _test) = window(&speeds, 6, 3, [0.7, 0.15, 0.15]).unwrap();
        (lap, train, val)
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig { epochs: 1, batch_size: 16, seed: 93, ..TrainConfig::default() }
    }

    #[test]
    fn joint_pruning_is_monotone_masked_forever_and_deterministic() {
        let (lap, train, val) = toy_setup();
        let teacher = toy_model();
        let schedule = PruneSchedule {
            pruning_minibatch: 2,
            per_event_fraction: 0.2,
            target_sparsity: 0.6,
            granularity: Granularity::PerParameter,
        };
        let w = LossWeights { beta: 0.5, alpha1: 0.5, alpha2: 0.4, alpha3: 0.3 };
        let run = || {
            run_algorithm1(
                toy_model(),
                &teacher,
                &lap,
                &train,
                &val,
                &quick_cfg(),
                &schedule,
                &w,
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        // Determinism.
        for ((na, ma), (nb, mb)) in a.masks.masks.iter().zip(&b.masks.masks) {
            assert_eq!(na, nb);
            assert_eq!(ma, mb);
        }
        // Monotone sparsity across events.
        let mut last: std::collections::HashMap<&str, f64> = Default::default();
        for e in &a.history.events {
            for l in &e.layers {
                let prev = last.insert(l.layer.as_str(), l.sparsity).unwrap_or(0.0);
                assert!(l.sparsity >= prev - 1e-12);
            }
        }
        // Final sparsity within one unit of target per layer.
        for (_, mask) in &a.masks.masks {
            let total = mask.len();
            let pruned = mask.iter().filter(|&&v| v == 0.0).count();
            let goal = (0.6 * total as f64).round() as usize;
            assert_eq!(pruned, goal);
        }
        // Masked weights are zero in the returned model.
        let tensors = a.model.tensors();
        for (name, mask) in &a.masks.masks {
            let (_, t) = tensors.iter().find(|(n, _)| n == name).unwrap();
            for (&m, &v) in mask.iter().zip(t.iter()) {
                if m == 0.0 {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_target_is_pure_fine_tuning() {
        let (lap, train, val) = toy_setup();
        let teacher = toy_model();
        let schedule = PruneSchedule {
            pruning_minibatch: 2,
            per_event_fraction: 0.2,
            target_sparsity: 0.0,
            granularity: Granularity::PerParameter,
        };
        let w = LossWeights { beta: 0.5, alpha1: 0.5, alpha2: 0.4, alpha3: 0.3 };
        let out = run_algorithm1(
            toy_model(),
            &teacher,
            &lap,
            &train,
            &val,
            &quick_cfg(),
            &schedule,
            &w,
        )
        .unwrap();
        assert_eq!(out.masks.pruned(), 0);
        assert!(out.history.events.is_empty());
    }

    #[test]
    fn baseline_runs_and_matches_event_count() {
        let (lap, train, val) = toy_setup();
        let schedule = PruneSchedule {
            pruning_minibatch: 2,
            per_event_fraction: 0.3,
            target_sparsity: 0.6,
            granularity: Granularity::PerParameter,
        };
        let base = traditional_prune_baseline(
            toy_model(),
            &lap,
            &train,
            &val,
            &quick_cfg(),
            &schedule,
        )
        .unwrap();
        let teacher = toy_model();
        let w = LossWeights { beta: 0.5, alpha1: 0.5, alpha2: 0.4, alpha3: 0.3 };
        let kd = run_algorithm1(
            toy_model(),
            &teacher,
            &lap,
            &train,
            &val,
            &quick_cfg(),
            &schedule,
            &w,
        )
        .unwrap();
        assert_eq!(base.history.events.len(), kd.history.events.len());
        // KD-driven importance generally selects different weights.
        let hamming: usize = base
            .masks
            .masks
            .iter()
            .zip(&kd.masks.masks)
            .map(|((_, a), (_, b))| a.iter().zip(b.iter()).filter(|(x, y)| x != y).count())
            .sum();
        assert!(hamming > 0);
    }

    #[test]
    fn per_filter_masks_whole_filters() {
        let model = toy_model();
        let schedule = PruneSchedule {
            pruning_minibatch: 1,
            per_event_fraction: 0.5,
            target_sparsity: 0.97,
            granularity: Granularity::PerFilter,
        };
        let mut acc = primed(&model, &schedule);
        for (_, s) in &mut acc.scores {
            for (i, v) in s.iter_mut().enumerate() {
                *v = i as f64;
            }
        }
        let mut masks = MaskSet::ones(&model);
        prune_event(&mut acc, &mut masks, &schedule).unwrap();
        for (_, mask) in &masks.masks {
            let filters = *mask.shape().last().unwrap();
            let flat: Vec<f64> = mask.iter().copied().collect();
            for f in 0..filters {
                let vals: Vec<f64> = flat
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % filters == f)
                    .map(|(_, &v)| v)
                    .collect();
                assert!(
                    vals.iter().all(|&v| v == 0.0) || vals.iter().all(|&v| v == 1.0),
                    "filter must be masked or kept as a whole"
                );
            }
        }
    }

    #[test]
    fn invalid_schedules_rejected() {
        let mut s = PruneSchedule::default();
        s.per_event_fraction = 0.0;
        assert!(s.validate().is_err());
        let mut s = PruneSchedule::default();
        s.per_event_fraction = 0.5;
        s.target_sparsity = 0.25;
        assert!(s.validate().is_err());
        let mut s = PruneSchedule::default();
        s.pruning_minibatch = 0;
        assert!(s.validate().is_err());
        let mut s = PruneSchedule::default();
        s.target_sparsity = 1.5;
        assert!(s.validate().is_err());
    }
}
