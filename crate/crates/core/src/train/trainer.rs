use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datahub::WindowedDataset;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{ScaledLaplacian, StGcn};

use super::optimizer::{lr_at, Adam};
use super::step::{
    epoch_batches, kd_step, normalized_first_step_targets, regression_step, select_inputs,
    validation_loss, LossKind,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 50,
            lr: 1e-3,
            lr_decay: 0.7,
            lr_decay_every: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(0.0 < self.lr_decay && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        Ok(())
    }
}

/// Per-epoch training record; `teacher_ratio` is filled by routing losses.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub routed_terms: Option<u64>,
    pub total_terms: Option<u64>,
}

impl EpochStats {
    pub fn teacher_ratio(&self) -> Option<f64> {
        match (self.routed_terms, self.total_terms) {
            (Some(r), Some(t)) if t > 0 => Some(r as f64 / t as f64),
            _ => None,
        }
    }
}

/// A trained model with its best-validation snapshot and training curve.
pub struct TrainOutcome {
    pub model: StGcn,
    pub curve: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

pub fn curve_csv(curve: &[EpochStats]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss,teacher_ratio\n");
    for e in curve {
        let ratio = e
            .teacher_ratio()
            .map(|r| format!("{r}"))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.lr, e.train_loss, e.val_loss, ratio
        ));
    }
    out
}

fn check_divergence(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Diverged(format!(
            "loss became non-finite ({loss}) in epoch {epoch}"
        )));
    }
    Ok(())
}

enum Objective<'a> {
    Regression,
    Distill {
        teacher: &'a StGcn,
        kind: LossKind,
        weights: &'a LossWeights,
    },
}

fn train_loop(
    mut model: StGcn,
    lap: &ScaledLaplacian,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    objective: Objective<'_>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    let mut opt = Adam::new(&model, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, StGcn)> = None;

    for epoch in 0..cfg.epochs {
        opt.lr = lr_at(cfg.lr, cfg.lr_decay, cfg.lr_decay_every, epoch);
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        let mut routed: u64 = 0;
        let mut total: u64 = 0;
        let mut saw_routing = false;
        for idx in epoch_batches(train.n_samples(), cfg.batch_size, &mut rng) {
            let x = select_inputs(train, &idx);
            let t = normalized_first_step_targets(train, &idx);
            let outcome = match &objective {
                Objective::Regression => regression_step(&model, lap, &x, &t)?,
                Objective::Distill { teacher, kind, weights } => {
                    kd_step(&model, teacher, lap, &x, &t, *kind, weights)?
                }
            };
            check_divergence(outcome.loss, epoch)?;
            epoch_loss += outcome.loss;
            steps += 1;
            if let Some((r, n)) = outcome.routing {
                saw_routing = true;
                routed += r as u64;
                total += n as u64;
            }
            opt.step(&mut model, &outcome.grads, None)?;
        }
        let train_loss = epoch_loss / steps as f64;
        let val_loss = validation_loss(&model, lap, val, cfg.batch_size)?;
        check_divergence(val_loss, epoch)?;
        if best.as_ref().map_or(true, |(_, v, _)| val_loss < *v) {
            best = Some((epoch, val_loss, model.clone()));
        }
        curve.push(EpochStats {
            epoch,
            lr: opt.lr,
            train_loss,
            val_loss,
            routed_terms: saw_routing.then_some(routed),
            total_terms: saw_routing.then_some(total),
        });
    }
    let (best_epoch, best_val_loss, best_model) = best.unwrap();
    Ok(TrainOutcome {
        model: best_model,
        curve,
        best_epoch,
        best_val_loss,
    })
}

/// Trains a model against the targets alone (the teacher protocol).
pub fn train_teacher(
    model: StGcn,
    lap: &ScaledLaplacian,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_loop(model, lap, train, val, cfg, Objective::Regression)
}

/// Trains a student under a frozen teacher with the selected distillation
/// objective.
pub fn train_student_kd(
    student: StGcn,
    teacher: &StGcn,
    lap: &ScaledLaplacian,
    train: &WindowedDataset,
    val: &WindowedDataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
    kind: LossKind,
) -> Result<TrainOutcome> {
    if teacher.config.n_nodes != student.config.n_nodes
        || teacher.config.input_window != student.config.input_window
        || teacher.config.temporal_kernel != student.config.temporal_kernel
    {
        return Err(Error::Validation(format!(
            "teacher and student architectures do not pair: nodes {}/{}, window {}/{}, \
             temporal kernel {}/{}",
            teacher.config.n_nodes,
            student.config.n_nodes,
            teacher.config.input_window,
            student.config.input_window,
            teacher.config.temporal_kernel,
            student.config.temporal_kernel,
        )));
    }
    train_loop(
        student,
        lap,
        train,
        val,
        cfg,
        Objective::Distill { teacher, kind, weights },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datahub::{generate_synthetic, window, SyntheticSpec};
    use crate::model::{build_model, scaled_laplacian, ModelConfig};

    fn toy_setup() -> (ModelConfig, ScaledLaplacian, WindowedDataset, WindowedDataset) {
        let spec = SyntheticSpec {
            n_nodes: 4,
            n_timesteps: 140,
            seed: 81,
            ..SyntheticSpec::default()
        };
        let (speeds, adj) = generate_synthetic(&spec).unwrap();
        let lap = scaled_laplacian(&adj).unwrap();
        let (train, val, _test) = window(&speeds, 6, 3, [0.7, 0.15, 0.15]).unwrap();
        let mut cfg = ModelConfig::new([1, 2, 3], [3, 2, 4], 4, 6);
        cfg.temporal_kernel = 2;
        cfg.spatial_order = 2;
        (cfg, lap, train, val)
    }

    #[test]
    fn teacher_training_tracks_best_validation() {
        let (cfg, lap, train, val) = toy_setup();
        let model = build_model(&cfg, 82).unwrap();
        let tc = TrainConfig { epochs: 4, batch_size: 16, seed: 82, ..TrainConfig::default() };
        let out = train_teacher(model, &lap, &train, &val, &tc).unwrap();
        assert_eq!(out.curve.len(), 4);
        let best = out
            .curve
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(out.best_val_loss, best);
        assert_eq!(out.curve[out.best_epoch].val_loss, best);
        assert!(out.curve.iter().all(|e| e.routed_terms.is_none()));
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let (cfg, lap, train, val) = toy_setup();
        let tc = TrainConfig { epochs: 2, batch_size: 16, seed: 83, ..TrainConfig::default() };
        let a = train_teacher(build_model(&cfg, 84).unwrap(), &lap, &train, &val, &tc).unwrap();
        let b = train_teacher(build_model(&cfg, 84).unwrap(), &lap, &train, &val, &tc).unwrap();
        for (ea, eb) in a.curve.iter().zip(&b.curve) {
            assert_eq!(ea.train_loss, eb.train_loss);
            assert_eq!(ea.val_loss, eb.val_loss);
        }
    }

    #[test]
    fn distillation_logs_exact_routing_counts() {
        let (cfg, lap, train, val) = toy_setup();
        let teacher = {
            let tc = TrainConfig { epochs: 2, batch_size: 16, seed: 85, ..TrainConfig::default() };
            train_teacher(build_model(&cfg, 85).unwrap(), &lap, &train, &val, &tc).unwrap().model
        };
        let mut scfg = cfg.clone();
        scfg.block1 = [1, 2, 2];
        scfg.block2 = [2, 2, 2];
        let student = build_model(&scfg, 86).unwrap();
        let tc = TrainConfig { epochs: 2, batch_size: 16, seed: 86, ..TrainConfig::default() };
        let w = LossWeights { beta: 0.5, alpha1: 0.5, alpha2: 0.4, alpha3: 0.3 };
        let out =
            train_student_kd(student, &teacher, &lap, &train, &val, &tc, &w, LossKind::Stcd)
                .unwrap();
        for e in &out.curve {
            let total = e.total_terms.unwrap();
            let routed = e.routed_terms.unwrap();
            assert_eq!(total as usize, train.n_samples() * train.n_nodes());
            assert!(routed <= total);
            let r = e.teacher_ratio().unwrap();
            assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn mismatched_teacher_student_rejected() {
        let (cfg, lap, train, val) = toy_setup();
        let teacher = build_model(&cfg, 87).unwrap();
        let mut scfg = cfg.clone();
        scfg.input_window = 8;
        let student = build_model(&scfg, 88).unwrap();
        let tc = TrainConfig { epochs: 1, batch_size: 16, ..TrainConfig::default() };
        let w = LossWeights { beta: 0.5, alpha1: 0.5, alpha2: 0.5, alpha3: 0.5 };
        assert!(train_student_kd(student, &teacher, &lap, &train, &val, &tc, &w, LossKind::RdL2)
            .is_err());
    }

    #[test]
    fn curve_csv_has_header_and_rows() {
        let curve = vec![EpochStats {
            epoch: 0,
            lr: 1e-3,
            train_loss: 0.5,
            val_loss: 0.4,
            routed_terms: Some(3),
            total_terms: Some(10),
        }];
        let csv = curve_csv(&curve);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,lr,train_loss,val_loss,teacher_ratio");
        assert_eq!(lines.next().unwrap(), "0,0.001,0.5,0.4,0.3");
    }

    #[test]
    fn invalid_config_rejected() {
        let (cfg, lap, train, val) = toy_setup();
        let model = build_model(&cfg, 89).unwrap();
        let tc = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(train_teacher(model, &lap, &train, &val, &tc).is_err());
    }
}
