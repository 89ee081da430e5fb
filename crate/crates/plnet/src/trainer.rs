//! Mini-batch SGD on the joint objective, with step learning-rate decay
//! and per-iteration part regeneration.
//!
//! Each iteration samples a batch, runs one graph per sample (parts are
//! regenerated from that sample's current feature maps), averages the
//! parameter gradients, and applies one SGD step. Momentum and weight decay
//! are plumbed but default to zero.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::network::{
    total_loss, BackboneConfig, BoundModel, ClassifierKind, Model, PartLossMode, PartSource,
};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use std::fmt::Write as _;
use std::path::Path;

/// Where part boxes come from during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartStyle {
    Generated,
    Grid,
}

impl PartStyle {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "generated" => Ok(PartStyle::Generated),
            "grid" => Ok(PartStyle::Grid),
            other => Err(Error::Input(format!("unknown part style '{}'", other))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr0: f64,
    /// Iterations between learning-rate decays.
    pub step_size: usize,
    pub gamma: f64,
    pub max_iters: usize,
    pub batch_size: usize,
    pub k: usize,
    pub seed: u64,
    /// Weight of the part-loss term in the objective.
    pub part_coeff: f64,
    /// Saliency threshold for generated parts.
    pub threshold: f64,
    pub part_style: PartStyle,
    pub part_loss_mode: PartLossMode,
    pub classifier: ClassifierKind,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Iterations between mid-training checkpoints, when a directory is given.
    pub checkpoint_interval: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.01,
            step_size: 2500,
            gamma: 0.75,
            max_iters: 300,
            batch_size: 16,
            k: 4,
            seed: 0,
            part_coeff: 1.0,
            threshold: 0.5,
            part_style: PartStyle::Generated,
            part_loss_mode: PartLossMode::PerPart,
            classifier: ClassifierKind::Gap,
            momentum: 0.0,
            weight_decay: 0.0,
            checkpoint_interval: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must be in (0, 1]".into()));
        }
        if self.step_size == 0 {
            return Err(Error::Config("step size must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Step decay: `lr0 * gamma^floor(iter / step_size)`.
pub fn lr_schedule(iter: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.gamma.powi((iter / config.step_size) as i32)
}

/// One labeled training image.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub image: Tensor,
    pub label: usize,
}

/// One loss-log row; `parts` has one entry per part loss component.
#[derive(Debug, Clone)]
pub struct LogRow {
    pub iter: usize,
    pub lr: f64,
    pub global: f64,
    pub parts: Vec<f64>,
    pub total: f64,
}

/// Render the loss log as CSV: `iter,lr,global_loss,part_loss_1..K,total`.
pub fn log_to_csv(rows: &[LogRow]) -> String {
    let k = rows.first().map(|r| r.parts.len()).unwrap_or(0);
    let mut out = String::from("iter,lr,global_loss");
    for i in 1..=k {
        write!(out, ",part_loss_{}", i).expect("infallible");
    }
    out.push_str(",total\n");
    for r in rows {
        write!(out, "{},{}", r.iter, r.lr).expect("infallible");
        write!(out, ",{}", r.global).expect("infallible");
        for p in &r.parts {
            write!(out, ",{}", p).expect("infallible");
        }
        writeln!(out, ",{}", r.total).expect("infallible");
    }
    out
}

/// In-place SGD update `p <- p - lr * (g + wd * p)`, through a momentum
/// buffer when momentum is nonzero. `grads` must align with
/// [`Model::named_params`].
pub fn sgd_step(
    model: &mut Model,
    grads: &[Tensor],
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    velocity: &mut Vec<Tensor>,
) {
    let params = model.named_params_mut();
    assert_eq!(params.len(), grads.len(), "gradient list mismatch");
    if velocity.is_empty() && momentum != 0.0 {
        *velocity = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
    }
    for (i, ((_, p), g)) in params.into_iter().zip(grads).enumerate() {
        for (off, pv) in p.data_mut().iter_mut().enumerate() {
            let mut gv = g.data()[off];
            if weight_decay != 0.0 {
                gv += weight_decay * *pv;
            }
            if momentum != 0.0 {
                let v = &mut velocity[i].data_mut()[off];
                *v = momentum * *v + gv;
                gv = *v;
            }
            *pv -= lr * gv;
        }
    }
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogRow>,
}

/// Train a fresh model on the samples. `checkpoint_dir`, when set, receives
/// a checkpoint at every `checkpoint_interval` and at the end.
pub fn train(
    samples: &[TrainSample],
    num_classes: usize,
    backbone: BackboneConfig,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if num_classes < 2 {
        return Err(Error::Config(format!(
            "need at least 2 identities to train, got {}",
            num_classes
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    let mut rng = crate::rng::seeded(config.seed);
    let mut model = Model::new(
        backbone,
        num_classes,
        config.k,
        config.classifier,
        config.part_loss_mode,
        &mut rng,
    )?;
    let source = match config.part_style {
        PartStyle::Generated => PartSource::Generated {
            threshold: config.threshold,
        },
        PartStyle::Grid => PartSource::Grid,
    };
    let part_components = match (config.k, config.part_loss_mode) {
        (0, _) => 0,
        (_, PartLossMode::PerPart) => config.k,
        (_, PartLossMode::Concat) => 1,
    };

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = samples.len(); // force an initial shuffle
    let mut velocity: Vec<Tensor> = Vec::new();
    let mut log = Vec::with_capacity(config.max_iters);

    for iter in 0..config.max_iters {
        let lr = lr_schedule(iter, config);
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }

        let mut grads: Vec<Tensor> = model
            .named_params()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        let mut global_acc = 0.0;
        let mut part_acc = vec![0.0; part_components];
        let mut total_acc = 0.0;
        for &si in &batch {
            let sample = &samples[si];
            let mut graph = Graph::new();
            let bound = BoundModel::bind(&mut graph, &model);
            let loss = total_loss(
                &mut graph,
                &bound,
                &model,
                &sample.image,
                sample.label,
                &source,
                config.part_coeff,
            )?;
            let total = graph.value(loss.total).data()[0];
            if !total.is_finite() {
                let detail = format!(
                    "sample index {} (label {}), global {}, parts {:?}, batch {:?}",
                    si,
                    sample.label,
                    graph.value(loss.global).data()[0],
                    loss.parts
                        .iter()
                        .map(|&p| graph.value(p).data()[0])
                        .collect::<Vec<_>>(),
                    batch
                );
                return Err(Error::NonFiniteLoss { iter, detail });
            }
            graph.backward(loss.total)?;
            for (acc, &id) in grads.iter_mut().zip(&bound.param_ids()) {
                acc.add_assign(graph.grad(id));
            }
            global_acc += graph.value(loss.global).data()[0];
            for (a, &p) in part_acc.iter_mut().zip(&loss.parts) {
                *a += graph.value(p).data()[0];
            }
            total_acc += total;
        }
        let inv = 1.0 / batch.len() as f64;
        for g in &mut grads {
            g.scale_in_place(inv);
        }
        sgd_step(
            &mut model,
            &grads,
            lr,
            config.momentum,
            config.weight_decay,
            &mut velocity,
        );
        log.push(LogRow {
            iter,
            lr,
            global: global_acc * inv,
            parts: part_acc.iter().map(|p| p * inv).collect(),
            total: total_acc * inv,
        });

        if let (Some(dir), Some(interval)) = (checkpoint_dir, config.checkpoint_interval) {
            if interval > 0 && (iter + 1) % interval == 0 && iter + 1 < config.max_iters {
                crate::checkpoint::save(&model, dir)?;
            }
        }
    }
    if let Some(dir) = checkpoint_dir {
        crate::checkpoint::save(&model, dir)?;
    }
    Ok(TrainOutcome { model, log })
}
