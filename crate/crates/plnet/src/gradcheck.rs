//! Central finite-difference verification of the analytic gradients.
//!
//! The checker only ever calls forward passes: it perturbs one input entry
//! at a time by +/- eps and differences the resulting losses. It shares no
//! code with `Graph::backward`, so agreement is evidence, not tautology.

use crate::graph::Graph;
use crate::network::{self, BackboneConfig, BoundModel, ClassifierKind, LayerSpec, Model, PartLossMode, PartSource};
use crate::partgen::PartBox;
use crate::tensor::Tensor;

pub const EPSILON: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Central finite-difference gradient of `f` with respect to every entry of
/// every input tensor.
pub fn finite_diff<F>(inputs: &[Tensor], f: F, eps: f64) -> Vec<Tensor>
where
    F: Fn(&[Tensor]) -> f64,
{
    let mut grads: Vec<Tensor> = inputs.iter().map(|t| Tensor::zeros(t.shape())).collect();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for ti in 0..inputs.len() {
        for off in 0..inputs[ti].len() {
            let orig = work[ti].data()[off];
            work[ti].data_mut()[off] = orig + eps;
            let plus = f(&work);
            work[ti].data_mut()[off] = orig - eps;
            let minus = f(&work);
            work[ti].data_mut()[off] = orig;
            grads[ti].data_mut()[off] = (plus - minus) / (2.0 * eps);
        }
    }
    grads
}

/// Worst relative disagreement between analytic and numeric gradients.
/// The denominator is floored at 1e-3 so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[Tensor], numeric: &[Tensor]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n.data()) {
            let denom = av.abs().max(nv.abs()).max(1e-3);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Error of `analytic` against a finite-difference estimate. A stencil that
/// straddles a relu or max kink inflates the estimate by O(1) no matter how
/// correct the gradient is, so a failing coordinate is re-measured with a
/// 16x smaller step: that moves the stencil off a kink, while a genuine
/// gradient bug reproduces at any step size.
fn resolved_error<F>(inputs: &[Tensor], f: &F, analytic: &[Tensor]) -> f64
where
    F: Fn(&[Tensor]) -> f64,
{
    let numeric = finite_diff(inputs, f, EPSILON);
    let err = max_rel_error(analytic, &numeric);
    if err < TOLERANCE {
        return err;
    }
    let numeric = finite_diff(inputs, f, EPSILON / 16.0);
    err.min(max_rel_error(analytic, &numeric))
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

fn check_conv2d(seed: u64, instances: usize) -> CheckReport {
    let mut rng = crate::rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = crate::rng::uniform_tensor(&mut rng, &[2, 5, 5], 1.0);
        let k = crate::rng::uniform_tensor(&mut rng, &[3, 2, 3, 3], 1.0);
        let b = crate::rng::uniform_tensor(&mut rng, &[3], 1.0);
        let inputs = [x, k, b];
        let f = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let xi = g.leaf(ts[0].clone());
            let ki = g.leaf(ts[1].clone());
            let bi = g.leaf(ts[2].clone());
            let y = g.conv2d(xi, ki, bi, 1, 1).unwrap();
            // a fixed quadratic readout so the scalar depends on every output
            let sq = g.mul(y, y).unwrap();
            let s = g.sum(sq);
            g.value(s).data()[0]
        };
        let mut g = Graph::new();
        let xi = g.leaf(inputs[0].clone());
        let ki = g.leaf(inputs[1].clone());
        let bi = g.leaf(inputs[2].clone());
        let y = g.conv2d(xi, ki, bi, 1, 1).unwrap();
        let sq = g.mul(y, y).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        let analytic = vec![g.grad(xi).clone(), g.grad(ki).clone(), g.grad(bi).clone()];
        worst = worst.max(resolved_error(&inputs, &f, &analytic));
    }
    CheckReport {
        name: "conv2d".into(),
        instances,
        max_rel_err: worst,
    }
}

fn check_relu(seed: u64, instances: usize) -> CheckReport {
    let mut rng = crate::rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let mut x = crate::rng::uniform_tensor(&mut rng, &[4, 6], 1.0);
        // the kink at 0 makes finite differences meaningless there
        for v in x.data_mut() {
            if v.abs() < 1e-4 {
                *v += 1e-2;
            }
        }
        let inputs = [x];
        let f = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let xi = g.leaf(ts[0].clone());
            let y = g.relu(xi);
            let sq = g.mul(y, y).unwrap();
            let s = g.sum(sq);
            g.value(s).data()[0]
        };
        let mut g = Graph::new();
        let xi = g.leaf(inputs[0].clone());
        let y = g.relu(xi);
        let sq = g.mul(y, y).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        worst = worst.max(resolved_error(&inputs, &f, &[g.grad(xi).clone()]));
    }
    CheckReport {
        name: "relu".into(),
        instances,
        max_rel_err: worst,
    }
}

fn check_max_pool(seed: u64, instances: usize) -> CheckReport {
    let mut rng = crate::rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = crate::rng::uniform_tensor(&mut rng, &[2, 4, 4], 1.0);
        let inputs = [x];
        let f = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let xi = g.leaf(ts[0].clone());
            let y = g.max_pool2d(xi, 2, 2).unwrap();
            let sq = g.mul(y, y).unwrap();
            let s = g.sum(sq);
            g.value(s).data()[0]
        };
        let mut g = Graph::new();
        let xi = g.leaf(inputs[0].clone());
        let y = g.max_pool2d(xi, 2, 2).unwrap();
        let sq = g.mul(y, y).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        worst = worst.max(resolved_error(&inputs, &f, &[g.grad(xi).clone()]));
    }
    CheckReport {
        name: "max_pool2d".into(),
        instances,
        max_rel_err: worst,
    }
}

fn check_softmax_cross_entropy(seed: u64, instances: usize) -> CheckReport {
    let mut rng = crate::rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let logits = crate::rng::uniform_tensor(&mut rng, &[5], 2.0);
        let label = i % 5;
        let inputs = [logits];
        let f = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let li = g.leaf(ts[0].clone());
            let loss = g.softmax_cross_entropy(li, label).unwrap();
            g.value(loss).data()[0]
        };
        let mut g = Graph::new();
        let li = g.leaf(inputs[0].clone());
        let loss = g.softmax_cross_entropy(li, label).unwrap();
        g.backward(loss).unwrap();
        worst = worst.max(resolved_error(&inputs, &f, &[g.grad(li).clone()]));
    }
    CheckReport {
        name: "softmax_cross_entropy".into(),
        instances,
        max_rel_err: worst,
    }
}

fn check_spatial_mean(seed: u64, instances: usize) -> CheckReport {
    let mut rng = crate::rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let x = crate::rng::uniform_tensor(&mut rng, &[3, 4, 4], 1.0);
        let inputs = [x];
        let f = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let xi = g.leaf(ts[0].clone());
            let y = g.spatial_mean(xi).unwrap();
            let sq = g.mul(y, y).unwrap();
            let s = g.sum(sq);
            g.value(s).data()[0]
        };
        let mut g = Graph::new();
        let xi = g.leaf(inputs[0].clone());
        let y = g.spatial_mean(xi).unwrap();
        let sq = g.mul(y, y).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        worst = worst.max(resolved_error(&inputs, &f, &[g.grad(xi).clone()]));
    }
    CheckReport {
        name: "spatial_mean".into(),
        instances,
        max_rel_err: worst,
    }
}

fn check_roi_pool(seed: u64, instances: usize) -> CheckReport {
    let mut rng = crate::rng::seeded(seed);
    let mut worst: f64 = 0.0;
    let part = PartBox { top: 1, bottom: 5, left: 0, right: 4 };
    for _ in 0..instances {
        let x = crate::rng::uniform_tensor(&mut rng, &[2, 7, 6], 1.0);
        let inputs = [x];
        let f = |ts: &[Tensor]| {
            let mut g = Graph::new();
            let xi = g.leaf(ts[0].clone());
            let y = g.roi_pool_max(xi, &part, 4, 4).unwrap();
            let sq = g.mul(y, y).unwrap();
            let s = g.sum(sq);
            g.value(s).data()[0]
        };
        let mut g = Graph::new();
        let xi = g.leaf(inputs[0].clone());
        let y = g.roi_pool_max(xi, &part, 4, 4).unwrap();
        let sq = g.mul(y, y).unwrap();
        let s = g.sum(sq);
        g.backward(s).unwrap();
        worst = worst.max(resolved_error(&inputs, &f, &[g.grad(xi).clone()]));
    }
    CheckReport {
        name: "roi_pool".into(),
        instances,
        max_rel_err: worst,
    }
}

/// A small full pipeline for whole-graph checking: one conv/relu/pool stage,
/// 1x1-conv classifier with GAP, plus one part branch through RoI pooling.
fn tiny_config() -> BackboneConfig {
    BackboneConfig {
        in_channels: 3,
        in_height: 8,
        in_width: 8,
        layers: vec![LayerSpec { out_channels: 4, kernel: 3, stride: 1, pad: 1, pool: Some(2) }],
    }
}

fn check_end_to_end(seed: u64, instances: usize) -> CheckReport {
    let mut rng = crate::rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let model = Model::new(
            tiny_config(),
            3,
            1,
            ClassifierKind::Gap,
            PartLossMode::PerPart,
            &mut rng,
        )
        .unwrap();
        let image = crate::rng::uniform_tensor(&mut rng, &[3, 8, 8], 0.5);
        let label = i % 3;

        // freeze the boxes the unperturbed forward pass generates
        let boxes = {
            let mut g = Graph::new();
            let bound = BoundModel::bind(&mut g, &model);
            let loss = network::total_loss(
                &mut g,
                &bound,
                &model,
                &image,
                label,
                &PartSource::Generated { threshold: 0.5 },
                1.0,
            )
            .unwrap();
            loss.boxes
        };
        let source = PartSource::Fixed(boxes);

        let param_tensors: Vec<Tensor> =
            model.named_params().iter().map(|(_, t)| (*t).clone()).collect();
        let f = |ts: &[Tensor]| {
            let mut m = model.clone();
            for ((_, dst), src) in m.named_params_mut().into_iter().zip(ts) {
                *dst = src.clone();
            }
            let mut g = Graph::new();
            let bound = BoundModel::bind(&mut g, &m);
            let loss =
                network::total_loss(&mut g, &bound, &m, &image, label, &source, 1.0).unwrap();
            g.value(loss.total).data()[0]
        };
        let mut g = Graph::new();
        let bound = BoundModel::bind(&mut g, &model);
        let loss =
            network::total_loss(&mut g, &bound, &model, &image, label, &source, 1.0).unwrap();
        g.backward(loss.total).unwrap();
        let analytic: Vec<Tensor> =
            bound.param_ids().iter().map(|&id| g.grad(id).clone()).collect();
        worst = worst.max(resolved_error(&param_tensors, &f, &analytic));
    }
    CheckReport {
        name: "end_to_end".into(),
        instances,
        max_rel_err: worst,
    }
}

/// The full check suite. `instances` random cases per operation.
pub fn run_suite(seed: u64, instances: usize) -> Vec<CheckReport> {
    vec![
        check_conv2d(seed ^ 0x01, instances),
        check_relu(seed ^ 0x02, instances),
        check_max_pool(seed ^ 0x03, instances),
        check_softmax_cross_entropy(seed ^ 0x04, instances),
        check_spatial_mean(seed ^ 0x05, instances),
        check_roi_pool(seed ^ 0x06, instances),
        check_end_to_end(seed ^ 0x07, instances),
    ]
}
