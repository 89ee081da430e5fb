//! Inference-time feature extraction: a global descriptor from the spatial
//! mean of the feature maps, one descriptor per part from the RoI-pooled
//! maps, and their concatenation `[global, part_1, ..., part_K]`.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::network::{forward_backbone, BoundModel, Model, PartSource};
use crate::partgen::{self, PartBox, ROI_OUT};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorKind {
    Global,
    Part(usize),
    Final,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub kind: DescriptorKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl Metric {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::Input(format!("unknown metric '{}'", other))),
        }
    }
}

/// Per-channel spatial mean of the feature maps.
pub fn global_descriptor(x: &Tensor) -> Descriptor {
    let shape = x.shape();
    let (z, h, w) = (shape[0], shape[1], shape[2]);
    let area = (h * w) as f64;
    let values = (0..z)
        .map(|ch| x.data()[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / area)
        .collect();
    Descriptor {
        kind: DescriptorKind::Global,
        values,
    }
}

/// Per-channel mean over the pooled part grid.
pub fn part_descriptor(x_part: &Tensor, index: usize) -> Descriptor {
    let mut d = global_descriptor(x_part);
    d.kind = DescriptorKind::Part(index);
    d
}

fn l2_normalize(values: &mut [f64]) {
    let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in values.iter_mut() {
            *v /= norm;
        }
    }
}

/// All descriptors extracted from one image.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub global: Descriptor,
    pub parts: Vec<Descriptor>,
    pub final_descriptor: Descriptor,
    pub boxes: Vec<PartBox>,
}

/// Run the backbone on an image and extract the global, per-part, and
/// concatenated descriptors. `k` must match the number of parts the model
/// was trained with. With `normalize`, each of the returned descriptors is
/// L2-normalized independently.
pub fn extract(
    model: &Model,
    image: &Tensor,
    k: usize,
    source: &PartSource,
    normalize: bool,
) -> Result<Extraction> {
    if k != model.k {
        return Err(Error::Config(format!(
            "requested K={} but the checkpoint was trained with K={}",
            k, model.k
        )));
    }
    let mut graph = Graph::new();
    let bound = BoundModel::bind(&mut graph, model);
    let x_node = forward_backbone(&mut graph, &bound, &model.config, image)?;
    let x = graph.value(x_node).clone();
    let (_, h, w) = model.feature_shape();

    let global = global_descriptor(&x);
    let boxes: Vec<PartBox> = if k == 0 {
        Vec::new()
    } else {
        match source {
            PartSource::Generated { threshold } => partgen::generate_parts(&x, k, *threshold)?,
            PartSource::Grid => partgen::grid_parts(h, w, k)?,
            PartSource::Fixed(b) => b.clone(),
        }
    };
    let mut parts: Vec<Descriptor> = boxes
        .iter()
        .enumerate()
        .map(|(i, b)| part_descriptor(&partgen::roi_pool_value(&x, b, ROI_OUT, ROI_OUT), i))
        .collect();

    let mut final_values = global.values.clone();
    for p in &parts {
        final_values.extend_from_slice(&p.values);
    }
    let mut global = global;
    if normalize {
        l2_normalize(&mut global.values);
        for p in &mut parts {
            l2_normalize(&mut p.values);
        }
        l2_normalize(&mut final_values);
    }
    Ok(Extraction {
        global,
        parts,
        final_descriptor: Descriptor {
            kind: DescriptorKind::Final,
            values: final_values,
        },
        boxes,
    })
}

/// Distance between two descriptors of the same kind and dimension.
/// Cosine distance of a zero vector against anything is defined as 1.
pub fn distance(a: &Descriptor, b: &Descriptor, metric: Metric) -> Result<f64> {
    if a.kind != b.kind {
        return Err(Error::Input(format!(
            "descriptor kind mismatch: {:?} vs {:?}",
            a.kind, b.kind
        )));
    }
    vector_distance(&a.values, &b.values, metric)
}

/// Distance between raw descriptor vectors.
pub fn vector_distance(a: &[f64], b: &[f64], metric: Metric) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Input(format!(
            "descriptor dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt(),
        Metric::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - dot / (na * nb)
            }
        }
    })
}
