//! The model: a small convolutional backbone producing feature maps `X`,
//! a 1x1-conv + global-average-pooling classifier on the global branch, and
//! `K` independently parameterized part classifiers fed by RoI-pooled
//! features. The training objective is the global cross-entropy plus the
//! mean of the per-part cross-entropies.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::partgen::{self, PartBox};
use crate::tensor::Tensor;
use rand_chacha::ChaCha8Rng;

/// One backbone stage: convolution, relu, optional max-pool.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Window/stride of a trailing 2-D max pool, if any.
    pub pool: Option<usize>,
}

/// Input geometry plus the stage list. The final stage's channel count is
/// the feature dimension `Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub layers: Vec<LayerSpec>,
}

/// How the global classifier reads the feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    /// 1x1 convolution to C activation maps, then global average pooling.
    Gap,
    /// A full-map convolution, equivalent to a fully connected layer on the
    /// flattened feature maps. Baseline-ablation mode only.
    Fc,
}

impl BackboneConfig {
    /// Desk-scale preset: 3x64x32 input, three conv/relu stages with two
    /// 2x2 pools, ending at Z=32 over a 16x8 grid.
    pub fn toy() -> Self {
        BackboneConfig {
            in_channels: 3,
            in_height: 64,
            in_width: 32,
            layers: vec![
                LayerSpec { out_channels: 16, kernel: 3, stride: 1, pad: 1, pool: Some(2) },
                LayerSpec { out_channels: 32, kernel: 3, stride: 1, pad: 1, pool: Some(2) },
                LayerSpec { out_channels: 32, kernel: 3, stride: 1, pad: 1, pool: None },
            ],
        }
    }

    /// Shape `(Z, H, W)` of the feature maps this config produces.
    pub fn feature_shape(&self) -> Result<(usize, usize, usize)> {
        let (mut c, mut h, mut w) = (self.in_channels, self.in_height, self.in_width);
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.kernel > h + 2 * layer.pad || layer.kernel > w + 2 * layer.pad {
                return Err(Error::Config(format!(
                    "layer {}: kernel {} exceeds padded input {}x{}",
                    i, layer.kernel, h, w
                )));
            }
            h = (h + 2 * layer.pad - layer.kernel) / layer.stride + 1;
            w = (w + 2 * layer.pad - layer.kernel) / layer.stride + 1;
            c = layer.out_channels;
            if let Some(p) = layer.pool {
                if p > h || p > w {
                    return Err(Error::Config(format!(
                        "layer {}: pool window {} exceeds map {}x{}",
                        i, p, h, w
                    )));
                }
                h = (h - p) / p + 1;
                w = (w - p) / p + 1;
            }
        }
        if h < 4 || w < 4 {
            return Err(Error::Config(format!(
                "feature map {}x{} too small for 4x4 RoI pooling",
                h, w
            )));
        }
        Ok((c, h, w))
    }
}

/// Class-scoring head: a convolution from feature channels to C maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub kernel: Tensor,
    pub bias: Tensor,
}

/// Whether part losses are computed per part or once on the channel-wise
/// concatenation of all part features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartLossMode {
    PerPart,
    Concat,
}

/// All learnable state plus the settings the parameters depend on.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: BackboneConfig,
    pub num_classes: usize,
    pub k: usize,
    pub classifier: ClassifierKind,
    pub part_loss_mode: PartLossMode,
    pub backbone: Vec<(Tensor, Tensor)>,
    pub global_head: Head,
    /// K heads in `PerPart` mode; a single K*Z-input head in `Concat` mode.
    pub part_heads: Vec<Head>,
}

fn init_conv(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> (Tensor, Tensor) {
    // fan-in scaled uniform: U(-a, a) with a = (cin * k * k)^-1/2
    let a = 1.0 / ((cin * k * k) as f64).sqrt();
    (
        crate::rng::uniform_tensor(rng, &[cout, cin, k, k], a),
        Tensor::zeros(&[cout]),
    )
}

impl Model {
    pub fn new(
        config: BackboneConfig,
        num_classes: usize,
        k: usize,
        classifier: ClassifierKind,
        part_loss_mode: PartLossMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (z, h, w) = config.feature_shape()?;
        let mut backbone = Vec::new();
        let mut cin = config.in_channels;
        for layer in &config.layers {
            backbone.push(init_conv(rng, layer.out_channels, cin, layer.kernel));
            cin = layer.out_channels;
        }
        let global_head = match classifier {
            ClassifierKind::Gap => {
                let (kernel, bias) = init_conv(rng, num_classes, z, 1);
                Head { kernel, bias }
            }
            ClassifierKind::Fc => {
                let a = 1.0 / ((z * h * w) as f64).sqrt();
                Head {
                    kernel: crate::rng::uniform_tensor(rng, &[num_classes, z, h, w], a),
                    bias: Tensor::zeros(&[num_classes]),
                }
            }
        };
        let part_heads = match part_loss_mode {
            PartLossMode::PerPart => (0..k)
                .map(|_| {
                    let (kernel, bias) = init_conv(rng, num_classes, z, 1);
                    Head { kernel, bias }
                })
                .collect(),
            PartLossMode::Concat => {
                if k == 0 {
                    Vec::new()
                } else {
                    let (kernel, bias) = init_conv(rng, num_classes, z * k, 1);
                    vec![Head { kernel, bias }]
                }
            }
        };
        Ok(Model {
            config,
            num_classes,
            k,
            classifier,
            part_loss_mode,
            backbone,
            global_head,
            part_heads,
        })
    }

    pub fn feature_shape(&self) -> (usize, usize, usize) {
        self.config.feature_shape().expect("validated at construction")
    }

    /// Named references to every parameter tensor, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, (k, b)) in self.backbone.iter().enumerate() {
            out.push((format!("backbone.{}.kernel", i), k));
            out.push((format!("backbone.{}.bias", i), b));
        }
        out.push(("global.kernel".to_string(), &self.global_head.kernel));
        out.push(("global.bias".to_string(), &self.global_head.bias));
        for (i, head) in self.part_heads.iter().enumerate() {
            out.push((format!("part.{}.kernel", i), &head.kernel));
            out.push((format!("part.{}.bias", i), &head.bias));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        for (i, (k, b)) in self.backbone.iter_mut().enumerate() {
            out.push((format!("backbone.{}.kernel", i), k));
            out.push((format!("backbone.{}.bias", i), b));
        }
        out.push(("global.kernel".to_string(), &mut self.global_head.kernel));
        out.push(("global.bias".to_string(), &mut self.global_head.bias));
        for (i, head) in self.part_heads.iter_mut().enumerate() {
            out.push((format!("part.{}.kernel", i), &mut head.kernel));
            out.push((format!("part.{}.bias", i), &mut head.bias));
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }
}

/// The model's parameters registered as leaves of one graph.
pub struct BoundModel {
    pub backbone: Vec<(NodeId, NodeId)>,
    pub global_head: (NodeId, NodeId),
    pub part_heads: Vec<(NodeId, NodeId)>,
}

impl BoundModel {
    pub fn bind(graph: &mut Graph, model: &Model) -> Self {
        let backbone = model
            .backbone
            .iter()
            .map(|(k, b)| (graph.leaf(k.clone()), graph.leaf(b.clone())))
            .collect();
        let global_head = (
            graph.leaf(model.global_head.kernel.clone()),
            graph.leaf(model.global_head.bias.clone()),
        );
        let part_heads = model
            .part_heads
            .iter()
            .map(|h| (graph.leaf(h.kernel.clone()), graph.leaf(h.bias.clone())))
            .collect();
        BoundModel {
            backbone,
            global_head,
            part_heads,
        }
    }

    /// Leaf ids in the same order as [`Model::named_params`].
    pub fn param_ids(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for &(k, b) in &self.backbone {
            out.push(k);
            out.push(b);
        }
        out.push(self.global_head.0);
        out.push(self.global_head.1);
        for &(k, b) in &self.part_heads {
            out.push(k);
            out.push(b);
        }
        out
    }
}

/// Run the backbone on an image, producing the feature maps `X`.
pub fn forward_backbone(
    graph: &mut Graph,
    bound: &BoundModel,
    config: &BackboneConfig,
    image: &Tensor,
) -> Result<NodeId> {
    if image.shape() != [config.in_channels, config.in_height, config.in_width] {
        return Err(Error::Config(format!(
            "image shape {:?} does not match configured input {}x{}x{}",
            image.shape(),
            config.in_channels,
            config.in_height,
            config.in_width
        )));
    }
    let mut x = graph.leaf(image.clone());
    for (layer, &(kernel, bias)) in config.layers.iter().zip(&bound.backbone) {
        x = graph.conv2d(x, kernel, bias, layer.stride, layer.pad)?;
        x = graph.relu(x);
        if let Some(p) = layer.pool {
            x = graph.max_pool2d(x, p, p)?;
        }
    }
    Ok(x)
}

/// Per-class mean over the spatial grid of the activation maps.
pub fn gap_scores(graph: &mut Graph, maps: NodeId) -> Result<NodeId> {
    graph.spatial_mean(maps)
}

/// Class scores for a feature tensor under a head: conv to C maps, GAP.
fn head_scores(graph: &mut Graph, x: NodeId, head: (NodeId, NodeId)) -> Result<NodeId> {
    let maps = graph.conv2d(x, head.0, head.1, 1, 0)?;
    gap_scores(graph, maps)
}

/// Global branch loss: 1x1 conv on `X`, GAP, softmax cross-entropy.
pub fn global_branch(
    graph: &mut Graph,
    x: NodeId,
    head: (NodeId, NodeId),
    label: usize,
) -> Result<NodeId> {
    let scores = head_scores(graph, x, head)?;
    graph.softmax_cross_entropy(scores, label)
}

/// Part branch loss on an RoI-pooled part tensor; same form as the global
/// branch but with the part's own head.
pub fn part_branch(
    graph: &mut Graph,
    x_part: NodeId,
    head: (NodeId, NodeId),
    label: usize,
) -> Result<NodeId> {
    let scores = head_scores(graph, x_part, head)?;
    graph.softmax_cross_entropy(scores, label)
}

/// Where the part boxes for a sample come from.
#[derive(Debug, Clone)]
pub enum PartSource {
    /// Saliency-driven boxes regenerated from the current feature maps.
    Generated { threshold: f64 },
    /// K equal horizontal stripes.
    Grid,
    /// Caller-supplied boxes (tests).
    Fixed(Vec<PartBox>),
}

/// Everything one sample's loss graph exposes.
pub struct SampleLoss {
    pub total: NodeId,
    pub global: NodeId,
    pub parts: Vec<NodeId>,
    pub boxes: Vec<PartBox>,
    pub features: NodeId,
}

/// Build the joint loss for one labeled image: global branch plus the mean
/// of the part branches, weighted by `part_coeff`. With `K = 0` the part
/// term vanishes and the result is the global loss alone.
///
/// Boxes are extracted from the current forward pass's feature values and
/// treated as constants; no gradient flows through box coordinates.
pub fn total_loss(
    graph: &mut Graph,
    bound: &BoundModel,
    model: &Model,
    image: &Tensor,
    label: usize,
    source: &PartSource,
    part_coeff: f64,
) -> Result<SampleLoss> {
    let x = forward_backbone(graph, bound, &model.config, image)?;
    let global = global_branch(graph, x, bound.global_head, label)?;
    if model.k == 0 {
        return Ok(SampleLoss {
            total: global,
            global,
            parts: Vec::new(),
            boxes: Vec::new(),
            features: x,
        });
    }
    let (_, h, w) = model.feature_shape();
    let boxes = match source {
        PartSource::Generated { threshold } => {
            partgen::generate_parts(graph.value(x), model.k, *threshold)?
        }
        PartSource::Grid => partgen::grid_parts(h, w, model.k)?,
        PartSource::Fixed(boxes) => boxes.clone(),
    };
    if boxes.len() != model.k {
        return Err(Error::Config(format!(
            "expected {} part boxes, got {}",
            model.k,
            boxes.len()
        )));
    }
    let pooled: Vec<NodeId> = boxes
        .iter()
        .map(|b| partgen::roi_pool(graph, x, b))
        .collect::<Result<_>>()?;

    let (parts, part_term) = match model.part_loss_mode {
        PartLossMode::PerPart => {
            let mut parts = Vec::with_capacity(model.k);
            for (&p, &head) in pooled.iter().zip(&bound.part_heads) {
                parts.push(part_branch(graph, p, head, label)?);
            }
            let mut acc = parts[0];
            for &p in &parts[1..] {
                acc = graph.add(acc, p)?;
            }
            let mean = graph.scale(acc, 1.0 / model.k as f64);
            (parts, mean)
        }
        PartLossMode::Concat => {
            let cat = graph.concat_channels(&pooled)?;
            let loss = part_branch(graph, cat, bound.part_heads[0], label)?;
            (vec![loss], loss)
        }
    };
    let weighted = graph.scale(part_term, part_coeff);
    let total = graph.add(global, weighted)?;
    Ok(SampleLoss {
        total,
        global,
        parts,
        boxes,
        features: x,
    })
}
