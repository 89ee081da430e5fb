//! End-to-end experiment plumbing: load a dataset, train, extract
//! descriptors for the test split, evaluate retrieval, and run the paired
//! ablation presets with shared seeds.

use crate::dataio::{load_image, DatasetManifest, Record, Split};
use crate::descriptor::{self, Metric};
use crate::error::{Error, Result};
use crate::eval::{self, Item, Report};
use crate::network::{BackboneConfig, Model, PartSource};
use crate::trainer::{self, PartStyle, TrainConfig, TrainSample};
use std::collections::BTreeMap;

/// Which descriptor feeds the retrieval evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorChoice {
    Global,
    Final,
    Part(usize),
}

/// Train-split images as tensors plus the dense label mapping.
pub struct TrainingSet {
    pub samples: Vec<TrainSample>,
    pub num_classes: usize,
    pub label_of_identity: BTreeMap<usize, usize>,
}

pub fn load_training_set(
    manifest: &DatasetManifest,
    backbone: &BackboneConfig,
) -> Result<TrainingSet> {
    let mut identities: Vec<usize> = manifest.split(Split::Train).map(|r| r.identity).collect();
    identities.sort_unstable();
    identities.dedup();
    let label_of_identity: BTreeMap<usize, usize> = identities
        .iter()
        .enumerate()
        .map(|(label, &id)| (id, label))
        .collect();
    let mut samples = Vec::new();
    for record in manifest.split(Split::Train) {
        samples.push(TrainSample {
            image: load_image(&record.path, backbone.in_height, backbone.in_width)?,
            label: label_of_identity[&record.identity],
        });
    }
    Ok(TrainingSet {
        samples,
        num_classes: identities.len(),
        label_of_identity,
    })
}

fn record_item(record: &Record, values: Vec<f64>) -> Item {
    Item {
        id: record.path.display().to_string(),
        identity: record.identity,
        camera: record.camera,
        values,
    }
}

/// Extract one descriptor per record of a split.
pub fn extract_split(
    model: &Model,
    manifest: &DatasetManifest,
    split: Split,
    source: &PartSource,
    choice: DescriptorChoice,
    normalize: bool,
) -> Result<Vec<Item>> {
    let mut items = Vec::new();
    for record in manifest.split(split) {
        let image = load_image(&record.path, model.config.in_height, model.config.in_width)?;
        let extraction = descriptor::extract(model, &image, model.k, source, normalize)?;
        let values = match choice {
            DescriptorChoice::Global => extraction.global.values,
            DescriptorChoice::Final => extraction.final_descriptor.values,
            DescriptorChoice::Part(k) => {
                extraction
                    .parts
                    .get(k)
                    .ok_or_else(|| {
                        Error::Config(format!("part index {} out of range", k))
                    })?
                    .values
                    .clone()
            }
        };
        items.push(record_item(record, values));
    }
    Ok(items)
}

/// Train on the manifest's train split and evaluate retrieval on its
/// query/gallery splits with the chosen descriptor.
pub fn train_and_evaluate(
    manifest: &DatasetManifest,
    backbone: BackboneConfig,
    config: &TrainConfig,
    choice: DescriptorChoice,
    metric: Metric,
) -> Result<(Model, Report)> {
    let training = load_training_set(manifest, &backbone)?;
    let outcome = trainer::train(&training.samples, training.num_classes, backbone, config, None)?;
    let source = match config.part_style {
        PartStyle::Generated => PartSource::Generated {
            threshold: config.threshold,
        },
        PartStyle::Grid => PartSource::Grid,
    };
    let report = evaluate_model(&outcome.model, manifest, &source, choice, metric)?;
    Ok((outcome.model, report))
}

pub fn evaluate_model(
    model: &Model,
    manifest: &DatasetManifest,
    source: &PartSource,
    choice: DescriptorChoice,
    metric: Metric,
) -> Result<Report> {
    let queries = extract_split(model, manifest, Split::Query, source, choice, false)?;
    let gallery = extract_split(model, manifest, Split::Gallery, source, choice, false)?;
    eval::evaluate(&queries, &gallery, metric)
}

/// Mean mAP over the per-part descriptors of a trained model.
pub fn mean_part_map(
    model: &Model,
    manifest: &DatasetManifest,
    source: &PartSource,
    metric: Metric,
) -> Result<f64> {
    if model.k == 0 {
        return Err(Error::Config("model has no parts".into()));
    }
    let mut acc = 0.0;
    for k in 0..model.k {
        let r = evaluate_model(model, manifest, source, DescriptorChoice::Part(k), metric)?;
        acc += r.map;
    }
    Ok(acc / model.k as f64)
}

/// The paired-configuration ablation presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    GeneratedVsGrid,
    WithVsWithoutPartLoss,
    SweepK,
    ConcatVsSeparate,
}

impl Preset {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "generated-vs-grid" => Ok(Preset::GeneratedVsGrid),
            "with-vs-without-partloss" => Ok(Preset::WithVsWithoutPartLoss),
            "sweep-k" => Ok(Preset::SweepK),
            "concat-vs-separate" => Ok(Preset::ConcatVsSeparate),
            other => Err(Error::Input(format!("unknown preset '{}'", other))),
        }
    }
}

/// Run an ablation preset: each row trains and evaluates one configuration
/// derived from `base`, all with the same seed.
pub fn run_ablation(
    preset: Preset,
    manifest: &DatasetManifest,
    backbone: &BackboneConfig,
    base: &TrainConfig,
    metric: Metric,
) -> Result<Vec<(String, Report)>> {
    let mut rows = Vec::new();
    match preset {
        Preset::GeneratedVsGrid => {
            for (name, style) in [
                ("generated", PartStyle::Generated),
                ("grid", PartStyle::Grid),
            ] {
                let mut cfg = base.clone();
                cfg.part_style = style;
                let (_, report) = train_and_evaluate(
                    manifest,
                    backbone.clone(),
                    &cfg,
                    DescriptorChoice::Final,
                    metric,
                )?;
                rows.push((name.to_string(), report));
            }
        }
        Preset::WithVsWithoutPartLoss => {
            for (name, coeff) in [("part-loss", 1.0), ("no-part-loss", 0.0)] {
                let mut cfg = base.clone();
                cfg.part_coeff = coeff;
                let (_, report) = train_and_evaluate(
                    manifest,
                    backbone.clone(),
                    &cfg,
                    DescriptorChoice::Final,
                    metric,
                )?;
                rows.push((name.to_string(), report));
            }
        }
        Preset::SweepK => {
            for k in [0usize, 2, 4, 8] {
                let mut cfg = base.clone();
                cfg.k = k;
                let (_, report) = train_and_evaluate(
                    manifest,
                    backbone.clone(),
                    &cfg,
                    DescriptorChoice::Global,
                    metric,
                )?;
                rows.push((format!("K={}", k), report));
            }
        }
        Preset::ConcatVsSeparate => {
            use crate::network::PartLossMode;
            for (name, mode) in [
                ("separate", PartLossMode::PerPart),
                ("concat", PartLossMode::Concat),
            ] {
                let mut cfg = base.clone();
                cfg.part_loss_mode = mode;
                let (_, report) = train_and_evaluate(
                    manifest,
                    backbone.clone(),
                    &cfg,
                    DescriptorChoice::Final,
                    metric,
                )?;
                rows.push((name.to_string(), report));
            }
        }
    }
    Ok(rows)
}
