//! Checkpoints: a directory of PLTN tensors plus `manifest.txt` recording
//! the architecture and the parameter list.

use crate::error::{Error, Result};
use crate::network::{BackboneConfig, ClassifierKind, LayerSpec, Model, PartLossMode};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

const HEADER: &str = "plnet-checkpoint 1";

pub fn save(model: &Model, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    writeln!(manifest, "{}", HEADER).expect("infallible");
    writeln!(manifest, "num_classes {}", model.num_classes).expect("infallible");
    writeln!(manifest, "k {}", model.k).expect("infallible");
    let classifier = match model.classifier {
        ClassifierKind::Gap => "gap",
        ClassifierKind::Fc => "fc",
    };
    writeln!(manifest, "classifier {}", classifier).expect("infallible");
    let mode = match model.part_loss_mode {
        PartLossMode::PerPart => "per-part",
        PartLossMode::Concat => "concat",
    };
    writeln!(manifest, "part_loss_mode {}", mode).expect("infallible");
    writeln!(
        manifest,
        "input {} {} {}",
        model.config.in_channels, model.config.in_height, model.config.in_width
    )
    .expect("infallible");
    for layer in &model.config.layers {
        writeln!(
            manifest,
            "layer {} {} {} {} {}",
            layer.out_channels,
            layer.kernel,
            layer.stride,
            layer.pad,
            layer.pool.unwrap_or(0)
        )
        .expect("infallible");
    }
    for (name, tensor) in model.named_params() {
        let dims: Vec<String> = tensor.shape().iter().map(|d| d.to_string()).collect();
        writeln!(manifest, "param {} {}", name, dims.join(" ")).expect("infallible");
        crate::pltn::write_tensor(&dir.join(format!("{}.pltn", name)), tensor)?;
    }
    fs::write(dir.join("manifest.txt"), manifest)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<Model> {
    let manifest_path = dir.join("manifest.txt");
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::Ingestion {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    let bad = |msg: String| Error::Validation(format!("{}: {}", manifest_path.display(), msg));

    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(bad("missing checkpoint header".into()));
    }
    let mut num_classes = None;
    let mut k = None;
    let mut classifier = ClassifierKind::Gap;
    let mut part_loss_mode = PartLossMode::PerPart;
    let mut input = None;
    let mut layers = Vec::new();
    let mut params = Vec::new();
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        match fields[0] {
            "num_classes" => num_classes = Some(parse_usize(fields.get(1), &bad)?),
            "k" => k = Some(parse_usize(fields.get(1), &bad)?),
            "classifier" => {
                classifier = match fields.get(1) {
                    Some(&"gap") => ClassifierKind::Gap,
                    Some(&"fc") => ClassifierKind::Fc,
                    other => return Err(bad(format!("bad classifier {:?}", other))),
                }
            }
            "part_loss_mode" => {
                part_loss_mode = match fields.get(1) {
                    Some(&"per-part") => PartLossMode::PerPart,
                    Some(&"concat") => PartLossMode::Concat,
                    other => return Err(bad(format!("bad part_loss_mode {:?}", other))),
                }
            }
            "input" => {
                if fields.len() != 4 {
                    return Err(bad("input line needs 3 extents".into()));
                }
                input = Some((
                    parse_usize(fields.get(1), &bad)?,
                    parse_usize(fields.get(2), &bad)?,
                    parse_usize(fields.get(3), &bad)?,
                ));
            }
            "layer" => {
                if fields.len() != 6 {
                    return Err(bad("layer line needs 5 fields".into()));
                }
                let pool = parse_usize(fields.get(5), &bad)?;
                layers.push(LayerSpec {
                    out_channels: parse_usize(fields.get(1), &bad)?,
                    kernel: parse_usize(fields.get(2), &bad)?,
                    stride: parse_usize(fields.get(3), &bad)?,
                    pad: parse_usize(fields.get(4), &bad)?,
                    pool: if pool == 0 { None } else { Some(pool) },
                });
            }
            "param" => {
                let name = fields
                    .get(1)
                    .ok_or_else(|| bad("param line missing name".into()))?;
                params.push(name.to_string());
            }
            other => return Err(bad(format!("unknown manifest key '{}'", other))),
        }
    }
    let (in_channels, in_height, in_width) =
        input.ok_or_else(|| bad("missing input line".into()))?;
    let config = BackboneConfig {
        in_channels,
        in_height,
        in_width,
        layers,
    };
    let mut rng = crate::rng::seeded(0);
    let mut model = Model::new(
        config,
        num_classes.ok_or_else(|| bad("missing num_classes".into()))?,
        k.ok_or_else(|| bad("missing k".into()))?,
        classifier,
        part_loss_mode,
        &mut rng,
    )?;
    let expected: Vec<String> = model.named_params().iter().map(|(n, _)| n.clone()).collect();
    if params != expected {
        return Err(bad(format!(
            "parameter list mismatch: manifest has {:?}, model expects {:?}",
            params, expected
        )));
    }
    for (name, tensor) in model.named_params_mut() {
        let loaded = crate::pltn::read_tensor(&dir.join(format!("{}.pltn", name)))?;
        if loaded.shape() != tensor.shape() {
            return Err(bad(format!(
                "parameter {} shape {:?} does not match expected {:?}",
                name,
                loaded.shape(),
                tensor.shape()
            )));
        }
        *tensor = loaded;
    }
    Ok(model)
}

fn parse_usize(field: Option<&&str>, bad: &dyn Fn(String) -> Error) -> Result<usize> {
    field
        .ok_or_else(|| bad("missing field".into()))?
        .parse()
        .map_err(|_| bad(format!("bad integer '{}'", field.unwrap())))
}
