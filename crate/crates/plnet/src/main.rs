//! Command-line entry point: dataset generation, training, part
//! visualization, descriptor extraction, retrieval evaluation, gradient
//! checking, and ablation presets.

use clap::{Parser, Subcommand};
use plnet::dataio::{self, DatasetManifest, Split, SyntheticSpec};
use plnet::descriptor::Metric;
use plnet::error::Error;
use plnet::eval::{self, Item};
use plnet::experiment::{self, DescriptorChoice, Preset};
use plnet::network::{BackboneConfig, ClassifierKind, PartLossMode, PartSource};
use plnet::tensor::Tensor;
use plnet::trainer::{self, PartStyle, TrainConfig};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "plnet",
    about = "Part-based representation learning and retrieval evaluation",
    version
)]
struct Cli {
    /// Worker threads for descriptor extraction (1 = fully deterministic
    /// serial execution; results are identical either way).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic banded-identity dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        identities: usize,
        #[arg(long = "per-id", default_value_t = 12)]
        per_id: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long = "band-shift", default_value_t = 0.0)]
        band_shift: f64,
        /// Per-image color tint half-range (camera/lighting stand-in).
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        /// Distinct band color codes identities are built from.
        #[arg(long, default_value_t = 3)]
        palette: usize,
        /// Fraction of image height that is dark background; the banded
        /// figure floats at a per-image vertical position in the rest.
        #[arg(long, default_value_t = 0.0)]
        background: f64,
        /// Signature scheme: "structured" (train identities differ in the
        /// middle bands, test pairs differ only at the extremities) or
        /// "uniform" (four distinct random codes per identity).
        #[arg(long, default_value = "structured")]
        signatures: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model on a dataset's train split.
    Train {
        /// Dataset directory (containing manifest.tsv) or manifest path.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output directory.
        #[arg(long)]
        out: PathBuf,
        /// Flat key = value config file; flags override its entries.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        step: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Part box source: generated | grid.
        #[arg(long)]
        parts: Option<String>,
        /// Part loss form: per-part | concat.
        #[arg(long = "part-loss")]
        part_loss: Option<String>,
        /// Global classifier: gap | fc.
        #[arg(long)]
        classifier: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long = "part-coeff")]
        part_coeff: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        #[arg(long = "weight-decay")]
        weight_decay: Option<f64>,
        #[arg(long = "checkpoint-interval")]
        checkpoint_interval: Option<usize>,
        /// Loss log CSV path (default: <out>/loss.csv).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Emit generated part boxes for every image of a dataset.
    Parts {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directory for per-part saliency maps as PLTN files.
        #[arg(long = "save-saliency")]
        save_saliency: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Extract descriptors for one split into a PLTN matrix plus sidecar.
    Extract {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train | query | gallery.
        #[arg(long)]
        split: String,
        #[arg(long)]
        out: PathBuf,
        /// global | final.
        #[arg(long, default_value = "final")]
        descriptor: String,
        #[arg(long, default_value_t = false)]
        normalize: bool,
        /// generated | grid.
        #[arg(long, default_value = "generated")]
        parts: String,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Evaluate retrieval from descriptor files.
    Eval {
        /// Query descriptor file (PLTN; sidecar <file>.tsv).
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// euclidean | cosine.
        #[arg(long, default_value = "euclidean")]
        metric: String,
        /// Row label in the report.
        #[arg(long, default_value = "plnet")]
        name: String,
        /// Report output prefix; writes <prefix>.csv and <prefix>.txt.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient check suite.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
    },
    /// Train/evaluate a paired ablation preset.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// generated-vs-grid | with-vs-without-partloss | sweep-k | concat-vs-separate.
        #[arg(long)]
        preset: String,
        #[arg(long, default_value_t = 300)]
        iters: usize,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// euclidean | cosine.
        #[arg(long, default_value = "euclidean")]
        metric: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{}", e);
                    std::process::exit(0);
                }
                _ => {
                    eprint!("{}", e);
                    std::process::exit(1);
                }
            }
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e);
        let code = match e {
            Error::Usage(_) | Error::Input(_) => 1,
            _ => 2,
        };
        std::process::exit(code);
    }
}

fn manifest_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join("manifest.tsv")
    } else {
        data.to_path_buf()
    }
}

fn load_data(data: &Path) -> plnet::Result<DatasetManifest> {
    dataio::load_manifest(&manifest_path(data))
}

fn run(cli: Cli) -> plnet::Result<()> {
    if cli.threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    match cli.command {
        Command::Synth {
            out,
            identities,
            per_id,
            height,
            width,
            noise,
            band_shift,
            jitter,
            palette,
            background,
            signatures,
            seed,
        } => {
            let signatures = match signatures.as_str() {
                "structured" => dataio::SignatureScheme::Structured,
                "uniform" => dataio::SignatureScheme::Uniform,
                other => {
                    return Err(Error::Usage(format!(
                        "unknown signature scheme '{}'; expected structured or uniform",
                        other
                    )))
                }
            };
            let spec = SyntheticSpec {
                identities,
                images_per_identity: per_id,
                height,
                width,
                noise,
                band_shift,
                jitter,
                palette,
                background,
                signatures,
                seed,
            };
            let manifest = dataio::generate_synthetic(&spec, &out)?;
            println!(
                "wrote {} images for {} identities to {}",
                manifest.records.len(),
                identities,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            config,
            k,
            iters,
            lr,
            step,
            gamma,
            batch,
            seed,
            parts,
            part_loss,
            classifier,
            threshold,
            part_coeff,
            momentum,
            weight_decay,
            checkpoint_interval,
            log,
        } => {
            let file = match config {
                Some(path) => plnet::config::load(&path)?,
                None => BTreeMap::new(),
            };
            let defaults = TrainConfig::default();
            let pick_f64 = |flag: Option<f64>, key: &str, dflt: f64| -> plnet::Result<f64> {
                resolve(flag, &file, key, dflt)
            };
            let pick_usize =
                |flag: Option<usize>, key: &str, dflt: usize| -> plnet::Result<usize> {
                    resolve(flag, &file, key, dflt)
                };
            let train_config = TrainConfig {
                lr0: pick_f64(lr, "lr", defaults.lr0)?,
                step_size: pick_usize(step, "step", defaults.step_size)?,
                gamma: pick_f64(gamma, "gamma", defaults.gamma)?,
                max_iters: pick_usize(iters, "iters", defaults.max_iters)?,
                batch_size: pick_usize(batch, "batch", defaults.batch_size)?,
                k: pick_usize(k, "k", defaults.k)?,
                seed: resolve(seed, &file, "seed", defaults.seed)?,
                part_coeff: pick_f64(part_coeff, "part-coeff", defaults.part_coeff)?,
                threshold: pick_f64(threshold, "threshold", defaults.threshold)?,
                part_style: PartStyle::parse(&resolve_string(
                    parts, &file, "parts", "generated",
                ))?,
                part_loss_mode: parse_part_loss(&resolve_string(
                    part_loss,
                    &file,
                    "part-loss",
                    "per-part",
                ))?,
                classifier: parse_classifier(&resolve_string(
                    classifier,
                    &file,
                    "classifier",
                    "gap",
                ))?,
                momentum: pick_f64(momentum, "momentum", defaults.momentum)?,
                weight_decay: pick_f64(weight_decay, "weight-decay", defaults.weight_decay)?,
                checkpoint_interval,
            };
            let manifest = load_data(&data)?;
            let backbone = BackboneConfig::toy();
            let training = experiment::load_training_set(&manifest, &backbone)?;
            let outcome = trainer::train(
                &training.samples,
                training.num_classes,
                backbone,
                &train_config,
                Some(&out),
            )?;
            let log_path = log.unwrap_or_else(|| out.join("loss.csv"));
            std::fs::write(&log_path, trainer::log_to_csv(&outcome.log))?;
            let last = outcome.log.last().expect("at least one iteration");
            println!(
                "trained {} iterations, final loss {:.6}; checkpoint at {}",
                outcome.log.len(),
                last.total,
                out.display()
            );
            Ok(())
        }
        Command::Parts {
            data,
            checkpoint,
            out,
            save_saliency,
            threshold,
        } => {
            let manifest = load_data(&data)?;
            let model = plnet::checkpoint::load(&checkpoint)?;
            if model.k == 0 {
                return Err(Error::Config("checkpoint was trained with K=0".into()));
            }
            let mut text = String::new();
            for record in &manifest.records {
                let image = dataio::load_image(
                    &record.path,
                    model.config.in_height,
                    model.config.in_width,
                )?;
                let x = feature_maps(&model, &image)?;
                let image_id = file_stem(&record.path);
                let locations = plnet::partgen::argmax_locations(&x);
                let assignment = plnet::partgen::cluster_vertical(&locations, model.k)?;
                for cluster in 0..model.k {
                    let saliency = plnet::partgen::cluster_saliency(&x, &assignment, cluster);
                    let part = plnet::partgen::binarize_and_box(&saliency, threshold);
                    writeln!(
                        text,
                        "{} {} {} {} {} {}",
                        image_id,
                        cluster + 1,
                        part.top,
                        part.bottom,
                        part.left,
                        part.right
                    )
                    .expect("infallible");
                    if let Some(dir) = &save_saliency {
                        std::fs::create_dir_all(dir)?;
                        plnet::pltn::write_tensor(
                            &dir.join(format!("{}_part{}.pltn", image_id, cluster + 1)),
                            &saliency,
                        )?;
                    }
                }
            }
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{}", text),
            }
            Ok(())
        }
        Command::Extract {
            data,
            checkpoint,
            split,
            out,
            descriptor,
            normalize,
            parts,
            threshold,
        } => {
            // validate the argument strings before touching the filesystem,
            // so bad flags exit 1 rather than surfacing as I/O failures
            let split = Split::parse(&split).map_err(|_| {
                Error::Usage(format!(
                    "unknown split '{}'; expected train, query or gallery",
                    split
                ))
            })?;
            let choice = match descriptor.as_str() {
                "global" => DescriptorChoice::Global,
                "final" => DescriptorChoice::Final,
                other => {
                    return Err(Error::Input(format!("unknown descriptor '{}'", other)))
                }
            };
            let source = match PartStyle::parse(&parts)? {
                PartStyle::Generated => PartSource::Generated { threshold },
                PartStyle::Grid => PartSource::Grid,
            };
            let manifest = load_data(&data)?;
            let model = plnet::checkpoint::load(&checkpoint)?;
            let records: Vec<_> = manifest.split(split).cloned().collect();
            let items = extract_parallel(
                &model,
                &records,
                &source,
                choice,
                normalize,
                cli.threads,
            )?;
            write_descriptor_file(&out, &items)?;
            println!("wrote {} descriptors to {}", items.len(), out.display());
            Ok(())
        }
        Command::Eval {
            query,
            gallery,
            metric,
            name,
            out,
        } => {
            let metric = Metric::parse(&metric)?;
            let queries = read_descriptor_file(&query)?;
            let gallery_items = read_descriptor_file(&gallery)?;
            let report = eval::evaluate(&queries, &gallery_items, metric)?;
            let rows = vec![(name, report)];
            let table = eval::format_table(&rows);
            print!("{}", table);
            if let Some(prefix) = out {
                std::fs::write(prefix.with_extension("csv"), eval::format_csv(&rows))?;
                std::fs::write(prefix.with_extension("txt"), table)?;
            }
            Ok(())
        }
        Command::Gradcheck { seed, instances } => {
            let reports = plnet::gradcheck::run_suite(seed, instances);
            let mut worst: f64 = 0.0;
            for r in &reports {
                println!(
                    "{:<24} {} instances  max rel err {:.3e}  {}",
                    r.name,
                    r.instances,
                    r.max_rel_err,
                    if r.passed() { "ok" } else { "FAIL" }
                );
                worst = worst.max(r.max_rel_err);
            }
            println!("max relative error: {:.3e}", worst);
            if worst < plnet::gradcheck::TOLERANCE {
                Ok(())
            } else {
                Err(Error::Eval(format!(
                    "gradient check failed: max relative error {:.3e} >= {:.0e}",
                    worst,
                    plnet::gradcheck::TOLERANCE
                )))
            }
        }
        Command::Ablate {
            data,
            preset,
            iters,
            k,
            lr,
            batch,
            seed,
            metric,
            out,
        } => {
            let preset = Preset::parse(&preset)?;
            let metric = Metric::parse(&metric)?;
            let manifest = load_data(&data)?;
            let base = TrainConfig {
                max_iters: iters,
                k,
                lr0: lr,
                batch_size: batch,
                seed,
                ..Default::default()
            };
            let rows = experiment::run_ablation(
                preset,
                &manifest,
                &BackboneConfig::toy(),
                &base,
                metric,
            )?;
            let table = eval::format_table(&rows);
            print!("{}", table);
            if let Some(prefix) = out {
                std::fs::write(prefix.with_extension("csv"), eval::format_csv(&rows))?;
                std::fs::write(prefix.with_extension("txt"), table)?;
            }
            Ok(())
        }
    }
}

fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> plnet::Result<T> {
    if let Some(v) = flag {
        return Ok(v);
    }
    match file.get(key) {
        Some(raw) => raw
            .parse()
            .map_err(|_| Error::Validation(format!("config key '{}': bad value '{}'", key, raw))),
        None => Ok(default),
    }
}

fn resolve_string(
    flag: Option<String>,
    file: &BTreeMap<String, String>,
    key: &str,
    default: &str,
) -> String {
    flag.or_else(|| file.get(key).cloned())
        .unwrap_or_else(|| default.to_string())
}

fn parse_part_loss(s: &str) -> plnet::Result<PartLossMode> {
    match s {
        "per-part" => Ok(PartLossMode::PerPart),
        "concat" => Ok(PartLossMode::Concat),
        other => Err(Error::Input(format!("unknown part loss mode '{}'", other))),
    }
}

fn parse_classifier(s: &str) -> plnet::Result<ClassifierKind> {
    match s {
        "gap" => Ok(ClassifierKind::Gap),
        "fc" => Ok(ClassifierKind::Fc),
        other => Err(Error::Input(format!("unknown classifier '{}'", other))),
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn feature_maps(
    model: &plnet::network::Model,
    image: &Tensor,
) -> plnet::Result<Tensor> {
    let mut graph = plnet::graph::Graph::new();
    let bound = plnet::network::BoundModel::bind(&mut graph, model);
    let x = plnet::network::forward_backbone(&mut graph, &bound, &model.config, image)?;
    Ok(graph.value(x).clone())
}

/// Descriptor extraction over records, chunked across threads. Results are
/// ordered by record index, so the output is identical for any thread count.
fn extract_parallel(
    model: &plnet::network::Model,
    records: &[dataio::Record],
    source: &PartSource,
    choice: DescriptorChoice,
    normalize: bool,
    threads: usize,
) -> plnet::Result<Vec<Item>> {
    let one = |record: &dataio::Record| -> plnet::Result<Item> {
        let image =
            dataio::load_image(&record.path, model.config.in_height, model.config.in_width)?;
        let extraction =
            plnet::descriptor::extract(model, &image, model.k, source, normalize)?;
        let values = match choice {
            DescriptorChoice::Global => extraction.global.values,
            DescriptorChoice::Final => extraction.final_descriptor.values,
            DescriptorChoice::Part(k) => extraction.parts[k].values.clone(),
        };
        Ok(Item {
            id: file_stem(&record.path),
            identity: record.identity,
            camera: record.camera,
            values,
        })
    };
    if threads <= 1 || records.len() < 2 {
        return records.iter().map(one).collect();
    }
    let chunk = records.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = records
            .chunks(chunk)
            .map(|slice| scope.spawn(move || slice.iter().map(one).collect::<plnet::Result<Vec<_>>>()))
            .collect();
        let mut out = Vec::with_capacity(records.len());
        for h in handles {
            out.extend(h.join().expect("extraction worker panicked")?);
        }
        Ok(out)
    })
}

/// Write a descriptor matrix as a rank-2 PLTN file plus a sidecar text
/// manifest `row_index image_id identity camera`.
fn write_descriptor_file(path: &Path, items: &[Item]) -> plnet::Result<()> {
    let dim = items.first().map(|i| i.values.len()).unwrap_or(0);
    let mut data = Vec::with_capacity(items.len() * dim);
    for item in items {
        if item.values.len() != dim {
            return Err(Error::Config("inconsistent descriptor dimensions".into()));
        }
        data.extend_from_slice(&item.values);
    }
    let matrix = Tensor::from_vec(&[items.len(), dim], data)?;
    plnet::pltn::write_tensor(path, &matrix)?;
    let mut sidecar = String::new();
    for (row, item) in items.iter().enumerate() {
        let cam = item
            .camera
            .map(|c| c.to_string())
            .unwrap_or_else(|| "-".to_string());
        writeln!(sidecar, "{} {} {} {}", row, item.id, item.identity, cam).expect("infallible");
    }
    std::fs::write(sidecar_path(path), sidecar)?;
    Ok(())
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".tsv");
    PathBuf::from(s)
}

fn read_descriptor_file(path: &Path) -> plnet::Result<Vec<Item>> {
    let matrix = plnet::pltn::read_tensor(path)?;
    if matrix.rank() != 2 {
        return Err(Error::Ingestion {
            path: path.to_path_buf(),
            reason: format!("expected a rank-2 descriptor matrix, got rank {}", matrix.rank()),
        });
    }
    let (n, dim) = (matrix.shape()[0], matrix.shape()[1]);
    let sidecar = sidecar_path(path);
    let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::Ingestion {
        path: sidecar.clone(),
        reason: e.to_string(),
    })?;
    let mut items = Vec::with_capacity(n);
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(Error::Validation(format!(
                "{}: line {}: expected 4 fields",
                sidecar.display(),
                lineno + 1
            )));
        }
        let row: usize = fields[0]
            .parse()
            .map_err(|_| Error::Validation(format!("bad row index '{}'", fields[0])))?;
        if row >= n {
            return Err(Error::Validation(format!(
                "row index {} out of range for {} descriptors",
                row, n
            )));
        }
        let identity: usize = fields[2]
            .parse()
            .map_err(|_| Error::Validation(format!("bad identity '{}'", fields[2])))?;
        let camera = match fields[3] {
            "-" => None,
            c => Some(c.parse().map_err(|_| {
                Error::Validation(format!("bad camera '{}'", c))
            })?),
        };
        items.push(Item {
            id: fields[1].to_string(),
            identity,
            camera,
            values: matrix.data()[row * dim..(row + 1) * dim].to_vec(),
        });
    }
    if items.len() != n {
        return Err(Error::Validation(format!(
            "sidecar lists {} rows but matrix has {}",
            items.len(),
            n
        )));
    }
    Ok(items)
}
