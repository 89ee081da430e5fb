//! Acceptance gate: one test per criterion, each printing a single
//! `[acceptance] ...: pass|fail` line. Criteria 4-6 are directional trend
//! checks over five seeds with paired configurations.

use plnet::dataio::{generate_synthetic, SyntheticSpec};
use plnet::descriptor::Metric;
use plnet::eval::{self, Item};
use plnet::experiment::{self, DescriptorChoice};
use plnet::network::{BackboneConfig, LayerSpec, Model, PartSource};
use plnet::partgen::{self, ArgmaxLocation, PartBox};
use plnet::rng;
use plnet::tensor::Tensor;
use plnet::trainer::{self, PartStyle, TrainConfig};
use rand::Rng;
use std::time::Instant;

fn verdict(criterion: &str, ok: bool) {
    println!(
        "[acceptance] {}: {}",
        criterion,
        if ok { "pass" } else { "fail" }
    );
    assert!(ok, "acceptance criterion failed: {}", criterion);
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_integrity() {
    let start = Instant::now();
    let reports = plnet::gradcheck::run_suite(7, 100);
    let elapsed = start.elapsed();
    let mut ok = true;
    for r in &reports {
        if !r.passed() {
            eprintln!("gradient check '{}' max rel err {:.3e}", r.name, r.max_rel_err);
            ok = false;
        }
    }
    let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
    for required in [
        "conv2d",
        "relu",
        "max_pool2d",
        "softmax_cross_entropy",
        "spatial_mean",
        "roi_pool",
        "end_to_end",
    ] {
        if !names.contains(&required) {
            eprintln!("missing gradient check '{}'", required);
            ok = false;
        }
    }
    if elapsed.as_secs() >= 120 {
        eprintln!("gradient checks took {:?}, budget is 2 minutes", elapsed);
        ok = false;
    }
    verdict("1 gradient integrity (100 instances, <2min)", ok);
}

// ---------------------------------------------------------------- criterion 2

/// Interval SSE via the same prefix-difference formula the clustering uses,
/// so exact ties resolve identically.
fn interval_sse(sorted: &[f64], i: usize, j: usize) -> f64 {
    let m = (j - i) as f64;
    let s: f64 = sorted[i..j].iter().sum();
    let s2: f64 = sorted[i..j].iter().map(|v| v * v).sum();
    (s2 - s * s / m).max(0.0)
}

/// Enumerate every contiguous partition of `sorted` into `k` intervals.
/// Returns (min cost, all boundary tuples achieving it).
fn exhaustive_partitions(sorted: &[f64], k: usize) -> (f64, Vec<Vec<usize>>) {
    let mut best = f64::INFINITY;
    let mut argmin: Vec<Vec<usize>> = Vec::new();
    let mut bounds = vec![0usize; k - 1];
    fn recurse(
        sorted: &[f64],
        k: usize,
        level: usize,
        prev: usize,
        cost_so_far: f64,
        bounds: &mut Vec<usize>,
        best: &mut f64,
        argmin: &mut Vec<Vec<usize>>,
    ) {
        let n = sorted.len();
        if level == k - 1 {
            let total = cost_so_far + interval_sse(sorted, prev, n);
            if total < *best - 1e-12 {
                *best = total;
                argmin.clear();
                argmin.push(bounds.clone());
            } else if (total - *best).abs() <= 1e-12 {
                argmin.push(bounds.clone());
            }
            return;
        }
        let remaining = k - 1 - level;
        for b in (prev + 1)..=(n - remaining) {
            bounds[level] = b;
            recurse(
                sorted,
                k,
                level + 1,
                b,
                cost_so_far + interval_sse(sorted, prev, b),
                bounds,
                best,
                argmin,
            );
        }
    }
    recurse(sorted, k, 0, 0, 0.0, &mut bounds, &mut best, &mut argmin);
    (best, argmin)
}

/// Cluster sets (as sorted channel-index lists, ordered by cluster id).
fn cluster_sets(labels: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut sets = vec![Vec::new(); k];
    for (chan, &c) in labels.iter().enumerate() {
        sets[c].push(chan);
    }
    sets
}

fn check_clustering_instance(heights: &[usize], k: usize) -> bool {
    let locations: Vec<ArgmaxLocation> = heights
        .iter()
        .enumerate()
        .map(|(channel, &row)| ArgmaxLocation { channel, row, col: 0 })
        .collect();
    let assignment = partgen::cluster_vertical(&locations, k).expect("valid instance");

    // sort exactly as the implementation does: stable by (row, channel)
    let mut order: Vec<usize> = (0..heights.len()).collect();
    order.sort_by(|&a, &b| heights[a].cmp(&heights[b]).then(a.cmp(&b)));
    let sorted: Vec<f64> = order.iter().map(|&i| heights[i] as f64).collect();
    let (best, argmin) = exhaustive_partitions(&sorted, k);

    // cost of the returned clustering, computed with the oracle's formula
    let sets = cluster_sets(&assignment.labels, k);
    let mut cost = 0.0;
    for set in &sets {
        let vals: Vec<f64> = set.iter().map(|&c| heights[c] as f64).collect();
        if vals.is_empty() {
            return false;
        }
        cost += interval_sse(&vals, 0, vals.len());
    }
    if (cost - best).abs() > 1e-9 {
        eprintln!(
            "clustering cost {} vs oracle optimum {} on {:?} k={}",
            cost, best, heights, k
        );
        return false;
    }
    // when the optimum is unique, the cluster sets must match exactly
    if argmin.len() == 1 {
        let bounds = &argmin[0];
        let mut oracle_sets = vec![Vec::new(); k];
        let mut edges = vec![0usize];
        edges.extend_from_slice(bounds);
        edges.push(heights.len());
        for c in 0..k {
            let mut set: Vec<usize> = order[edges[c]..edges[c + 1]].to_vec();
            set.sort_unstable();
            oracle_sets[c] = set;
        }
        if sets != oracle_sets {
            eprintln!(
                "cluster sets {:?} vs oracle {:?} on {:?} k={}",
                sets, oracle_sets, heights, k
            );
            return false;
        }
    }
    true
}

fn oracle_roi_pool(x: &Tensor, part: &PartBox, out: usize) -> Tensor {
    let (z, _, _) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let rh = part.bottom - part.top + 1;
    let rw = part.right - part.left + 1;
    let mut result = Tensor::zeros(&[z, out, out]);
    let span = |i: usize, len: usize| -> (usize, usize) {
        let s = i * len / out;
        let e = (i + 1) * len / out;
        if e <= s {
            let s = s.min(len - 1);
            (s, s + 1)
        } else {
            (s, e)
        }
    };
    for c in 0..z {
        for oy in 0..out {
            let (y0, y1) = span(oy, rh);
            for ox in 0..out {
                let (x0, x1) = span(ox, rw);
                let mut m = f64::NEG_INFINITY;
                for y in y0..y1 {
                    for xx in x0..x1 {
                        m = m.max(x.get(&[c, part.top + y, part.left + xx]));
                    }
                }
                result.set(&[c, oy, ox], m);
            }
        }
    }
    result
}

#[test]
fn criterion_2_oracle_equivalence() {
    let mut ok = true;
    let mut rng = rng::seeded(2024);

    // clustering: exhaustive sweep over small height tuples ...
    for z in 2..=5usize {
        let mut heights = vec![0usize; z];
        loop {
            for k in 1..=3.min(z) {
                ok &= check_clustering_instance(&heights, k);
            }
            // odometer over {0,1,2,3}^z
            let mut i = 0;
            while i < z && heights[i] == 3 {
                heights[i] = 0;
                i += 1;
            }
            if i == z {
                break;
            }
            heights[i] += 1;
        }
    }
    // ... plus random instances up to Z = 10
    for _ in 0..200 {
        let z = rng.gen_range(3..=10usize);
        let heights: Vec<usize> = (0..z).map(|_| rng.gen_range(0..16usize)).collect();
        for k in 1..=3.min(z) {
            ok &= check_clustering_instance(&heights, k);
        }
    }

    for trial in 0..60 {
        // argmax_locations against a scan oracle
        let (z, h, w) = (
            rng.gen_range(1..=6usize),
            rng.gen_range(1..=8usize),
            rng.gen_range(1..=8usize),
        );
        let x = rng::uniform_tensor(&mut rng, &[z, h, w], 1.0);
        let locations = partgen::argmax_locations(&x);
        for c in 0..z {
            let mut best = f64::NEG_INFINITY;
            let (mut br, mut bc) = (0, 0);
            for r in 0..h {
                for col in 0..w {
                    let v = x.get(&[c, r, col]);
                    if v > best {
                        best = v;
                        br = r;
                        bc = col;
                    }
                }
            }
            if locations[c].row != br || locations[c].col != bc {
                eprintln!("argmax mismatch trial {} channel {}", trial, c);
                ok = false;
            }
        }

        // roi_pool against the direct bin-scan oracle
        let top = rng.gen_range(0..h);
        let bottom = rng.gen_range(top..h);
        let left = rng.gen_range(0..w);
        let right = rng.gen_range(left..w);
        let part = PartBox { top, bottom, left, right };
        let got = partgen::roi_pool_value(&x, &part, 4, 4);
        let want = oracle_roi_pool(&x, &part, 4);
        for (a, b) in got.data().iter().zip(want.data()) {
            if (a - b).abs() > 1e-12 {
                eprintln!("roi_pool mismatch trial {}", trial);
                ok = false;
                break;
            }
        }

        // binarize_and_box against a direct threshold/extent oracle
        // (normalization happens upstream in cluster_saliency)
        let saliency = rng::uniform_tensor(&mut rng, &[h, w], 1.0);
        let threshold = rng.gen_range(0.0..1.0);
        let got = partgen::binarize_and_box(&saliency, threshold);
        let mut fg = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if saliency.get(&[r, c]) > threshold {
                    fg.push((r, c));
                }
            }
        }
        let want = if fg.is_empty() {
            PartBox::full(h, w)
        } else {
            PartBox {
                top: fg.iter().map(|p| p.0).min().unwrap(),
                bottom: fg.iter().map(|p| p.0).max().unwrap(),
                left: fg.iter().map(|p| p.1).min().unwrap(),
                right: fg.iter().map(|p| p.1).max().unwrap(),
            }
        };
        if got != want {
            eprintln!("binarize_and_box mismatch trial {}: {:?} vs {:?}", trial, got, want);
            ok = false;
        }

        // cmc and mean_ap against enumeration oracles
        let queries = rng.gen_range(1..=4usize);
        let gallery_size = rng.gen_range(2..=8usize);
        let dim = 3;
        let make = |rng: &mut rand_chacha::ChaCha8Rng, id: String| Item {
            id,
            identity: rng.gen_range(0..3usize),
            camera: None,
            values: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let gallery: Vec<Item> = (0..gallery_size)
            .map(|i| make(&mut rng, format!("g{}", i)))
            .collect();
        let mut results = Vec::new();
        let mut expected_aps = Vec::new();
        let mut expected_cmc = vec![0.0f64; gallery_size];
        let mut counted = 0usize;
        for qi in 0..queries {
            let q = make(&mut rng, format!("q{}", qi));
            let res = match eval::rank_gallery(&q, &gallery, Metric::Euclidean) {
                Ok(r) => r,
                Err(_) => continue,
            };
            // oracle: sort gallery by distance (stable by index), then walk
            let mut dist: Vec<(f64, usize)> = gallery
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    let d: f64 = q
                        .values
                        .iter()
                        .zip(&g.values)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    (d, i)
                })
                .collect();
            dist.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let rel: Vec<bool> = dist
                .iter()
                .map(|&(_, i)| gallery[i].identity == q.identity)
                .collect();
            if rel.iter().any(|&r| r) {
                let mut hits = 0usize;
                let mut ap = 0.0;
                for (rank, &r) in rel.iter().enumerate() {
                    if r {
                        hits += 1;
                        ap += hits as f64 / (rank + 1) as f64;
                    }
                }
                expected_aps.push(ap / hits as f64);
                let first = rel.iter().position(|&r| r).unwrap();
                for slot in first..gallery_size {
                    expected_cmc[slot] += 1.0;
                }
                counted += 1;
            }
            results.push(res);
        }
        if counted > 0 {
            let want_map: f64 = expected_aps.iter().sum::<f64>() / counted as f64;
            let got_map = eval::mean_ap(&results);
            if (got_map - want_map).abs() > 1e-12 {
                eprintln!("mean_ap mismatch trial {}: {} vs {}", trial, got_map, want_map);
                ok = false;
            }
            let ranks: Vec<usize> = (1..=gallery_size).collect();
            let (got_cmc, skipped) = eval::cmc(&results, &ranks);
            let denom = (results.len() - skipped) as f64;
            for (slot, got) in got_cmc.iter().enumerate() {
                let want = expected_cmc[slot] / denom;
                if (got - want).abs() > 1e-12 {
                    eprintln!("cmc mismatch trial {} slot {}", trial, slot);
                    ok = false;
                }
            }
        }
    }
    verdict("2 oracle equivalence (exact to 1e-12)", ok);
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_memorization() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    // half the identities land in the train split: 2 train ids, 2 images each
    let manifest = generate_synthetic(
        &SyntheticSpec {
            identities: 4,
            images_per_identity: 2,
            noise: 0.05,
            seed: 3,
            ..Default::default()
        },
        dir.path(),
    )
    .unwrap();
    let backbone = BackboneConfig::toy();
    let training = experiment::load_training_set(&manifest, &backbone).unwrap();
    assert_eq!(training.samples.len(), 4, "expected 4 training images");
    assert_eq!(training.num_classes, 2, "expected 2 training identities");
    let config = TrainConfig {
        max_iters: 2000,
        batch_size: 4,
        k: 2,
        lr0: 0.02,
        seed: 3,
        ..Default::default()
    };
    let outcome = trainer::train(&training.samples, 2, backbone, &config, None).unwrap();
    let min_loss = outcome
        .log
        .iter()
        .map(|row| row.total)
        .fold(f64::INFINITY, f64::min);
    let elapsed = start.elapsed();
    let mut ok = true;
    if min_loss >= 0.1 {
        eprintln!("loss never dropped below 0.1 (best {:.4})", min_loss);
        ok = false;
    }
    if elapsed.as_secs() >= 300 {
        eprintln!("memorization took {:?}, budget is 5 minutes", elapsed);
        ok = false;
    }
    verdict("3 memorization (loss<0.1 in 2000 iters, <5min)", ok);
}

// ------------------------------------------------------------ criteria 4 to 6

const TREND_SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

/// Structured-signature dataset for the part-supervision trends: the
/// per-image tint (jitter) stops average color from identifying anyone,
/// and test identities differ only at the extremities.
fn trend_dataset(seed: u64, band_shift: f64) -> (tempfile::TempDir, plnet::dataio::DatasetManifest) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(
        &SyntheticSpec {
            identities: 16,
            images_per_identity: 10,
            noise: 0.1,
            jitter: 0.15,
            band_shift,
            seed,
            ..Default::default()
        },
        dir.path(),
    )
    .unwrap();
    (dir, manifest)
}

fn trend_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_iters: 600,
        batch_size: 8,
        lr0: 0.05,
        momentum: 0.9,
        k: 4,
        seed,
        ..Default::default()
    }
}

fn report_wins(label: &str, scores: &[(f64, f64)]) -> bool {
    let wins = scores.iter().filter(|(a, b)| a > b).count();
    let mean_a: f64 = scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64;
    let mean_b: f64 = scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64;
    println!(
        "{}: mean {:.4} vs {:.4}, wins {}/{}",
        label,
        mean_a,
        mean_b,
        wins,
        scores.len()
    );
    wins >= 4 && mean_a > mean_b
}

#[test]
fn criterion_4_k_sweep_trend() {
    let mut scores = Vec::new();
    for seed in TREND_SEEDS {
        let (_dir, manifest) = trend_dataset(seed, 0.0);
        // fixed-grid part supervision: generated boxes collapse onto the
        // bands the classifier already uses, which would blur the K=4 vs
        // K=0 contrast with a second moving variable
        let mut with_parts = trend_config(seed);
        with_parts.part_style = PartStyle::Grid;
        with_parts.k = 4;
        let (_, report_k4) = experiment::train_and_evaluate(
            &manifest,
            BackboneConfig::toy(),
            &with_parts,
            DescriptorChoice::Global,
            Metric::Euclidean,
        )
        .unwrap();
        let mut no_parts = trend_config(seed);
        no_parts.k = 0;
        let (_, report_k0) = experiment::train_and_evaluate(
            &manifest,
            BackboneConfig::toy(),
            &no_parts,
            DescriptorChoice::Global,
            Metric::Euclidean,
        )
        .unwrap();
        scores.push((report_k4.map, report_k0.map));
    }
    let ok = report_wins("global mAP, K=4 vs K=0", &scores);
    verdict("4 K-sweep trend (K=4 beats K=0, >=4/5 seeds)", ok);
}

#[test]
fn criterion_5_generated_vs_grid_trend() {
    let mut scores = Vec::new();
    for seed in TREND_SEEDS {
        // uniform signatures: every band carries identity, so locating the
        // bands is the whole game once they move. The background window
        // shifts all bands vertically per image (loose detection boxes),
        // so fixed strips spend cells on background while generated boxes
        // track the figure. The gentler schedule keeps the ReLU channels
        // distributed (the aggressive regime leaves too few live channels
        // for argmax clustering), and K=2 keeps the clusters stable on a
        // 32-channel backbone.
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_synthetic(
            &SyntheticSpec {
                identities: 16,
                images_per_identity: 10,
                noise: 0.05,
                jitter: 0.1,
                background: 0.35,
                palette: 8,
                signatures: plnet::dataio::SignatureScheme::Uniform,
                seed,
                ..Default::default()
            },
            dir.path(),
        )
        .unwrap();
        let config = TrainConfig {
            max_iters: 800,
            batch_size: 8,
            lr0: 0.02,
            k: 2,
            seed,
            ..Default::default()
        };
        let mut generated = config.clone();
        generated.part_style = PartStyle::Generated;
        let (_, report_gen) = experiment::train_and_evaluate(
            &manifest,
            BackboneConfig::toy(),
            &generated,
            DescriptorChoice::Final,
            Metric::Euclidean,
        )
        .unwrap();
        let mut grid = config;
        grid.part_style = PartStyle::Grid;
        let (_, report_grid) = experiment::train_and_evaluate(
            &manifest,
            BackboneConfig::toy(),
            &grid,
            DescriptorChoice::Final,
            Metric::Euclidean,
        )
        .unwrap();
        scores.push((report_gen.map, report_grid.map));
    }
    // ties count for the generated side: the criterion is generated >= grid
    let wins = scores.iter().filter(|(a, b)| a >= b).count();
    let mean_a: f64 = scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64;
    let mean_b: f64 = scores.iter().map(|s| s.1).sum::<f64>() / scores.len() as f64;
    println!(
        "final mAP, generated vs grid: mean {:.4} vs {:.4}, wins {}/{}",
        mean_a,
        mean_b,
        wins,
        scores.len()
    );
    let ok = wins >= 4 && mean_a >= mean_b;
    verdict("5 generated-vs-grid trend (>=4/5 seeds)", ok);
}

#[test]
fn criterion_6_part_loss_trend() {
    let mut scores = Vec::new();
    for seed in TREND_SEEDS {
        let (_dir, manifest) = trend_dataset(seed, 0.0);
        // both arms are scored on the same fixed grid regions, and the
        // with-loss arm is supervised on those regions too, so part loss
        // on/off is the only difference between the arms
        let source = PartSource::Grid;
        let mut with_loss = trend_config(seed);
        with_loss.part_style = PartStyle::Grid;
        with_loss.part_coeff = 1.0;
        let (model_with, _) = experiment::train_and_evaluate(
            &manifest,
            BackboneConfig::toy(),
            &with_loss,
            DescriptorChoice::Final,
            Metric::Euclidean,
        )
        .unwrap();
        let map_with =
            experiment::mean_part_map(&model_with, &manifest, &source, Metric::Euclidean).unwrap();
        let mut without_loss = trend_config(seed);
        without_loss.part_coeff = 0.0;
        let (model_without, _) = experiment::train_and_evaluate(
            &manifest,
            BackboneConfig::toy(),
            &without_loss,
            DescriptorChoice::Final,
            Metric::Euclidean,
        )
        .unwrap();
        let map_without =
            experiment::mean_part_map(&model_without, &manifest, &source, Metric::Euclidean)
                .unwrap();
        scores.push((map_with, map_without));
    }
    let ok = report_wins("mean per-part mAP, part loss on vs off", &scores);
    verdict("6 part-loss trend (on beats off, >=4/5 seeds)", ok);
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_dimension_law() {
    let mut ok = true;
    let backbone = BackboneConfig::toy();
    let (z, _, _) = backbone.feature_shape().unwrap();
    let mut r = rng::seeded(70);
    let image = rng::uniform_tensor(&mut r, &[3, 64, 32], 0.5);
    for k in [0usize, 2, 4, 8] {
        let mut mr = rng::seeded(70 + k as u64);
        let model = Model::new(
            backbone.clone(),
            4,
            k,
            plnet::network::ClassifierKind::Gap,
            plnet::network::PartLossMode::PerPart,
            &mut mr,
        )
        .unwrap();
        let extraction = plnet::descriptor::extract(
            &model,
            &image,
            k,
            &PartSource::Generated { threshold: 0.5 },
            false,
        )
        .unwrap();
        let want = (k + 1) * z;
        if extraction.final_descriptor.values.len() != want {
            eprintln!(
                "K={}: final descriptor has {} dims, expected {}",
                k,
                extraction.final_descriptor.values.len(),
                want
            );
            ok = false;
        }
    }
    // full-scale feature width: Z=1024 with K=8 gives a 9216-dim descriptor
    let wide = BackboneConfig {
        in_channels: 3,
        in_height: 16,
        in_width: 8,
        layers: vec![LayerSpec {
            out_channels: 1024,
            kernel: 3,
            stride: 1,
            pad: 1,
            pool: None,
        }],
    };
    let mut mr = rng::seeded(71);
    let model = Model::new(
        wide,
        2,
        8,
        plnet::network::ClassifierKind::Gap,
        plnet::network::PartLossMode::PerPart,
        &mut mr,
    )
    .unwrap();
    let image = rng::uniform_tensor(&mut r, &[3, 16, 8], 0.5);
    let extraction = plnet::descriptor::extract(
        &model,
        &image,
        8,
        &PartSource::Generated { threshold: 0.5 },
        false,
    )
    .unwrap();
    if extraction.final_descriptor.values.len() != 9216 {
        eprintln!(
            "Z=1024, K=8: final descriptor has {} dims, expected 9216",
            extraction.final_descriptor.values.len()
        );
        ok = false;
    }
    verdict("7 dimension law ((K+1)*Z, 9216 at Z=1024 K=8)", ok);
}

// ---------------------------------------------------------------- criterion 8

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic(
        &SyntheticSpec {
            identities: 4,
            images_per_identity: 4,
            seed: 8,
            ..Default::default()
        },
        dir.path(),
    )
    .unwrap();
    let config = TrainConfig {
        max_iters: 30,
        batch_size: 4,
        k: 2,
        seed: 8,
        ..Default::default()
    };
    let run = || {
        let (model, report) = experiment::train_and_evaluate(
            &manifest,
            BackboneConfig::toy(),
            &config,
            DescriptorChoice::Final,
            Metric::Euclidean,
        )
        .unwrap();
        let training = experiment::load_training_set(&manifest, &model.config).unwrap();
        let outcome = trainer::train(
            &training.samples,
            training.num_classes,
            model.config.clone(),
            &config,
            None,
        )
        .unwrap();
        let table = eval::format_table(&[("run".to_string(), report)]);
        (trainer::log_to_csv(&outcome.log), table)
    };
    let (log_a, table_a) = run();
    let (log_b, table_b) = run();
    let mut ok = true;
    if log_a.as_bytes() != log_b.as_bytes() {
        eprintln!("loss traces differ between identical-seed runs");
        ok = false;
    }
    if table_a.as_bytes() != table_b.as_bytes() {
        eprintln!("evaluation reports differ between identical-seed runs");
        ok = false;
    }
    verdict("8 determinism (byte-for-byte across runs)", ok);
}

// ---------------------------------------------------------------- criterion 9

#[test]
fn criterion_9_metric_sanity() {
    // 1-D embeddings place the gallery at controlled distances per query.
    let gallery = vec![
        Item { id: "g0".into(), identity: 1, camera: None, values: vec![0.0] },
        Item { id: "g1".into(), identity: 2, camera: None, values: vec![1.0] },
        Item { id: "g2".into(), identity: 1, camera: None, values: vec![2.0] },
    ];
    // query A at 0.0, identity 1: ranks g0(rel), g1, g2(rel) -> AP = 5/6
    // query B at 1.4, identity 1: ranks g1, g2(rel), g0(rel) -> AP = (1/2 + 2/3)/2 = 7/12
    // query C at 2.1, identity 2: ranks g2, g1(rel), g0 -> AP = 1/2
    let queries = vec![
        Item { id: "qa".into(), identity: 1, camera: None, values: vec![0.0] },
        Item { id: "qb".into(), identity: 1, camera: None, values: vec![1.4] },
        Item { id: "qc".into(), identity: 2, camera: None, values: vec![2.1] },
    ];
    let results: Vec<_> = queries
        .iter()
        .map(|q| eval::rank_gallery(q, &gallery, Metric::Euclidean).unwrap())
        .collect();
    let aps: Vec<f64> = results
        .iter()
        .map(|r| eval::average_precision(r).unwrap())
        .collect();
    let mut ok = true;
    let expected = [5.0 / 6.0, 7.0 / 12.0, 0.5];
    for (i, (got, want)) in aps.iter().zip(&expected).enumerate() {
        if (got - want).abs() > 1e-15 {
            eprintln!("AP mismatch for query {}: {} vs {}", i, got, want);
            ok = false;
        }
    }
    let want_map = (5.0 / 6.0 + 7.0 / 12.0 + 0.5) / 3.0;
    if (eval::mean_ap(&results) - want_map).abs() > 1e-15 {
        eprintln!("mAP mismatch: {} vs {}", eval::mean_ap(&results), want_map);
        ok = false;
    }
    // CMC: first relevant at ranks 1, 2, 2 -> top-1 = 1/3, top-2 = 1, top-3 = 1
    let (cmc, skipped) = eval::cmc(&results, &[1, 2, 3]);
    if skipped != 0 || cmc != vec![1.0 / 3.0, 1.0, 1.0] {
        eprintln!("CMC mismatch: {:?} (skipped {})", cmc, skipped);
        ok = false;
    }
    verdict("9 metric sanity (AP=5/6 fixture exact)", ok);
}
