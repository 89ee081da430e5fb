//! Dataset ingestion and the synthetic identity generator.
//!
//! Images are portable pixmaps (binary `P6` or textual `P3`), decoded
//! without external dependencies. A dataset is a directory of images plus a
//! tab-separated manifest `path<TAB>identity<TAB>camera<TAB>split`.
//!
//! The synthetic generator paints each identity as four horizontal color
//! bands (head, torso, legs, feet) over fixed vertical fractions of the
//! image, optionally shifted per image and perturbed with uniform noise.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// Vertical fractions of the four identity bands.
pub const BAND_FRACTIONS: [(f64, f64); 4] = [(0.0, 0.2), (0.2, 0.55), (0.55, 0.85), (0.85, 1.0)];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            other => Err(Error::Validation(format!("unknown split tag '{}'", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub path: PathBuf,
    pub identity: usize,
    pub camera: Option<usize>,
    pub split: Split,
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Train identities and test (query + gallery) identities must not
    /// overlap, and every query identity must appear in the gallery.
    pub fn validate(&self) -> Result<()> {
        let train: BTreeSet<usize> = self.split(Split::Train).map(|r| r.identity).collect();
        let query: BTreeSet<usize> = self.split(Split::Query).map(|r| r.identity).collect();
        let gallery: BTreeSet<usize> = self.split(Split::Gallery).map(|r| r.identity).collect();
        let overlap: Vec<usize> = train
            .intersection(&query.union(&gallery).cloned().collect())
            .cloned()
            .collect();
        if !overlap.is_empty() {
            return Err(Error::Validation(format!(
                "identities {:?} appear in both train and test splits",
                overlap
            )));
        }
        let missing: Vec<usize> = query.difference(&gallery).cloned().collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!(
                "query identities {:?} have no gallery images",
                missing
            )));
        }
        Ok(())
    }
}

/// Identity and camera from a Market1501-style file name such as
/// `0001_c1s1_000151_00.jpg`.
pub fn parse_market_name(name: &str) -> Option<(usize, usize)> {
    let stem = name.rsplit('/').next()?;
    let mut parts = stem.split('_');
    let identity: usize = parts.next()?.parse().ok()?;
    let cam_field = parts.next()?;
    let cam_digits: String = cam_field
        .strip_prefix('c')?
        .chars()
        .take_while(|c| c.is_ascii_digit())
        .collect();
    let camera: usize = cam_digits.parse().ok()?;
    Some((identity, camera))
}

/// Parse a manifest file. Full lines are `path<TAB>identity<TAB>camera<TAB>split`;
/// a camera field of `-` means no camera label. Two-column lines
/// `path<TAB>split` take identity and camera from a Market1501-style file
/// name. Paths are resolved relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let bad = |msg: String| Error::Validation(format!("line {}: {}", lineno + 1, msg));
        let record = match fields.len() {
            4 => {
                let identity = fields[1]
                    .parse()
                    .map_err(|_| bad(format!("bad identity '{}'", fields[1])))?;
                let camera = match fields[2] {
                    "-" => None,
                    c => Some(c.parse().map_err(|_| bad(format!("bad camera '{}'", c)))?),
                };
                Record {
                    path: base.join(fields[0]),
                    identity,
                    camera,
                    split: Split::parse(fields[3])?,
                }
            }
            2 => {
                let (identity, camera) = parse_market_name(fields[0]).ok_or_else(|| {
                    bad(format!("'{}' is not a Market1501-style name", fields[0]))
                })?;
                Record {
                    path: base.join(fields[0]),
                    identity,
                    camera: Some(camera),
                    split: Split::parse(fields[1])?,
                }
            }
            n => return Err(bad(format!("expected 2 or 4 tab-separated fields, got {}", n))),
        };
        records.push(record);
    }
    let manifest = DatasetManifest { records };
    manifest.validate()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut text = String::new();
    for r in &manifest.records {
        let rel = r.path.strip_prefix(base).unwrap_or(&r.path);
        let cam = r
            .camera
            .map(|c| c.to_string())
            .unwrap_or_else(|| "-".to_string());
        writeln!(
            text,
            "{}\t{}\t{}\t{}",
            rel.display(),
            r.identity,
            cam,
            r.split.as_str()
        )
        .expect("infallible");
    }
    fs::write(path, text)?;
    Ok(())
}

// ---- portable pixmap codec ----

fn ingest_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decode a `P6` or `P3` pixmap into `[3, H, W]` with values in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| ingest_err(path, e.to_string()))?;
    if bytes.len() < 2 {
        return Err(ingest_err(path, "file too short"));
    }
    let magic = &bytes[0..2];
    // header tokens: magic, width, height, maxval; comments start with '#'
    let mut pos = 2;
    let mut tokens = Vec::new();
    while tokens.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !(bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        tokens.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| ingest_err(path, "bad header"))?
                .to_string(),
        );
    }
    if tokens.len() < 3 {
        return Err(ingest_err(path, "truncated header"));
    }
    let w: usize = tokens[0].parse().map_err(|_| ingest_err(path, "bad width"))?;
    let h: usize = tokens[1].parse().map_err(|_| ingest_err(path, "bad height"))?;
    let maxval: f64 = tokens[2].parse().map_err(|_| ingest_err(path, "bad maxval"))?;
    if maxval <= 0.0 || maxval > 255.0 {
        return Err(ingest_err(path, format!("unsupported maxval {}", maxval)));
    }

    let mut out = Tensor::zeros(&[3, h, w]);
    match magic {
        b"P6" => {
            pos += 1; // single whitespace byte after maxval
            if bytes.len() < pos + 3 * w * h {
                return Err(ingest_err(path, "truncated pixel data"));
            }
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        let v = bytes[pos + (y * w + x) * 3 + c] as f64 / maxval;
                        out.set(&[c, y, x], v);
                    }
                }
            }
        }
        b"P3" => {
            let text = std::str::from_utf8(&bytes[pos..])
                .map_err(|_| ingest_err(path, "bad ascii pixel data"))?;
            let mut vals = text
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|_| ingest_err(path, "bad ascii pixel value"))?;
            if vals.len() < 3 * w * h {
                return Err(ingest_err(path, "truncated pixel data"));
            }
            vals.truncate(3 * w * h);
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        out.set(&[c, y, x], vals[(y * w + x) * 3 + c] / maxval);
                    }
                }
            }
        }
        _ => {
            return Err(ingest_err(
                path,
                format!("unsupported format magic {:?}", String::from_utf8_lossy(magic)),
            ))
        }
    }
    Ok(out)
}

/// Write `[3, H, W]` values in `[0, 1]` as a binary `P6` pixmap.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Config(format!(
            "write_ppm expects [3, H, W], got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    let mut bytes = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = (image.get(&[c, y, x]).clamp(0.0, 1.0) * 255.0).round() as u8;
                bytes.push(v);
            }
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Bilinear resize to `(out_h, out_w)` with pixel-center alignment:
/// source coordinate `(i + 0.5) * in / out - 0.5`, clamped.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let shape = image.shape();
    let (ch, in_h, in_w) = (shape[0], shape[1], shape[2]);
    let mut out = Tensor::zeros(&[ch, out_h, out_w]);
    let src = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let s = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5)
            .clamp(0.0, (n_in - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    for c in 0..ch {
        for y in 0..out_h {
            let (y0, y1, fy) = src(y, out_h, in_h);
            for x in 0..out_w {
                let (x0, x1, fx) = src(x, out_w, in_w);
                let v = image.get(&[c, y0, x0]) * (1.0 - fy) * (1.0 - fx)
                    + image.get(&[c, y0, x1]) * (1.0 - fy) * fx
                    + image.get(&[c, y1, x0]) * fy * (1.0 - fx)
                    + image.get(&[c, y1, x1]) * fy * fx;
                out.set(&[c, y, x], v);
            }
        }
    }
    out
}

/// Load an image file and resize it to the target size, values in `[0, 1]`.
pub fn load_image(path: &Path, target_h: usize, target_w: usize) -> Result<Tensor> {
    let raw = read_ppm(path)?;
    if raw.shape() == [3, target_h, target_w] {
        return Ok(raw);
    }
    Ok(resize_bilinear(&raw, target_h, target_w))
}

// ---- synthetic identity generator ----

#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub identities: usize,
    pub images_per_identity: usize,
    pub height: usize,
    pub width: usize,
    /// Half-range of per-pixel uniform noise.
    pub noise: f64,
    /// Max per-image vertical shift of the band layout, as a fraction of
    /// image height.
    pub band_shift: f64,
    /// Half-range of the per-image, per-channel color offset (a stand-in
    /// for camera tint and lighting). Jitter shifts the whole image's
    /// colors, so average color stops identifying anyone and the spatial
    /// arrangement of the bands has to do the work.
    pub jitter: f64,
    /// Number of distinct color codes the band signatures draw from.
    /// Identities share codes (just not the full 4-code sequence), so a
    /// smaller palette makes identities harder to tell apart.
    pub palette: usize,
    /// Fraction of the image height filled with dark background instead of
    /// the person. The banded figure shrinks to the remaining height and
    /// its vertical position varies per image (a stand-in for loose
    /// pedestrian detection boxes), so fixed grid strips sometimes cover
    /// mostly background.
    pub background: f64,
    /// How identities are assigned their band signatures.
    pub signatures: SignatureScheme,
    pub seed: u64,
}

/// Band-signature assignment scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SignatureScheme {
    /// Training identities differ in their middle bands while test
    /// identities come in pairs that share the middle bands and differ
    /// only at head and feet, which are colored from a separate palette.
    /// Classifying the training split never requires looking at the
    /// extremities, so test pairs probe transfer beyond the shortcut.
    #[default]
    Structured,
    /// Every identity samples four distinct codes from one shared
    /// palette, uniformly at random. All bands matter equally, which
    /// suits experiments about locating the bands themselves.
    Uniform,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            identities: 16,
            images_per_identity: 12,
            height: 64,
            width: 32,
            noise: 0.1,
            band_shift: 0.0,
            jitter: 0.0,
            palette: 3,
            background: 0.0,
            signatures: SignatureScheme::default(),
            seed: 0,
        }
    }
}

/// Well-separated random palette: rejection-sample colors until each is at
/// least 0.4 away (L2) from every earlier one.
fn make_palette(rng: &mut rand_chacha::ChaCha8Rng, size: usize) -> Vec<[f64; 3]> {
    let mut colors: Vec<[f64; 3]> = Vec::with_capacity(size);
    while colors.len() < size {
        let cand = [
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.05..0.95),
        ];
        let far_enough = colors.iter().all(|c| {
            let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= 0.4
        });
        if far_enough {
            colors.push(cand);
        }
    }
    colors
}

/// 4-code signatures over the palette, one per identity, shaped to make
/// the zero-shot split meaningful:
///
/// - Training identities (the first `train_cut`) all carry *distinct*
///   torso/leg code pairs, so the two wide middle bands alone suffice to
///   classify the training set — a shortcut a purely global loss is free
///   to take.
/// - Test identities come in pairs that *share* their torso/leg codes and
///   differ only in the narrow head and foot bands. Retrieving them
///   correctly requires features for every body region, which is exactly
///   what per-part supervision forces the network to keep.
fn identity_signatures(
    rng: &mut rand_chacha::ChaCha8Rng,
    identities: usize,
    palette_size: usize,
    train_cut: usize,
) -> Result<Vec<[usize; 4]>> {
    let mid_combos = palette_size * palette_size;
    if train_cut > mid_combos {
        return Err(Error::Config(format!(
            "a palette of {} colors supports at most {} training identities, requested {}",
            palette_size, mid_combos, train_cut
        )));
    }
    let mut middles: Vec<(usize, usize)> = (0..palette_size)
        .flat_map(|a| (0..palette_size).map(move |b| (a, b)))
        .collect();
    middles.shuffle(rng);

    let mut taken = std::collections::BTreeSet::new();
    let mut sigs: Vec<[usize; 4]> = Vec::with_capacity(identities);
    for &(b1, b2) in middles.iter().take(train_cut) {
        loop {
            let sig = [rng.gen_range(0..palette_size), b1, b2, rng.gen_range(0..palette_size)];
            if taken.insert(sig) {
                sigs.push(sig);
                break;
            }
        }
    }
    while sigs.len() < identities {
        let b1 = rng.gen_range(0..palette_size);
        let b2 = rng.gen_range(0..palette_size);
        let head_a = rng.gen_range(0..palette_size);
        let foot_a = rng.gen_range(0..palette_size);
        // the pair partner differs at both the head and the feet
        let head_b = (head_a + rng.gen_range(1..palette_size)) % palette_size;
        let foot_b = (foot_a + rng.gen_range(1..palette_size)) % palette_size;
        let a = [head_a, b1, b2, foot_a];
        let b = [head_b, b1, b2, foot_b];
        if taken.contains(&a) || taken.contains(&b) {
            continue;
        }
        taken.insert(a);
        sigs.push(a);
        if sigs.len() < identities {
            taken.insert(b);
            sigs.push(b);
        }
    }
    Ok(sigs)
}

/// Uniform scheme: four distinct codes per identity from one palette,
/// unique as a sequence across identities.
fn uniform_signatures(
    rng: &mut rand_chacha::ChaCha8Rng,
    identities: usize,
    palette_size: usize,
) -> Result<Vec<[usize; 4]>> {
    if palette_size < 4 {
        return Err(Error::Config(format!(
            "uniform signatures need at least 4 palette colors, got {}",
            palette_size
        )));
    }
    let count = palette_size * (palette_size - 1) * (palette_size - 2) * (palette_size - 3);
    if identities > count {
        return Err(Error::Config(format!(
            "a palette of {} colors supports at most {} identities, requested {}",
            palette_size, count, identities
        )));
    }
    let mut taken = std::collections::BTreeSet::new();
    let mut sigs = Vec::with_capacity(identities);
    let mut codes: Vec<usize> = (0..palette_size).collect();
    while sigs.len() < identities {
        codes.shuffle(rng);
        let sig = [codes[0], codes[1], codes[2], codes[3]];
        if taken.insert(sig) {
            sigs.push(sig);
        }
    }
    Ok(sigs)
}

/// Paint one image of an identity: four color bands, optionally shifted
/// vertically, plus uniform noise.
fn paint(
    sig: &[[f64; 3]; 4],
    h: usize,
    w: usize,
    shift: f64,
    noise: f64,
    jitter: f64,
    window: (f64, f64),
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Tensor {
    let tint: [f64; 3] = if jitter > 0.0 {
        [
            rng.gen_range(-jitter..jitter),
            rng.gen_range(-jitter..jitter),
            rng.gen_range(-jitter..jitter),
        ]
    } else {
        [0.0; 3]
    };
    let (win_top, win_height) = window;
    let mut img = Tensor::zeros(&[3, h, w]);
    for y in 0..h {
        let rel = (y as f64 + 0.5) / h as f64;
        let body = rel >= win_top && rel < win_top + win_height;
        let color: [f64; 3] = if body {
            let frac = (rel - win_top) / win_height - shift;
            let band = BAND_FRACTIONS
                .iter()
                .position(|&(lo, hi)| frac >= lo && frac < hi)
                .unwrap_or(if frac < 0.0 { 0 } else { 3 });
            sig[band]
        } else {
            [0.0; 3] // dark background outside the person window
        };
        for x in 0..w {
            for c in 0..3 {
                let mut v = color[c] + tint[c];
                if noise > 0.0 {
                    v += rng.gen_range(-noise..noise);
                }
                img.set(&[c, y, x], v.clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// Generate the synthetic dataset into `dir`: PPM images plus
/// `manifest.tsv`. Identities split half train / half test; test images
/// alternate between a query camera and a gallery camera.
pub fn generate_synthetic(spec: &SyntheticSpec, dir: &Path) -> Result<DatasetManifest> {
    if spec.identities < 2 {
        return Err(Error::Config("need at least 2 identities".into()));
    }
    if spec.images_per_identity < 2 {
        return Err(Error::Config("need at least 2 images per identity".into()));
    }
    if spec.palette < 2 {
        return Err(Error::Config("palette needs at least 2 colors".into()));
    }
    if !(0.0..=0.75).contains(&spec.background) {
        return Err(Error::Config(
            "background fraction must lie in [0, 0.75]".into(),
        ));
    }
    fs::create_dir_all(dir)?;
    let mut rng = crate::rng::seeded(spec.seed);
    let train_cut = spec.identities / 2;
    let signatures: Vec<[[f64; 3]; 4]> = match spec.signatures {
        SignatureScheme::Structured => {
            // two disjoint palettes: the head and foot bands draw from
            // their own colors, so filters tuned on the wide middle bands
            // say nothing about the extremities and those regions only
            // improve if something supervises them
            let palette = make_palette(&mut rng, 2 * spec.palette);
            let codes = identity_signatures(&mut rng, spec.identities, spec.palette, train_cut)?;
            codes
                .iter()
                .map(|sig| {
                    [
                        palette[spec.palette + sig[0]],
                        palette[sig[1]],
                        palette[sig[2]],
                        palette[spec.palette + sig[3]],
                    ]
                })
                .collect()
        }
        SignatureScheme::Uniform => {
            let palette = make_palette(&mut rng, spec.palette);
            let codes = uniform_signatures(&mut rng, spec.identities, spec.palette)?;
            codes
                .iter()
                .map(|sig| [palette[sig[0]], palette[sig[1]], palette[sig[2]], palette[sig[3]]])
                .collect()
        }
    };
    let mut records = Vec::new();
    for (id, sig) in signatures.iter().enumerate() {
        for img_idx in 0..spec.images_per_identity {
            let shift = if spec.band_shift > 0.0 {
                rng.gen_range(-spec.band_shift..spec.band_shift)
            } else {
                0.0
            };
            let window = if spec.background > 0.0 {
                let top = rng.gen_range(0.0..spec.background);
                (top, 1.0 - spec.background)
            } else {
                (0.0, 1.0)
            };
            let img = paint(
                sig,
                spec.height,
                spec.width,
                shift,
                spec.noise,
                spec.jitter,
                window,
                &mut rng,
            );
            let name = format!("id{:03}_img{:02}.ppm", id, img_idx);
            let path = dir.join(&name);
            write_ppm(&path, &img)?;
            let camera = img_idx % 2;
            let split = if id < train_cut {
                Split::Train
            } else if camera == 0 {
                Split::Query
            } else {
                Split::Gallery
            };
            records.push(Record {
                path,
                identity: id,
                camera: Some(camera),
                split,
            });
        }
    }
    let manifest = DatasetManifest { records };
    manifest.validate()?;
    save_manifest(&manifest, &dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = crate::rng::seeded(1);
        // quantized values so u8 encoding is exact
        let mut img = Tensor::zeros(&[3, 5, 4]);
        for v in img.data_mut() {
            *v = rand::Rng::gen_range(&mut rng, 0..=255u32) as f64 / 255.0;
        }
        let path = dir.path().join("img.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(img.shape(), back.shape());
        for (a, b) in img.data().iter().zip(back.data()) {
            assert_eq!((a * 255.0).round(), (b * 255.0).round());
        }
        // second write of the decoded image byte-matches the first file
        let path2 = dir.path().join("img2.ppm");
        write_ppm(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn reads_ascii_p3() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        fs::write(&path, "P3\n# comment\n2 1\n255\n255 0 0  0 255 0\n").unwrap();
        let img = read_ppm(&path).unwrap();
        assert_eq!(img.shape(), &[3, 1, 2]);
        assert_eq!(img.get(&[0, 0, 0]), 1.0);
        assert_eq!(img.get(&[1, 0, 1]), 1.0);
        assert_eq!(img.get(&[2, 0, 0]), 0.0);
    }

    #[test]
    fn rejects_unknown_format() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pgm");
        fs::write(&path, "P5\n2 2\n255\n....").unwrap();
        assert!(matches!(read_ppm(&path), Err(Error::Ingestion { .. })));
    }

    #[test]
    fn white_pixel_resizes_to_all_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.ppm");
        fs::write(&path, "P3\n1 1\n255\n255 255 255\n").unwrap();
        let img = load_image(&path, 4, 4).unwrap();
        assert_eq!(img.shape(), &[3, 4, 4]);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn bilinear_checkerboard_matches_closed_form() {
        // 2x2 checkerboard [[1,0],[0,1]] upsampled to 4x4; with pixel-center
        // alignment the interpolant is v(r,c) = (1-r)(1-c) + rc over the
        // clamped source coordinates {0, 0.25, 0.75, 1}.
        let board = Tensor::from_vec(&[1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let got = resize_bilinear(&board, 4, 4);
        let coords = [0.0, 0.25, 0.75, 1.0];
        for (yi, &r) in coords.iter().enumerate() {
            for (xi, &c) in coords.iter().enumerate() {
                let expect = (1.0 - r) * (1.0 - c) + r * c;
                assert!(
                    (got.get(&[0, yi, xi]) - expect).abs() < 1e-12,
                    "at ({}, {}): got {}, expected {}",
                    yi,
                    xi,
                    got.get(&[0, yi, xi]),
                    expect
                );
            }
        }
    }

    #[test]
    fn market_name_parsing() {
        assert_eq!(parse_market_name("0001_c1s1_000151_00.jpg"), Some((1, 1)));
        assert_eq!(parse_market_name("1501_c6s3_000001_00.ppm"), Some((1501, 6)));
        assert_eq!(parse_market_name("not_market.ppm"), None);
    }

    #[test]
    fn manifest_round_trip_and_market_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        fs::write(
            &path,
            "a.ppm\t1\t0\ttrain\nb.ppm\t2\t-\tquery\nb2.ppm\t2\t1\tgallery\n0003_c2s1_000001_00.ppm\tgallery\n",
        )
        .unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.records.len(), 4);
        assert_eq!(m.records[1].camera, None);
        assert_eq!(m.records[3].identity, 3);
        assert_eq!(m.records[3].camera, Some(2));
        // order-stable
        assert_eq!(m.records[0].identity, 1);
    }

    #[test]
    fn manifest_rejects_train_test_overlap() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        fs::write(
            &path,
            "a.ppm\t5\t0\ttrain\nb.ppm\t5\t0\tquery\nc.ppm\t5\t1\tgallery\n",
        )
        .unwrap();
        let err = load_manifest(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('5'), "error should name the identity: {}", msg);
    }

    #[test]
    fn synthetic_zero_noise_images_identical_per_identity() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            identities: 2,
            images_per_identity: 3,
            noise: 0.0,
            ..Default::default()
        };
        let m = generate_synthetic(&spec, dir.path()).unwrap();
        let first = fs::read(&m.records[0].path).unwrap();
        for r in &m.records[1..3] {
            assert_eq!(fs::read(&r.path).unwrap(), first);
        }
    }

    #[test]
    fn synthetic_same_seed_is_reproducible() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            identities: 4,
            images_per_identity: 2,
            noise: 0.1,
            seed: 9,
            ..Default::default()
        };
        let m1 = generate_synthetic(&spec, d1.path()).unwrap();
        let m2 = generate_synthetic(&spec, d2.path()).unwrap();
        for (a, b) in m1.records.iter().zip(&m2.records) {
            assert_eq!(fs::read(&a.path).unwrap(), fs::read(&b.path).unwrap());
        }
    }

    #[test]
    fn synthetic_identities_nearest_centroid_separable_at_zero_noise() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            identities: 4,
            images_per_identity: 4,
            noise: 0.0,
            height: 32,
            width: 16,
            ..Default::default()
        };
        let m = generate_synthetic(&spec, dir.path()).unwrap();
        // nearest-centroid on raw pixels
        let mut centroids: Vec<(usize, Vec<f64>)> = Vec::new();
        for id in 0..4 {
            let imgs: Vec<Tensor> = m
                .records
                .iter()
                .filter(|r| r.identity == id)
                .map(|r| read_ppm(&r.path).unwrap())
                .collect();
            let mut c = vec![0.0; imgs[0].len()];
            for img in &imgs {
                for (acc, v) in c.iter_mut().zip(img.data()) {
                    *acc += v / imgs.len() as f64;
                }
            }
            centroids.push((id, c));
        }
        for r in &m.records {
            let img = read_ppm(&r.path).unwrap();
            let best = centroids
                .iter()
                .min_by(|(_, a), (_, b)| {
                    let da: f64 = a.iter().zip(img.data()).map(|(x, y)| (x - y).powi(2)).sum();
                    let db: f64 = b.iter().zip(img.data()).map(|(x, y)| (x - y).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap()
                .0;
            assert_eq!(best, r.identity);
        }
    }

    #[test]
    fn synthetic_split_is_disjoint_with_queries_covered() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec {
            identities: 6,
            images_per_identity: 4,
            ..Default::default()
        };
        let m = generate_synthetic(&spec, dir.path()).unwrap();
        m.validate().unwrap();
        let reloaded = load_manifest(&dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(reloaded.records.len(), m.records.len());
    }
}
