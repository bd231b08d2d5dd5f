//! Manifests, image loading and the synthetic multi-client generator.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use fedcbmir_core::numerics::Tensor;
use fedcbmir_core::retrieval::EntryMeta;
use fedcbmir_core::{Label, Magnification, Split};
use image::imageops::FilterType;
use image::ImageEncoder as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AppError, IoContext, Result};

pub const MANIFEST_HEADER: [&str; 6] = ["id", "path", "label", "magnification", "center", "split"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    /// Resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub magnification: Option<Magnification>,
    pub center: String,
    pub split: Split,
}

impl ImageRecord {
    pub fn meta(&self) -> EntryMeta {
        EntryMeta {
            id: self.id.clone(),
            label: self.label,
            magnification: self.magnification,
            center: self.center.clone(),
            split: self.split,
        }
    }
}

/// Record counts keyed by `(label, magnification, split)`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ManifestStats {
    pub total: usize,
    pub per_label: BTreeMap<String, usize>,
    pub per_magnification: BTreeMap<String, usize>,
    pub per_split: BTreeMap<String, usize>,
    pub cells: BTreeMap<String, usize>,
}

impl ManifestStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a ImageRecord>) -> Self {
        let mut s = ManifestStats::default();
        for r in records {
            s.total += 1;
            let (l, m, sp) = (r.label.as_str(), Magnification::label_opt(r.magnification), r.split.as_str());
            *s.per_label.entry(l.into()).or_default() += 1;
            *s.per_magnification.entry(m.into()).or_default() += 1;
            *s.per_split.entry(sp.into()).or_default() += 1;
            *s.cells.entry(format!("{l}/{m}/{sp}")).or_default() += 1;
        }
        s
    }

    pub fn label(&self, label: Label) -> usize {
        self.per_label.get(label.as_str()).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ImageRecord>,
    pub stats: ManifestStats,
}

impl DatasetManifest {
    pub fn new(records: Vec<ImageRecord>) -> Self {
        let stats = ManifestStats::from_records(&records);
        DatasetManifest { records, stats }
    }

    pub fn split(&self, splits: &[Split]) -> impl Iterator<Item = &ImageRecord> {
        let splits = splits.to_vec();
        self.records.iter().filter(move |r| splits.contains(&r.split))
    }

    /// Concatenates manifests, rejecting ids that appear in more than one.
    pub fn merge(manifests: Vec<DatasetManifest>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut records = Vec::new();
        for m in manifests {
            for r in m.records {
                if !seen.insert(r.id.clone()) {
                    return Err(AppError::Config(format!("id {} appears in more than one manifest", r.id)));
                }
                records.push(r);
            }
        }
        Ok(DatasetManifest::new(records))
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read(path).at(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base, path)
}

/// Parses manifest CSV; `origin` only labels error messages.
pub fn parse_manifest(bytes: &[u8], base: &Path, origin: &Path) -> Result<DatasetManifest> {
    let err = |line: u64, reason: String| AppError::Manifest {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(err(1, format!("header must be `{}`", MANIFEST_HEADER.join(","))));
    }
    let mut records = Vec::new();
    let mut first_seen: BTreeMap<String, u64> = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or("");
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(err(line, "empty id".into()));
        }
        if let Some(prev) = first_seen.insert(id.clone(), line) {
            return Err(err(line, format!("duplicate id {id:?} (first on line {prev})")));
        }
        let label: Label = field(2).parse().map_err(|e| err(line, format!("{e}")))?;
        let magnification = Magnification::parse_opt(field(3)).map_err(|e| err(line, format!("{e}")))?;
        let split = match field(5) {
            "" => Split::from_id_hash(&id),
            s => s.parse().map_err(|e| err(line, format!("{e}")))?,
        };
        if field(1).is_empty() {
            return Err(err(line, "empty path".into()));
        }
        records.push(ImageRecord {
            path: base.join(field(1)),
            id,
            label,
            magnification,
            center: field(4).to_string(),
            split,
        });
    }
    Ok(DatasetManifest::new(records))
}

/// Writes a manifest with paths made relative to its directory where possible.
pub fn write_manifest(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    let csv_err = |e: csv::Error| AppError::Config(format!("manifest encoding: {e}"));
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for r in records {
        let rel = r.path.strip_prefix(base).unwrap_or(&r.path);
        let rel = rel.to_string_lossy().replace('\\', "/");
        w.write_record([
            r.id.as_str(),
            rel.as_str(),
            r.label.as_str(),
            Magnification::label_opt(r.magnification),
            r.center.as_str(),
            r.split.as_str(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| AppError::Config(e.to_string()))?;
    fs::write(path, bytes).at(path)
}

fn to_tensor(img: image::DynamicImage, size: Option<(usize, usize)>) -> Tensor<f32> {
    let mut rgb = img.to_rgb8();
    if let Some((h, w)) = size {
        if rgb.height() as usize != h || rgb.width() as usize != w {
            rgb = image::imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle);
        }
    }
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.as_raw();
    Tensor::from_fn(vec![3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        f32::from(raw[p * 3 + c]) / 255.0
    })
}

/// PNG or binary PPM/PGM to a `[3, H, W]` tensor in [0, 1]. Grayscale is
/// replicated to three channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    load_image_sized(path, None)
}

/// As [`load_image`], resampling to `(height, width)` when the file differs.
pub fn load_image_sized(path: impl AsRef<Path>, size: Option<(usize, usize)>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    decode_image(&bytes, size).map_err(|reason| AppError::Image {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn decode_image(bytes: &[u8], size: Option<(usize, usize)>) -> std::result::Result<Tensor<f32>, String> {
    let format = image::guess_format(bytes).map_err(|e| e.to_string())?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(format!("unsupported format {format:?}"));
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| e.to_string())?;
    Ok(to_tensor(img, size))
}

/// Encodes a `[3, H, W]` tensor in [0, 1] as 8-bit PNG.
pub fn encode_png(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let d = t.data();
    let mut raw = vec![0u8; h * w * 3];
    for c in 0..3 {
        for p in 0..h * w {
            raw[p * 3 + c] = (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(&raw, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| AppError::Config(format!("png encoding: {e}")))?;
    Ok(out)
}

/// Loads every record's image at the model's input size, in manifest order.
pub fn load_images<'a>(
    records: impl IntoIterator<Item = &'a ImageRecord>,
    size: (usize, usize),
) -> Result<Vec<Tensor<f32>>> {
    records
        .into_iter()
        .map(|r| load_image_sized(&r.path, Some(size)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub clients: usize,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub image_size: usize,
    /// Malignant stripe wavelength in pixels before scaling.
    pub stripe_wavelength: f64,
    /// Benign blob radius in pixels before scaling.
    pub blob_radius: f64,
    pub noise_sigma: f64,
    /// Per-magnification scale factor, 40x to 400x. Client `k` takes
    /// magnification `k mod 4`.
    pub scales: [f64; 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            clients: 4,
            train: 80,
            validation: 20,
            test: 20,
            image_size: 32,
            stripe_wavelength: 4.0,
            blob_radius: 3.0,
            noise_sigma: 0.03,
            scales: [1.0, 1.25, 1.6, 2.0],
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn magnification(&self, client: usize) -> Magnification {
        Magnification::ALL[client % 4]
    }

    pub fn scale(&self, client: usize) -> f64 {
        self.scales[client % 4]
    }
}

pub fn client_name(k: usize) -> String {
    format!("client-{k}")
}

fn lerp(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// Draws one image. Benign: soft low-frequency blobs on a pale ground.
/// Malignant: dark high-frequency stripes at a random angle.
pub fn synth_image(config: &SynthConfig, label: Label, scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let s = config.image_size;
    let mut px = vec![[0.0f64; 3]; s * s];
    if label.is_positive() {
        let wavelength = config.stripe_wavelength * scale;
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (light, dark) = ([0.78, 0.58, 0.78], [0.30, 0.12, 0.42]);
        for y in 0..s {
            for x in 0..s {
                let u = x as f64 * theta.cos() + y as f64 * theta.sin();
                let t = 0.5 + 0.5 * (std::f64::consts::TAU * u / wavelength + phase).sin();
                px[y * s + x] = lerp(light, dark, t);
            }
        }
    } else {
        let ground = [0.94, 0.82, 0.90];
        let ink = [0.55, 0.36, 0.66];
        let n = rng.gen_range(3..=5);
        let blobs: Vec<(f64, f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.gen_range(0.0..s as f64),
                    rng.gen_range(0.0..s as f64),
                    config.blob_radius * scale * rng.gen_range(0.8..1.2),
                )
            })
            .collect();
        for y in 0..s {
            for x in 0..s {
                let w = blobs
                    .iter()
                    .map(|&(cx, cy, r)| {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        (-d2 / (2.0 * r * r)).exp()
                    })
                    .fold(0.0, f64::max);
                px[y * s + x] = lerp(ground, ink, w);
            }
        }
    }
    let noise = config.noise_sigma;
    let mut out = vec![0.0f32; 3 * s * s];
    for (p, rgb) in px.iter().enumerate() {
        for c in 0..3 {
            // Sum of uniforms: cheap, bounded, roughly normal noise.
            let e: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * noise * (3.0f64 / 4.0).sqrt();
            out[c * s * s + p] = (rgb[c] + e).clamp(0.0, 1.0) as f32;
        }
    }
    Tensor::new(vec![3, s, s], out).expect("synthetic image shape")
}

/// Writes `client-<k>/<split>/<id>.png` plus `client-<k>/manifest.csv` for
/// every client and a combined `manifest.csv` at the root.
pub fn synth_generate(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Vec<DatasetManifest>> {
    if config.clients == 0 || config.image_size == 0 {
        return Err(AppError::Config("synthetic data needs ≥1 client and a positive image size".into()));
    }
    let out = out_dir.as_ref();
    let mut manifests = Vec::new();
    let mut all = Vec::new();
    let mut stream = 0u64;
    for k in 0..config.clients {
        let name = client_name(k);
        let dir = out.join(&name);
        let mut records = Vec::new();
        for (split, count) in [
            (Split::Train, config.train),
            (Split::Validation, config.validation),
            (Split::Test, config.test),
        ] {
            let split_dir = dir.join(split.as_str());
            fs::create_dir_all(&split_dir).at(&split_dir)?;
            for i in 0..count {
                let label = if i % 2 == 0 { Label::Benign } else { Label::Malignant };
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(stream);
                stream += 1;
                let img = synth_image(config, label, config.scale(k), &mut rng);
                let id = format!("c{k}-{}-{i:04}", split.as_str());
                let path = split_dir.join(format!("{id}.png"));
                fs::write(&path, encode_png(&img)?).at(&path)?;
                records.push(ImageRecord {
                    id,
                    path,
                    label,
                    magnification: Some(config.magnification(k)),
                    center: format!("center-{k}"),
                    split,
                });
            }
        }
        write_manifest(dir.join("manifest.csv"), &records)?;
        all.extend(records.iter().cloned());
        manifests.push(DatasetManifest::new(records));
    }
    write_manifest(out.join("manifest.csv"), &all)?;
    let cfg_path = out.join("synth.json");
    let json = serde_json::to_vec_pretty(config).map_err(|e| AppError::Config(e.to_string()))?;
    fs::write(&cfg_path, json).at(&cfg_path)?;
    Ok(manifests)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(text: &str) -> Result<DatasetManifest> {
        parse_manifest(text.as_bytes(), Path::new("/data"), Path::new("m.csv"))
    }

    #[test]
    fn header_only_is_empty() {
        let m = manifest("id,path,label,magnification,center,split\n").unwrap();
        assert!(m.records.is_empty());
        assert_eq!(m.stats.total, 0);
    }

    #[test]
    fn duplicate_id_cites_its_line() {
        let mut text = String::from("id,path,label,magnification,center,split\n");
        for i in 0..5 {
            text.push_str(&format!("a{i},a{i}.png,benign,40x,c,train\n"));
        }
        text.push_str("a2,x.png,malignant,40x,c,train\n");
        match manifest(&text) {
            Err(AppError::Manifest { line, reason, .. }) => {
                assert_eq!(line, 7);
                assert!(reason.contains("duplicate"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_row_and_header() {
        let bad = manifest("id,path,label,magnification,center,split\nx,x.png,weird,40x,c,train\n");
        assert!(matches!(bad, Err(AppError::Manifest { line: 2, .. })));
        assert!(matches!(manifest("id,path\n"), Err(AppError::Manifest { line: 1, .. })));
    }

    #[test]
    fn fields_parse_and_paths_resolve() {
        let m = manifest(
            "id,path,label,magnification,center,split\n\
             a,img/a.png,malignant,100x,c1,validation\n\
             b,b.png,benign,none,c2,\n",
        )
        .unwrap();
        assert_eq!(m.records[0].path, Path::new("/data/img/a.png"));
        assert_eq!(m.records[0].magnification, Some(Magnification::X100));
        assert_eq!(m.records[1].magnification, None);
        assert_eq!(m.records[1].split, Split::from_id_hash("b"));
        assert_eq!(m.stats.label(Label::Malignant), 1);
    }

    #[test]
    fn ppm_fixture_values() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0, 0, 0, 255, 51, 102, 204]);
        let t = decode_image(&bytes, None).unwrap();
        assert_eq!(t.shape(), &[3, 2, 2]);
        assert_eq!(t.data(), &[1.0, 0.0, 0.0, 0.2, 0.0, 1.0, 0.0, 0.4, 0.0, 0.0, 1.0, 0.8]);
    }

    #[test]
    fn grayscale_png_replicates_and_truncation_fails() {
        let mut png = Vec::new();
        image::codecs::png::PngEncoder::new(&mut png)
            .write_image(&[0, 128, 255, 64], 2, 2, image::ExtendedColorType::L8)
            .unwrap();
        let t = decode_image(&png, None).unwrap();
        assert_eq!(&t.data()[0..4], &t.data()[4..8]);
        assert_eq!(&t.data()[0..4], &t.data()[8..12]);
        assert_eq!(t.data()[1], 128.0 / 255.0);
        assert!(decode_image(&png[..png.len() / 2], None).is_err());
    }

    #[test]
    fn png_round_trip_is_exact_on_byte_grid() {
        let t = Tensor::from_fn(vec![3, 4, 5], |i| (i % 256) as f32 / 255.0);
        assert_eq!(decode_image(&encode_png(&t).unwrap(), None).unwrap(), t);
    }
}
