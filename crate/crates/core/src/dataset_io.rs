//! Plain image loading, the `NCT1` tensor file format, PNG visualisation and
//! encrypted-dataset manifests.
//!
//! `NCT1` layout, all integers little-endian:
//!
//! | offset | size        | field                            |
//! |--------|-------------|----------------------------------|
//! | 0      | 4           | magic `b"NCT1"`                  |
//! | 4      | 1           | rank `r` (1..=255)               |
//! | 5      | 4·r         | dims, `u32` each                 |
//! | 5+4r   | 4·∏dims     | samples, `f32`, last dim fastest |

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::encoder::{Encoder, EncoderConfig, EncryptedSample, Scheme, ShuffleSource};
use crate::error::{Error, Result};
use crate::keying::MasterKey;
use crate::tensor::ImageTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"NCT1";
pub const MANIFEST_NAME: &str = "manifest.json";
pub const LABELS_NAME: &str = "labels.csv";
pub const MANIFEST_VERSION: u32 = 1;

/// In-memory form of an `NCT1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > u8::MAX as usize {
            return Err(Error::Shape(format!("tensor rank {} not in 1..=255", dims.len())));
        }
        if dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::Shape("tensor dimension exceeds u32".into()));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "dims {dims:?} need {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if let Some(index) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        let mut out = Vec::with_capacity(5 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(TENSOR_MAGIC);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |offset: usize, reason: String| Error::TensorFormat { offset, reason };
        if bytes.len() < 4 {
            return Err(fail(bytes.len(), "truncated magic".into()));
        }
        if &bytes[..4] != TENSOR_MAGIC {
            return Err(fail(0, format!("bad magic {:?}", &bytes[..4])));
        }
        let rank = *bytes.get(4).ok_or_else(|| fail(4, "missing rank".into()))? as usize;
        if rank == 0 {
            return Err(fail(4, "rank 0 is not allowed".into()));
        }
        let header = 5 + 4 * rank;
        if bytes.len() < header {
            return Err(fail(bytes.len(), format!("truncated header, expected {header} bytes")));
        }
        let dims: Vec<usize> = bytes[5..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| fail(5, "dimension product overflows".into()))?;
        let expected = count
            .checked_mul(4)
            .and_then(|n| n.checked_add(header))
            .ok_or_else(|| fail(5, "payload size overflows".into()))?;
        if bytes.len() < expected {
            return Err(fail(
                bytes.len(),
                format!("truncated payload, expected {expected} bytes"),
            ));
        }
        if bytes.len() > expected {
            return Err(fail(expected, "trailing bytes after payload".into()));
        }
        let data = bytes[header..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn into_image(self) -> Result<ImageTensor> {
        match self.dims[..] {
            [c, h, w] => ImageTensor::from_vec(c, h, w, self.data),
            _ => Err(Error::Shape(format!(
                "expected a rank-3 image, got dims {:?}",
                self.dims
            ))),
        }
    }
}

impl From<&ImageTensor> for Tensor {
    fn from(img: &ImageTensor) -> Self {
        Tensor {
            dims: img.dims().to_vec(),
            data: img.as_slice().to_vec(),
        }
    }
}

impl From<&EncryptedSample> for Tensor {
    fn from(sample: &EncryptedSample) -> Self {
        Tensor {
            dims: sample.dims(),
            data: sample.values().to_vec(),
        }
    }
}

pub fn save_tensor(tensor: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, tensor.to_bytes()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Tensor::from_bytes(&bytes)
}

/// Loads an 8-bit PNG or PNM file as a channel-major tensor with samples `v/255`.
/// Grayscale loads as one channel; an alpha channel is dropped.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let reader = ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    let unsupported = |format: String| Error::UnsupportedImage {
        path: path.to_path_buf(),
        format,
    };
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(unsupported(format!("{other:?}"))),
        None => return Err(unsupported("unrecognised".into())),
    }
    let img = reader.decode()?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = match img.color() {
        ColorType::L8 => (1, img.into_luma8().into_raw()),
        ColorType::La8 => (1, img.into_luma8().into_raw()),
        ColorType::Rgb8 => (3, img.into_rgb8().into_raw()),
        ColorType::Rgba8 => (3, img.into_rgb8().into_raw()),
        other => {
            return Err(unsupported(format!(
                "{other:?} ({}-bit samples); only 8-bit images are supported",
                other.bits_per_pixel() / u16::from(other.channel_count())
            )))
        }
    };
    let plane = width * height;
    let mut data = vec![0.0f32; channels * plane];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            data[c * plane + i] = f32::from(v) / 255.0;
        }
    }
    ImageTensor::from_vec(channels, height, width, data)
}

/// Maps `v` to `round((v - lo) / (hi - lo) * 255)` clamped to `[0, 255]`,
/// rounding halves up. Returns interleaved samples (`HWC`).
pub fn quantize(img: &ImageTensor, lo: f32, hi: f32) -> Result<Vec<u8>> {
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(Error::Config(format!(
            "visualisation range needs lo < hi, got [{lo}, {hi}]"
        )));
    }
    let (lo, hi) = (f64::from(lo), f64::from(hi));
    let [c, h, w] = img.dims();
    let mut out = vec![0u8; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let t = (f64::from(img.get(ch, y, x)) - lo) / (hi - lo) * 255.0;
                out[(y * w + x) * c + ch] = (t + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

/// Writes an 8-bit PNG for viewing only; the mapping is lossy.
pub fn export_png(img: &ImageTensor, lo: f32, hi: f32, path: &Path) -> Result<()> {
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Shape(format!("cannot write a {c}-channel PNG"))),
    };
    let bytes = quantize(img, lo, hi)?;
    image::save_buffer_with_format(
        path,
        &bytes,
        img.width() as u32,
        img.height() as u32,
        color,
        ImageFormat::Png,
    )?;
    Ok(())
}

fn is_image_name(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pgm" | "pnm"))
        .unwrap_or(false)
}

/// Image files in `dir`, sorted by file name (byte-wise).
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| Error::io(format!("listing {}", dir.display()), e))?
            .path();
        if path.is_file() && is_image_name(&path) {
            paths.push(path);
        }
    }
    paths.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(paths)
}

pub fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    name: String,
    label: String,
}

/// Reads `labels.csv` (`name,label`) if present.
pub fn read_labels(dir: &Path) -> Result<Option<HashMap<String, String>>> {
    let path = dir.join(LABELS_NAME);
    if !path.exists() {
        return Ok(None);
    }
    let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let mut labels = HashMap::new();
    for row in reader.deserialize() {
        let row: LabelRow = row.map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
        labels.insert(row.name, row.label);
    }
    Ok(Some(labels))
}

pub fn write_labels(dir: &Path, rows: &[(String, String)]) -> Result<()> {
    let path = dir.join(LABELS_NAME);
    let mut writer = csv::Writer::from_path(&path).map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    let io_err = |e: csv::Error| Error::Dataset(format!("{}: {e}", path.display()));
    writer.write_record(["name", "label"]).map_err(io_err)?;
    for (name, label) in rows {
        writer.write_record([name, label]).map_err(io_err)?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub source: String,
    pub output: String,
    pub image_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub png: Option<String>,
    /// Only recorded when explicitly requested; it reveals the patch order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

/// Binds a directory of encrypted tensors to the config and key that produced them.
/// Never holds key material, only its SHA-256 fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scheme: Scheme,
    pub config: EncoderConfig,
    pub key_fingerprint: String,
    pub shuffle_source: ShuffleSource,
    pub entries: Vec<ManifestEntry>,
    pub value_min: f32,
    pub value_max: f32,
    pub created: String,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.scheme != self.config.scheme {
            return Err(Error::Manifest("scheme disagrees with config".into()));
        }
        self.config.validate()?;
        let mut seen = vec![false; self.entries.len()];
        for e in &self.entries {
            if e.image_index >= seen.len() || std::mem::replace(&mut seen[e.image_index], true) {
                return Err(Error::Manifest(format!(
                    "image indices must be unique and contiguous from 0 (bad index {})",
                    e.image_index
                )));
            }
        }
        if self.value_min.is_nan() || self.value_max.is_nan() || self.value_min > self.value_max {
            return Err(Error::Manifest(format!(
                "value range [{}, {}] is inverted",
                self.value_min, self.value_max
            )));
        }
        Ok(())
    }

    pub fn matches_key(&self, key: &MasterKey) -> bool {
        self.key_fingerprint == key.fingerprint()
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_NAME);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        Ok(path)
    }

    /// Entries sorted by image index.
    pub fn ordered_entries(&self) -> Vec<&ManifestEntry> {
        let mut entries: Vec<_> = self.entries.iter().collect();
        entries.sort_by_key(|e| e.image_index);
        entries
    }
}

#[derive(Debug, Clone)]
pub struct EncryptOptions {
    /// Also write `<name>.plain.png` / `<name>.enc.png` (color scheme only).
    pub png: bool,
    /// Worker threads; output is identical for any value.
    pub jobs: usize,
    pub keep_permutation: bool,
    pub shuffle_source: ShuffleSource,
}

impl Default for EncryptOptions {
    fn default() -> Self {
        EncryptOptions {
            png: false,
            jobs: 1,
            keep_permutation: false,
            shuffle_source: ShuffleSource::Keyed,
        }
    }
}

pub(crate) fn map_indexed<T, U, F>(items: &[T], jobs: usize, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            return pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect());
        }
    }
    let _ = jobs;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Loads every image in `dir` (sorted by name) and checks each against `config`.
pub fn load_dataset(dir: &Path, config: &EncoderConfig) -> Result<Vec<(String, ImageTensor)>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no PNG/PPM images in {}", dir.display())));
    }
    let mut images = Vec::with_capacity(paths.len());
    let mut offending = Vec::new();
    for path in &paths {
        let img = load_image(path)?;
        if img.dims() != [config.channels, config.height, config.width] {
            let [c, h, w] = img.dims();
            offending.push(format!("{} ({c}x{h}x{w})", file_name(path)));
        }
        images.push((file_name(path), img));
    }
    if !offending.is_empty() {
        return Err(Error::Dataset(format!(
            "expected {}x{}x{} images; mismatched: {}",
            config.channels,
            config.height,
            config.width,
            offending.join(", ")
        )));
    }
    Ok(images)
}

/// Encrypts every image in `src` into `dst` and writes `manifest.json`.
///
/// Image indices follow the sorted file names, so per-image permutations are
/// reproducible on any machine. Tensor files are byte-identical for a given
/// `(inputs, key, config)` regardless of `jobs`.
pub fn encrypt_dataset(
    src: &Path,
    key: &MasterKey,
    config: &EncoderConfig,
    dst: &Path,
    options: &EncryptOptions,
) -> Result<DatasetManifest> {
    config.validate()?;
    if options.png && config.scheme != Scheme::Color {
        return Err(Error::Config(
            "PNG export is only available for the color scheme".into(),
        ));
    }
    let images = load_dataset(src, config)?;
    let labels = read_labels(src)?;
    let encoder = Encoder::new(key, config)?
        .shuffle_source(options.shuffle_source)
        .keep_permutation(options.keep_permutation);
    fs::create_dir_all(dst).map_err(|e| Error::io(format!("creating {}", dst.display()), e))?;

    let results = map_indexed(&images, options.jobs, |index, (name, img)| -> Result<_> {
        let sample = encoder.encrypt(img, index)?;
        let output = format!("{name}.nct");
        save_tensor(&Tensor::from(&sample), &dst.join(&output))?;
        let (lo, hi) = min_max(sample.values());
        Ok((output, sample, lo, hi))
    });

    let mut value_min = f32::INFINITY;
    let mut value_max = f32::NEG_INFINITY;
    let mut entries = Vec::with_capacity(images.len());
    let mut samples = Vec::with_capacity(images.len());
    for (index, ((name, _), result)) in images.iter().zip(results).enumerate() {
        let (output, sample, lo, hi) = result?;
        value_min = value_min.min(lo);
        value_max = value_max.max(hi);
        entries.push(ManifestEntry {
            source: name.clone(),
            output,
            image_index: index,
            label: labels.as_ref().and_then(|l| l.get(name).cloned()),
            png: None,
            permutation: sample.permutation().map(<[usize]>::to_vec),
        });
        samples.push(sample);
    }

    if options.png {
        // A constant dataset still needs a non-empty range.
        let hi = if value_max > value_min {
            value_max
        } else {
            value_min + 1.0
        };
        for ((entry, sample), (_, plain)) in entries.iter_mut().zip(&samples).zip(&images) {
            if let EncryptedSample::Image(enc) = sample {
                let enc_name = format!("{}.enc.png", entry.source);
                export_png(enc, value_min, hi, &dst.join(&enc_name))?;
                export_png(plain, 0.0, 1.0, &dst.join(format!("{}.plain.png", entry.source)))?;
                entry.png = Some(enc_name);
            }
        }
    }

    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        scheme: config.scheme,
        config: config.clone(),
        key_fingerprint: key.fingerprint(),
        shuffle_source: options.shuffle_source,
        entries,
        value_min,
        value_max,
        created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    manifest.write(dst)?;
    Ok(manifest)
}

/// Reads the manifest in `dir` and every tensor it lists, in image-index order.
pub fn load_encrypted(dir: &Path) -> Result<(DatasetManifest, Vec<Tensor>)> {
    let manifest = DatasetManifest::read(dir)?;
    let tensors = manifest
        .ordered_entries()
        .iter()
        .map(|e| load_tensor(&dir.join(&e.output)))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, tensors))
}

pub fn min_max(values: &[f32]) -> (f32, f32) {
    values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v), hi.max(v))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_rgb_png(path: &Path, w: u32, h: u32, px: &[u8]) {
        image::save_buffer_with_format(path, px, w, h, image::ExtendedColorType::Rgb8, ImageFormat::Png).unwrap();
    }

    #[test]
    fn tensor_bytes_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap();
        let bytes = t.to_bytes().unwrap();
        let mut expected = b"NCT1".to_vec();
        expected.push(2);
        expected.extend([1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend(1.0f32.to_le_bytes());
        expected.extend((-2.5f32).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn tensor_decode_errors_carry_offsets() {
        let good = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().to_bytes().unwrap();
        let err = Tensor::from_bytes(&good[..good.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::TensorFormat { offset, .. } if offset == good.len() - 1));

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            Tensor::from_bytes(&bad_magic),
            Err(Error::TensorFormat { offset: 0, .. })
        ));

        assert!(matches!(
            Tensor::from_bytes(b"NCT1\0"),
            Err(Error::TensorFormat { offset: 4, .. })
        ));
        assert!(Tensor::new(vec![], vec![]).is_err());

        let mut trailing = good;
        trailing.push(0);
        assert!(Tensor::from_bytes(&trailing).is_err());
    }

    #[test]
    fn non_finite_tensor_refused() {
        let t = Tensor::new(vec![2], vec![0.0, f32::NAN]).unwrap();
        assert!(matches!(t.to_bytes(), Err(Error::NonFinite { index: 1 })));
    }

    #[test]
    fn tensor_file_round_trip_196x768() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.nct");
        let data: Vec<f32> = (0..196 * 768)
            .map(|i| ((i * 7919) % 10007) as f32 * 1e-3 - 5.0)
            .collect();
        let t = Tensor::new(vec![196, 768], data).unwrap();
        save_tensor(&t, &path).unwrap();
        assert_eq!(load_tensor(&path).unwrap(), t);
    }

    #[test]
    fn load_one_pixel_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.png");
        write_rgb_png(&path, 1, 1, &[255, 0, 128]);
        let img = load_image(&path).unwrap();
        assert_eq!(img.dims(), [3, 1, 1]);
        assert_eq!(img.as_slice(), &[1.0, 0.0, 128.0 / 255.0]);
    }

    #[test]
    fn load_gray_and_ppm() {
        let dir = tempfile::tempdir().unwrap();
        let gray = dir.path().join("g.png");
        image::save_buffer_with_format(
            &gray,
            &[0, 51, 255, 102],
            2,
            2,
            image::ExtendedColorType::L8,
            ImageFormat::Png,
        )
        .unwrap();
        let img = load_image(&gray).unwrap();
        assert_eq!(img.dims(), [1, 2, 2]);
        assert_eq!(img.as_slice(), &[0.0, 0.2, 1.0, 0.4]);

        let ppm = dir.path().join("c.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend([10, 20, 30, 40, 50, 60]);
        fs::write(&ppm, bytes).unwrap();
        let img = load_image(&ppm).unwrap();
        assert_eq!(img.dims(), [3, 1, 2]);
        assert_eq!(img.get(2, 0, 1), 60.0 / 255.0);
    }

    #[test]
    fn sixteen_bit_png_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("deep.png");
        let buf = image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(1, 1, vec![1u16, 2, 3]).unwrap();
        buf.save(&path).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(
            matches!(err, Error::UnsupportedImage { ref format, .. } if format.contains("16-bit")),
            "{err}"
        );
    }

    #[test]
    fn quantize_endpoints_and_midpoint() {
        let img = ImageTensor::from_vec(1, 1, 5, vec![-1.0, 3.0, 1.0, -9.0, 9.0]).unwrap();
        assert_eq!(quantize(&img, -1.0, 3.0).unwrap(), vec![0, 255, 128, 0, 255]);
        assert!(quantize(&img, 1.0, 1.0).is_err());
        assert!(quantize(&img, 2.0, 1.0).is_err());

        let flat = ImageTensor::from_vec(3, 2, 2, vec![0.25; 12]).unwrap();
        let q = quantize(&flat, 0.0, 1.0).unwrap();
        assert!(q.iter().all(|&v| v == 64));
    }

    #[test]
    fn export_png_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.png");
        let img = ImageTensor::from_vec(3, 1, 2, vec![0.0, 10.0, 5.0, 5.0, 10.0, 0.0]).unwrap();
        export_png(&img, 0.0, 10.0, &path).unwrap();
        let back = load_image(&path).unwrap();
        let expected: Vec<f32> = [0u8, 255, 128, 128, 255, 0]
            .iter()
            .map(|&v| f32::from(v) / 255.0)
            .collect();
        assert_eq!(back.as_slice(), &expected[..]);
    }

    #[test]
    fn manifest_validation() {
        let cfg = EncoderConfig::toy(Scheme::Color);
        let entry = |i| ManifestEntry {
            source: format!("{i}.png"),
            output: format!("{i}.png.nct"),
            image_index: i,
            label: None,
            png: None,
            permutation: None,
        };
        let mut m = DatasetManifest {
            format_version: MANIFEST_VERSION,
            scheme: Scheme::Color,
            config: cfg,
            key_fingerprint: String::new(),
            shuffle_source: ShuffleSource::Keyed,
            entries: vec![entry(1), entry(0)],
            value_min: -1.0,
            value_max: 1.0,
            created: String::new(),
        };
        m.validate().unwrap();
        m.entries.push(entry(3));
        assert!(m.validate().is_err());
        m.entries.pop();
        m.value_min = 2.0;
        assert!(m.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn tensor_bytes_round_trip(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n)
                .map(|i| f32::from_bits((seed.wrapping_add((i as u32).wrapping_mul(2_654_435_761))) & 0x7f7f_ffff))
                .collect();
            let t = Tensor::new(dims, data).unwrap();
            let back = Tensor::from_bytes(&t.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.dims, t.dims);
            prop_assert!(back.data.iter().zip(&t.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
