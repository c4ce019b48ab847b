//! wasm-bindgen bindings for the static demo page in `www/`.
//!
//! The `*_impl` functions hold the logic and run natively in tests; the
//! exported wrappers only convert errors for JavaScript.

use neuracodec::attacks::leakage::pearson;
use neuracodec::attacks::{self, EncryptedRecord};
use neuracodec::dataset_io::{self, Tensor};
use neuracodec::encoder::Encoder;
use neuracodec::keying::{DomainLabel, Keystream};
use neuracodec::probe::{self, ToySpec};
use neuracodec::{EncoderConfig, EncryptedSample, ImageTensor, MasterKey, Scheme};
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEMO_HIDDEN: usize = 192;
const DEMO_DEPTH: usize = 4;

/// Encrypted image (or token heat map) ready for a canvas.
#[wasm_bindgen]
pub struct EncryptedView {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    correlation: Option<f64>,
    value_min: f32,
    value_max: f32,
}

#[wasm_bindgen]
impl EncryptedView {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    /// Pixel Pearson correlation with the input; `undefined` for token output.
    #[wasm_bindgen(getter)]
    pub fn correlation(&self) -> Option<f64> {
        self.correlation
    }

    #[wasm_bindgen(getter, js_name = valueMin)]
    pub fn value_min(&self) -> f32 {
        self.value_min
    }

    #[wasm_bindgen(getter, js_name = valueMax)]
    pub fn value_max(&self) -> f32 {
        self.value_max
    }
}

fn parse_key(hex: &str) -> Result<MasterKey, String> {
    MasterKey::parse_hex(hex.trim()).map_err(|e| e.to_string())
}

fn parse_scheme(scheme: &str) -> Result<Scheme, String> {
    scheme.parse().map_err(|e: neuracodec::Error| e.to_string())
}

fn demo_config(scheme: Scheme, width: usize, height: usize, patch: usize) -> EncoderConfig {
    let mut cfg = EncoderConfig::toy(scheme)
        .with_geometry(3, height, width)
        .with_patch_size(patch);
    cfg.hidden_width = DEMO_HIDDEN;
    cfg.depth = DEMO_DEPTH;
    if scheme == Scheme::NeuraCrypt {
        cfg.output_dim = DEMO_HIDDEN;
    }
    cfg
}

fn to_rgba(hwc: &[u8], channels: usize) -> Vec<u8> {
    hwc.chunks_exact(channels)
        .flat_map(|px| match channels {
            3 => [px[0], px[1], px[2], 255],
            _ => [px[0], px[0], px[0], 255],
        })
        .collect()
}

pub fn encrypt_rgba_impl(
    key_hex: &str,
    scheme: &str,
    width: usize,
    height: usize,
    rgba: &[u8],
    patch: usize,
) -> Result<EncryptedView, String> {
    let key = parse_key(key_hex)?;
    let cfg = demo_config(parse_scheme(scheme)?, width, height, patch);
    let img = ImageTensor::from_rgba8(width, height, rgba).map_err(|e| e.to_string())?;
    let sample = Encoder::new(&key, &cfg)
        .and_then(|enc| enc.encrypt(&img, 0))
        .map_err(|e| e.to_string())?;
    let (lo, hi) = dataset_io::min_max(sample.values());
    let top = if hi > lo { hi } else { lo + 1.0 };
    let view = match &sample {
        EncryptedSample::Image(out) => EncryptedView {
            width,
            height,
            rgba: to_rgba(&dataset_io::quantize(out, lo, top).map_err(|e| e.to_string())?, 3),
            correlation: pearson(img.as_slice(), out.as_slice()),
            value_min: lo,
            value_max: hi,
        },
        EncryptedSample::Tokens { tokens, .. } => {
            // one grey pixel per token entry: rows are tokens
            let (rows, cols) = tokens.shape();
            let heat = ImageTensor::from_vec(1, rows, cols, tokens.as_slice().to_vec()).map_err(|e| e.to_string())?;
            EncryptedView {
                width: cols,
                height: rows,
                rgba: to_rgba(&dataset_io::quantize(&heat, lo, top).map_err(|e| e.to_string())?, 1),
                correlation: None,
                value_min: lo,
                value_max: hi,
            }
        }
    };
    Ok(view)
}

/// Encrypts an RGBA canvas buffer. Color output comes back at the input
/// size; neuracrypt output comes back as a tokens × width grey map.
#[wasm_bindgen(js_name = encryptRgba)]
pub fn encrypt_rgba(
    key_hex: &str,
    scheme: &str,
    width: usize,
    height: usize,
    rgba: &[u8],
    patch: usize,
) -> Result<EncryptedView, JsError> {
    encrypt_rgba_impl(key_hex, scheme, width, height, rgba, patch).map_err(|e| JsError::new(&e))
}

pub fn sample_image_impl(key_hex: &str, size: usize, class: usize) -> Result<Vec<u8>, String> {
    let key = parse_key(key_hex)?;
    let spec = ToySpec {
        height: size,
        width: size,
        ..ToySpec::new(3, 1)
    };
    let images = probe::generate_toy_dataset(&key, &spec).map_err(|e| e.to_string())?;
    let (img, _) = &images[class % images.len()];
    Ok(to_rgba(
        &dataset_io::quantize(img, 0.0, 1.0).map_err(|e| e.to_string())?,
        3,
    ))
}

/// A keyed synthetic rectangle image, `size × size` RGBA.
#[wasm_bindgen(js_name = sampleImage)]
pub fn sample_image(key_hex: &str, size: usize, class: usize) -> Result<Vec<u8>, JsError> {
    sample_image_impl(key_hex, size, class).map_err(|e| JsError::new(&e))
}

pub fn attack_demo_impl(key_hex: &str, scheme: &str, count: usize, chained: bool) -> Result<String, String> {
    let key = parse_key(key_hex)?;
    let cfg = demo_config(parse_scheme(scheme)?, 32, 32, 8);
    let images = if chained {
        attacks::collision_chain_images(&key, &cfg, count).map_err(|e| e.to_string())?
    } else {
        attacks::distinct_images(&key, &cfg, count)
    };
    let encoder = Encoder::new(&key, &cfg).map_err(|e| e.to_string())?;
    let plain: Vec<(String, ImageTensor)> = images
        .iter()
        .enumerate()
        .map(|(i, img)| (format!("plain_{i}"), img.clone()))
        .collect();
    let encrypted = images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            encoder.encrypt(img, i).map(|s| EncryptedRecord {
                name: format!("enc_{i}"),
                source: Some(format!("plain_{i}")),
                tensor: Tensor::from(&s),
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let report = attacks::match_samples(&plain, &encrypted, &cfg).map_err(|e| e.to_string())?;
    serde_json::to_string_pretty(&report).map_err(|e| e.to_string())
}

/// Runs the collision matching attack on a generated 32×32 set and returns
/// the JSON report.
#[wasm_bindgen(js_name = attackDemo)]
pub fn attack_demo(key_hex: &str, scheme: &str, count: usize, chained: bool) -> Result<String, JsError> {
    attack_demo_impl(key_hex, scheme, count, chained).map_err(|e| JsError::new(&e))
}

pub fn keystream_impl(key_hex: &str, label: &str, gaussians: usize, perm: usize) -> Result<String, String> {
    let key = parse_key(key_hex)?;
    if !label.is_ascii() {
        return Err("label must be ASCII".into());
    }
    let label = DomainLabel::new(label);
    let values = Keystream::new(&key, &label).gaussian(gaussians.min(4096), 0.0, 1.0);
    let permutation = Keystream::new(&key, &label).permutation(perm.min(4096));
    Ok(json!({
        "label": label.as_str(),
        "key_fingerprint": key.fingerprint(),
        "gaussians": values,
        "permutation": permutation,
    })
    .to_string())
}

/// First `gaussians` N(0, 1) draws and a `perm`-element permutation from
/// the stream for `(key, label)`.
#[wasm_bindgen(js_name = keystream)]
pub fn keystream(key_hex: &str, label: &str, gaussians: usize, perm: usize) -> Result<String, JsError> {
    keystream_impl(key_hex, label, gaussians, perm).map_err(|e| JsError::new(&e))
}
