//! Measurements of what an encrypted dataset still reveals. Pure
//! measurement: nothing here passes or fails.

use std::path::Path;

use serde::Serialize;

use crate::dataset_io::{self, Tensor};
use crate::encoder::{EncoderConfig, Scheme};
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

use super::{encrypted_signature, pairwise_collision_matrix};

pub const HISTOGRAM_BINS: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; the top edge falls in the last bin.
    pub fn build<'a>(values: impl IntoIterator<Item = &'a f32> + Clone, lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0u64; bins];
        let width = if hi > lo { hi - lo } else { 1.0 };
        for &v in values {
            let t = ((f64::from(v) - lo) / width * bins as f64).floor();
            let b = (t.max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        Histogram { lo, hi, counts }
    }
}

/// Pearson correlation of two equal-length sample vectors; `None` when either is constant.
pub fn pearson(a: &[f32], b: &[f32]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let n = a.len() as f64;
    let mean_a = a.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let mean_b = b.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let dx = f64::from(x) - mean_a;
        let dy = f64::from(y) - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return None;
    }
    Some(cov / (var_a.sqrt() * var_b.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageReport {
    pub samples: usize,
    pub scheme: Scheme,
    /// Per-pair pixel correlation; `None` (N/A) unless the ciphertext is an image.
    pub pixel_correlation: Option<Vec<Option<f64>>>,
    pub mean_abs_pixel_correlation: Option<f64>,
    /// Mean fraction of patch positions that collide, over all encrypted pairs.
    pub token_collision_rate: f64,
    pub plain_histogram: Histogram,
    pub encrypted_histogram: Histogram,
}

/// `plain[i]` must be the source of `encrypted[i]`.
pub fn measure_leakage(plain: &[ImageTensor], encrypted: &[Tensor], config: &EncoderConfig) -> Result<LeakageReport> {
    if plain.len() != encrypted.len() {
        return Err(Error::Dataset(format!(
            "leakage needs paired samples: {} plain vs {} encrypted",
            plain.len(),
            encrypted.len()
        )));
    }
    let pixel_correlation = (config.scheme == Scheme::Color).then(|| {
        plain
            .iter()
            .zip(encrypted)
            .map(|(p, e)| pearson(p.as_slice(), &e.data))
            .collect::<Vec<_>>()
    });
    let mean_abs_pixel_correlation = pixel_correlation.as_ref().and_then(|c| {
        let defined: Vec<f64> = c.iter().flatten().map(|r| r.abs()).collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    });

    let sigs = encrypted
        .iter()
        .map(|t| encrypted_signature(t, config))
        .collect::<Result<Vec<_>>>()?;
    let token_collision_rate = pairwise_collision_matrix(&sigs)?.mean_collision_rate(config.token_count());

    let plain_histogram = Histogram::build(plain.iter().flat_map(|p| p.as_slice()), 0.0, 1.0, HISTOGRAM_BINS);
    let (lo, hi) = encrypted
        .iter()
        .map(|t| dataset_io::min_max(&t.data))
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), (c, d)| {
            (a.min(c), b.max(d))
        });
    let (lo, hi) = if lo <= hi {
        (f64::from(lo), f64::from(hi))
    } else {
        (0.0, 1.0)
    };
    let encrypted_histogram = Histogram::build(encrypted.iter().flat_map(|t| &t.data), lo, hi, HISTOGRAM_BINS);

    Ok(LeakageReport {
        samples: plain.len(),
        scheme: config.scheme,
        pixel_correlation,
        mean_abs_pixel_correlation,
        token_collision_rate,
        plain_histogram,
        encrypted_histogram,
    })
}

/// Pairs `plain_dir/<source>` with each manifest entry of `enc_dir`.
pub fn leakage_report(plain_dir: &Path, enc_dir: &Path) -> Result<LeakageReport> {
    let (manifest, tensors) = dataset_io::load_encrypted(enc_dir)?;
    let plain = manifest
        .ordered_entries()
        .iter()
        .map(|e| dataset_io::load_image(&plain_dir.join(&e.source)))
        .collect::<Result<Vec<_>>>()?;
    measure_leakage(&plain, &tensors, &manifest.config)
}
