//! Ciphertext-only matching attack and leakage measurements.
//!
//! Without patch shuffling the encoder is deterministic per patch position:
//! identical plain patches at the same index encrypt to identical output
//! patches. Counting such collisions between every pair of samples gives a
//! collision matrix on each side that is the same up to a simultaneous
//! row/column relabelling. The attack compares permutation-invariant row
//! signatures (off-diagonal row, sorted descending) and recovers the
//! plain/encrypted correspondence with an exact assignment solver.

pub mod assignment;
pub mod leakage;

use std::path::Path;

use serde::Serialize;

use crate::dataset_io::{self, DatasetManifest, Tensor};
use crate::encoder::{extract_patches, EncoderConfig, Scheme};
use crate::error::{Error, Result};
use crate::keying::{DomainLabel, Keystream, MasterKey};
use crate::tensor::{ImageTensor, Matrix};

pub use assignment::{hungarian_assign, Assignment, CostMatrix};
pub use leakage::{leakage_report, measure_leakage, Histogram, LeakageReport};

/// Samples are rounded to this many decimal places before hashing.
pub const HASH_DECIMALS: i32 = 6;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the little-endian `i64` values `round(v · 10^6)`.
pub fn content_hash(values: &[f32]) -> u64 {
    let scale = 10f64.powi(HASH_DECIMALS);
    values.iter().fold(FNV_OFFSET, |h, &v| {
        let q = (f64::from(v) * scale).round() as i64;
        q.to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SignatureMode {
    /// Collisions count only at equal patch indices.
    Positional,
    /// Position-agnostic: multiset intersection of row hashes. Used when the
    /// encrypted rows were shuffled and positions carry no meaning.
    Multiset,
}

/// One hash per patch index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollisionSignature {
    hashes: Vec<u64>,
    mode: SignatureMode,
}

impl CollisionSignature {
    pub fn from_rows(rows: &Matrix, mode: SignatureMode) -> Self {
        CollisionSignature {
            hashes: rows.iter_rows().map(content_hash).collect(),
            mode,
        }
    }

    pub fn hashes(&self) -> &[u64] {
        &self.hashes
    }

    pub fn mode(&self) -> SignatureMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    fn collisions_with(&self, other: &Self) -> u32 {
        match self.mode {
            SignatureMode::Positional => self.hashes.iter().zip(&other.hashes).filter(|(a, b)| a == b).count() as u32,
            SignatureMode::Multiset => {
                let mut a = self.hashes.clone();
                let mut b = other.hashes.clone();
                a.sort_unstable();
                b.sort_unstable();
                let (mut i, mut j, mut count) = (0, 0, 0);
                while i < a.len() && j < b.len() {
                    match a[i].cmp(&b[j]) {
                        std::cmp::Ordering::Less => i += 1,
                        std::cmp::Ordering::Greater => j += 1,
                        std::cmp::Ordering::Equal => {
                            count += 1;
                            i += 1;
                            j += 1;
                        }
                    }
                }
                count
            }
        }
    }
}

/// Signature of a plain image: one hash per `p × p` patch.
pub fn plain_signature(img: &ImageTensor, patch_size: usize) -> Result<CollisionSignature> {
    Ok(CollisionSignature::from_rows(
        &extract_patches(img, patch_size)?,
        SignatureMode::Positional,
    ))
}

/// Signature of an encrypted sample: token rows for `neuracrypt`, output
/// patch regions for `color`.
pub fn encrypted_signature(tensor: &Tensor, config: &EncoderConfig) -> Result<CollisionSignature> {
    match (config.scheme, &tensor.dims[..]) {
        (Scheme::NeuraCrypt, &[rows, cols]) => {
            let m = Matrix::from_vec(rows, cols, tensor.data.clone())?;
            let mode = if config.patch_shuffle {
                SignatureMode::Multiset
            } else {
                SignatureMode::Positional
            };
            Ok(CollisionSignature::from_rows(&m, mode))
        }
        (Scheme::Color, &[_, _, _]) => {
            let img = tensor.clone().into_image()?;
            Ok(CollisionSignature::from_rows(
                &extract_patches(&img, config.patch_size)?,
                SignatureMode::Positional,
            ))
        }
        (scheme, dims) => Err(Error::Shape(format!(
            "tensor dims {dims:?} do not match scheme {scheme}"
        ))),
    }
}

/// Symmetric `n × n` count of colliding patches; the diagonal is `N`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CollisionMatrix {
    n: usize,
    counts: Vec<u32>,
}

impl CollisionMatrix {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, a: usize, b: usize) -> u32 {
        self.counts[a * self.n + b]
    }

    pub fn row(&self, a: usize) -> &[u32] {
        &self.counts[a * self.n..(a + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<u32>> {
        (0..self.n).map(|a| self.row(a).to_vec()).collect()
    }

    /// Row `a` without its diagonal entry, sorted descending.
    pub fn sorted_row(&self, a: usize) -> Vec<u32> {
        let mut row: Vec<u32> = self
            .row(a)
            .iter()
            .enumerate()
            .filter(|&(b, _)| b != a)
            .map(|(_, &c)| c)
            .collect();
        row.sort_unstable_by(|x, y| y.cmp(x));
        row
    }

    pub fn has_off_diagonal_signal(&self) -> bool {
        (0..self.n).any(|a| (0..self.n).any(|b| a != b && self.get(a, b) > 0))
    }

    /// Mean off-diagonal count over unordered pairs, divided by `patches`.
    pub fn mean_collision_rate(&self, patches: usize) -> f64 {
        if self.n < 2 || patches == 0 {
            return 0.0;
        }
        let mut total = 0u64;
        for a in 0..self.n {
            for b in a + 1..self.n {
                total += u64::from(self.get(a, b));
            }
        }
        let pairs = (self.n * (self.n - 1) / 2) as f64;
        total as f64 / pairs / patches as f64
    }
}

pub fn pairwise_collision_matrix(signatures: &[CollisionSignature]) -> Result<CollisionMatrix> {
    let n = signatures.len();
    if let Some(first) = signatures.first() {
        if let Some(bad) = signatures
            .iter()
            .position(|s| s.len() != first.len() || s.mode != first.mode)
        {
            return Err(Error::Shape(format!(
                "signature {bad} has length {} ({:?}), expected {} ({:?})",
                signatures[bad].len(),
                signatures[bad].mode,
                first.len(),
                first.mode
            )));
        }
    }
    let mut counts = vec![0u32; n * n];
    for a in 0..n {
        counts[a * n + a] = signatures[a].len() as u32;
        for b in a + 1..n {
            let c = signatures[a].collisions_with(&signatures[b]);
            counts[a * n + b] = c;
            counts[b * n + a] = c;
        }
    }
    Ok(CollisionMatrix { n, counts })
}

/// L1 distance between the sorted off-diagonal rows `i` of `plain` and `j` of `enc`.
pub fn signature_cost(plain: &CollisionMatrix, enc: &CollisionMatrix, i: usize, j: usize) -> f64 {
    plain
        .sorted_row(i)
        .iter()
        .zip(enc.sorted_row(j))
        .map(|(&a, b)| f64::from(a.abs_diff(b)))
        .sum()
}

pub fn cost_matrix(plain: &CollisionMatrix, enc: &CollisionMatrix) -> Result<CostMatrix> {
    let n = plain.order();
    if enc.order() != n {
        return Err(Error::Shape(format!(
            "{n} plain samples but {} encrypted samples",
            enc.order()
        )));
    }
    let plain_rows: Vec<_> = (0..n).map(|i| plain.sorted_row(i)).collect();
    let enc_rows: Vec<_> = (0..n).map(|j| enc.sorted_row(j)).collect();
    let mut data = Vec::with_capacity(n * n);
    for p in &plain_rows {
        for e in &enc_rows {
            data.push(p.iter().zip(e).map(|(&a, &b)| f64::from(a.abs_diff(b))).sum());
        }
    }
    CostMatrix::new(n, data)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedPair {
    pub plain: String,
    pub encrypted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub samples: usize,
    pub scheme: Scheme,
    pub encrypted_signature_mode: SignatureMode,
    pub pairs: Vec<MatchedPair>,
    pub total_cost: f64,
    /// Fraction of plain samples matched to their own encryption, when the
    /// ground truth is known.
    pub accuracy: Option<f64>,
    pub correct: Option<usize>,
    pub no_collision_signal: bool,
    /// Number of distinct sorted-row signatures on the plain side; recovery
    /// can only be exact when this equals `samples`.
    pub distinct_plain_signatures: usize,
}

/// One encrypted sample as the attacker sees it, plus the source name used
/// only for scoring.
#[derive(Debug, Clone)]
pub struct EncryptedRecord {
    pub name: String,
    pub source: Option<String>,
    pub tensor: Tensor,
}

/// Runs the matching attack on in-memory samples.
///
/// The encrypted set is first put in a content-derived order (sorted by a
/// hash of its values), so its storage order cannot leak the correspondence.
pub fn match_samples(
    plain: &[(String, ImageTensor)],
    encrypted: &[EncryptedRecord],
    config: &EncoderConfig,
) -> Result<AttackReport> {
    let n = plain.len();
    if encrypted.len() != n {
        return Err(Error::Dataset(format!(
            "attack needs equal counts: {n} plain vs {} encrypted",
            encrypted.len()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let digests: Vec<u64> = encrypted.iter().map(|r| content_hash(&r.tensor.data)).collect();
    order.sort_by_key(|&j| (digests[j], j));

    let plain_sigs = plain
        .iter()
        .map(|(_, img)| plain_signature(img, config.patch_size))
        .collect::<Result<Vec<_>>>()?;
    let enc_sigs = order
        .iter()
        .map(|&j| encrypted_signature(&encrypted[j].tensor, config))
        .collect::<Result<Vec<_>>>()?;
    if let (Some(p), Some(e)) = (plain_sigs.first(), enc_sigs.first()) {
        if p.len() != e.len() {
            return Err(Error::Shape(format!(
                "plain images have {} patches, encrypted samples {}",
                p.len(),
                e.len()
            )));
        }
    }
    let mode = enc_sigs.first().map_or(SignatureMode::Positional, |s| s.mode);
    let plain_cm = pairwise_collision_matrix(&plain_sigs)?;
    let enc_cm = pairwise_collision_matrix(&enc_sigs)?;
    let cost = cost_matrix(&plain_cm, &enc_cm)?;
    let assignment = hungarian_assign(&cost);

    let pairs: Vec<MatchedPair> = assignment
        .mapping
        .iter()
        .enumerate()
        .map(|(i, &slot)| MatchedPair {
            plain: plain[i].0.clone(),
            encrypted: encrypted[order[slot]].name.clone(),
        })
        .collect();

    let known = encrypted.iter().all(|r| r.source.is_some());
    let correct = known.then(|| {
        assignment
            .mapping
            .iter()
            .enumerate()
            .filter(|&(i, &slot)| encrypted[order[slot]].source.as_deref() == Some(plain[i].0.as_str()))
            .count()
    });
    let mut signatures: Vec<Vec<u32>> = (0..n).map(|i| plain_cm.sorted_row(i)).collect();
    signatures.sort();
    signatures.dedup();

    Ok(AttackReport {
        samples: n,
        scheme: config.scheme,
        encrypted_signature_mode: mode,
        pairs,
        total_cost: assignment.cost,
        accuracy: correct.map(|c| if n == 0 { 0.0 } else { c as f64 / n as f64 }),
        correct,
        no_collision_signal: !plain_cm.has_off_diagonal_signal() || !enc_cm.has_off_diagonal_signal(),
        distinct_plain_signatures: signatures.len(),
    })
}

/// Reads the encrypted records listed in a manifest directory.
pub fn load_encrypted_records(enc_dir: &Path) -> Result<(DatasetManifest, Vec<EncryptedRecord>)> {
    let (manifest, tensors) = dataset_io::load_encrypted(enc_dir)?;
    let records = manifest
        .ordered_entries()
        .into_iter()
        .zip(tensors)
        .map(|(e, tensor)| EncryptedRecord {
            name: e.output.clone(),
            source: Some(e.source.clone()),
            tensor,
        })
        .collect();
    Ok((manifest, records))
}

/// Attack on directories: every image in `plain_dir` against the dataset in `enc_dir`.
pub fn match_plain_encrypted(plain_dir: &Path, enc_dir: &Path) -> Result<AttackReport> {
    let (manifest, records) = load_encrypted_records(enc_dir)?;
    let plain_paths = dataset_io::list_images(plain_dir)?;
    if plain_paths.len() != records.len() {
        return Err(Error::Dataset(format!(
            "attack needs equal counts: {} plain images vs {} encrypted samples",
            plain_paths.len(),
            records.len()
        )));
    }
    let plain = dataset_io::load_dataset(plain_dir, &manifest.config)?;
    match_samples(&plain, &records, &manifest.config)
}

fn noise_image(key: &MasterKey, label: DomainLabel, config: &EncoderConfig) -> ImageTensor {
    let mut stream = Keystream::new(key, &label);
    let n = config.channels * config.height * config.width;
    // multiples of 1/255 survive an 8-bit PNG round trip exactly
    let data = (0..n).map(|_| f32::from(stream.below(256) as u8) / 255.0).collect();
    ImageTensor::from_vec(config.channels, config.height, config.width, data).expect("sized above")
}

/// `n` keyed noise images; with overwhelming probability no two share a patch.
pub fn distinct_images(key: &MasterKey, config: &EncoderConfig, n: usize) -> Vec<ImageTensor> {
    (0..n)
        .map(|i| noise_image(key, DomainLabel::new(format!("attack.noise.{i}")), config))
        .collect()
}

/// `n` noise images chained by shared patches: images `k` and `k + 1` have
/// `k + 1` identical patches at identical indices, and no other pair shares
/// any. Every sample then has a distinct sorted collision row, so the
/// matching attack can recover the correspondence exactly.
///
/// Needs `n - 1 <= N / 2` where `N` is the patch count.
pub fn collision_chain_images(key: &MasterKey, config: &EncoderConfig, n: usize) -> Result<Vec<ImageTensor>> {
    config.validate()?;
    let patches = config.token_count();
    let half = patches / 2;
    if n >= 2 && n - 1 > half {
        return Err(Error::Config(format!(
            "a chain of {n} images needs at least {} patches per image, have {patches}",
            2 * (n - 1)
        )));
    }
    let mut images = distinct_images(key, config, n);
    let (gh, gw) = config.grid();
    let p = config.patch_size;
    debug_assert_eq!(gh * gw, patches);
    for k in 0..n.saturating_sub(1) {
        let start = if k % 2 == 0 { 0 } else { half };
        for idx in start..start + k + 1 {
            let (gy, gx) = (idx / gw, idx % gw);
            for c in 0..config.channels {
                for dy in 0..p {
                    for dx in 0..p {
                        let (y, x) = (gy * p + dy, gx * p + dx);
                        let v = images[k].get(c, y, x);
                        images[k + 1].set(c, y, x, v);
                    }
                }
            }
        }
    }
    Ok(images)
}
