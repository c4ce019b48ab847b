//! Random-network image encoders.
//!
//! Both schemes share one per-patch network:
//!
//! ```text
//! x (C·p² pixels of one patch)
//!   h = relu(W0 x + b0)                 patch embedding
//!   h = relu(Wb h + bb), b = 1..=B      1x1 convolution blocks
//!   h = h + P[patch index]              random position embedding
//!   y = Wf h + bf                       linear projection
//! ```
//!
//! Patches never mix, so a change inside one patch only moves that patch's
//! output. `neuracrypt` emits the token matrix with rows permuted per image.
//! `color` keeps patch order and folds each `C·p²` output row back into its
//! `p × p` region, so the ciphertext is again a `C × H × W` image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keying::{DomainLabel, Keystream, MasterKey};
use crate::tensor::{ImageTensor, Matrix, TokenMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[serde(rename = "neuracrypt")]
    NeuraCrypt,
    Color,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::NeuraCrypt => "neuracrypt",
            Scheme::Color => "color",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neuracrypt" => Ok(Scheme::NeuraCrypt),
            "color" => Ok(Scheme::Color),
            other => Err(Error::Config(format!(
                "unknown scheme {other:?} (expected neuracrypt or color)"
            ))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Everything that fixes the encoder's weight shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub scheme: Scheme,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub output_dim: usize,
    pub patch_shuffle: bool,
}

impl EncoderConfig {
    /// 3×224×224 input, 16-pixel patches, width 768, depth 4.
    pub fn new(scheme: Scheme) -> Self {
        EncoderConfig {
            scheme,
            channels: 3,
            height: 224,
            width: 224,
            patch_size: 16,
            hidden_width: 768,
            depth: 4,
            output_dim: 768,
            patch_shuffle: scheme == Scheme::NeuraCrypt,
        }
    }

    /// Desk-scale geometry: 3×32×32, 8-pixel patches, width 192, depth 4.
    pub fn toy(scheme: Scheme) -> Self {
        EncoderConfig {
            height: 32,
            width: 32,
            patch_size: 8,
            hidden_width: 192,
            output_dim: 192,
            ..Self::new(scheme)
        }
    }

    /// Same encoder settings over a different image geometry. For `color`
    /// the output width follows the patch size.
    pub fn with_geometry(mut self, channels: usize, height: usize, width: usize) -> Self {
        self.channels = channels;
        self.height = height;
        self.width = width;
        self.sync_output_dim();
        self
    }

    pub fn with_patch_size(mut self, patch_size: usize) -> Self {
        self.patch_size = patch_size;
        self.sync_output_dim();
        self
    }

    fn sync_output_dim(&mut self) {
        if self.scheme == Scheme::Color {
            self.output_dim = self.patch_dim();
        }
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch_size, self.width / self.patch_size)
    }

    pub fn token_count(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn geometry(&self) -> PatchGeometry {
        PatchGeometry {
            channels: self.channels,
            height: self.height,
            width: self.width,
            patch_size: self.patch_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad(format!(
                "image geometry {}x{}x{} must be non-empty",
                self.channels, self.height, self.width
            ));
        }
        if self.patch_size == 0 {
            return bad("patch size must be at least 1".into());
        }
        if !self.height.is_multiple_of(self.patch_size) || !self.width.is_multiple_of(self.patch_size) {
            return bad(format!(
                "patch size {} must divide height {} and width {}",
                self.patch_size, self.height, self.width
            ));
        }
        if self.hidden_width == 0 || self.output_dim == 0 {
            return bad("hidden width and output dim must be at least 1".into());
        }
        if self.scheme == Scheme::Color {
            if self.output_dim != self.patch_dim() {
                return bad(format!(
                    "color scheme needs output dim = channels*patch^2 = {}, got {}",
                    self.patch_dim(),
                    self.output_dim
                ));
            }
            if self.patch_shuffle {
                return bad("color scheme does not shuffle patches".into());
            }
        }
        Ok(())
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::new(Scheme::NeuraCrypt)
    }
}

/// Image geometry plus patch size; enough to cut an image into patches and back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
}

impl PatchGeometry {
    fn check(&self) -> Result<(usize, usize)> {
        let p = self.patch_size;
        if p == 0 || !self.height.is_multiple_of(p) || !self.width.is_multiple_of(p) {
            return Err(Error::Shape(format!(
                "patch size {p} must divide {}x{}",
                self.height, self.width
            )));
        }
        Ok((self.height / p, self.width / p))
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }
}

/// One row per patch in row-major grid order; each row holds the patch
/// channel-major, then row-major within the patch.
pub fn extract_patches(img: &ImageTensor, patch_size: usize) -> Result<Matrix> {
    let geom = PatchGeometry {
        channels: img.channels(),
        height: img.height(),
        width: img.width(),
        patch_size,
    };
    let (gh, gw) = geom.check()?;
    let p = patch_size;
    let mut out = Matrix::zeros(gh * gw, geom.patch_dim());
    for gy in 0..gh {
        for gx in 0..gw {
            let row = out.row_mut(gy * gw + gx);
            let mut k = 0;
            for c in 0..geom.channels {
                for dy in 0..p {
                    for dx in 0..p {
                        row[k] = img.get(c, gy * p + dy, gx * p + dx);
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Exact inverse of [`extract_patches`].
pub fn reassemble_patches(rows: &Matrix, geom: PatchGeometry) -> Result<ImageTensor> {
    let (gh, gw) = geom.check()?;
    if rows.shape() != (gh * gw, geom.patch_dim()) {
        return Err(Error::Shape(format!(
            "{}x{} patch matrix does not fit {}x{}x{} with patch {} (needs {}x{})",
            rows.rows(),
            rows.cols(),
            geom.channels,
            geom.height,
            geom.width,
            geom.patch_size,
            gh * gw,
            geom.patch_dim()
        )));
    }
    let p = geom.patch_size;
    let mut img = ImageTensor::zeros(geom.channels, geom.height, geom.width);
    for gy in 0..gh {
        for gx in 0..gw {
            let mut vals = rows.row(gy * gw + gx).iter();
            for c in 0..geom.channels {
                for dy in 0..p {
                    for dx in 0..p {
                        img.set(c, gy * p + dy, gx * p + dx, *vals.next().unwrap());
                    }
                }
            }
        }
    }
    Ok(img)
}

/// Affine layer `y = W x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f32>,
}

impl Linear {
    fn keyed(key: &MasterKey, label: DomainLabel, rows: usize, cols: usize, std: f64) -> Self {
        let values = Keystream::new(key, &label).gaussian_f32(rows * cols, 0.0, std);
        Linear {
            weight: Matrix::from_vec(rows, cols, values).expect("sized above"),
            bias: vec![0.0; rows],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Linear {
            weight: Matrix::zeros(rows, cols),
            bias: vec![0.0; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        Linear {
            weight: Matrix::identity(n),
            bias: vec![0.0; n],
        }
    }

    fn check(&self, name: &str, rows: usize, cols: usize) -> Result<()> {
        if self.weight.shape() != (rows, cols) || self.bias.len() != rows {
            return Err(Error::Shape(format!(
                "{name}: expected {rows}x{cols} weight and {rows} bias, got {}x{} and {}",
                self.weight.rows(),
                self.weight.cols(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

/// All parameters of the random network for one config. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    config: EncoderConfig,
    patch_embed: Linear,
    blocks: Vec<Linear>,
    pos_embed: Matrix,
    projection: Linear,
}

impl EncoderWeights {
    /// Derives every parameter from `key`. Groups are drawn in this order,
    /// each from its own label: `patch_embed.w`, `block.1.w` .. `block.B.w`,
    /// `pos_embed`, `proj.w`. Biases are zero.
    ///
    /// Scales: `W0 ~ N(0, 2/(C·p²))`, `Wb ~ N(0, 2/d_h)`, `P ~ N(0, 1)`,
    /// `Wf ~ N(0, 1/d_h)`.
    pub fn derive(key: &MasterKey, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let d_in = config.patch_dim();
        let d_h = config.hidden_width;
        let patch_embed = Linear::keyed(key, DomainLabel::patch_embed(), d_h, d_in, (2.0 / d_in as f64).sqrt());
        let blocks = (1..=config.depth)
            .map(|b| Linear::keyed(key, DomainLabel::block(b), d_h, d_h, (2.0 / d_h as f64).sqrt()))
            .collect();
        let n = config.token_count();
        let pos_embed = Matrix::from_vec(
            n,
            d_h,
            Keystream::new(key, &DomainLabel::pos_embed()).gaussian_f32(n * d_h, 0.0, 1.0),
        )?;
        let projection = Linear::keyed(
            key,
            DomainLabel::projection(),
            config.output_dim,
            d_h,
            (1.0 / d_h as f64).sqrt(),
        );
        Ok(EncoderWeights {
            config: config.clone(),
            patch_embed,
            blocks,
            pos_embed,
            projection,
        })
    }

    /// Builds weights from explicit parts, bypassing the key. Test hook for
    /// identity and zero configurations.
    #[doc(hidden)]
    pub fn from_parts(
        config: EncoderConfig,
        patch_embed: Linear,
        blocks: Vec<Linear>,
        pos_embed: Matrix,
        projection: Linear,
    ) -> Result<Self> {
        config.validate()?;
        let d_h = config.hidden_width;
        patch_embed.check("patch embedding", d_h, config.patch_dim())?;
        if blocks.len() != config.depth {
            return Err(Error::Shape(format!(
                "config depth {} but {} blocks given",
                config.depth,
                blocks.len()
            )));
        }
        for (i, block) in blocks.iter().enumerate() {
            block.check(&format!("block {}", i + 1), d_h, d_h)?;
        }
        if pos_embed.shape() != (config.token_count(), d_h) {
            return Err(Error::Shape(format!(
                "position embedding must be {}x{d_h}",
                config.token_count()
            )));
        }
        projection.check("projection", config.output_dim, d_h)?;
        Ok(EncoderWeights {
            config,
            patch_embed,
            blocks,
            pos_embed,
            projection,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn patch_embed(&self) -> &Linear {
        &self.patch_embed
    }

    pub fn blocks(&self) -> &[Linear] {
        &self.blocks
    }

    pub fn pos_embed(&self) -> &Matrix {
        &self.pos_embed
    }

    pub fn projection(&self) -> &Linear {
        &self.projection
    }
}

fn relu_in_place(v: &mut [f32]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Runs the per-patch network on every row of `patches`.
pub fn forward_tokens(patches: &Matrix, weights: &EncoderWeights) -> Result<TokenMatrix> {
    let cfg = &weights.config;
    if patches.shape() != (cfg.token_count(), cfg.patch_dim()) {
        return Err(Error::Shape(format!(
            "expected {}x{} patches, got {}x{}",
            cfg.token_count(),
            cfg.patch_dim(),
            patches.rows(),
            patches.cols()
        )));
    }
    let d_h = cfg.hidden_width;
    let mut out = Matrix::zeros(patches.rows(), cfg.output_dim);
    let mut h = vec![0.0f32; d_h];
    let mut tmp = vec![0.0f32; d_h];
    for (i, x) in patches.iter_rows().enumerate() {
        let embed = &weights.patch_embed;
        embed.weight.affine_into(x, &embed.bias, &mut h);
        relu_in_place(&mut h);
        for block in &weights.blocks {
            block.weight.affine_into(&h, &block.bias, &mut tmp);
            relu_in_place(&mut tmp);
            std::mem::swap(&mut h, &mut tmp);
        }
        for (hv, pv) in h.iter_mut().zip(weights.pos_embed.row(i)) {
            *hv += pv;
        }
        let proj = &weights.projection;
        proj.weight.affine_into(&h, &proj.bias, out.row_mut(i));
    }
    Ok(out)
}

/// `out[i] = tokens[perm[i]]`.
pub fn shuffle_patches(tokens: &TokenMatrix, perm: &[usize]) -> Result<TokenMatrix> {
    if perm.len() != tokens.rows() {
        return Err(Error::Shape(format!(
            "permutation of length {} for {} tokens",
            perm.len(),
            tokens.rows()
        )));
    }
    if !crate::keying::is_permutation(perm) {
        return Err(Error::Shape("not a permutation".into()));
    }
    let mut out = Matrix::zeros(tokens.rows(), tokens.cols());
    for (i, &src) in perm.iter().enumerate() {
        out.row_mut(i).copy_from_slice(tokens.row(src));
    }
    Ok(out)
}

/// Where per-image patch permutations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShuffleSource {
    /// `patch_perm.<image_index>` stream of the master key; reproducible.
    #[default]
    Keyed,
    /// Fresh OS entropy per image; not reproducible, even with the key.
    Entropy,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncryptedSample {
    Tokens {
        tokens: TokenMatrix,
        /// Applied permutation, kept only on request.
        permutation: Option<Vec<usize>>,
    },
    Image(ImageTensor),
}

impl EncryptedSample {
    pub fn scheme(&self) -> Scheme {
        match self {
            EncryptedSample::Tokens { .. } => Scheme::NeuraCrypt,
            EncryptedSample::Image(_) => Scheme::Color,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            EncryptedSample::Tokens { tokens, .. } => vec![tokens.rows(), tokens.cols()],
            EncryptedSample::Image(img) => img.dims().to_vec(),
        }
    }

    pub fn values(&self) -> &[f32] {
        match self {
            EncryptedSample::Tokens { tokens, .. } => tokens.as_slice(),
            EncryptedSample::Image(img) => img.as_slice(),
        }
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        match self {
            EncryptedSample::Tokens { permutation, .. } => permutation.as_deref(),
            EncryptedSample::Image(_) => None,
        }
    }
}

/// A keyed encoder, ready to encrypt any number of images.
#[derive(Debug, Clone)]
pub struct Encoder {
    key: MasterKey,
    weights: EncoderWeights,
    shuffle_source: ShuffleSource,
    keep_permutation: bool,
}

impl Encoder {
    pub fn new(key: &MasterKey, config: &EncoderConfig) -> Result<Self> {
        Ok(Encoder {
            key: key.clone(),
            weights: EncoderWeights::derive(key, config)?,
            shuffle_source: ShuffleSource::Keyed,
            keep_permutation: false,
        })
    }

    /// Encoder over explicit weights; patch permutations still come from `key`.
    #[doc(hidden)]
    pub fn with_weights(key: &MasterKey, weights: EncoderWeights) -> Self {
        Encoder {
            key: key.clone(),
            weights,
            shuffle_source: ShuffleSource::Keyed,
            keep_permutation: false,
        }
    }

    pub fn shuffle_source(mut self, source: ShuffleSource) -> Self {
        self.shuffle_source = source;
        self
    }

    pub fn keep_permutation(mut self, keep: bool) -> Self {
        self.keep_permutation = keep;
        self
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.weights.config
    }

    pub fn weights(&self) -> &EncoderWeights {
        &self.weights
    }

    /// The permutation applied to image `image_index` under the keyed source.
    pub fn keyed_permutation(&self, image_index: usize) -> Vec<usize> {
        Keystream::new(&self.key, &DomainLabel::patch_perm(image_index)).permutation(self.config().token_count())
    }

    /// Plain samples must lie in `[0, 1]`; out-of-range input is refused, not clamped.
    pub fn encrypt(&self, img: &ImageTensor, image_index: usize) -> Result<EncryptedSample> {
        let cfg = self.config();
        if img.dims() != [cfg.channels, cfg.height, cfg.width] {
            let [c, h, w] = img.dims();
            return Err(Error::Shape(format!(
                "image is {c}x{h}x{w}, encoder expects {}x{}x{}",
                cfg.channels, cfg.height, cfg.width
            )));
        }
        if let Some((index, &value)) = img
            .as_slice()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InputRange { index, value });
        }
        let tokens = forward_tokens(&extract_patches(img, cfg.patch_size)?, &self.weights)?;
        match cfg.scheme {
            Scheme::Color => Ok(EncryptedSample::Image(reassemble_patches(&tokens, cfg.geometry())?)),
            Scheme::NeuraCrypt if !cfg.patch_shuffle => Ok(EncryptedSample::Tokens {
                tokens,
                permutation: None,
            }),
            Scheme::NeuraCrypt => {
                let perm = match self.shuffle_source {
                    ShuffleSource::Keyed => self.keyed_permutation(image_index),
                    ShuffleSource::Entropy => {
                        Keystream::from_entropy(&DomainLabel::patch_perm(image_index))?.permutation(cfg.token_count())
                    }
                };
                let tokens = shuffle_patches(&tokens, &perm)?;
                Ok(EncryptedSample::Tokens {
                    tokens,
                    permutation: self.keep_permutation.then_some(perm),
                })
            }
        }
    }
}

/// One-shot convenience: derive weights and encrypt a single image.
pub fn encrypt(
    img: &ImageTensor,
    key: &MasterKey,
    config: &EncoderConfig,
    image_index: usize,
) -> Result<EncryptedSample> {
    Encoder::new(key, config)?.encrypt(img, image_index)
}
