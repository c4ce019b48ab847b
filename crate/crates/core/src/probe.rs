//! Linear-probe utility evaluation.
//!
//! A multinomial logistic regression trained by full-batch gradient descent
//! stands in for cloud-side classifier training: it measures how much
//! class-discriminative signal survives each encryption scheme on a small
//! synthetic dataset.

use serde::Serialize;

use crate::dataset_io::map_indexed;
use crate::encoder::{Encoder, EncoderConfig, Scheme};
use crate::error::{Error, Result};
use crate::keying::{DomainLabel, Keystream, MasterKey};
use crate::tensor::ImageTensor;

const PALETTE: [[f32; 3]; 6] = [
    [0.90, 0.20, 0.20],
    [0.20, 0.80, 0.30],
    [0.20, 0.30, 0.90],
    [0.90, 0.80, 0.20],
    [0.80, 0.30, 0.80],
    [0.20, 0.80, 0.80],
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToySpec {
    pub classes: usize,
    pub per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub noise_std: f64,
}

impl ToySpec {
    pub fn new(classes: usize, per_class: usize) -> Self {
        ToySpec {
            classes,
            per_class,
            channels: 3,
            height: 32,
            width: 32,
            noise_std: 0.05,
        }
    }
}

/// Keyed synthetic images: class `k` is an axis-aligned rectangle with a
/// class-specific colour and size range on a dark background, plus Gaussian
/// pixel noise clamped to `[0, 1]`. Samples are interleaved by class
/// (`index = i·K + k`), so every prefix of `m·K` samples is balanced.
pub fn generate_toy_dataset(key: &MasterKey, spec: &ToySpec) -> Result<Vec<(ImageTensor, usize)>> {
    if spec.classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {}", spec.classes)));
    }
    if spec.height < 4 || spec.width < 4 || spec.channels == 0 {
        return Err(Error::Config("toy images need at least 1x4x4 pixels".into()));
    }
    if spec.noise_std.is_nan() || spec.noise_std < 0.0 {
        return Err(Error::Config("noise std must be non-negative".into()));
    }
    let mut out = Vec::with_capacity(spec.classes * spec.per_class);
    for i in 0..spec.per_class {
        for k in 0..spec.classes {
            let mut stream = Keystream::new(key, &DomainLabel::new(format!("toy.{k}.{i}")));
            out.push((toy_image(&mut stream, spec, k), k));
        }
    }
    Ok(out)
}

fn class_color(k: usize, stream: &mut Keystream) -> [f32; 3] {
    let base = if k < PALETTE.len() {
        PALETTE[k]
    } else {
        // Deterministic per class, independent of the sample stream.
        let mut s = Keystream::new(
            &MasterKey::from_bytes([0; 32]),
            &DomainLabel::new(format!("toy.palette.{k}")),
        );
        [s.uniform() as f32, s.uniform() as f32, s.uniform() as f32]
    };
    base.map(|c| (c + (stream.uniform() as f32 - 0.5) * 0.2).clamp(0.0, 1.0))
}

fn toy_image(stream: &mut Keystream, spec: &ToySpec, k: usize) -> ImageTensor {
    let (h, w) = (spec.height, spec.width);
    let color = class_color(k, stream);
    let background = 0.15 * stream.uniform() as f32;
    // class k covers a fraction of each side centred on 0.3 + 0.45·k/(K−1)
    let centre = 0.3 + 0.45 * k as f64 / (spec.classes - 1) as f64;
    let frac_h = (centre + (stream.uniform() - 0.5) * 0.15).clamp(0.1, 1.0);
    let frac_w = (centre + (stream.uniform() - 0.5) * 0.15).clamp(0.1, 1.0);
    let rh = ((frac_h * h as f64).round() as usize).clamp(1, h);
    let rw = ((frac_w * w as f64).round() as usize).clamp(1, w);
    let y0 = stream.below((h - rh + 1) as u32) as usize;
    let x0 = stream.below((w - rw + 1) as u32) as usize;

    let mut img = ImageTensor::zeros(spec.channels, h, w);
    for c in 0..spec.channels {
        let fill = if spec.channels == 3 {
            color[c]
        } else {
            (color[0] + color[1] + color[2]) / 3.0
        };
        for y in 0..h {
            for x in 0..w {
                let inside = (y0..y0 + rh).contains(&y) && (x0..x0 + rw).contains(&x);
                img.set(c, y, x, if inside { fill } else { background });
            }
        }
    }
    if spec.noise_std > 0.0 {
        let noise = stream.gaussian_f32(img.as_slice().len(), 0.0, spec.noise_std);
        for (v, n) in img.as_mut_slice().iter_mut().zip(noise) {
            *v = (*v + n).clamp(0.0, 1.0);
        }
    }
    img
}

/// Feature vectors with class labels in `0..classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
}

impl ProbeDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Probe(format!(
                "{} feature vectors but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if let Some(first) = features.first() {
            if let Some(bad) = features.iter().position(|f| f.len() != first.len()) {
                return Err(Error::Probe(format!(
                    "feature vector {bad} has length {}, expected {}",
                    features[bad].len(),
                    first.len()
                )));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Probe(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(ProbeDataset {
            features,
            labels,
            classes,
        })
    }

    pub fn from_f32(features: Vec<Vec<f32>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let features = features
            .into_iter()
            .map(|f| f.into_iter().map(f64::from).collect())
            .collect();
        Self::new(features, labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        Self::new(self.features.clone(), labels, self.classes)
    }
}

/// Per-feature z-scoring fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &ProbeDataset) -> Self {
        let d = data.dim();
        let n = data.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for f in data.features() {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for f in data.features() {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 {
                    1.0 / sd
                } else {
                    0.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, data: &ProbeDataset) -> Result<ProbeDataset> {
        if data.dim() != self.mean.len() {
            return Err(Error::Probe(format!(
                "standardizer fitted on {} features, data has {}",
                self.mean.len(),
                data.dim()
            )));
        }
        let features = data
            .features()
            .iter()
            .map(|f| {
                f.iter()
                    .zip(&self.mean)
                    .zip(&self.scale)
                    .map(|((v, m), s)| (v - m) * s)
                    .collect()
            })
            .collect();
        ProbeDataset::new(features, data.labels.clone(), data.classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeModel {
    pub classes: usize,
    pub dim: usize,
    /// `classes × dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Mean cross-entropy before each epoch's update, then after the last.
    pub loss_history: Vec<f64>,
}

impl ProbeModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        ProbeModel {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            loss_history: Vec::new(),
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let w = &self.weights[k * self.dim..(k + 1) * self.dim];
                self.bias[k] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Arg-max class; ties go to the smaller index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (k, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = k;
            }
        }
        best
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Mean softmax cross-entropy over `data` and its exact gradient:
/// `dW = mean((p − y) xᵀ)`, `db = mean(p − y)`.
pub fn loss_and_gradient(model: &ProbeModel, data: &ProbeDataset) -> (f64, Gradient) {
    let (k, d) = (model.classes, model.dim);
    let mut grad = Gradient {
        weights: vec![0.0; k * d],
        bias: vec![0.0; k],
    };
    let n = data.len().max(1) as f64;
    let mut loss = 0.0;
    for (x, &y) in data.features().iter().zip(data.labels()) {
        let p = softmax(&model.logits(x));
        loss -= p[y].max(f64::MIN_POSITIVE).ln();
        for (c, &pc) in p.iter().enumerate() {
            let err = pc - if c == y { 1.0 } else { 0.0 };
            grad.bias[c] += err;
            for (g, xv) in grad.weights[c * d..(c + 1) * d].iter_mut().zip(x) {
                *g += err * xv;
            }
        }
    }
    grad.weights.iter_mut().for_each(|g| *g /= n);
    grad.bias.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

/// Full-batch gradient descent from zero initialisation.
pub fn train_probe(train: &ProbeDataset, epochs: usize, lr: f64) -> Result<ProbeModel> {
    if epochs == 0 {
        return Err(Error::Probe("epochs must be at least 1".into()));
    }
    if !lr.is_finite() || lr <= 0.0 {
        return Err(Error::Probe(format!("learning rate must be positive, got {lr}")));
    }
    let mut present = vec![false; train.classes()];
    train.labels().iter().for_each(|&l| present[l] = true);
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::Probe("training set needs at least two classes".into()));
    }
    if let Some(missing) = present.iter().position(|&p| !p) {
        return Err(Error::Probe(format!("class {missing} has no training samples")));
    }
    let mut model = ProbeModel::zeros(train.classes(), train.dim());
    for _ in 0..epochs {
        let (loss, grad) = loss_and_gradient(&model, train);
        model.loss_history.push(loss);
        for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }
    let (final_loss, _) = loss_and_gradient(&model, train);
    model.loss_history.push(final_loss);
    if !final_loss.is_finite() || model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Probe("training diverged (non-finite parameters)".into()));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate(model: &ProbeModel, test: &ProbeDataset) -> Result<Evaluation> {
    if test.dim() != model.dim && !test.is_empty() {
        return Err(Error::Probe(format!(
            "model expects {} features, data has {}",
            model.dim,
            test.dim()
        )));
    }
    let mut confusion = vec![vec![0usize; model.classes]; model.classes];
    let mut correct = 0;
    for (x, &y) in test.features().iter().zip(test.labels()) {
        let pred = model.predict(x);
        if y < model.classes {
            confusion[y][pred] += 1;
        }
        correct += usize::from(pred == y);
    }
    let accuracy = if test.is_empty() {
        0.0
    } else {
        correct as f64 / test.len() as f64
    };
    Ok(Evaluation { accuracy, confusion })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilitySettings {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub hidden_width: usize,
    pub depth: usize,
    pub noise_std: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(skip)]
    pub jobs: usize,
}

impl Default for UtilitySettings {
    fn default() -> Self {
        UtilitySettings {
            classes: 3,
            train_per_class: 100,
            test_per_class: 50,
            channels: 3,
            height: 32,
            width: 32,
            patch_size: 8,
            hidden_width: 192,
            depth: 4,
            noise_std: 0.05,
            epochs: 100,
            learning_rate: 0.05,
            jobs: 1,
        }
    }
}

impl UtilitySettings {
    pub fn encoder_config(&self, scheme: Scheme) -> EncoderConfig {
        let mut cfg = EncoderConfig::toy(scheme)
            .with_geometry(self.channels, self.height, self.width)
            .with_patch_size(self.patch_size);
        cfg.hidden_width = self.hidden_width;
        cfg.depth = self.depth;
        if scheme == Scheme::NeuraCrypt {
            cfg.output_dim = self.hidden_width;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityReport {
    pub plain_acc: f64,
    pub color_acc: f64,
    pub neuracrypt_acc: f64,
    pub shuffled_label_acc: f64,
    pub chance: f64,
    pub key_fingerprint: String,
    pub settings: UtilitySettings,
}

fn split(samples: &[(Vec<f32>, usize)], settings: &UtilitySettings) -> Result<(ProbeDataset, ProbeDataset)> {
    let cut = settings.train_per_class * settings.classes;
    let to_dataset = |part: &[(Vec<f32>, usize)]| {
        ProbeDataset::from_f32(
            part.iter().map(|(f, _)| f.clone()).collect(),
            part.iter().map(|(_, l)| *l).collect(),
            settings.classes,
        )
    };
    Ok((to_dataset(&samples[..cut])?, to_dataset(&samples[cut..])?))
}

fn fit_and_score(train: &ProbeDataset, test: &ProbeDataset, settings: &UtilitySettings) -> Result<f64> {
    let scaler = Standardizer::fit(train);
    let model = train_probe(&scaler.apply(train)?, settings.epochs, settings.learning_rate)?;
    Ok(evaluate(&model, &scaler.apply(test)?)?.accuracy)
}

/// Generate → encrypt under each scheme → train → evaluate, plus a control
/// trained on plain features with keyed-shuffled labels.
///
/// Features are z-scored with statistics of the training split before
/// training.
pub fn utility_experiment(key: &MasterKey, settings: &UtilitySettings) -> Result<UtilityReport> {
    let spec = ToySpec {
        classes: settings.classes,
        per_class: settings.train_per_class + settings.test_per_class,
        channels: settings.channels,
        height: settings.height,
        width: settings.width,
        noise_std: settings.noise_std,
    };
    if settings.train_per_class == 0 || settings.test_per_class == 0 {
        return Err(Error::Config("train and test splits must be non-empty".into()));
    }
    let images = generate_toy_dataset(key, &spec)?;

    let plain: Vec<(Vec<f32>, usize)> = images.iter().map(|(img, l)| (img.as_slice().to_vec(), *l)).collect();
    let encrypt_all = |scheme: Scheme| -> Result<Vec<(Vec<f32>, usize)>> {
        let encoder = Encoder::new(key, &settings.encoder_config(scheme))?;
        map_indexed(&images, settings.jobs, |i, (img, l)| {
            encoder.encrypt(img, i).map(|s| (s.values().to_vec(), *l))
        })
        .into_iter()
        .collect()
    };

    let (plain_train, plain_test) = split(&plain, settings)?;
    let plain_acc = fit_and_score(&plain_train, &plain_test, settings)?;

    let (train, test) = split(&encrypt_all(Scheme::Color)?, settings)?;
    let color_acc = fit_and_score(&train, &test, settings)?;

    let (train, test) = split(&encrypt_all(Scheme::NeuraCrypt)?, settings)?;
    let neuracrypt_acc = fit_and_score(&train, &test, settings)?;

    let perm = Keystream::new(key, &DomainLabel::new("probe.label_shuffle")).permutation(plain_train.len());
    let shuffled: Vec<usize> = perm.iter().map(|&j| plain_train.labels()[j]).collect();
    let shuffled_label_acc = fit_and_score(&plain_train.with_labels(shuffled)?, &plain_test, settings)?;

    Ok(UtilityReport {
        plain_acc,
        color_acc,
        neuracrypt_acc,
        shuffled_label_acc,
        chance: 1.0 / settings.classes as f64,
        key_fingerprint: key.fingerprint(),
        settings: settings.clone(),
    })
}
