mod key;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use neuracodec::attacks::{self, leakage};
use neuracodec::dataset_io::{self, EncryptOptions};
use neuracodec::encoder::ShuffleSource;
use neuracodec::probe::{self, ToySpec, UtilitySettings};
use neuracodec::{EncoderConfig, MasterKey, Scheme};

/// Keyed random-network image encryption and its desk-scale evaluation.
#[derive(Parser)]
#[command(name = "neuracodec", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a fresh 256-bit key as 64 hex characters.
    Keygen {
        /// Destination file.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing file.
        #[arg(long)]
        force: bool,
    },
    /// Encrypt every PNG/PPM image in a directory.
    Encrypt {
        #[command(flatten)]
        key: KeyArg,
        /// Encoder variant.
        #[arg(long, value_enum, default_value_t = SchemeArg::Neuracrypt)]
        scheme: SchemeArg,
        /// Directory of plain images (all the same size).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory for tensors and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Patch side length in pixels [default: 16].
        #[arg(long)]
        patch: Option<usize>,
        /// Number of hidden blocks [default: 4].
        #[arg(long)]
        depth: Option<usize>,
        /// Hidden token width [default: 768].
        #[arg(long)]
        hidden: Option<usize>,
        /// Token width of neuracrypt output [default: 768]; color output is fixed by the patch size.
        #[arg(long)]
        output_dim: Option<usize>,
        /// Also write plain/encrypted PNG pairs (color scheme only).
        #[arg(long)]
        png: bool,
        /// Worker threads; output bytes do not depend on this.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        jobs: u32,
        /// Record each applied patch permutation in the manifest.
        #[arg(long)]
        keep_perm: bool,
        /// Draw patch permutations from OS entropy instead of the key.
        #[arg(long)]
        nondeterministic_shuffle: bool,
    },
    /// Check that a key matches an encrypted dataset and that its tensors load.
    Verify {
        #[command(flatten)]
        key: KeyArg,
        /// Encrypted dataset directory (or its manifest.json).
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Ciphertext-only matching attack from shared-patch collisions.
    Attack {
        /// Directory of plain images.
        #[arg(long)]
        plain: PathBuf,
        /// Encrypted dataset directory.
        #[arg(long)]
        enc: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Correlation, collision and histogram measurements.
    Leakage {
        /// Directory of plain images.
        #[arg(long)]
        plain: PathBuf,
        /// Encrypted dataset directory.
        #[arg(long)]
        enc: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Linear-probe utility experiment on a keyed synthetic dataset.
    Probe {
        #[command(flatten)]
        key: KeyArg,
        /// Number of classes.
        #[arg(long, default_value_t = 3)]
        classes: usize,
        /// Training images per class.
        #[arg(long, default_value_t = 100)]
        train_per_class: usize,
        /// Test images per class.
        #[arg(long, default_value_t = 50)]
        test_per_class: usize,
        /// Image side length.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Patch side length.
        #[arg(long, default_value_t = 8)]
        patch: usize,
        /// Hidden token width.
        #[arg(long, default_value_t = 192)]
        hidden: usize,
        /// Number of hidden blocks.
        #[arg(long, default_value_t = 4)]
        depth: usize,
        /// Gradient-descent epochs.
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        /// Gradient-descent step size.
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Worker threads for encryption.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        jobs: u32,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic image set as PNG files.
    Toy {
        #[command(flatten)]
        key: KeyArg,
        /// What to generate.
        #[arg(long, value_enum)]
        kind: ToyKind,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of images (per class for `classes`).
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Image side length.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Patch side length used to place shared patches.
        #[arg(long, default_value_t = 8)]
        patch: usize,
    },
}

#[derive(clap::Args)]
struct KeyArg {
    /// Key file (64 hex chars); falls back to NEURACODEC_KEY (hex or path).
    #[arg(long)]
    key: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Neuracrypt,
    Color,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Neuracrypt => Scheme::NeuraCrypt,
            SchemeArg::Color => Scheme::Color,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ToyKind {
    /// Noise images chained by shared patches (attack recovers them).
    Chain,
    /// Independent noise images (no shared patches).
    Noise,
    /// Labelled rectangles for the utility probe; writes labels.csv.
    Classes,
}

pub enum Failure {
    Data(String),
    Internal(String),
}

impl From<neuracodec::Error> for Failure {
    fn from(e: neuracodec::Error) -> Self {
        match e {
            neuracodec::Error::Entropy(_) => Failure::Internal(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Keygen { out, force } => keygen(&out, force),
        Command::Encrypt {
            key,
            scheme,
            input,
            out,
            patch,
            depth,
            hidden,
            output_dim,
            png,
            jobs,
            keep_perm,
            nondeterministic_shuffle,
        } => {
            let key = key::resolve(key.key.as_deref())?;
            let first = dataset_io::list_images(&input)?
                .into_iter()
                .next()
                .ok_or_else(|| Failure::Data(format!("no PNG/PPM images in {}", input.display())))?;
            let [c, h, w] = dataset_io::load_image(&first)?.dims();
            let mut config = EncoderConfig::new(scheme.into()).with_geometry(c, h, w);
            if let Some(p) = patch {
                config = config.with_patch_size(p);
            }
            if let Some(d) = depth {
                config.depth = d;
            }
            if let Some(hw) = hidden {
                config.hidden_width = hw;
            }
            if let Some(d) = output_dim {
                config.output_dim = d;
            }
            let options = EncryptOptions {
                png,
                jobs: jobs as usize,
                keep_permutation: keep_perm,
                shuffle_source: if nondeterministic_shuffle {
                    ShuffleSource::Entropy
                } else {
                    ShuffleSource::Keyed
                },
            };
            let manifest = dataset_io::encrypt_dataset(&input, &key, &config, &out, &options)?;
            eprintln!(
                "encrypted {} images ({}, {}x{}x{}, patch {})",
                manifest.entries.len(),
                config.scheme,
                c,
                h,
                w,
                config.patch_size
            );
            println!("{}", out.join(dataset_io::MANIFEST_NAME).display());
            Ok(())
        }
        Command::Verify { key, manifest } => {
            let key = key::resolve(key.key.as_deref())?;
            let dir = if manifest.is_file() {
                manifest.parent().map(Path::to_path_buf).unwrap_or_default()
            } else {
                manifest
            };
            let (m, tensors) = dataset_io::load_encrypted(&dir)?;
            if !m.matches_key(&key) {
                return Err(Failure::Data(format!(
                    "key fingerprint {} does not match manifest {}",
                    key.fingerprint(),
                    m.key_fingerprint
                )));
            }
            emit(
                &serde_json::json!({
                    "key_matches": true,
                    "scheme": m.scheme,
                    "samples": tensors.len(),
                    "key_fingerprint": m.key_fingerprint,
                }),
                None,
            )
        }
        Command::Attack { plain, enc, out } => emit(&attacks::match_plain_encrypted(&plain, &enc)?, out.as_deref()),
        Command::Leakage { plain, enc, out } => emit(&leakage::leakage_report(&plain, &enc)?, out.as_deref()),
        Command::Probe {
            key,
            classes,
            train_per_class,
            test_per_class,
            size,
            patch,
            hidden,
            depth,
            epochs,
            lr,
            jobs,
            out,
        } => {
            let key = key::resolve(key.key.as_deref())?;
            let settings = UtilitySettings {
                classes,
                train_per_class,
                test_per_class,
                height: size,
                width: size,
                patch_size: patch,
                hidden_width: hidden,
                depth,
                epochs,
                learning_rate: lr,
                jobs: jobs as usize,
                ..UtilitySettings::default()
            };
            settings.encoder_config(Scheme::NeuraCrypt).validate()?;
            emit(&probe::utility_experiment(&key, &settings)?, out.as_deref())
        }
        Command::Toy {
            key,
            kind,
            out,
            count,
            size,
            patch,
        } => {
            let key = key::resolve(key.key.as_deref())?;
            toy(&key, kind, &out, count, size, patch)
        }
    }
}

fn keygen(out: &Path, force: bool) -> CmdResult {
    if out.exists() && !force {
        return Err(Failure::Data(format!(
            "{} already exists (use --force to overwrite)",
            out.display()
        )));
    }
    let key = MasterKey::generate()?;
    key::write_key_file(out, &key).map_err(|e| Failure::Data(format!("writing {}: {e}", out.display())))?;
    eprintln!("key fingerprint {}", key.fingerprint());
    println!("{}", out.display());
    Ok(())
}

fn toy(key: &MasterKey, kind: ToyKind, out: &Path, count: usize, size: usize, patch: usize) -> CmdResult {
    let config = EncoderConfig::toy(Scheme::Color)
        .with_geometry(3, size, size)
        .with_patch_size(patch);
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Failure::Data(format!("creating {}: {e}", out.display())))?;
    let (images, labels): (Vec<_>, Option<Vec<usize>>) = match kind {
        ToyKind::Chain => (attacks::collision_chain_images(key, &config, count)?, None),
        ToyKind::Noise => (attacks::distinct_images(key, &config, count), None),
        ToyKind::Classes => {
            let spec = ToySpec {
                height: size,
                width: size,
                ..ToySpec::new(3, count)
            };
            let (imgs, labels) = probe::generate_toy_dataset(key, &spec)?.into_iter().unzip();
            (imgs, Some(labels))
        }
    };
    let width = images.len().max(1).to_string().len();
    let mut rows = Vec::new();
    for (i, img) in images.iter().enumerate() {
        let name = format!("img_{i:0width$}.png");
        dataset_io::export_png(img, 0.0, 1.0, &out.join(&name))?;
        if let Some(labels) = &labels {
            rows.push((name, labels[i].to_string()));
        }
    }
    if labels.is_some() {
        dataset_io::write_labels(out, &rows)?;
    }
    println!("{}", out.display());
    Ok(())
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Internal(e.to_string()))?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Data(format!("writing {}: {e}", path.display()))),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure::Internal(e.to_string())),
    }
}
