use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_neuracodec");
const KEY_HEX: &str = "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("NEURACODEC_KEY")
        .output()
        .expect("spawn neuracodec")
}

fn run_env(args: &[&str], key: &str) -> Output {
    Command::new(BIN)
        .args(args)
        .env("NEURACODEC_KEY", key)
        .output()
        .expect("spawn neuracodec")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn key_file(dir: &Path) -> String {
    let path = dir.join("key.hex");
    fs::write(&path, format!("{KEY_HEX}\n")).unwrap();
    path.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn keygen_writes_distinct_parseable_keys() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.key");
    let b = dir.path().join("b.key");
    assert_eq!(code(&run(&["keygen", "--out", s(&a)])), 0);
    assert_eq!(code(&run(&["keygen", "--out", s(&b)])), 0);
    let ka = fs::read_to_string(&a).unwrap();
    let kb = fs::read_to_string(&b).unwrap();
    assert_ne!(ka, kb);
    assert!(neuracodec::MasterKey::parse_key_file(&ka).is_ok());
    assert_eq!(ka.trim_end().len(), 64);
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        assert_eq!(fs::metadata(&a).unwrap().permissions().mode() & 0o777, 0o600);
    }
}

#[test]
fn keygen_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.key");
    fs::write(&a, "keep").unwrap();
    assert_eq!(code(&run(&["keygen", "--out", s(&a)])), 2);
    assert_eq!(fs::read_to_string(&a).unwrap(), "keep");
    assert_eq!(code(&run(&["keygen", "--out", s(&a), "--force"])), 0);
    assert_ne!(fs::read_to_string(&a).unwrap(), "keep");
}

#[test]
fn keygen_unwritable_path_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("missing").join("k.key");
    assert_eq!(code(&run(&["keygen", "--out", s(&bad)])), 2);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["--bogus"])), 1);
    assert_eq!(code(&run(&["encrypt", "--nope"])), 1);
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn every_flag_is_documented() {
    for (sub, flags) in [
        ("keygen", &["--out", "--force"][..]),
        (
            "encrypt",
            &[
                "--key",
                "--scheme",
                "--in",
                "--out",
                "--patch",
                "--depth",
                "--hidden",
                "--output-dim",
                "--png",
                "--jobs",
                "--keep-perm",
                "--nondeterministic-shuffle",
            ][..],
        ),
        ("verify", &["--key", "--manifest"][..]),
        ("attack", &["--plain", "--enc", "--out"][..]),
        ("leakage", &["--plain", "--enc", "--out"][..]),
        ("probe", &["--key", "--classes", "--epochs", "--lr", "--out"][..]),
        ("toy", &["--key", "--kind", "--out", "--count"][..]),
    ] {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0);
        let help = String::from_utf8_lossy(&out.stdout);
        for flag in flags {
            let lines: Vec<&str> = help.lines().collect();
            let at = lines
                .iter()
                .position(|l| {
                    let t = l.trim_start();
                    l.starts_with(' ') && (t.starts_with(&format!("{flag} ")) || t.contains(&format!(", {flag} ")))
                })
                .unwrap_or_else(|| panic!("{sub} --help lacks {flag}"));
            let line = lines[at];
            // clap moves long descriptions onto the next line
            let rest = line.split(flag).nth(1).unwrap_or("");
            let next = lines.get(at + 1).map_or("", |l| l.trim());
            let described = rest.split_whitespace().count() > 1 || (!next.is_empty() && !next.starts_with('-'));
            assert!(described, "{sub} {flag} has no description: {line:?}");
        }
    }
}

fn make_toy(dir: &Path, kind: &str, count: &str) -> std::path::PathBuf {
    let out = dir.join(kind);
    let r = run_env(&["toy", "--kind", kind, "--out", s(&out), "--count", count], KEY_HEX);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    out
}

#[test]
fn encrypt_defaults_on_224_images() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain");
    fs::create_dir(&plain).unwrap();
    let img = image::RgbImage::from_fn(224, 224, |x, y| image::Rgb([x as u8, y as u8, 7]));
    img.save(plain.join("a.png")).unwrap();
    let key = key_file(dir.path());
    let enc = dir.path().join("enc");
    let out = run(&["encrypt", "--key", &key, "--in", s(&plain), "--out", s(&enc)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("manifest.json"));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(enc.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["scheme"], "neuracrypt");
    assert_eq!(manifest["config"]["patch_size"], 16);
    let t = neuracodec::dataset_io::load_tensor(&enc.join("a.png.nct")).unwrap();
    assert_eq!(t.dims, vec![196, 768]);
}

#[test]
fn indivisible_patch_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let plain = dir.path().join("plain");
    fs::create_dir(&plain).unwrap();
    image::RgbImage::new(224, 224).save(plain.join("a.png")).unwrap();
    let key = key_file(dir.path());
    let out = run(&[
        "encrypt",
        "--key",
        &key,
        "--in",
        s(&plain),
        "--out",
        s(&dir.path().join("enc")),
        "--patch",
        "15",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("divide"));
}

#[test]
fn color_png_export_and_verify() {
    let dir = tempfile::tempdir().unwrap();
    let plain = make_toy(dir.path(), "classes", "2");
    let enc = dir.path().join("enc");
    let out = run_env(
        &[
            "encrypt",
            "--scheme",
            "color",
            "--patch",
            "8",
            "--in",
            s(&plain),
            "--out",
            s(&enc),
            "--png",
        ],
        KEY_HEX,
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["img_0.png.enc.png", "img_0.png.plain.png"] {
        let png = image::open(enc.join(name)).unwrap();
        assert_eq!((png.width(), png.height()), (32, 32));
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(enc.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"][0]["label"], "0");

    let ok = run_env(&["verify", "--manifest", s(&enc.join("manifest.json"))], KEY_HEX);
    assert_eq!(code(&ok), 0);
    assert_eq!(json(&ok)["key_matches"], true);
    let other = "ff".repeat(32);
    assert_eq!(code(&run_env(&["verify", "--manifest", s(&enc)], &other)), 2);
}

#[test]
fn png_export_rejected_for_neuracrypt() {
    let dir = tempfile::tempdir().unwrap();
    let plain = make_toy(dir.path(), "noise", "1");
    let out = run_env(
        &[
            "encrypt",
            "--patch",
            "8",
            "--in",
            s(&plain),
            "--out",
            s(&dir.path().join("e")),
            "--png",
        ],
        KEY_HEX,
    );
    assert_eq!(code(&out), 2);
}

#[test]
fn key_flag_wins_over_env() {
    let dir = tempfile::tempdir().unwrap();
    let plain = make_toy(dir.path(), "noise", "2");
    let key = key_file(dir.path());
    let enc = dir.path().join("enc");
    let out = run_env(
        &[
            "encrypt",
            "--key",
            &key,
            "--patch",
            "8",
            "--in",
            s(&plain),
            "--out",
            s(&enc),
        ],
        &"ab".repeat(32),
    );
    assert_eq!(code(&out), 0);
    // env key as a path also works
    assert_eq!(code(&run_env(&["verify", "--manifest", s(&enc)], &key)), 0);
    assert_eq!(code(&run(&["verify", "--manifest", s(&enc)])), 2);
    assert_eq!(
        code(&run_env(&["verify", "--manifest", s(&enc)], "not-a-key-or-file")),
        2
    );
}

#[test]
fn encryption_is_idempotent_across_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let plain = make_toy(dir.path(), "noise", "6");
    let mut outputs = Vec::new();
    for (tag, jobs) in [("a", "1"), ("b", "4"), ("c", "1")] {
        let enc = dir.path().join(tag);
        let out = run_env(
            &[
                "encrypt",
                "--patch",
                "8",
                "--jobs",
                jobs,
                "--in",
                s(&plain),
                "--out",
                s(&enc),
            ],
            KEY_HEX,
        );
        assert_eq!(code(&out), 0);
        let files: Vec<Vec<u8>> = (0..6)
            .map(|i| fs::read(enc.join(format!("img_{i}.png.nct"))).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

#[test]
fn attack_recovers_engineered_set() {
    let dir = tempfile::tempdir().unwrap();
    let plain = make_toy(dir.path(), "chain", "8");
    for scheme in ["color", "neuracrypt"] {
        let enc = dir.path().join(scheme);
        let mut args = vec![
            "encrypt",
            "--scheme",
            scheme,
            "--patch",
            "8",
            "--in",
            s(&plain),
            "--out",
            s(&enc),
        ];
        if scheme == "neuracrypt" {
            args.extend(["--hidden", "64", "--output-dim", "64"]);
        }
        assert_eq!(code(&run_env(&args, KEY_HEX)), 0);
        let out = run(&["attack", "--plain", s(&plain), "--enc", s(&enc)]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let report = json(&out);
        assert_eq!(report["samples"], 8);
        assert_eq!(report["accuracy"], 1.0, "{scheme}: {report}");
        assert_eq!(report["no_collision_signal"], false);
        assert_eq!(report["pairs"].as_array().unwrap().len(), 8);
    }
}

#[test]
fn attack_with_unequal_counts_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let plain = make_toy(dir.path(), "noise", "3");
    let enc = dir.path().join("enc");
    assert_eq!(
        code(&run_env(
            &["encrypt", "--patch", "8", "--in", s(&plain), "--out", s(&enc)],
            KEY_HEX
        )),
        0
    );
    let fewer = make_toy(&dir.path().join("x"), "noise", "2");
    assert_eq!(code(&run(&["attack", "--plain", s(&fewer), "--enc", s(&enc)])), 2);
}

#[test]
fn leakage_report_writes_json_file() {
    let dir = tempfile::tempdir().unwrap();
    let plain = make_toy(dir.path(), "noise", "3");
    let enc = dir.path().join("enc");
    assert_eq!(
        code(&run_env(
            &[
                "encrypt",
                "--scheme",
                "color",
                "--patch",
                "8",
                "--in",
                s(&plain),
                "--out",
                s(&enc)
            ],
            KEY_HEX
        )),
        0
    );
    let report_path = dir.path().join("leak.json");
    let out = run(&[
        "leakage",
        "--plain",
        s(&plain),
        "--enc",
        s(&enc),
        "--out",
        s(&report_path),
    ]);
    assert_eq!(code(&out), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(report_path).unwrap()).unwrap();
    assert_eq!(report["pixel_correlation"].as_array().unwrap().len(), 3);
    assert_eq!(report["token_collision_rate"], 0.0);
    assert_eq!(report["plain_histogram"]["counts"].as_array().unwrap().len(), 32);
}

#[test]
fn probe_defaults_report_schema() {
    let out = run_env(&["probe", "--jobs", "4"], KEY_HEX);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    for field in ["plain_acc", "color_acc", "neuracrypt_acc", "shuffled_label_acc"] {
        let v = report[field].as_f64().unwrap_or_else(|| panic!("missing {field}"));
        assert!((0.0..=1.0).contains(&v));
    }
    assert_eq!(report["settings"]["classes"], 3);
    assert_eq!(report["settings"]["train_per_class"], 100);
}

#[test]
fn probe_without_key_is_data_error() {
    assert_eq!(code(&run(&["probe", "--epochs", "1"])), 2);
}
