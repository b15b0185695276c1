use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use covsem::diffusion::{decode_batch, encode_batch, read_codec, Dataset};
use covsem::link::{dequantize, quantize, ssim};
use covsem::nn::Matrix;
use covsem_harness::commands::{read_csv, RegenRow, SweepRow};
use covsem_harness::ExperimentConfig;

const TINY: &str = r#"
seed = 7

[channel]
n_mc = 2000

[channel.sweep]
start_dbw = 10.0
stop_dbw = 30.0
step_db = 5.0

[dataset]
train = 64
held_out = 8
height = 8
width = 8

[codec.net]
hidden = 32

[codec.train]
steps = 40
batch_size = 8

[regen]
beps = [0.0, 0.01]
t_inf = [5, 10]
n_images = 4

[surrogate]
n_images = 4
"#;

fn workdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("tiny.toml"), TINY).unwrap();
    dir
}

fn covsem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covsem"))
        .args(args)
        .args(["--config", dir.join("tiny.toml").to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> serde_json::Value {
    let o = covsem(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

fn stderr_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("stderr is not JSON: {}", String::from_utf8_lossy(&o.stderr)))
}

fn read(dir: &Path, file: &str) -> Vec<u8> {
    std::fs::read(dir.join("out").join(file)).unwrap()
}

#[test]
fn unknown_config_key_is_a_structured_error() {
    let dir = workdir("unknown_key");
    std::fs::write(dir.join("tiny.toml"), "[channel]\nkappa = 1.0\n").unwrap();
    let o = covsem(&dir, &["channel-sweep"]);
    assert_eq!(o.status.code(), Some(3));
    let e = stderr_json(&o);
    assert_eq!(e["error"]["kind"], "config");
    assert_eq!(e["error"]["path"], "channel.kappa");
}

#[test]
fn usage_errors_are_json() {
    let o = Command::new(env!("CARGO_BIN_EXE_covsem")).arg("no-such-command").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"]["kind"], "usage");
}

#[test]
fn missing_input_names_the_producer() {
    let dir = workdir("missing");
    let o = covsem(&dir, &["regen-grid"]);
    assert_eq!(o.status.code(), Some(4));
    let e = stderr_json(&o);
    assert_eq!(e["error"]["kind"], "missing_input");
    assert_eq!(e["error"]["producer"], "train-codec");
}

#[test]
fn channel_sweep_is_thread_independent_and_echoes_config() {
    let dir = workdir("sweep");
    ok(&dir, &["channel-sweep", "--threads", "1"]);
    let one = read(&dir, "channel_sweep.csv");
    ok(&dir, &["channel-sweep", "--threads", "3"]);
    assert_eq!(one, read(&dir, "channel_sweep.csv"));

    let rows: Vec<SweepRow> = read_csv(&one[..]).unwrap();
    assert_eq!(rows.iter().map(|r| r.p_j_dbw).collect::<Vec<_>>(), [10.0, 15.0, 20.0, 25.0, 30.0]);
    let header = String::from_utf8(one).unwrap();
    assert!(header.starts_with("p_j_dbw,p_j_w,dep,se_dep,p_fa,p_md,covert_rate,mean_bep\n"));

    let echo = String::from_utf8(read(&dir, "channel-sweep.config.toml")).unwrap();
    let parsed = ExperimentConfig::from_toml(&echo).unwrap();
    assert_eq!(parsed, ExperimentConfig::from_toml(TINY).unwrap());
    let manifest: serde_json::Value = serde_json::from_slice(&read(&dir, "channel-sweep.manifest.json")).unwrap();
    assert_eq!(manifest["command"], "channel-sweep");
    assert_eq!(manifest["seed"], 7);
    assert!(manifest["outputs"]["channel_sweep.csv"].as_str().unwrap().len() == 64);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = workdir("seed_flag");
    let a = ok(&dir, &["make-dataset", "--seed", "8"]);
    let b = ok(&dir, &["make-dataset"]);
    assert_ne!(a["manifest_sha256"], b["manifest_sha256"]);
    let manifest: serde_json::Value = serde_json::from_slice(&read(&dir, "make-dataset.manifest.json")).unwrap();
    assert_eq!(manifest["seed"], 7);
}

#[test]
fn dataset_is_deterministic_balanced_and_in_range() {
    let dir = workdir("dataset");
    let a = ok(&dir, &["make-dataset"]);
    let b = ok(&dir, &["make-dataset"]);
    assert_eq!(a["manifest_sha256"], b["manifest_sha256"]);
    let ds = Dataset::read_from(&read(&dir, "dataset.bin")[..]).unwrap();
    assert_eq!(ds.len(), 64);
    let counts = ds.class_counts();
    assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{counts:?}");
    assert!(ds.images.iter().flat_map(|im| im.pixels()).all(|p| (-1.0..=1.0).contains(p)));
    let manifest: serde_json::Value = serde_json::from_slice(&read(&dir, "dataset_manifest.json")).unwrap();
    assert_eq!(manifest["held_out"]["count"], 8);
}

#[test]
fn codec_resume_is_bit_identical() {
    let dir = workdir("resume");
    ok(&dir, &["make-dataset"]);
    ok(&dir, &["train-codec"]);
    let straight = (read(&dir, "codec.bin"), read(&dir, "codec_loss.csv"));
    ok(&dir, &["train-codec", "--until", "17"]);
    let partial: serde_json::Value = serde_json::from_slice(&read(&dir, "train-codec.manifest.json")).unwrap();
    assert_eq!(partial["summary"]["end_step"], 17);
    ok(&dir, &["train-codec", "--resume"]);
    assert_eq!(read(&dir, "codec.bin"), straight.0);
    assert_eq!(read(&dir, "codec_loss.csv"), straight.1);
}

#[test]
fn codec_rejects_mismatched_image_size() {
    let dir = workdir("mismatch");
    ok(&dir, &["make-dataset"]);
    std::fs::write(dir.join("tiny.toml"), TINY.replace("height = 8\nwidth = 8", "height = 12\nwidth = 12")).unwrap();
    let o = covsem(&dir, &["train-codec"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(stderr_json(&o)["error"]["path"], "dataset");
}

#[test]
fn zero_bep_row_equals_quantization_only() {
    let dir = workdir("regen");
    ok(&dir, &["make-dataset"]);
    ok(&dir, &["train-codec"]);
    ok(&dir, &["regen-grid"]);
    let rows: Vec<RegenRow> = read_csv(&read(&dir, "regen_grid.csv")[..]).unwrap();
    assert_eq!(rows.len(), 4);

    let cfg = ExperimentConfig::from_toml(TINY).unwrap();
    let file = read_codec(&read(&dir, "codec.bin")[..]).unwrap();
    let held = Dataset::read_from(&read(&dir, "held_out.bin")[..]).unwrap();
    let n = cfg.regen.n_images;
    let labels: Vec<_> = (0..n).map(|i| held.label(i)).collect();
    for &t in &cfg.regen.t_inf {
        let clean = Matrix::from_rows(&held.images[..n].iter().map(|im| im.pixels().to_vec()).collect::<Vec<_>>());
        let latent = encode_batch(&clean, &labels, &file.denoiser, &file.schedule, t).unwrap();
        let mut restored = Vec::new();
        for (row, &label) in latent.iter_rows().zip(&labels) {
            let prompt = covsem::diffusion::VisualPrompt { height: 8, width: 8, latent: row.to_vec() };
            let (p, l) = dequantize(&quantize(&prompt, label, &cfg.link.params()).unwrap());
            assert_eq!(l, label);
            restored.push(p.latent);
        }
        let out = decode_batch(&Matrix::from_rows(&restored), &labels, &file.denoiser, &file.schedule, t).unwrap();
        let mean = out
            .iter_rows()
            .zip(&held.images)
            .map(|(r, im)| ssim(im, &covsem::diffusion::ToyImage::new(8, 8, r.to_vec()).unwrap(), &cfg.link.ssim).unwrap())
            .sum::<f64>()
            / n as f64;
        let row = rows.iter().find(|r| r.t_inf == t && r.bep == 0.0).unwrap();
        assert!((row.mean_ssim - mean).abs() < 1e-12, "T={t}: {} vs {mean}", row.mean_ssim);
        assert_eq!(row.label_errors, 0);
    }
}
