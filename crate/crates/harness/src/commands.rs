//! The seven pipeline stages.

use std::io::BufRead;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use covsem::allocator::{
    hillclimb_baseline, oracle_solve, AllocationEnv, AllocatorTrainer, CovertEnv, DiffusionPolicy, SsimSurrogate,
    CONDITION_DIM,
};
use covsem::channel::{dbw_to_watts, FadingSamples};
use covsem::diffusion::{
    decode_batch, encode_batch, read_codec, write_codec, CodecFile, Dataset, Denoiser, DenoiserTrainer, ShapeClass,
    ToyImage,
};
use covsem::link::{ssim, BatchScores, LinkParams, Regenerator};
use covsem::nn::{read_checkpoint, write_checkpoint, Matrix};
use covsem::rng::derive_seed;

use crate::config::{ExperimentConfig, Paths};
use crate::output::{self, Recorder};
use crate::{HarnessError, Result};

const SALT_CHANNEL: u64 = 1;
const SALT_TRAIN_SET: u64 = 2;
const SALT_HELD_OUT: u64 = 3;
const SALT_CODEC_INIT: u64 = 4;
const SALT_CODEC_TRAIN: u64 = 5;
const SALT_REGEN: u64 = 6;
const SALT_SURROGATE: u64 = 7;
const SALT_ALLOCATOR: u64 = 8;
const SALT_EVAL: u64 = 9;

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    ChannelSweep,
    MakeDataset,
    TrainCodec { resume: bool, until: Option<u64> },
    RegenGrid,
    BuildSurrogate,
    TrainAllocator,
    Eval { policy: Option<PathBuf> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::ChannelSweep => "channel-sweep",
            Command::MakeDataset => "make-dataset",
            Command::TrainCodec { .. } => "train-codec",
            Command::RegenGrid => "regen-grid",
            Command::BuildSurrogate => "build-surrogate",
            Command::TrainAllocator => "train-allocator",
            Command::Eval { .. } => "eval",
        }
    }
}

/// Resolved inputs of one invocation.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out: PathBuf,
}

impl RunContext {
    /// `seed` overrides `config.seed` when given.
    pub fn new(mut config: ExperimentConfig, out: PathBuf, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            config.seed = s;
        }
        RunContext { config, out }
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        Paths::resolve(&self.out, p)
    }

    fn seed(&self, salt: u64) -> u64 {
        derive_seed(self.config.seed, salt)
    }

    /// Runs `command`, writes the config echo and manifest, and returns the
    /// command's summary.
    pub fn run(&self, command: &Command) -> Result<serde_json::Value> {
        std::fs::create_dir_all(&self.out).map_err(|e| HarnessError::io(&self.out, e))?;
        let mut rec = Recorder::new(&self.out);
        let summary = match command {
            Command::ChannelSweep => self.channel_sweep(&mut rec)?,
            Command::MakeDataset => self.make_dataset(&mut rec)?,
            Command::TrainCodec { resume, until } => self.train_codec(&mut rec, *resume, *until)?,
            Command::RegenGrid => self.regen_grid(&mut rec)?,
            Command::BuildSurrogate => self.build_surrogate(&mut rec)?,
            Command::TrainAllocator => self.train_allocator(&mut rec)?,
            Command::Eval { policy } => self.eval(&mut rec, policy.as_deref())?,
        };
        let name = command.name();
        let toml = self.config.to_toml();
        output::write_text(&self.out.join(format!("{name}.config.toml")), &toml)?;
        let manifest = rec.manifest(name, self.config.seed, &toml, summary.clone())?;
        output::write_json(&self.out.join(format!("{name}.manifest.json")), &manifest)?;
        Ok(summary)
    }

    fn channel_sweep(&self, rec: &mut Recorder) -> Result<serde_json::Value> {
        let ch = &self.config.channel;
        let geom = ch.geometry()?;
        let samples = FadingSamples::draw(&ch.fading, ch.n_mc, self.seed(SALT_CHANNEL))?;
        let p_t = dbw_to_watts(ch.p_t_dbw);
        let s = ch.sweep;
        let n = ((s.stop_dbw - s.start_dbw) / s.step_db + 1e-9).floor() as usize;
        let rows = (0..=n)
            .map(|i| {
                let p_j_dbw = s.start_dbw + i as f64 * s.step_db;
                let p_j = dbw_to_watts(p_j_dbw);
                let st = samples.statistics(&geom, p_t, p_j)?;
                Ok(SweepRow {
                    p_j_dbw,
                    p_j_w: p_j,
                    dep: st.dep,
                    se_dep: st.se_dep,
                    p_fa: st.p_fa,
                    p_md: st.p_md,
                    covert_rate: st.covert_rate,
                    mean_bep: st.mean_bep,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let path = self.out.join("channel_sweep.csv");
        output::write_csv(&path, &rows)?;
        rec.output(&path);
        let crossing = sweep_crossing(&rows, ch.xi_th);
        Ok(json!({
            "points": rows.len(),
            "xi_th": ch.xi_th,
            "crossing_dbw": crossing.map(|c| c.0),
            "mean_bep_at_crossing": crossing.map(|c| c.1),
        }))
    }

    fn make_dataset(&self, rec: &mut Recorder) -> Result<serde_json::Value> {
        let d = self.config.dataset;
        let splits = [
            ("train", d.train, self.seed(SALT_TRAIN_SET), self.path(&self.config.paths.dataset)),
            ("held_out", d.held_out, self.seed(SALT_HELD_OUT), self.path(&self.config.paths.held_out)),
        ];
        let mut manifest = serde_json::Map::new();
        manifest.insert("height".into(), d.height.into());
        manifest.insert("width".into(), d.width.into());
        for (name, count, seed, path) in splits {
            let ds = Dataset::generate(count, d.height, d.width, seed);
            let w = output::create(&path)?;
            ds.write_to(w).map_err(HarnessError::from)?;
            rec.output(&path);
            manifest.insert(
                name.into(),
                json!({ "count": count, "seed": seed, "class_counts": ds.class_counts(), "sha256": output::sha256_file(&path)? }),
            );
        }
        let manifest = serde_json::Value::Object(manifest);
        let path = self.out.join("dataset_manifest.json");
        output::write_json(&path, &manifest)?;
        rec.output(&path);
        Ok(json!({ "manifest_sha256": output::sha256_file(&path)? }))
    }

    fn load_dataset(&self, rec: &mut Recorder, path: &Path) -> Result<Dataset> {
        let ds = Dataset::read_from(output::open_input(path, "make-dataset")?)?;
        rec.input(path);
        let d = self.config.dataset;
        if ds.height != d.height || ds.width != d.width {
            return Err(HarnessError::Config {
                path: "dataset".into(),
                message: format!("{} holds {}x{} images, config expects {}x{}", path.display(), ds.height, ds.width, d.height, d.width),
            });
        }
        Ok(ds)
    }

    fn train_codec(&self, rec: &mut Recorder, resume: bool, until: Option<u64>) -> Result<serde_json::Value> {
        let c = &self.config.codec;
        let schedule = c.schedule()?;
        let dataset = self.load_dataset(rec, &self.path(&self.config.paths.dataset))?;
        let codec_path = self.path(&self.config.paths.codec);
        let seed = self.seed(SALT_CODEC_TRAIN);
        let mut trainer = if resume {
            let file = read_codec(output::open_input(&codec_path, "train-codec")?)?;
            rec.input(&codec_path);
            if file.denoiser.config != c.denoiser_config(&self.config.dataset) || file.schedule != schedule {
                return Err(HarnessError::Config {
                    path: "codec".into(),
                    message: "checkpoint architecture or schedule differs from the config".into(),
                });
            }
            DenoiserTrainer::resume(file, c.train, seed)?
        } else {
            let denoiser = Denoiser::new(c.denoiser_config(&self.config.dataset), self.seed(SALT_CODEC_INIT));
            DenoiserTrainer::new(denoiser, c.train, seed)?
        };
        let start = trainer.step();
        let trace = trainer.run(&dataset, &schedule, until)?;
        let file = trainer.to_codec_file(&schedule, (c.beta_start, c.beta_end));
        write_codec(output::create(&codec_path)?, &file)?;
        rec.output(&codec_path);

        let loss_path = self.out.join("codec_loss.csv");
        let mut rows: Vec<LossRow> = Vec::new();
        if resume && loss_path.exists() {
            let mut r = csv::Reader::from_path(&loss_path)?;
            for row in r.deserialize() {
                let row: LossRow = row?;
                if row.step < start {
                    rows.push(row);
                }
            }
        }
        rows.extend(trace.iter().map(|p| LossRow { step: p.step, loss: p.loss }));
        output::write_csv(&loss_path, &rows)?;
        rec.output(&loss_path);
        let tail = &trace[trace.len().saturating_sub(100)..];
        Ok(json!({
            "start_step": start,
            "end_step": trainer.step(),
            "final_loss_mean100": if tail.is_empty() { None } else { Some(tail.iter().map(|p| p.loss).sum::<f64>() / tail.len() as f64) },
        }))
    }

    fn load_codec(&self, rec: &mut Recorder) -> Result<(CodecFile, String)> {
        let path = self.path(&self.config.paths.codec);
        let file = read_codec(output::open_input(&path, "train-codec")?)?;
        rec.input(&path);
        let id = output::sha256_file(&path)?;
        Ok((file, id[..16].to_string()))
    }

    fn held_out(&self, rec: &mut Recorder, n: usize) -> Result<(Vec<ToyImage>, Vec<ShapeClass>)> {
        let ds = self.load_dataset(rec, &self.path(&self.config.paths.held_out))?;
        let labels = (0..n).map(|i| ds.label(i)).collect();
        Ok((ds.images.into_iter().take(n).collect(), labels))
    }

    fn regenerator<'a>(&self, file: &'a CodecFile) -> Regenerator<'a, Denoiser> {
        Regenerator {
            predictor: &file.denoiser,
            schedule: &file.schedule,
            link: self.config.link.params(),
            ssim: self.config.link.ssim,
        }
    }

    fn regen_grid(&self, rec: &mut Recorder) -> Result<serde_json::Value> {
        let r = &self.config.regen;
        let (file, _) = self.load_codec(rec)?;
        let (images, labels) = self.held_out(rec, r.n_images)?;
        let regen = self.regenerator(&file);
        let mut rows = Vec::new();
        for &t in &r.t_inf {
            for cell in regen.score_batch(&images, &labels, t, &r.beps, self.seed(SALT_REGEN))? {
                rows.push(RegenRow {
                    bep: cell.bep,
                    t_inf: cell.t_inf,
                    mean_ssim: cell.mean(),
                    std_ssim: cell.std(),
                    label_errors: cell.label_errors,
                });
            }
        }
        let path = self.out.join("regen_grid.csv");
        output::write_csv(&path, &rows)?;
        rec.output(&path);

        let clean = Matrix::from_rows(&images.iter().map(|im| im.pixels().to_vec()).collect::<Vec<_>>());
        let wrong: Vec<ShapeClass> =
            labels.iter().map(|l| ShapeClass::ALL[(l.index() + 1) % ShapeClass::COUNT]).collect();
        let mut fine = self.regenerator(&file);
        fine.link = LinkParams {
            q_bits: r.ablation_q_bits,
            clip_lo: -r.ablation_clip,
            clip_hi: r.ablation_clip,
            ..fine.link
        };
        let mut trips = Vec::new();
        for &t in &r.t_inf {
            let cell = fine.score_batch(&images, &labels, t, &[0.0], self.seed(SALT_REGEN))?.remove(0);
            trips.push(RoundTripRow { t_inf: t, label: "fine_quantized".into(), mean_ssim: cell.mean(), std_ssim: cell.std() });
            let latent = encode_batch(&clean, &labels, &file.denoiser, &file.schedule, t)?;
            for (name, decode_labels) in [("correct", &labels), ("wrong", &wrong)] {
                let out = decode_batch(&latent, decode_labels, &file.denoiser, &file.schedule, t)?;
                let scores = out
                    .iter_rows()
                    .zip(&images)
                    .map(|(row, im)| {
                        let rec = ToyImage::new(im.height(), im.width(), row.to_vec())?;
                        ssim(im, &rec, &self.config.link.ssim)
                    })
                    .collect::<covsem::Result<Vec<f64>>>()?;
                let cell = BatchScores { bep: 0.0, t_inf: t, scores, label_errors: 0 };
                trips.push(RoundTripRow { t_inf: t, label: name.into(), mean_ssim: cell.mean(), std_ssim: cell.std() });
            }
        }
        let path = self.out.join("regen_roundtrip.csv");
        output::write_csv(&path, &trips)?;
        rec.output(&path);
        Ok(json!({ "cells": rows.len(), "n_images": images.len() }))
    }

    fn build_surrogate(&self, rec: &mut Recorder) -> Result<serde_json::Value> {
        let s = &self.config.surrogate;
        let (file, id) = self.load_codec(rec)?;
        let (images, labels) = self.held_out(rec, s.n_images)?;
        let regen = self.regenerator(&file);
        let sur = SsimSurrogate::build(&regen, &images, &labels, &s.beps, &s.steps, self.seed(SALT_SURROGATE), &id)?;
        let path = self.path(&self.config.paths.surrogate);
        output::write_json(&path, &sur)?;
        rec.output(&path);
        Ok(json!({ "checkpoint_id": id, "monotone_in_bep": sur.monotone_in_bep }))
    }

    fn env(&self, rec: &mut Recorder) -> Result<CovertEnv> {
        let path = self.path(&self.config.paths.surrogate);
        let surrogate: SsimSurrogate = serde_json::from_reader(output::open_input(&path, "build-surrogate")?)?;
        let surrogate = SsimSurrogate::from_grid(surrogate.beps, surrogate.steps, surrogate.values, surrogate.std, surrogate.provenance)?;
        rec.input(&path);
        let a = &self.config.allocator;
        Ok(CovertEnv {
            ranges: a.ranges,
            fading: a.fading,
            bounds: a.bounds,
            energy: a.energy,
            surrogate,
            n_mc: a.n_mc,
            violation_reward: a.violation_reward,
        })
    }

    fn train_allocator(&self, rec: &mut Recorder) -> Result<serde_json::Value> {
        let env = self.env(rec)?;
        let mut trainer = AllocatorTrainer::new(&env, self.config.allocator.train, self.seed(SALT_ALLOCATOR))?;
        let trace = trainer.run()?;
        let (policy, critic) = trainer.into_parts();
        let trace_path = self.out.join("allocator_trace.csv");
        output::write_csv(&trace_path, &trace)?;
        rec.output(&trace_path);
        for (path, net) in [(self.path(&self.config.paths.policy), &policy.net), (self.path(&self.config.paths.critic), &critic.net)] {
            let w = output::create(&path)?;
            write_checkpoint(w, net, None)?;
            rec.output(&path);
        }
        let last = trace.last().copied();
        Ok(json!({ "steps": last.map(|p| p.step), "final_test_reward": last.map(|p| p.test_reward) }))
    }

    fn eval(&self, rec: &mut Recorder, policy_path: Option<&Path>) -> Result<serde_json::Value> {
        let a = &self.config.allocator;
        let env = self.env(rec)?;
        let path = policy_path.map_or_else(|| self.path(&self.config.paths.policy), Path::to_path_buf);
        let ck = read_checkpoint(output::open_input(&path, "train-allocator")?)?;
        rec.input(&path);
        let policy = DiffusionPolicy::from_net(ck.net, CONDITION_DIM, env.action_dim(), a.train.policy)?;
        let base = self.seed(SALT_EVAL);
        let rows = (0..a.eval.conditions)
            .into_par_iter()
            .map(|i| {
                let c = env.sample_condition(derive_seed(derive_seed(base, 1), i as u64))?;
                let action = policy.act(&env.features(&c), derive_seed(derive_seed(base, 2), i as u64), 0.0)?;
                let scheme = env.bounds.scheme(&action);
                let ev = env.evaluate(&c, &scheme)?;
                let oracle = oracle_solve(&env, &c, &a.oracle)?;
                let h = a.hillclimb;
                let hill = hillclimb_baseline(&env, &c, h.iters, h.restarts, h.step_sigma, derive_seed(derive_seed(base, 3), i as u64))?;
                Ok(EvalRow {
                    condition: i,
                    policy_reward: ev.reward,
                    oracle_reward: oracle.reward,
                    hillclimb_reward: hill.reward,
                    regret: oracle.reward - ev.reward,
                    policy_feasible: ev.feasible(),
                    oracle_feasible: !oracle.infeasible,
                    policy_p_t: scheme.p_t,
                    policy_p_j: scheme.p_j,
                    policy_steps: scheme.steps,
                    oracle_p_t: oracle.scheme.p_t,
                    oracle_p_j: oracle.scheme.p_j,
                    oracle_steps: oracle.scheme.steps,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = self.out.join("eval.csv");
        output::write_csv(&out, &rows)?;
        rec.output(&out);
        let s = EvalSummary::from_rows(&rows);
        Ok(serde_json::to_value(s)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub p_j_dbw: f64,
    pub p_j_w: f64,
    pub dep: f64,
    pub se_dep: f64,
    pub p_fa: f64,
    pub p_md: f64,
    pub covert_rate: f64,
    pub mean_bep: f64,
}

/// First jamming power (dBW, linearly interpolated) at which DEP reaches
/// `xi_th`, with the mean BEP of the first covert sweep point.
pub fn sweep_crossing(rows: &[SweepRow], xi_th: f64) -> Option<(f64, f64)> {
    let i = rows.iter().position(|r| r.dep >= xi_th)?;
    if i == 0 {
        return Some((rows[0].p_j_dbw, rows[0].mean_bep));
    }
    let (a, b) = (&rows[i - 1], &rows[i]);
    let u = (xi_th - a.dep) / (b.dep - a.dep);
    Some((a.p_j_dbw + u * (b.p_j_dbw - a.p_j_dbw), b.mean_bep))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegenRow {
    pub bep: f64,
    pub t_inf: usize,
    pub mean_ssim: f64,
    pub std_ssim: f64,
    pub label_errors: usize,
}

/// Noiseless round trip: unquantized under the correct or a wrong label,
/// or through the fine ablation quantizer at bep 0 (`fine_quantized`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripRow {
    pub t_inf: usize,
    pub label: String,
    pub mean_ssim: f64,
    pub std_ssim: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub condition: usize,
    pub policy_reward: f64,
    pub oracle_reward: f64,
    pub hillclimb_reward: f64,
    pub regret: f64,
    pub policy_feasible: bool,
    pub oracle_feasible: bool,
    pub policy_p_t: f64,
    pub policy_p_j: f64,
    pub policy_steps: usize,
    pub oracle_p_t: f64,
    pub oracle_p_j: f64,
    pub oracle_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub conditions: usize,
    pub mean_policy: f64,
    pub mean_oracle: f64,
    pub mean_hillclimb: f64,
    /// `mean_policy / mean_oracle`.
    pub oracle_fraction: f64,
    pub violations: usize,
}

impl EvalSummary {
    pub fn from_rows(rows: &[EvalRow]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let (p, o) = (mean(|r| r.policy_reward), mean(|r| r.oracle_reward));
        EvalSummary {
            conditions: rows.len(),
            mean_policy: p,
            mean_oracle: o,
            mean_hillclimb: mean(|r| r.hillclimb_reward),
            oracle_fraction: p / o,
            violations: rows.iter().filter(|r| !r.policy_feasible).count(),
        }
    }
}

/// Reads a CSV written by one of the commands.
pub fn read_csv<T: for<'de> Deserialize<'de>, R: BufRead>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}
