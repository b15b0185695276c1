//! Experiment configuration. Every section has defaults equal to the shipped
//! profile (`configs/default.toml`), and unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use covsem::allocator::{ActionBounds, AllocatorConfig, ConditionRanges, EnergyModel, OracleConfig};
use covsem::channel::{FadingParams, LinkGeometry, NodePositions, PathLossExponents, Point};
use covsem::diffusion::{AlphaSchedule, DenoiserConfig, TrainConfig};
use covsem::link::{LinkParams, SsimParams};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub paths: Paths,
    pub channel: ChannelSection,
    pub dataset: DatasetSection,
    pub codec: CodecSection,
    pub link: LinkSection,
    pub regen: RegenSection,
    pub surrogate: SurrogateSection,
    pub allocator: AllocatorSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 2024,
            paths: Paths::default(),
            channel: ChannelSection::default(),
            dataset: DatasetSection::default(),
            codec: CodecSection::default(),
            link: LinkSection::default(),
            regen: RegenSection::default(),
            surrogate: SurrogateSection::default(),
            allocator: AllocatorSection::default(),
        }
    }
}

/// Artifact locations, relative to the output directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub dataset: PathBuf,
    pub held_out: PathBuf,
    pub codec: PathBuf,
    pub surrogate: PathBuf,
    pub policy: PathBuf,
    pub critic: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            dataset: "dataset.bin".into(),
            held_out: "held_out.bin".into(),
            codec: "codec.bin".into(),
            surrogate: "surrogate.json".into(),
            policy: "policy.bin".into(),
            critic: "critic.bin".into(),
        }
    }
}

impl Paths {
    pub fn resolve(out: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            out.join(p)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub p_t_dbw: f64,
    /// Receiver and warden noise power (W).
    pub kappa_sq: f64,
    /// Warden detection threshold (W).
    pub epsilon: f64,
    pub xi_th: f64,
    pub n_mc: usize,
    pub nodes: NodePositions,
    pub path_loss: PathLossExponents,
    pub fading: FadingParams,
    pub sweep: SweepSection,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            p_t_dbw: 20.0,
            kappa_sq: 46.0,
            epsilon: 50.0,
            xi_th: 0.95,
            n_mc: 100_000,
            nodes: NodePositions {
                transmitter: Point::new(3.0, 8.0),
                warden: Point::new(3.0, 14.0),
                receiver: Point::new(7.0, 10.0),
                jammer: Point::new(6.0, 8.0),
            },
            path_loss: PathLossExponents { tw: 1.2, tr: 1.0, jw: 1.7, jr: 1.7 },
            fading: FadingParams::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl ChannelSection {
    pub fn geometry(&self) -> covsem::Result<LinkGeometry> {
        LinkGeometry::from_positions(&self.nodes, self.path_loss, self.kappa_sq, self.epsilon, self.xi_th)
    }
}

/// Jamming-power sweep in dBW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub start_dbw: f64,
    pub stop_dbw: f64,
    pub step_db: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { start_dbw: 0.0, stop_dbw: 40.0, step_db: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub train: usize,
    pub held_out: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection { train: 4096, held_out: 512, height: 16, width: 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub t_train: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub net: NetSection,
    pub train: TrainConfig,
}

/// Denoiser architecture; the image size comes from `[dataset]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSection {
    pub time_dim: usize,
    pub label_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl Default for NetSection {
    fn default() -> Self {
        let d = DenoiserConfig::default();
        NetSection { time_dim: d.time_dim, label_dim: d.label_dim, hidden: d.hidden, hidden_layers: d.hidden_layers }
    }
}

impl Default for CodecSection {
    fn default() -> Self {
        CodecSection {
            t_train: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            net: NetSection::default(),
            train: TrainConfig { steps: 8000, ..TrainConfig::default() },
        }
    }
}

impl CodecSection {
    pub fn schedule(&self) -> covsem::Result<AlphaSchedule> {
        AlphaSchedule::linear(self.t_train, self.beta_start, self.beta_end)
    }

    pub fn denoiser_config(&self, dataset: &DatasetSection) -> DenoiserConfig {
        DenoiserConfig {
            height: dataset.height,
            width: dataset.width,
            time_dim: self.net.time_dim,
            label_dim: self.net.label_dim,
            hidden: self.net.hidden,
            hidden_layers: self.net.hidden_layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    pub q_bits: u8,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub repetition: u8,
    pub ssim: SsimParams,
}

impl Default for LinkSection {
    fn default() -> Self {
        let p = LinkParams::default();
        LinkSection { q_bits: p.q_bits, clip_lo: p.clip_lo, clip_hi: p.clip_hi, repetition: p.repetition, ssim: SsimParams::default() }
    }
}

impl LinkSection {
    pub fn params(&self) -> LinkParams {
        LinkParams { q_bits: self.q_bits, clip_lo: self.clip_lo, clip_hi: self.clip_hi, repetition: self.repetition }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegenSection {
    pub beps: Vec<f64>,
    pub t_inf: Vec<usize>,
    pub n_images: usize,
    /// Fine quantizer of the noiseless ablation rows: bits and symmetric clip.
    pub ablation_q_bits: u8,
    pub ablation_clip: f64,
}

impl Default for RegenSection {
    fn default() -> Self {
        RegenSection {
            beps: vec![0.0, 1e-5, 1e-4, 1e-3, 1e-2],
            t_inf: vec![10, 20, 50, 100, 200],
            n_images: 50,
            ablation_q_bits: 16,
            ablation_clip: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub beps: Vec<f64>,
    pub steps: Vec<usize>,
    pub n_images: usize,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        SurrogateSection {
            beps: vec![1e-6, 1e-5, 1e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1, 0.2, 0.3, 0.5],
            steps: vec![10, 20, 50, 100, 200],
            n_images: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllocatorSection {
    pub ranges: ConditionRanges,
    pub fading: FadingParams,
    pub bounds: ActionBounds,
    pub energy: EnergyModel,
    /// Fading draws each reward averages over.
    pub n_mc: usize,
    pub violation_reward: f64,
    pub train: AllocatorConfig,
    pub oracle: OracleConfig,
    pub hillclimb: HillClimbSection,
    pub eval: EvalSection,
}

impl Default for AllocatorSection {
    fn default() -> Self {
        AllocatorSection {
            ranges: ConditionRanges::default(),
            fading: FadingParams::default(),
            bounds: ActionBounds::default(),
            energy: EnergyModel::default(),
            n_mc: 2000,
            violation_reward: 0.0,
            train: AllocatorConfig::default(),
            oracle: OracleConfig::default(),
            hillclimb: HillClimbSection::default(),
            eval: EvalSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HillClimbSection {
    pub iters: usize,
    pub restarts: usize,
    pub step_sigma: f64,
}

impl Default for HillClimbSection {
    fn default() -> Self {
        HillClimbSection { iters: 100, restarts: 4, step_sigma: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub conditions: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { conditions: 20 }
    }
}

fn at(path: &'static str) -> impl Fn(covsem::Error) -> HarnessError {
    move |e| HarnessError::Config { path: path.into(), message: e.to_string() }
}

impl ExperimentConfig {
    /// Parses TOML, reporting the dotted key path of the first bad value.
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let de = toml::Deserializer::new(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| HarnessError::Config {
            path: e.path().to_string(),
            message: e.inner().message().trim().to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// Checks cross-field constraints that serde cannot express.
    pub fn validate(&self) -> Result<(), HarnessError> {
        self.channel.geometry().map_err(at("channel"))?;
        self.channel.fading.validate().map_err(at("channel.fading"))?;
        let s = self.channel.sweep;
        if !(s.step_db > 0.0 && s.stop_dbw >= s.start_dbw) {
            return Err(HarnessError::Config { path: "channel.sweep".into(), message: "need step_db > 0 and stop_dbw >= start_dbw".into() });
        }
        if self.channel.n_mc < covsem::channel::MIN_TRIALS {
            return Err(HarnessError::Config {
                path: "channel.n_mc".into(),
                message: format!("must be at least {}", covsem::channel::MIN_TRIALS),
            });
        }
        self.codec.schedule().map_err(at("codec"))?;
        self.link.params().validate().map_err(at("link"))?;
        let r = &self.regen;
        let fine = covsem::link::LinkParams {
            q_bits: r.ablation_q_bits,
            clip_lo: -r.ablation_clip,
            clip_hi: r.ablation_clip,
            ..self.link.params()
        };
        fine.validate().map_err(at("regen"))?;
        let d = self.dataset;
        if d.train == 0 || d.held_out == 0 || d.height < self.link.ssim.window || d.width < self.link.ssim.window {
            return Err(HarnessError::Config {
                path: "dataset".into(),
                message: "need non-empty splits and images at least as large as the SSIM window".into(),
            });
        }
        for (path, n) in [("regen.n_images", self.regen.n_images), ("surrogate.n_images", self.surrogate.n_images)] {
            if n == 0 || n > d.held_out {
                return Err(HarnessError::Config { path: path.into(), message: "must be in 1..=dataset.held_out".into() });
            }
        }
        if self.regen.beps.iter().any(|b| !(0.0..=0.5).contains(b)) {
            return Err(HarnessError::Config { path: "regen.beps".into(), message: "bit error probabilities must lie in [0, 0.5]".into() });
        }
        let a = &self.allocator;
        a.ranges.validate().map_err(at("allocator.ranges"))?;
        a.bounds.validate().map_err(at("allocator.bounds"))?;
        a.energy.validate().map_err(at("allocator.energy"))?;
        a.train.validate().map_err(at("allocator.train"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_profile_matches_defaults() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(ExperimentConfig::from_toml(text).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let c = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_reports_path() {
        let err = ExperimentConfig::from_toml("[channel]\nkapa_sq = 3.0\n").unwrap_err();
        match err {
            HarnessError::Config { path, message } => {
                assert_eq!(path, "channel.kapa_sq");
                assert!(message.contains("unknown field"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_type_reports_path() {
        let err = ExperimentConfig::from_toml("[allocator.energy]\nbudget = \"lots\"\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref path, .. } if path == "allocator.energy.budget"), "{err:?}");
    }

    #[test]
    fn semantic_errors_name_the_section() {
        let err = ExperimentConfig::from_toml("[channel]\nkappa_sq = -1.0\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref path, .. } if path == "channel"), "{err:?}");
        let err = ExperimentConfig::from_toml("[link]\nq_bits = 1\n").unwrap_err();
        assert!(matches!(err, HarnessError::Config { ref path, .. } if path == "link"), "{err:?}");
    }
}
