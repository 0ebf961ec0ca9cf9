//! Flat `key = value` run configuration. Every key has a default and unknown
//! keys are rejected.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::autogeolabel::LabelRules;
use crate::perturb::{PerturbMode, Perturbation, DEFAULT_G_FLOOR, DEFAULT_MAX_STEPS};
use crate::rasterizer::GridSpec;
use crate::regressor::{Activation, RegressorConfig, RegressorTrainConfig};
use crate::seeds::derive_seed;
use crate::synthcity::{CorpusConfig, SceneParams, TemperatureLaw};
use crate::vae::{KldSchedule, OptimizerKind, VaeArch, VaeConfig, VaeTrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown key `{key}`{}", line_suffix(*.line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("bad value `{value}` for `{key}`: {reason}{}", line_suffix(*.line))]
    BadValue {
        key: String,
        value: String,
        reason: String,
        line: Option<usize>,
    },
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read config: {0}")]
    Io(String),
}

fn line_suffix(line: Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSetting {
    ClosedForm,
    Iterative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,

    pub grid_width: usize,
    pub grid_height: usize,
    pub grid_cell_size: f64,

    pub synth_n_scenes: usize,
    pub synth_tree_density: f64,
    pub synth_building_density: f64,
    pub synth_points_per_m2: f64,
    pub synth_t_base: f64,
    pub synth_k_veg: f64,
    pub synth_noise_sigma: f64,
    pub synth_train_fraction: f64,
    pub synth_seed: Option<u64>,

    pub vae_latent_dim: usize,
    pub vae_arch: VaeArch,
    pub vae_hidden: usize,
    pub vae_hidden2: usize,
    pub vae_epochs: usize,
    pub vae_lr: f64,
    pub vae_batch_size: usize,
    pub vae_ramp_epochs: usize,
    pub vae_lambda_max: f64,
    pub vae_optimizer: OptimizerKind,
    pub vae_seed: Option<u64>,

    pub reg_hidden1: usize,
    pub reg_hidden2: usize,
    pub reg_activation: Activation,
    pub reg_epochs: usize,
    pub reg_lr: f64,
    pub reg_batch_size: usize,
    pub reg_seed: Option<u64>,

    pub perturb_mode: ModeSetting,
    pub perturb_dt_sweep: Vec<f64>,
    pub perturb_g_floor: f64,
    pub perturb_zeta: Option<f64>,
    pub perturb_steps: usize,
    pub perturb_n_scenes: usize,

    pub labels: LabelRules,
    pub alpha: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let scene = SceneParams::default();
        let law = TemperatureLaw::default();
        let sched = KldSchedule::default();
        Self {
            seed: 0,
            threads: 0,
            grid_width: 16,
            grid_height: 16,
            grid_cell_size: 1.0,
            synth_n_scenes: 500,
            synth_tree_density: scene.tree_density,
            synth_building_density: scene.building_density,
            synth_points_per_m2: scene.points_per_m2,
            synth_t_base: law.t_base,
            synth_k_veg: law.k_veg,
            synth_noise_sigma: law.noise_sigma,
            synth_train_fraction: 0.8,
            synth_seed: None,
            vae_latent_dim: 64,
            vae_arch: VaeArch::Patch,
            vae_hidden: 24,
            vae_hidden2: 48,
            vae_epochs: 100,
            vae_lr: 1e-3,
            vae_batch_size: 16,
            vae_ramp_epochs: sched.ramp_epochs,
            vae_lambda_max: sched.lambda_max,
            vae_optimizer: OptimizerKind::Adam,
            vae_seed: None,
            reg_hidden1: 128,
            reg_hidden2: 32,
            reg_activation: Activation::Relu,
            reg_epochs: 200,
            reg_lr: 1e-3,
            reg_batch_size: 8,
            reg_seed: None,
            perturb_mode: ModeSetting::ClosedForm,
            perturb_dt_sweep: vec![1.0, 3.0, 5.0, 10.0, -1.0, -3.0, -5.0, -10.0],
            perturb_g_floor: DEFAULT_G_FLOOR,
            perturb_zeta: None,
            perturb_steps: DEFAULT_MAX_STEPS,
            perturb_n_scenes: 30,
            labels: LabelRules::default(),
            alpha: 0.05,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
        line: None,
    })
}

fn parse_auto<T: std::str::FromStr>(key: &str, value: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    if value == "auto" {
        Ok(None)
    } else {
        parse_num(key, value).map(Some)
    }
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
        line: None,
    }
}

fn auto_str<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref()
        .map(|x| x.to_string())
        .unwrap_or_else(|| "auto".into())
}

pub fn parse_sweep(key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|s| {
            let v: f64 = parse_num(key, s.trim())?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(key, value, "offsets must be finite"))
            }
        })
        .collect()
}

impl RunConfig {
    /// Every key in canonical order.
    pub const KEYS: &'static [&'static str] = &[
        "seed",
        "threads",
        "grid.width",
        "grid.height",
        "grid.cell_size",
        "synth.n_scenes",
        "synth.tree_density",
        "synth.building_density",
        "synth.points_per_m2",
        "synth.t_base",
        "synth.k_veg",
        "synth.noise_sigma",
        "synth.train_fraction",
        "synth.seed",
        "vae.latent_dim",
        "vae.arch",
        "vae.hidden",
        "vae.hidden2",
        "vae.epochs",
        "vae.lr",
        "vae.batch_size",
        "vae.ramp_epochs",
        "vae.lambda_max",
        "vae.optimizer",
        "vae.seed",
        "reg.hidden1",
        "reg.hidden2",
        "reg.activation",
        "reg.epochs",
        "reg.lr",
        "reg.batch_size",
        "reg.seed",
        "perturb.mode",
        "perturb.dt_sweep",
        "perturb.g_floor",
        "perturb.zeta",
        "perturb.steps",
        "perturb.n_scenes",
        "labels.veg_zstd_min",
        "labels.veg_multiret_min",
        "labels.bld_height_min",
        "labels.bld_zstd_max",
        "analysis.alpha",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, v)?,
            "threads" => self.threads = parse_num(key, v)?,
            "grid.width" => self.grid_width = parse_num(key, v)?,
            "grid.height" => self.grid_height = parse_num(key, v)?,
            "grid.cell_size" => self.grid_cell_size = parse_num(key, v)?,
            "synth.n_scenes" => self.synth_n_scenes = parse_num(key, v)?,
            "synth.tree_density" => self.synth_tree_density = parse_num(key, v)?,
            "synth.building_density" => self.synth_building_density = parse_num(key, v)?,
            "synth.points_per_m2" => self.synth_points_per_m2 = parse_num(key, v)?,
            "synth.t_base" => self.synth_t_base = parse_num(key, v)?,
            "synth.k_veg" => self.synth_k_veg = parse_num(key, v)?,
            "synth.noise_sigma" => self.synth_noise_sigma = parse_num(key, v)?,
            "synth.train_fraction" => self.synth_train_fraction = parse_num(key, v)?,
            "synth.seed" => self.synth_seed = parse_auto(key, v)?,
            "vae.latent_dim" => self.vae_latent_dim = parse_num(key, v)?,
            "vae.arch" => {
                self.vae_arch =
                    VaeArch::parse(v).ok_or_else(|| bad(key, v, "expected mlp or patch"))?
            }
            "vae.hidden" => self.vae_hidden = parse_num(key, v)?,
            "vae.hidden2" => self.vae_hidden2 = parse_num(key, v)?,
            "vae.epochs" => self.vae_epochs = parse_num(key, v)?,
            "vae.lr" => self.vae_lr = parse_num(key, v)?,
            "vae.batch_size" => self.vae_batch_size = parse_num(key, v)?,
            "vae.ramp_epochs" => self.vae_ramp_epochs = parse_num(key, v)?,
            "vae.lambda_max" => self.vae_lambda_max = parse_num(key, v)?,
            "vae.optimizer" => {
                self.vae_optimizer =
                    OptimizerKind::parse(v).ok_or_else(|| bad(key, v, "expected adam or sgd"))?
            }
            "vae.seed" => self.vae_seed = parse_auto(key, v)?,
            "reg.hidden1" => self.reg_hidden1 = parse_num(key, v)?,
            "reg.hidden2" => self.reg_hidden2 = parse_num(key, v)?,
            "reg.activation" => {
                self.reg_activation = Activation::parse(v)
                    .ok_or_else(|| bad(key, v, "expected relu, tanh or linear"))?
            }
            "reg.epochs" => self.reg_epochs = parse_num(key, v)?,
            "reg.lr" => self.reg_lr = parse_num(key, v)?,
            "reg.batch_size" => self.reg_batch_size = parse_num(key, v)?,
            "reg.seed" => self.reg_seed = parse_auto(key, v)?,
            "perturb.mode" => {
                self.perturb_mode = match v {
                    "closed_form" => ModeSetting::ClosedForm,
                    "iterative" => ModeSetting::Iterative,
                    _ => return Err(bad(key, v, "expected closed_form or iterative")),
                }
            }
            "perturb.dt_sweep" => self.perturb_dt_sweep = parse_sweep(key, v)?,
            "perturb.g_floor" => self.perturb_g_floor = parse_num(key, v)?,
            "perturb.zeta" => self.perturb_zeta = parse_auto(key, v)?,
            "perturb.steps" => self.perturb_steps = parse_num(key, v)?,
            "perturb.n_scenes" => self.perturb_n_scenes = parse_num(key, v)?,
            "labels.veg_zstd_min" => self.labels.veg_zstd_min = parse_num(key, v)?,
            "labels.veg_multiret_min" => self.labels.veg_multiret_min = parse_num(key, v)?,
            "labels.bld_height_min" => self.labels.bld_height_min = parse_num(key, v)?,
            "labels.bld_zstd_max" => self.labels.bld_zstd_max = parse_num(key, v)?,
            "analysis.alpha" => self.alpha = parse_num(key, v)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.into(),
                    line: None,
                })
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let sweep = || {
            self.perturb_dt_sweep
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        Some(match key {
            "seed" => self.seed.to_string(),
            "threads" => self.threads.to_string(),
            "grid.width" => self.grid_width.to_string(),
            "grid.height" => self.grid_height.to_string(),
            "grid.cell_size" => self.grid_cell_size.to_string(),
            "synth.n_scenes" => self.synth_n_scenes.to_string(),
            "synth.tree_density" => self.synth_tree_density.to_string(),
            "synth.building_density" => self.synth_building_density.to_string(),
            "synth.points_per_m2" => self.synth_points_per_m2.to_string(),
            "synth.t_base" => self.synth_t_base.to_string(),
            "synth.k_veg" => self.synth_k_veg.to_string(),
            "synth.noise_sigma" => self.synth_noise_sigma.to_string(),
            "synth.train_fraction" => self.synth_train_fraction.to_string(),
            "synth.seed" => auto_str(&self.synth_seed),
            "vae.latent_dim" => self.vae_latent_dim.to_string(),
            "vae.arch" => self.vae_arch.name().to_string(),
            "vae.hidden" => self.vae_hidden.to_string(),
            "vae.hidden2" => self.vae_hidden2.to_string(),
            "vae.epochs" => self.vae_epochs.to_string(),
            "vae.lr" => self.vae_lr.to_string(),
            "vae.batch_size" => self.vae_batch_size.to_string(),
            "vae.ramp_epochs" => self.vae_ramp_epochs.to_string(),
            "vae.lambda_max" => self.vae_lambda_max.to_string(),
            "vae.optimizer" => self.vae_optimizer.name().to_string(),
            "vae.seed" => auto_str(&self.vae_seed),
            "reg.hidden1" => self.reg_hidden1.to_string(),
            "reg.hidden2" => self.reg_hidden2.to_string(),
            "reg.activation" => self.reg_activation.name().to_string(),
            "reg.epochs" => self.reg_epochs.to_string(),
            "reg.lr" => self.reg_lr.to_string(),
            "reg.batch_size" => self.reg_batch_size.to_string(),
            "reg.seed" => auto_str(&self.reg_seed),
            "perturb.mode" => match self.perturb_mode {
                ModeSetting::ClosedForm => "closed_form".into(),
                ModeSetting::Iterative => "iterative".into(),
            },
            "perturb.dt_sweep" => sweep(),
            "perturb.g_floor" => self.perturb_g_floor.to_string(),
            "perturb.zeta" => auto_str(&self.perturb_zeta),
            "perturb.steps" => self.perturb_steps.to_string(),
            "perturb.n_scenes" => self.perturb_n_scenes.to_string(),
            "labels.veg_zstd_min" => self.labels.veg_zstd_min.to_string(),
            "labels.veg_multiret_min" => self.labels.veg_multiret_min.to_string(),
            "labels.bld_height_min" => self.labels.bld_height_min.to_string(),
            "labels.bld_zstd_max" => self.labels.bld_zstd_max.to_string(),
            "analysis.alpha" => self.alpha.to_string(),
            _ => return None,
        })
    }

    /// Applies a config file's `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            self.set(k.trim(), v).map_err(|e| with_line(e, i + 1))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Fully resolved configuration, one `key = value` per line. Stage seeds
    /// left on `auto` are written as the derived value.
    pub fn to_text(&self) -> String {
        let mut resolved = self.clone();
        resolved.synth_seed = Some(self.synth_seed());
        resolved.vae_seed = Some(self.vae_seed());
        resolved.reg_seed = Some(self.reg_seed());
        let mut s = String::new();
        for key in Self::KEYS {
            let _ = writeln!(s, "{key} = {}", resolved.get(key).expect("known key"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.grid().map_err(ConfigError::Invalid)?;
        self.scene_params()
            .validate()
            .map_err(ConfigError::Invalid)?;
        self.law().validate().map_err(ConfigError::Invalid)?;
        self.labels.validate().map_err(ConfigError::Invalid)?;
        if self.synth_n_scenes == 0 {
            return invalid("synth.n_scenes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.synth_train_fraction) {
            return invalid("synth.train_fraction must lie in [0, 1]".into());
        }
        if self.vae_latent_dim == 0 || self.vae_batch_size == 0 || self.reg_batch_size == 0 {
            return invalid("latent_dim and batch sizes must be positive".into());
        }
        for (k, v) in [("vae.lr", self.vae_lr), ("reg.lr", self.reg_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return invalid(format!("{k} must be positive"));
            }
        }
        if !(self.vae_lambda_max >= 0.0 && self.vae_lambda_max.is_finite()) {
            return invalid("vae.lambda_max must be non-negative".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return invalid("analysis.alpha must lie in (0, 1)".into());
        }
        if self.perturb_n_scenes == 0 {
            return invalid("perturb.n_scenes must be at least 1".into());
        }
        self.perturbation(0.0)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec, String> {
        GridSpec::new(self.grid_width, self.grid_height, self.grid_cell_size)
            .map_err(|e| e.to_string())
    }

    pub fn scene_params(&self) -> SceneParams {
        SceneParams {
            extent: self.grid_width as f64 * self.grid_cell_size,
            cell_size: self.grid_cell_size,
            tree_density: self.synth_tree_density,
            building_density: self.synth_building_density,
            points_per_m2: self.synth_points_per_m2,
            ..SceneParams::default()
        }
    }

    pub fn law(&self) -> TemperatureLaw {
        TemperatureLaw {
            t_base: self.synth_t_base,
            k_veg: self.synth_k_veg,
            noise_sigma: self.synth_noise_sigma,
        }
    }

    pub fn synth_seed(&self) -> u64 {
        self.synth_seed
            .unwrap_or_else(|| derive_seed(self.seed, "synth"))
    }

    pub fn vae_seed(&self) -> u64 {
        self.vae_seed
            .unwrap_or_else(|| derive_seed(self.seed, "vae"))
    }

    pub fn reg_seed(&self) -> u64 {
        self.reg_seed
            .unwrap_or_else(|| derive_seed(self.seed, "reg"))
    }

    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            n_scenes: self.synth_n_scenes,
            params: self.scene_params(),
            law: self.law(),
            seed: self.synth_seed(),
            train_fraction: self.synth_train_fraction,
        }
    }

    pub fn vae_config(&self) -> Result<VaeConfig, String> {
        Ok(VaeConfig {
            latent_dim: self.vae_latent_dim,
            arch: self.vae_arch,
            hidden: self.vae_hidden,
            hidden2: self.vae_hidden2,
            grid: self.grid()?,
        })
    }

    pub fn vae_train(&self) -> VaeTrainConfig {
        VaeTrainConfig {
            epochs: self.vae_epochs,
            lr: self.vae_lr,
            batch_size: self.vae_batch_size,
            schedule: KldSchedule {
                ramp_epochs: self.vae_ramp_epochs,
                lambda_max: self.vae_lambda_max,
            },
            optimizer: self.vae_optimizer,
            seed: self.vae_seed(),
        }
    }

    pub fn reg_config(&self) -> RegressorConfig {
        RegressorConfig {
            latent_dim: self.vae_latent_dim,
            hidden1: self.reg_hidden1,
            hidden2: self.reg_hidden2,
            activation: self.reg_activation,
        }
    }

    pub fn reg_train(&self) -> RegressorTrainConfig {
        RegressorTrainConfig {
            epochs: self.reg_epochs,
            lr: self.reg_lr,
            batch_size: self.reg_batch_size,
            optimizer: OptimizerKind::Adam,
            seed: self.reg_seed(),
        }
    }

    pub fn perturbation(&self, delta_t: f64) -> Perturbation {
        Perturbation {
            delta_t,
            mode: match self.perturb_mode {
                ModeSetting::ClosedForm => PerturbMode::ClosedForm,
                ModeSetting::Iterative => PerturbMode::Iterative {
                    zeta: self.perturb_zeta,
                    steps: self.perturb_steps,
                },
            },
            g_floor: self.perturb_g_floor,
        }
    }

    /// The configured sweep with a leading zero baseline and duplicates removed.
    pub fn sweep_with_baseline(&self) -> Vec<f64> {
        let mut out = vec![0.0];
        for &dt in &self.perturb_dt_sweep {
            let dt = if dt == 0.0 { 0.0 } else { dt };
            if !out.contains(&dt) {
                out.push(dt);
            }
        }
        out
    }
}

fn with_line(e: ConfigError, line: usize) -> ConfigError {
    match e {
        ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey {
            key,
            line: Some(line),
        },
        ConfigError::BadValue {
            key, value, reason, ..
        } => ConfigError::BadValue {
            key,
            value,
            reason,
            line: Some(line),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_round_trips() {
        let c = RunConfig::default();
        for key in RunConfig::KEYS {
            let v = c.get(key).unwrap_or_else(|| panic!("{key} has no getter"));
            let mut d = RunConfig::default();
            d.set(key, &v).unwrap_or_else(|e| panic!("{key}: {e}"));
            assert_eq!(d, c, "{key}");
        }
        assert!(c.validate().is_ok());
    }

    #[test]
    fn resolved_text_replays_exactly() {
        let mut c = RunConfig::from_text("seed = 7\nvae.latent_dim = 8\n").unwrap();
        c.perturb_dt_sweep = vec![0.5, -2.0];
        let text = c.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.vae_seed(), c.vae_seed());
        assert_eq!(back.perturb_dt_sweep, vec![0.5, -2.0]);
    }

    #[test]
    fn unknown_keys_are_rejected_with_line() {
        let e = RunConfig::from_text("seed = 1\n\nvae.latnt_dim = 4\n").unwrap_err();
        assert_eq!(
            e,
            ConfigError::UnknownKey {
                key: "vae.latnt_dim".into(),
                line: Some(3)
            }
        );
        assert!(e.to_string().contains("vae.latnt_dim"));
        assert_eq!(
            RunConfig::from_text("just words").unwrap_err(),
            ConfigError::Syntax(1)
        );
    }

    #[test]
    fn bad_values() {
        assert!(matches!(
            RunConfig::from_text("vae.arch = conv").unwrap_err(),
            ConfigError::BadValue { line: Some(1), .. }
        ));
        assert!(RunConfig::from_text("vae.latent_dim = -3").is_err());
        assert!(RunConfig::from_text("perturb.dt_sweep = 1,x").is_err());
        let c = RunConfig::from_text("labels.bld_zstd_max = 0.9").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::from_text("# desk run\nseed = 3 # master\n\n").unwrap();
        assert_eq!(c.seed, 3);
    }

    #[test]
    fn sweep_gets_a_single_baseline() {
        let mut c = RunConfig::default();
        assert_eq!(c.sweep_with_baseline().len(), 9);
        c.perturb_dt_sweep = vec![0.0, 1.0, -0.0, 1.0];
        assert_eq!(c.sweep_with_baseline(), vec![0.0, 1.0]);
    }

    #[test]
    fn stage_seeds_follow_the_master() {
        let a = RunConfig::from_text("seed = 1").unwrap();
        let b = RunConfig::from_text("seed = 2").unwrap();
        assert_ne!(a.vae_seed(), b.vae_seed());
        assert_ne!(a.vae_seed(), a.reg_seed());
        let pinned = RunConfig::from_text("seed = 2\nvae.seed = 99").unwrap();
        assert_eq!(pinned.vae_seed(), 99);
    }
}
