//! Run configuration: every module's settings in one flat key-value text
//! document.
//!
//! Format: one `key value` pair per line, `#` starts a comment line, blank
//! lines are ignored. Keys carry a section prefix (`sensor.`, `arch.`,
//! `schedule.`, `prior.`, `pipeline.`, `train.`) except the master `seed`.
//! Unknown and duplicate keys are rejected with their line number so typos
//! cannot silently fall back to defaults; missing keys do take defaults, so
//! a partial file (or an empty one) is a valid override set. Writing always
//! emits every key in a fixed order, and `parse(write(c)) == c` exactly
//! (floats are printed with Rust's shortest round-trip formatting).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::diffusion::NoiseSchedule;
use crate::energynet::{ArchConfig, TrainConfig};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a run needs: one master seed plus the per-module configs.
/// The master seed is fanned out to the dataset/init/noise/prior/eval
/// streams through the seed module, so two runs with equal configs are
/// bit-identical in single-threaded mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub arch: ArchConfig,
    pub schedule: NoiseSchedule,
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            arch: ArchConfig::default(),
            schedule: NoiseSchedule::default(),
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Cross-module consistency on top of each component's own checks.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.arch.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.schedule.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.pipeline
            .validate(self.schedule.eps)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<(), ConfigError> {
        let a = &self.arch;
        let s = &self.schedule;
        let p = &self.pipeline;
        let t = &self.train;
        writeln!(w, "seed {}", self.seed)?;
        writeln!(w, "sensor.grid_h {}", a.sensor.grid_h)?;
        writeln!(w, "sensor.grid_w {}", a.sensor.grid_w)?;
        writeln!(w, "sensor.plate_half_gap {}", a.sensor.plate_half_gap)?;
        writeln!(w, "sensor.pixel_pitch {}", a.sensor.pixel_pitch)?;
        writeln!(w, "sensor.max_depth {}", a.sensor.max_depth)?;
        writeln!(w, "arch.workspace_half_extent {}", a.workspace_half_extent)?;
        writeln!(w, "arch.nominal_indentation {}", a.nominal_indentation)?;
        writeln!(w, "arch.enc_hidden {}", a.enc_hidden)?;
        writeln!(w, "arch.enc_feat {}", a.enc_feat)?;
        writeln!(w, "arch.obj_hidden {}", a.obj_hidden)?;
        writeln!(w, "arch.obj_feat {}", a.obj_feat)?;
        writeln!(w, "arch.obj_points {}", a.obj_points)?;
        writeln!(w, "arch.time_freqs {}", a.time_freqs)?;
        writeln!(w, "arch.time_feat {}", a.time_feat)?;
        writeln!(w, "arch.fusion_hidden {}", a.fusion_hidden)?;
        writeln!(w, "schedule.sigma_min {}", s.sigma_min)?;
        writeln!(w, "schedule.sigma_max {}", s.sigma_max)?;
        writeln!(w, "schedule.eps {}", s.eps)?;
        writeln!(w, "prior.m {}", p.prior.m)?;
        writeln!(w, "prior.level {}", p.prior.level)?;
        writeln!(w, "prior.n_inplane {}", p.prior.n_inplane)?;
        writeln!(w, "prior.sigma_trans {}", p.prior.sigma_trans)?;
        writeln!(w, "prior.allow_cycle {}", p.prior.allow_cycle)?;
        writeln!(w, "pipeline.k_candidates {}", p.k_candidates)?;
        writeln!(w, "pipeline.t0_estimate {}", p.t0_estimate)?;
        writeln!(w, "pipeline.t0_track {}", p.t0_track)?;
        writeln!(w, "pipeline.sigma_track {}", p.sigma_track)?;
        writeln!(w, "pipeline.prefilter {}", p.stages.prefilter)?;
        writeln!(w, "pipeline.refine {}", p.stages.refine)?;
        writeln!(w, "pipeline.postrank {}", p.stages.postrank)?;
        writeln!(w, "pipeline.ode_rtol {}", p.ode_tol.0)?;
        writeln!(w, "pipeline.ode_atol {}", p.ode_tol.1)?;
        writeln!(w, "pipeline.render_interval {}", p.render_interval)?;
        writeln!(w, "train.batch_size {}", t.batch_size)?;
        writeln!(w, "train.n_steps {}", t.n_steps)?;
        writeln!(w, "train.learning_rate {}", t.learning_rate)?;
        writeln!(w, "train.augment {}", t.augment)?;
        writeln!(w, "train.mask_prob {}", t.mask_prob)?;
        writeln!(w, "train.seed {}", t.seed)?;
        Ok(())
    }

    pub fn write_file<P: AsRef<Path>>(&self, path: P) -> Result<(), ConfigError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn parse<R: Read>(mut r: R) -> Result<Self, ConfigError> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        Self::parse_str(&text)
    }

    pub fn parse_file<P: AsRef<Path>>(path: P) -> Result<Self, ConfigError> {
        Self::parse(File::open(path)?)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| {
                ConfigError::Parse {
                    line: line_no,
                    msg: format!("expected 'key value', found '{line}'"),
                }
            })?;
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(ConfigError::Parse {
                    line: line_no,
                    msg: format!("duplicate key '{key}'"),
                });
            }
            seen.push(key.to_string());
            cfg.apply(key, value)
                .map_err(|msg| ConfigError::Parse { line: line_no, msg })?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse()
                .map_err(|_| format!("bad value '{v}' for key '{key}'"))
        }
        let a = &mut self.arch;
        let p = &mut self.pipeline;
        match key {
            "seed" => self.seed = num(key, value)?,
            "sensor.grid_h" => a.sensor.grid_h = num(key, value)?,
            "sensor.grid_w" => a.sensor.grid_w = num(key, value)?,
            "sensor.plate_half_gap" => a.sensor.plate_half_gap = num(key, value)?,
            "sensor.pixel_pitch" => a.sensor.pixel_pitch = num(key, value)?,
            "sensor.max_depth" => a.sensor.max_depth = num(key, value)?,
            "arch.workspace_half_extent" => a.workspace_half_extent = num(key, value)?,
            "arch.nominal_indentation" => a.nominal_indentation = num(key, value)?,
            "arch.enc_hidden" => a.enc_hidden = num(key, value)?,
            "arch.enc_feat" => a.enc_feat = num(key, value)?,
            "arch.obj_hidden" => a.obj_hidden = num(key, value)?,
            "arch.obj_feat" => a.obj_feat = num(key, value)?,
            "arch.obj_points" => a.obj_points = num(key, value)?,
            "arch.time_freqs" => a.time_freqs = num(key, value)?,
            "arch.time_feat" => a.time_feat = num(key, value)?,
            "arch.fusion_hidden" => a.fusion_hidden = num(key, value)?,
            "schedule.sigma_min" => self.schedule.sigma_min = num(key, value)?,
            "schedule.sigma_max" => self.schedule.sigma_max = num(key, value)?,
            "schedule.eps" => self.schedule.eps = num(key, value)?,
            "prior.m" => p.prior.m = num(key, value)?,
            "prior.level" => p.prior.level = num(key, value)?,
            "prior.n_inplane" => p.prior.n_inplane = num(key, value)?,
            "prior.sigma_trans" => p.prior.sigma_trans = num(key, value)?,
            "prior.allow_cycle" => p.prior.allow_cycle = num(key, value)?,
            "pipeline.k_candidates" => p.k_candidates = num(key, value)?,
            "pipeline.t0_estimate" => p.t0_estimate = num(key, value)?,
            "pipeline.t0_track" => p.t0_track = num(key, value)?,
            "pipeline.sigma_track" => p.sigma_track = num(key, value)?,
            "pipeline.prefilter" => p.stages.prefilter = num(key, value)?,
            "pipeline.refine" => p.stages.refine = num(key, value)?,
            "pipeline.postrank" => p.stages.postrank = num(key, value)?,
            "pipeline.ode_rtol" => p.ode_tol.0 = num(key, value)?,
            "pipeline.ode_atol" => p.ode_tol.1 = num(key, value)?,
            "pipeline.render_interval" => p.render_interval = num(key, value)?,
            "train.batch_size" => self.train.batch_size = num(key, value)?,
            "train.n_steps" => self.train.n_steps = num(key, value)?,
            "train.learning_rate" => self.train.learning_rate = num(key, value)?,
            "train.augment" => self.train.augment = num(key, value)?,
            "train.mask_prob" => self.train.mask_prob = num(key, value)?,
            "train.seed" => self.train.seed = num(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }
}
