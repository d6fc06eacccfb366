//! Dataset synthesis and the line-oriented dataset text format.
//!
//! Generation fans out across worker threads; every sample derives its own
//! RNG stream from `hash(master_seed, sample_index)`, so the output is
//! byte-identical regardless of thread count.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};

use rayon::prelude::*;

use super::grasp::{self, AugmentConfig, GraspSpec};
use super::{SensorConfig, SimError, TactileImprint};
use crate::geom::{Mat3, ObjectModel, RigidPose, Vec3};
use crate::seed::{make_rng, STREAM_DATASET};

/// One supervised example: ground-truth object-to-gripper pose plus the
/// imprint observed there.
#[derive(Debug, Clone)]
pub struct Sample {
    pub pose: RigidPose,
    pub imprint: TactileImprint,
    pub object_id: String,
}

/// Dataset synthesis settings.
#[derive(Debug, Clone)]
pub struct DatasetGenConfig {
    pub n: usize,
    pub master_seed: u64,
    /// Written into every sample; must contain no whitespace.
    pub object_id: String,
    /// `None` draws the approach axis uniformly among the model's grasp axes
    /// with default randomization; `Some` pins one spec for every sample.
    pub grasp: Option<GraspSpec>,
    /// Bake observation noise into the stored imprints.
    pub aug: Option<AugmentConfig>,
    /// Per-sensor drop probability (0 keeps all sensors present).
    pub mask_prob: f64,
}

impl DatasetGenConfig {
    pub fn new(n: usize, master_seed: u64, object_id: impl Into<String>) -> Self {
        DatasetGenConfig {
            n,
            master_seed,
            object_id: object_id.into(),
            grasp: None,
            aug: None,
            mask_prob: 0.0,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::BadConfig("dataset size must be ≥ 1".into()));
        }
        if self.object_id.is_empty() || self.object_id.chars().any(char::is_whitespace) {
            return Err(SimError::BadConfig(format!(
                "object_id {:?} must be non-empty and whitespace-free",
                self.object_id
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(SimError::BadConfig(format!("mask_prob {} not in [0,1]", self.mask_prob)));
        }
        Ok(())
    }
}

/// Synthesizes `config.n` grasp samples in parallel. Per-sample draw order
/// (one derived RNG each): approach axis, grasp draw(s), augmentation noise,
/// sensor masking.
pub fn generate_dataset(
    model: &ObjectModel,
    sensor: &SensorConfig,
    config: &DatasetGenConfig,
) -> Result<Vec<Sample>, SimError> {
    config.validate()?;
    sensor.validate()?;
    if let Some(g) = &config.grasp {
        g.validate(model, sensor)?;
    }
    (0..config.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = make_rng(config.master_seed, &[STREAM_DATASET, i as u64]);
            let spec = match &config.grasp {
                Some(g) => *g,
                None => {
                    use rand::Rng;
                    let idx = rng.random_range(0..model.grasp_axes().len());
                    GraspSpec::default_for_axis(model, model.grasp_axes()[idx])
                }
            };
            let mut sample = grasp::synthesize_grasp(model, &spec, sensor, &mut rng)?;
            if let Some(aug) = &config.aug {
                grasp::augment_imprint(&mut sample.imprint, aug, sensor, &mut rng);
            }
            if config.mask_prob > 0.0 {
                grasp::mask_imprint(&mut sample.imprint, config.mask_prob, &mut rng);
            }
            sample.object_id = config.object_id.clone();
            Ok(sample)
        })
        .collect()
}

/// Writes the `ebmpose-dataset v1` text format: one record per line —
/// object id, rotation (9 floats, row-major), translation (3 floats, mm),
/// then `k`, k present flags, grid dims, and the depths in mm to 4 decimals.
pub fn write_dataset(w: &mut impl Write, samples: &[Sample]) -> Result<(), SimError> {
    let mut w = BufWriter::new(w);
    writeln!(w, "ebmpose-dataset v1")?;
    for s in samples {
        if s.object_id.is_empty() || s.object_id.chars().any(char::is_whitespace) {
            return Err(SimError::BadConfig(format!(
                "object_id {:?} is not serializable",
                s.object_id
            )));
        }
        write!(w, "{}", s.object_id)?;
        let r = s.pose.rotation;
        for i in 0..3 {
            for j in 0..3 {
                write!(w, " {}", r[(i, j)])?;
            }
        }
        let t = s.pose.translation;
        write!(w, " {} {} {}", t.x, t.y, t.z)?;
        let imp = &s.imprint;
        write!(w, " {}", imp.k())?;
        for &p in &imp.present {
            write!(w, " {}", if p { 1 } else { 0 })?;
        }
        write!(w, " {} {}", imp.grid_h(), imp.grid_w())?;
        for d in imp.flat() {
            write!(w, " {d:.4}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the dataset format; contact fractions are recomputed from the
/// stored depths. Errors carry 1-based line numbers.
pub fn read_dataset(r: &mut impl Read) -> Result<Vec<Sample>, SimError> {
    let reader = BufReader::new(r);
    let mut samples = Vec::new();
    let mut lines = reader.lines();

    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| SimError::Parse { line: 1, msg: "empty file".into() })?;
    if header.trim() != "ebmpose-dataset v1" {
        return Err(SimError::Parse {
            line: 1,
            msg: format!("expected `ebmpose-dataset v1`, got {header:?}"),
        });
    }

    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(parse_record(&line, line_no)?);
    }
    Ok(samples)
}

/// Whitespace-token cursor over one record line; every failure carries the
/// 1-based line number.
struct Tokens<'a> {
    toks: Vec<&'a str>,
    pos: usize,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn err(&self, msg: String) -> SimError {
        SimError::Parse { line: self.line, msg }
    }

    fn next(&mut self, what: &str) -> Result<&'a str, SimError> {
        let t = self
            .toks
            .get(self.pos)
            .ok_or_else(|| self.err(format!("record truncated: missing {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn f64(&mut self, what: &str) -> Result<f64, SimError> {
        let t = self.next(what)?;
        t.parse::<f64>().map_err(|e| self.err(format!("bad {what} {t:?}: {e}")))
    }

    fn usize(&mut self, what: &str) -> Result<usize, SimError> {
        let t = self.next(what)?;
        t.parse::<usize>().map_err(|e| self.err(format!("bad {what} {t:?}: {e}")))
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<Sample, SimError> {
    let mut tok = Tokens { toks: line.split_whitespace().collect(), pos: 0, line: line_no };

    let object_id = tok.next("object id")?.to_string();
    let mut rv = [0.0; 9];
    for v in &mut rv {
        *v = tok.f64("rotation entry")?;
    }
    let rotation = Mat3::from_row_slice(&rv);
    let t = Vec3::new(
        tok.f64("translation entry")?,
        tok.f64("translation entry")?,
        tok.f64("translation entry")?,
    );
    let pose = RigidPose::new(rotation, t);
    if !pose.is_valid() {
        return Err(tok.err("pose is not a valid rigid transform".into()));
    }

    let k = tok.usize("sensor count")?;
    if !(1..=16).contains(&k) {
        return Err(tok.err(format!("implausible sensor count {k}")));
    }
    let mut present = Vec::with_capacity(k);
    for i in 0..k {
        match tok.next("present flag")? {
            "1" => present.push(true),
            "0" => present.push(false),
            other => return Err(tok.err(format!("bad present flag [{i}] {other:?}"))),
        }
    }
    let h = tok.usize("grid height")?;
    let w = tok.usize("grid width")?;
    if h < 1 || w < 1 {
        return Err(tok.err(format!("bad grid dims {h}×{w}")));
    }

    let mut depth = Vec::with_capacity(k * h * w);
    for _ in 0..k * h * w {
        let d = tok.f64("depth value")?;
        if !d.is_finite() || d < 0.0 {
            return Err(tok.err(format!("bad depth value {d}")));
        }
        depth.push(d);
    }
    if tok.pos < tok.toks.len() {
        return Err(tok.err("trailing tokens after depth data".into()));
    }

    let msg_line = tok.line;
    let imprint = TactileImprint::from_parts(k, h, w, depth, present)
        .map_err(|e| SimError::Parse { line: msg_line, msg: e.to_string() })?;
    Ok(Sample { pose, imprint, object_id })
}
