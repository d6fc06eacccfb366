//! Direct pose regression baseline.
//!
//! Shares the energy model's sensor and object encoders (identical widths,
//! identical parameter initialization scheme) but replaces the conditional
//! head with a plain readout: the fused features map straight to the
//! 9-vector pose encoding (two rotation columns plus the normalized
//! translation). No time embedding, no candidate-pose input, no rendering.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::ad::{NodeId, Tape};
use crate::energynet::checkpoint::{write_arch, write_params, HeaderReader, MAGIC};
use crate::energynet::graph::{
    encode_object, encode_sensors, farthest_point_subsample, object_input, BlockDesc, Cursor,
    EncOffsets,
};
use crate::energynet::{
    check_imprint_shape, AdamState, ArchConfig, EnergyError, TrainConfig, TrainReport,
};
use crate::geom::{ObjectModel, Pose9, RigidPose};
use crate::seed::{make_rng, STREAM_INIT, STREAM_NOISE};
use crate::sim::{augment_imprint, mask_imprint, AugmentConfig, Sample, TactileImprint};

use super::BaselineError;

const KIND_REGRESSOR: &str = "regressor";

/// 9-vector encoding of the identity pose; the head bias starts here so an
/// untrained regressor already outputs a well-formed rotation.
const IDENTITY_POSE9: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];

/// Parameter layout: observation encoder, object encoder, three head layers.
struct RegLayout {
    obs: EncOffsets,
    obj: EncOffsets,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    blocks: Vec<BlockDesc>,
    total: usize,
}

impl RegLayout {
    fn new(arch: &ArchConfig) -> Self {
        let px = arch.sensor.pixels_per_sensor();
        let fin = fusion_in(arch);
        let fh = arch.fusion_hidden;
        let mut c = Cursor::new();
        let obs = c.enc(px, arch.enc_hidden, arch.enc_feat);
        let obj = c.enc(3, arch.obj_hidden, arch.obj_feat);
        let w1 = c.take(fh, fin);
        let b1 = c.take(fh, 0);
        let w2 = c.take(fh, fh);
        let b2 = c.take(fh, 0);
        let w3 = c.take(9, fh);
        let b3 = c.take(9, 0);
        let (total, blocks) = c.finish();
        RegLayout { obs, obj, w1, b1, w2, b2, w3, b3, blocks, total }
    }
}

fn fusion_in(arch: &ArchConfig) -> usize {
    crate::sim::N_SENSORS * arch.enc_feat + arch.obj_feat
}

/// Pose regressor sharing the energy model's encoder architecture.
///
/// The `arch` type is shared with the energy model so the fairness contract
/// (identical encoder hyperparameters) is visible in the types; the time
/// embedding fields are carried but unused here.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorModel {
    pub arch: ArchConfig,
    pub params: Vec<f64>,
}

impl RegressorModel {
    pub fn n_params(arch: &ArchConfig) -> usize {
        RegLayout::new(arch).total
    }

    /// Weights drawn N(0, 1/fan_in), biases zero — the same scheme as the
    /// energy model — except the head bias, which starts at the identity
    /// pose so the untrained output is always a decodable rotation.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self, BaselineError> {
        arch.validate().map_err(BaselineError::Energy)?;
        let lay = RegLayout::new(&arch);
        let mut params = vec![0.0; lay.total];
        let mut rng = make_rng(seed, &[STREAM_INIT]);
        for b in &lay.blocks {
            if b.cols == 0 {
                continue;
            }
            let scale = 1.0 / (b.cols as f64).sqrt();
            for v in params[b.off..b.off + b.len()].iter_mut() {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        params[lay.b3..lay.b3 + 9].copy_from_slice(&IDENTITY_POSE9);
        Ok(Self { arch, params })
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        self.arch.validate().map_err(BaselineError::Energy)?;
        let expect = Self::n_params(&self.arch);
        if self.params.len() != expect {
            return Err(BaselineError::BadConfig(format!(
                "{} parameters, layout needs {expect}",
                self.params.len()
            )));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::BadConfig("non-finite parameter".into()));
        }
        Ok(())
    }

    fn layout(&self) -> RegLayout {
        RegLayout::new(&self.arch)
    }
}

/// Build the prediction subgraph for one imprint on an existing tape, given
/// the already-encoded object feature node.
fn build_prediction(
    tape: &mut Tape,
    lay: &RegLayout,
    arch: &ArchConfig,
    imp: &TactileImprint,
    obj_feat: NodeId,
) -> NodeId {
    let feats = encode_sensors(tape, &lay.obs, arch, imp, &imp.present);
    let mut parts = feats;
    parts.push(obj_feat);
    let fused = tape.concat(&parts);
    let fh = arch.fusion_hidden;
    let a1 = tape.affine(lay.w1, lay.b1, fh, fusion_in(arch), fused);
    let h1 = tape.silu(a1);
    let a2 = tape.affine(lay.w2, lay.b2, fh, fh, h1);
    let h2 = tape.silu(a2);
    tape.affine(lay.w3, lay.b3, 9, fh, h2)
}

fn encode_object_on(
    tape: &mut Tape,
    lay: &RegLayout,
    arch: &ArchConfig,
    object: &ObjectModel,
) -> NodeId {
    let pts = farthest_point_subsample(object.points(), arch.obj_points);
    let obj_in = object_input(&pts, arch.workspace_half_extent);
    encode_object(tape, &lay.obj, arch, &obj_in)
}

/// Predict the pose for one observation. Deterministic given the model.
pub fn regress(
    model: &RegressorModel,
    object: &ObjectModel,
    obs: &TactileImprint,
) -> Result<RigidPose, BaselineError> {
    model.validate()?;
    check_imprint_shape(&model.arch, obs).map_err(BaselineError::Energy)?;
    let lay = model.layout();
    let mut tape = Tape::new(&model.params);
    let obj_feat = encode_object_on(&mut tape, &lay, &model.arch, object);
    let pred = build_prediction(&mut tape, &lay, &model.arch, obs, obj_feat);
    let v = tape.value(pred);
    let mut a = [0.0; 9];
    a.copy_from_slice(v);
    let p9 = Pose9::from_array(&a);
    Ok(p9.unpack(model.arch.workspace_half_extent)?)
}

struct RegItem {
    imprint: TactileImprint,
    target: [f64; 9],
}

/// One batch tape: mean over items of the squared 9-vector error
/// (translation MSE plus 6D-rotation MSE in one readout).
fn build_loss_tape<'a>(
    model: &'a RegressorModel,
    object: &ObjectModel,
    batch: &[RegItem],
) -> Result<(Tape<'a>, NodeId), BaselineError> {
    if batch.is_empty() {
        return Err(BaselineError::BadConfig("empty regression batch".into()));
    }
    model.validate()?;
    let lay = model.layout();
    let mut tape = Tape::new(&model.params);
    let obj_feat = encode_object_on(&mut tape, &lay, &model.arch, object);
    let mut sqs = Vec::with_capacity(batch.len());
    for item in batch {
        check_imprint_shape(&model.arch, &item.imprint).map_err(BaselineError::Energy)?;
        if item.target.iter().any(|v| !v.is_finite()) {
            return Err(BaselineError::BadConfig("non-finite regression target".into()));
        }
        let pred = build_prediction(&mut tape, &lay, &model.arch, &item.imprint, obj_feat);
        let tgt = tape.input(&item.target);
        let diff = tape.sub(pred, tgt);
        sqs.push(tape.dot(diff, diff));
    }
    let stacked = tape.concat(&sqs);
    let weights = tape.input(&vec![1.0 / batch.len() as f64; batch.len()]);
    let loss = tape.dot(stacked, weights);
    Ok((tape, loss))
}

fn reg_train_step(
    model: &mut RegressorModel,
    object: &ObjectModel,
    batch: &[RegItem],
    opt: &mut AdamState,
    lr: f64,
) -> Result<f64, BaselineError> {
    let (loss_value, grad) = {
        let (tape, loss) = build_loss_tape(model, object, batch)?;
        let v = tape.value(loss)[0];
        let g = tape.backward(loss);
        (v, g.param)
    };
    opt.apply(&mut model.params, &grad, lr);
    Ok(loss_value)
}

/// Train the regressor with the same optimizer, sampling, augmentation, and
/// masking path as the energy model (fairness contract); only the loss and
/// head differ. Deterministic for a given seed.
pub fn train_regressor(
    model: &mut RegressorModel,
    object: &ObjectModel,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<TrainReport, BaselineError> {
    config.validate().map_err(BaselineError::Energy)?;
    if dataset.is_empty() {
        return Err(BaselineError::BadConfig("empty training dataset".into()));
    }
    for s in dataset {
        check_imprint_shape(&model.arch, &s.imprint).map_err(BaselineError::Energy)?;
    }
    let mut rng = make_rng(config.seed, &[STREAM_NOISE]);
    let aug = AugmentConfig::default();
    let sensor = model.arch.sensor;
    let half_extent = model.arch.workspace_half_extent;
    let mut opt = AdamState::new(model.params.len());
    let mut losses = Vec::with_capacity(config.n_steps);
    for step in 0..config.n_steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let idx = rng.random_range(0..dataset.len());
            let sample = &dataset[idx];
            let mut imprint = sample.imprint.clone();
            if config.augment {
                augment_imprint(&mut imprint, &aug, &sensor, &mut rng);
            }
            if config.mask_prob > 0.0 {
                mask_imprint(&mut imprint, config.mask_prob, &mut rng);
            }
            let target = Pose9::pack(&sample.pose, half_extent).to_array();
            batch.push(RegItem { imprint, target });
        }
        let loss = reg_train_step(model, object, &batch, &mut opt, config.learning_rate)?;
        if !loss.is_finite() {
            return Err(BaselineError::NonFiniteLoss { step });
        }
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}

/// Serialize: same container as the energy checkpoint but kind `regressor`
/// and no noise-schedule lines. Blocks: observation encoder (w1 b1 w2 b2),
/// object encoder (same), head (w1 b1 w2 b2 w3 b3).
pub fn save_regressor<W: Write>(w: &mut W, model: &RegressorModel) -> Result<(), BaselineError> {
    model.validate()?;
    let io_result = (|| -> std::io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "kind {KIND_REGRESSOR}")?;
        write_arch(w, &model.arch)?;
        write_params(w, &model.params)
    })();
    io_result.map_err(|e| BaselineError::Energy(EnergyError::Io(e)))
}

pub fn save_regressor_file<P: AsRef<Path>>(
    path: P,
    model: &RegressorModel,
) -> Result<(), BaselineError> {
    let mut w = BufWriter::new(File::create(path).map_err(EnergyError::Io)?);
    save_regressor(&mut w, model)?;
    w.flush().map_err(EnergyError::Io)?;
    Ok(())
}

pub fn load_regressor<R: Read>(r: R) -> Result<RegressorModel, BaselineError> {
    let mut h = HeaderReader::new(r);
    h.expect_magic()?;
    h.expect_kind(KIND_REGRESSOR)?;
    let arch = h.read_arch()?;
    let params = h.read_params()?;
    h.expect_end()?;
    arch.validate()
        .map_err(|e| EnergyError::CorruptCheckpoint(e.to_string()))?;
    let expect = RegressorModel::n_params(&arch);
    if params.len() != expect {
        return Err(BaselineError::Energy(EnergyError::CorruptCheckpoint(format!(
            "{} parameters in payload, architecture needs {expect}",
            params.len()
        ))));
    }
    Ok(RegressorModel { arch, params })
}

pub fn load_regressor_file<P: AsRef<Path>>(path: P) -> Result<RegressorModel, BaselineError> {
    load_regressor(File::open(path).map_err(EnergyError::Io)?)
}
