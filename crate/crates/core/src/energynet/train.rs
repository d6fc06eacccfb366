//! Denoising-score-matching training: batch graph construction, the Adam
//! optimizer, and the outer training loop with augmentation and sensor
//! masking.

use rand::Rng;

use crate::ad::{NodeId, Tape};
use crate::diffusion::{perturb, DsmItem};
use crate::geom::{ObjectModel, Pose9};
use crate::seed::{make_rng, STREAM_NOISE};
use crate::sim::{augment_imprint, mask_imprint, render_imprint, AugmentConfig, Sample};

use super::{check_imprint_shape, graph, EnergyError, EnergyModel};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_steps: usize,
    pub learning_rate: f64,
    /// Apply sensor-noise augmentation (gain jitter plus per-pixel noise on
    /// contacted pixels) to each drawn imprint.
    pub augment: bool,
    /// Probability of masking each sensor per drawn imprint; one sensor
    /// always survives.
    pub mask_prob: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            n_steps: 2000,
            learning_rate: 1e-3,
            augment: true,
            mask_prob: 0.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EnergyError> {
        if self.batch_size < 1 {
            return Err(EnergyError::BadConfig("batch_size must be at least 1".into()));
        }
        if self.n_steps < 1 {
            return Err(EnergyError::BadConfig("n_steps must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(EnergyError::BadConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=0.5).contains(&self.mask_prob) {
            return Err(EnergyError::BadConfig(format!(
                "mask_prob must lie in [0, 0.5], got {}",
                self.mask_prob
            )));
        }
        Ok(())
    }
}

/// Adam first/second-moment state.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub(crate) fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Build the full batch loss graph: for every item, encode the (possibly
/// augmented/masked) observation, render and encode the candidate pose,
/// evaluate the unrolled score, and accumulate the weighted squared residual
/// `lambda(t) * ||score - target||^2 / B`. The object subgraph is shared by
/// the whole batch.
pub(crate) fn build_dsm_tape<'m>(
    model: &'m EnergyModel,
    object: &ObjectModel,
    batch: &[DsmItem],
) -> Result<(Tape<'m>, NodeId), EnergyError> {
    if batch.is_empty() {
        return Err(EnergyError::BadConfig("empty training batch".into()));
    }
    model.validate()?;
    let arch = &model.arch;
    let lay = model.layout();
    let mut tape = Tape::new(&model.params);

    let fps = graph::farthest_point_subsample(object.points(), arch.obj_points);
    let obj_input = graph::object_input(&fps, arch.workspace_half_extent);
    let obj_node = graph::encode_object(&mut tape, &lay.obj, arch, &obj_input);

    let mut sq_nodes = Vec::with_capacity(batch.len());
    let mut weights = Vec::with_capacity(batch.len());
    for item in batch {
        check_imprint_shape(arch, &item.imprint)?;
        if !item.pt.is_finite() {
            return Err(EnergyError::NonFiniteInput);
        }
        let (sigma, _) = model.schedule.sigma(item.t)?;
        let rigid = item.pt.unpack(arch.workspace_half_extent)?;
        let ren = render_imprint(object, &rigid, &arch.sensor, arch.nominal_indentation);

        let obs_nodes =
            graph::encode_sensors(&mut tape, &lay.obs, arch, &item.imprint, &item.imprint.present);
        let obs_cat = tape.concat(&obs_nodes);
        let ren_nodes =
            graph::encode_sensors(&mut tape, &lay.ren, arch, &ren, &item.imprint.present);
        let p_node = tape.input(&item.pt.to_array());
        let head = graph::build_head(
            &mut tape, &lay, arch, obs_cat, &ren_nodes, obj_node, item.t, sigma, p_node,
        );

        let target = tape.input(&item.target);
        let diff = tape.sub(head.score, target);
        sq_nodes.push(tape.dot(diff, diff));
        weights.push(sigma * sigma / batch.len() as f64);
    }
    let sq = tape.concat(&sq_nodes);
    let w = tape.input(&weights);
    let loss = tape.dot(sq, w);
    Ok((tape, loss))
}

/// Loss value on the training graph (no backward pass).
pub(crate) fn dsm_loss_value(
    model: &EnergyModel,
    object: &ObjectModel,
    batch: &[DsmItem],
) -> Result<f64, EnergyError> {
    let (tape, loss) = build_dsm_tape(model, object, batch)?;
    let v = tape.value(loss)[0];
    if !v.is_finite() {
        return Err(EnergyError::NonFiniteLoss { step: 0 });
    }
    Ok(v)
}

/// Loss and its gradient with respect to every model parameter on `batch`,
/// without touching the model. This is the exact quantity [`train_step`]
/// feeds to the optimizer; exposing it lets callers drive their own
/// optimizers or verify the backward pass against finite differences.
pub fn dsm_loss_and_grad(
    model: &EnergyModel,
    object: &ObjectModel,
    batch: &[DsmItem],
) -> Result<(f64, Vec<f64>), EnergyError> {
    let (tape, loss_node) = build_dsm_tape(model, object, batch)?;
    let loss = tape.value(loss_node)[0];
    if !loss.is_finite() {
        return Err(EnergyError::NonFiniteLoss { step: 0 });
    }
    let g = tape.backward(loss_node);
    Ok((loss, g.param))
}

/// One optimizer step on `batch`; returns the pre-step loss.
pub fn train_step(
    model: &mut EnergyModel,
    object: &ObjectModel,
    batch: &[DsmItem],
    opt: &mut AdamState,
    learning_rate: f64,
) -> Result<f64, EnergyError> {
    if opt.m.len() != model.params.len() {
        return Err(EnergyError::ShapeMismatch(format!(
            "optimizer state for {} parameters, model has {}",
            opt.m.len(),
            model.params.len()
        )));
    }
    let (loss, grad) = {
        let (tape, loss_node) = build_dsm_tape(model, object, batch)?;
        let loss = tape.value(loss_node)[0];
        if !loss.is_finite() {
            return Err(EnergyError::NonFiniteLoss { step: opt.step });
        }
        let g = tape.backward(loss_node);
        (loss, g.param)
    };
    opt.apply(&mut model.params, &grad, learning_rate);
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Loss before each optimizer step, one entry per step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("training ran at least one step")
    }

    /// Mean loss over the first and last `window` steps, for quick
    /// improvement checks.
    pub fn loss_drop(&self, window: usize) -> (f64, f64) {
        let w = window.min(self.losses.len());
        let head: f64 = self.losses[..w].iter().sum::<f64>() / w as f64;
        let tail: f64 = self.losses[self.losses.len() - w..].iter().sum::<f64>() / w as f64;
        (head, tail)
    }
}

/// Full training loop over a dataset of one object's grasp samples.
///
/// Deterministic for a fixed seed: every random choice (sample index,
/// augmentation, masking, diffusion time, noise) is drawn from a single
/// stream in a pinned order, and the optimizer runs sequentially regardless
/// of the process thread count.
pub fn train_energy(
    model: &mut EnergyModel,
    object: &ObjectModel,
    dataset: &[Sample],
    config: &TrainConfig,
) -> Result<TrainReport, EnergyError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(EnergyError::BadConfig("empty training dataset".into()));
    }
    for s in dataset {
        check_imprint_shape(&model.arch, &s.imprint)?;
    }
    let mut rng = make_rng(config.seed, &[STREAM_NOISE]);
    let aug = AugmentConfig::default();
    let sensor = model.arch.sensor;
    let half_extent = model.arch.workspace_half_extent;
    let mut opt = AdamState::new(model.params.len());
    let mut losses = Vec::with_capacity(config.n_steps);
    for _ in 0..config.n_steps {
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
            let t = rng.random_range(model.schedule.eps..=1.0);
            let p0 = Pose9::pack(&sample.pose, half_extent);
            let (pt, target) = perturb(&p0, t, &model.schedule, &mut rng)?;
            batch.push(DsmItem { imprint, p0, pt, t, target });
        }
        let loss = train_step(model, object, &batch, &mut opt, config.learning_rate)?;
        losses.push(loss);
    }
    Ok(TrainReport { losses })
}
