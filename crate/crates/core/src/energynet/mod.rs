//! Conditional energy network over 9-vector poses.
//!
//! The model predicts a 9-vector field `phi(p, obs, object, t)`; the scalar
//! energy is the inner product `E = <phi, p>`, and the score used by the
//! probability-flow ODE is the exact pose gradient `dE/dp`, built into the
//! forward graph rather than approximated. Conditioning combines three
//! encoders — observation imprint, an imprint re-rendered at the candidate
//! pose, and the object's point cloud — plus a sinusoidal time embedding.
//! `phi` carries an explicit `1/sigma(t)` output scale so score magnitudes
//! stay unit-order across noise levels, and the final fusion layer is
//! zero-initialized so an untrained model has exactly zero score: the reverse
//! ODE is a no-op until training shapes the field.

pub mod checkpoint;
pub(crate) mod graph;
pub mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::ad::Tape;
use crate::diffusion::{DiffusionError, NoiseSchedule};
use crate::geom::{GeomError, ObjectModel, Pose9};
use crate::seed::{make_rng, STREAM_INIT};
use crate::sim::{render_imprint, SensorConfig, TactileImprint, N_SENSORS};

pub use checkpoint::{load_energy, load_energy_file, save_energy, save_energy_file};
pub use train::{dsm_loss_and_grad, train_energy, train_step, AdamState, TrainConfig, TrainReport};

use graph::Layout;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input pose")]
    NonFiniteInput,
    #[error("non-finite loss at optimizer step {step}")]
    NonFiniteLoss { step: usize },
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error(transparent)]
    Schedule(#[from] DiffusionError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Network architecture plus the physical constants the network is trained
/// against (sensor geometry, pose normalization, render depth). Checkpoints
/// embed all of it so a loaded model is usable without side channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchConfig {
    pub sensor: SensorConfig,
    /// Translation normalization: packed poses carry `t / workspace_half_extent`.
    pub workspace_half_extent: f64,
    /// Indentation depth used when re-rendering candidate poses, mm.
    pub nominal_indentation: f64,
    pub enc_hidden: usize,
    pub enc_feat: usize,
    pub obj_hidden: usize,
    pub obj_feat: usize,
    /// Farthest-point subsample size for the object encoder.
    pub obj_points: usize,
    /// Number of sinusoidal frequency pairs in the time embedding.
    pub time_freqs: usize,
    pub time_feat: usize,
    pub fusion_hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            sensor: SensorConfig::default(),
            workspace_half_extent: crate::geom::DEFAULT_HALF_EXTENT,
            nominal_indentation: 0.6,
            enc_hidden: 128,
            enc_feat: 128,
            obj_hidden: 128,
            obj_feat: 128,
            obj_points: 256,
            time_freqs: 8,
            time_feat: 32,
            fusion_hidden: 256,
        }
    }
}

impl ArchConfig {
    /// Compact preset for tests and quick experiments.
    pub fn small() -> Self {
        Self {
            enc_hidden: 24,
            enc_feat: 16,
            obj_hidden: 24,
            obj_feat: 16,
            obj_points: 64,
            time_freqs: 4,
            time_feat: 8,
            fusion_hidden: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        self.sensor
            .validate()
            .map_err(|e| EnergyError::BadConfig(e.to_string()))?;
        if !(self.workspace_half_extent > 0.0 && self.workspace_half_extent.is_finite()) {
            return Err(EnergyError::BadConfig(
                "workspace_half_extent must be positive".into(),
            ));
        }
        if !(self.nominal_indentation > 0.0 && self.nominal_indentation <= self.sensor.max_depth)
        {
            return Err(EnergyError::BadConfig(format!(
                "nominal_indentation must lie in (0, max_depth], got {}",
                self.nominal_indentation
            )));
        }
        for (name, v) in [
            ("enc_hidden", self.enc_hidden),
            ("enc_feat", self.enc_feat),
            ("obj_hidden", self.obj_hidden),
            ("obj_feat", self.obj_feat),
            ("time_feat", self.time_feat),
            ("fusion_hidden", self.fusion_hidden),
        ] {
            if v == 0 {
                return Err(EnergyError::BadConfig(format!("{name} must be positive")));
            }
        }
        if self.obj_points < 4 {
            return Err(EnergyError::BadConfig("obj_points must be at least 4".into()));
        }
        if self.time_freqs == 0 || self.time_freqs > 32 {
            return Err(EnergyError::BadConfig(
                "time_freqs must lie in 1..=32".into(),
            ));
        }
        Ok(())
    }

    /// Width of the fusion input: observation and render features for every
    /// sensor, object features, time embedding, and the raw 9-vector pose.
    pub fn fusion_in(&self) -> usize {
        2 * N_SENSORS * self.enc_feat + self.obj_feat + self.time_feat + 9
    }

    /// Offset of the pose block inside the fusion input (it sits last).
    pub fn pose_offset(&self) -> usize {
        self.fusion_in() - 9
    }

    pub fn n_params(&self) -> usize {
        Layout::new(self).total
    }
}

/// Energy network: architecture, noise schedule, and one flat parameter
/// vector (block layout documented in the checkpoint format).
#[derive(Debug, Clone)]
pub struct EnergyModel {
    pub arch: ArchConfig,
    pub schedule: NoiseSchedule,
    pub params: Vec<f64>,
}

impl EnergyModel {
    /// Fresh model: weights drawn N(0, 1/fan_in), biases zero, and the final
    /// fusion layer zeroed so the initial score field vanishes identically.
    pub fn init(arch: ArchConfig, schedule: NoiseSchedule, seed: u64) -> Result<Self, EnergyError> {
        arch.validate()?;
        schedule.validate()?;
        let lay = Layout::new(&arch);
        let mut params = vec![0.0; lay.total];
        let mut rng = make_rng(seed, &[STREAM_INIT]);
        let n_blocks = lay.blocks.len();
        for (i, b) in lay.blocks.iter().enumerate() {
            // Final fusion weight and bias (the last two blocks) stay zero.
            if i + 2 >= n_blocks || b.cols == 0 {
                continue;
            }
            let scale = 1.0 / (b.cols as f64).sqrt();
            for v in params[b.off..b.off + b.len()].iter_mut() {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(Self { arch, schedule, params })
    }

    pub fn validate(&self) -> Result<(), EnergyError> {
        self.arch.validate()?;
        self.schedule.validate()?;
        let expect = self.arch.n_params();
        if self.params.len() != expect {
            return Err(EnergyError::ShapeMismatch(format!(
                "parameter vector has {} entries, architecture needs {expect}",
                self.params.len()
            )));
        }
        if !self.params.iter().all(|v| v.is_finite()) {
            return Err(EnergyError::BadConfig("non-finite parameter".into()));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.arch)
    }
}

/// Per-(object, observation) evaluation context. Object and observation
/// features depend only on the parameters and the conditioning inputs, so
/// they are computed once here; each `energy`/`score` call then only runs the
/// render branch and the fusion head.
pub struct EvalContext<'a> {
    model: &'a EnergyModel,
    object: &'a ObjectModel,
    layout: Layout,
    present: Vec<bool>,
    obs_feats: Vec<f64>,
    obj_feats: Vec<f64>,
}

impl<'a> EvalContext<'a> {
    pub fn new(
        model: &'a EnergyModel,
        object: &'a ObjectModel,
        obs: &TactileImprint,
    ) -> Result<Self, EnergyError> {
        model.validate()?;
        check_imprint_shape(&model.arch, obs)?;
        let layout = model.layout();
        let mut tape = Tape::new(&model.params);

        let fps = graph::farthest_point_subsample(object.points(), model.arch.obj_points);
        let obj_input = graph::object_input(&fps, model.arch.workspace_half_extent);
        let obj_node = graph::encode_object(&mut tape, &layout.obj, &model.arch, &obj_input);

        let obs_nodes =
            graph::encode_sensors(&mut tape, &layout.obs, &model.arch, obs, &obs.present);
        let mut obs_feats = Vec::with_capacity(N_SENSORS * model.arch.enc_feat);
        for n in &obs_nodes {
            obs_feats.extend_from_slice(tape.value(*n));
        }
        let obj_feats = tape.value(obj_node).to_vec();

        Ok(Self {
            model,
            object,
            layout,
            present: obs.present.clone(),
            obs_feats,
            obj_feats,
        })
    }

    pub fn model(&self) -> &EnergyModel {
        self.model
    }

    pub fn object(&self) -> &ObjectModel {
        self.object
    }

    /// Orthonormalize `p` and render the imprint the compare branch would see
    /// at that pose.
    pub fn render(&self, p: &Pose9) -> Result<TactileImprint, EnergyError> {
        if !p.is_finite() {
            return Err(EnergyError::NonFiniteInput);
        }
        let rigid = p.unpack(self.model.arch.workspace_half_extent)?;
        Ok(render_imprint(
            self.object,
            &rigid,
            &self.model.arch.sensor,
            self.model.arch.nominal_indentation,
        ))
    }

    fn eval(
        &self,
        p: &Pose9,
        t: f64,
        ren: Option<&TactileImprint>,
    ) -> Result<([f64; 9], f64, [f64; 9]), EnergyError> {
        if !p.is_finite() {
            return Err(EnergyError::NonFiniteInput);
        }
        let (sigma, _) = self.model.schedule.sigma(t)?;
        let fresh;
        let ren_ref = match ren {
            Some(r) => {
                check_imprint_shape(&self.model.arch, r)?;
                r
            }
            None => {
                fresh = self.render(p)?;
                &fresh
            }
        };

        let mut tape = Tape::new(&self.model.params);
        let obs_node = tape.input(&self.obs_feats);
        let ren_nodes = graph::encode_sensors(
            &mut tape,
            &self.layout.ren,
            &self.model.arch,
            ren_ref,
            &self.present,
        );
        let obj_node = tape.input(&self.obj_feats);
        let p_node = tape.input(&p.to_array());
        let head = graph::build_head(
            &mut tape,
            &self.layout,
            &self.model.arch,
            obs_node,
            &ren_nodes,
            obj_node,
            t,
            sigma,
            p_node,
        );

        let mut phi = [0.0; 9];
        phi.copy_from_slice(tape.value(head.phi));
        let energy = tape.value(head.energy)[0];
        let mut score = [0.0; 9];
        score.copy_from_slice(tape.value(head.score));
        Ok((phi, energy, score))
    }

    pub fn phi(&self, p: &Pose9, t: f64) -> Result<[f64; 9], EnergyError> {
        Ok(self.eval(p, t, None)?.0)
    }

    pub fn energy(&self, p: &Pose9, t: f64) -> Result<f64, EnergyError> {
        Ok(self.eval(p, t, None)?.1)
    }

    pub fn score(&self, p: &Pose9, t: f64) -> Result<[f64; 9], EnergyError> {
        Ok(self.eval(p, t, None)?.2)
    }

    /// Evaluate against a caller-supplied render instead of re-rendering at
    /// `p`. This is what makes the score a smooth function of `p` for
    /// finite-difference checks, and what the tracker's stale-render mode
    /// uses.
    pub fn energy_with_render(
        &self,
        p: &Pose9,
        t: f64,
        ren: &TactileImprint,
    ) -> Result<f64, EnergyError> {
        Ok(self.eval(p, t, Some(ren))?.1)
    }

    pub fn score_with_render(
        &self,
        p: &Pose9,
        t: f64,
        ren: &TactileImprint,
    ) -> Result<[f64; 9], EnergyError> {
        Ok(self.eval(p, t, Some(ren))?.2)
    }

    pub fn phi_with_render(
        &self,
        p: &Pose9,
        t: f64,
        ren: &TactileImprint,
    ) -> Result<[f64; 9], EnergyError> {
        Ok(self.eval(p, t, Some(ren))?.0)
    }
}

pub(crate) fn check_imprint_shape(arch: &ArchConfig, imp: &TactileImprint) -> Result<(), EnergyError> {
    if imp.k() != N_SENSORS
        || imp.grid_h() != arch.sensor.grid_h
        || imp.grid_w() != arch.sensor.grid_w
    {
        return Err(EnergyError::ShapeMismatch(format!(
            "imprint {}x{}x{} does not match sensor {}x{}x{}",
            imp.k(),
            imp.grid_h(),
            imp.grid_w(),
            N_SENSORS,
            arch.sensor.grid_h,
            arch.sensor.grid_w
        )));
    }
    Ok(())
}

/// Predicted 9-vector field at `(p, t)` given observation and object.
pub fn phi_forward(
    model: &EnergyModel,
    p: &Pose9,
    object: &ObjectModel,
    obs: &TactileImprint,
    t: f64,
) -> Result<[f64; 9], EnergyError> {
    EvalContext::new(model, object, obs)?.phi(p, t)
}

/// Scalar energy `<phi, p>`.
pub fn energy(
    model: &EnergyModel,
    p: &Pose9,
    object: &ObjectModel,
    obs: &TactileImprint,
    t: f64,
) -> Result<f64, EnergyError> {
    EvalContext::new(model, object, obs)?.energy(p, t)
}

/// Exact pose gradient of the energy.
pub fn score(
    model: &EnergyModel,
    p: &Pose9,
    object: &ObjectModel,
    obs: &TactileImprint,
    t: f64,
) -> Result<[f64; 9], EnergyError> {
    EvalContext::new(model, object, obs)?.score(p, t)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::geom::Mat3;
    use crate::sim::{make_shape, synthesize_grasp, GraspSpec, Sample, ShapeSpec};

    pub fn test_object() -> ObjectModel {
        make_shape(&ShapeSpec::Box { l: 14.0, w: 9.0, h: 6.0 }).unwrap()
    }

    pub fn fitted_sensor(object: &ObjectModel) -> SensorConfig {
        let mut s = SensorConfig::default();
        s.fit_gap_to(object, &object.grasp_axes()[0]);
        s
    }

    /// Model whose final fusion layer is filled with small random weights so
    /// the energy actually depends on its inputs (a freshly initialized model
    /// has identically zero score by design).
    pub fn nondegenerate_model(arch: ArchConfig, seed: u64) -> EnergyModel {
        let mut m = EnergyModel::init(arch, NoiseSchedule::default(), seed).unwrap();
        let lay = m.layout();
        let fh = m.arch.fusion_hidden;
        let mut rng = make_rng(seed, &[0xfeed]);
        let scale = 1.0 / (fh as f64).sqrt();
        for i in 0..9 * fh {
            m.params[lay.fus_w3 + i] = scale * rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..9 {
            m.params[lay.fus_b3 + i] = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
        m
    }

    pub fn grasp_samples(
        object: &ObjectModel,
        sensor: &SensorConfig,
        n: usize,
        seed: u64,
    ) -> Vec<Sample> {
        let spec = GraspSpec::default_for(object);
        (0..n)
            .map(|i| {
                let mut rng = make_rng(seed, &[1000, i as u64]);
                synthesize_grasp(object, &spec, sensor, &mut rng).unwrap()
            })
            .collect()
    }

    /// A pose 9-vector near the packed manifold: a valid pose plus mild
    /// off-manifold noise, still safely orthonormalizable.
    pub fn noisy_pose9(rng: &mut impl Rng, half_extent: f64) -> Pose9 {
        let ax = random_unit_vec3(rng);
        let rot = rotation_from_axis_angle(&ax, rng.random_range(-3.0..3.0));
        let trans = Vec3::new(
            rng.random_range(-4.0..4.0),
            rng.random_range(-4.0..4.0),
            rng.random_range(-2.0..2.0),
        );
        let mut a = Pose9::pack(&crate::geom::RigidPose::new(rot, trans), half_extent).to_array();
        for v in a.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        Pose9::from_array(&a)
    }

    use crate::geom::Vec3;

    fn random_unit_vec3(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 1e-3 {
                return v / n;
            }
        }
    }

    pub fn rotation_from_axis_angle(axis: &Vec3, angle: f64) -> Mat3 {
        nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(*axis),
            angle,
        )
        .into_inner()
    }
}
