//! Grasp randomization, trajectory synthesis, and observation augmentation.
//!
//! A grasp pose is composed as `R = Rz(θ)·R0`, `t = (dx, dy, t_z)` where `R0`
//! aligns the object's approach axis with the gripper z-axis, θ is the
//! in-plane rotation, and `t_z` centers the rotated object between the two
//! sensor plates. Draw order is fixed (θ, dx, dy, indentation) so datasets
//! are reproducible byte-for-byte from a seed.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::Sample;
use super::{render_imprint, SensorConfig, SimError, TactileImprint};
use crate::geom::{Mat3, ObjectModel, RigidPose, Vec3};

/// Contact filter threshold: a grasp is rejected when every present sensor
/// sees contact on less than this fraction of its pixels.
pub const CONTACT_FRACTION_MIN: f64 = 0.05;
/// Consecutive rejections tolerated before giving up.
pub const REJECTION_BUDGET: usize = 1000;

/// Randomization ranges for grasp synthesis.
#[derive(Debug, Clone, Copy)]
pub struct GraspSpec {
    /// Object-frame axis the gripper closes along (unit vector).
    pub approach_axis: Vec3,
    /// Indentation draw range in mm, inclusive.
    pub indentation_range: (f64, f64),
    /// Per-axis in-plane offset bound ±b in mm (gripper x, y).
    pub xy_range: (f64, f64),
    /// Total in-plane rotation range in radians; θ ~ U(−r/2, r/2).
    pub inplane_rot_range: f64,
}

impl GraspSpec {
    /// Default randomization for `model` around its first grasp axis:
    /// indentation 0.2–1.0 mm, offsets up to half the in-plane footprint
    /// (capped at 5 mm), full in-plane rotation.
    pub fn default_for(model: &ObjectModel) -> Self {
        Self::default_for_axis(model, model.grasp_axes()[0])
    }

    /// As [`default_for`](Self::default_for) but around a specific axis.
    pub fn default_for_axis(model: &ObjectModel, axis: Vec3) -> Self {
        let (fx, fy) = inplane_footprint(model, &axis);
        GraspSpec {
            approach_axis: axis,
            indentation_range: (0.2, 1.0),
            xy_range: ((0.5 * fx).min(5.0), (0.5 * fy).min(5.0)),
            inplane_rot_range: std::f64::consts::TAU,
        }
    }

    /// Checks ranges against the sensor and the object's footprint.
    pub fn validate(&self, model: &ObjectModel, sensor: &SensorConfig) -> Result<(), SimError> {
        if (self.approach_axis.norm() - 1.0).abs() > 1e-6 {
            return Err(SimError::BadGrasp(format!(
                "approach axis {:?} is not unit",
                self.approach_axis
            )));
        }
        let (lo, hi) = self.indentation_range;
        if !(lo > 0.0 && lo <= hi && hi <= sensor.max_depth) {
            return Err(SimError::BadGrasp(format!(
                "indentation range [{lo}, {hi}] not within (0, {}]",
                sensor.max_depth
            )));
        }
        let (fx, fy) = inplane_footprint(model, &self.approach_axis);
        let (bx, by) = self.xy_range;
        if !(bx >= 0.0 && by >= 0.0 && bx <= fx + 1e-9 && by <= fy + 1e-9) {
            return Err(SimError::BadGrasp(format!(
                "xy range ({bx}, {by}) exceeds the object footprint ({fx:.3}, {fy:.3})"
            )));
        }
        if !(self.inplane_rot_range.is_finite() && self.inplane_rot_range >= 0.0) {
            return Err(SimError::BadGrasp(format!(
                "bad in-plane rotation range {}",
                self.inplane_rot_range
            )));
        }
        Ok(())
    }
}

/// Rotation taking `axis` onto +z (identity when `axis` is already z;
/// a half-turn about x for the antiparallel case).
pub(crate) fn align_axis_to_z(axis: &Vec3) -> Mat3 {
    let a = axis.normalize();
    match nalgebra::Rotation3::rotation_between(&a, &Vec3::new(0.0, 0.0, 1.0)) {
        Some(r) => *r.matrix(),
        // Antiparallel: any half-turn about an in-plane axis works.
        None => Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)),
    }
}

/// Max |x| and |y| of the model once the approach axis is aligned with z.
fn inplane_footprint(model: &ObjectModel, axis: &Vec3) -> (f64, f64) {
    let r0 = align_axis_to_z(axis);
    let (mut fx, mut fy) = (0.0f64, 0.0f64);
    for p in model.points() {
        let q = r0 * p;
        fx = fx.max(q.x.abs());
        fy = fy.max(q.y.abs());
    }
    (fx, fy)
}

/// Translation along z that centers the rotated model between the plates.
pub(crate) fn centering_tz(model: &ObjectModel, rotation: &Mat3) -> f64 {
    let mut z_min = f64::INFINITY;
    let mut z_max = f64::NEG_INFINITY;
    for p in model.points() {
        let z = (rotation * p).z;
        z_min = z_min.min(z);
        z_max = z_max.max(z);
    }
    -0.5 * (z_min + z_max)
}

/// One randomized grasp draw; `None` when the contact filter rejects it.
/// Draw order: θ, dx, dy, indentation.
pub fn attempt_grasp(
    model: &ObjectModel,
    grasp: &GraspSpec,
    sensor: &SensorConfig,
    rng: &mut ChaCha12Rng,
) -> Option<Sample> {
    let half = 0.5 * grasp.inplane_rot_range;
    let theta = rng.random_range(-half..=half);
    let dx = rng.random_range(-grasp.xy_range.0..=grasp.xy_range.0);
    let dy = rng.random_range(-grasp.xy_range.1..=grasp.xy_range.1);
    let ind = rng.random_range(grasp.indentation_range.0..=grasp.indentation_range.1);

    let r0 = align_axis_to_z(&grasp.approach_axis);
    let rz = *nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), theta).matrix();
    let rotation = rz * r0;
    let tz = centering_tz(model, &rotation);
    let pose = RigidPose::new(rotation, Vec3::new(dx, dy, tz));

    let imprint = render_imprint(model, &pose, sensor, ind);
    if imprint.passes_contact_filter(CONTACT_FRACTION_MIN) {
        Some(Sample { pose, imprint, object_id: String::new() })
    } else {
        None
    }
}

/// Draws grasps until one passes the contact filter.
pub fn synthesize_grasp(
    model: &ObjectModel,
    grasp: &GraspSpec,
    sensor: &SensorConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Sample, SimError> {
    grasp.validate(model, sensor)?;
    for _ in 0..REJECTION_BUDGET {
        if let Some(sample) = attempt_grasp(model, grasp, sensor, rng) {
            return Ok(sample);
        }
    }
    Err(SimError::RejectionBudgetExceeded(REJECTION_BUDGET))
}

/// Smooth in-hand trajectory: a contact-preserving random walk from a fresh
/// grasp. Per step the object yaws about its own centroid by |Δψ| ≤
/// `step_scale.1` and slides in-plane by |Δt| ≤ `step_scale.0`; the
/// indentation is drawn once and held.
pub fn generate_trajectory(
    model: &ObjectModel,
    n_steps: usize,
    step_scale: (f64, f64),
    sensor: &SensorConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Sample>, SimError> {
    if n_steps < 2 {
        return Err(SimError::BadConfig(format!("trajectory needs ≥ 2 steps, got {n_steps}")));
    }
    let (step_mm, step_rad) = step_scale;
    if !(step_mm >= 0.0 && step_rad >= 0.0) {
        return Err(SimError::BadConfig(format!("bad step scale {step_scale:?}")));
    }

    let axis_idx = rng.random_range(0..model.grasp_axes().len());
    let mut spec = GraspSpec::default_for_axis(model, model.grasp_axes()[axis_idx]);
    let ind = rng.random_range(spec.indentation_range.0..=spec.indentation_range.1);
    spec.indentation_range = (ind, ind);

    let mut samples = Vec::with_capacity(n_steps);
    samples.push(synthesize_grasp(model, &spec, sensor, rng)?);

    while samples.len() < n_steps {
        let prev = samples.last().unwrap().pose;
        let mut rejected = 0;
        loop {
            let dpsi = rng.random_range(-step_rad..=step_rad);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let mag = rng.random_range(0.0..=step_mm);
            let rz = *nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), dpsi).matrix();
            let pose = RigidPose::new(
                rz * prev.rotation,
                prev.translation + Vec3::new(mag * phi.cos(), mag * phi.sin(), 0.0),
            );
            let imprint = render_imprint(model, &pose, sensor, ind);
            if imprint.passes_contact_filter(CONTACT_FRACTION_MIN) {
                samples.push(Sample { pose, imprint, object_id: String::new() });
                break;
            }
            rejected += 1;
            if rejected >= REJECTION_BUDGET {
                return Err(SimError::RejectionBudgetExceeded(REJECTION_BUDGET));
            }
        }
    }
    Ok(samples)
}

/// Observation-noise augmentation: per-sensor gain jitter and additive
/// Gaussian depth noise on contacted pixels only (the contact mask is
/// preserved), clamped back to [0, max_depth].
#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    /// Std-dev of additive depth noise in mm.
    pub sigma_obs: f64,
    /// Multiplicative gain drawn from 1 ± gain_jitter per sensor image.
    pub gain_jitter: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig { sigma_obs: 0.05, gain_jitter: 0.10 }
    }
}

pub fn augment_imprint(
    imprint: &mut TactileImprint,
    config: &AugmentConfig,
    sensor: &SensorConfig,
    rng: &mut ChaCha12Rng,
) {
    let normal = Normal::new(0.0, config.sigma_obs).expect("sigma_obs must be finite and ≥ 0");
    for s in 0..imprint.k() {
        let gain = 1.0 + rng.random_range(-config.gain_jitter..=config.gain_jitter);
        for d in imprint.sensor_slice_mut(s) {
            if *d > 0.0 {
                let noise: f64 = normal.sample(rng);
                // Keep the pixel in contact: floor just above zero so the
                // contact mask (and hence contact_fraction) is unchanged.
                *d = (*d * gain + noise).clamp(1e-9, sensor.max_depth);
            }
        }
    }
    imprint.recompute_contact_fraction();
}

/// Randomly drops sensors (present = false) with probability `mask_prob`
/// each; if all fall, one survivor is restored at random. Depth data is
/// kept — consumers must honor the `present` flags.
pub fn mask_imprint(imprint: &mut TactileImprint, mask_prob: f64, rng: &mut ChaCha12Rng) {
    let k = imprint.k();
    let mut any = false;
    for s in 0..k {
        let keep = rng.random::<f64>() >= mask_prob;
        imprint.present[s] = keep;
        any |= keep;
    }
    if !any {
        let survivor = rng.random_range(0..k);
        imprint.present[survivor] = true;
    }
}
