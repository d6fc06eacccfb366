//! Exhaustive render-and-compare over a pose grid.
//!
//! The tactile imprint constrains the in-plane degrees of freedom, so the
//! grid spans x/y translation at a fixed millimeter step and the in-plane
//! rotation (yaw about the grasp axis) at a fixed degree step, on top of a
//! caller-chosen base orientation and plate-normal offset. Matching renders
//! an imprint at every grid pose and returns the one closest to the
//! observation in L2 over the present sensors.

use rayon::prelude::*;

use crate::geom::{Mat3, ObjectModel, RigidPose, Vec3};
use crate::sim::{render_imprint, SensorConfig, TactileImprint, N_SENSORS};

use super::BaselineError;

#[derive(Debug, Clone)]
pub struct GridConfig {
    /// Translation spacing in mm for the two in-plane axes.
    pub trans_step_mm: f64,
    /// Yaw spacing in degrees; must divide 360.
    pub yaw_step_deg: f64,
    /// Half-range of the translation sweep, mm (covers ±range per axis).
    pub trans_range_mm: f64,
    /// Orientation the yaw sweep spins around (the grasp orientation).
    pub base_rotation: Mat3,
    /// Fixed offset along the plate normal, mm.
    pub t_z: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            trans_step_mm: 2.5,
            yaw_step_deg: 6.0,
            trans_range_mm: 10.0,
            base_rotation: Mat3::identity(),
            t_z: 0.0,
        }
    }
}

/// Materialized pose grid; `poses` ordered x-major, then y, then yaw, so tie
/// breaking by index is reproducible.
#[derive(Debug, Clone)]
pub struct PoseGrid {
    pub poses: Vec<RigidPose>,
    pub trans_step_mm: f64,
    pub yaw_step_deg: f64,
}

impl PoseGrid {
    pub fn build(config: &GridConfig) -> Result<Self, BaselineError> {
        if !(config.trans_step_mm.is_finite() && config.trans_step_mm > 0.0) {
            return Err(BaselineError::BadConfig(format!(
                "translation step must be positive, got {}",
                config.trans_step_mm
            )));
        }
        if !(config.trans_range_mm.is_finite() && config.trans_range_mm >= 0.0) {
            return Err(BaselineError::BadConfig(format!(
                "translation range must be non-negative, got {}",
                config.trans_range_mm
            )));
        }
        if !(config.yaw_step_deg.is_finite() && config.yaw_step_deg > 0.0) {
            return Err(BaselineError::BadConfig(format!(
                "yaw step must be positive, got {}",
                config.yaw_step_deg
            )));
        }
        let turns = 360.0 / config.yaw_step_deg;
        if (turns - turns.round()).abs() > 1e-9 {
            return Err(BaselineError::BadConfig(format!(
                "yaw step {}° does not divide 360°",
                config.yaw_step_deg
            )));
        }
        let n_yaw = turns.round() as usize;
        if !config.t_z.is_finite() {
            return Err(BaselineError::BadConfig("t_z must be finite".into()));
        }
        if !RigidPose::new(config.base_rotation, Vec3::zeros()).is_valid() {
            return Err(BaselineError::BadConfig(
                "base_rotation is not a rotation matrix".into(),
            ));
        }

        let n_side = (config.trans_range_mm / config.trans_step_mm + 1e-9).floor() as i64;
        let mut poses = Vec::with_capacity(((2 * n_side + 1) * (2 * n_side + 1)) as usize * n_yaw);
        for xi in -n_side..=n_side {
            let x = xi as f64 * config.trans_step_mm;
            for yi in -n_side..=n_side {
                let y = yi as f64 * config.trans_step_mm;
                for k in 0..n_yaw {
                    let yaw = (k as f64 * config.yaw_step_deg).to_radians();
                    let rot = *nalgebra::Rotation3::from_axis_angle(
                        &nalgebra::Vector3::z_axis(),
                        yaw,
                    )
                    .matrix()
                        * config.base_rotation;
                    poses.push(RigidPose::new(rot, Vec3::new(x, y, config.t_z)));
                }
            }
        }
        Ok(Self {
            poses,
            trans_step_mm: config.trans_step_mm,
            yaw_step_deg: config.yaw_step_deg,
        })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// L2 distance between a rendered imprint and the observation, restricted to
/// the observation's present sensors.
pub fn imprint_distance(rendered: &TactileImprint, obs: &TactileImprint) -> f64 {
    let mut acc = 0.0;
    for s in 0..obs.k() {
        if !obs.present[s] {
            continue;
        }
        for (a, b) in rendered.sensor_slice(s).iter().zip(obs.sensor_slice(s)) {
            let d = a - b;
            acc += d * d;
        }
    }
    acc.sqrt()
}

#[derive(Debug, Clone)]
pub struct GridMatchResult {
    pub best_index: usize,
    pub pose: RigidPose,
    pub distance: f64,
}

/// Render every grid pose and return the one whose imprint is closest to the
/// observation. Deterministic; ties break toward the lowest index.
pub fn grid_match(
    object: &ObjectModel,
    obs: &TactileImprint,
    grid: &PoseGrid,
    sensor: &SensorConfig,
    indentation: f64,
) -> Result<GridMatchResult, BaselineError> {
    if grid.is_empty() {
        return Err(BaselineError::BadConfig("empty pose grid".into()));
    }
    if obs.k() != N_SENSORS || obs.grid_h() != sensor.grid_h || obs.grid_w() != sensor.grid_w {
        return Err(BaselineError::BadConfig(format!(
            "observation {}x{}x{} does not match sensor {}x{}x{}",
            obs.k(),
            obs.grid_h(),
            obs.grid_w(),
            N_SENSORS,
            sensor.grid_h,
            sensor.grid_w
        )));
    }
    if !(indentation > 0.0 && indentation <= sensor.max_depth) {
        return Err(BaselineError::BadConfig(format!(
            "indentation {indentation} outside (0, {}]",
            sensor.max_depth
        )));
    }
    let distances: Vec<f64> = grid
        .poses
        .par_iter()
        .map(|p| imprint_distance(&render_imprint(object, p, sensor, indentation), obs))
        .collect();
    let mut best = 0;
    for i in 1..distances.len() {
        if distances[i] < distances[best] {
            best = i;
        }
    }
    Ok(GridMatchResult { best_index: best, pose: grid.poses[best], distance: distances[best] })
}
