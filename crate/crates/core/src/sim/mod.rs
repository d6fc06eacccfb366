//! Deterministic two-plate tactile-imprint simulator.
//!
//! The gripper squeezes the object between two parallel sensor plates placed
//! at ±`plate_half_gap` along the TCP z-axis (the grasp axis), with inward
//! normals. Advancing each plate by the grasp indentation presses it into the
//! object; every sensor pixel reads the local penetration depth, giving a
//! k×H×W depth imprint — the desk-scale analogue of a tactile image.

mod dataset;
mod grasp;
mod shapes;

pub use dataset::{generate_dataset, read_dataset, write_dataset, DatasetGenConfig, Sample};
pub use grasp::{
    attempt_grasp, augment_imprint, generate_trajectory, mask_imprint, synthesize_grasp,
    AugmentConfig, GraspSpec,
};
pub use shapes::{make_shape, ShapeSpec};

pub(crate) use grasp::{align_axis_to_z, centering_tz};

use thiserror::Error;

use crate::geom::{GeomError, ObjectModel, RigidPose, Vec3};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("bad shape spec: {0}")]
    BadSpec(String),
    #[error("bad sensor config: {0}")]
    BadConfig(String),
    #[error("bad grasp spec: {0}")]
    BadGrasp(String),
    #[error("rejection budget exceeded: {0} consecutive rejected grasp draws")]
    RejectionBudgetExceeded(usize),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Two-plate depth-sensor geometry and resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorConfig {
    pub grid_h: usize,
    pub grid_w: usize,
    /// Plate plane offset from the TCP origin along the grasp (z) axis, mm.
    pub plate_half_gap: f64,
    /// Pixel pitch, mm per pixel.
    pub pixel_pitch: f64,
    /// Depth saturation, mm.
    pub max_depth: f64,
}

/// Number of sensor plates.
pub const N_SENSORS: usize = 2;

impl Default for SensorConfig {
    fn default() -> Self {
        Self { grid_h: 16, grid_w: 16, plate_half_gap: 5.0, pixel_pitch: 2.0, max_depth: 2.0 }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.grid_h < 4 || self.grid_w < 4 {
            return Err(SimError::BadConfig(format!(
                "grid {}x{} too small (min 4x4)",
                self.grid_h, self.grid_w
            )));
        }
        if !(self.pixel_pitch > 0.0) {
            return Err(SimError::BadConfig("pixel_pitch must be positive".into()));
        }
        if !(self.max_depth > 0.0) {
            return Err(SimError::BadConfig("max_depth must be positive".into()));
        }
        if !(self.plate_half_gap >= 0.0) {
            return Err(SimError::BadConfig("plate_half_gap must be non-negative".into()));
        }
        Ok(())
    }

    /// Plate gap that makes both plates touch the object at rest: half the
    /// object's extent along the grasp axis once `approach_axis` is aligned
    /// with z. In-plane rotation cannot change that extent, so one gap fits
    /// every grasp drawn around this axis.
    pub fn fit_gap_to(&mut self, model: &ObjectModel, approach_axis: &Vec3) {
        let r0 = grasp::align_axis_to_z(approach_axis);
        let mut z_min = f64::INFINITY;
        let mut z_max = f64::NEG_INFINITY;
        for p in model.points() {
            let z = (r0 * p).z;
            z_min = z_min.min(z);
            z_max = z_max.max(z);
        }
        self.plate_half_gap = 0.5 * (z_max - z_min);
    }

    pub fn pixels_per_sensor(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

/// Per-sensor contact depth grids with a presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TactileImprint {
    k: usize,
    grid_h: usize,
    grid_w: usize,
    /// Row-major depths, sensor-major: `depth[((s*H)+r)*W + c]`, mm.
    depth: Vec<f64>,
    /// Sensor masking: absent sensors carry no information downstream.
    pub present: Vec<bool>,
    /// Fraction of pixels with depth > 0, per sensor.
    contact_fraction: Vec<f64>,
}

impl TactileImprint {
    pub fn zeros(k: usize, grid_h: usize, grid_w: usize) -> Self {
        Self {
            k,
            grid_h,
            grid_w,
            depth: vec![0.0; k * grid_h * grid_w],
            present: vec![true; k],
            contact_fraction: vec![0.0; k],
        }
    }

    /// Rebuilds an imprint from raw parts (deserialization path); the
    /// contact fractions are recomputed from the depths.
    pub fn from_parts(
        k: usize,
        grid_h: usize,
        grid_w: usize,
        depth: Vec<f64>,
        present: Vec<bool>,
    ) -> Result<Self, SimError> {
        if depth.len() != k * grid_h * grid_w || present.len() != k {
            return Err(SimError::BadConfig(format!(
                "imprint parts mismatch: {} depths / {} flags for k={k}, {grid_h}×{grid_w}",
                depth.len(),
                present.len()
            )));
        }
        let mut imp = Self { k, grid_h, grid_w, depth, present, contact_fraction: vec![0.0; k] };
        imp.recompute_contact_fraction();
        Ok(imp)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn depth_at(&self, sensor: usize, row: usize, col: usize) -> f64 {
        self.depth[(sensor * self.grid_h + row) * self.grid_w + col]
    }

    /// Depth grid of one sensor, row-major.
    pub fn sensor_slice(&self, sensor: usize) -> &[f64] {
        let n = self.grid_h * self.grid_w;
        &self.depth[sensor * n..(sensor + 1) * n]
    }

    pub fn sensor_slice_mut(&mut self, sensor: usize) -> &mut [f64] {
        let n = self.grid_h * self.grid_w;
        &mut self.depth[sensor * n..(sensor + 1) * n]
    }

    pub fn flat(&self) -> &[f64] {
        &self.depth
    }

    pub fn contact_fraction(&self) -> &[f64] {
        &self.contact_fraction
    }

    pub fn recompute_contact_fraction(&mut self) {
        let n = (self.grid_h * self.grid_w) as f64;
        for s in 0..self.k {
            let hits = self.sensor_slice(s).iter().filter(|&&d| d > 0.0).count();
            self.contact_fraction[s] = hits as f64 / n;
        }
    }

    /// At least one present sensor has contact fraction at or above `threshold`.
    pub fn passes_contact_filter(&self, threshold: f64) -> bool {
        self.present
            .iter()
            .zip(&self.contact_fraction)
            .any(|(&p, &f)| p && f >= threshold)
    }
}

/// Renders the two-plate depth imprint of `model` held at `pose`, with both
/// plates advanced inward by `indentation` millimeters.
///
/// Model points are binned to the nearest pixel center of each plate column
/// (the binning doubles as the spatial hash over points); each pixel's depth
/// is `min(max(0, indentation − clearance), max_depth)` where clearance is
/// the rest-position gap between the plate and the nearest surface point in
/// that pixel's column (clamped at zero for surfaces at or beyond the plate
/// plane). Deterministic: per-pixel min/max aggregation is order-independent.
pub fn render_imprint(
    model: &ObjectModel,
    pose: &RigidPose,
    sensor: &SensorConfig,
    indentation: f64,
) -> TactileImprint {
    debug_assert!(indentation > 0.0 && indentation <= sensor.max_depth);
    let (h, w) = (sensor.grid_h, sensor.grid_w);
    let n_px = h * w;
    // Nearest-surface z per pixel column: min z (plate at −gap), max z (+gap).
    let mut z_min = vec![f64::INFINITY; n_px];
    let mut z_max = vec![f64::NEG_INFINITY; n_px];

    let half_w = (w as f64 - 1.0) / 2.0;
    let half_h = (h as f64 - 1.0) / 2.0;
    for p in model.points() {
        let q = pose.transform_point(p);
        let col = (q.x / sensor.pixel_pitch + half_w).round();
        let row = (q.y / sensor.pixel_pitch + half_h).round();
        if col < 0.0 || row < 0.0 || col >= w as f64 || row >= h as f64 {
            continue;
        }
        let px = row as usize * w + col as usize;
        z_min[px] = z_min[px].min(q.z);
        z_max[px] = z_max[px].max(q.z);
    }

    let mut imprint = TactileImprint::zeros(N_SENSORS, h, w);
    let g = sensor.plate_half_gap;
    for px in 0..n_px {
        if z_min[px].is_finite() {
            let clearance_lo = (z_min[px] + g).max(0.0);
            let clearance_hi = (g - z_max[px]).max(0.0);
            let d_lo = (indentation - clearance_lo).max(0.0).min(sensor.max_depth);
            let d_hi = (indentation - clearance_hi).max(0.0).min(sensor.max_depth);
            imprint.sensor_slice_mut(0)[px] = d_lo;
            imprint.sensor_slice_mut(1)[px] = d_hi;
        }
    }
    imprint.recompute_contact_fraction();
    imprint
}
