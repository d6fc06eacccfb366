//! Point-to-point ICP on contact points reconstructed from the imprints.
//!
//! A deliberately plain stand-in for probabilistic registration: alternate
//! nearest-neighbor correspondence with closed-form rigid alignment (SVD of
//! the cross-covariance) until the pose stops moving. The *Global* variant
//! matches against the full object cloud; the *Partial* variant matches
//! against the plate-visible subset at the reference pose (an oracle the
//! harness supplies — a real system would estimate visibility).

use crate::geom::{Mat3, ObjectModel, PointGrid, RigidPose, Vec3};
use crate::sim::{SensorConfig, TactileImprint};

use super::BaselineError;

pub const ICP_DEFAULT_MAX_ITER: usize = 50;
/// Stop once translation (mm) plus rotation (rad) movement drops below this.
const POSE_DELTA_TOL: f64 = 1e-4;
/// Correspondences with a smaller smallest-to-largest singular-value ratio
/// are treated as rank-deficient (e.g. exactly coplanar clouds).
const RANK_RATIO_MIN: f64 = 1e-9;

/// Reconstruct 3D contact points (in the gripper frame) from every pixel
/// with positive depth on every present sensor. Pixels read the surface at
/// `plate offset ∓ (indentation − depth)` along z; saturated or fully
/// penetrated pixels project onto the plate plane itself, an inherent limit
/// of the sensor.
pub fn back_project_imprint(
    imp: &TactileImprint,
    sensor: &SensorConfig,
    indentation: f64,
) -> Vec<Vec3> {
    let (h, w) = (imp.grid_h(), imp.grid_w());
    let half_w = (w as f64 - 1.0) / 2.0;
    let half_h = (h as f64 - 1.0) / 2.0;
    let g = sensor.plate_half_gap;
    let mut out = Vec::new();
    for s in 0..imp.k() {
        if !imp.present[s] {
            continue;
        }
        for r in 0..h {
            for c in 0..w {
                let d = imp.depth_at(s, r, c);
                if d <= 0.0 {
                    continue;
                }
                let x = (c as f64 - half_w) * sensor.pixel_pitch;
                let y = (r as f64 - half_h) * sensor.pixel_pitch;
                let clearance = (indentation - d).max(0.0);
                let z = if s == 0 { clearance - g } else { g - clearance };
                out.push(Vec3::new(x, y, z));
            }
        }
    }
    out
}

/// Canonical-frame model points that lie within `indentation` of either
/// plate plane (and inside the pixel field) when the object sits at `pose` —
/// the subset that could have produced contact there.
pub fn plate_visible_points(
    model: &ObjectModel,
    pose: &RigidPose,
    sensor: &SensorConfig,
    indentation: f64,
) -> Vec<Vec3> {
    let g = sensor.plate_half_gap;
    let half_w = (sensor.grid_w as f64 - 1.0) / 2.0;
    let half_h = (sensor.grid_h as f64 - 1.0) / 2.0;
    let mut out = Vec::new();
    for p in model.points() {
        let q = pose.transform_point(p);
        let col = (q.x / sensor.pixel_pitch + half_w).round();
        let row = (q.y / sensor.pixel_pitch + half_h).round();
        if col < 0.0 || row < 0.0 || col >= sensor.grid_w as f64 || row >= sensor.grid_h as f64 {
            continue;
        }
        let near_lower = q.z + g <= indentation;
        let near_upper = g - q.z <= indentation;
        if near_lower || near_upper {
            out.push(*p);
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub pose: RigidPose,
    pub n_iterations: usize,
    /// Mean squared correspondence distance after each iteration's
    /// alignment; non-increasing by construction.
    pub objectives: Vec<f64>,
}

/// Solve `min_{R,t} Σ ‖R p_i + t − q_i‖²` (Kabsch). Returns the smallest
/// and largest singular values alongside so the caller can rank-check.
fn kabsch(pairs: &[(Vec3, Vec3)]) -> Result<(Mat3, Vec3, f64, f64), BaselineError> {
    let n = pairs.len() as f64;
    let cen_p = pairs.iter().map(|(p, _)| p).sum::<Vec3>() / n;
    let cen_q = pairs.iter().map(|(_, q)| q).sum::<Vec3>() / n;
    let mut h = Mat3::zeros();
    for (p, q) in pairs {
        h += (p - cen_p) * (q - cen_q).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.ok_or_else(|| {
        BaselineError::DegenerateAlignment("cross-covariance SVD failed".into())
    })?;
    let v_t = svd.v_t.ok_or_else(|| {
        BaselineError::DegenerateAlignment("cross-covariance SVD failed".into())
    })?;
    let s = svd.singular_values;
    if !(s[0] > 0.0) || s[2] / s[0] < RANK_RATIO_MIN {
        return Err(BaselineError::DegenerateAlignment(format!(
            "cross-covariance is rank-deficient (singular values {:.3e} {:.3e} {:.3e}); \
             the correspondences leave a sliding or mirror ambiguity",
            s[0], s[1], s[2]
        )));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant();
    let rot = v * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, d.signum())) * u.transpose();
    let t = cen_q - rot * cen_p;
    Ok((rot, t, s[2], s[0]))
}

/// Refine `init` so the transformed target cloud explains the observed
/// contact points: alternate nearest-neighbor matching and closed-form
/// alignment, stopping when the pose moves less than 1e-4 (mm + rad) or
/// after `max_iter` rounds. Pass the full object cloud for the Global
/// variant or [`plate_visible_points`] for the Partial variant.
pub fn icp_refine(
    obs_points: &[Vec3],
    target_points: &[Vec3],
    init: &RigidPose,
    max_iter: usize,
) -> Result<IcpResult, BaselineError> {
    if obs_points.len() < 3 {
        return Err(BaselineError::DegenerateAlignment(format!(
            "{} contact points, need at least 3",
            obs_points.len()
        )));
    }
    if target_points.is_empty() {
        return Err(BaselineError::BadConfig("empty target cloud".into()));
    }
    if max_iter < 1 {
        return Err(BaselineError::BadConfig("max_iter must be at least 1".into()));
    }
    let finite =
        |v: &Vec3| v.x.is_finite() && v.y.is_finite() && v.z.is_finite();
    if !obs_points.iter().all(finite) || !target_points.iter().all(finite) || !init.is_valid() {
        return Err(BaselineError::BadConfig(
            "non-finite points or invalid initial pose".into(),
        ));
    }

    // Correspondences are searched in the canonical frame: pull each
    // observed point back through the current pose and query a grid built
    // once over the target cloud (rigid transforms preserve distances).
    let grid = PointGrid::build(target_points);
    let mut pose = *init;
    let mut objectives = Vec::new();
    let mut n_iterations = 0;
    for _ in 0..max_iter {
        let rt = pose.rotation.transpose();
        let pairs: Vec<(Vec3, Vec3)> = obs_points
            .iter()
            .map(|q| {
                let local = rt * (q - pose.translation);
                let (idx, _) = grid.nearest(&local);
                (target_points[idx], *q)
            })
            .collect();
        let (rot, t, _, _) = kabsch(&pairs)?;
        let new_pose = RigidPose::new(rot, t);
        let mse = pairs
            .iter()
            .map(|(p, q)| (new_pose.transform_point(p) - q).norm_squared())
            .sum::<f64>()
            / pairs.len() as f64;
        if let Some(&prev) = objectives.last() {
            debug_assert!(
                mse <= prev + 1e-9 * (1.0 + prev),
                "ICP objective rose: {prev} -> {mse}"
            );
        }
        objectives.push(mse);
        n_iterations += 1;

        let dt = (new_pose.translation - pose.translation).norm();
        let rel = new_pose.rotation * pose.rotation.transpose();
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        let dr = cos.acos();
        pose = new_pose;
        if dt + dr < POSE_DELTA_TOL {
            break;
        }
    }
    Ok(IcpResult { pose, n_iterations, objectives })
}
