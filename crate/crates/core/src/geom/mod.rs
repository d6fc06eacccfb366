//! Rigid-body pose representations, rotation conversions, pose priors and
//! the ADD / ADD-S evaluation metrics.
//!
//! Poses live in two forms: [`RigidPose`] is a plain SE(3) element
//! (orthonormal rotation + translation in millimeters), while [`Pose9`] is
//! the free 9-vector the diffusion operates on — the first two rotation
//! columns (continuous 6D rotation representation) plus a translation
//! normalized by the workspace half-extent so all nine components are O(1).

mod mean;
mod metrics;
mod object;
mod prior;

pub use mean::mean_pose;
pub use metrics::{add_metric, add_s_metric, pose_distance, PointGrid};
pub use object::{ObjectModel, SymmetryClass, SymmetryKind, REVOLUTE_DISCRETIZATION};
pub use prior::{icosphere_directions, icosphere_prior_poses, PriorConfig};

use thiserror::Error;

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;

/// Default workspace half-extent (mm) used to normalize translations.
pub const DEFAULT_HALF_EXTENT: f64 = 30.0;

/// Minimum norm for a rotation column before it counts as degenerate.
const MIN_COLUMN_NORM: f64 = 1e-8;
/// Angular tolerance (rad) under which two rotation columns count as parallel.
const MIN_COLUMN_ANGLE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum GeomError {
    #[error("degenerate rotation columns: {0}")]
    DegenerateRotation(String),
    #[error("matrix is not a rotation: {0}")]
    NotARotation(String),
    #[error("degenerate rotation mean: singular value {0:.3e} below 1e-9")]
    DegenerateMean(f64),
    #[error("prior configuration error: {0}")]
    ConfigError(String),
    #[error("object model error: {0}")]
    BadObject(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Gram–Schmidt recovery of a rotation matrix from its first two columns.
///
/// Columns: `c1 = normalize(rx)`, `c2 = normalize(ry - (ry·c1) c1)`,
/// `c3 = c1 × c2`; the result is orthonormal with det +1.
pub fn rot6d_to_matrix(rx: &Vec3, ry: &Vec3) -> Result<Mat3, GeomError> {
    let nx = rx.norm();
    if nx <= MIN_COLUMN_NORM {
        return Err(GeomError::DegenerateRotation(format!("rx norm {nx:.3e}")));
    }
    let ny = ry.norm();
    if ny <= MIN_COLUMN_NORM {
        return Err(GeomError::DegenerateRotation(format!("ry norm {ny:.3e}")));
    }
    let c1 = rx / nx;
    let resid = ry - c1 * ry.dot(&c1);
    // |resid| = |ry| sin(angle between rx and ry); reject near-parallel pairs.
    if resid.norm() <= ny * MIN_COLUMN_ANGLE {
        return Err(GeomError::DegenerateRotation(
            "rx and ry are parallel within 1e-6 rad".into(),
        ));
    }
    let c2 = resid / resid.norm();
    let c3 = c1.cross(&c2);
    Ok(Mat3::from_columns(&[c1, c2, c3]))
}

/// Inverse of the 6D representation: the first two columns of `r`.
pub fn matrix_to_rot6d(r: &Mat3) -> Result<(Vec3, Vec3), GeomError> {
    let err = (r * r.transpose() - Mat3::identity()).norm();
    if err > 1e-6 {
        return Err(GeomError::NotARotation(format!(
            "R·Rᵀ deviates from I by {err:.3e}"
        )));
    }
    if r.determinant() < 0.0 {
        return Err(GeomError::NotARotation("negative determinant".into()));
    }
    Ok((r.column(0).into(), r.column(1).into()))
}

/// SE(3) pose: object-to-TCP rotation and translation in millimeters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidPose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidPose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `R·Rᵀ = I` and `det R = 1`, both within 1e-9.
    pub fn is_valid(&self) -> bool {
        let r = &self.rotation;
        (r * r.transpose() - Mat3::identity()).norm() <= 1e-9
            && (r.determinant() - 1.0).abs() <= 1e-9
    }
}

/// The 9-D diffusion state: two rotation columns plus normalized translation.
///
/// Component order in array form is `[rx, ry, trans]`. The columns are not
/// required to be orthonormal — diffusion perturbs them freely — and are
/// orthonormalized only when a rigid pose is needed (rendering, metrics).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose9 {
    pub rx: Vec3,
    pub ry: Vec3,
    pub trans: Vec3,
}

impl Pose9 {
    /// Packs a rigid pose, normalizing translation by `half_extent` (mm).
    pub fn pack(pose: &RigidPose, half_extent: f64) -> Self {
        Self {
            rx: pose.rotation.column(0).into(),
            ry: pose.rotation.column(1).into(),
            trans: pose.translation / half_extent,
        }
    }

    /// Orthonormalizes back to a rigid pose; translation scaled by `half_extent`.
    pub fn unpack(&self, half_extent: f64) -> Result<RigidPose, GeomError> {
        let rotation = rot6d_to_matrix(&self.rx, &self.ry)?;
        Ok(RigidPose { rotation, translation: self.trans * half_extent })
    }

    pub fn to_array(&self) -> [f64; 9] {
        [
            self.rx.x, self.rx.y, self.rx.z, self.ry.x, self.ry.y, self.ry.z,
            self.trans.x, self.trans.y, self.trans.z,
        ]
    }

    pub fn from_array(a: &[f64; 9]) -> Self {
        Self {
            rx: Vec3::new(a[0], a[1], a[2]),
            ry: Vec3::new(a[3], a[4], a[5]),
            trans: Vec3::new(a[6], a[7], a[8]),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn rot6d_identity_from_axes() {
        let r = rot6d_to_matrix(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(r, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rot6d_scaling_is_removed() {
        let r = rot6d_to_matrix(&Vec3::new(2.0, 0.0, 0.0), &Vec3::new(0.0, 3.0, 0.0)).unwrap();
        assert_abs_diff_eq!(r, Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn rot6d_gram_schmidt_hand_case() {
        // rx = (1,1,0)/√2, ry = (0,1,0): hand Gram–Schmidt gives columns
        // ((1,1,0)/√2, (−1,1,0)/√2, (0,0,1)).
        let s = 1.0 / 2.0_f64.sqrt();
        let r = rot6d_to_matrix(&Vec3::new(s, s, 0.0), &Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let expected = Mat3::from_columns(&[
            Vec3::new(s, s, 0.0),
            Vec3::new(-s, s, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ]);
        assert_abs_diff_eq!(r, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(r * r.transpose(), Mat3::identity(), epsilon = 1e-12);
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rot6d_rejects_degenerate_inputs() {
        assert!(rot6d_to_matrix(&Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0)).is_err());
        assert!(rot6d_to_matrix(&Vec3::new(1.0, 0.0, 0.0), &Vec3::new(2.0, 0.0, 0.0)).is_err());
        assert!(rot6d_to_matrix(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros()).is_err());
    }

    #[test]
    fn matrix_to_rot6d_reads_columns() {
        let (rx, ry) = matrix_to_rot6d(&Mat3::identity()).unwrap();
        assert_eq!(rx, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(ry, Vec3::new(0.0, 1.0, 0.0));

        // 90 degrees about z.
        let r = *nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), std::f64::consts::FRAC_PI_2)
            .matrix();
        let (rx, ry) = matrix_to_rot6d(&r).unwrap();
        assert_abs_diff_eq!(rx, Vec3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(ry, Vec3::new(-1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn matrix_to_rot6d_rejects_non_rotations() {
        assert!(matrix_to_rot6d(&(Mat3::identity() * 2.0)).is_err());
        let mut reflect = Mat3::identity();
        reflect[(2, 2)] = -1.0;
        assert!(matrix_to_rot6d(&reflect).is_err());
    }

    #[test]
    fn rot6d_round_trip_on_random_rotations() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for _ in 0..1000 {
            let r = test_util::random_rotation(&mut rng);
            let (rx, ry) = matrix_to_rot6d(&r).unwrap();
            let back = rot6d_to_matrix(&rx, &ry).unwrap();
            assert!((back - r).norm() < 1e-9, "round-trip residual too large");
        }
    }

    #[test]
    fn pack_unpack_round_trip_and_idempotence() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..200 {
            let pose = test_util::random_pose(&mut rng, 25.0);
            let p9 = Pose9::pack(&pose, DEFAULT_HALF_EXTENT);
            let back = p9.unpack(DEFAULT_HALF_EXTENT).unwrap();
            assert!((back.rotation - pose.rotation).norm() < 1e-9);
            assert!((back.translation - pose.translation).norm() < 1e-9);

            // Orthonormalization is idempotent within 1e-12.
            let once = Pose9::pack(&back, DEFAULT_HALF_EXTENT);
            let twice = Pose9::pack(&once.unpack(DEFAULT_HALF_EXTENT).unwrap(), DEFAULT_HALF_EXTENT);
            let d: f64 = once
                .to_array()
                .iter()
                .zip(twice.to_array())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            assert!(d < 1e-12);
        }
    }

    #[test]
    fn array_round_trip_preserves_component_order() {
        let p = Pose9 {
            rx: Vec3::new(1.0, 2.0, 3.0),
            ry: Vec3::new(4.0, 5.0, 6.0),
            trans: Vec3::new(7.0, 8.0, 9.0),
        };
        let a = p.to_array();
        assert_eq!(a, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        assert_eq!(Pose9::from_array(&a), p);
    }
}
