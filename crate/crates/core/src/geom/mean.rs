//! Pose averaging: arithmetic translation mean plus the chordal L2 rotation
//! mean (orthogonal polar factor of the averaged matrix, det +1).

use super::{GeomError, Mat3, RigidPose, Vec3};

/// Mean of a set of rigid poses.
///
/// Translation is averaged componentwise. The rotation mean minimizes the
/// chordal (Frobenius) distance: the element-wise average of the rotation
/// matrices is projected back onto SO(3) via SVD, flipping the smallest
/// singular direction if needed to keep det +1. Deterministic.
pub fn mean_pose(candidates: &[RigidPose]) -> Result<RigidPose, GeomError> {
    if candidates.is_empty() {
        return Err(GeomError::ConfigError("mean_pose of an empty set".into()));
    }
    if candidates.len() == 1 {
        return Ok(candidates[0]);
    }
    let n = candidates.len() as f64;
    let translation: Vec3 = candidates.iter().map(|p| p.translation).sum::<Vec3>() / n;
    let avg: Mat3 = candidates.iter().map(|p| p.rotation).sum::<Mat3>() / n;

    let svd = avg.svd(true, true);
    let min_sv = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_sv < 1e-9 {
        return Err(GeomError::DegenerateMean(min_sv));
    }
    let u = svd.u.expect("SVD with u requested");
    let v_t = svd.v_t.expect("SVD with v_t requested");
    let det_sign = (u * v_t).determinant().signum();
    let rotation = u * Mat3::from_diagonal(&Vec3::new(1.0, 1.0, det_sign)) * v_t;
    Ok(RigidPose { rotation, translation })
}

#[cfg(test)]
mod tests {
    use super::super::test_util::random_pose;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rot_z(a: f64) -> Mat3 {
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), a).matrix()
    }

    #[test]
    fn single_candidate_is_returned_unchanged() {
        let p = RigidPose::new(rot_z(0.4), Vec3::new(1.0, 2.0, 3.0));
        let m = mean_pose(&[p]).unwrap();
        assert_eq!(m, p);
    }

    #[test]
    fn translation_mean_is_convex() {
        let a = RigidPose::identity();
        let b = RigidPose::new(Mat3::identity(), Vec3::new(2.0, 0.0, 0.0));
        let m = mean_pose(&[a, b]).unwrap();
        assert!((m.translation - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((m.rotation - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn symmetric_rotations_average_to_identity() {
        let a = RigidPose::new(rot_z(10.0_f64.to_radians()), Vec3::zeros());
        let b = RigidPose::new(rot_z(-10.0_f64.to_radians()), Vec3::zeros());
        let m = mean_pose(&[a, b]).unwrap();
        assert!((m.rotation - Mat3::identity()).norm() < 1e-9);
    }

    #[test]
    fn duplicate_pose_mean_is_exact() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..50 {
            let p = random_pose(&mut rng, 10.0);
            let m = mean_pose(&[p, p]).unwrap();
            assert_eq!(m.translation, p.translation);
            assert!((m.rotation - p.rotation).norm() < 1e-12);
            assert!(m.is_valid());
        }
    }

    #[test]
    fn mean_is_a_valid_rotation_for_random_sets() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        for _ in 0..50 {
            let poses: Vec<RigidPose> = (0..8).map(|_| random_pose(&mut rng, 5.0)).collect();
            if let Ok(m) = mean_pose(&poses) {
                assert!(m.is_valid());
            }
        }
    }

    #[test]
    fn antipodal_rotations_are_degenerate() {
        // 180° apart about x: the average matrix has two zero singular values.
        let a = RigidPose::identity();
        let b = RigidPose::new(
            Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)),
            Vec3::zeros(),
        );
        match mean_pose(&[a, b]) {
            Err(GeomError::DegenerateMean(sv)) => assert!(sv < 1e-9),
            other => panic!("expected DegenerateMean, got {other:?}"),
        }
    }
}
