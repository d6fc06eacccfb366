//! Icosphere-based pose prior: coarse orientation hypotheses from subdivided
//! icosahedron vertex directions crossed with in-plane rotations, plus
//! Gaussian translation noise in normalized units.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{GeomError, Mat3, ObjectModel, Pose9, Vec3};

/// Configuration of the prior pose sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConfig {
    /// Number of candidates to return.
    pub m: usize,
    /// Icosphere subdivision level (0 = icosahedron, 12 vertices).
    pub level: usize,
    /// In-plane rotations per viewpoint direction.
    pub n_inplane: usize,
    /// Std-dev of the translation prior, in workspace-half-extent units.
    pub sigma_trans: f64,
    /// When `m` exceeds the orientation grid size, cycle through the grid
    /// with fresh translations; otherwise error.
    pub allow_cycle: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { m: 252, level: 1, n_inplane: 6, sigma_trans: 0.2, allow_cycle: true }
    }
}

/// Unit vertex directions of an icosphere at the given subdivision level.
///
/// Level 0 is the icosahedron (12 vertices); each subdivision adds one vertex
/// per edge (V' = V + E), giving 42, 162, ... vertices. Order is
/// deterministic: seed vertices first, then edge midpoints in creation order.
pub fn icosphere_directions(level: usize) -> Vec<Vec3> {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();

    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoint_of = std::collections::HashMap::new();
        let mut new_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (f[e], f[(e + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[e] = *midpoint_of.entry(key).or_insert_with(|| {
                    verts.push((verts[a] + verts[b]).normalize());
                    verts.len() - 1
                });
            }
            new_faces.push([f[0], mids[0], mids[2]]);
            new_faces.push([f[1], mids[1], mids[0]]);
            new_faces.push([f[2], mids[2], mids[1]]);
            new_faces.push([mids[0], mids[1], mids[2]]);
        }
        faces = new_faces;
    }
    verts
}

/// Rotation whose third column (local z-axis) equals `view`, with a
/// deterministic in-plane reference, rotated by `angle` about `view`.
fn view_rotation(view: &Vec3, angle: f64) -> Mat3 {
    let reference =
        if view.z.abs() < 0.99 { Vec3::new(0.0, 0.0, 1.0) } else { Vec3::new(1.0, 0.0, 0.0) };
    let x = reference.cross(view).normalize();
    let y = view.cross(&x);
    let frame = Mat3::from_columns(&[x, y, *view]);
    let spin =
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Vector3::z_axis(), angle).matrix();
    frame * spin
}

/// Samples `config.m` prior poses: icosphere viewpoint directions crossed
/// with uniformly spaced in-plane rotations, with translations drawn from
/// `N(0, sigma_trans² I)` clipped to the workspace (|component| ≤ 1).
///
/// The RNG is consumed only for translations (three draws per candidate), so
/// candidate orientations are deterministic.
pub fn icosphere_prior_poses(
    config: &PriorConfig,
    _model: &ObjectModel,
    rng: &mut impl Rng,
) -> Result<Vec<Pose9>, GeomError> {
    if config.m < 1 {
        return Err(GeomError::ConfigError("prior requires M >= 1".into()));
    }
    if config.n_inplane < 1 {
        return Err(GeomError::ConfigError("n_inplane must be >= 1".into()));
    }
    let dirs = icosphere_directions(config.level);
    let grid_size = dirs.len() * config.n_inplane;
    if config.m > grid_size && !config.allow_cycle {
        return Err(GeomError::ConfigError(format!(
            "M = {} exceeds the {} orientation grid points and cycling is disabled",
            config.m, grid_size
        )));
    }

    let mut poses = Vec::with_capacity(config.m);
    for i in 0..config.m {
        let grid_idx = i % grid_size;
        let view = &dirs[grid_idx / config.n_inplane];
        let j = grid_idx % config.n_inplane;
        let angle = 2.0 * std::f64::consts::PI * j as f64 / config.n_inplane as f64;
        let r = view_rotation(view, angle);
        let mut trans = Vec3::zeros();
        for c in 0..3 {
            let z: f64 = rng.sample(StandardNormal);
            trans[c] = (config.sigma_trans * z).clamp(-1.0, 1.0);
        }
        poses.push(Pose9 { rx: r.column(0).into(), ry: r.column(1).into(), trans });
    }
    Ok(poses)
}
