//! Parametric test shapes: quasi-uniform surface point clouds whose sets are
//! exactly closed under their declared symmetry groups (box grids are
//! mirror-symmetric; cylindrical shapes sample 72 angular stations, matching
//! the 5° discretization used for revolute symmetry).

use super::SimError;
use crate::geom::{ObjectModel, SymmetryClass, SymmetryKind, Vec3};

/// Parametric shape specifications (dimensions in millimeters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShapeSpec {
    Box { l: f64, w: f64, h: f64 },
    Cylinder { r: f64, h: f64 },
    /// L-profile (legs `lx` along x and `lz` along z, thickness `t`)
    /// extruded over depth `w` along y.
    LBracket { lx: f64, lz: f64, t: f64, w: f64 },
    /// Plate l×w×h with a rectangular notch (width `notch_w`, depth
    /// `notch_d`) cut into its +x edge, through the full thickness.
    NotchedPlate { l: f64, w: f64, h: f64, notch_w: f64, notch_d: f64 },
    Tube { r_out: f64, r_in: f64, h: f64 },
}

impl ShapeSpec {
    /// Parses `name:a,b,...` strings, e.g. `box:20,10,6` or `tube:5,3,10`.
    pub fn parse(s: &str) -> Result<Self, SimError> {
        let (name, rest) = s
            .split_once(':')
            .ok_or_else(|| SimError::BadSpec(format!("expected `name:dims`, got {s:?}")))?;
        let dims: Vec<f64> = rest
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| SimError::BadSpec(format!("bad dimension {t:?}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        let need = |n: usize| -> Result<(), SimError> {
            if dims.len() == n {
                Ok(())
            } else {
                Err(SimError::BadSpec(format!(
                    "{name} expects {n} dimensions, got {}",
                    dims.len()
                )))
            }
        };
        match name {
            "box" => {
                need(3)?;
                Ok(ShapeSpec::Box { l: dims[0], w: dims[1], h: dims[2] })
            }
            "cylinder" => {
                need(2)?;
                Ok(ShapeSpec::Cylinder { r: dims[0], h: dims[1] })
            }
            "l_bracket" => {
                need(4)?;
                Ok(ShapeSpec::LBracket { lx: dims[0], lz: dims[1], t: dims[2], w: dims[3] })
            }
            "notched_plate" => {
                need(5)?;
                Ok(ShapeSpec::NotchedPlate {
                    l: dims[0],
                    w: dims[1],
                    h: dims[2],
                    notch_w: dims[3],
                    notch_d: dims[4],
                })
            }
            "tube" => {
                need(3)?;
                Ok(ShapeSpec::Tube { r_out: dims[0], r_in: dims[1], h: dims[2] })
            }
            other => Err(SimError::BadSpec(format!("unknown shape {other:?}"))),
        }
    }

    fn check_positive(&self) -> Result<(), SimError> {
        let dims: Vec<f64> = match *self {
            ShapeSpec::Box { l, w, h } => vec![l, w, h],
            ShapeSpec::Cylinder { r, h } => vec![r, h],
            ShapeSpec::LBracket { lx, lz, t, w } => vec![lx, lz, t, w],
            ShapeSpec::NotchedPlate { l, w, h, notch_w, notch_d } => {
                vec![l, w, h, notch_w, notch_d]
            }
            ShapeSpec::Tube { r_out, r_in, h } => vec![r_out, r_in, h],
        };
        if dims.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(SimError::BadSpec(format!("non-positive dimension in {self:?}")));
        }
        match *self {
            ShapeSpec::Tube { r_out, r_in, .. } if r_in >= r_out => {
                Err(SimError::BadSpec("tube requires r_in < r_out".into()))
            }
            ShapeSpec::LBracket { lx, lz, t, .. } if t >= lx || t >= lz => {
                Err(SimError::BadSpec("l_bracket requires t < lx and t < lz".into()))
            }
            ShapeSpec::NotchedPlate { l, w, notch_w, notch_d, .. }
                if notch_w >= w || notch_d >= l =>
            {
                Err(SimError::BadSpec("notch must be smaller than the plate".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Target point count; the sampling pitch shrinks until at least
/// [`MIN_POINTS`] surface points are produced.
const TARGET_POINTS: usize = 1100;
const MIN_POINTS: usize = 1024;
/// Angular stations for rotationally symmetric shapes (5° steps).
const N_ANGULAR: usize = 72;

/// Builds the surface point cloud for `spec` with its declared symmetry and
/// default grasp axis; the cloud is centroid-centered.
pub fn make_shape(spec: &ShapeSpec) -> Result<ObjectModel, SimError> {
    spec.check_positive()?;
    let area = surface_area(spec);
    let mut pitch = (area / TARGET_POINTS as f64).sqrt();
    let mut points = sample_surface(spec, pitch);
    let mut guard = 0;
    while points.len() < MIN_POINTS && guard < 30 {
        pitch *= 0.93;
        points = sample_surface(spec, pitch);
        guard += 1;
    }

    // Recenter exactly; symmetric constructions land on the symmetry axis,
    // so this cannot break set closure beyond float noise.
    let centroid: Vec3 = points.iter().sum::<Vec3>() / points.len() as f64;
    for p in &mut points {
        *p -= centroid;
    }

    let z = Vec3::new(0.0, 0.0, 1.0);
    let (symmetry, grasp_axes) = match *spec {
        ShapeSpec::Box { l, w, .. } => {
            let kind = if (l - w).abs() <= 1e-9 * l.max(w) {
                SymmetryKind::QuarterTurn
            } else {
                SymmetryKind::HalfTurn
            };
            (SymmetryClass::new(kind, z).unwrap(), vec![z])
        }
        ShapeSpec::Cylinder { .. } | ShapeSpec::Tube { .. } => (
            SymmetryClass::new(SymmetryKind::Revolute, z).unwrap(),
            // Side grasp: squeeze the curved surface.
            vec![Vec3::new(1.0, 0.0, 0.0)],
        ),
        ShapeSpec::LBracket { .. } => (SymmetryClass::none(), vec![Vec3::new(0.0, 1.0, 0.0)]),
        ShapeSpec::NotchedPlate { .. } => (SymmetryClass::none(), vec![z]),
    };

    Ok(ObjectModel::new(points, symmetry, grasp_axes)?)
}

fn surface_area(spec: &ShapeSpec) -> f64 {
    use std::f64::consts::PI;
    match *spec {
        ShapeSpec::Box { l, w, h } => 2.0 * (l * w + l * h + w * h),
        ShapeSpec::Cylinder { r, h } => 2.0 * PI * r * h + 2.0 * PI * r * r,
        ShapeSpec::LBracket { lx, lz, t, w } => {
            let cross = lx * t + (lz - t) * t;
            let perimeter = 2.0 * (lx + lz);
            2.0 * cross + perimeter * w
        }
        ShapeSpec::NotchedPlate { l, w, h, notch_w, notch_d } => {
            let cross = l * w - notch_w * notch_d;
            let perimeter = 2.0 * (l + w) + 2.0 * notch_d;
            2.0 * cross + perimeter * h
        }
        ShapeSpec::Tube { r_out, r_in, h } => {
            2.0 * PI * (r_out + r_in) * h + 2.0 * PI * (r_out * r_out - r_in * r_in)
        }
    }
}

fn sample_surface(spec: &ShapeSpec, pitch: f64) -> Vec<Vec3> {
    match *spec {
        ShapeSpec::Box { l, w, h } => sample_box(l, w, h, pitch),
        ShapeSpec::Cylinder { r, h } => sample_cylinder(r, h, pitch),
        ShapeSpec::LBracket { lx, lz, t, w } => {
            // L cross-section in the xz-plane, extruded along y, then
            // shifted so the raw corner sits near the origin (recentred later).
            let poly = vec![
                (0.0, 0.0),
                (lx, 0.0),
                (lx, t),
                (t, t),
                (t, lz),
                (0.0, lz),
            ];
            extruded_polygon(&poly, w, pitch)
                .into_iter()
                .map(|(u, v, d)| Vec3::new(u, d, v))
                .collect()
        }
        ShapeSpec::NotchedPlate { l, w, h, notch_w, notch_d } => {
            let poly = vec![
                (-l / 2.0, -w / 2.0),
                (l / 2.0, -w / 2.0),
                (l / 2.0, -notch_w / 2.0),
                (l / 2.0 - notch_d, -notch_w / 2.0),
                (l / 2.0 - notch_d, notch_w / 2.0),
                (l / 2.0, notch_w / 2.0),
                (l / 2.0, w / 2.0),
                (-l / 2.0, w / 2.0),
            ];
            extruded_polygon(&poly, h, pitch)
                .into_iter()
                .map(|(u, v, d)| Vec3::new(u, v, d))
                .collect()
        }
        ShapeSpec::Tube { r_out, r_in, h } => sample_tube(r_out, r_in, h, pitch),
    }
}

/// Inclusive endpoint grid with `max(2, round(extent/pitch)+1)` stations;
/// symmetric about the interval midpoint.
fn linspace(a: f64, b: f64, pitch: f64) -> Vec<f64> {
    let n = (((b - a).abs() / pitch).round() as usize + 1).max(2);
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn sample_box(l: f64, w: f64, h: f64, pitch: f64) -> Vec<Vec3> {
    let xs = linspace(-l / 2.0, l / 2.0, pitch);
    let ys = linspace(-w / 2.0, w / 2.0, pitch);
    let zs = linspace(-h / 2.0, h / 2.0, pitch);
    let mut pts = Vec::new();
    for &x in &xs {
        for &y in &ys {
            pts.push(Vec3::new(x, y, -h / 2.0));
            pts.push(Vec3::new(x, y, h / 2.0));
        }
    }
    for &x in &xs {
        for &z in &zs {
            pts.push(Vec3::new(x, -w / 2.0, z));
            pts.push(Vec3::new(x, w / 2.0, z));
        }
    }
    for &y in &ys {
        for &z in &zs {
            pts.push(Vec3::new(-l / 2.0, y, z));
            pts.push(Vec3::new(l / 2.0, y, z));
        }
    }
    pts
}

fn ring(r: f64, z: f64) -> impl Iterator<Item = Vec3> {
    (0..N_ANGULAR).map(move |j| {
        let a = 2.0 * std::f64::consts::PI * j as f64 / N_ANGULAR as f64;
        Vec3::new(r * a.cos(), r * a.sin(), z)
    })
}

fn sample_cylinder(r: f64, h: f64, pitch: f64) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for &z in &linspace(-h / 2.0, h / 2.0, pitch) {
        pts.extend(ring(r, z));
    }
    // Caps: concentric rings ending exactly at the rim, no center point.
    let n_r = ((r / pitch).round() as usize).max(1);
    for k in 1..=n_r {
        let rk = r * k as f64 / n_r as f64;
        if k < n_r {
            // The rim ring itself is already part of the lateral surface.
            pts.extend(ring(rk, -h / 2.0));
            pts.extend(ring(rk, h / 2.0));
        }
    }
    pts
}

fn sample_tube(r_out: f64, r_in: f64, h: f64, pitch: f64) -> Vec<Vec3> {
    let mut pts = Vec::new();
    for &z in &linspace(-h / 2.0, h / 2.0, pitch) {
        pts.extend(ring(r_out, z));
        pts.extend(ring(r_in, z));
    }
    for &rk in &linspace(r_in, r_out, pitch) {
        if rk > r_in && rk < r_out {
            pts.extend(ring(rk, -h / 2.0));
            pts.extend(ring(rk, h / 2.0));
        }
    }
    pts
}

/// Surface of a polygon extruded symmetrically over `depth` along the third
/// axis: side walls plus both caps. Returns `(u, v, d)` triples.
fn extruded_polygon(poly: &[(f64, f64)], depth: f64, pitch: f64) -> Vec<(f64, f64, f64)> {
    let mut pts = Vec::new();
    let ds = linspace(-depth / 2.0, depth / 2.0, pitch);

    for i in 0..poly.len() {
        let (au, av) = poly[i];
        let (bu, bv) = poly[(i + 1) % poly.len()];
        let len = ((bu - au).powi(2) + (bv - av).powi(2)).sqrt();
        let n = ((len / pitch).round() as usize + 1).max(2);
        for s in 0..n {
            let f = s as f64 / (n - 1) as f64;
            let (u, v) = (au + (bu - au) * f, av + (bv - av) * f);
            for &d in &ds {
                pts.push((u, v, d));
            }
        }
    }

    let (mut lo_u, mut hi_u) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut lo_v, mut hi_v) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(u, v) in poly {
        lo_u = lo_u.min(u);
        hi_u = hi_u.max(u);
        lo_v = lo_v.min(v);
        hi_v = hi_v.max(v);
    }
    for &u in &linspace(lo_u, hi_u, pitch) {
        for &v in &linspace(lo_v, hi_v, pitch) {
            if point_in_polygon(u, v, poly) {
                pts.push((u, v, -depth / 2.0));
                pts.push((u, v, depth / 2.0));
            }
        }
    }
    pts
}

/// Ray-casting point-in-polygon test (strictly interior is fine; boundary
/// points are covered by the wall sampling anyway).
fn point_in_polygon(u: f64, v: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (ui, vi) = poly[i];
        let (uj, vj) = poly[j];
        if (vi > v) != (vj > v) && u < (uj - ui) * (v - vi) / (vj - vi) + ui {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{add_s_metric, RigidPose};

    #[test]
    fn cube_diameter_is_the_space_diagonal() {
        let model = make_shape(&ShapeSpec::Box { l: 10.0, w: 10.0, h: 10.0 }).unwrap();
        let expected = 10.0 * 3.0f64.sqrt();
        assert!(
            (model.diameter() - expected).abs() < 0.01 * expected,
            "diameter {} vs {}",
            model.diameter(),
            expected
        );
        assert_eq!(model.symmetry().kind, SymmetryKind::QuarterTurn);
        assert!(model.points().len() >= 1024);
    }

    #[test]
    fn rectangular_box_declares_half_turn() {
        let model = make_shape(&ShapeSpec::Box { l: 20.0, w: 10.0, h: 6.0 }).unwrap();
        assert_eq!(model.symmetry().kind, SymmetryKind::HalfTurn);
        assert!(model.points().len() >= 1024);
    }

    #[test]
    fn cylinder_points_lie_on_surface() {
        let r = 5.0;
        let model = make_shape(&ShapeSpec::Cylinder { r, h: 20.0 }).unwrap();
        assert_eq!(model.symmetry().kind, SymmetryKind::Revolute);
        for p in model.points() {
            let radial = (p.x * p.x + p.y * p.y).sqrt();
            let on_lateral = (radial - r).abs() < 1e-9;
            let on_cap = (p.z.abs() - 10.0).abs() < 1e-9 && radial <= r + 1e-9;
            assert!(on_lateral || on_cap, "point {p:?} off the cylinder surface");
        }
    }

    #[test]
    fn tube_is_revolute_and_twin_poses_coincide() {
        let model = make_shape(&ShapeSpec::Tube { r_out: 5.0, r_in: 3.0, h: 10.0 }).unwrap();
        assert_eq!(model.symmetry().kind, SymmetryKind::Revolute);
        let gt = RigidPose::identity();
        let rot = *nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Vector3::z_axis(),
            30.0_f64.to_radians(),
        )
        .matrix();
        let est = RigidPose::new(rot, nalgebra::Vector3::zeros());
        // 30° is a multiple of the 5° angular discretization: exact twin.
        let d = add_s_metric(&est, &gt, model.points());
        assert!(d < 1e-9, "ADD-S {d}");
    }

    #[test]
    fn bracket_and_notched_plate_build_asymmetric() {
        let b = make_shape(&ShapeSpec::LBracket { lx: 20.0, lz: 14.0, t: 4.0, w: 10.0 }).unwrap();
        assert_eq!(b.symmetry().kind, SymmetryKind::None);
        assert!(b.points().len() >= 1024);

        let n = make_shape(&ShapeSpec::NotchedPlate {
            l: 24.0,
            w: 14.0,
            h: 5.0,
            notch_w: 6.0,
            notch_d: 5.0,
        })
        .unwrap();
        assert_eq!(n.symmetry().kind, SymmetryKind::None);
        assert!(n.points().len() >= 1024);
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(make_shape(&ShapeSpec::Box { l: -1.0, w: 1.0, h: 1.0 }).is_err());
        assert!(make_shape(&ShapeSpec::Cylinder { r: 0.0, h: 5.0 }).is_err());
        assert!(make_shape(&ShapeSpec::Tube { r_out: 3.0, r_in: 5.0, h: 5.0 }).is_err());
        assert!(
            make_shape(&ShapeSpec::NotchedPlate { l: 10.0, w: 6.0, h: 3.0, notch_w: 8.0, notch_d: 2.0 })
                .is_err()
        );
    }

    #[test]
    fn spec_strings_parse() {
        assert_eq!(
            ShapeSpec::parse("box:20,10,6").unwrap(),
            ShapeSpec::Box { l: 20.0, w: 10.0, h: 6.0 }
        );
        assert_eq!(
            ShapeSpec::parse("tube:5, 3, 10").unwrap(),
            ShapeSpec::Tube { r_out: 5.0, r_in: 3.0, h: 10.0 }
        );
        assert!(ShapeSpec::parse("sphere:3").is_err());
        assert!(ShapeSpec::parse("box:1,2").is_err());
    }
}
