//! Object models: canonical surface point clouds with symmetry annotations.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::metrics::PointGrid;
use super::{GeomError, Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryKind {
    None,
    HalfTurn,
    QuarterTurn,
    Revolute,
}

impl SymmetryKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SymmetryKind::None => "none",
            SymmetryKind::HalfTurn => "half_turn",
            SymmetryKind::QuarterTurn => "quarter_turn",
            SymmetryKind::Revolute => "revolute",
        }
    }

    fn from_str(s: &str) -> Option<Self> {
        match s {
            "none" => Some(SymmetryKind::None),
            "half_turn" => Some(SymmetryKind::HalfTurn),
            "quarter_turn" => Some(SymmetryKind::QuarterTurn),
            "revolute" => Some(SymmetryKind::Revolute),
            _ => None,
        }
    }
}

/// Declared object symmetry: a kind plus the symmetry axis (unit vector).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetryClass {
    pub kind: SymmetryKind,
    pub axis: Vec3,
}

/// Angular step used to treat continuous revolute symmetry discretely
/// (both in shape sampling and in symmetry checks): 360° / 72 = 5°.
pub const REVOLUTE_DISCRETIZATION: usize = 72;

impl SymmetryClass {
    pub fn none() -> Self {
        Self { kind: SymmetryKind::None, axis: Vec3::new(0.0, 0.0, 1.0) }
    }

    pub fn new(kind: SymmetryKind, axis: Vec3) -> Result<Self, GeomError> {
        let n = axis.norm();
        if !(n.is_finite() && (n - 1.0).abs() < 1e-6) {
            return Err(GeomError::BadObject(format!("symmetry axis norm {n} is not 1")));
        }
        Ok(Self { kind, axis: axis / n })
    }

    /// The generating rotation of the declared symmetry group
    /// (revolute uses the 5° discretization step); `None` for asymmetric.
    pub fn generator(&self) -> Option<Mat3> {
        let angle = match self.kind {
            SymmetryKind::None => return None,
            SymmetryKind::HalfTurn => std::f64::consts::PI,
            SymmetryKind::QuarterTurn => std::f64::consts::FRAC_PI_2,
            SymmetryKind::Revolute => {
                2.0 * std::f64::consts::PI / REVOLUTE_DISCRETIZATION as f64
            }
        };
        Some(
            *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(self.axis), angle)
                .matrix(),
        )
    }
}

/// Canonical surface point cloud with symmetry class, diameter and grasp axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectModel {
    points: Vec<Vec3>,
    diameter: f64,
    symmetry: SymmetryClass,
    grasp_axes: Vec<Vec3>,
    bbox_half_extents: Vec3,
}

impl ObjectModel {
    /// Builds a model from raw points; computes diameter and bounding box,
    /// then validates all invariants.
    pub fn new(
        points: Vec<Vec3>,
        symmetry: SymmetryClass,
        grasp_axes: Vec<Vec3>,
    ) -> Result<Self, GeomError> {
        let diameter = max_pairwise_extent(&points);
        Self::with_diameter(points, diameter, symmetry, grasp_axes)
    }

    fn with_diameter(
        points: Vec<Vec3>,
        diameter: f64,
        symmetry: SymmetryClass,
        grasp_axes: Vec<Vec3>,
    ) -> Result<Self, GeomError> {
        let bbox_half_extents = bbox_half_extents(&points);
        let model = Self { points, diameter, symmetry, grasp_axes, bbox_half_extents };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), GeomError> {
        if self.points.len() < 64 {
            return Err(GeomError::BadObject(format!(
                "model has {} points, need at least 64",
                self.points.len()
            )));
        }
        if !(self.diameter.is_finite() && self.diameter > 0.0) {
            return Err(GeomError::BadObject(format!("bad diameter {}", self.diameter)));
        }
        let centroid = self.points.iter().sum::<Vec3>() / self.points.len() as f64;
        if centroid.norm() > 1e-6 * self.diameter {
            return Err(GeomError::BadObject(format!(
                "centroid {:.3e} mm off origin (limit {:.3e})",
                centroid.norm(),
                1e-6 * self.diameter
            )));
        }
        if self.grasp_axes.is_empty() {
            return Err(GeomError::BadObject("no grasp axes declared".into()));
        }
        for a in &self.grasp_axes {
            if (a.norm() - 1.0).abs() > 1e-6 {
                return Err(GeomError::BadObject(format!("grasp axis {a:?} is not unit")));
            }
        }
        SymmetryClass::new(self.symmetry.kind, self.symmetry.axis)?;
        if let Some(gen) = self.symmetry.generator() {
            let chamfer = symmetric_chamfer(&self.points, &gen);
            if chamfer > 0.01 * self.diameter {
                return Err(GeomError::BadObject(format!(
                    "declared symmetry violated: Chamfer distance {:.4} mm exceeds 1% of diameter",
                    chamfer
                )));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    pub fn symmetry(&self) -> &SymmetryClass {
        &self.symmetry
    }

    pub fn grasp_axes(&self) -> &[Vec3] {
        &self.grasp_axes
    }

    pub fn bbox_half_extents(&self) -> Vec3 {
        self.bbox_half_extents
    }

    /// Writes the versioned text format.
    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "ebmpose-object v1")?;
        let ax = self.symmetry.axis;
        writeln!(w, "symmetry {} {} {} {}", self.symmetry.kind.as_str(), ax.x, ax.y, ax.z)?;
        writeln!(w, "diameter {}", self.diameter)?;
        writeln!(w, "grasp_axes {}", self.grasp_axes.len())?;
        for a in &self.grasp_axes {
            writeln!(w, "{} {} {}", a.x, a.y, a.z)?;
        }
        writeln!(w, "points {}", self.points.len())?;
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        w.flush()
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        self.write(&mut f)
    }

    /// Reads the versioned text format; errors carry 1-based line numbers.
    pub fn read(r: &mut impl Read) -> Result<Self, GeomError> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines().enumerate();

        let mut next_line = |expect: &str| -> Result<(usize, String), GeomError> {
            match lines.next() {
                Some((i, Ok(l))) => Ok((i + 1, l)),
                Some((i, Err(e))) => Err(GeomError::Parse { line: i + 1, msg: e.to_string() }),
                None => Err(GeomError::Parse {
                    line: 0,
                    msg: format!("unexpected end of file, expected {expect}"),
                }),
            }
        };

        let (line, header) = next_line("header")?;
        if header.trim() != "ebmpose-object v1" {
            return Err(GeomError::Parse {
                line,
                msg: format!("bad header {header:?}, expected \"ebmpose-object v1\""),
            });
        }

        let (line, sym) = next_line("symmetry")?;
        let toks: Vec<&str> = sym.split_whitespace().collect();
        if toks.len() != 5 || toks[0] != "symmetry" {
            return Err(GeomError::Parse { line, msg: "expected `symmetry <kind> <x> <y> <z>`".into() });
        }
        let kind = SymmetryKind::from_str(toks[1]).ok_or_else(|| GeomError::Parse {
            line,
            msg: format!("unknown symmetry kind {:?}", toks[1]),
        })?;
        let axis = parse_vec3(&toks[2..5], line)?;
        let symmetry = match kind {
            SymmetryKind::None => SymmetryClass::none(),
            _ => SymmetryClass::new(kind, axis)?,
        };

        let (line, diam) = next_line("diameter")?;
        let toks: Vec<&str> = diam.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != "diameter" {
            return Err(GeomError::Parse { line, msg: "expected `diameter <mm>`".into() });
        }
        let diameter: f64 = toks[1]
            .parse()
            .map_err(|e| GeomError::Parse { line, msg: format!("bad diameter: {e}") })?;

        let (line, ga) = next_line("grasp_axes")?;
        let toks: Vec<&str> = ga.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != "grasp_axes" {
            return Err(GeomError::Parse { line, msg: "expected `grasp_axes <n>`".into() });
        }
        let n_axes: usize = toks[1]
            .parse()
            .map_err(|e| GeomError::Parse { line, msg: format!("bad axis count: {e}") })?;
        let mut grasp_axes = Vec::with_capacity(n_axes);
        for _ in 0..n_axes {
            let (line, row) = next_line("grasp axis row")?;
            let toks: Vec<&str> = row.split_whitespace().collect();
            grasp_axes.push(parse_vec3(&toks, line)?);
        }

        let (line, pts) = next_line("points")?;
        let toks: Vec<&str> = pts.split_whitespace().collect();
        if toks.len() != 2 || toks[0] != "points" {
            return Err(GeomError::Parse { line, msg: "expected `points <N>`".into() });
        }
        let n_points: usize = toks[1]
            .parse()
            .map_err(|e| GeomError::Parse { line, msg: format!("bad point count: {e}") })?;
        let mut points = Vec::with_capacity(n_points);
        for _ in 0..n_points {
            let (line, row) = next_line("point row")?;
            let toks: Vec<&str> = row.split_whitespace().collect();
            points.push(parse_vec3(&toks, line)?);
        }

        Self::with_diameter(points, diameter, symmetry, grasp_axes)
    }

    pub fn read_from(path: &Path) -> Result<Self, GeomError> {
        let mut f = std::fs::File::open(path)?;
        Self::read(&mut f)
    }
}

fn parse_vec3(toks: &[&str], line: usize) -> Result<Vec3, GeomError> {
    if toks.len() != 3 {
        return Err(GeomError::Parse {
            line,
            msg: format!("expected 3 numbers, got {}", toks.len()),
        });
    }
    let mut v = [0.0; 3];
    for (i, t) in toks.iter().enumerate() {
        v[i] = t
            .parse()
            .map_err(|e| GeomError::Parse { line, msg: format!("bad number {t:?}: {e}") })?;
    }
    Ok(Vec3::new(v[0], v[1], v[2]))
}

fn bbox_half_extents(points: &[Vec3]) -> Vec3 {
    let mut e = Vec3::zeros();
    for p in points {
        e.x = e.x.max(p.x.abs());
        e.y = e.y.max(p.y.abs());
        e.z = e.z.max(p.z.abs());
    }
    e
}

/// Exact maximum pairwise distance (O(N²), used once at construction).
fn max_pairwise_extent(points: &[Vec3]) -> f64 {
    let mut best = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            best = best.max((p - q).norm_squared());
        }
    }
    best.sqrt()
}

/// Symmetric Chamfer distance between the point set and its rotated image.
fn symmetric_chamfer(points: &[Vec3], rot: &Mat3) -> f64 {
    let rotated: Vec<Vec3> = points.iter().map(|p| rot * p).collect();
    let grid_orig = PointGrid::build(points);
    let grid_rot = PointGrid::build(&rotated);
    let fwd: f64 =
        rotated.iter().map(|p| grid_orig.nearest(p).1).sum::<f64>() / points.len() as f64;
    let bwd: f64 =
        points.iter().map(|p| grid_rot.nearest(p).1).sum::<f64>() / points.len() as f64;
    0.5 * (fwd + bwd)
}
