//! Tape-graph builders shared by the energy network and the regression
//! baseline: the parameter layout, per-sensor image encoders, the point-cloud
//! encoder, the time embedding, and the fused head with its explicitly
//! unrolled pose gradient.

use crate::ad::{NodeId, Tape};
use crate::geom::Vec3;
use crate::sim::{TactileImprint, N_SENSORS};

use super::ArchConfig;

/// Offsets of one two-layer encoder's parameter blocks inside the flat
/// parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct EncOffsets {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Shape record for one parameter block; `cols == 0` marks a bias vector of
/// length `rows`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockDesc {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
}

impl BlockDesc {
    pub fn len(&self) -> usize {
        self.rows * self.cols.max(1)
    }
}

/// Sequential block allocator used to lay out parameter vectors.
pub(crate) struct Cursor {
    cur: usize,
    blocks: Vec<BlockDesc>,
}

impl Cursor {
    pub fn new() -> Self {
        Cursor { cur: 0, blocks: Vec::new() }
    }

    pub fn take(&mut self, rows: usize, cols: usize) -> usize {
        let off = self.cur;
        let desc = BlockDesc { off, rows, cols };
        self.cur += desc.len();
        self.blocks.push(desc);
        off
    }

    pub fn enc(&mut self, in_dim: usize, hidden: usize, feat: usize) -> EncOffsets {
        EncOffsets {
            w1: self.take(hidden, in_dim),
            b1: self.take(hidden, 0),
            w2: self.take(feat, hidden),
            b2: self.take(feat, 0),
        }
    }

    pub fn finish(self) -> (usize, Vec<BlockDesc>) {
        (self.cur, self.blocks)
    }
}

/// Parameter layout of the energy network, blocks in their serialized order:
/// observation encoder, render encoder, object encoder, time embedding,
/// three fusion layers.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub obs: EncOffsets,
    pub ren: EncOffsets,
    pub obj: EncOffsets,
    pub time_w: usize,
    pub time_b: usize,
    pub fus_w1: usize,
    pub fus_b1: usize,
    pub fus_w2: usize,
    pub fus_b2: usize,
    pub fus_w3: usize,
    pub fus_b3: usize,
    pub blocks: Vec<BlockDesc>,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &ArchConfig) -> Self {
        let px = arch.sensor.pixels_per_sensor();
        let fin = arch.fusion_in();
        let fh = arch.fusion_hidden;
        let mut c = Cursor::new();
        let obs = c.enc(px, arch.enc_hidden, arch.enc_feat);
        let ren = c.enc(px, arch.enc_hidden, arch.enc_feat);
        let obj = c.enc(3, arch.obj_hidden, arch.obj_feat);
        let time_w = c.take(arch.time_feat, 2 * arch.time_freqs);
        let time_b = c.take(arch.time_feat, 0);
        let fus_w1 = c.take(fh, fin);
        let fus_b1 = c.take(fh, 0);
        let fus_w2 = c.take(fh, fh);
        let fus_b2 = c.take(fh, 0);
        let fus_w3 = c.take(9, fh);
        let fus_b3 = c.take(9, 0);
        let (total, blocks) = c.finish();
        Layout {
            obs,
            ren,
            obj,
            time_w,
            time_b,
            fus_w1,
            fus_b1,
            fus_w2,
            fus_b2,
            fus_w3,
            fus_b3,
            blocks,
            total,
        }
    }
}

/// Depth image of one sensor scaled by the saturation depth so encoder inputs
/// live in [0, 1].
pub(crate) fn normalized_depths(imp: &TactileImprint, sensor: usize, max_depth: f64) -> Vec<f64> {
    imp.sensor_slice(sensor).iter().map(|&d| d / max_depth).collect()
}

/// Encode each sensor image with the two-layer MLP at `enc`. Absent sensors
/// (per `present`, which may come from a different imprint than the depths —
/// the render branch is masked by the observation's presence flags)
/// contribute an all-zero feature vector regardless of their stored depths.
pub(crate) fn encode_sensors(
    tape: &mut Tape,
    enc: &EncOffsets,
    arch: &ArchConfig,
    imp: &TactileImprint,
    present: &[bool],
) -> Vec<NodeId> {
    let px = arch.sensor.pixels_per_sensor();
    (0..N_SENSORS)
        .map(|s| {
            if present[s] {
                let x = tape.input(&normalized_depths(imp, s, arch.sensor.max_depth));
                let a = tape.affine(enc.w1, enc.b1, arch.enc_hidden, px, x);
                let h = tape.silu(a);
                tape.affine(enc.w2, enc.b2, arch.enc_feat, arch.enc_hidden, h)
            } else {
                tape.zeros(arch.enc_feat)
            }
        })
        .collect()
}

/// Shared-weight per-point MLP over the subsampled cloud followed by a
/// channel-wise max pool. `obj_input` is point-major `[x0 y0 z0 x1 y1 z1 ...]`
/// with coordinates already normalized.
pub(crate) fn encode_object(
    tape: &mut Tape,
    enc: &EncOffsets,
    arch: &ArchConfig,
    obj_input: &[f64],
) -> NodeId {
    let n = obj_input.len() / 3;
    let x = tape.input(obj_input);
    let a = tape.affine_mat(enc.w1, enc.b1, arch.obj_hidden, 3, n, x);
    let h = tape.silu(a);
    let f = tape.affine_mat(enc.w2, enc.b2, arch.obj_feat, arch.obj_hidden, n, h);
    tape.max_pool_cols(f, arch.obj_feat, n)
}

/// Host-side sinusoidal features `[sin(pi 2^j t), cos(pi 2^j t)]` for
/// `j = 0..freqs`.
pub(crate) fn sinusoidal_time(t: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * freqs);
    for j in 0..freqs {
        let ang = std::f64::consts::PI * (1u64 << j) as f64 * t;
        out.push(ang.sin());
        out.push(ang.cos());
    }
    out
}

/// Model-frame point coordinates flattened point-major and scaled by the
/// workspace half-extent.
pub(crate) fn object_input(points: &[Vec3], half_extent: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(points.len() * 3);
    for p in points {
        out.push(p.x / half_extent);
        out.push(p.y / half_extent);
        out.push(p.z / half_extent);
    }
    out
}

/// Deterministic farthest-point subsample: start at the point farthest from
/// the centroid, then greedily add the point maximizing the distance to the
/// chosen set. Ties break toward the lower index, so the result depends only
/// on the input order, never on parameters or random state.
pub(crate) fn farthest_point_subsample(points: &[Vec3], n: usize) -> Vec<Vec3> {
    if points.len() <= n {
        return points.to_vec();
    }
    let m = points.len();
    let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / m as f64;
    let mut cur = 0;
    let mut best_d = -1.0;
    for (i, p) in points.iter().enumerate() {
        let d = (p - centroid).norm_squared();
        if d > best_d {
            best_d = d;
            cur = i;
        }
    }
    let mut chosen = Vec::with_capacity(n);
    let mut min_d = vec![f64::INFINITY; m];
    for _ in 0..n {
        chosen.push(points[cur]);
        let cp = points[cur];
        let mut next = 0;
        let mut next_d = -1.0;
        for i in 0..m {
            let d = (points[i] - cp).norm_squared();
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > next_d {
                next_d = min_d[i];
                next = i;
            }
        }
        cur = next;
    }
    chosen
}

pub(crate) struct HeadNodes {
    pub phi: NodeId,
    pub energy: NodeId,
    pub score: NodeId,
}

/// Fusion head. The energy is `E = <phi, p>` with `phi = F(z) / sigma(t)`,
/// where `z` concatenates observation features, render features, object
/// features, the time embedding, and the raw pose vector. The score
/// `dE/dp = phi + (d phi/d p)^T p` is unrolled into the forward graph —
/// `(dF/dz)^T` applied through the pose block of `z` — so it remains an
/// ordinary tape value that training can differentiate again.
pub(crate) fn build_head(
    tape: &mut Tape,
    lay: &Layout,
    arch: &ArchConfig,
    obs_feat: NodeId,
    ren_feats: &[NodeId],
    obj_feat: NodeId,
    t: f64,
    sigma: f64,
    p: NodeId,
) -> HeadNodes {
    let fin = arch.fusion_in();
    let fh = arch.fusion_hidden;
    let tf_in = tape.input(&sinusoidal_time(t, arch.time_freqs));
    let tf = tape.affine(lay.time_w, lay.time_b, arch.time_feat, 2 * arch.time_freqs, tf_in);

    let mut parts = vec![obs_feat];
    parts.extend_from_slice(ren_feats);
    parts.push(obj_feat);
    parts.push(tf);
    parts.push(p);
    let z = tape.concat(&parts);
    debug_assert_eq!(tape.value(z).len(), fin);

    let a1 = tape.affine(lay.fus_w1, lay.fus_b1, fh, fin, z);
    let h1 = tape.silu(a1);
    let a2 = tape.affine(lay.fus_w2, lay.fus_b2, fh, fh, h1);
    let h2 = tape.silu(a2);
    let phi_raw = tape.affine(lay.fus_w3, lay.fus_b3, 9, fh, h2);
    let inv_sigma = 1.0 / sigma;
    let phi = tape.aff_scalar(inv_sigma, 0.0, phi_raw);
    let energy = tape.dot(phi, p);

    // Reverse pass of <phi, p> through the fusion stack, written forward:
    // W1^T S1 W2^T S2 W3^T (p / sigma) with S_i = diag(silu'(a_i)), then the
    // pose block of the result.
    let g3 = tape.aff_scalar(inv_sigma, 0.0, p);
    let gh2 = tape.mat_t_vec(lay.fus_w3, 9, fh, g3);
    let sp2 = tape.silu_prime(a2);
    let ga2 = tape.mul(gh2, sp2);
    let gh1 = tape.mat_t_vec(lay.fus_w2, fh, fh, ga2);
    let sp1 = tape.silu_prime(a1);
    let ga1 = tape.mul(gh1, sp1);
    let gz = tape.mat_t_vec(lay.fus_w1, fh, fin, ga1);
    let jterm = tape.slice(gz, arch.pose_offset(), 9);
    let score = tape.add(phi, jterm);

    HeadNodes { phi, energy, score }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// For a quadratic energy `E = <p/2, p>` the score must be exactly `p`:
    /// the direct term contributes `p/2` and the pose-Jacobian term the other
    /// half. Built from tape primitives, checked against reverse-mode AD.
    #[test]
    fn quadratic_head_score_is_the_pose_itself() {
        let params: Vec<f64> = vec![];
        let mut tape = Tape::new(&params);
        let p_val = [0.3, -0.7, 1.1, 0.2, 0.0, -1.3, 0.5, 0.9, -0.4];
        let p = tape.input(&p_val);
        let phi = tape.aff_scalar(0.5, 0.0, p);
        let e = tape.dot(phi, p);
        assert!((tape.value(e)[0]
            - 0.5 * p_val.iter().map(|v| v * v).sum::<f64>())
        .abs()
            < 1e-15);
        let g = tape.backward(e);
        for (gi, pi) in g.node(&tape, p).iter().zip(&p_val) {
            assert!((gi - pi).abs() < 1e-15, "score component {gi} vs pose {pi}");
        }
    }

    #[test]
    fn layout_is_contiguous_and_ordered() {
        let arch = ArchConfig::small();
        let lay = Layout::new(&arch);
        let mut cur = 0;
        for b in &lay.blocks {
            assert_eq!(b.off, cur, "blocks must tile the parameter vector");
            cur += b.len();
        }
        assert_eq!(cur, lay.total);
        // 3 encoders x 4 blocks + time (2) + fusion (6).
        assert_eq!(lay.blocks.len(), 20);
        assert_eq!(lay.blocks[0].off, lay.obs.w1);
        assert_eq!(lay.blocks[18].off, lay.fus_w3);
        assert_eq!(lay.blocks[19].off, lay.fus_b3);
        assert_eq!(lay.blocks[19].rows, 9);
    }

    #[test]
    fn farthest_point_subsample_is_deterministic_and_spread() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| {
                let x = (i % 5) as f64;
                let y = ((i / 5) % 5) as f64;
                let z = (i / 25) as f64;
                Vec3::new(x, y, z * 4.0)
            })
            .collect();
        let a = farthest_point_subsample(&pts, 8);
        let b = farthest_point_subsample(&pts, 8);
        assert_eq!(a.len(), 8);
        for (u, v) in a.iter().zip(&b) {
            assert_eq!(u, v);
        }
        // Starts at the point farthest from the centroid, first index on
        // ties (the grid has several equidistant corners).
        let centroid = pts.iter().fold(Vec3::zeros(), |s, p| s + p) / pts.len() as f64;
        let mut far = pts[0];
        let mut far_d = -1.0;
        for p in &pts {
            let d = (p - centroid).norm_squared();
            if d > far_d {
                far_d = d;
                far = *p;
            }
        }
        assert_eq!((a[0] - far).norm(), 0.0);
        // No duplicates: every selected point is distinct.
        for i in 0..a.len() {
            for j in i + 1..a.len() {
                assert!((a[i] - a[j]).norm() > 0.0);
            }
        }
        // Greedy property: each added point was the farthest from the prefix.
        for step in 1..a.len() {
            let d_added = pts
                .iter()
                .map(|q| {
                    a[..step]
                        .iter()
                        .map(|c| (q - c).norm_squared())
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(-1.0, f64::max);
            let d_chosen = a[..step]
                .iter()
                .map(|c| (a[step] - c).norm_squared())
                .fold(f64::INFINITY, f64::min);
            assert!((d_chosen - d_added).abs() < 1e-12);
        }
    }

    #[test]
    fn small_input_is_passed_through() {
        let pts = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)];
        let out = farthest_point_subsample(&pts, 8);
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn time_features_have_unit_amplitude_and_frequency_doubling() {
        let f = sinusoidal_time(0.25, 3);
        assert_eq!(f.len(), 6);
        let pi = std::f64::consts::PI;
        assert!((f[0] - (pi * 0.25).sin()).abs() < 1e-15);
        assert!((f[3] - (2.0 * pi * 0.25).cos()).abs() < 1e-15);
        assert!((f[4] - (4.0 * pi * 0.25).sin()).abs() < 1e-15);
    }
}
