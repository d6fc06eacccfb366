//! Evaluation harness shared by the CLI and the acceptance tests: runs each
//! estimation method over a common sample set and emits uniform metrics
//! records, plus the tracking, grasp-selection, ablation, and sensor-masking
//! protocols built on top.
//!
//! Seeding: every per-sample RNG is derived from a master seed and the
//! sample index, so results are reproducible and — crucially for ablations —
//! *paired*: two configurations evaluated on the same (rep, sample) pair see
//! exactly the same random draws.

use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::baselines::{
    back_project_imprint, grid_match, icp_refine, plate_visible_points, regress, BaselineError,
    GridConfig, PoseGrid, RegressorModel, ICP_DEFAULT_MAX_ITER,
};
use crate::energynet::{EnergyError, EnergyModel, EvalContext};
use crate::geom::{pose_distance, GeomError, Mat3, ObjectModel, RigidPose, Vec3};
use crate::metrics::{median, MetricKind, MetricsRecord};
use crate::pipeline::{
    estimate, track_step, PipelineConfig, PipelineError, StageFlags, TrackerState,
};
use crate::seed::{make_rng, STREAM_EVAL};
use crate::sim::{mask_imprint, Sample, SensorConfig, SimError};

/// Sub-tag separating the sensor-masking RNG stream from evaluation streams.
const TAG_MASK: u64 = 0x6d61_736b;
/// Sub-tag for the single RNG a tracking run threads through its frames.
const TAG_TRACK: u64 = 0x7472_6163;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("bad harness config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// The estimation methods the evaluator can run head-to-head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Energy pre-filter + PF-ODE refinement + energy post-rank.
    Ours,
    /// Direct pose regression with the same encoder architecture.
    Regression,
    /// Point-to-point ICP against the full model cloud.
    IcpGlobal,
    /// Point-to-point ICP against the plate-visible subset (oracle target).
    IcpPartial,
    /// Exhaustive render-and-compare over an in-plane pose grid.
    GridMatch,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ours,
        Method::Regression,
        Method::IcpGlobal,
        Method::IcpPartial,
        Method::GridMatch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Regression => "regression",
            Method::IcpGlobal => "icp-global",
            Method::IcpPartial => "icp-partial",
            Method::GridMatch => "grid-match",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn base_record(object: &ObjectModel, sample: &Sample, index: usize, label: &str) -> MetricsRecord {
    MetricsRecord {
        method: label.to_string(),
        object_id: sample.object_id.clone(),
        sample_index: index,
        error_mm: f64::NAN,
        metric: MetricKind::for_object(object),
        uncertainty_mm: None,
        wall_time_s: 0.0,
        n_rhs_evals: 0,
        n_accepted_steps: 0,
        n_rejected_steps: 0,
    }
}

/// Runs the three-stage pipeline under `config` over `samples`, one record
/// per sample labeled `label`. Per-sample RNG: `(master_seed, EVAL, index)`.
pub fn eval_pipeline(
    model: &EnergyModel,
    object: &ObjectModel,
    samples: &[Sample],
    config: &PipelineConfig,
    master_seed: u64,
    label: &str,
) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut rng = make_rng(master_seed, &[STREAM_EVAL, i as u64]);
        let start = Instant::now();
        let ctx = EvalContext::new(model, object, &s.imprint)?;
        let est = estimate(&ctx, config, &mut rng)?;
        let wall = start.elapsed().as_secs_f64();
        let mut rec = base_record(object, s, i, label);
        rec.error_mm = pose_distance(&est.pose, &s.pose, object);
        rec.uncertainty_mm = Some(est.uncertainty);
        rec.wall_time_s = wall;
        rec.n_rhs_evals = est.total_rhs_evals();
        rec.n_accepted_steps = est.reports.iter().map(|r| r.n_accepted_steps).sum();
        rec.n_rejected_steps = est.reports.iter().map(|r| r.n_rejected_steps).sum();
        records.push(rec);
    }
    Ok(records)
}

/// [`eval_pipeline`] labeled as the primary method.
pub fn eval_ours(
    model: &EnergyModel,
    object: &ObjectModel,
    samples: &[Sample],
    config: &PipelineConfig,
    master_seed: u64,
) -> Result<Vec<MetricsRecord>, HarnessError> {
    eval_pipeline(model, object, samples, config, master_seed, Method::Ours.name())
}

/// One forward pass of the regression baseline per sample. No RNG, no ODE:
/// the integration counters stay zero and no uncertainty is reported.
pub fn eval_regression(
    model: &RegressorModel,
    object: &ObjectModel,
    samples: &[Sample],
) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let start = Instant::now();
        let pose = regress(model, object, &s.imprint)?;
        let mut rec = base_record(object, s, i, Method::Regression.name());
        rec.error_mm = pose_distance(&pose, &s.pose, object);
        rec.wall_time_s = start.elapsed().as_secs_f64();
        records.push(rec);
    }
    Ok(records)
}

/// How ICP evaluations perturb the ground truth into an initialization.
/// ICP is a local refiner with no pose prior of its own, so it is scored on
/// recovery from a known-magnitude perturbation rather than from scratch.
#[derive(Debug, Clone)]
pub struct IcpEvalConfig {
    /// Per-axis std-dev of the translation offset, mm.
    pub sigma_trans_mm: f64,
    /// Std-dev of the rotation angle about a random axis, degrees.
    pub sigma_rot_deg: f64,
    pub max_iter: usize,
}

impl Default for IcpEvalConfig {
    fn default() -> Self {
        IcpEvalConfig { sigma_trans_mm: 2.0, sigma_rot_deg: 5.0, max_iter: ICP_DEFAULT_MAX_ITER }
    }
}

/// Draws the perturbed initialization for one ICP run. Draw order: 3 normals
/// for the rotation axis, 1 for the angle, 3 for the translation offset.
fn perturbed_init(gt: &RigidPose, cfg: &IcpEvalConfig, rng: &mut impl Rng) -> RigidPose {
    let mut axis = Vec3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    if axis.norm() < 1e-12 {
        axis = Vec3::z();
    }
    let angle = rng.sample::<f64, _>(StandardNormal) * cfg.sigma_rot_deg.to_radians();
    let delta =
        *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle)
            .matrix();
    let dt = Vec3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * cfg.sigma_trans_mm;
    RigidPose::new(delta * gt.rotation, gt.translation + dt)
}

/// ICP baseline: back-project the imprint to contact points, align them to
/// the model cloud (`partial = false`) or to the plate-visible subset at the
/// true pose (`partial = true`; an oracle upper bound for partial matching).
/// When alignment is degenerate — too few contact pixels or a rank-deficient
/// correspondence set — the perturbed initialization is scored as-is, so the
/// method degrades to its initialization rather than erroring out.
/// ICP iteration counts are reported in `n_accepted_steps`.
pub fn eval_icp(
    object: &ObjectModel,
    sensor: &SensorConfig,
    indentation: f64,
    samples: &[Sample],
    partial: bool,
    cfg: &IcpEvalConfig,
    master_seed: u64,
) -> Result<Vec<MetricsRecord>, HarnessError> {
    let label = if partial { Method::IcpPartial } else { Method::IcpGlobal };
    let full_cloud = object.points().to_vec();
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut rng = make_rng(master_seed, &[STREAM_EVAL, i as u64]);
        let start = Instant::now();
        let init = perturbed_init(&s.pose, cfg, &mut rng);
        let obs = back_project_imprint(&s.imprint, sensor, indentation);
        let target;
        let target_ref: &[Vec3] = if partial {
            target = plate_visible_points(object, &s.pose, sensor, indentation);
            if target.is_empty() { &full_cloud } else { &target }
        } else {
            &full_cloud
        };
        let (pose, n_iter) = match icp_refine(&obs, target_ref, &init, cfg.max_iter) {
            Ok(r) => (r.pose, r.n_iterations),
            Err(BaselineError::DegenerateAlignment(_)) => (init, 0),
            Err(e) => return Err(e.into()),
        };
        let mut rec = base_record(object, s, i, label.name());
        rec.error_mm = pose_distance(&pose, &s.pose, object);
        rec.wall_time_s = start.elapsed().as_secs_f64();
        rec.n_accepted_steps = n_iter;
        records.push(rec);
    }
    Ok(records)
}

/// Builds the in-plane search grid for grasps along `axis`: yaw spins around
/// the canonical grasp orientation and the plate-normal offset centers the
/// object between the plates, matching how grasps are synthesized.
pub fn grid_for_grasp(
    object: &ObjectModel,
    axis: &Vec3,
    trans_step_mm: f64,
    yaw_step_deg: f64,
    trans_range_mm: f64,
) -> Result<PoseGrid, HarnessError> {
    let base_rotation: Mat3 = crate::sim::align_axis_to_z(axis);
    let t_z = crate::sim::centering_tz(object, &base_rotation);
    Ok(PoseGrid::build(&GridConfig {
        trans_step_mm,
        yaw_step_deg,
        trans_range_mm,
        base_rotation,
        t_z,
    })?)
}

/// Exhaustive render-and-compare baseline over a fixed pose grid.
pub fn eval_grid(
    object: &ObjectModel,
    sensor: &SensorConfig,
    indentation: f64,
    samples: &[Sample],
    grid: &PoseGrid,
) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let start = Instant::now();
        let m = grid_match(object, &s.imprint, grid, sensor, indentation)?;
        let mut rec = base_record(object, s, i, Method::GridMatch.name());
        rec.error_mm = pose_distance(&m.pose, &s.pose, object);
        rec.wall_time_s = start.elapsed().as_secs_f64();
        records.push(rec);
    }
    Ok(records)
}

/// Tracks through `frames` sequentially, warm-starting each frame from the
/// previous estimate. The tracker state starts at `start` if given, else at
/// the first frame's ground truth (the standard "initialized, then track"
/// protocol). One RNG is threaded through the whole run, so a tracking run
/// is one reproducible stream. Records are labeled `track`.
pub fn run_tracking(
    model: &EnergyModel,
    object: &ObjectModel,
    frames: &[Sample],
    config: &PipelineConfig,
    master_seed: u64,
    start: Option<RigidPose>,
) -> Result<Vec<MetricsRecord>, HarnessError> {
    let first = match (start, frames.first()) {
        (Some(p), _) => p,
        (None, Some(f)) => f.pose,
        (None, None) => return Err(HarnessError::BadConfig("tracking needs ≥ 1 frame".into())),
    };
    let mut state = TrackerState::new(first);
    let mut rng = make_rng(master_seed, &[STREAM_EVAL, TAG_TRACK]);
    let mut records = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let t = Instant::now();
        let ctx = EvalContext::new(model, object, &f.imprint)?;
        let (next, est) = track_step(&ctx, &state, config, &mut rng)?;
        state = next;
        let mut rec = base_record(object, f, i, "track");
        rec.error_mm = pose_distance(&est.pose, &f.pose, object);
        rec.uncertainty_mm = Some(est.uncertainty);
        rec.wall_time_s = t.elapsed().as_secs_f64();
        rec.n_rhs_evals = est.total_rhs_evals();
        rec.n_accepted_steps = est.reports.iter().map(|r| r.n_accepted_steps).sum();
        rec.n_rejected_steps = est.reports.iter().map(|r| r.n_rejected_steps).sum();
        records.push(rec);
    }
    Ok(records)
}

/// Per-grasp-set outcome of an uncertainty-ranked selection run.
#[derive(Debug, Clone)]
pub struct UncertaintySet {
    /// Pose error per grasp, in set order.
    pub errors: Vec<f64>,
    /// Candidate-spread uncertainty per grasp, in set order.
    pub uncertainties: Vec<f64>,
    /// Grasp indices sorted by ascending uncertainty (ties toward the lower
    /// index); `order[0]` is the grasp the selector would execute.
    pub order: Vec<usize>,
}

impl UncertaintySet {
    /// Mean error over the `k` most confident grasps (capped at the set size).
    pub fn top_k_mean_error(&self, k: usize) -> f64 {
        let k = k.min(self.order.len());
        assert!(k > 0, "top-k over an empty set");
        self.order[..k].iter().map(|&i| self.errors[i]).sum::<f64>() / k as f64
    }
}

/// Aggregate of [`run_uncertainty`] across grasp sets.
#[derive(Debug, Clone)]
pub struct UncertaintyOutcome {
    pub per_set: Vec<UncertaintySet>,
    /// Mean error of the single most confident grasp per set.
    pub top1_mean: f64,
    /// Mean over sets of the 3 most confident grasps' mean error.
    pub top3_mean: f64,
    /// Mean over sets of the 5 most confident grasps' mean error.
    pub top5_mean: f64,
    /// Expected error of picking a grasp uniformly at random per set.
    pub random_mean: f64,
}

/// Estimates every grasp in every set, ranks each set by the reported
/// uncertainty, and aggregates how much better confident picks are than
/// random ones. Per-grasp RNG: `(master_seed, EVAL, set, grasp)`.
pub fn run_uncertainty(
    model: &EnergyModel,
    object: &ObjectModel,
    sets: &[Vec<Sample>],
    config: &PipelineConfig,
    master_seed: u64,
) -> Result<UncertaintyOutcome, HarnessError> {
    if sets.is_empty() || sets.iter().any(|s| s.is_empty()) {
        return Err(HarnessError::BadConfig("uncertainty run needs non-empty grasp sets".into()));
    }
    let mut per_set = Vec::with_capacity(sets.len());
    for (si, set) in sets.iter().enumerate() {
        let mut errors = Vec::with_capacity(set.len());
        let mut uncertainties = Vec::with_capacity(set.len());
        for (gi, s) in set.iter().enumerate() {
            let mut rng = make_rng(master_seed, &[STREAM_EVAL, si as u64, gi as u64]);
            let ctx = EvalContext::new(model, object, &s.imprint)?;
            let est = estimate(&ctx, config, &mut rng)?;
            errors.push(pose_distance(&est.pose, &s.pose, object));
            uncertainties.push(est.uncertainty);
        }
        if uncertainties.iter().any(|u| !u.is_finite()) {
            return Err(HarnessError::BadConfig(format!(
                "non-finite uncertainty in grasp set {si}"
            )));
        }
        let mut order: Vec<usize> = (0..set.len()).collect();
        order.sort_by(|&a, &b| {
            uncertainties[a].partial_cmp(&uncertainties[b]).unwrap().then(a.cmp(&b))
        });
        per_set.push(UncertaintySet { errors, uncertainties, order });
    }
    let n = per_set.len() as f64;
    let mean_over_sets = |f: &dyn Fn(&UncertaintySet) -> f64| -> f64 {
        per_set.iter().map(|s| f(s)).sum::<f64>() / n
    };
    Ok(UncertaintyOutcome {
        top1_mean: mean_over_sets(&|s| s.top_k_mean_error(1)),
        top3_mean: mean_over_sets(&|s| s.top_k_mean_error(3)),
        top5_mean: mean_over_sets(&|s| s.top_k_mean_error(5)),
        random_mean: mean_over_sets(&|s| {
            s.errors.iter().sum::<f64>() / s.errors.len() as f64
        }),
        per_set,
    })
}

/// One configuration's pooled outcome from a paired-variant run.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub label: String,
    /// Pooled errors, rep-major then sample order.
    pub errors: Vec<f64>,
    pub median_error_mm: f64,
    pub mean_rhs_evals: f64,
}

/// Evaluates every `(label, config)` variant over `samples`, `n_reps` times,
/// with the per-(rep, sample) RNG **shared across variants** so comparisons
/// are paired: variant A and B see identical priors and subsampling draws on
/// every trial. Medians pool all reps.
pub fn run_paired_variants(
    model: &EnergyModel,
    object: &ObjectModel,
    samples: &[Sample],
    variants: &[(String, PipelineConfig)],
    n_reps: usize,
    master_seed: u64,
) -> Result<Vec<VariantResult>, HarnessError> {
    if variants.is_empty() || samples.is_empty() || n_reps == 0 {
        return Err(HarnessError::BadConfig(
            "paired run needs variants, samples, and ≥ 1 rep".into(),
        ));
    }
    let mut out = Vec::with_capacity(variants.len());
    for (label, config) in variants {
        let mut errors = Vec::with_capacity(n_reps * samples.len());
        let mut rhs_total = 0usize;
        for rep in 0..n_reps {
            for (i, s) in samples.iter().enumerate() {
                let mut rng =
                    make_rng(master_seed, &[STREAM_EVAL, rep as u64, i as u64]);
                let ctx = EvalContext::new(model, object, &s.imprint)?;
                let est = estimate(&ctx, config, &mut rng)?;
                errors.push(pose_distance(&est.pose, &s.pose, object));
                rhs_total += est.total_rhs_evals();
            }
        }
        out.push(VariantResult {
            label: label.clone(),
            median_error_mm: median(&errors),
            mean_rhs_evals: rhs_total as f64 / errors.len() as f64,
            errors,
        });
    }
    Ok(out)
}

/// The stage-ablation grid: the full pipeline, each stage knocked out in
/// turn, and refinement restricted to the single best pre-filter candidate.
pub fn stage_variants(base: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
    let with_stages = |stages: StageFlags| PipelineConfig { stages, ..base.clone() };
    let mut top1 = base.clone();
    top1.k_candidates = 1;
    vec![
        ("full".to_string(), base.clone()),
        (
            "no-prefilter".to_string(),
            with_stages(StageFlags { prefilter: false, ..StageFlags::default() }),
        ),
        (
            "no-refine".to_string(),
            with_stages(StageFlags { refine: false, ..StageFlags::default() }),
        ),
        (
            "no-postrank".to_string(),
            with_stages(StageFlags { postrank: false, ..StageFlags::default() }),
        ),
        ("refine-top-1".to_string(), top1),
    ]
}

/// Variants sweeping the refinement start time.
pub fn t0_variants(base: &PipelineConfig, t0s: &[f64]) -> Vec<(String, PipelineConfig)> {
    t0s.iter()
        .map(|&t0| {
            let mut c = base.clone();
            c.t0_estimate = t0;
            (format!("t0-{t0}"), c)
        })
        .collect()
}

/// [`run_paired_variants`] over [`stage_variants`].
pub fn run_stage_ablation(
    model: &EnergyModel,
    object: &ObjectModel,
    samples: &[Sample],
    base: &PipelineConfig,
    n_reps: usize,
    master_seed: u64,
) -> Result<Vec<VariantResult>, HarnessError> {
    run_paired_variants(model, object, samples, &stage_variants(base), n_reps, master_seed)
}

/// [`run_paired_variants`] over [`t0_variants`].
pub fn run_t0_sweep(
    model: &EnergyModel,
    object: &ObjectModel,
    samples: &[Sample],
    base: &PipelineConfig,
    t0s: &[f64],
    n_reps: usize,
    master_seed: u64,
) -> Result<Vec<VariantResult>, HarnessError> {
    run_paired_variants(model, object, samples, &t0_variants(base, t0s), n_reps, master_seed)
}

/// Which sensors an evaluation set keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Both plates present (no masking).
    Both,
    /// Only the first plate present.
    Single,
    /// Each plate dropped independently with probability ½, at least one kept.
    Arbitrary,
}

impl MaskMode {
    pub const ALL: [MaskMode; 3] = [MaskMode::Both, MaskMode::Single, MaskMode::Arbitrary];

    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Both => "both",
            MaskMode::Single => "single",
            MaskMode::Arbitrary => "arbitrary",
        }
    }

    pub fn parse(s: &str) -> Option<MaskMode> {
        MaskMode::ALL.into_iter().find(|m| m.name() == s)
    }
}

impl std::fmt::Display for MaskMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Returns a copy of `samples` with sensor presence set per `mode`. Depth
/// data is untouched — consumers skip absent sensors via the presence flags.
/// Arbitrary-mode draws use a dedicated RNG stream per sample index, so the
/// masking pattern is independent of any evaluation RNG.
pub fn mask_samples(samples: &[Sample], mode: MaskMode, master_seed: u64) -> Vec<Sample> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut out = s.clone();
            match mode {
                MaskMode::Both => {}
                MaskMode::Single => {
                    for p in out.imprint.present.iter_mut().skip(1) {
                        *p = false;
                    }
                }
                MaskMode::Arbitrary => {
                    let mut rng = make_rng(master_seed, &[TAG_MASK, i as u64]);
                    mask_imprint(&mut out.imprint, 0.5, &mut rng);
                }
            }
            out
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::NoiseSchedule;
    use crate::energynet::test_support::*;
    use crate::energynet::ArchConfig;
    use crate::geom::PriorConfig;
    use crate::sim::{generate_trajectory, render_imprint, TactileImprint};

    struct Rig {
        object: ObjectModel,
        sensor: SensorConfig,
        model: EnergyModel,
        samples: Vec<Sample>,
    }

    fn rig(n_samples: usize) -> Rig {
        let object = test_object();
        let sensor = fitted_sensor(&object);
        let arch = ArchConfig { sensor, ..ArchConfig::small() };
        let model = EnergyModel::init(arch, NoiseSchedule::default(), 5).unwrap();
        let mut samples = grasp_samples(&object, &sensor, n_samples, 61);
        for (i, s) in samples.iter_mut().enumerate() {
            s.object_id = format!("obj{i}");
        }
        Rig { object, sensor, model, samples }
    }

    fn small_pipeline() -> PipelineConfig {
        PipelineConfig {
            prior: PriorConfig { m: 24, n_inplane: 4, ..PriorConfig::default() },
            k_candidates: 3,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn every_method_emits_fully_wired_records() {
        let r = rig(2);
        let ind = r.model.arch.nominal_indentation;

        let ours = eval_ours(&r.model, &r.object, &r.samples, &small_pipeline(), 7).unwrap();
        let reg_model = RegressorModel::init(r.model.arch.clone(), 5).unwrap();
        let reg = eval_regression(&reg_model, &r.object, &r.samples).unwrap();
        let icp = eval_icp(
            &r.object, &r.sensor, ind, &r.samples, false, &IcpEvalConfig::default(), 7,
        )
        .unwrap();
        let icp_p = eval_icp(
            &r.object, &r.sensor, ind, &r.samples, true, &IcpEvalConfig::default(), 7,
        )
        .unwrap();
        let grid =
            grid_for_grasp(&r.object, &r.object.grasp_axes()[0], 4.0, 90.0, 4.0).unwrap();
        let gm = eval_grid(&r.object, &r.sensor, ind, &r.samples, &grid).unwrap();

        for (records, label) in [
            (&ours, "ours"),
            (&reg, "regression"),
            (&icp, "icp-global"),
            (&icp_p, "icp-partial"),
            (&gm, "grid-match"),
        ] {
            assert_eq!(records.len(), 2, "{label}");
            for (i, rec) in records.iter().enumerate() {
                assert_eq!(rec.method, label);
                assert_eq!(rec.sample_index, i);
                assert_eq!(rec.object_id, format!("obj{i}"));
                assert!(rec.error_mm.is_finite() && rec.error_mm >= 0.0, "{label}");
                assert_eq!(rec.metric, MetricKind::for_object(&r.object));
                assert!(rec.wall_time_s >= 0.0);
            }
        }
        for rec in &ours {
            assert!(rec.uncertainty_mm.is_some());
            assert!(rec.n_rhs_evals > 0, "refinement must evaluate the score");
        }
        for rec in reg.iter().chain(&gm) {
            assert!(rec.uncertainty_mm.is_none());
            assert_eq!(rec.n_rhs_evals, 0);
            assert_eq!(rec.n_accepted_steps, 0);
        }
        for rec in icp.iter().chain(&icp_p) {
            assert!(rec.n_accepted_steps > 0, "contact-rich grasps should iterate");
            assert_eq!(rec.n_rhs_evals, 0);
        }
    }

    #[test]
    fn pipeline_evaluation_is_reproducible() {
        let r = rig(2);
        let cfg = small_pipeline();
        let a = eval_ours(&r.model, &r.object, &r.samples, &cfg, 11).unwrap();
        let b = eval_ours(&r.model, &r.object, &r.samples, &cfg, 11).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.error_mm.to_bits(), y.error_mm.to_bits());
            assert_eq!(x.n_rhs_evals, y.n_rhs_evals);
        }
    }

    #[test]
    fn paired_variants_share_their_random_draws() {
        let r = rig(2);
        let cfg = small_pipeline();
        // Two identically configured variants must produce bit-identical
        // errors: the per-(rep, sample) streams depend only on indices.
        let variants =
            vec![("a".to_string(), cfg.clone()), ("b".to_string(), cfg.clone())];
        let out =
            run_paired_variants(&r.model, &r.object, &r.samples, &variants, 2, 13).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].errors.len(), 4);
        for (x, y) in out[0].errors.iter().zip(&out[1].errors) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        assert_eq!(out[0].median_error_mm.to_bits(), out[1].median_error_mm.to_bits());
    }

    #[test]
    fn the_ablation_grid_covers_the_documented_variants() {
        let base = small_pipeline();
        let vs = stage_variants(&base);
        let labels: Vec<&str> = vs.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(
            labels,
            ["full", "no-prefilter", "no-refine", "no-postrank", "refine-top-1"]
        );
        assert!(vs[0].1.stages.prefilter && vs[0].1.stages.refine && vs[0].1.stages.postrank);
        assert!(!vs[1].1.stages.prefilter && vs[1].1.stages.refine);
        assert!(!vs[2].1.stages.refine && vs[2].1.stages.prefilter);
        assert!(!vs[3].1.stages.postrank);
        assert_eq!(vs[4].1.k_candidates, 1);
        assert_eq!(vs[4].1.stages, StageFlags::default());

        let ts = t0_variants(&base, &[0.4, 1.0]);
        assert_eq!(ts[0].0, "t0-0.4");
        assert_eq!(ts[1].0, "t0-1");
        assert_eq!(ts[0].1.t0_estimate, 0.4);
        assert_eq!(ts[1].1.t0_estimate, 1.0);
    }

    #[test]
    fn degenerate_icp_falls_back_to_its_initialization() {
        let r = rig(1);
        // A contact-free imprint back-projects to nothing, so ICP cannot run.
        let gt = r.samples[0].pose;
        let empty =
            TactileImprint::zeros(crate::sim::N_SENSORS, r.sensor.grid_h, r.sensor.grid_w);
        let sample =
            Sample { pose: gt, imprint: empty, object_id: "void".to_string() };
        // With zero perturbation the initialization *is* the ground truth, so
        // the fallback must score exactly zero error with zero iterations.
        let cfg = IcpEvalConfig { sigma_trans_mm: 0.0, sigma_rot_deg: 0.0, max_iter: 50 };
        let recs = eval_icp(
            &r.object,
            &r.sensor,
            r.model.arch.nominal_indentation,
            std::slice::from_ref(&sample),
            false,
            &cfg,
            3,
        )
        .unwrap();
        assert_eq!(recs[0].n_accepted_steps, 0);
        assert_eq!(recs[0].error_mm, 0.0);
    }

    #[test]
    fn mask_modes_set_sensor_presence_as_documented() {
        let r = rig(6);

        let both = mask_samples(&r.samples, MaskMode::Both, 1);
        for (m, s) in both.iter().zip(&r.samples) {
            assert_eq!(m.imprint.present, s.imprint.present);
            assert!(m.imprint.present.iter().all(|&p| p));
        }

        let single = mask_samples(&r.samples, MaskMode::Single, 1);
        for (m, s) in single.iter().zip(&r.samples) {
            assert!(m.imprint.present[0]);
            assert!(m.imprint.present[1..].iter().all(|&p| !p));
            // Restoring the presence flags must recover the original imprint:
            // masking only flips flags, never depth data.
            let mut restored = m.imprint.clone();
            restored.present = s.imprint.present.clone();
            assert_eq!(restored, s.imprint);
        }

        let arb1 = mask_samples(&r.samples, MaskMode::Arbitrary, 9);
        let arb2 = mask_samples(&r.samples, MaskMode::Arbitrary, 9);
        for (a, b) in arb1.iter().zip(&arb2) {
            assert_eq!(a.imprint.present, b.imprint.present, "masking is seeded");
            assert!(a.imprint.present.iter().any(|&p| p), "at least one sensor kept");
        }
        // Original samples are never modified.
        assert!(r.samples.iter().all(|s| s.imprint.present.iter().all(|&p| p)));
    }

    #[test]
    fn tracking_emits_one_record_per_frame_and_accepts_a_start_override() {
        let r = rig(1);
        let mut rng = make_rng(17, &[42]);
        let frames =
            generate_trajectory(&r.object, 3, (0.5, 0.05), &r.sensor, &mut rng).unwrap();
        let cfg = small_pipeline();

        let recs = run_tracking(&r.model, &r.object, &frames, &cfg, 23, None).unwrap();
        assert_eq!(recs.len(), 3);
        for (i, rec) in recs.iter().enumerate() {
            assert_eq!(rec.method, "track");
            assert_eq!(rec.sample_index, i);
            assert!(rec.error_mm.is_finite());
            assert!(rec.uncertainty_mm.is_some());
        }

        let start = frames[1].pose;
        let with_start =
            run_tracking(&r.model, &r.object, &frames, &cfg, 23, Some(start)).unwrap();
        assert_eq!(with_start.len(), 3);

        let err = run_tracking(&r.model, &r.object, &[], &cfg, 23, None);
        assert!(matches!(err, Err(HarnessError::BadConfig(_))));
    }

    #[test]
    fn uncertainty_aggregates_match_a_direct_recomputation() {
        let r = rig(0);
        let sets: Vec<Vec<Sample>> = (0..2)
            .map(|k| grasp_samples(&r.object, &r.sensor, 3, 100 + k))
            .collect();
        let out =
            run_uncertainty(&r.model, &r.object, &sets, &small_pipeline(), 31).unwrap();
        assert_eq!(out.per_set.len(), 2);
        for s in &out.per_set {
            assert_eq!(s.errors.len(), 3);
            for w in s.order.windows(2) {
                assert!(
                    s.uncertainties[w[0]] <= s.uncertainties[w[1]],
                    "order must be sorted by uncertainty"
                );
            }
        }
        let direct = |k: usize| {
            out.per_set.iter().map(|s| s.top_k_mean_error(k)).sum::<f64>()
                / out.per_set.len() as f64
        };
        assert_eq!(out.top1_mean.to_bits(), direct(1).to_bits());
        assert_eq!(out.top3_mean.to_bits(), direct(3).to_bits());
        // Sets have 3 grasps, so the top-5 prefix is the whole set and must
        // equal the random-pick expectation.
        assert_eq!(out.top5_mean.to_bits(), out.random_mean.to_bits());

        assert!(matches!(
            run_uncertainty(&r.model, &r.object, &[], &small_pipeline(), 31),
            Err(HarnessError::BadConfig(_))
        ));
    }

    #[test]
    fn method_and_mask_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(Method::parse(m.name()), Some(m));
            assert_eq!(format!("{m}"), m.name());
        }
        assert_eq!(Method::parse("nonsense"), None);
        for m in MaskMode::ALL {
            assert_eq!(MaskMode::parse(m.name()), Some(m));
        }
        assert_eq!(MaskMode::parse(""), None);
    }

    #[test]
    fn grasp_grid_is_centered_like_synthesized_grasps() {
        let r = rig(1);
        let grid =
            grid_for_grasp(&r.object, &r.object.grasp_axes()[0], 2.0, 90.0, 2.0).unwrap();
        // The grid's zero-offset pose must render a contact-bearing imprint:
        // the centering offset puts the object between the plates exactly as
        // grasp synthesis does.
        let center = grid
            .poses
            .iter()
            .find(|p| p.translation.x == 0.0 && p.translation.y == 0.0)
            .expect("grid covers the zero offset");
        let imp = render_imprint(
            &r.object,
            center,
            &r.sensor,
            r.model.arch.nominal_indentation,
        );
        assert!(imp.passes_contact_filter(0.01));
    }
}
