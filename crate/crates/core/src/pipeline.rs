//! Pose estimation pipeline: energy pre-filter over a pose prior, parallel
//! PF-ODE refinement, energy post-ranking — plus frame-to-frame tracking and
//! uncertainty-based grasp selection built from the same stages.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::diffusion::{integrate_pf_ode, OdeReport, DEFAULT_ODE_TOL};
use crate::energynet::{EnergyError, EvalContext};
use crate::geom::{
    icosphere_prior_poses, mean_pose, pose_distance, GeomError, ObjectModel, Pose9, PriorConfig,
    RigidPose, SymmetryKind, REVOLUTE_DISCRETIZATION,
};
use crate::sim::TactileImprint;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("bad pipeline config: {0}")]
    BadConfig(String),
    #[error("no candidates")]
    NoCandidates,
    #[error("refinement failed for every candidate")]
    RefinementFailed,
    #[error("non-finite energy during ranking")]
    NonFiniteEnergy,
    #[error(transparent)]
    Energy(#[from] EnergyError),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Which of the three estimation stages run. Disabled stages degrade
/// gracefully: no pre-filter → uniform subsample of the prior, no refinement
/// → candidates pass through, no post-rank → average the candidates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageFlags {
    pub prefilter: bool,
    pub refine: bool,
    pub postrank: bool,
}

impl Default for StageFlags {
    fn default() -> Self {
        Self { prefilter: true, refine: true, postrank: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Pose-prior sampler; `prior.m` is the M of the coarse candidate set.
    pub prior: PriorConfig,
    /// Candidates kept for refinement (K).
    pub k_candidates: usize,
    /// Diffusion time the estimator refines from: high enough that the prior
    /// poses lie inside the model's basin at that noise level.
    pub t0_estimate: f64,
    /// Diffusion time the tracker refines from: low, because the previous
    /// pose is already close.
    pub t0_track: f64,
    /// Std-dev of the tracker's candidate jitter in normalized 9-space.
    pub sigma_track: f64,
    pub stages: StageFlags,
    pub ode_tol: (f64, f64),
    /// Refresh the rendered imprint every this many score evaluations during
    /// refinement (1 = render at every evaluation).
    pub render_interval: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            prior: PriorConfig::default(),
            k_candidates: 16,
            t0_estimate: 0.6,
            t0_track: 0.1,
            sigma_track: 0.05,
            stages: StageFlags::default(),
            ode_tol: DEFAULT_ODE_TOL,
            render_interval: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self, schedule_eps: f64) -> Result<(), PipelineError> {
        if self.k_candidates < 1 {
            return Err(PipelineError::BadConfig("k_candidates must be at least 1".into()));
        }
        if self.k_candidates > self.prior.m {
            return Err(PipelineError::BadConfig(format!(
                "k_candidates {} exceeds prior size {}",
                self.k_candidates, self.prior.m
            )));
        }
        if !(schedule_eps < self.t0_track
            && self.t0_track <= self.t0_estimate
            && self.t0_estimate <= 1.0)
        {
            return Err(PipelineError::BadConfig(format!(
                "need eps < t0_track <= t0_estimate <= 1, got {} and {}",
                self.t0_track, self.t0_estimate
            )));
        }
        if !(self.sigma_track.is_finite() && self.sigma_track >= 0.0) {
            return Err(PipelineError::BadConfig(format!(
                "sigma_track must be finite and non-negative, got {}",
                self.sigma_track
            )));
        }
        if !(self.ode_tol.0 > 0.0 && self.ode_tol.1 > 0.0) {
            return Err(PipelineError::BadConfig(format!(
                "ODE tolerances must be positive, got {:?}",
                self.ode_tol
            )));
        }
        if self.render_interval < 1 {
            return Err(PipelineError::BadConfig("render_interval must be at least 1".into()));
        }
        Ok(())
    }
}

fn checked_energies(
    ctx: &EvalContext,
    candidates: &[Pose9],
    t: f64,
) -> Result<Vec<f64>, PipelineError> {
    let energies = candidates
        .par_iter()
        .map(|p| ctx.energy(p, t))
        .collect::<Result<Vec<_>, _>>()?;
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(PipelineError::NonFiniteEnergy);
    }
    Ok(energies)
}

/// Rank `candidates` by energy at the schedule floor (higher = more
/// plausible) and return the indices of the best `k`, best first. Ties break
/// toward the lower index.
pub fn prefilter(
    ctx: &EvalContext,
    candidates: &[Pose9],
    k: usize,
) -> Result<Vec<usize>, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    if k < 1 || k > candidates.len() {
        return Err(PipelineError::BadConfig(format!(
            "k must lie in 1..={}, got {k}",
            candidates.len()
        )));
    }
    let energies = checked_energies(ctx, candidates, ctx.model().schedule.eps)?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        energies[b]
            .partial_cmp(&energies[a])
            .expect("energies are finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(order)
}

/// One candidate refined down the PF-ODE, tagged with its index in the input
/// list (the final pose lives in `report.final_state`).
#[derive(Debug, Clone)]
pub struct Refined {
    pub source_index: usize,
    pub report: OdeReport,
}

fn refine_one(
    ctx: &EvalContext,
    p0: &Pose9,
    t0: f64,
    tol: (f64, f64),
    render_interval: usize,
) -> Option<OdeReport> {
    let schedule = ctx.model().schedule;
    let mut cached: Option<TactileImprint> = None;
    let mut evals = 0usize;
    integrate_pf_ode(
        |t, p| {
            if render_interval <= 1 {
                return ctx.score(p, t).ok();
            }
            if evals % render_interval == 0 {
                cached = ctx.render(p).ok();
            }
            evals += 1;
            let ren = cached.as_ref()?;
            ctx.score_with_render(p, t, ren).ok()
        },
        p0,
        t0,
        schedule.eps,
        &schedule,
        tol,
    )
    .ok()
}

/// Integrate every candidate from `t0` down to the schedule floor, in
/// parallel. Candidates whose solve fails are dropped; survivors keep their
/// relative order. Fails with `RefinementFailed` only if nothing survives.
pub fn refine_candidates(
    ctx: &EvalContext,
    candidates: &[Pose9],
    t0: f64,
    tol: (f64, f64),
    render_interval: usize,
) -> Result<Vec<Refined>, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    let schedule = ctx.model().schedule;
    if !(schedule.eps < t0 && t0 <= 1.0) {
        return Err(PipelineError::BadConfig(format!(
            "refinement start t0 = {t0} outside ({}, 1]",
            schedule.eps
        )));
    }
    if !(tol.0 > 0.0 && tol.1 > 0.0) {
        return Err(PipelineError::BadConfig(format!(
            "ODE tolerances must be positive, got {tol:?}"
        )));
    }
    if render_interval < 1 {
        return Err(PipelineError::BadConfig("render_interval must be at least 1".into()));
    }
    let solved: Vec<Option<OdeReport>> = candidates
        .par_iter()
        .map(|p| refine_one(ctx, p, t0, tol, render_interval))
        .collect();
    let refined: Vec<Refined> = solved
        .into_iter()
        .enumerate()
        .filter_map(|(i, r)| r.map(|report| Refined { source_index: i, report }))
        .collect();
    if refined.is_empty() {
        return Err(PipelineError::RefinementFailed);
    }
    Ok(refined)
}

/// Winner of the post-ranking stage plus the energies of all candidates.
#[derive(Debug, Clone)]
pub struct RankResult {
    pub best_index: usize,
    /// Orthonormalized pose of the winner.
    pub pose: RigidPose,
    pub energies: Vec<f64>,
}

/// Pick the highest-energy candidate at the schedule floor (ties toward the
/// lowest index) and orthonormalize it into a rigid pose.
pub fn postrank(ctx: &EvalContext, candidates: &[Pose9]) -> Result<RankResult, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    let energies = checked_energies(ctx, candidates, ctx.model().schedule.eps)?;
    let mut best = 0;
    for i in 1..energies.len() {
        if energies[i] > energies[best] {
            best = i;
        }
    }
    let pose = candidates[best].unpack(ctx.model().arch.workspace_half_extent)?;
    Ok(RankResult { best_index: best, pose, energies })
}

/// Replaces each candidate's rotation with its symmetry twin nearest (in
/// Frobenius norm) to the first candidate's rotation. On a symmetric object,
/// candidates routinely land in different but physically identical
/// orientation basins; averaging raw rotation matrices across those basins
/// cancels toward a singular matrix, while the aligned set averages cleanly.
fn symmetry_aligned(candidates: &[RigidPose], object: &ObjectModel) -> Vec<RigidPose> {
    let sym = object.symmetry();
    let (Some(gen), order) = (
        sym.generator(),
        match sym.kind {
            SymmetryKind::None => 1,
            SymmetryKind::HalfTurn => 2,
            SymmetryKind::QuarterTurn => 4,
            SymmetryKind::Revolute => REVOLUTE_DISCRETIZATION,
        },
    ) else {
        return candidates.to_vec();
    };
    let r0 = candidates[0].rotation;
    candidates
        .iter()
        .map(|c| {
            let mut twin = c.rotation;
            let mut best = twin;
            let mut best_d = f64::INFINITY;
            for _ in 0..order {
                let d = (twin - r0).norm_squared();
                if d < best_d {
                    best_d = d;
                    best = twin;
                }
                twin *= gen;
            }
            RigidPose::new(best, c.translation)
        })
        .collect()
}

/// Average of the candidates after symmetry alignment. If the rotations are
/// so spread out that even the aligned average is degenerate, the first
/// candidate stands in as the center — a defined, if arbitrary, summary of a
/// set that genuinely has no meaningful mean.
fn aligned_mean_or_first(candidates: &[RigidPose], object: &ObjectModel) -> RigidPose {
    let aligned = symmetry_aligned(candidates, object);
    mean_pose(&aligned).unwrap_or(candidates[0])
}

/// Spread of candidate poses: mean symmetry-aware pose distance (mm) of each
/// candidate to their average pose (symmetry-aligned before averaging). Low
/// spread means the candidates agree.
pub fn estimate_uncertainty(
    candidates: &[RigidPose],
    object: &ObjectModel,
) -> Result<f64, PipelineError> {
    if candidates.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    let center = aligned_mean_or_first(candidates, object);
    let sum: f64 = candidates.iter().map(|c| pose_distance(c, &center, object)).sum();
    Ok(sum / candidates.len() as f64)
}

/// Output of one estimation (or tracking) call.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub pose: RigidPose,
    /// Refined candidate poses (order of the surviving refinement list).
    pub candidates: Vec<Pose9>,
    /// Energy of each candidate at the schedule floor.
    pub energies: Vec<f64>,
    /// Candidate spread in mm; the grasp selector minimizes this.
    pub uncertainty: f64,
    /// Per-candidate integration metadata (zeroed when refinement is off).
    pub reports: Vec<OdeReport>,
    /// Index of the winning candidate; `None` when post-ranking is disabled
    /// and `pose` is the candidate average.
    pub best_index: Option<usize>,
}

impl EstimationResult {
    /// Total PF-ODE right-hand-side evaluations across candidates.
    pub fn total_rhs_evals(&self) -> usize {
        self.reports.iter().map(|r| r.n_rhs_evals).sum()
    }
}

fn rank_and_package(
    ctx: &EvalContext,
    refined: Vec<Refined>,
    postrank_on: bool,
) -> Result<EstimationResult, PipelineError> {
    let finals: Vec<Pose9> = refined.iter().map(|r| r.report.final_state).collect();
    let rank = postrank(ctx, &finals)?;
    let half = ctx.model().arch.workspace_half_extent;
    let rigid: Vec<RigidPose> =
        finals.iter().map(|p| p.unpack(half)).collect::<Result<_, _>>()?;
    let uncertainty = estimate_uncertainty(&rigid, ctx.object())?;
    let (pose, best_index) = if postrank_on {
        (rank.pose, Some(rank.best_index))
    } else {
        (aligned_mean_or_first(&rigid, ctx.object()), None)
    };
    Ok(EstimationResult {
        pose,
        candidates: finals,
        energies: rank.energies,
        uncertainty,
        reports: refined.into_iter().map(|r| r.report).collect(),
        best_index,
    })
}

fn passthrough(candidates: &[Pose9]) -> Vec<Refined> {
    candidates
        .iter()
        .enumerate()
        .map(|(i, p)| Refined {
            source_index: i,
            report: OdeReport {
                final_state: *p,
                n_accepted_steps: 0,
                n_rejected_steps: 0,
                n_rhs_evals: 0,
            },
        })
        .collect()
}

/// Single-shot pose estimation from one observation.
///
/// Draws the pose prior, keeps the K most plausible candidates (energy
/// pre-filter, or a uniform subsample when disabled), refines them down the
/// PF-ODE, and returns the highest-energy refined pose (or the candidate
/// average when post-ranking is disabled). The RNG is consumed only by the
/// prior's translations and, when the pre-filter is off, the subsample.
pub fn estimate(
    ctx: &EvalContext,
    config: &PipelineConfig,
    rng: &mut impl Rng,
) -> Result<EstimationResult, PipelineError> {
    config.validate(ctx.model().schedule.eps)?;
    let prior = icosphere_prior_poses(&config.prior, ctx.object(), rng)?;
    let k = config.k_candidates;
    let selected: Vec<Pose9> = if config.stages.prefilter {
        prefilter(ctx, &prior, k)?.into_iter().map(|i| prior[i]).collect()
    } else {
        let mut idx = rand::seq::index::sample(rng, prior.len(), k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| prior[i]).collect()
    };
    let refined = if config.stages.refine {
        refine_candidates(ctx, &selected, config.t0_estimate, config.ode_tol, config.render_interval)?
    } else {
        passthrough(&selected)
    };
    rank_and_package(ctx, refined, config.stages.postrank)
}

/// Frame-to-frame tracker state.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub last_pose: RigidPose,
    pub step_index: usize,
}

impl TrackerState {
    pub fn new(initial: RigidPose) -> Self {
        Self { last_pose: initial, step_index: 0 }
    }
}

/// One tracking update against a fresh observation (the context carries it).
///
/// Candidates are the previous pose jittered by `sigma_track` in normalized
/// 9-space — no pose prior and no pre-filter — refined from the low tracking
/// noise level `t0_track` and ranked by energy. With zero jitter and a zero
/// score field this is exactly the identity update.
pub fn track_step(
    ctx: &EvalContext,
    state: &TrackerState,
    config: &PipelineConfig,
    rng: &mut impl Rng,
) -> Result<(TrackerState, EstimationResult), PipelineError> {
    config.validate(ctx.model().schedule.eps)?;
    let half = ctx.model().arch.workspace_half_extent;
    let base = Pose9::pack(&state.last_pose, half).to_array();
    let candidates: Vec<Pose9> = (0..config.k_candidates)
        .map(|_| {
            let mut a = base;
            for v in a.iter_mut() {
                *v += config.sigma_track * rng.sample::<f64, _>(StandardNormal);
            }
            Pose9::from_array(&a)
        })
        .collect();
    let refined = if config.stages.refine {
        refine_candidates(ctx, &candidates, config.t0_track, config.ode_tol, config.render_interval)?
    } else {
        passthrough(&candidates)
    };
    // Tracking always ranks: the whole point is to snap to the best local
    // explanation of the new frame.
    let result = rank_and_package(ctx, refined, true)?;
    let next = TrackerState { last_pose: result.pose, step_index: state.step_index + 1 };
    Ok((next, result))
}

/// Among per-grasp estimation results, pick the index with the lowest
/// uncertainty; ties break toward the lowest index.
pub fn select_grasp(results: &[EstimationResult]) -> Result<usize, PipelineError> {
    if results.is_empty() {
        return Err(PipelineError::NoCandidates);
    }
    if results.iter().any(|r| !r.uncertainty.is_finite()) {
        return Err(PipelineError::NonFiniteEnergy);
    }
    let mut best = 0;
    for i in 1..results.len() {
        if results[i].uncertainty < results[best].uncertainty {
            best = i;
        }
    }
    Ok(best)
}
