//! Hot-path benchmarks: imprint rendering, energy/score evaluation, PF-ODE
//! refinement of one candidate, and the full three-stage estimate.
//!
//! The model is briefly trained in the setup so the score field is non-zero
//! and the ODE integrator does representative work; an untrained model has
//! an identically zero score by construction and would integrate in one step.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use ebmpose_core::diffusion::integrate_pf_ode;
use ebmpose_core::energynet::{train_energy, EvalContext};
use ebmpose_core::geom::PriorConfig;
use ebmpose_core::pipeline::estimate;
use ebmpose_core::seed::make_rng;
use ebmpose_core::sim::{
    make_shape, render_imprint, synthesize_grasp, GraspSpec, SensorConfig, ShapeSpec,
};
use ebmpose_core::{
    ArchConfig, EnergyModel, NoiseSchedule, ObjectModel, PipelineConfig, Pose9, Sample,
    TrainConfig,
};

struct Rig {
    object: ObjectModel,
    sensor: SensorConfig,
    model: EnergyModel,
    obs: Sample,
}

fn rig() -> Rig {
    let object = make_shape(&ShapeSpec::Box { l: 14.0, w: 9.0, h: 6.0 }).unwrap();
    let mut sensor = SensorConfig::default();
    sensor.fit_gap_to(&object, &object.grasp_axes()[0]);
    let arch = ArchConfig { sensor, ..ArchConfig::small() };
    let mut model = EnergyModel::init(arch, NoiseSchedule::default(), 11).unwrap();

    let spec = GraspSpec::default_for(&object);
    let samples: Vec<Sample> = (0..8)
        .map(|i| {
            let mut rng = make_rng(11, &[100, i]);
            synthesize_grasp(&object, &spec, &sensor, &mut rng).unwrap()
        })
        .collect();
    let train = TrainConfig {
        batch_size: 2,
        n_steps: 10,
        learning_rate: 1e-3,
        augment: false,
        mask_prob: 0.0,
        seed: 11,
    };
    train_energy(&mut model, &object, &samples, &train).unwrap();
    let obs = samples[0].clone();
    Rig { object, sensor, model, obs }
}

fn bench_pipeline(c: &mut Criterion) {
    let r = rig();
    let ctx = EvalContext::new(&r.model, &r.object, &r.obs.imprint).unwrap();
    let half = r.model.arch.workspace_half_extent;
    let p = Pose9::pack(&r.obs.pose, half);
    let indentation = r.model.arch.nominal_indentation;
    let schedule = r.model.schedule;

    c.bench_function("render_imprint", |b| {
        b.iter(|| render_imprint(&r.object, black_box(&r.obs.pose), &r.sensor, indentation))
    });

    c.bench_function("energy", |b| b.iter(|| ctx.energy(black_box(&p), 0.5).unwrap()));

    c.bench_function("score", |b| b.iter(|| ctx.score(black_box(&p), 0.5).unwrap()));

    c.bench_function("pf_ode_refine_one", |b| {
        b.iter(|| {
            integrate_pf_ode(
                |t, q| ctx.score(q, t).ok(),
                black_box(&p),
                0.6,
                schedule.eps,
                &schedule,
                (1e-3, 1e-4),
            )
            .unwrap()
        })
    });

    let config = PipelineConfig {
        prior: PriorConfig { m: 24, level: 0, n_inplane: 2, ..PriorConfig::default() },
        k_candidates: 4,
        ..PipelineConfig::default()
    };
    c.bench_function("estimate_full", |b| {
        b.iter(|| {
            let mut rng = make_rng(11, &[7]);
            estimate(&ctx, &config, &mut rng).unwrap()
        })
    });
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
