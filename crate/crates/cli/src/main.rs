//! `ebmpose`: dataset synthesis, training, evaluation, tracking, grasp
//! selection, and ablation sweeps for tactile 6D pose estimation.
//!
//! Conventions shared by every subcommand:
//! - all relative paths resolve against `--workdir` (default `.`);
//! - `--config` points at a flat key-value run configuration; missing keys
//!   take defaults, unknown keys are rejected;
//! - `--seed` overrides both `seed` and `train.seed` from the config;
//! - `EBMPOSE_THREADS` caps the worker thread pool;
//! - usage errors exit 2, data/model errors exit 1 with a diagnostic line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ebmpose_core::baselines::{
    load_regressor_file, save_regressor_file, train_regressor, RegressorModel,
};
use ebmpose_core::config::RunConfig;
use ebmpose_core::energynet::{
    load_energy_file, save_energy_file, train_energy, EnergyModel, TrainReport,
};
use ebmpose_core::geom::ObjectModel;
use ebmpose_core::harness::{
    eval_grid, eval_icp, eval_ours, eval_pipeline, eval_regression, grid_for_grasp,
    mask_samples, run_stage_ablation, run_t0_sweep, run_tracking, run_uncertainty,
    IcpEvalConfig, MaskMode, Method, VariantResult,
};
use ebmpose_core::metrics::{summarize, write_metrics, write_summary_csv, MetricsRecord};
use ebmpose_core::seed::{make_rng, STREAM_DATASET};
use ebmpose_core::sim::{
    generate_dataset, generate_trajectory, make_shape, read_dataset, synthesize_grasp,
    write_dataset, AugmentConfig, DatasetGenConfig, GraspSpec, Sample, ShapeSpec,
};
use ebmpose_core::ArchConfig;

/// Tag separating trajectory-synthesis RNG streams from dataset streams.
const TAG_TRAJ: u64 = 0x7472_616a;

#[derive(Parser)]
#[command(
    name = "ebmpose",
    version,
    about = "Energy-based diffusion 6D pose estimation from tactile imprints"
)]
struct Cli {
    /// Directory all relative paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled grasp dataset for one object.
    GenData(GenDataArgs),
    /// Train the energy model or the regression baseline on a dataset.
    Train(TrainArgs),
    /// Evaluate an estimation method over a dataset; writes per-sample
    /// JSON-lines metrics and a summary CSV.
    Eval(EvalArgs),
    /// Track simulated in-hand trajectories frame to frame.
    Track(TrackArgs),
    /// Grasp-set experiment: rank grasps by estimation uncertainty and
    /// compare confident picks against random ones.
    Uncertainty(UncertaintyArgs),
    /// Ablation sweeps over pipeline stages, refinement start time, or
    /// sensor masking.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Object shape spec, e.g. box:20,10,6 or cylinder:5,20.
    #[arg(long)]
    object: String,
    /// Number of samples to synthesize.
    #[arg(long)]
    n: usize,
    /// Master seed; overrides `seed` and `train.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Run configuration file (flat key-value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output dataset file.
    #[arg(long, default_value = "dataset.txt")]
    out: PathBuf,
    /// Bake sensor-noise augmentation into the stored imprints.
    #[arg(long)]
    augment: bool,
    /// Per-sensor drop probability baked into the dataset (one sensor
    /// always survives).
    #[arg(long, default_value_t = 0.0)]
    mask_prob: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Training dataset file.
    #[arg(long)]
    dataset: PathBuf,
    /// Object shape spec; defaults to the dataset's recorded object id.
    #[arg(long)]
    object: Option<String>,
    /// What to train: the energy model or the regression baseline.
    #[arg(long, default_value = "ours", value_parser = parse_train_method)]
    method: TrainMethod,
    /// Run configuration file (flat key-value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` and `train.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output checkpoint file.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Per-step loss curve CSV.
    #[arg(long, default_value = "loss.csv")]
    loss_csv: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum TrainMethod {
    Ours,
    Regression,
}

fn parse_train_method(s: &str) -> Result<TrainMethod, String> {
    match s {
        "ours" => Ok(TrainMethod::Ours),
        "regression" => Ok(TrainMethod::Regression),
        _ => Err(format!("unknown training method {s:?} (expected ours or regression)")),
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
        format!("unknown method {s:?} (expected one of: {})", names.join(", "))
    })
}

fn parse_mask(s: &str) -> Result<MaskMode, String> {
    MaskMode::parse(s).ok_or_else(|| {
        format!("unknown mask mode {s:?} (expected one of: both, single, arbitrary)")
    })
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluation dataset file.
    #[arg(long)]
    dataset: PathBuf,
    /// Estimation method to run.
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Object shape spec; defaults to the dataset's recorded object id.
    #[arg(long)]
    object: Option<String>,
    /// Model checkpoint (required for ours and regression).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run configuration file (flat key-value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` and `train.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Sensor presence applied to the dataset before evaluation.
    #[arg(long, default_value = "both", value_parser = parse_mask)]
    mask: MaskMode,
    /// Per-sample metrics output (JSON-lines).
    #[arg(long, default_value = "metrics.jsonl")]
    out: PathBuf,
    /// Per-(method, object) summary CSV.
    #[arg(long, default_value = "summary.csv")]
    summary: PathBuf,
    /// grid-match: translation spacing, mm.
    #[arg(long, default_value_t = 2.5)]
    grid_step: f64,
    /// grid-match: yaw spacing, degrees (must divide 360).
    #[arg(long, default_value_t = 6.0)]
    grid_yaw: f64,
    /// grid-match: translation half-range, mm; defaults to the object's
    /// default grasp offset range.
    #[arg(long)]
    grid_range: Option<f64>,
}

#[derive(Args)]
struct TrackArgs {
    /// Energy model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Object shape spec.
    #[arg(long)]
    object: String,
    /// Frames per trajectory.
    #[arg(long, default_value_t = 50)]
    frames: usize,
    /// Number of trajectories.
    #[arg(long, default_value_t = 3)]
    n_traj: usize,
    /// Per-step in-plane slide bound, mm.
    #[arg(long, default_value_t = 0.5)]
    step_mm: f64,
    /// Per-step in-plane yaw bound, degrees.
    #[arg(long, default_value_t = 2.0)]
    step_deg: f64,
    /// Run configuration file (flat key-value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` and `train.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Per-frame metrics output (JSON-lines).
    #[arg(long, default_value = "metrics.jsonl")]
    out: PathBuf,
    /// Per-trajectory summary CSV.
    #[arg(long, default_value = "summary.csv")]
    summary: PathBuf,
}

#[derive(Args)]
struct UncertaintyArgs {
    /// Energy model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Object shape spec.
    #[arg(long)]
    object: String,
    /// Number of grasp sets.
    #[arg(long, default_value_t = 10)]
    n_sets: usize,
    /// Grasps per set.
    #[arg(long, default_value_t = 10)]
    set_size: usize,
    /// Run configuration file (flat key-value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` and `train.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Selection-quality table output (CSV).
    #[arg(long, default_value = "uncertainty.csv")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Sweep {
    Stages,
    T0,
    Mask,
}

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    match s {
        "stages" => Ok(Sweep::Stages),
        "t0" => Ok(Sweep::T0),
        "mask" => Ok(Sweep::Mask),
        _ => Err(format!("unknown sweep {s:?} (expected stages, t0, or mask)")),
    }
}

#[derive(Args)]
struct AblateArgs {
    /// Which factor to sweep.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Sweep,
    /// Evaluation dataset file.
    #[arg(long)]
    dataset: PathBuf,
    /// Energy model checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Object shape spec; defaults to the dataset's recorded object id.
    #[arg(long)]
    object: Option<String>,
    /// t0 sweep only: comma-separated start times, e.g. 0.4,0.6,0.8,1.0.
    #[arg(long)]
    values: Option<String>,
    /// Paired repetitions per variant (stages and t0 sweeps).
    #[arg(long, default_value_t = 3)]
    reps: usize,
    /// Run configuration file (flat key-value).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` and `train.seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep table output (CSV).
    #[arg(long, default_value = "ablation.csv")]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    let wd = cli.workdir;
    match cli.command {
        Command::GenData(a) => cmd_gen_data(&wd, a),
        Command::Train(a) => cmd_train(&wd, a),
        Command::Eval(a) => cmd_eval(&wd, a),
        Command::Track(a) => cmd_track(&wd, a),
        Command::Uncertainty(a) => cmd_uncertainty(&wd, a),
        Command::Ablate(a) => cmd_ablate(&wd, a),
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("EBMPOSE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| anyhow!("EBMPOSE_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow!("thread pool init failed: {e}"))?;
    }
    Ok(())
}

fn resolve(workdir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        workdir.join(p)
    }
}

fn load_config(workdir: &Path, path: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => {
            let p = resolve(workdir, p);
            RunConfig::parse_file(&p).with_context(|| format!("reading config {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_object(spec: &str) -> Result<ObjectModel> {
    let shape = ShapeSpec::parse(spec).with_context(|| format!("parsing object spec {spec:?}"))?;
    Ok(make_shape(&shape)?)
}

/// Object for an evaluation: the explicit spec if given, else the one the
/// dataset records.
fn object_for(dataset: &[Sample], explicit: &Option<String>) -> Result<ObjectModel> {
    let spec = match explicit {
        Some(s) => s.clone(),
        None => {
            dataset
                .first()
                .ok_or_else(|| anyhow!("empty dataset"))?
                .object_id
                .clone()
        }
    };
    load_object(&spec)
}

/// The run's architecture with the plate gap fit to the object, matching how
/// grasps are synthesized.
fn fitted_arch(cfg: &RunConfig, object: &ObjectModel) -> ArchConfig {
    let mut arch = cfg.arch.clone();
    arch.sensor.fit_gap_to(object, &object.grasp_axes()[0]);
    arch
}

fn read_dataset_file(path: &Path) -> Result<Vec<Sample>> {
    let mut f =
        File::open(path).with_context(|| format!("opening dataset {}", path.display()))?;
    read_dataset(&mut f).with_context(|| format!("reading dataset {}", path.display()))
}

fn write_metrics_and_summary(
    metrics_path: &Path,
    summary_path: &Path,
    records: &[MetricsRecord],
) -> Result<()> {
    let mut mf = BufWriter::new(
        File::create(metrics_path)
            .with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    write_metrics(&mut mf, records)?;
    mf.flush()?;
    let rows = summarize(records);
    let mut sf = BufWriter::new(
        File::create(summary_path)
            .with_context(|| format!("creating {}", summary_path.display()))?,
    );
    write_summary_csv(&mut sf, &rows)?;
    sf.flush()?;
    for r in &rows {
        println!(
            "{} {}: n={} median={:.3} mm mean={:.3} mm rhs/sample={:.1}",
            r.method, r.object_id, r.n, r.median_error_mm, r.mean_error_mm, r.mean_rhs_evals
        );
    }
    println!(
        "wrote {} records to {} and the summary to {}",
        records.len(),
        metrics_path.display(),
        summary_path.display()
    );
    Ok(())
}

fn write_loss_csv(path: &Path, report: &TrainReport) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "step,loss")?;
    for (i, l) in report.losses.iter().enumerate() {
        writeln!(w, "{i},{l}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_gen_data(wd: &Path, a: GenDataArgs) -> Result<()> {
    let cfg = load_config(wd, &a.config, a.seed)?;
    let object = load_object(&a.object)?;
    let arch = fitted_arch(&cfg, &object);
    let gen = DatasetGenConfig {
        n: a.n,
        master_seed: cfg.seed,
        object_id: a.object.clone(),
        grasp: None,
        aug: a.augment.then(AugmentConfig::default),
        mask_prob: a.mask_prob,
    };
    let samples = generate_dataset(&object, &arch.sensor, &gen)?;
    let out = resolve(wd, &a.out);
    let mut f =
        BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
    write_dataset(&mut f, &samples)?;
    f.flush()?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

fn cmd_train(wd: &Path, a: TrainArgs) -> Result<()> {
    let cfg = load_config(wd, &a.config, a.seed)?;
    let samples = read_dataset_file(&resolve(wd, &a.dataset))?;
    let object = object_for(&samples, &a.object)?;
    let arch = fitted_arch(&cfg, &object);
    let out = resolve(wd, &a.out);
    let loss_csv = resolve(wd, &a.loss_csv);
    let report = match a.method {
        TrainMethod::Ours => {
            let mut model = EnergyModel::init(arch, cfg.schedule, cfg.seed)?;
            let report = train_energy(&mut model, &object, &samples, &cfg.train)?;
            save_energy_file(&out, &model)?;
            report
        }
        TrainMethod::Regression => {
            let mut model = RegressorModel::init(arch, cfg.seed)?;
            let report = train_regressor(&mut model, &object, &samples, &cfg.train)?;
            save_regressor_file(&out, &model)?;
            report
        }
    };
    write_loss_csv(&loss_csv, &report)?;
    let (head, tail) = report.loss_drop(50);
    println!(
        "trained {} steps (loss {:.4} -> {:.4}); checkpoint {}; loss curve {}",
        report.losses.len(),
        head,
        tail,
        out.display(),
        loss_csv.display()
    );
    Ok(())
}

fn required_checkpoint(
    wd: &Path,
    ckpt: &Option<PathBuf>,
    method: Method,
) -> Result<PathBuf> {
    ckpt.as_ref()
        .map(|p| resolve(wd, p))
        .ok_or_else(|| anyhow!("--checkpoint is required for method {method}"))
}

fn cmd_eval(wd: &Path, a: EvalArgs) -> Result<()> {
    let cfg = load_config(wd, &a.config, a.seed)?;
    let raw = read_dataset_file(&resolve(wd, &a.dataset))?;
    let object = object_for(&raw, &a.object)?;
    let samples = mask_samples(&raw, a.mask, cfg.seed);
    let records = match a.method {
        Method::Ours => {
            let model = load_energy_file(required_checkpoint(wd, &a.checkpoint, a.method)?)?;
            eval_ours(&model, &object, &samples, &cfg.pipeline, cfg.seed)?
        }
        Method::Regression => {
            let model = load_regressor_file(required_checkpoint(wd, &a.checkpoint, a.method)?)?;
            eval_regression(&model, &object, &samples)?
        }
        Method::IcpGlobal | Method::IcpPartial => {
            let arch = fitted_arch(&cfg, &object);
            eval_icp(
                &object,
                &arch.sensor,
                arch.nominal_indentation,
                &samples,
                a.method == Method::IcpPartial,
                &IcpEvalConfig::default(),
                cfg.seed,
            )?
        }
        Method::GridMatch => {
            let arch = fitted_arch(&cfg, &object);
            let range = a.grid_range.unwrap_or_else(|| {
                let (bx, by) = GraspSpec::default_for(&object).xy_range;
                bx.max(by)
            });
            let grid =
                grid_for_grasp(&object, &object.grasp_axes()[0], a.grid_step, a.grid_yaw, range)?;
            eval_grid(&object, &arch.sensor, arch.nominal_indentation, &samples, &grid)?
        }
    };
    write_metrics_and_summary(&resolve(wd, &a.out), &resolve(wd, &a.summary), &records)
}

fn cmd_track(wd: &Path, a: TrackArgs) -> Result<()> {
    let cfg = load_config(wd, &a.config, a.seed)?;
    let object = load_object(&a.object)?;
    let model = load_energy_file(resolve(wd, &a.checkpoint))?;
    let step_scale = (a.step_mm, a.step_deg.to_radians());
    let mut all = Vec::new();
    for j in 0..a.n_traj {
        let mut rng = make_rng(cfg.seed, &[STREAM_DATASET, TAG_TRAJ, j as u64]);
        let mut frames =
            generate_trajectory(&object, a.frames, step_scale, &model.arch.sensor, &mut rng)?;
        for f in &mut frames {
            f.object_id = format!("traj{j}");
        }
        let records = run_tracking(
            &model,
            &object,
            &frames,
            &cfg.pipeline,
            cfg.seed.wrapping_add(j as u64),
            None,
        )?;
        all.extend(records);
    }
    write_metrics_and_summary(&resolve(wd, &a.out), &resolve(wd, &a.summary), &all)
}

fn cmd_uncertainty(wd: &Path, a: UncertaintyArgs) -> Result<()> {
    let cfg = load_config(wd, &a.config, a.seed)?;
    let object = load_object(&a.object)?;
    let model = load_energy_file(resolve(wd, &a.checkpoint))?;
    if a.n_sets == 0 || a.set_size == 0 {
        bail!("--n-sets and --set-size must be positive");
    }
    let spec = GraspSpec::default_for(&object);
    let mut sets = Vec::with_capacity(a.n_sets);
    for s in 0..a.n_sets {
        let mut set = Vec::with_capacity(a.set_size);
        for g in 0..a.set_size {
            let mut rng = make_rng(cfg.seed, &[STREAM_DATASET, s as u64, g as u64]);
            let mut sample = synthesize_grasp(&object, &spec, &model.arch.sensor, &mut rng)?;
            sample.object_id = format!("set{s}");
            set.push(sample);
        }
        sets.push(set);
    }
    let out = run_uncertainty(&model, &object, &sets, &cfg.pipeline, cfg.seed)?;
    let path = resolve(wd, &a.out);
    let mut w =
        BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "selection,mean_error_mm")?;
    for (label, v) in [
        ("top-1", out.top1_mean),
        ("top-3", out.top3_mean),
        ("top-5", out.top5_mean),
        ("random", out.random_mean),
    ] {
        writeln!(w, "{label},{v}")?;
        println!("{label}: {v:.3} mm");
    }
    w.flush()?;
    println!("wrote the selection table to {}", path.display());
    Ok(())
}

fn write_variant_csv(path: &Path, rows: &[VariantResult]) -> Result<()> {
    let mut w =
        BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "variant,n,median_error_mm,mean_rhs_evals")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.label, r.errors.len(), r.median_error_mm, r.mean_rhs_evals)?;
        println!(
            "{}: n={} median={:.3} mm rhs/sample={:.1}",
            r.label,
            r.errors.len(),
            r.median_error_mm,
            r.mean_rhs_evals
        );
    }
    w.flush()?;
    println!("wrote the sweep table to {}", path.display());
    Ok(())
}

fn parse_t0_values(values: &Option<String>) -> Result<Vec<f64>> {
    match values {
        None => Ok(vec![0.4, 0.6, 0.8, 1.0]),
        Some(s) => s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| anyhow!("bad t0 value {v:?} in --values"))
            })
            .collect(),
    }
}

fn cmd_ablate(wd: &Path, a: AblateArgs) -> Result<()> {
    let cfg = load_config(wd, &a.config, a.seed)?;
    let samples = read_dataset_file(&resolve(wd, &a.dataset))?;
    let object = object_for(&samples, &a.object)?;
    let model = load_energy_file(resolve(wd, &a.checkpoint))?;
    if a.values.is_some() && a.sweep != Sweep::T0 {
        bail!("--values only applies to the t0 sweep");
    }
    let rows = match a.sweep {
        Sweep::Stages => {
            run_stage_ablation(&model, &object, &samples, &cfg.pipeline, a.reps, cfg.seed)?
        }
        Sweep::T0 => {
            let t0s = parse_t0_values(&a.values)?;
            run_t0_sweep(&model, &object, &samples, &cfg.pipeline, &t0s, a.reps, cfg.seed)?
        }
        Sweep::Mask => {
            // Evaluation-time masking of one shared model; single rep, with
            // the per-sample evaluation streams paired across modes.
            let mut rows = Vec::new();
            for mode in MaskMode::ALL {
                let masked = mask_samples(&samples, mode, cfg.seed);
                let label = format!("mask-{mode}");
                let recs =
                    eval_pipeline(&model, &object, &masked, &cfg.pipeline, cfg.seed, &label)?;
                let errors: Vec<f64> = recs.iter().map(|r| r.error_mm).collect();
                let mean_rhs = recs.iter().map(|r| r.n_rhs_evals).sum::<usize>() as f64
                    / recs.len().max(1) as f64;
                rows.push(VariantResult {
                    label,
                    median_error_mm: ebmpose_core::metrics::median(&errors),
                    mean_rhs_evals: mean_rhs,
                    errors,
                });
            }
            rows
        }
    };
    write_variant_csv(&resolve(wd, &a.out), &rows)
}
