use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use distinit::baseline::simulate_baseline;
use distinit::edt::build_stack;
use distinit::evaluation::{image_overlap, quality_bin, target_area_overlap, tre_values, QualityBin};
use distinit::io::{self, SCHEMA_VERSION};
use distinit::objective::ForegroundMask;
use distinit::optimizer::{optimize, StopReason};
use distinit::phantom::generate;
use distinit::sweep::{run_sweep, Dataset};
use distinit::transform::{ParamVector, RigidTransform};
use distinit::volume::{BinaryMask, LabelMap};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn pick(flag: &Option<PathBuf>, configured: &mut Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    if let Some(p) = flag {
        *configured = Some(p.clone());
    }
    configured
        .clone()
        .ok_or_else(|| CliError::Usage(format!("missing --{name} (or paths.{} in the config)", name.replace('-', "_"))))
}

fn override_path(flag: &Option<PathBuf>, configured: &mut Option<PathBuf>) -> Option<PathBuf> {
    if let Some(p) = flag {
        *configured = Some(p.clone());
    }
    configured.clone()
}

/// Creates the output directory and writes the resolved configuration.
fn prepare_output(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.paths.output.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| distinit::Error::Io { path: dir.clone(), source: e })?;
    let echo = cfg.to_toml();
    log::info!("resolved configuration:\n{echo}");
    let path = dir.join("config.toml");
    std::fs::write(&path, echo).map_err(|e| distinit::Error::Io { path, source: e })?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| distinit::Error::Io { path: path.to_path_buf(), source: e })?;
    Ok(())
}

/// Sorted nonzero labels present in either map.
fn label_ids(a: &LabelMap, b: &LabelMap) -> Vec<u8> {
    let mut ids: Vec<u8> = a.labels().iter().chain(b.labels()).copied().filter(|&l| l != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn foreground(map: &LabelMap) -> Result<ForegroundMask, CliError> {
    let bits = map.labels().iter().map(|&l| l != 0).collect();
    Ok(ForegroundMask::new(BinaryMask::new(map.meta().clone(), bits)?)?)
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Edge length of the cubic moving grid in voxels [default: 96].
    #[arg(long)]
    pub size: Option<usize>,
    /// Fixed view size as a fraction of the moving grid [default: 0.4].
    #[arg(long)]
    pub view_fraction: Option<f64>,
}

#[derive(Serialize)]
struct PhantomFiles {
    moving: &'static str,
    fixed: &'static str,
    fixed_mask: &'static str,
    target: &'static str,
    fixed_landmarks: &'static str,
    moving_landmarks: &'static str,
    ground_truth: &'static str,
}

#[derive(Serialize)]
struct PhantomManifest<'a> {
    schema_version: u32,
    spec: &'a distinit::phantom::PhantomSpec,
    files: PhantomFiles,
    ground_truth_params: ParamVector,
    ground_truth_center: [f64; 3],
}

pub fn phantom(args: &PhantomArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    if let Some(n) = args.size {
        cfg.phantom.moving_dims = [n; 3];
    }
    if let Some(f) = args.view_fraction {
        cfg.phantom.view_fraction = f;
    }
    cfg.phantom.validate()?;
    let dir = prepare_output(cfg)?;
    let p = generate(&cfg.phantom)?;
    let files = PhantomFiles {
        moving: "moving.mhd",
        fixed: "fixed.mhd",
        fixed_mask: "fixed_mask.mhd",
        target: "target.mhd",
        fixed_landmarks: "fixed_landmarks.csv",
        moving_landmarks: "moving_landmarks.csv",
        ground_truth: "ground_truth.txt",
    };
    io::write_label_map(&dir.join(files.moving), &p.moving)?;
    io::write_label_map(&dir.join(files.fixed), &p.fixed)?;
    io::write_mask(&dir.join(files.fixed_mask), p.fixed_mask.mask())?;
    io::write_mask(&dir.join(files.target), &p.target)?;
    io::write_landmarks(&dir.join(files.fixed_landmarks), &p.landmarks_fixed)?;
    io::write_landmarks(&dir.join(files.moving_landmarks), &p.landmarks_moving)?;
    io::write_transform(&dir.join(files.ground_truth), &p.ground_truth)?;
    let manifest = PhantomManifest {
        schema_version: SCHEMA_VERSION,
        spec: &cfg.phantom,
        files,
        ground_truth_params: p.ground_truth.params,
        ground_truth_center: p.ground_truth.center().into(),
    };
    io::write_json(&dir.join("manifest.json"), &manifest)?;
    println!("phantom written to {} (ground truth {})", dir.display(), p.ground_truth.params);
    Ok(())
}

#[derive(Debug, Args)]
pub struct EdtArgs {
    /// Label map to transform.
    #[arg(long, value_name = "PATH")]
    pub labels: PathBuf,
    /// Label ids to transform [default: every nonzero label present].
    #[arg(long = "label", value_name = "ID")]
    pub label_ids: Vec<u8>,
}

pub fn edt(args: &EdtArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let dir = prepare_output(cfg)?;
    let map = io::read_label_map(&args.labels)?;
    let ids = if args.label_ids.is_empty() { label_ids(&map, &map) } else { args.label_ids.clone() };
    let start = Instant::now();
    let stack = build_stack(&map, &ids)?;
    log::info!("distance maps computed in {:.3} s", start.elapsed().as_secs_f64());
    for (id, channel) in stack.label_ids().iter().zip(stack.channels()) {
        let path = dir.join(format!("distance-{id}.mhd"));
        io::write_volume(&path, channel)?;
        println!("{}", path.display());
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Fixed label map.
    #[arg(long, value_name = "PATH")]
    pub fixed: Option<PathBuf>,
    /// Moving label map.
    #[arg(long, value_name = "PATH")]
    pub moving: Option<PathBuf>,
    /// Foreground mask on the fixed grid [default: fixed labels != 0].
    #[arg(long, value_name = "PATH")]
    pub mask: Option<PathBuf>,
    /// Starting transform [default: identity about the mask centroid].
    #[arg(long, value_name = "PATH")]
    pub init: Option<PathBuf>,
    /// Perturbation added to the starting parameters: α,β,γ (rad),tx,ty,tz (mm).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, value_name = "A,B,G,X,Y,Z")]
    pub offset: Option<Vec<f64>>,
    /// Penalty exponent, 1 or 2 [default: 2].
    #[arg(long)]
    pub p: Option<u8>,
    /// Iteration limit [default: 2000].
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Serialize)]
struct RegisterResult {
    schema_version: u32,
    center: [f64; 3],
    initial_params: ParamVector,
    final_params: ParamVector,
    initial_cost: f64,
    final_cost: f64,
    best_iteration: usize,
    best_cost: f64,
    best_params: ParamVector,
    iterations: usize,
    stop_reason: StopReason,
    max_step_ratio: f64,
}

pub fn register(args: &RegisterArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let fixed_path = pick(&args.fixed, &mut cfg.paths.fixed, "fixed")?;
    let moving_path = pick(&args.moving, &mut cfg.paths.moving, "moving")?;
    let mask_path = override_path(&args.mask, &mut cfg.paths.mask);
    let init_path = override_path(&args.init, &mut cfg.paths.init_transform);
    let offset = match &args.offset {
        Some(o) => Some(ParamVector(
            o.as_slice()
                .try_into()
                .map_err(|_| CliError::Usage(format!("--offset needs 6 comma-separated values, got {}", o.len())))?,
        )),
        None => None,
    };
    if let Some(p) = args.p {
        cfg.objective.p = p;
    }
    if let Some(n) = args.max_iters {
        cfg.optimizer.max_iters = n;
    }
    cfg.objective.validate()?;
    cfg.optimizer.validate()?;
    let dir = prepare_output(cfg)?;

    let fixed = io::read_label_map(&fixed_path)?;
    let moving = io::read_label_map(&moving_path)?;
    let mask = match &mask_path {
        Some(p) => ForegroundMask::new(io::read_mask(p)?)?,
        None => foreground(&fixed)?,
    };
    let mut t0 = match &init_path {
        Some(p) => io::read_transform(p)?,
        None => RigidTransform::identity(mask.centroid()),
    };
    if let Some(o) = &offset {
        t0 = t0.perturb(o);
    }
    let ids = label_ids(&fixed, &moving);
    let start = Instant::now();
    let fixed_stack = build_stack(&fixed, &ids)?;
    let moving_stack = build_stack(&moving, &ids)?;
    let (t, trace) = optimize(&fixed_stack, &moving_stack, &t0, &cfg.objective, &cfg.optimizer, &mask)?;
    log::info!("registration finished in {:.3} s", start.elapsed().as_secs_f64());

    io::write_transform(&dir.join("transform.txt"), &t)?;
    io::write_jsonl(&dir.join("trace.jsonl"), &trace.records)?;
    let result = RegisterResult {
        schema_version: SCHEMA_VERSION,
        center: t.center().into(),
        initial_params: t0.params,
        final_params: t.params,
        initial_cost: trace.initial_cost(),
        final_cost: trace.final_cost,
        best_iteration: trace.best_iteration,
        best_cost: trace.best_cost,
        best_params: trace.best_params,
        iterations: trace.len(),
        stop_reason: trace.stop_reason,
        max_step_ratio: trace.max_step_ratio(&cfg.optimizer),
    };
    io::write_json(&dir.join("result.json"), &result)?;
    println!(
        "final {} cost {:.6e} after {} iterations ({:?})",
        t.params,
        trace.final_cost,
        trace.len(),
        trace.stop_reason
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Transform mapping fixed to moving coordinates.
    #[arg(long, value_name = "PATH")]
    pub transform: Option<PathBuf>,
    /// Landmark CSV (id,x,y,z) in fixed coordinates.
    #[arg(long, value_name = "PATH")]
    pub fixed_landmarks: Option<PathBuf>,
    /// Landmark CSV (id,x,y,z) in moving coordinates.
    #[arg(long, value_name = "PATH")]
    pub moving_landmarks: Option<PathBuf>,
    /// Target mask on the moving grid; with --fixed, reports target overlap.
    #[arg(long, value_name = "PATH")]
    pub target: Option<PathBuf>,
    /// Fixed label map, for overlap measures.
    #[arg(long, value_name = "PATH")]
    pub fixed: Option<PathBuf>,
    /// Moving label map; with --fixed, reports image overlap.
    #[arg(long, value_name = "PATH")]
    pub moving: Option<PathBuf>,
    /// Domain of the image overlap on the fixed grid [default: fixed labels != 0].
    #[arg(long, value_name = "PATH")]
    pub mask: Option<PathBuf>,
}

#[derive(Serialize)]
struct LandmarkError {
    id: String,
    tre: f64,
}

#[derive(Serialize)]
struct EvaluationResult {
    schema_version: u32,
    tre: Vec<LandmarkError>,
    tre_mean: f64,
    quality: QualityBin,
    bin_boundaries: &'static str,
    image_overlap: Option<f64>,
    target_area_overlap: Option<f64>,
}

pub fn evaluate(args: &EvaluateArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let t_path = pick(&args.transform, &mut cfg.paths.transform, "transform")?;
    let f_path = pick(&args.fixed_landmarks, &mut cfg.paths.fixed_landmarks, "fixed-landmarks")?;
    let m_path = pick(&args.moving_landmarks, &mut cfg.paths.moving_landmarks, "moving-landmarks")?;
    let target_path = override_path(&args.target, &mut cfg.paths.target);
    let fixed_path = override_path(&args.fixed, &mut cfg.paths.fixed);
    let moving_path = override_path(&args.moving, &mut cfg.paths.moving);
    let mask_path = override_path(&args.mask, &mut cfg.paths.mask);
    let dir = prepare_output(cfg)?;

    let t = io::read_transform(&t_path)?;
    let fixed_lm = io::read_landmarks(&f_path)?;
    let moving_lm = io::read_landmarks(&m_path)?;
    let values = tre_values(&t, &fixed_lm, &moving_lm)?;
    let tre_mean = values.iter().sum::<f64>() / values.len() as f64;
    let ids: Vec<String> = fixed_lm.ids().iter().filter(|id| moving_lm.get(id).is_some()).cloned().collect();
    let fixed = fixed_path.as_deref().map(io::read_label_map).transpose()?;
    let image = match (&fixed, &moving_path) {
        (Some(f), Some(m)) => {
            let moving = io::read_label_map(m)?;
            let domain = match &mask_path {
                Some(p) => io::read_mask(p)?,
                None => foreground(f)?.mask().clone(),
            };
            Some(image_overlap(f.meta(), Some(&domain), moving.meta(), &t)?)
        }
        _ => None,
    };
    let target = match (&fixed, &target_path) {
        (Some(f), Some(p)) => Some(target_area_overlap(&io::read_mask(p)?, f.meta(), &t)?),
        _ => None,
    };
    let result = EvaluationResult {
        schema_version: SCHEMA_VERSION,
        tre: ids.into_iter().zip(values).map(|(id, tre)| LandmarkError { id, tre }).collect(),
        tre_mean,
        quality: quality_bin(tre_mean)?,
        bin_boundaries: QualityBin::BOUNDARIES,
        image_overlap: image,
        target_area_overlap: target,
    };
    io::write_json(&dir.join("evaluation.json"), &result)?;
    println!("TRE mean {:.4} mm ({})", result.tre_mean, result.quality.name());
    Ok(())
}

#[derive(Debug, Args)]
pub struct LandmarkSimArgs {
    /// Candidate landmarks in fixed coordinates.
    #[arg(long, value_name = "PATH")]
    pub fixed_landmarks: Option<PathBuf>,
    /// Candidate landmarks in moving coordinates.
    #[arg(long, value_name = "PATH")]
    pub moving_landmarks: Option<PathBuf>,
    /// Evaluation landmarks on the fixed side [default: --fixed-landmarks].
    #[arg(long, value_name = "PATH")]
    pub eval_fixed_landmarks: Option<PathBuf>,
    /// Evaluation landmarks on the moving side [default: --moving-landmarks].
    #[arg(long, value_name = "PATH")]
    pub eval_moving_landmarks: Option<PathBuf>,
    /// Noise standard deviation per axis in mm [default: 1.5].
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Landmarks drawn per repeat [default: 4].
    #[arg(long)]
    pub n_landmarks: Option<usize>,
    /// Number of repeats [default: 10000].
    #[arg(long)]
    pub repeats: Option<usize>,
}

pub fn landmark_sim(args: &LandmarkSimArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    let f_path = pick(&args.fixed_landmarks, &mut cfg.paths.fixed_landmarks, "fixed-landmarks")?;
    let m_path = pick(&args.moving_landmarks, &mut cfg.paths.moving_landmarks, "moving-landmarks")?;
    let ef_path = override_path(&args.eval_fixed_landmarks, &mut cfg.paths.eval_fixed_landmarks);
    let em_path = override_path(&args.eval_moving_landmarks, &mut cfg.paths.eval_moving_landmarks);
    if let Some(s) = args.sigma {
        cfg.baseline.sigma = s;
    }
    if let Some(n) = args.n_landmarks {
        cfg.baseline.n_landmarks = n;
    }
    if let Some(r) = args.repeats {
        cfg.baseline.repeats = r;
    }
    cfg.baseline.validate()?;
    let dir = prepare_output(cfg)?;

    let fixed = io::read_landmarks(&f_path)?;
    let moving = io::read_landmarks(&m_path)?;
    let eval_fixed = ef_path.as_deref().map(io::read_landmarks).transpose()?.unwrap_or_else(|| fixed.clone());
    let eval_moving = em_path.as_deref().map(io::read_landmarks).transpose()?.unwrap_or_else(|| moving.clone());
    let report = simulate_baseline(&fixed, &moving, &cfg.baseline, &eval_fixed, &eval_moving)?;
    io::write_json(&dir.join("baseline.json"), &report)?;
    let s = &report.summary;
    println!(
        "{} repeats: median {:.4} mm, q1 {:.4}, q3 {:.4}, acceptable-or-better {:.4}",
        s.count,
        s.median,
        s.q1,
        s.q3,
        1.0 - s.bins.fail
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Number of generated phantoms, when the dataset is phantoms.
    #[arg(long)]
    pub count: Option<usize>,
    /// Case budget per subject.
    #[arg(long)]
    pub max_cases: Option<usize>,
}

#[derive(Serialize)]
struct Timing<'a> {
    case_id: &'a str,
    wall_time_s: f64,
}

pub fn sweep(args: &SweepArgs, cfg: &mut RunConfig) -> Result<(), CliError> {
    if let Some(n) = args.count {
        match &mut cfg.sweep.dataset {
            Dataset::Phantoms { count, .. } => *count = n,
            Dataset::Files { .. } => return Err(CliError::Usage("--count applies to phantom datasets only".into())),
        }
    }
    if args.max_cases.is_some() {
        cfg.sweep.max_cases = args.max_cases;
    }
    cfg.sweep.validate()?;
    cfg.objective.validate()?;
    cfg.optimizer.validate()?;
    let dir = prepare_output(cfg)?;

    let start = Instant::now();
    let subjects = cfg.sweep.dataset.load()?;
    let out = run_sweep(&subjects, &cfg.sweep, &cfg.objective, &cfg.optimizer)?;
    log::info!("{} cases in {:.1} s", out.reports.len(), start.elapsed().as_secs_f64());

    io::write_jsonl(&dir.join("reports.jsonl"), &out.reports)?;
    io::write_jsonl(
        &dir.join("timings.jsonl"),
        out.reports.iter().map(|r| Timing { case_id: &r.case_id, wall_time_s: r.wall_time_s }),
    )?;
    io::write_json(&dir.join("aggregate.json"), &out.aggregate)?;
    let text = out.aggregate.to_text();
    write_text(&dir.join("aggregate.txt"), &text)?;
    print!("{text}");
    Ok(())
}
