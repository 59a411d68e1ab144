//! The `diffplan` command line: scene and dataset generation, training,
//! planning, benchmarking and gradient checks as subcommands.
//!
//! Every run derives all randomness from `--seed` and records its fully
//! resolved configuration (thread count excluded, since it never affects
//! results) into the output directory, so any run can be replayed exactly.
//! Exit codes: 0 on success, 1 on domain failures (e.g. no collision-free
//! plan), 2 on usage or file-format errors.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::chain::{self, ChainSpec, Trajectory};
use crate::diffusion::{
    load_checkpoint, save_checkpoint, train, DiffusionSchedule, TrainConfig,
};
use crate::eval::{bench, write_report, BenchConfig};
use crate::guidance::{plan, GuideConfig, PlanConfig};
use crate::worldgen::{
    gen_dataset, gen_scene, read_dataset, read_scene_dir, write_dataset, write_scene, DatasetMeta,
    SceneKind, WorldgenParams, DATASET_FORMAT,
};
use crate::{Error, Result};

#[derive(Parser)]
#[command(
    name = "diffplan",
    version,
    about = "Diffusion-based motion planning for cuboid-link arms"
)]
struct Cli {
    /// Worker threads (default: available parallelism, or DIFFPLAN_THREADS).
    /// Outputs are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scene files for the four archetypes.
    GenScenes(GenScenesArgs),
    /// Generate a prior-trajectory dataset file.
    GenData(GenDataArgs),
    /// Train a denoiser on a dataset file.
    Train(TrainArgs),
    /// Plan one scene with the guided ensemble.
    Plan(PlanArgs),
    /// Benchmark a scene directory and emit CSV reports.
    Bench(BenchArgs),
    /// Run the finite-difference gradient suites.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Serialize)]
struct GenScenesArgs {
    /// tabletop | shelf | cubby | sphere_field | all
    #[arg(long, default_value = "all")]
    kind: String,
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Chain file (defaults to the built-in 3-joint arm).
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Worldgen parameter overrides (JSON).
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    chain: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    #[arg(long, default_value_t = 2e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Diffusion timestep count T.
    #[arg(long, default_value_t = 64)]
    timesteps: usize,
    #[arg(long, default_value_t = 0.02)]
    beta_max: f64,
    /// Channel widths of the three network levels, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128])]
    widths: Vec<usize>,
    /// Train without endpoint conditioning (ablation).
    #[arg(long)]
    no_condition: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct PlanArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    chain: Option<PathBuf>,
    /// Guides file (defaults to the built-in 12-guide ensemble).
    #[arg(long)]
    guides: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attach a handheld object (JSON with half_extents and offset).
    #[arg(long)]
    attach: Option<PathBuf>,
    /// Oracle interpolation substeps.
    #[arg(long, default_value_t = 8)]
    substeps: usize,
    /// Multimodality gradient multiplier (omit to disable).
    #[arg(long)]
    mm: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory of scene JSON files.
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    chain: Option<PathBuf>,
    #[arg(long)]
    guides: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    substeps: usize,
    /// Emit the guide-count prefix sweep (CSV + SVG).
    #[arg(long)]
    sweep_guides: bool,
    /// Extra checkpoints to re-run the suite with (timestep sweep).
    #[arg(long, num_args = 1..)]
    sweep_t: Vec<PathBuf>,
    /// Record real wall-clock times in report files (breaks byte-identical
    /// reruns; off by default).
    #[arg(long)]
    wall_clock: bool,
    #[arg(long)]
    mm: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct GradcheckArgs {
    #[arg(long)]
    chain: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Tolerance for the denoiser loss-gradient suite.
    #[arg(long, default_value_t = 1e-3)]
    net_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

/// Parse and run; returns the process exit status.
pub fn dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap treats --help/--version as "errors" with success status.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_threads(cli.threads);
    let outcome = match cli.command {
        Command::GenScenes(args) => run_gen_scenes(args),
        Command::GenData(args) => run_gen_data(args),
        Command::Train(args) => run_train(args),
        Command::Plan(args) => run_plan(args),
        Command::Bench(args) => run_bench(args),
        Command::Gradcheck(args) => run_gradcheck(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_format() {
                2
            } else {
                1
            }
        }
    }
}

fn init_threads(flag: Option<usize>) {
    let count = flag.or_else(|| {
        std::env::var("DIFFPLAN_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = count {
        // Fails harmlessly if a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_chain(path: &Option<PathBuf>) -> Result<ChainSpec> {
    match path {
        Some(p) => chain::read_chain(p),
        None => Ok(ChainSpec::default_arm()),
    }
}

fn load_guides(path: &Option<PathBuf>) -> Result<Vec<GuideConfig>> {
    match path {
        Some(p) => crate::guidance::read_guides(p),
        None => Ok(GuideConfig::default_ensemble()),
    }
}

/// Every subcommand with an output directory echoes its resolved
/// configuration there for exact replay.
fn write_resolved_config<T: Serialize>(out: &Path, subcommand: &str, args: &T) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let doc = serde_json::json!({
        "subcommand": subcommand,
        "args": args,
    });
    std::fs::write(out.join("resolved_config.json"), serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}

fn run_gen_scenes(args: GenScenesArgs) -> Result<i32> {
    let chain = load_chain(&args.chain)?;
    let params = match &args.params {
        Some(p) => WorldgenParams::from_json(&std::fs::read_to_string(p)?)?,
        None => WorldgenParams::default(),
    };
    let kinds: Vec<SceneKind> = if args.kind == "all" {
        SceneKind::ALL.to_vec()
    } else {
        vec![args.kind.parse()?]
    };
    write_resolved_config(&args.out, "gen-scenes", &args)?;
    let mut written = 0usize;
    let mut failures = 0usize;
    for (ki, kind) in kinds.iter().enumerate() {
        let mut produced = 0usize;
        let mut attempt = 0u64;
        while produced < args.count && attempt < (args.count as u64) * 10 {
            let seed = crate::rng::derive_seed(args.seed, "gen_scenes", ki as u64 * 1_000_000 + attempt);
            attempt += 1;
            match gen_scene(*kind, &chain, &params, seed) {
                Ok(mut scene) => {
                    scene.name = format!("{kind}-{produced:04}");
                    write_scene(
                        &args.out.join(format!("{}.json", scene.name)),
                        &scene,
                        *kind,
                    )?;
                    produced += 1;
                    written += 1;
                }
                Err(e) => {
                    failures += 1;
                    eprintln!("warning: {e}");
                }
            }
        }
        if produced < args.count {
            eprintln!("warning: only {produced}/{} {kind} scenes generated", args.count);
        }
    }
    eprintln!("wrote {written} scenes ({failures} rejected seeds)");
    Ok(if written > 0 { 0 } else { 1 })
}

fn run_gen_data(args: GenDataArgs) -> Result<i32> {
    let chain = load_chain(&args.chain)?;
    write_resolved_config(&args.out, "gen-data", &args)?;
    let data = gen_dataset(&chain, args.horizon, args.count, args.seed)?;
    let meta = DatasetMeta {
        format: DATASET_FORMAT.to_string(),
        m: chain.dof(),
        h: args.horizon,
        count: data.len(),
        seed: args.seed,
        chain: args
            .chain
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "builtin-3dof".to_string()),
    };
    write_dataset(&args.out.join("dataset.bin"), &meta, &data)?;
    eprintln!("wrote {} trajectories (h={}, m={})", data.len(), args.horizon, chain.dof());
    Ok(0)
}

fn run_train(args: TrainArgs) -> Result<i32> {
    if args.widths.len() != 3 {
        return Err(Error::Config(format!(
            "--widths needs exactly three values, got {}",
            args.widths.len()
        )));
    }
    let (_, data) = read_dataset(&args.data)?;
    write_resolved_config(&args.out, "train", &args)?;
    let cfg = TrainConfig {
        steps: args.steps,
        batch: args.batch,
        learning_rate: args.lr,
        seed: args.seed,
        timesteps: args.timesteps,
        beta_max: args.beta_max,
        widths: [args.widths[0], args.widths[1], args.widths[2]],
        condition: !args.no_condition,
        ..TrainConfig::default()
    };
    let out = train(&data, &cfg)?;
    save_checkpoint(&args.out.join("model.ckpt"), &out.params, &out.meta)?;
    let mut loss_csv = String::from("step,loss\n");
    for (i, l) in out.loss_history.iter().enumerate() {
        loss_csv.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(args.out.join("loss.csv"), loss_csv)?;
    eprintln!(
        "trained {} steps; loss {} -> {}; {} parameters",
        cfg.steps,
        out.loss_history.first().unwrap_or(&f64::NAN),
        out.loss_history.last().unwrap_or(&f64::NAN),
        out.params.param_count()
    );
    Ok(0)
}

fn trajectory_csv(tau: &Trajectory, header: &str) -> String {
    let mut csv = format!("# {header}\n");
    for k in 0..tau.horizon() {
        let row: Vec<String> = (0..tau.dim()).map(|j| tau.states()[(k, j)].to_string()).collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    csv
}

fn run_plan(args: PlanArgs) -> Result<i32> {
    let mut chain = load_chain(&args.chain)?;
    let (params, meta) = load_checkpoint(&args.ckpt)?;
    if meta.m != chain.dof() {
        return Err(Error::Config(format!(
            "checkpoint was trained for m={} but the chain has {} joints",
            meta.m,
            chain.dof()
        )));
    }
    let (scene, _kind) = crate::worldgen::read_scene(&args.scene, &chain)?;
    if let Some(attach_path) = &args.attach {
        let (half_extents, offset) =
            chain::attachment_from_json(&std::fs::read_to_string(attach_path)?)?;
        chain = chain.attach_object(half_extents, offset);
    }
    let guides = load_guides(&args.guides)?;
    let sched = DiffusionSchedule::new(meta.timesteps, meta.beta_max)?;
    write_resolved_config(&args.out, "plan", &args)?;
    let cfg = PlanConfig {
        batch: args.batch,
        seed: args.seed,
        substeps: args.substeps,
        multimodality: args.mm,
    };
    let result = plan(&params, &sched, &scene, &chain, &guides, &cfg)?;

    let header = format!(
        "diffplan-trajectory m={} h={} seed={} scene={} swept_cost={}",
        meta.m,
        meta.h,
        args.seed,
        scene.name,
        result.per_trajectory[result.selected_index].swept_cost
    );
    std::fs::write(args.out.join("selected.csv"), trajectory_csv(&result.selected, &header))?;
    let records: Vec<serde_json::Value> = result
        .per_trajectory
        .iter()
        .map(|r| {
            serde_json::json!({
                "guide": r.guide,
                "swept_cost": r.swept_cost,
                "collision_free": r.collision_free,
                "guided_fallback": r.guided_fallback,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "scene": scene.name,
        "selected_index": result.selected_index,
        "success_selected": result.success_selected,
        "success_any": result.success_any,
        "path_length": crate::eval::path_length(&result.selected),
        "per_trajectory": records,
    });
    std::fs::write(args.out.join("result.json"), serde_json::to_string_pretty(&doc)?)?;
    eprintln!(
        "planned scene {}: selected #{} (cost {:.6}), success={}, batch success rate {:.2}, {:.1} ms",
        scene.name,
        result.selected_index,
        result.per_trajectory[result.selected_index].swept_cost,
        result.success_selected,
        result.per_trajectory.iter().filter(|r| r.collision_free).count() as f64
            / result.per_trajectory.len() as f64,
        result.timings.total.as_secs_f64() * 1e3
    );
    Ok(if result.success_selected { 0 } else { 1 })
}

fn run_bench(args: BenchArgs) -> Result<i32> {
    let chain = load_chain(&args.chain)?;
    let scenes = read_scene_dir(&args.scenes, &chain)?;
    if scenes.is_empty() {
        return Err(Error::Config(format!(
            "no scene files found in {}",
            args.scenes.display()
        )));
    }
    let guides = load_guides(&args.guides)?;
    write_resolved_config(&args.out, "bench", &args)?;
    let cfg = BenchConfig {
        seed: args.seed,
        batch: args.batch,
        substeps: args.substeps,
        sweep_guides: args.sweep_guides,
        wall_clock: args.wall_clock,
        multimodality: args.mm,
    };

    let mut sweep_rows = Vec::new();
    let main_report = {
        let (params, meta) = load_checkpoint(&args.ckpt)?;
        let sched = DiffusionSchedule::new(meta.timesteps, meta.beta_max)?;
        let report = bench(&params, &sched, &chain, &scenes, &guides, &cfg)?;
        sweep_rows.push((
            meta.timesteps,
            report.aggregates.success_selected_rate,
            report.aggregates.success_any_rate,
        ));
        report
    };
    write_report(&args.out, &main_report)?;

    for ckpt in &args.sweep_t {
        let (params, meta) = load_checkpoint(ckpt)?;
        let sched = DiffusionSchedule::new(meta.timesteps, meta.beta_max)?;
        let report = bench(&params, &sched, &chain, &scenes, &guides, &cfg)?;
        sweep_rows.push((
            meta.timesteps,
            report.aggregates.success_selected_rate,
            report.aggregates.success_any_rate,
        ));
    }
    if sweep_rows.len() > 1 {
        sweep_rows.sort_by_key(|r| r.0);
        let mut csv = String::from("timesteps,success_selected_rate,success_any_rate\n");
        for (t, sel, any) in &sweep_rows {
            csv.push_str(&format!("{t},{sel},{any}\n"));
        }
        std::fs::write(args.out.join("sweep_timesteps.csv"), csv)?;
    }

    let a = &main_report.aggregates;
    eprintln!(
        "benchmarked {} scenes: success selected {:.3}, any {:.3}, acsm {:.3}",
        a.scenes, a.success_selected_rate, a.success_any_rate, a.mean_acsm
    );
    Ok(0)
}

fn run_gradcheck(args: GradcheckArgs) -> Result<i32> {
    // The chain flag is accepted for interface completeness; the cost
    // suites draw random chains, and a provided chain only needs to load.
    if args.chain.is_some() {
        let _ = load_chain(&args.chain)?;
    }
    let overlap = crate::gradcheck::check_overlap_gradients(args.seed, args.samples);
    let fk = crate::gradcheck::check_fk_gradients(args.seed + 1, args.samples);
    let (inter, swept) = crate::gradcheck::check_cost_gradients(args.seed + 2, args.samples);
    let net = crate::gradcheck::check_denoiser_gradients(args.seed + 3)?;
    let mut ok = true;
    for (suite, tol) in [
        (&overlap, args.tol),
        (&fk, args.tol.min(1e-5)),
        (&inter, args.tol),
        (&swept, args.tol),
        (&net, args.net_tol),
    ] {
        let pass = suite.passes(tol);
        ok &= pass;
        println!(
            "{:<14} samples={:<4} max_rel_err={:.3e} tol={:.0e} {}",
            suite.name,
            suite.samples,
            suite.max_rel_err,
            tol,
            if pass { "PASS" } else { "FAIL" }
        );
    }
    Ok(if ok { 0 } else { 1 })
}
