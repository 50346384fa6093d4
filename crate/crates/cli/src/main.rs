use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hsurf_core::config::TrainConfig;
use hsurf_core::evaluate::{evaluate, EvalSettings};
use hsurf_core::extract::{bench_extract, extract_atlas, extract_implicit, implicit_bbox, BranchKind};
use hsurf_core::gradcheck;
use hsurf_core::render::{render_shape, RenderSpec};
use hsurf_core::trainer::{load_run, prepare_dataset, view_grid, Run, Trainer};

#[derive(Parser)]
#[command(name = "hsurf", version, about = "Hybrid atlas/occupancy surface reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write config, loss log and checkpoints to a run directory.
    Train(TrainArgs),
    /// Score both extraction routes of a run against its ground truth.
    Evaluate(EvalArgs),
    /// Write one shape's mesh from either route as OBJ.
    Extract(ExtractArgs),
    /// Time atlas against marching-cubes extraction at a matched vertex budget.
    BenchExtract(BenchArgs),
    /// Normal-map renders of both routes and the ground truth.
    Render(RenderArgs),
    /// Finite-difference checks of every gradient.
    Gradcheck,
}

#[derive(Args)]
struct TrainArgs {
    /// Config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// hybrid, no-img, no-norm, no-img-norm, no-consistency or vanilla.
    #[arg(long)]
    variant: Option<String>,
    /// Overrides as key=value, applied after the config and variant.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 10)]
    grid: usize,
    #[arg(long, default_value_t = 64)]
    mc: usize,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    /// CSV destination; printed to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0)]
    shape: usize,
    /// atlas or implicit.
    #[arg(long, default_value = "atlas")]
    branch: String,
    /// Grid resolution for the atlas, lattice cells per side for marching cubes.
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0)]
    shape: usize,
    #[arg(long, default_value_t = 10)]
    grid: usize,
    #[arg(long, default_value_t = 10)]
    repetitions: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Only this shape; all shapes otherwise.
    #[arg(long)]
    shape: Option<usize>,
    #[arg(long, default_value_t = 10)]
    grid: usize,
    #[arg(long, default_value_t = 64)]
    mc: usize,
    #[arg(long)]
    out: PathBuf,
}

fn load(args: &RunArgs) -> Result<Run> {
    load_run(&args.run).with_context(|| format!("loading run {}", args.run.display()))
}

fn shape_index(run: &Run, shape: usize) -> Result<usize> {
    if shape >= run.dataset.len() {
        bail!("shape {shape} out of range; the run has {} shapes", run.dataset.len());
    }
    Ok(shape)
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = &args.variant {
        cfg.apply_variant(v)?;
    }
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("expected KEY=VALUE, got `{kv}`"))?;
        cfg.set(k.trim(), v.trim()).map_err(anyhow::Error::msg)?;
    }
    cfg.validate()?;
    let dataset = prepare_dataset(&cfg)?;
    for (name, err) in &dataset.failures {
        log::warn!("skipped shape {name}: {err}");
    }
    log::info!("training on {} shapes for {} steps", dataset.len(), cfg.steps);
    let mut trainer = Trainer::new(cfg, &dataset)?;
    let reports = trainer.run(Some(&args.out))?;
    if let Some(last) = reports.last() {
        println!("final loss {:.6e}, level gap {:.4}", last.total, last.level_gap);
    }
    println!("run written to {}", args.out.display());
    Ok(())
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_evaluate(args: EvalArgs) -> Result<()> {
    let run = load(&args.run)?;
    let settings = EvalSettings {
        grid_resolution: args.grid,
        mc_resolution: args.mc,
        bbox_padding: run.cfg.occupancy_padding,
        samples: args.samples,
        seed: run.cfg.seed,
    };
    let report = evaluate(&run.model, &run.dataset, &settings)?;
    write_or_print(args.out.as_ref(), &report.to_csv())
}

fn run_extract(args: ExtractArgs) -> Result<()> {
    let run = load(&args.run)?;
    let i = shape_index(&run, args.shape)?;
    let shape = &run.dataset.shapes[i];
    let ex = match BranchKind::parse(&args.branch) {
        Some(BranchKind::Atlas) => {
            let lat = run.model.atlas_branch.latent_plain(i, &shape.cloud)?;
            extract_atlas(&run.model, &lat, args.resolution.unwrap_or(10))?
        }
        Some(BranchKind::Implicit) => {
            let lat = run.model.occ_branch.latent_plain(i, &shape.cloud)?;
            let bbox = implicit_bbox(run.cfg.occupancy_padding);
            extract_implicit(&run.model, &lat, args.resolution.unwrap_or(64), bbox)?
        }
        None => bail!("unknown branch `{}`; expected atlas or implicit", args.branch),
    };
    hsurf_geometry::save_obj(&ex.mesh, &args.out)?;
    println!(
        "{}: {} vertices, {} faces in {:.4}s -> {}",
        shape.name,
        ex.mesh.vertices.len(),
        ex.mesh.faces.len(),
        ex.seconds,
        args.out.display()
    );
    Ok(())
}

fn run_bench(args: BenchArgs) -> Result<()> {
    let run = load(&args.run)?;
    let i = shape_index(&run, args.shape)?;
    let cloud = &run.dataset.shapes[i].cloud;
    let la = run.model.atlas_branch.latent_plain(i, cloud)?;
    let lo = run.model.occ_branch.latent_plain(i, cloud)?;
    let bbox = implicit_bbox(run.cfg.occupancy_padding);
    let report = bench_extract(&run.model, &la, &lo, args.grid, bbox, args.repetitions)?;
    write_or_print(args.out.as_ref(), &report.to_csv())?;
    eprintln!("speedup {:.2}x", report.speedup());
    Ok(())
}

fn run_render(args: RenderArgs) -> Result<()> {
    let run = load(&args.run)?;
    let spec = RenderSpec {
        cameras: view_grid(&run.cfg)?,
        settings: run.cfg.render_settings(),
        grid_resolution: args.grid,
        mc_resolution: args.mc,
        bbox_padding: run.cfg.occupancy_padding,
    };
    let indices: Vec<usize> = match args.shape {
        Some(s) => vec![shape_index(&run, s)?],
        None => (0..run.dataset.len()).collect(),
    };
    for i in indices {
        let shape = &run.dataset.shapes[i];
        let out = render_shape(&run.model, i, shape, &spec)?;
        let dir = args.out.join(format!("{i:03}-{}", shape.name));
        let files = out.save(&dir, run.model.tau())?;
        println!(
            "{}: {} files in {}, mean level deviation {:.4}",
            shape.name,
            files.len(),
            dir.display(),
            out.mean_deviation()
        );
    }
    Ok(())
}

fn run_gradcheck() -> Result<()> {
    let checks = gradcheck::run_all()?;
    let failed = checks.iter().filter(|c| !c.passed()).count();
    for c in &checks {
        println!("{}", c.line());
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", checks.len());
    }
    println!("all {} gradient checks passed", checks.len());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Extract(a) => run_extract(a),
        Command::BenchExtract(a) => run_bench(a),
        Command::Render(a) => run_render(a),
        Command::Gradcheck => run_gradcheck(),
    }
}
