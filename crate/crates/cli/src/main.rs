use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use affcut::cascade::{partition, CascadeConfig};
use affcut::grid::GridShape;
use affcut::io::{
    read_gt_table, read_manifest, read_pyramid, read_segment_table, write_gt_table, write_partition, write_pyramid,
    GtTable, GT_FILE, PYRAMID_DIR, SEGMENTS_FILE,
};
use affcut::metrics::{average_precision, default_thresholds, runtime_profile, ImageEval};
use affcut::oracle::{exact_multicut, parse_edge_list, DEFAULT_CAP};
use affcut::synth::{generate_scene, NoiseSpec, SceneSpec};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

/// Greedy multicut partitioning of affinity pyramids.
#[derive(Parser)]
#[command(name = "affcut", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition one pyramid container into instances.
    Partition(PartitionArgs),
    /// Generate synthetic scenes with ground truth.
    Synth(SynthArgs),
    /// Score predicted segment tables against ground truth.
    Eval(EvalArgs),
    /// Time partitioning over a range of input sizes.
    Bench(BenchArgs),
    /// Solve a small multicut problem exactly.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct PartitionArgs {
    /// Pyramid container directory.
    pyramid: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Resolve level 1 by greedy association instead of GAEC.
    #[arg(long)]
    gas: bool,
    /// Skip position-aware segment merging.
    #[arg(long)]
    no_pa_gaec: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Drop instances with fewer level-1 pixels.
    #[arg(long, default_value_t = 16)]
    min_pixels: u64,
    /// Output directory for segments.json and labels.pgm.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec as JSON; missing fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Number of scenes; scene i uses seed `spec.seed + i`.
    #[arg(long, default_value_t = 1)]
    count: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// A partition output directory, or a directory of them.
    #[arg(long)]
    pred: PathBuf,
    /// A synth scene directory, or a directory of them.
    #[arg(long)]
    gt: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated input sizes, `HxW` or `N` for square.
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024,1024x2048")]
    sizes: Vec<String>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    gas: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct OracleArgs {
    /// File of `u v cost` lines.
    edgelist: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: usize,
}

fn parse_size(s: &str) -> Result<GridShape> {
    let s = s.trim();
    let (h, w) = match s.split_once(['x', 'X']) {
        Some((h, w)) => (h, w),
        None => (s, s),
    };
    let parse = |v: &str| v.parse::<usize>().with_context(|| format!("bad size {s:?}"));
    Ok(GridShape::new(parse(h)?, parse(w)?)?)
}

fn run_partition(args: &PartitionArgs) -> Result<()> {
    let pyramid = read_pyramid(&args.pyramid)?;
    let manifest = read_manifest(&args.pyramid)?;
    let cfg = CascadeConfig {
        threshold: args.threshold,
        beta: args.beta,
        gas: args.gas,
        pa_gaec: !args.no_pa_gaec,
        seed: args.seed,
        min_pixels: args.min_pixels,
        ..CascadeConfig::default()
    };
    let result = partition(&pyramid, &cfg)?;
    let input_shape = manifest.input_shape.unwrap_or_else(|| result.default_input_shape());
    write_partition(&args.output, &result, input_shape)?;
    eprintln!("{} instances -> {}", result.segments.len(), args.output.display());
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    let spec: SceneSpec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SceneSpec::default(),
    };
    spec.validate()?;
    (0..args.count).into_par_iter().try_for_each(|i| -> Result<()> {
        let spec = SceneSpec {
            seed: spec.seed + i,
            ..spec.clone()
        };
        let scene = generate_scene(&spec)?;
        let dir = if args.count == 1 {
            args.output.clone()
        } else {
            args.output.join(format!("scene_{i:04}"))
        };
        write_pyramid(&scene.pyramid, &dir.join(PYRAMID_DIR), Some(scene.input_shape()))?;
        let table = GtTable::new(scene.input_shape(), spec.classes, &scene.gt_instances());
        write_gt_table(&dir.join(GT_FILE), &table)?;
        Ok(())
    })?;
    eprintln!("{} scene(s) -> {}", args.count, args.output.display());
    Ok(())
}

/// `dir` itself if it holds `file`, otherwise its subdirectories that do,
/// keyed by subdirectory name.
fn collect(dir: &Path, file: &str) -> Result<Vec<(String, PathBuf)>> {
    if dir.join(file).is_file() {
        return Ok(vec![(String::new(), dir.join(file))]);
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path().join(file);
        if path.is_file() {
            let name = path
                .parent()
                .and_then(Path::file_name)
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            found.push((name, path));
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no {file} found in {}", dir.display());
    }
    Ok(found)
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let preds = collect(&args.pred, SEGMENTS_FILE)?;
    let gts = collect(&args.gt, GT_FILE)?;
    let pred_names: Vec<&String> = preds.iter().map(|p| &p.0).collect();
    let gt_names: Vec<&String> = gts.iter().map(|g| &g.0).collect();
    if pred_names != gt_names {
        bail!("prediction and ground-truth image sets differ: {pred_names:?} vs {gt_names:?}");
    }
    let loaded = preds
        .par_iter()
        .zip(&gts)
        .map(|((_, p), (_, g))| -> Result<_> {
            let pred = read_segment_table(p)?.instances()?;
            let gt = read_gt_table(g)?.instances()?;
            Ok((pred, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let evals: Vec<ImageEval<'_>> = loaded
        .iter()
        .map(|(p, g)| ImageEval {
            predictions: p,
            ground_truth: g,
        })
        .collect();
    let report = average_precision(&evals, &default_thresholds())?;
    let text = serde_json::to_string_pretty(&report)?;
    fs::write(&args.output, text + "\n").with_context(|| format!("writing {}", args.output.display()))?;
    match (report.mean_ap, report.ap50) {
        (Some(ap), Some(ap50)) => println!("AP {:.2}  AP50 {:.2}  images {}", 100.0 * ap, 100.0 * ap50, evals.len()),
        _ => println!("no ground-truth instances in {} images", evals.len()),
    }
    Ok(())
}

fn run_bench(args: &BenchArgs) -> Result<()> {
    let sizes = args.sizes.iter().map(|s| parse_size(s)).collect::<Result<Vec<_>>>()?;
    let cfg = CascadeConfig {
        gas: args.gas,
        ..CascadeConfig::default()
    };
    let profile = runtime_profile::<_, anyhow::Error>(
        &sizes,
        args.repeats,
        |shape| {
            Ok(generate_scene(&SceneSpec {
                height: shape.height,
                width: shape.width,
                // Tiny sizes may hold no instance at all.
                min_instances: 0,
                noise: NoiseSpec::moderate(),
                seed: args.seed,
                ..SceneSpec::default()
            })?)
        },
        |scene| {
            partition(&scene.pyramid, &cfg)?.instances(scene.input_shape())?;
            Ok(())
        },
    )?;
    fs::write(&args.output, profile.to_csv()).with_context(|| format!("writing {}", args.output.display()))?;
    print!("{}", profile.to_csv());
    println!("slope {:.3}  R² {:.4}", profile.fit.slope, profile.fit.r_squared);
    Ok(())
}

fn run_oracle(args: &OracleArgs) -> Result<()> {
    let text = fs::read_to_string(&args.edgelist).with_context(|| format!("reading {}", args.edgelist.display()))?;
    let (n, edges) = parse_edge_list(&text)?;
    let solution = exact_multicut(n, &edges, args.cap)?;
    let out = serde_json::json!({
        "vertices": n,
        "cost": solution.cost,
        "partition": solution.partition,
    });
    println!("{out}");
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(value) = std::env::var("AFFCUT_THREADS") {
        let n: usize = value.parse().with_context(|| format!("AFFCUT_THREADS={value:?} is not a count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Partition(a) => run_partition(a),
        Command::Synth(a) => run_synth(a),
        Command::Eval(a) => run_eval(a),
        Command::Bench(a) => run_bench(a),
        Command::Oracle(a) => run_oracle(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("affcut: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
