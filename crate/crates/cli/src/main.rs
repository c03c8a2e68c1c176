//! `riseg`: generate scene suites, train the grouping model, run interaction
//! episodes, and re-score stored runs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use riseg_core::bfif::{load_model, save_model, train_grouping_model, SamplerConfig};
use riseg_core::episode::{run_suite, RunConfig, SuiteReport};
use riseg_core::eval::{evaluate, MetricsReport};
use riseg_core::io::{read_label_pgm, write_flow, write_label_pgm};
use riseg_core::scene::{generate_scene, GeneratorConfig, SceneState};
use riseg_core::seed::mix_seed;

#[derive(Parser)]
#[command(name = "riseg", version, about = "Interactive segmentation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a suite of cluttered scenes as JSON files.
    Generate(GenerateArgs),
    /// Train the same/different-body KDE model on simulated pushes.
    TrainKde(TrainArgs),
    /// Run interaction episodes over a suite and write masks + metrics.
    Run(RunArgs),
    /// Re-compute metrics from the masks stored in a run directory.
    Eval(EvalArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of scenes.
    #[arg(long)]
    count: usize,
    /// Object count range, e.g. `4..6` (inclusive) or a single number.
    #[arg(long, default_value = "4..6", value_parser = parse_range)]
    objects: (usize, usize),
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for scene_NNN.json files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Number of simulated training pushes.
    #[arg(long, default_value_t = 40)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flow noise (px) to train against.
    #[arg(long, default_value_t = 0.3)]
    noise_sigma: f64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Directory of scene_NNN.json files.
    #[arg(long)]
    suite: PathBuf,
    /// Trained KDE model file.
    #[arg(long)]
    model: PathBuf,
    /// RunConfig JSON; defaults apply when omitted. Unknown keys are errors.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    /// Override the config's flow noise (px).
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Override the config's push budget.
    #[arg(long)]
    max_pushes: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory produced by `riseg run`.
    #[arg(long)]
    run: PathBuf,
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| e.to_string());
    if let Some((a, b)) = s.split_once("..") {
        let (lo, hi) = (parse(a)?, parse(b)?);
        if lo > hi {
            return Err(format!("empty range {s}"));
        }
        Ok((lo, hi))
    } else {
        let n = parse(s)?;
        Ok((n, n))
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::TrainKde(a) => train(a),
        Command::Run(a) => run(a),
        Command::Eval(a) => eval(a),
    }
}

fn generate(args: GenerateArgs) -> Result<()> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let gen_cfg = GeneratorConfig::default();
    let mut written = 0usize;
    let mut attempt = 0u64;
    while written < args.count {
        let scene_seed = mix_seed(&[args.seed, attempt]);
        attempt += 1;
        let span = args.objects.1 - args.objects.0 + 1;
        let n = args.objects.0 + (scene_seed % span as u64) as usize;
        let Ok(scene) = generate_scene(scene_seed, n, &gen_cfg) else {
            continue;
        };
        let path = args.out.join(format!("scene_{written:03}.json"));
        fs::write(&path, scene.to_json())
            .with_context(|| format!("writing {}", path.display()))?;
        written += 1;
    }
    println!("wrote {} scenes to {}", written, args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let model = train_grouping_model(
        args.episodes,
        args.noise_sigma,
        &SamplerConfig::default(),
        args.seed,
    )
    .context("training grouping model")?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    save_model(&args.out, &model).context("saving model")?;
    println!(
        "trained on {} same / {} different pairs, prior {:.3} -> {}",
        model.samples_same.len(),
        model.samples_diff.len(),
        model.prior_same,
        args.out.display()
    );
    Ok(())
}

fn load_suite(dir: &Path) -> Result<Vec<(u64, SceneState)>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no scene .json files in {}", dir.display());
    }
    files
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let text = fs::read_to_string(p)?;
            let scene = SceneState::from_json(&text)
                .with_context(|| format!("parsing {}", p.display()))?;
            Ok((i as u64, scene))
        })
        .collect()
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg: RunConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(sigma) = args.noise_sigma {
        cfg.noise_sigma = sigma;
    }
    if let Some(n) = args.max_pushes {
        cfg.max_pushes = n;
    }

    let model = load_model(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let scenes = load_suite(&args.suite)?;

    fs::create_dir_all(&args.out)?;
    let report = run_suite(&scenes, &model, &cfg);
    write_run_dir(&args.out, &report, &cfg)?;
    for agg in &report.aggregates {
        println!(
            "push {}: static oa {:.3} f {:.3} | riseg oa {:.3} f {:.3} ({} episodes)",
            agg.push_index,
            agg.static_mean.object_accuracy,
            agg.static_mean.overlap_f,
            agg.riseg_mean.object_accuracy,
            agg.riseg_mean.overlap_f,
            agg.n_episodes
        );
    }
    Ok(())
}

fn write_run_dir(out: &Path, report: &SuiteReport, cfg: &RunConfig) -> Result<()> {
    for ep in &report.episodes {
        let dir = out.join(format!("scene_{:03}", ep.scene_id));
        fs::create_dir_all(&dir)?;
        for step in &ep.steps {
            let k = step.push_index;
            write_label_pgm(&dir.join(format!("mask_static_{k}.pgm")), &step.static_mask)?;
            write_label_pgm(&dir.join(format!("mask_riseg_{k}.pgm")), &step.riseg_mask)?;
            write_label_pgm(&dir.join(format!("mask_gt_{k}.pgm")), &step.gt_mask)?;
            if let Some(flow) = &step.flow {
                write_flow(&dir.join(format!("flow_{k}.risflow")), flow)?;
            }
            if let Some(action) = &step.action {
                fs::write(
                    dir.join(format!("action_{k}.json")),
                    serde_json::to_string_pretty(action)?,
                )?;
            }
        }
        if let Some(reason) = &ep.failure {
            fs::write(dir.join("failure.txt"), reason)?;
        }
    }

    fs::write(out.join("metrics.csv"), riseg_core::episode::suite_csv(report))?;
    let summary = serde_json::json!({
        "n_scenes": report.episodes.len(),
        "n_failures": report.episodes.iter().filter(|e| e.failure.is_some()).count(),
        "aggregates": report.aggregates,
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(
        out.join("config_resolved.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;
    Ok(())
}

/// Re-score every stored (mask, ground truth) pair; prints CSV identical in
/// layout to the run's metrics.csv.
fn eval(args: EvalArgs) -> Result<()> {
    let cfg_text = fs::read_to_string(args.run.join("config_resolved.json"))
        .context("run directory has no config_resolved.json")?;
    let cfg: RunConfig = serde_json::from_str(&cfg_text)?;

    let mut dirs: Vec<PathBuf> = fs::read_dir(&args.run)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();

    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for dir in &dirs {
        let name = dir.file_name().unwrap().to_string_lossy();
        let Some(id) = name.strip_prefix("scene_").and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        for k in 0.. {
            let gt_path = dir.join(format!("mask_gt_{k}.pgm"));
            if !gt_path.exists() {
                break;
            }
            let gt = read_label_pgm(&gt_path)?;
            for method in ["static", "riseg"] {
                let mask = read_label_pgm(&dir.join(format!("mask_{method}_{k}.pgm")))?;
                let m = evaluate(&mask, &gt, cfg.tol_px)
                    .with_context(|| format!("scoring {} step {k}", dir.display()))?;
                out.push_str(&m.csv_row(id, k, method));
                out.push('\n');
            }
        }
    }
    print!("{out}");
    Ok(())
}
