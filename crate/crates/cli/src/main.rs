//! `jigsaw`: train, score, evaluate and attack puzzle-solving anomaly
//! detectors from TOML run configs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use jigsaw_core::checkpoint::Checkpoint;
use jigsaw_core::config::{Overrides, RunConfig};
use jigsaw_core::evaluation::{
    attack_sweep, data_efficiency_sweep, roc_curve, roc_svg, write_roc_csv, AttackVariant, EvalReport, LabeledScores,
    Protocol,
};
use jigsaw_core::experiment::{prepare, Prepared};
use jigsaw_core::manifest::{RunManifest, MANIFEST_FILE};
use jigsaw_core::puzzle::{enumerate_permutations, Grid, MaskMode, PermMode};
use jigsaw_core::scoring::{Aggregation, ScoreTable, DEFAULT_SCORING_BATCH};
use jigsaw_core::training::{fit_with, Monitor, METRICS_HEADER};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Relative `--out` directories are placed under this directory when set.
const OUTPUT_ROOT_ENV: &str = "JIGSAW_OUTPUT_ROOT";

const CHECKPOINT_FILE: &str = "model.safetensors";
const METRICS_FILE: &str = "metrics.csv";
const CONFIG_FILE: &str = "config.toml";

#[derive(Parser)]
#[command(name = "jigsaw", version, about = "Puzzle-solving anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, per-epoch metrics and a manifest.
    Train(TrainArgs),
    /// Score the test split with a checkpoint and write reports for every aggregation.
    Eval(EvalArgs),
    /// AUROC with attacked normal test images, one row per epsilon.
    AttackEval(AttackArgs),
    /// Print a permutation set, one mapping per line.
    Perms(PermsArgs),
    /// Retrain on nested training subsamples and evaluate each.
    Sweep(SweepArgs),
}

#[derive(Args, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; relative paths go under $JIGSAW_OUTPUT_ROOT when set.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    aggregation: Option<Aggregation>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    mask: Option<MaskMode>,
    #[arg(long)]
    perm_mode: Option<PermMode>,
    #[arg(long)]
    protocol: Option<Protocol>,
    /// Share of the normal training images to train on.
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Normal class, by folder name or index.
    #[arg(long)]
    normal_class: Option<String>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            lambda_adv: self.lambda_adv,
            epsilon: self.epsilon,
            alpha: self.alpha,
            steps: self.steps,
            mask: self.mask,
            perm_mode: self.perm_mode,
            aggregation: self.aggregation,
            protocol: self.protocol,
            fraction: self.fraction,
            epochs: self.epochs,
            normal_class: self.normal_class.clone(),
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Rerun the configuration recorded in a manifest instead of --config.
    #[arg(long, conflicts_with = "config")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Target TPRs for the FPR columns, comma separated.
    #[arg(long, value_delimiter = ',')]
    tpr: Option<Vec<f64>>,
}

#[derive(Args)]
struct AttackArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    variant: Option<AttackVariant>,
    /// Comma separated; 0 gives the clean row.
    #[arg(long, value_delimiter = ',')]
    epsilons: Option<Vec<f64>>,
}

#[derive(Args)]
struct PermsArgs {
    #[arg(long, default_value = "2x2")]
    grid: Grid,
    #[arg(long, default_value = "at_least_two")]
    mode: PermMode,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.25,0.0833333333333")]
    fractions: Vec<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::AttackEval(a) => attack_eval(a),
        Command::Perms(a) => perms(a),
        Command::Sweep(a) => sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn output_dir(out: &Option<PathBuf>, command: &str) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command));
    let dir = match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_config(common: &Common, fallback: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = match (&common.config, fallback) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(manifest)) => RunManifest::load(manifest)?.config,
        (None, None) => bail!("--config is required"),
    };
    cfg.apply(&common.overrides())?;
    Ok(cfg)
}

/// The manifest written next to a checkpoint, if any.
fn sibling_manifest(checkpoint: &Path) -> Option<PathBuf> {
    let path = checkpoint.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE);
    path.exists().then_some(path)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.common, args.manifest.as_deref())?;
    let out = output_dir(&args.common.out, "train")?;
    let Prepared { normal_class, split, monitor, class_names } = prepare(&cfg)?;
    log::info!(
        "normal class {} ({}): {} train, {} val, {} test",
        normal_class,
        class_names[normal_class],
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml_string())?;
    let train_cfg = cfg.effective_train();
    let metrics_path = out.join(METRICS_FILE);
    let mut metrics = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics, "{METRICS_HEADER}")?;
    let monitor = monitor.as_ref().map(|(images, anomalous)| Monitor { images, anomalous });
    let fitted = fit_with(&train_cfg, &split.train.images, &split.val.images, monitor, |_, record| {
        writeln!(metrics, "{}", record.csv_row())?;
        metrics.flush()?;
        Ok(())
    })
    .with_context(|| format!("training stopped; completed epochs are in {}", metrics_path.display()))?;
    drop(metrics);
    if let Some(s) = &fitted.stability {
        write_json(&out.join("stability.json"), s)?;
        log::info!("monitor AUROC(max) over the last {} epochs: {:.4} ± {:.4}", s.epochs, s.mean.max, s.std.max);
    }
    let scoring = fitted.scoring.clone();
    let mut ckpt = Checkpoint::from_fit(fitted, &train_cfg)?;
    ckpt.meta.data = Some(cfg.data.clone());
    ckpt.meta.normal_class = Some(normal_class);
    let ckpt_path = out.join(CHECKPOINT_FILE);
    ckpt.save(&ckpt_path)?;

    let mut manifest = RunManifest::new("train", &cfg, &scoring);
    manifest.checkpoint = Some(ckpt_path.clone());
    manifest.outputs.insert("metrics".into(), metrics_path);
    manifest.outputs.insert("config".into(), out.join(CONFIG_FILE));
    manifest.save(&out.join(MANIFEST_FILE))?;
    println!("{}", ckpt_path.display());
    Ok(())
}

/// Loads a checkpoint and the configuration that describes its data.
fn open_checkpoint(common: &Common, path: &Path) -> Result<(Checkpoint, RunConfig)> {
    let ckpt = Checkpoint::load(path)?;
    let manifest = sibling_manifest(path);
    let cfg = load_config(common, manifest.as_deref()).context("no --config given and no manifest next to the checkpoint")?;
    if let Some(m) = &manifest {
        RunManifest::load(m)?.verify_permutations(&ckpt.meta.scoring)?;
    }
    if cfg.train.puzzle.canvas != (ckpt.meta.unet.image_size, ckpt.meta.unet.image_size) {
        bail!("config canvas {:?} does not match the checkpoint image size {}", cfg.train.puzzle.canvas, ckpt.meta.unet.image_size);
    }
    Ok((ckpt, cfg))
}

fn write_scores_csv(path: &Path, split_ids: &[String], anomalous: &[bool], table: &ScoreTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let k = table.rows.first().map_or(0, |r| r.normalized.len());
    write!(w, "sample_id,label,s_min,s_max,s_avg")?;
    for i in 0..k {
        write!(w, ",perm{i}")?;
    }
    writeln!(w)?;
    for ((id, a), row) in split_ids.iter().zip(anomalous).zip(&table.rows) {
        write!(w, "{id},{},{},{},{}", u8::from(*a), row.min, row.max, row.avg)?;
        for v in &row.normalized {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let (ckpt, cfg) = open_checkpoint(&args.common, &args.checkpoint)?;
    let out = output_dir(&args.common.out, "eval")?;
    let prepared = prepare(&cfg)?;
    let split = &prepared.split;
    let table = ckpt.score(&split.test.images)?;
    let tpr = args.tpr.unwrap_or_else(|| cfg.eval.tpr_points.clone());
    let reports = EvalReport::all_aggregations(&table, &split.test_anomalous, &tpr)?;

    let mut manifest = RunManifest::new("eval", &cfg, &ckpt.meta.scoring);
    manifest.checkpoint = Some(args.checkpoint.clone());
    let scores_path = out.join("scores.csv");
    write_scores_csv(&scores_path, &split.test.ids, &split.test_anomalous, &table)?;
    manifest.outputs.insert("scores".into(), scores_path);
    for report in &reports {
        let agg = report.aggregation;
        let ls = LabeledScores::new(table.aggregates(agg), split.test_anomalous.clone())?;
        let roc = roc_curve(&ls)?;
        let csv = out.join(format!("roc_{agg}.csv"));
        write_roc_csv(BufWriter::new(File::create(&csv)?), &roc)?;
        let svg = out.join(format!("roc_{agg}.svg"));
        std::fs::write(&svg, roc_svg(&roc, &format!("{agg} aggregation, AUROC {:.4}", report.auroc)))?;
        let json = out.join(format!("report_{agg}.json"));
        write_json(&json, report)?;
        manifest.outputs.insert(format!("roc_{agg}"), csv);
        manifest.outputs.insert(format!("roc_svg_{agg}"), svg);
        manifest.outputs.insert(format!("report_{agg}"), json);
    }
    manifest.save(&out.join(MANIFEST_FILE))?;
    let chosen = cfg.aggregation();
    for r in &reports {
        let marker = if r.aggregation == chosen { "*" } else { " " };
        let fprs: Vec<String> = r.fpr_at_tpr.iter().map(|(t, f)| format!("fpr@{t} {f:.4}")).collect();
        println!("{marker} {:<3} auroc {:.4} {}", r.aggregation, r.auroc, fprs.join(" "));
    }
    Ok(())
}

fn attack_eval(args: AttackArgs) -> Result<()> {
    let (ckpt, cfg) = open_checkpoint(&args.common, &args.checkpoint)?;
    let out = output_dir(&args.common.out, "attack")?;
    let prepared = prepare(&cfg)?;
    let split = &prepared.split;
    let variant = args.variant.unwrap_or(cfg.eval.attack_variant);
    let epsilons = args.epsilons.unwrap_or_else(|| cfg.eval.attack_epsilons.clone());
    let aggregation = cfg.aggregation();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rows = attack_sweep(
        &ckpt.unet,
        &split.test.images,
        &split.test_anomalous,
        variant,
        &epsilons,
        &cfg.effective_train().attack,
        &ckpt.meta.scoring.perms,
        &ckpt.meta.normalizers,
        aggregation,
        &cfg.eval.tpr_points,
        DEFAULT_SCORING_BATCH,
        &mut rng,
    )?;
    let csv_path = out.join("attack.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "variant,epsilon,aggregation,auroc")?;
    for r in &rows {
        writeln!(w, "{},{},{},{}", r.variant, r.epsilon, r.report.aggregation, r.report.auroc)?;
        println!("{} eps {:<5} auroc {:.4}", r.variant, r.epsilon, r.report.auroc);
    }
    w.flush()?;
    let json_path = out.join("attack.json");
    write_json(&json_path, &rows)?;
    let mut manifest = RunManifest::new("attack-eval", &cfg, &ckpt.meta.scoring);
    manifest.checkpoint = Some(args.checkpoint.clone());
    manifest.outputs.insert("attack_csv".into(), csv_path);
    manifest.outputs.insert("attack_json".into(), json_path);
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(())
}

fn perms(args: PermsArgs) -> Result<()> {
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    for p in enumerate_permutations(args.grid, args.mode)? {
        let cells: Vec<String> = p.mapping().iter().map(usize::to_string).collect();
        writeln!(w, "{}", cells.join(" "))?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.common, None)?;
    let out = output_dir(&args.common.out, "sweep")?;
    let prepared = prepare(&cfg)?;
    let train_cfg = cfg.effective_train();
    let points = data_efficiency_sweep(&train_cfg, &prepared.split, &args.fractions, cfg.aggregation())?;
    let csv_path = out.join("sweep.csv");
    let mut w = BufWriter::new(File::create(&csv_path)?);
    writeln!(w, "fraction,n_train,aggregation,auroc")?;
    for p in &points {
        writeln!(w, "{},{},{},{}", p.fraction, p.n_train, p.report.aggregation, p.report.auroc)?;
        println!("fraction {:<8} n {:<6} auroc {:.4}", p.fraction, p.n_train, p.report.auroc);
    }
    w.flush()?;
    let json_path = out.join("sweep.json");
    write_json(&json_path, &points)?;
    let scoring = cfg.train.puzzle.scoring_set(cfg.seed)?;
    let mut manifest = RunManifest::new("sweep", &cfg, &scoring);
    manifest.outputs.insert("sweep_csv".into(), csv_path);
    manifest.outputs.insert("sweep_json".into(), json_path);
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_output_goes_under_the_root() {
        let dir = tempfile::tempdir().unwrap();
        std::env::set_var(OUTPUT_ROOT_ENV, dir.path());
        let got = output_dir(&Some(PathBuf::from("a/b")), "train").unwrap();
        assert_eq!(got, dir.path().join("a/b"));
        let abs = dir.path().join("abs");
        assert_eq!(output_dir(&Some(abs.clone()), "train").unwrap(), abs);
        std::env::remove_var(OUTPUT_ROOT_ENV);
    }

    #[test]
    fn cli_parses_every_flag() {
        let cli = Cli::try_parse_from([
            "jigsaw", "train", "--config", "c.toml", "--seed", "3", "--out", "o", "--aggregation", "min",
            "--lambda-adv", "0", "--epsilon", "0", "--alpha", "0.1", "--steps", "2", "--mask", "none",
            "--perm-mode", "exactly_two", "--protocol", "1", "--fraction", "0.5",
        ])
        .unwrap();
        let Command::Train(t) = cli.command else { panic!("expected train") };
        let o = t.common.overrides();
        assert_eq!(o.seed, Some(3));
        assert_eq!(o.mask, Some(MaskMode::None));
        assert_eq!(o.perm_mode, Some(PermMode::ExactlyTwo));
        assert_eq!(o.protocol, Some(Protocol::One));
        assert_eq!(o.aggregation, Some(Aggregation::Min));
        assert!(Cli::try_parse_from(["jigsaw", "train", "--mask", "blur"]).is_err());
    }
}
