//! Command-line surface for the forecasting / distillation / pruning
//! pipeline. Every command reads one declarative TOML config, resolves it
//! against named presets and flag overrides, and works inside a run
//! directory named by the config hash and seed.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use stgkd_core::datahub::{
    build_adjacency, generate_synthetic, load_speed_csv, window, NormStats, WeightedAdjacency,
    WindowedDataset,
};
use stgkd_core::losses::LossWeights;
use stgkd_core::model::{
    build_model, scaled_laplacian, Checkpoint, ScaledLaplacian, StGcn,
};
use stgkd_core::presets::{
    distill_preset, prune_preset, teacher_reference, Dataset, ModelRole, REPRO_TOLERANCE,
};
use stgkd_core::pruner::{run_algorithm1, PruneSchedule};
use stgkd_core::runconfig::{RunConfig, SourceKind};
use stgkd_core::train::{
    benchmark, curve_csv, evaluate, export_hidden_projection, train_student_kd, train_teacher,
    LossKind,
};
use stgkd_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stgkd",
    about = "Traffic forecasting with ST-GCNs, knowledge distillation and joint KD-pruning",
    version
)]
struct Cli {
    /// Path to the run configuration (TOML). Omit to use a built-in
    /// synthetic desk-scale config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the parent output directory (default `runs`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Dataset preset supplying published hyperparameters (pemsd7 | pemsd8).
    #[arg(long, global = true)]
    preset: Option<String>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build dataset artifacts: windowed splits, adjacency, manifest.
    Prepare,
    /// Train the teacher network on the prepared data.
    TrainTeacher,
    /// Train a student under the frozen teacher with a distillation loss.
    Distill {
        /// Objective: rd-l2 | rd-kl | ord | tcd | scd | stcd.
        #[arg(long)]
        loss: Option<String>,
    },
    /// Run the joint KD-pruning loop on the base model.
    Prune {
        /// Final fraction of hidden weights to remove.
        #[arg(long)]
        target: Option<f64>,
    },
    /// Multi-horizon accuracy of a checkpoint on the test split.
    Eval {
        /// Checkpoint name in the run directory (teacher, student-stcd,
        /// pruned, ...) or a role name for an untrained model.
        #[arg(long, default_value = "teacher")]
        model: String,
    },
    /// Latency and FLOP profile of a checkpoint.
    Bench {
        #[arg(long, default_value = "teacher")]
        model: String,
    },
    /// Joint 2-D hidden-feature projection of all trained checkpoints.
    ExportScatter,
    /// Full-reproduction mode: train with the published presets on real
    /// CSV data and compare metrics against the published values.
    Repro,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::MissingArtifact(_) => 3,
                Error::Diverged(_) => 4,
                _ => 1,
            })
        }
    }
}

const DEFAULT_SYNTHETIC_CONFIG: &str = r#"
[dataset]
source = "synthetic"

[dataset.synthetic]
n_nodes = 10
n_timesteps = 600

[models]
temporal_kernel = 2
spatial_order = 2

[models.teacher]
block1 = [1, 8, 16]
block2 = [16, 8, 32]

[models.base]
block1 = [1, 4, 8]
block2 = [8, 4, 16]

[models.student]
block1 = [1, 2, 4]
block2 = [4, 2, 8]

[train]
epochs = 10
"#;

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_toml_path(path)?,
        None => RunConfig::from_toml_str(DEFAULT_SYNTHETIC_CONFIG)?,
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    if let Some(name) = &cli.preset {
        cfg.dataset.preset = Some(Dataset::from_str(name)?);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let run_dir = cfg
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(cfg.run_dir_name());
    std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    write_text(&run_dir.join("resolved.toml"), &cfg.resolved_toml())?;

    match cli.cmd {
        Cmd::Prepare => cmd_prepare(&cfg, &run_dir),
        Cmd::TrainTeacher => cmd_train_teacher(&cfg, &run_dir),
        Cmd::Distill { loss } => cmd_distill(&cfg, &run_dir, loss.as_deref()),
        Cmd::Prune { target } => cmd_prune(&cfg, &run_dir, target),
        Cmd::Eval { model } => cmd_eval(&cfg, &run_dir, &model),
        Cmd::Bench { model } => cmd_bench(&cfg, &run_dir, &model),
        Cmd::ExportScatter => cmd_export_scatter(&cfg, &run_dir),
        Cmd::Repro => cmd_repro(&cfg, &run_dir),
    }
}

/// Everything downstream commands need about the data, in one artifact.
#[derive(Serialize, Deserialize)]
struct PreparedData {
    source: String,
    n_nodes: usize,
    adjacency: WeightedAdjacency,
    train: WindowedDataset,
    val: WindowedDataset,
    test: WindowedDataset,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: String,
    seed: u64,
    source: &'a str,
    n_nodes: usize,
    train_samples: usize,
    val_samples: usize,
    test_samples: usize,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(std::io::BufWriter::new(file), value)?;
    Ok(())
}

fn cmd_prepare(cfg: &RunConfig, run_dir: &Path) -> Result<()> {
    let (speeds, adjacency, source) = match cfg.dataset.source {
        SourceKind::Synthetic => {
            let (speeds, adjacency) = generate_synthetic(&cfg.synthetic_spec())?;
            (speeds, adjacency, "synthetic".to_string())
        }
        SourceKind::Csv => {
            let speeds_path = cfg.dataset.speeds.as_ref().unwrap();
            let dist_path = cfg.dataset.distances.as_ref().unwrap();
            let mut speeds = load_speed_csv(speeds_path, ',', false, 5)?;
            speeds.clean()?;
            let distances = load_speed_csv(dist_path, ',', false, 5)?.values;
            let adjacency = build_adjacency(&distances, None, cfg.dataset.adjacency_epsilon)?;
            if let Some(preset) = cfg.dataset.preset {
                if speeds.n_stations() != preset.n_nodes() {
                    eprintln!(
                        "warning: {} stations in csv, preset {} expects {}",
                        speeds.n_stations(),
                        preset.name(),
                        preset.n_nodes()
                    );
                }
            }
            (speeds, adjacency, format!("csv:{}", speeds_path.display()))
        }
    };
    let (train, val, test) = window(&speeds, cfg.dataset.input_window, cfg.dataset.horizon, cfg.dataset.split)?;
    let data = PreparedData {
        source: source.clone(),
        n_nodes: adjacency.n_nodes(),
        adjacency,
        train,
        val,
        test,
    };
    write_json(&run_dir.join("dataset.json"), &data)?;
    write_json(
        &run_dir.join("manifest.json"),
        &Manifest {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            source: &source,
            n_nodes: data.n_nodes,
            train_samples: data.train.n_samples(),
            val_samples: data.val.n_samples(),
            test_samples: data.test.n_samples(),
        },
    )?;
    println!(
        "prepared {} nodes: {} train / {} val / {} test samples -> {}",
        data.n_nodes,
        data.train.n_samples(),
        data.val.n_samples(),
        data.test.n_samples(),
        run_dir.display()
    );
    Ok(())
}

fn load_prepared(run_dir: &Path) -> Result<(PreparedData, ScaledLaplacian)> {
    let path = run_dir.join("dataset.json");
    if !path.exists() {
        return Err(Error::MissingArtifact(format!(
            "{} (run `stgkd prepare` first)",
            path.display()
        )));
    }
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let data: PreparedData = serde_json::from_reader(std::io::BufReader::new(file))?;
    let lap = scaled_laplacian(&data.adjacency)?;
    Ok((data, lap))
}

/// Model configs in the run always use the prepared node count.
fn role_model(cfg: &RunConfig, role: ModelRole, n_nodes: usize, seed: u64) -> Result<StGcn> {
    let mut mc = cfg.model_config(role)?;
    mc.n_nodes = n_nodes;
    build_model(&mc, seed)
}

fn cmd_train_teacher(cfg: &RunConfig, run_dir: &Path) -> Result<()> {
    let (data, lap) = load_prepared(run_dir)?;
    let model = role_model(cfg, ModelRole::Teacher, data.n_nodes, cfg.seed)?;
    let tc = cfg.train_config(None)?;
    let outcome = train_teacher(model, &lap, &data.train, &data.val, &tc)?;
    Checkpoint::capture(&outcome.model, &data.train.stats, None)
        .save(&run_dir.join("teacher.json"))?;
    write_text(&run_dir.join("teacher_curve.csv"), &curve_csv(&outcome.curve))?;
    println!(
        "teacher trained: best val loss {:.6} at epoch {}",
        outcome.best_val_loss, outcome.best_epoch
    );
    Ok(())
}

fn resolve_weights(base: LossWeights, cfg: &RunConfig, from_prune: bool) -> LossWeights {
    let mut w = base;
    let (a1, a2, a3, beta) = if from_prune {
        (cfg.prune.alpha1, cfg.prune.alpha2, cfg.prune.alpha3, None)
    } else {
        (
            cfg.distill.alpha1,
            cfg.distill.alpha2,
            cfg.distill.alpha3,
            cfg.distill.beta,
        )
    };
    if let Some(v) = beta {
        w.beta = v;
    }
    if let Some(v) = a1 {
        w.alpha1 = v;
    }
    if let Some(v) = a2 {
        w.alpha2 = v;
    }
    if let Some(v) = a3 {
        w.alpha3 = v;
    }
    w
}

fn cmd_distill(cfg: &RunConfig, run_dir: &Path, loss: Option<&str>) -> Result<()> {
    let (data, lap) = load_prepared(run_dir)?;
    let kind = match loss {
        Some(s) => LossKind::from_str(s)?,
        None => cfg.distill.loss,
    };
    let dataset = cfg.dataset.preset.unwrap_or(Dataset::Pemsd7);
    let preset = distill_preset(dataset, kind);
    let weights = resolve_weights(preset.weights, cfg, false);
    weights.validate()?;
    let tc = cfg.train_config(Some((preset.batch_size, preset.lr)))?;

    let teacher = Checkpoint::load(&run_dir.join("teacher.json"))?.restore()?;
    let student = role_model(cfg, ModelRole::Student, data.n_nodes, cfg.seed.wrapping_add(1))?;
    let outcome =
        train_student_kd(student, &teacher, &lap, &data.train, &data.val, &tc, &weights, kind)?;

    let tag = format!("student-{}", loss_name(kind));
    Checkpoint::capture(&outcome.model, &data.train.stats, None)
        .save(&run_dir.join(format!("{tag}.json")))?;
    write_text(&run_dir.join(format!("{tag}_curve.csv")), &curve_csv(&outcome.curve))?;
    if let Some(last) = outcome.curve.last() {
        if let Some(r) = last.teacher_ratio() {
            println!("teacher_ratio (final epoch): {r:.4}");
        }
    }
    println!(
        "{tag} trained: best val loss {:.6} at epoch {}",
        outcome.best_val_loss, outcome.best_epoch
    );
    Ok(())
}

fn loss_name(kind: LossKind) -> &'static str {
    match kind {
        LossKind::RdL2 => "rd-l2",
        LossKind::RdKl => "rd-kl",
        LossKind::Ord => "ord",
        LossKind::Tcd => "tcd",
        LossKind::Scd => "scd",
        LossKind::Stcd => "stcd",
    }
}

fn cmd_prune(cfg: &RunConfig, run_dir: &Path, target: Option<f64>) -> Result<()> {
    let (data, lap) = load_prepared(run_dir)?;
    let target = target.unwrap_or(cfg.prune.target_sparsity);
    let dataset = cfg.dataset.preset.unwrap_or(Dataset::Pemsd7);

    // Published sparsity levels carry table hyperparameters; other targets
    // fall back to the config's prune section.
    let (weights, batch_lr) = match prune_preset(dataset, target) {
        Ok(p) => (p.weights, Some((p.batch_size, p.lr))),
        Err(_) => (
            LossWeights { beta: 0.0, alpha1: 0.5, alpha2: 0.5, alpha3: 0.5 },
            None,
        ),
    };
    let weights = resolve_weights(weights, cfg, true);
    weights.validate()?;
    let tc = cfg.train_config(batch_lr)?;
    let schedule = PruneSchedule {
        target_sparsity: target,
        ..cfg.prune_schedule()
    };
    schedule.validate()?;

    let teacher = Checkpoint::load(&run_dir.join("teacher.json"))?.restore()?;
    let base = role_model(cfg, ModelRole::Base, data.n_nodes, cfg.seed.wrapping_add(2))?;
    let outcome =
        run_algorithm1(base, &teacher, &lap, &data.train, &data.val, &tc, &schedule, &weights)?;

    Checkpoint::capture(&outcome.model, &data.train.stats, Some(&outcome.masks))
        .save(&run_dir.join("pruned.json"))?;
    write_text(&run_dir.join("prune_history.csv"), &outcome.history.csv())?;
    println!(
        "pruned to {:.1}% hidden sparsity over {} events; final val loss {:.6}",
        100.0 * outcome.masks.pruned() as f64 / outcome.masks.total() as f64,
        outcome.history.events.len(),
        outcome.final_val_loss
    );
    Ok(())
}

/// A checkpoint by artifact name, or a freshly initialised model when the
/// name is a bare role (for baseline/robustness runs).
fn resolve_model(
    cfg: &RunConfig,
    run_dir: &Path,
    name: &str,
    n_nodes: usize,
    stats: &NormStats,
) -> Result<(StGcn, NormStats)> {
    let path = run_dir.join(format!("{name}.json"));
    if path.exists() {
        let ckpt = Checkpoint::load(&path)?;
        let stats = ckpt.stats;
        return Ok((ckpt.restore()?, stats));
    }
    if let Ok(role) = ModelRole::from_str(name) {
        let model = role_model(cfg, role, n_nodes, cfg.seed)?;
        return Ok((model, *stats));
    }
    Err(Error::MissingArtifact(format!(
        "{} (train it first, or pass a role name for an untrained model)",
        path.display()
    )))
}

fn cmd_eval(cfg: &RunConfig, run_dir: &Path, name: &str) -> Result<()> {
    let (data, lap) = load_prepared(run_dir)?;
    let (model, _) = resolve_model(cfg, run_dir, name, data.n_nodes, &data.train.stats)?;
    let metrics = evaluate(&model, &lap, &data.test)?;
    write_text(&run_dir.join(format!("metrics-{name}.csv")), &metrics.csv())?;
    println!("model {name}");
    println!("{:>8} {:>10} {:>10} {:>10}", "minutes", "MAPE %", "MAE", "RMSE");
    for (_, minutes, m) in &metrics.horizons {
        let mape = m.mape.map(|v| format!("{v:10.3}")).unwrap_or_else(|| format!("{:>10}", "-"));
        println!("{minutes:>8} {mape} {:10.3} {:10.3}", m.mae, m.rmse);
    }
    Ok(())
}

fn cmd_bench(cfg: &RunConfig, run_dir: &Path, name: &str) -> Result<()> {
    let (data, lap) = load_prepared(run_dir)?;
    let (model, _) = resolve_model(cfg, run_dir, name, data.n_nodes, &data.train.stats)?;
    let report = benchmark(
        &model,
        &lap,
        cfg.bench.batch,
        cfg.bench.chunk,
        cfg.bench.runs,
        cfg.seed,
    )?;
    write_json(&run_dir.join(format!("bench-{name}.json")), &report)?;
    println!(
        "model {name}: {:.6} s mean over {} runs (batch {}), {:.3e} flops, {} params",
        report.mean_seconds, report.runs, report.batch, report.flops, report.param_count
    );
    Ok(())
}

fn cmd_export_scatter(cfg: &RunConfig, run_dir: &Path) -> Result<()> {
    let (data, lap) = load_prepared(run_dir)?;
    let mut models: Vec<(String, StGcn)> = Vec::new();
    let mut names = vec!["teacher".to_string(), "pruned".to_string()];
    for kind in ["rd-l2", "rd-kl", "ord", "tcd", "scd", "stcd"] {
        names.push(format!("student-{kind}"));
    }
    for name in names {
        let path = run_dir.join(format!("{name}.json"));
        if path.exists() {
            models.push((name, Checkpoint::load(&path)?.restore()?));
        }
    }
    if models.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no checkpoints in {} (train at least one model first)",
            run_dir.display()
        )));
    }
    let samples = cfg.scatter.samples.min(data.test.n_samples());
    if samples < cfg.scatter.samples {
        eprintln!(
            "warning: test split has only {samples} samples, fewer than the requested {}",
            cfg.scatter.samples
        );
    }
    let refs: Vec<(String, &StGcn)> = models.iter().map(|(n, m)| (n.clone(), m)).collect();
    let projection = export_hidden_projection(&refs, &lap, &data.test, samples)?;
    write_text(&run_dir.join("scatter.csv"), &projection.csv())?;
    println!(
        "scatter.csv: {} rows from {} models; explained variance {:.3} / {:.3}",
        projection.rows.len(),
        refs.len(),
        projection.explained_variance[0],
        projection.explained_variance[1]
    );
    Ok(())
}

fn cmd_repro(cfg: &RunConfig, run_dir: &Path) -> Result<()> {
    if cfg.dataset.source != SourceKind::Csv {
        return Err(Error::Config(
            "full-reproduction mode needs the real csv datasets; synthetic data cannot \
             reproduce the published metrics"
                .into(),
        ));
    }
    let dataset = cfg.dataset.preset.ok_or_else(|| {
        Error::Config("full-reproduction mode needs `dataset.preset` to select the reference".into())
    })?;
    let reference = teacher_reference(dataset).ok_or_else(|| {
        Error::Config(format!(
            "no published reference metrics for {}",
            dataset.name()
        ))
    })?;

    cmd_prepare(cfg, run_dir)?;
    cmd_train_teacher(cfg, run_dir)?;
    let (data, lap) = load_prepared(run_dir)?;
    let model = Checkpoint::load(&run_dir.join("teacher.json"))?.restore()?;
    let metrics = evaluate(&model, &lap, &data.test)?;
    let step = reference.horizon_minutes as usize / data.test.interval_minutes as usize;
    let m = metrics
        .at_step(step)
        .ok_or_else(|| Error::Validation("reference horizon not evaluated".into()))?;

    let within = |got: f64, want: f64| (got - want).abs() <= REPRO_TOLERANCE * want.abs();
    let mape = m.mape.unwrap_or(f64::INFINITY);
    let checks = [
        ("MAPE", mape, reference.mape),
        ("MAE", m.mae, reference.mae),
        ("RMSE", m.rmse, reference.rmse),
    ];
    let mut ok = true;
    for (name, got, want) in checks {
        let pass = within(got, want);
        ok &= pass;
        println!(
            "{name}: got {got:.3}, published {want:.3} -> {}",
            if pass { "within 10%" } else { "OUT OF TOLERANCE" }
        );
    }
    write_json(
        &run_dir.join("repro_report.json"),
        &serde_json::json!({
            "dataset": dataset.name(),
            "horizon_minutes": reference.horizon_minutes,
            "mape": mape, "mae": m.mae, "rmse": m.rmse,
            "reference": { "mape": reference.mape, "mae": reference.mae, "rmse": reference.rmse },
            "tolerance": REPRO_TOLERANCE,
            "pass": ok,
        }),
    )?;
    if ok {
        println!("reproduction within tolerance");
        Ok(())
    } else {
        Err(Error::Validation(
            "reproduction metrics outside the 10% tolerance".into(),
        ))
    }
}
