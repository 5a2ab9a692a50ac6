use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hypsep::analyze::{self, ConditionKind};
use hypsep::config::ExperimentConfig;
use hypsep::nn::checkpoint::Checkpoint;
use hypsep::nn::Model;
use hypsep::scene::{self, DensityPreset, Manifest, Split};
use hypsep::train::{self, ModelMasker};
use hypsep::Error;

#[derive(Parser, Debug)]
#[command(name = "hypsep", version, about = "Hierarchical near/far speech separation on the Poincaré ball")]
struct Cli {
    /// JSON experiment config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a dataset (train/val/test) or a probe set to disk.
    Simulate {
        #[arg(long)]
        density_preset: Option<DensityPreset>,
        #[arg(long)]
        probe: Option<Probe>,
    },
    /// Train one model.
    Train {
        /// Dataset written by `simulate`; generated in memory if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        c: Option<f64>,
        #[arg(long)]
        density_preset: Option<DensityPreset>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        density_preset: Option<DensityPreset>,
    },
    /// Train and evaluate one model per curvature on shared data.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        density_preset: Option<DensityPreset>,
    },
    /// Embedding-norm histograms and trend test for a hyperbolic checkpoint.
    Analyze {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "mic-distance")]
        probe: Probe,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Probe {
    /// Two sources symmetric about tau.
    Equidistant,
    /// Near source at varying distance, far source fixed.
    MicDistance,
    /// Test split grouped by density.
    Density,
}

impl Probe {
    fn dir_name(self) -> &'static str {
        match self {
            Probe::Equidistant => "probe-equidistant",
            Probe::MicDistance => "probe-mic-distance",
            Probe::Density => "test",
        }
    }

    /// Where `simulate` leaves this probe's manifest under `data`.
    fn manifest_path(self, data: &Path) -> PathBuf {
        match self {
            Probe::Density => data.join(Split::Test.name()),
            _ => data.join(self.dir_name()).join(Split::Probe.name()),
        }
        .join("manifest.json")
    }

    fn kind(self) -> ConditionKind {
        match self {
            Probe::Equidistant => ConditionKind::RelativeDistance,
            Probe::MicDistance => ConditionKind::MicDistance,
            Probe::Density => ConditionKind::Density,
        }
    }
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::Config(_) | Error::InvalidCurvature(_))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 2 } else { 1 })
        }
    }
}

fn set_workers(n: usize) -> hypsep::Result<()> {
    if n == 0 {
        return Err(Error::Config("--workers must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        log::warn!("built without the `parallel` feature; running on one thread");
    }
    Ok(())
}

fn run(cli: Cli) -> hypsep::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::Simulate { density_preset, .. }
        | Command::Train { density_preset, .. }
        | Command::Eval { density_preset, .. }
        | Command::Sweep { density_preset, .. } => {
            if let Some(p) = density_preset {
                cfg.density_preset = *p;
                cfg.children = p.hierarchy().children[0];
            }
        }
        Command::Analyze { .. } => {}
    }
    if let Command::Train { c: Some(c), .. } = &cli.command {
        cfg.curvature = *c;
    }
    cfg.validate()?;
    if let Some(n) = cli.workers {
        set_workers(n)?;
    }
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate { probe, .. } => simulate(&cfg, probe, out),
        Command::Train { data, .. } => train_cmd(&cfg, data.as_deref(), out),
        Command::Eval { checkpoint, data, .. } => eval_cmd(&cfg, &checkpoint, data.as_deref(), out),
        Command::Sweep { data, .. } => sweep_cmd(&cfg, data.as_deref(), out),
        Command::Analyze { checkpoint, probe, data } => analyze_cmd(&cfg, &checkpoint, probe, data.as_deref(), out),
    }
}

fn write_effective(cfg: &ExperimentConfig, out: &Path) -> hypsep::Result<()> {
    cfg.save(&out.join("config.json"))
}

fn probe_manifest(cfg: &ExperimentConfig, probe: Probe) -> hypsep::Result<Manifest> {
    let ds = cfg.dataset()?;
    let p = &cfg.probe;
    match probe {
        Probe::Equidistant => scene::probe_equidistant(&ds, &p.deltas, p.rooms_per_condition),
        Probe::MicDistance => scene::probe_mic_distance(&ds, &p.near_distances, p.rooms_per_condition),
        Probe::Density => scene::generate_split(&ds, Split::Test),
    }
}

fn simulate(cfg: &ExperimentConfig, probe: Option<Probe>, out: &Path) -> hypsep::Result<()> {
    match probe {
        None => {
            for m in scene::build_dataset(&cfg.dataset()?, out)? {
                log::info!("{}: {} scenes {:?}", m.split.name(), m.scenes.len(), m.counts);
            }
        }
        Some(p) => {
            let mut m = probe_manifest(cfg, p)?;
            let dir = out.join(p.dir_name());
            let path = scene::write_split(&mut m, &dir)?;
            log::info!("{} probe scenes written to {}", m.scenes.len(), path.display());
        }
    }
    write_effective(cfg, out)
}

/// Loads `<data>/<split>/manifest.json`, or generates the split in memory.
fn split_manifest(cfg: &ExperimentConfig, data: Option<&Path>, split: Split) -> hypsep::Result<Manifest> {
    match data {
        Some(dir) => Manifest::load(&dir.join(split.name()).join("manifest.json")),
        None => scene::generate_split(&cfg.dataset()?, split),
    }
}

fn examples(cfg: &ExperimentConfig, data: Option<&Path>) -> hypsep::Result<(Vec<train::Example>, Vec<train::Example>)> {
    let hierarchy = cfg.hierarchy()?;
    let tr = train::prepare_examples(&split_manifest(cfg, data, Split::Train)?, &hierarchy)?;
    let va = train::prepare_examples(&split_manifest(cfg, data, Split::Val)?, &hierarchy)?;
    if tr.is_empty() {
        return Err(Error::Config("training split has no scenes".into()));
    }
    Ok((tr, va))
}

fn train_cmd(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path) -> hypsep::Result<()> {
    let (tr, va) = examples(cfg, data)?;
    let model_cfg = cfg.model(tr[0].bins)?;
    let model = Model::new(model_cfg, &mut scene::stream_rng(cfg.seed, 0))?;
    write_effective(cfg, out)?;
    let result = train::train_run(model, &tr, &va, &cfg.train_config(), Some(out))?;
    let best = out.join("best.json");
    if best.exists() {
        let mut ck = Checkpoint::load(&best)?;
        ck.config_echo = serde_json::to_value(cfg).unwrap_or_default();
        ck.save(&best)?;
    }
    let mut last = Checkpoint::new(&result.last, None, None, cfg.train.epochs);
    last.config_echo = serde_json::to_value(cfg).unwrap_or_default();
    last.save(&out.join("last.json"))?;
    log::info!(
        "best epoch {} (val {:.4}); initial train loss {:.4}",
        result.best_epoch,
        result.best_val,
        result.initial.total
    );
    Ok(())
}

fn eval_cmd(cfg: &ExperimentConfig, checkpoint: &Path, data: Option<&Path>, out: &Path) -> hypsep::Result<()> {
    let model = Checkpoint::load(checkpoint)?.model();
    let test = split_manifest(cfg, data, Split::Test)?;
    let eval = train::evaluate(&ModelMasker(&model), &test, model.config.curvature.c())?;
    eval.write_csv(&out.join("table.csv"))?;
    write_effective(cfg, out)?;
    print!("{}", eval.to_csv());
    Ok(())
}

fn sweep_cmd(cfg: &ExperimentConfig, data: Option<&Path>, out: &Path) -> hypsep::Result<()> {
    let (tr, va) = examples(cfg, data)?;
    let test = split_manifest(cfg, data, Split::Test)?;
    let base = cfg.model(tr[0].bins)?;
    write_effective(cfg, out)?;
    let runs = train::curvature_sweep(&base, &cfg.train_config(), &tr, &va, &test, &cfg.sweep_curvatures, Some(out))?;
    for run in runs {
        log::info!(
            "c = {}: {} ball parameters, best epoch {}, table {}",
            run.curvature,
            run.ball_params,
            run.train.best_epoch,
            run.table_path.as_deref().map(|p| p.display().to_string()).unwrap_or_default()
        );
    }
    Ok(())
}

fn analyze_cmd(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    probe: Probe,
    data: Option<&Path>,
    out: &Path,
) -> hypsep::Result<()> {
    let model = Checkpoint::load(checkpoint)?.model();
    if model.config.curvature.is_euclidean() {
        return Err(Error::EuclideanCheckpoint);
    }
    let manifest = match data {
        Some(dir) => Manifest::load(&probe.manifest_path(dir))?,
        None => probe_manifest(cfg, probe)?,
    };
    let samples = analyze::collect_norms(&model, &manifest, probe.kind())?;
    let order = analyze::trend_order(&samples);
    let max_norm = 1.0 / model.config.curvature.kappa().sqrt();
    let hists = analyze::histogram_by_condition(&samples, &order, cfg.probe.histogram_bins, max_norm)?;
    analyze::write_histograms(out, &hists)?;
    if !manifest.scenes.is_empty() {
        let points = analyze::embedding_points(&model, &manifest, 0)?;
        analyze::write_points_csv(&out.join("points.csv"), &points)?;
    }
    let report = if order.len() >= 3 && probe != Probe::Density {
        let r = analyze::trend_test(&hists, &order)?;
        let text = format!("{r}\n");
        std::fs::write(out.join("trend.txt"), &text).map_err(|e| Error::Io {
            path: out.join("trend.txt"),
            source: e,
        })?;
        text
    } else {
        String::new()
    };
    write_effective(cfg, out)?;
    print!("{}{report}", analyze::summary_csv(&hists));
    Ok(())
}
