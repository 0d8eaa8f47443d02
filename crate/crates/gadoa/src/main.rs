//! Command-line driver: scene simulation, dataset generation, classifier
//! training, single-algorithm evaluation, the two experiments, and
//! figure-ready CSV export.
//!
//! Exit codes: 0 success, 1 usage/configuration, 2 data error, 3 numeric
//! failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use gadoa::config::FileConfig;
use gadoa::dataset::{corpus_files, generate_dataset, load_dataset, DatasetManifest};
use gadoa::error::{Error, Result};
use gadoa::experiment::{
    plotdata_from_trials, run_deviation_experiment, run_randomized_experiment, run_single_eval,
    write_summary_csv, write_trials_csv, Algorithm, EvalGeometry, EvalSpec, ExperimentConfig,
    ExperimentOutput, ModelSet,
};
use gadoa::features::FeatureKind;
use gadoa::geometry::{arc_array, random_geometry, ArrayGeometry};
use gadoa::mlp::{save_model, train, MlpArchitecture, TrainConfig};
use gadoa::room::{render_scene, sample_scene_directed, Scene, SceneRanges, SourceKind};
use gadoa::{derive_seed, wav};

#[derive(Parser)]
#[command(name = "gadoa", version, about = "Geometry-aware acoustic DoA estimation toolkit")]
struct Cli {
    /// Master seed; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file (flags override file values).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for trial/sample parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory of 16-bit PCM mono WAV files used as speech sources.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render one scene to a multichannel WAV plus a JSON manifest.
    Simulate(SimulateArgs),
    /// Generate a labeled single-frame feature dataset.
    Dataset(DatasetArgs),
    /// Train a classifier on a generated dataset.
    Train(TrainArgs),
    /// Evaluate one algorithm over freshly simulated trials.
    Eval(EvalArgs),
    /// Run one of the two array-geometry experiments.
    Experiment(ExperimentArgs),
    /// Re-emit figure-ready CSV from an experiment trials file.
    Plotdata(PlotdataArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Reverberation time in seconds.
    #[arg(long)]
    t60: Option<f64>,
    /// Signal-to-noise ratio in dB ("inf" disables noise).
    #[arg(long)]
    snr: Option<f64>,
    /// Source azimuth in degrees (drawn from the class grid when absent).
    #[arg(long)]
    doa: Option<f64>,
    /// Source distance from the array center in meters.
    #[arg(long)]
    distance: Option<f64>,
    /// Signal duration in seconds.
    #[arg(long, default_value_t = 5.0)]
    duration: f64,
    /// Source kind: white, synth.
    #[arg(long, default_value = "synth")]
    source: String,
    /// Array geometry: arc, random, or a geometry file path.
    #[arg(long, default_value = "arc")]
    geometry: String,
}

#[derive(Args)]
struct DatasetArgs {
    /// Feature kind: full, max, or ga.
    #[arg(long)]
    feature: String,
    /// Number of samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Output file (default <out>/dataset_<kind>.csv).
    #[arg(long)]
    out_file: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Feature kind the dataset was generated for: full, max, or ga.
    #[arg(long)]
    feature: String,
    /// Dataset file produced by `gadoa dataset`.
    #[arg(long)]
    dataset: PathBuf,
    /// Model output path (default <out>/fc_<kind>.gmlp).
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Algorithm: srp-phat, music, fc-full, fc-max, fc-ga.
    #[arg(long)]
    algo: String,
    /// Trained model file (classifiers only; default <models-dir>/<algo>.gmlp).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    t60: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Array geometry: arc, random (fresh per trial), or a file path.
    #[arg(long, default_value = "arc")]
    geometry: String,
    /// Directory holding trained models.
    #[arg(long)]
    models_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Which experiment: deviation or randomized.
    which: String,
    #[arg(long)]
    trials: Option<usize>,
    /// Deviation steps in meters, comma separated.
    #[arg(long)]
    steps: Option<String>,
    /// Algorithms, comma separated (default: all that apply).
    #[arg(long)]
    algos: Option<String>,
    #[arg(long)]
    t60: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    duration: Option<f64>,
    /// Directory holding trained models.
    #[arg(long)]
    models_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PlotdataArgs {
    /// Experiment trials CSV.
    #[arg(long)]
    input: PathBuf,
    /// Output file (default <out>/plotdata.csv).
    #[arg(long)]
    out_file: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            eprint!("{e}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(cli: Cli) -> Result<()> {
    let file_cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    if let Some(threads) = cli.threads.or(file_cfg.threads) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed.or(file_cfg.seed).unwrap_or(0);
    let out_dir = cli
        .out
        .clone()
        .or(file_cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let ranges = file_cfg.ranges_or_default();
    let corpus_dir = cli.corpus.clone().or(file_cfg.corpus_dir.clone());

    match &cli.command {
        Command::Simulate(args) => simulate(args, seed, &out_dir, ranges, corpus_dir.as_deref()),
        Command::Dataset(args) => dataset_cmd(args, &file_cfg, seed, &out_dir, ranges, corpus_dir.as_deref()),
        Command::Train(args) => train_cmd(args, &file_cfg, seed, &out_dir),
        Command::Eval(args) => eval_cmd(args, &file_cfg, seed, &out_dir, ranges, corpus_dir.as_deref()),
        Command::Experiment(args) => {
            experiment_cmd(args, &file_cfg, seed, &out_dir, ranges, corpus_dir.as_deref())
        }
        Command::Plotdata(args) => plotdata_cmd(args, &out_dir),
    }
}

fn parse_geometry_choice(s: &str, for_eval: bool) -> Result<EvalGeometry> {
    match s {
        "arc" => Ok(EvalGeometry::Arc),
        "random" => Ok(EvalGeometry::RandomPerTrial),
        path => {
            let geom = ArrayGeometry::from_file(Path::new(path))?;
            let _ = for_eval;
            Ok(EvalGeometry::Fixed(geom))
        }
    }
}

/// Scene manifest: everything needed to re-render the WAV bit-exactly
/// (feed `render_seed` to a fresh generator and call `render_scene`).
#[derive(Serialize, Deserialize)]
struct SceneRecord {
    seed: u64,
    render_seed: u64,
    duration_s: f64,
    scene: Scene,
}

fn simulate(
    args: &SimulateArgs,
    seed: u64,
    out_dir: &Path,
    mut ranges: SceneRanges,
    corpus_dir: Option<&Path>,
) -> Result<()> {
    if let Some(t60) = args.t60 {
        ranges.t60 = [t60, t60];
    }
    if let Some(snr) = args.snr {
        if snr.is_finite() {
            ranges.snr_db = [snr, snr];
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[20]));
    let geometry = match args.geometry.as_str() {
        "arc" => arc_array(),
        "random" => random_geometry(
            gadoa::dataset::ARRAY_MICS,
            gadoa::dataset::RANDOM_APERTURE,
            gadoa::dataset::RANDOM_APERTURE,
            &mut rng,
        )?,
        path => ArrayGeometry::from_file(Path::new(path))?,
    };
    let source_kind = match args.source.as_str() {
        "white" => SourceKind::WhiteNoise,
        "synth" => SourceKind::SyntheticSpeech,
        other => {
            if corpus_dir.is_some() && other == "wav" {
                let files = corpus_files(corpus_dir.unwrap())?;
                SourceKind::SpeechWav {
                    path: files[0].clone(),
                }
            } else {
                return Err(Error::Config(format!(
                    "unknown source kind '{other}' (expected white, synth, or wav with --corpus)"
                )));
            }
        }
    };
    let mut scene = sample_scene_directed(
        &ranges,
        geometry,
        source_kind,
        args.doa,
        args.distance,
        &mut rng,
    )?;
    if args.snr.is_some_and(f64::is_infinite) {
        scene.snr_db = None;
    }
    let render_seed = derive_seed(seed, &[21]);
    let mut render_rng = ChaCha8Rng::seed_from_u64(render_seed);
    let signal = render_scene(&scene, args.duration, &mut render_rng)?;

    let record = SceneRecord {
        seed,
        render_seed,
        duration_s: args.duration,
        scene,
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| Error::DataFormat(e.to_string()))?;
    std::fs::write(out_dir.join("scene.json"), json + "\n")?;
    wav::write_multichannel(&out_dir.join("scene.wav"), &signal)?;
    println!(
        "wrote {} and {} (doa {} deg, t60 {} s)",
        out_dir.join("scene.json").display(),
        out_dir.join("scene.wav").display(),
        record.scene.ground_truth_doa,
        record.scene.room.t60
    );
    Ok(())
}

fn dataset_cmd(
    args: &DatasetArgs,
    file_cfg: &FileConfig,
    seed: u64,
    out_dir: &Path,
    ranges: SceneRanges,
    corpus_dir: Option<&Path>,
) -> Result<()> {
    let kind = FeatureKind::parse(&args.feature)?;
    let samples = args
        .samples
        .or(file_cfg.samples)
        .ok_or_else(|| Error::Config("dataset needs --samples".into()))?;
    let manifest = DatasetManifest::for_kind(kind, samples, seed);
    let out_file = args
        .out_file
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("dataset_{kind}.csv")));
    let stats = generate_dataset(&manifest, &ranges, corpus_dir, &out_file)?;
    println!(
        "wrote {} ({} samples, {} redraws)",
        out_file.display(),
        stats.written,
        stats.retried
    );
    Ok(())
}

fn train_cmd(args: &TrainArgs, file_cfg: &FileConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let kind = FeatureKind::parse(&args.feature)?;
    let ds = load_dataset(&args.dataset)?;
    if ds.manifest.kind != kind {
        return Err(Error::Config(format!(
            "dataset {} holds {} features, not {kind}",
            args.dataset.display(),
            ds.manifest.kind
        )));
    }
    let overrides = file_cfg.train.clone().unwrap_or_default();
    let mut cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    if let Some(v) = args.max_epochs.or(overrides.max_epochs) {
        cfg.max_epochs = v;
    }
    if let Some(v) = args.batch_size.or(overrides.batch_size) {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate.or(overrides.learning_rate) {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.patience.or(overrides.patience) {
        cfg.patience = v;
    }
    if let Some(v) = overrides.val_fraction {
        cfg.val_fraction = v;
    }

    let arch = MlpArchitecture::classifier(ds.features.ncols());
    let mut model = train(arch, ds.features.view(), &ds.labels, &cfg)?;
    model.feature_kind = Some(kind);

    let out_file = args.model_out.clone().unwrap_or_else(|| {
        out_dir.join(match kind {
            FeatureKind::Full => "fc_full.gmlp",
            FeatureKind::Max => "fc_max.gmlp",
            FeatureKind::GeometryAware => "fc_ga.gmlp",
        })
    });
    save_model(&model, &out_file)?;
    println!(
        "wrote {} (epochs {}, best val loss {:.4} at epoch {})",
        out_file.display(),
        model.meta.epochs_run,
        model.meta.best_val_loss,
        model.meta.best_epoch
    );
    Ok(())
}

fn experiment_config(
    file_cfg: &FileConfig,
    seed: u64,
    ranges: SceneRanges,
    corpus_dir: Option<&Path>,
    trials: Option<usize>,
    t60: Option<f64>,
    snr: Option<f64>,
    duration: Option<f64>,
) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        seed,
        ranges,
        ..ExperimentConfig::default()
    };
    if let Some(v) = trials.or(file_cfg.trials) {
        cfg.trials = v;
    }
    if let Some(v) = t60.or(file_cfg.t60_s) {
        cfg.t60_s = v;
    }
    if let Some(v) = snr.or(file_cfg.snr_db) {
        cfg.snr_db = v;
    }
    if let Some(v) = duration.or(file_cfg.signal_duration_s) {
        cfg.signal_duration_s = v;
    }
    if let Some(v) = file_cfg.epsilon_deg {
        cfg.epsilon_deg = v;
    }
    if let Some(steps) = &file_cfg.deviation_steps_m {
        cfg.deviation_steps_m = steps.clone();
    }
    if let Some(dir) = corpus_dir {
        cfg.corpus = corpus_files(dir)?;
    }
    Ok(cfg)
}

fn parse_algo_list(s: &str) -> Result<Vec<Algorithm>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(Algorithm::parse)
        .collect()
}

fn write_experiment_files(out_dir: &Path, out: &ExperimentOutput) -> Result<()> {
    let trials_path = out_dir.join(format!("{}_trials.csv", out.experiment));
    let summary_path = out_dir.join(format!("{}_summary.csv", out.experiment));
    let mut tf = std::io::BufWriter::new(std::fs::File::create(&trials_path)?);
    write_trials_csv(&mut tf, out)?;
    tf.flush()?;
    let mut sf = std::io::BufWriter::new(std::fs::File::create(&summary_path)?);
    write_summary_csv(&mut sf, out)?;
    sf.flush()?;

    for s in &out.summaries {
        let step = s
            .step_m
            .map(|v| format!(" step {v} m"))
            .unwrap_or_default();
        println!(
            "{}{}: mae {:.3} deg, accuracy {:.1}% ({} trials, {} failed)",
            s.algorithm, step, s.mae_deg, s.accuracy_pct, s.n_used, s.n_failed
        );
        if s.n_failed > 0 {
            eprintln!(
                "note: {}{} excluded {} failed trials from the metrics",
                s.algorithm, step, s.n_failed
            );
        }
    }
    println!("wrote {} and {}", trials_path.display(), summary_path.display());
    Ok(())
}

fn eval_cmd(
    args: &EvalArgs,
    file_cfg: &FileConfig,
    seed: u64,
    out_dir: &Path,
    ranges: SceneRanges,
    corpus_dir: Option<&Path>,
) -> Result<()> {
    let algorithm = Algorithm::parse(&args.algo)?;
    let trials = args
        .trials
        .or(file_cfg.trials)
        .ok_or_else(|| Error::Config("eval needs --trials".into()))?;
    let cfg = experiment_config(
        file_cfg, seed, ranges, corpus_dir, Some(trials), args.t60, args.snr, args.duration,
    )?;

    let models = if let Some(model_path) = &args.model {
        let model = gadoa::mlp::load_model(model_path)?;
        let mut set = ModelSet::default();
        match algorithm {
            Algorithm::FcFull => set.fc_full = Some(model),
            Algorithm::FcMax => set.fc_max = Some(model),
            Algorithm::FcGa => set.fc_ga = Some(model),
            _ => return Err(Error::Config("--model only applies to classifiers".into())),
        }
        set
    } else {
        let dir = args
            .models_dir
            .clone()
            .or(file_cfg.models_dir.clone())
            .unwrap_or_else(|| out_dir.to_path_buf());
        ModelSet::load_for(&[algorithm], &dir)?
    };

    let spec = EvalSpec {
        algorithm,
        trials,
        geometry: parse_geometry_choice(&args.geometry, true)?,
    };
    let mut out = run_single_eval(&spec, &cfg, &models)?;
    out.experiment = "eval";
    write_experiment_files(out_dir, &out)
}

fn experiment_cmd(
    args: &ExperimentArgs,
    file_cfg: &FileConfig,
    seed: u64,
    out_dir: &Path,
    ranges: SceneRanges,
    corpus_dir: Option<&Path>,
) -> Result<()> {
    let mut cfg = experiment_config(
        file_cfg, seed, ranges, corpus_dir, args.trials, args.t60, args.snr, args.duration,
    )?;
    if let Some(steps) = &args.steps {
        cfg.deviation_steps_m = steps
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad deviation step '{t}'")))
            })
            .collect::<Result<_>>()?;
    }
    let models_dir = args
        .models_dir
        .clone()
        .or(file_cfg.models_dir.clone())
        .unwrap_or_else(|| out_dir.to_path_buf());

    let out = match args.which.as_str() {
        "deviation" => {
            cfg.algorithms = match (&args.algos, &file_cfg.algorithms) {
                (Some(s), _) => parse_algo_list(s)?,
                (None, Some(list)) => list
                    .iter()
                    .map(|s| Algorithm::parse(s))
                    .collect::<Result<_>>()?,
                (None, None) => Algorithm::ALL.to_vec(),
            };
            let models = ModelSet::load_for(&cfg.algorithms, &models_dir)?;
            run_deviation_experiment(&cfg, &models)?
        }
        "randomized" => {
            cfg.algorithms = match (&args.algos, &file_cfg.algorithms) {
                (Some(s), _) => parse_algo_list(s)?,
                (None, Some(list)) => list
                    .iter()
                    .map(|s| Algorithm::parse(s))
                    .collect::<Result<_>>()?,
                (None, None) => vec![Algorithm::SrpPhat, Algorithm::Music, Algorithm::FcGa],
            };
            let models = ModelSet::load_for(&cfg.algorithms, &models_dir)?;
            run_randomized_experiment(&cfg, &models)?
        }
        other => {
            return Err(Error::Config(format!(
                "unknown experiment '{other}' (expected deviation or randomized)"
            )))
        }
    };
    write_experiment_files(out_dir, &out)
}

fn plotdata_cmd(args: &PlotdataArgs, out_dir: &Path) -> Result<()> {
    let file = std::io::BufReader::new(std::fs::File::open(&args.input)?);
    let table = plotdata_from_trials(file)?;
    let out_file = args
        .out_file
        .clone()
        .unwrap_or_else(|| out_dir.join("plotdata.csv"));
    std::fs::write(&out_file, table)?;
    println!("wrote {}", out_file.display());
    Ok(())
}
