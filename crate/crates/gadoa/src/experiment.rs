//! The two evaluation experiments and shared trial machinery.
//!
//! Experiment 1 (deviation): starting from the arc array, every microphone
//! moves by the same step in an independent random direction. The
//! geometry-unaware classifiers keep assuming the trained arc; the
//! geometry-aware ones (and the model-based baselines) receive the true
//! deviated coordinates. The same rooms and sources are reused across steps
//! so the curves differ only by the deviation itself.
//!
//! Experiment 2 (randomized): each trial draws a fresh random array, known
//! to every geometry-aware algorithm.
//!
//! Trials run in parallel with per-trial derived seeds; outputs are
//! deterministic functions of the configuration.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::classical::{covariance, doa_grid, music_map, srp_phat_map};
use crate::dataset::{draw_source_kind, ARRAY_MICS, RANDOM_APERTURE};
use crate::error::{Error, Result};
use crate::estimate::{aggregate, circular_error, frame_estimate, DEFAULT_EPSILON_DEG, NUM_CLASSES};
use crate::features::{assemble_feature, frame_signal, gcc_phat_matrix, FeatureKind, FrameSpectra};
use crate::geometry::{arc_array, deviate_geometry, lag_bound, random_geometry, ArrayGeometry, LagBound};
use crate::mlp::{load_model, MlpModel};
use crate::room::{render_scene, sample_scene, SceneRanges};
use crate::{derive_seed, LAG_MARGIN};

// Seed stream tags.
const STREAM_SCENE: u64 = 10;
const STREAM_DEVIATION: u64 = 11;
const STREAM_GEOMETRY: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    SrpPhat,
    Music,
    FcFull,
    FcMax,
    FcGa,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::SrpPhat,
        Algorithm::Music,
        Algorithm::FcFull,
        Algorithm::FcMax,
        Algorithm::FcGa,
    ];

    pub fn feature_kind(&self) -> Option<FeatureKind> {
        match self {
            Algorithm::FcFull => Some(FeatureKind::Full),
            Algorithm::FcMax => Some(FeatureKind::Max),
            Algorithm::FcGa => Some(FeatureKind::GeometryAware),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "srp" | "srp-phat" => Ok(Algorithm::SrpPhat),
            "music" => Ok(Algorithm::Music),
            "fc-full" | "full" => Ok(Algorithm::FcFull),
            "fc-max" | "max" => Ok(Algorithm::FcMax),
            "fc-ga" | "ga" => Ok(Algorithm::FcGa),
            other => Err(Error::Config(format!(
                "unknown algorithm '{other}' (expected srp-phat, music, fc-full, fc-max, or fc-ga)"
            ))),
        }
    }
}

impl fmt::Display for Algorithm {
    fmt_display_for_algorithm!();
}

macro_rules! fmt_display_for_algorithm {
    () => {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str(match self {
                Algorithm::SrpPhat => "SRP-PHAT",
                Algorithm::Music => "MUSIC",
                Algorithm::FcFull => "FC_full",
                Algorithm::FcMax => "FC_max",
                Algorithm::FcGa => "FC_GA",
            })
        }
    };
}
use fmt_display_for_algorithm;

/// Trained classifiers used by the experiments, loaded from
/// `<dir>/fc_full.gmlp`, `<dir>/fc_max.gmlp`, `<dir>/fc_ga.gmlp`.
#[derive(Debug, Default)]
pub struct ModelSet {
    pub fc_full: Option<MlpModel>,
    pub fc_max: Option<MlpModel>,
    pub fc_ga: Option<MlpModel>,
}

impl ModelSet {
    pub fn model_file(algo: Algorithm) -> Option<&'static str> {
        match algo {
            Algorithm::FcFull => Some("fc_full.gmlp"),
            Algorithm::FcMax => Some("fc_max.gmlp"),
            Algorithm::FcGa => Some("fc_ga.gmlp"),
            _ => None,
        }
    }

    /// Load exactly the models the requested algorithms need. A missing or
    /// mismatched model file is a configuration error.
    pub fn load_for(algorithms: &[Algorithm], dir: &Path) -> Result<Self> {
        let mut set = ModelSet::default();
        for &algo in algorithms {
            let Some(file) = Self::model_file(algo) else {
                continue;
            };
            let path = dir.join(file);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "{algo} needs a trained model at {}",
                    path.display()
                )));
            }
            let model = load_model(&path)?;
            let expected = algo.feature_kind();
            if model.feature_kind != expected {
                return Err(Error::Config(format!(
                    "{}: model feature kind {:?} does not match {algo}",
                    path.display(),
                    model.feature_kind
                )));
            }
            match algo {
                Algorithm::FcFull => set.fc_full = Some(model),
                Algorithm::FcMax => set.fc_max = Some(model),
                Algorithm::FcGa => set.fc_ga = Some(model),
                _ => unreachable!(),
            }
        }
        Ok(set)
    }

    pub fn get(&self, algo: Algorithm) -> Option<&MlpModel> {
        match algo {
            Algorithm::FcFull => self.fc_full.as_ref(),
            Algorithm::FcMax => self.fc_max.as_ref(),
            Algorithm::FcGa => self.fc_ga.as_ref(),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub deviation_steps_m: Vec<f64>,
    pub t60_s: f64,
    pub snr_db: f64,
    pub signal_duration_s: f64,
    pub seed: u64,
    pub epsilon_deg: f64,
    pub algorithms: Vec<Algorithm>,
    pub ranges: SceneRanges,
    /// Sorted corpus WAV files; empty means synthetic speech.
    pub corpus: Vec<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: 100,
            deviation_steps_m: vec![0.0, 0.01, 0.02, 0.03, 0.04, 0.05],
            t60_s: 0.5,
            snr_db: 20.0,
            signal_duration_s: 5.0,
            seed: 0,
            epsilon_deg: DEFAULT_EPSILON_DEG,
            algorithms: Algorithm::ALL.to_vec(),
            ranges: SceneRanges::default(),
            corpus: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("experiment needs at least one trial".into()));
        }
        if self.deviation_steps_m.iter().any(|&s| s < 0.0) {
            return Err(Error::Config("deviation steps must be non-negative".into()));
        }
        if self
            .deviation_steps_m
            .windows(2)
            .any(|w| w[1] <= w[0])
        {
            return Err(Error::Config("deviation steps must be strictly ascending".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithms requested".into()));
        }
        Ok(())
    }

    fn fixed_ranges(&self) -> SceneRanges {
        self.ranges.clone().with_fixed_condition(self.t60_s, self.snr_db)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRow {
    pub algorithm: Algorithm,
    pub step_m: Option<f64>,
    pub trial: usize,
    pub theta_true: f64,
    pub theta_est: Option<f64>,
    pub delta_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub step_m: Option<f64>,
    pub n_used: usize,
    pub n_failed: usize,
    pub mae_deg: f64,
    pub accuracy_pct: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub experiment: &'static str,
    pub epsilon_deg: f64,
    pub rows: Vec<TrialRow>,
    pub summaries: Vec<SummaryRow>,
}

/// Global estimate of one classifier on one trial: per non-silent frame,
/// features -> posterior -> interpolated class estimate, then the circular
/// median across frames.
pub fn mlp_trial_estimate(
    model: &MlpModel,
    kind: FeatureKind,
    frames: &[FrameSpectra],
    geom: &ArrayGeometry,
    bound: &LagBound,
) -> Result<f64> {
    let mut per_frame = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let matrix = match gcc_phat_matrix(frame, geom, bound) {
            Ok(m) => m,
            Err(Error::SilentFrame) => continue,
            Err(e) => return Err(e),
        };
        let fv = match assemble_feature(kind, &matrix, Some(geom), i) {
            Ok(fv) => fv,
            Err(Error::SilentFrame) => continue,
            Err(e) => return Err(e),
        };
        let out = model.forward(&fv.values)?;
        per_frame.push(frame_estimate(&out.probs)?);
    }
    if per_frame.is_empty() {
        return Err(Error::EstimationFailure("all frames silent".into()));
    }
    aggregate(&per_frame)
}

/// Global estimate of a model-based baseline on one trial.
pub fn classical_trial_estimate(
    algo: Algorithm,
    frames: &[FrameSpectra],
    geom: &ArrayGeometry,
    c: f64,
) -> Result<f64> {
    let grid = doa_grid(NUM_CLASSES);
    let map = match algo {
        Algorithm::SrpPhat => srp_phat_map(frames, geom, &grid, c)?,
        Algorithm::Music => {
            let cov = covariance(frames)?;
            music_map(&cov, geom, &grid, 1, c)?
        }
        other => {
            return Err(Error::Config(format!(
                "{other} is not a model-based algorithm"
            )))
        }
    };
    frame_estimate(&map.values)
}

struct TrialOutcome {
    trial: usize,
    theta_true: f64,
    estimates: Vec<(Algorithm, Option<f64>)>,
}

/// Estimation failures (silent signals, degenerate numerics) are recorded,
/// not fatal; anything else aborts the run.
fn record_estimate(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(est) => Ok(Some(est)),
        Err(Error::EstimationFailure(_)) | Err(Error::SilentFrame) | Err(Error::Numeric(_)) => {
            Ok(None)
        }
        Err(e) => Err(e),
    }
}

fn run_trial(
    cfg: &ExperimentConfig,
    models: &ModelSet,
    render_geometry: ArrayGeometry,
    trial: usize,
) -> Result<TrialOutcome> {
    let ranges = cfg.fixed_ranges();
    let mut scene_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[STREAM_SCENE, trial as u64]));
    let source_kind = draw_source_kind(&cfg.corpus, &mut scene_rng);
    let scene = sample_scene(&ranges, render_geometry.clone(), source_kind, &mut scene_rng)?;
    let signal = render_scene(&scene, cfg.signal_duration_s, &mut scene_rng)?;
    let frames = frame_signal(&signal)?;

    let arc = arc_array();
    let arc_bound = lag_bound(&arc, ranges.fs, ranges.c, LAG_MARGIN)?;
    let true_bound = lag_bound(&render_geometry, ranges.fs, ranges.c, LAG_MARGIN)?;

    let mut estimates = Vec::with_capacity(cfg.algorithms.len());
    for &algo in &cfg.algorithms {
        let est = match algo {
            Algorithm::SrpPhat | Algorithm::Music => record_estimate(
                classical_trial_estimate(algo, &frames, &render_geometry, ranges.c),
            )?,
            Algorithm::FcFull | Algorithm::FcMax => {
                let model = models.get(algo).ok_or_else(|| {
                    Error::Config(format!("{algo} requested without a loaded model"))
                })?;
                // Geometry-unaware: features use the trained arc lag window
                // and no coordinate knowledge.
                record_estimate(mlp_trial_estimate(
                    model,
                    algo.feature_kind().unwrap(),
                    &frames,
                    &arc,
                    &arc_bound,
                ))?
            }
            Algorithm::FcGa => {
                let model = models.get(algo).ok_or_else(|| {
                    Error::Config(format!("{algo} requested without a loaded model"))
                })?;
                record_estimate(mlp_trial_estimate(
                    model,
                    FeatureKind::GeometryAware,
                    &frames,
                    &render_geometry,
                    &true_bound,
                ))?
            }
        };
        estimates.push((algo, est));
    }
    Ok(TrialOutcome {
        trial,
        theta_true: scene.ground_truth_doa,
        estimates,
    })
}

fn outcome_rows(outcomes: &[TrialOutcome], step_m: Option<f64>) -> Vec<TrialRow> {
    outcomes
        .iter()
        .flat_map(|o| {
            o.estimates.iter().map(move |&(algorithm, theta_est)| TrialRow {
                algorithm,
                step_m,
                trial: o.trial,
                theta_true: o.theta_true,
                theta_est,
                delta_deg: theta_est.map(|est| circular_error(est, o.theta_true)),
            })
        })
        .collect()
}

fn summarize(
    rows: &[TrialRow],
    algorithms: &[Algorithm],
    steps: &[Option<f64>],
    epsilon: f64,
) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &algorithm in algorithms {
        for &step_m in steps {
            let subset: Vec<&TrialRow> = rows
                .iter()
                .filter(|r| r.algorithm == algorithm && r.step_m == step_m)
                .collect();
            if subset.is_empty() {
                continue;
            }
            let deltas: Vec<f64> = subset.iter().filter_map(|r| r.delta_deg).collect();
            let n_used = deltas.len();
            let n_failed = subset.len() - n_used;
            let (mae, acc) = if n_used > 0 {
                let mae = deltas.iter().sum::<f64>() / n_used as f64;
                let hits = deltas.iter().filter(|&&d| d <= epsilon).count();
                (mae, 100.0 * hits as f64 / n_used as f64)
            } else {
                (f64::NAN, f64::NAN)
            };
            out.push(SummaryRow {
                algorithm,
                step_m,
                n_used,
                n_failed,
                mae_deg: mae,
                accuracy_pct: acc,
            });
        }
    }
    out
}

/// Experiment 2: fully randomized geometry per trial, shared by all
/// geometry-aware algorithms.
pub fn run_randomized_experiment(
    cfg: &ExperimentConfig,
    models: &ModelSet,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    for &algo in &cfg.algorithms {
        if matches!(algo, Algorithm::FcFull | Algorithm::FcMax) {
            return Err(Error::Config(format!(
                "{algo} assumes the trained arc geometry and does not apply to the randomized-geometry experiment"
            )));
        }
    }
    let outcomes: Vec<Result<TrialOutcome>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut geom_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                &[STREAM_GEOMETRY, trial as u64],
            ));
            let geometry =
                random_geometry(ARRAY_MICS, RANDOM_APERTURE, RANDOM_APERTURE, &mut geom_rng)?;
            run_trial(cfg, models, geometry, trial)
        })
        .collect();
    let outcomes: Vec<TrialOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let rows = outcome_rows(&outcomes, None);
    let summaries = summarize(&rows, &cfg.algorithms, &[None], cfg.epsilon_deg);
    Ok(ExperimentOutput {
        experiment: "randomized",
        epsilon_deg: cfg.epsilon_deg,
        rows,
        summaries,
    })
}

/// Experiment 1: arc-array coordinates deviating step by step. Scenes are
/// tied to the trial index (not the step) so step columns are directly
/// comparable.
pub fn run_deviation_experiment(
    cfg: &ExperimentConfig,
    models: &ModelSet,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if cfg.deviation_steps_m.is_empty() {
        return Err(Error::Config("deviation experiment needs at least one step".into()));
    }
    let arc = arc_array();
    let mut rows = Vec::new();
    for (step_idx, &step) in cfg.deviation_steps_m.iter().enumerate() {
        let outcomes: Vec<Result<TrialOutcome>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let mut dev_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[STREAM_DEVIATION, step_idx as u64, trial as u64],
                ));
                let geometry = deviate_geometry(&arc, step, &mut dev_rng);
                run_trial(cfg, models, geometry, trial)
            })
            .collect();
        let outcomes: Vec<TrialOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
        rows.extend(outcome_rows(&outcomes, Some(step)));
    }
    let steps: Vec<Option<f64>> = cfg.deviation_steps_m.iter().map(|&s| Some(s)).collect();
    let summaries = summarize(&rows, &cfg.algorithms, &steps, cfg.epsilon_deg);
    Ok(ExperimentOutput {
        experiment: "deviation",
        epsilon_deg: cfg.epsilon_deg,
        rows,
        summaries,
    })
}

fn step_field(step: Option<f64>) -> String {
    step.map(|s| s.to_string()).unwrap_or_default()
}

pub fn write_trials_csv<W: Write>(w: &mut W, out: &ExperimentOutput) -> Result<()> {
    writeln!(
        w,
        "# gadoa-results v1 experiment={} epsilon={}",
        out.experiment, out.epsilon_deg
    )?;
    writeln!(w, "algorithm,step_m,trial,theta_true_deg,theta_est_deg,delta_deg,ok")?;
    for r in &out.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.algorithm,
            step_field(r.step_m),
            r.trial,
            r.theta_true,
            r.theta_est.map(|v| v.to_string()).unwrap_or_default(),
            r.delta_deg.map(|v| v.to_string()).unwrap_or_default(),
            u8::from(r.theta_est.is_some()),
        )?;
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(w: &mut W, out: &ExperimentOutput) -> Result<()> {
    writeln!(
        w,
        "# gadoa-summary v1 experiment={} epsilon={}",
        out.experiment, out.epsilon_deg
    )?;
    writeln!(w, "algorithm,step_m,n_used,n_failed,mae_deg,accuracy_pct")?;
    for s in &out.summaries {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            s.algorithm,
            step_field(s.step_m),
            s.n_used,
            s.n_failed,
            s.mae_deg,
            s.accuracy_pct
        )?;
    }
    Ok(())
}

/// Re-derive the figure-ready table (step_m, algorithm, mae_deg,
/// accuracy_pct) from a trials CSV.
pub fn plotdata_from_trials<R: BufRead>(reader: R) -> Result<String> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::DataFormat("empty results file".into()))??;
    if !header.starts_with("# gadoa-results v1") {
        return Err(Error::DataFormat(format!(
            "unsupported results header '{header}'"
        )));
    }
    let epsilon: f64 = header
        .split_whitespace()
        .find_map(|f| f.strip_prefix("epsilon=").map(str::to_string))
        .ok_or_else(|| Error::DataFormat("results header carries no epsilon".into()))?
        .parse()
        .map_err(|_| Error::DataFormat("bad epsilon in results header".into()))?;
    let columns = lines
        .next()
        .ok_or_else(|| Error::DataFormat("missing column line".into()))??;
    if columns != "algorithm,step_m,trial,theta_true_deg,theta_est_deg,delta_deg,ok" {
        return Err(Error::DataFormat(format!("unexpected columns '{columns}'")));
    }

    // (algorithm, step) in first-appearance order -> deltas of ok trials.
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: std::collections::HashMap<(String, String), Vec<f64>> =
        std::collections::HashMap::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::DataFormat(format!("bad results row '{line}'")));
        }
        let key = (fields[0].to_string(), fields[1].to_string());
        if !groups.contains_key(&key) {
            order.push(key.clone());
            groups.insert(key.clone(), Vec::new());
        }
        if fields[6] == "1" {
            let delta: f64 = fields[5]
                .parse()
                .map_err(|_| Error::DataFormat(format!("bad delta in row '{line}'")))?;
            groups.get_mut(&key).unwrap().push(delta);
        }
    }

    let mut out = String::from("step_m,algorithm,mae_deg,accuracy_pct\n");
    for key in order {
        let deltas = &groups[&key];
        let (mae, acc) = if deltas.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let mae = deltas.iter().sum::<f64>() / deltas.len() as f64;
            let hits = deltas.iter().filter(|&&d| d <= epsilon).count();
            (mae, 100.0 * hits as f64 / deltas.len() as f64)
        };
        out.push_str(&format!("{},{},{},{}\n", key.1, key.0, mae, acc));
    }
    Ok(out)
}

/// Geometry policy for single-algorithm evaluation runs.
#[derive(Debug, Clone)]
pub enum EvalGeometry {
    Arc,
    RandomPerTrial,
    Fixed(ArrayGeometry),
}

#[derive(Debug, Clone)]
pub struct EvalSpec {
    pub algorithm: Algorithm,
    pub trials: usize,
    pub geometry: EvalGeometry,
}

/// Evaluate one algorithm over freshly sampled trials at the configured
/// fixed condition. Returns per-trial rows and the summary.
pub fn run_single_eval(
    spec: &EvalSpec,
    cfg: &ExperimentConfig,
    models: &ModelSet,
) -> Result<ExperimentOutput> {
    let mut one = cfg.clone();
    one.trials = spec.trials;
    one.algorithms = vec![spec.algorithm];
    one.validate()?;
    let outcomes: Vec<Result<TrialOutcome>> = (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let geometry = match &spec.geometry {
                EvalGeometry::Arc => arc_array(),
                EvalGeometry::Fixed(g) => g.clone(),
                EvalGeometry::RandomPerTrial => {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        one.seed,
                        &[STREAM_GEOMETRY, trial as u64],
                    ));
                    random_geometry(ARRAY_MICS, RANDOM_APERTURE, RANDOM_APERTURE, &mut rng)?
                }
            };
            run_trial(&one, models, geometry, trial)
        })
        .collect();
    let outcomes: Vec<TrialOutcome> = outcomes.into_iter().collect::<Result<_>>()?;
    let rows = outcome_rows(&outcomes, None);
    let summaries = summarize(&rows, &one.algorithms, &[None], one.epsilon_deg);
    Ok(ExperimentOutput {
        experiment: "eval",
        epsilon_deg: one.epsilon_deg,
        rows,
        summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::MlpArchitecture;

    fn fast_cfg(algorithms: Vec<Algorithm>) -> ExperimentConfig {
        ExperimentConfig {
            trials: 3,
            deviation_steps_m: vec![0.0, 0.01],
            t60_s: 0.15,
            signal_duration_s: 0.5,
            seed: 5,
            algorithms,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn algorithm_names_roundtrip() {
        for algo in Algorithm::ALL {
            let lower = algo.to_string().to_ascii_lowercase();
            assert_eq!(Algorithm::parse(&lower).unwrap(), algo);
        }
        assert!(Algorithm::parse("beamformer").is_err());
    }

    #[test]
    fn randomized_rejects_arc_bound_classifiers() {
        let cfg = fast_cfg(vec![Algorithm::FcMax]);
        let models = ModelSet::default();
        assert!(matches!(
            run_randomized_experiment(&cfg, &models),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn randomized_srp_runs_and_is_deterministic() {
        let cfg = fast_cfg(vec![Algorithm::SrpPhat]);
        let models = ModelSet::default();
        let a = run_randomized_experiment(&cfg, &models).unwrap();
        let b = run_randomized_experiment(&cfg, &models).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 3);
        assert_eq!(a.summaries.len(), 1);
        let s = &a.summaries[0];
        assert_eq!(s.n_used + s.n_failed, 3);

        // Summary agrees with a recount over the rows.
        let deltas: Vec<f64> = a.rows.iter().filter_map(|r| r.delta_deg).collect();
        if !deltas.is_empty() {
            let mae = deltas.iter().sum::<f64>() / deltas.len() as f64;
            assert!((s.mae_deg - mae).abs() < 1e-12);
        }
    }

    #[test]
    fn deviation_step_zero_is_the_arc() {
        // With a zero step the deviated geometry equals the arc, so the
        // SRP estimate must match an arc-rendered run exactly.
        let cfg = fast_cfg(vec![Algorithm::SrpPhat]);
        let models = ModelSet::default();
        let dev = run_deviation_experiment(&cfg, &models).unwrap();
        assert_eq!(dev.rows.len(), 2 * 3);
        let spec = EvalSpec {
            algorithm: Algorithm::SrpPhat,
            trials: 3,
            geometry: EvalGeometry::Arc,
        };
        let arc = run_single_eval(&spec, &cfg, &models).unwrap();
        let step0: Vec<&TrialRow> = dev
            .rows
            .iter()
            .filter(|r| r.step_m == Some(0.0))
            .collect();
        for (a, b) in step0.iter().zip(&arc.rows) {
            assert_eq!(a.theta_true, b.theta_true);
            assert_eq!(a.theta_est, b.theta_est);
        }
    }

    #[test]
    fn mlp_trial_estimate_runs_with_fresh_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let geometry = arc_array();
        let bound = lag_bound(&geometry, 8000.0, 343.0, LAG_MARGIN).unwrap();
        let frames = crate::classical::plane_wave_spectra(
            &geometry, 50.0, 256, 8000.0, 343.0, 4, &mut rng,
        );
        let model = MlpModel::new(MlpArchitecture::classifier(10), &mut rng).unwrap();
        // Untrained posterior is uniform; the estimate is still defined.
        let est = mlp_trial_estimate(&model, FeatureKind::Max, &frames, &geometry, &bound).unwrap();
        assert!((0.0..360.0).contains(&est));
    }

    #[test]
    fn trials_csv_and_plotdata_agree() {
        let cfg = fast_cfg(vec![Algorithm::SrpPhat, Algorithm::Music]);
        let models = ModelSet::default();
        let out = run_randomized_experiment(&cfg, &models).unwrap();
        let mut buf = Vec::new();
        write_trials_csv(&mut buf, &out).unwrap();
        let plot = plotdata_from_trials(std::io::BufReader::new(&buf[..])).unwrap();
        let lines: Vec<&str> = plot.lines().collect();
        assert_eq!(lines[0], "step_m,algorithm,mae_deg,accuracy_pct");
        assert_eq!(lines.len(), 1 + out.summaries.len());
        for (line, s) in lines[1..].iter().zip(&out.summaries) {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[1], s.algorithm.to_string());
            let mae: f64 = fields[2].parse().unwrap();
            assert!((mae - s.mae_deg).abs() < 1e-12);
        }
    }

    #[test]
    fn model_set_requires_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = ModelSet::load_for(&[Algorithm::FcGa], dir.path());
        assert!(matches!(err, Err(Error::Config(_))));
        // Classical algorithms need no files.
        assert!(ModelSet::load_for(&[Algorithm::SrpPhat, Algorithm::Music], dir.path()).is_ok());
    }

    #[test]
    fn model_set_rejects_kind_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = MlpModel::new(MlpArchitecture::classifier(10), &mut rng).unwrap();
        model.feature_kind = Some(FeatureKind::Max);
        crate::mlp::save_model(&model, &dir.path().join("fc_ga.gmlp")).unwrap();
        assert!(matches!(
            ModelSet::load_for(&[Algorithm::FcGa], dir.path()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn plotdata_rejects_foreign_files() {
        let text = "algorithm,whatever\n";
        assert!(plotdata_from_trials(std::io::BufReader::new(text.as_bytes())).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = fast_cfg(vec![Algorithm::SrpPhat]);
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = fast_cfg(vec![Algorithm::SrpPhat]);
        cfg.deviation_steps_m = vec![0.0, 0.0];
        assert!(cfg.validate().is_err());
        let mut cfg = fast_cfg(vec![Algorithm::SrpPhat]);
        cfg.deviation_steps_m = vec![-0.01, 0.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn random_source_mix_is_roughly_even() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut speech = 0;
        for _ in 0..1000 {
            if !matches!(
                draw_source_kind(&[], &mut rng),
                crate::room::SourceKind::WhiteNoise
            ) {
                speech += 1;
            }
        }
        assert!((400..600).contains(&speech), "{speech} of 1000");
    }
}
