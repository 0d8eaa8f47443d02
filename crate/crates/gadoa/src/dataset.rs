//! Labeled training-set generation.
//!
//! Every sample is a single reverberant frame from a freshly drawn scene:
//! geometry-unaware features use the fixed arc array, the geometry-aware
//! feature draws a new random array per sample. Sources split 50/50 between
//! speech-like and white noise. Generation is deterministic from the manifest
//! seed and resumable sample by sample.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::NUM_CLASSES;
use crate::features::{assemble_feature, frame_signal, gcc_phat_matrix, FeatureKind};
use crate::geometry::{arc_array, lag_bound, random_geometry, ArrayGeometry};
use crate::room::{render_scene, sample_scene, SceneRanges, Scene, SourceKind};
use crate::{derive_seed, LAG_MARGIN};

/// All simulated arrays carry five microphones.
pub const ARRAY_MICS: usize = 5;
/// Aperture of randomly drawn training arrays, meters.
pub const RANDOM_APERTURE: f64 = 0.4;

const DATASET_VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GeometryPolicy {
    FixedArc,
    RandomPerSample,
}

impl fmt::Display for GeometryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GeometryPolicy::FixedArc => "fixed-arc",
            GeometryPolicy::RandomPerSample => "random-per-sample",
        })
    }
}

impl GeometryPolicy {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "fixed-arc" => Ok(GeometryPolicy::FixedArc),
            "random-per-sample" => Ok(GeometryPolicy::RandomPerSample),
            other => Err(Error::DataFormat(format!("unknown geometry policy '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: usize,
    pub kind: FeatureKind,
    pub geometry: GeometryPolicy,
    pub seed: u64,
}

impl DatasetManifest {
    /// The geometry-aware feature trains on a fresh random array per sample;
    /// the geometry-unaware features train on the fixed arc.
    pub fn for_kind(kind: FeatureKind, samples: usize, seed: u64) -> Self {
        let geometry = match kind {
            FeatureKind::GeometryAware => GeometryPolicy::RandomPerSample,
            _ => GeometryPolicy::FixedArc,
        };
        DatasetManifest {
            samples,
            kind,
            geometry,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("dataset needs at least one sample".into()));
        }
        let wants_random = self.kind == FeatureKind::GeometryAware;
        let has_random = self.geometry == GeometryPolicy::RandomPerSample;
        if wants_random != has_random {
            return Err(Error::Config(format!(
                "feature kind {} requires geometry policy {}",
                self.kind,
                if wants_random { "random-per-sample" } else { "fixed-arc" }
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub manifest: DatasetManifest,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenStats {
    pub written: usize,
    pub retried: usize,
}

/// Draw the source kind for one sample: a fair coin between white noise and
/// speech (corpus WAV when available, synthetic speech otherwise).
pub fn draw_source_kind<R: Rng>(corpus: &[std::path::PathBuf], rng: &mut R) -> SourceKind {
    if rng.random_bool(0.5) {
        if corpus.is_empty() {
            SourceKind::SyntheticSpeech
        } else {
            let i = rng.random_range(0..corpus.len());
            SourceKind::SpeechWav {
                path: corpus[i].clone(),
            }
        }
    } else {
        SourceKind::WhiteNoise
    }
}

/// Sorted .wav listing of a corpus directory.
pub fn corpus_files(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Ingestion(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "wav"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Ingestion(format!(
            "{}: no .wav files found",
            dir.display()
        )));
    }
    Ok(files)
}

fn sample_geometry<R: Rng>(policy: GeometryPolicy, rng: &mut R) -> Result<ArrayGeometry> {
    match policy {
        GeometryPolicy::FixedArc => Ok(arc_array()),
        GeometryPolicy::RandomPerSample => {
            random_geometry(ARRAY_MICS, RANDOM_APERTURE, RANDOM_APERTURE, rng)
        }
    }
}

/// One feature record: the last (fully reverberant) frame of a short render.
fn one_sample(
    manifest: &DatasetManifest,
    ranges: &SceneRanges,
    corpus: &[std::path::PathBuf],
    index: usize,
) -> Result<(usize, Vec<f64>, usize)> {
    const MAX_ATTEMPTS: u64 = 20;
    let mut retried = 0usize;
    for attempt in 0..MAX_ATTEMPTS {
        let seed = derive_seed(manifest.seed, &[4, index as u64, attempt]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let geometry = sample_geometry(manifest.geometry, &mut rng)?;
        let source_kind = draw_source_kind(corpus, &mut rng);
        let outcome = (|| -> Result<(usize, Vec<f64>)> {
            let scene: Scene = sample_scene(ranges, geometry.clone(), source_kind, &mut rng)?;
            // Long enough that the final frame carries the full impulse
            // response of the most reverberant rooms.
            let duration = (1.1 * scene.room.t60 + 0.15)
                .max(2.0 * crate::features::FRAME_LEN as f64 / ranges.fs);
            let signal = render_scene(&scene, duration, &mut rng)?;
            let frames = frame_signal(&signal)?;
            let frame = frames.last().expect("at least one frame by construction");
            let bound = lag_bound(&geometry, ranges.fs, ranges.c, LAG_MARGIN)?;
            let matrix = gcc_phat_matrix(frame, &geometry, &bound)?;
            let fv = assemble_feature(manifest.kind, &matrix, Some(&geometry), index)?;
            let label = (scene.ground_truth_doa / ranges.direction_step_deg()).round() as usize
                % ranges.direction_classes;
            Ok((label, fv.values))
        })();
        match outcome {
            Ok((label, values)) => return Ok((label, values, retried)),
            // Geometry or placement came out infeasible; redraw.
            Err(Error::SceneSampling(_))
            | Err(Error::DegenerateScene(_))
            | Err(Error::SilentFrame) => retried += 1,
            Err(e) => return Err(e),
        }
    }
    Err(Error::SceneSampling(format!(
        "sample {index}: no feasible draw after {MAX_ATTEMPTS} attempts"
    )))
}

/// Generate the dataset into a CSV file (header comments, then
/// `label,v0,v1,...` rows). Deterministic from the manifest seed; samples
/// are generated in parallel but written in order.
pub fn generate_dataset(
    manifest: &DatasetManifest,
    ranges: &SceneRanges,
    corpus_dir: Option<&Path>,
    out: &Path,
) -> Result<GenStats> {
    manifest.validate()?;
    let corpus = match corpus_dir {
        Some(dir) => corpus_files(dir)?,
        None => Vec::new(),
    };

    let rows: Vec<Result<(usize, Vec<f64>, usize)>> = (0..manifest.samples)
        .into_par_iter()
        .map(|i| one_sample(manifest, ranges, &corpus, i))
        .collect();

    let mut file = std::io::BufWriter::new(std::fs::File::create(out)?);
    writeln!(file, "# gadoa-dataset {DATASET_VERSION}")?;
    writeln!(
        file,
        "# kind={} geometry={} samples={} seed={}",
        manifest.kind, manifest.geometry, manifest.samples, manifest.seed
    )?;
    let mut retried = 0usize;
    for row in rows {
        let (label, values, r) = row?;
        retried += r;
        write!(file, "{label}")?;
        for v in values {
            write!(file, ",{v}")?;
        }
        writeln!(file)?;
    }
    file.flush()?;
    Ok(GenStats {
        written: manifest.samples,
        retried,
    })
}

/// Load a dataset file, checking the schema version and the feature width
/// implied by the manifest.
pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();

    let version = lines
        .next()
        .ok_or_else(|| Error::DataFormat("empty dataset file".into()))??;
    if version.trim() != format!("# gadoa-dataset {DATASET_VERSION}") {
        return Err(Error::DataFormat(format!(
            "unsupported dataset header '{version}'"
        )));
    }
    let meta = lines
        .next()
        .ok_or_else(|| Error::DataFormat("missing manifest line".into()))??;
    let manifest = parse_manifest_line(&meta)?;

    let expected_width = match manifest.kind {
        FeatureKind::Full => {
            let arc = arc_array();
            let bound = lag_bound(&arc, SceneRanges::default().fs, SceneRanges::default().c, LAG_MARGIN)?;
            manifest.kind.expected_len(ARRAY_MICS, bound.tau_max)
        }
        _ => manifest.kind.expected_len(ARRAY_MICS, 0),
    };

    let mut labels = Vec::with_capacity(manifest.samples);
    let mut data = Vec::with_capacity(manifest.samples * expected_width);
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label: usize = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::DataFormat(format!("row {}: bad label", lineno + 3)))?;
        if label >= NUM_CLASSES {
            return Err(Error::DataFormat(format!(
                "row {}: label {label} out of range",
                lineno + 3
            )));
        }
        labels.push(label);
        let before = data.len();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| Error::DataFormat(format!("row {}: bad value", lineno + 3)))?;
            data.push(v);
        }
        if data.len() - before != expected_width {
            return Err(Error::DataFormat(format!(
                "row {}: {} values, expected {expected_width}",
                lineno + 3,
                data.len() - before
            )));
        }
    }
    if labels.len() != manifest.samples {
        return Err(Error::DataFormat(format!(
            "{} rows but manifest says {}",
            labels.len(),
            manifest.samples
        )));
    }
    let features = Array2::from_shape_vec((labels.len(), expected_width), data)
        .map_err(|e| Error::DataFormat(e.to_string()))?;
    Ok(LabeledDataset {
        manifest,
        features,
        labels,
    })
}

fn parse_manifest_line(line: &str) -> Result<DatasetManifest> {
    let mut kind = None;
    let mut geometry = None;
    let mut samples = None;
    let mut seed = None;
    for field in line.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = field.split_once('=') {
            match k {
                "kind" => kind = Some(FeatureKind::parse(v).map_err(|e| Error::DataFormat(e.to_string()))?),
                "geometry" => geometry = Some(GeometryPolicy::parse(v)?),
                "samples" => {
                    samples = Some(v.parse().map_err(|_| {
                        Error::DataFormat(format!("bad samples count '{v}'"))
                    })?)
                }
                "seed" => {
                    seed = Some(v.parse().map_err(|_| Error::DataFormat(format!("bad seed '{v}'")))?)
                }
                _ => return Err(Error::DataFormat(format!("unknown manifest key '{k}'"))),
            }
        }
    }
    match (kind, geometry, samples, seed) {
        (Some(kind), Some(geometry), Some(samples), Some(seed)) => {
            let m = DatasetManifest {
                samples,
                kind,
                geometry,
                seed,
            };
            m.validate().map_err(|e| Error::DataFormat(e.to_string()))?;
            Ok(m)
        }
        _ => Err(Error::DataFormat("incomplete manifest line".into())),
    }
}
