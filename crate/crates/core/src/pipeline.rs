//! Config-driven end-to-end runs: windows → tensors → model → metrics →
//! relevance, with a manifest of everything written.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectivity::{
    extract_all, hex_digest, load_dataset, save_dataset, ExtractionDiagnostics, NormStats, PipelineConfig,
    TensorDataset, WindowTensor,
};
use crate::error::{Error, Result};
use crate::model::{evaluate, load_model, save_model, train, FusionModel, ModelConfig, ModelHeader, TrainConfig};
use crate::relevance::{explain, render_svg, RelevanceOptions};
use crate::signal_io::{
    extract_labeled_windows, generate_synthetic, load_recording, train_test_split, write_recording_csv, AnnotationSet,
    ExtractOptions, InputFormat, LabeledWindow, Split, SynthClass, SynthSpec,
};

/// Coupled recordings contribute only their coupled-segment windows
/// (labeled seizure); uncoupled recordings contribute randomly placed
/// non-seizure windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDatasetConfig {
    pub coupled_recordings: usize,
    pub uncoupled_recordings: usize,
    pub channels: usize,
    pub fs: f64,
    pub duration_s: f64,
    pub coupling_strength: f64,
    pub onset_s: f64,
    pub offset_s: f64,
    pub windows_per_uncoupled: usize,
    pub seed: u64,
}

impl Default for SynthDatasetConfig {
    /// 20 × 5 seizure windows and 25 × 4 non-seizure windows.
    fn default() -> Self {
        SynthDatasetConfig {
            coupled_recordings: 20,
            uncoupled_recordings: 25,
            channels: 4,
            fs: 128.0,
            duration_s: 120.0,
            coupling_strength: 0.4,
            onset_s: 10.0,
            offset_s: 110.0,
            windows_per_uncoupled: 4,
            seed: 0,
        }
    }
}

impl SynthDatasetConfig {
    fn spec(&self, class: SynthClass, seed: u64) -> SynthSpec {
        SynthSpec {
            onset_s: Some(self.onset_s),
            offset_s: Some(self.offset_s),
            ..SynthSpec::new(
                class,
                self.channels,
                self.fs,
                self.duration_s,
                self.coupling_strength,
                seed,
            )
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.coupled_recordings == 0 || self.uncoupled_recordings == 0 {
            return Err(Error::invalid("need at least one recording of each class"));
        }
        self.spec(SynthClass::Coupled, 0).validate()
    }
}

impl SynthDatasetConfig {
    /// (class, recording seed, window seed) per recording, coupled first.
    fn jobs(&self) -> Vec<(SynthClass, u64, u64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.coupled_recordings)
            .map(|_| SynthClass::Coupled)
            .chain((0..self.uncoupled_recordings).map(|_| SynthClass::Uncoupled))
            .map(|class| (class, rng.random(), rng.random()))
            .collect()
    }

    fn nonseizure_for(&self, class: SynthClass) -> usize {
        match class {
            SynthClass::Coupled => 0,
            SynthClass::Uncoupled => self.windows_per_uncoupled,
        }
    }
}

/// Deterministic in `cfg.seed`; recordings are generated in parallel.
pub fn synth_windows(cfg: &SynthDatasetConfig) -> Result<Vec<LabeledWindow>> {
    cfg.validate()?;
    let parts = cfg
        .jobs()
        .par_iter()
        .map(|&(class, rec_seed, win_seed)| {
            let (rec, ann) = generate_synthetic(&cfg.spec(class, rec_seed))?;
            let opts = ExtractOptions {
                n_nonseizure: cfg.nonseizure_for(class),
                ..Default::default()
            };
            extract_labeled_windows(&rec, &ann, &opts, win_seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Writes every synthetic recording as CSV plus annotation JSON, and the
/// listing `recordings.json` that `extract` reads back.
pub fn write_synthetic_recordings(cfg: &SynthDatasetConfig, dir: &Path) -> Result<Vec<RecordingInput>> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut inputs = Vec::new();
    for (k, &(class, rec_seed, _)) in cfg.jobs().iter().enumerate() {
        let (rec, ann) = generate_synthetic(&cfg.spec(class, rec_seed))?;
        let stem = format!("rec{k:03}_{}", class.as_str());
        write_recording_csv(&rec, dir.join(format!("{stem}.csv")))?;
        ann.save(dir.join(format!("{stem}.json")))?;
        inputs.push(RecordingInput {
            path: format!("{stem}.csv").into(),
            annotations: format!("{stem}.json").into(),
            fs: cfg.fs,
            n_nonseizure: Some(cfg.nonseizure_for(class)),
        });
    }
    write_atomic(&dir.join(RECORDING_LIST), &serde_json::to_vec_pretty(&inputs)?)?;
    Ok(inputs)
}

pub const RECORDING_LIST: &str = "recordings.json";

/// Reads a recording listing; relative paths resolve against its directory.
pub fn load_recording_list(path: &Path) -> Result<Vec<RecordingInput>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut list: Vec<RecordingInput> = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    for r in &mut list {
        r.path = base.join(&r.path);
        r.annotations = base.join(&r.annotations);
    }
    Ok(list)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordingInput {
    pub path: PathBuf,
    pub annotations: PathBuf,
    pub fs: f64,
    /// Overrides the run-wide non-seizure window count for this recording.
    #[serde(default)]
    pub n_nonseizure: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthDatasetConfig),
    Recordings(Vec<RecordingInput>),
    /// A previously extracted tensor dataset directory.
    Tensors(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stages {
    pub extract: bool,
    pub train: bool,
    pub eval: bool,
    pub explain: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            extract: true,
            train: true,
            eval: true,
            explain: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub source: DataSource,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub extract: ExtractOptions,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub extract_seed: u64,
    #[serde(default)]
    pub relevance: RelevanceOptions,
    pub threshold: f64,
    #[serde(default)]
    pub stages: Stages,
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// The synthetic coupled-vs-uncoupled study with desk-scale defaults.
    pub fn synthetic(out_dir: impl Into<PathBuf>) -> RunConfig {
        let synth = SynthDatasetConfig::default();
        RunConfig {
            model: ModelConfig::desk(2, synth.channels),
            source: DataSource::Synthetic(synth),
            pipeline: PipelineConfig::default(),
            extract: ExtractOptions::default(),
            train: TrainConfig::default(),
            test_fraction: 0.15,
            split_seed: 0,
            extract_seed: 0,
            relevance: RelevanceOptions::default(),
            threshold: 0.5,
            stages: Stages::default(),
            out_dir: out_dir.into(),
        }
    }

    /// Sets every seed the run uses from one value.
    pub fn reseed(&mut self, seed: u64) {
        self.split_seed = seed;
        self.extract_seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        if let DataSource::Synthetic(s) = &mut self.source {
            s.seed = seed;
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| {
            Error::in_field("config")(Error::Format {
                path: path.to_path_buf(),
                msg: e.to_string(),
            })
        })
    }

    /// Hash of everything but the output location.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        hex_digest(&serde_json::to_vec(&canonical).expect("config serializes"))
    }

    /// Every check that needs no data; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let sampling_rates: Vec<f64> = match &self.source {
            DataSource::Synthetic(s) => {
                s.validate().map_err(Error::in_field("source.synthetic"))?;
                if s.channels != self.model.channels {
                    return Err(Error::in_field("model.channels")(Error::invalid(format!(
                        "{} does not match the {} synthetic channels",
                        self.model.channels, s.channels
                    ))));
                }
                vec![s.fs]
            }
            DataSource::Recordings(r) => {
                if r.is_empty() {
                    return Err(Error::in_field("source.recordings")(Error::invalid(
                        "no recordings listed",
                    )));
                }
                r.iter().map(|x| x.fs).collect()
            }
            DataSource::Tensors(_) => vec![],
        };
        for fs in sampling_rates {
            self.pipeline.validate(fs).map_err(Error::in_field("pipeline"))?;
        }
        self.model.validate().map_err(Error::in_field("model"))?;
        if self.model.time_steps != self.pipeline.subwindows || self.model.bands != self.pipeline.bands.len() {
            return Err(Error::in_field("model")(Error::invalid(
                "time_steps and bands must match pipeline.subwindows and pipeline.bands",
            )));
        }
        self.train.validate().map_err(Error::in_field("train"))?;
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::in_field("test_fraction")(Error::invalid("must be in (0, 1)")));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::in_field("threshold")(Error::invalid("must be in [0, 1]")));
        }
        if self.stages.explain && self.model.scheme > 2 {
            return Err(Error::in_field("stages.explain")(Error::UnsupportedScheme(
                self.model.scheme,
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub warnings: Vec<String>,
    pub diagnostics: ExtractionDiagnostics,
    pub timing_s: BTreeMap<String, f64>,
    /// Paths relative to the output directory.
    pub outputs: Vec<String>,
}

pub const RUN_MANIFEST: &str = "run_manifest.json";

/// Writes `bytes` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Windows from every configured recording, in listing order.
pub fn recording_windows(inputs: &[RecordingInput], opts: &ExtractOptions, seed: u64) -> Result<Vec<LabeledWindow>> {
    let mut out = Vec::new();
    for (k, input) in inputs.iter().enumerate() {
        let rec = load_recording(&input.path, input.fs, InputFormat::Csv)?;
        let ann = AnnotationSet::load(&input.annotations)?;
        let opts = ExtractOptions {
            n_nonseizure: input.n_nonseizure.unwrap_or(opts.n_nonseizure),
            ..*opts
        };
        out.extend(extract_labeled_windows(&rec, &ann, &opts, seed.wrapping_add(k as u64))?);
    }
    Ok(out)
}

/// Tensor dataset for the configured source.
pub fn build_dataset(cfg: &RunConfig) -> Result<TensorDataset> {
    let (windows, fs) = match &cfg.source {
        DataSource::Synthetic(s) => (synth_windows(s)?, s.fs),
        DataSource::Recordings(r) => {
            let w = recording_windows(r, &cfg.extract, cfg.extract_seed)?;
            let fs = r[0].fs;
            (w, fs)
        }
        DataSource::Tensors(dir) => return load_dataset(dir),
    };
    if windows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (tensors, diag) = extract_all(&windows, &cfg.pipeline)?;
    TensorDataset::new(tensors, cfg.pipeline.bands.clone(), fs, cfg.pipeline.hash(), diag)
}

pub struct PreparedSplit {
    pub split: Split,
    /// Fitted on the training side only.
    pub stats: NormStats,
    pub train: Vec<WindowTensor>,
    pub test: Vec<WindowTensor>,
}

/// Stratified split, then both sides normalized with training statistics.
pub fn split_and_normalize(ds: &TensorDataset, test_fraction: f64, seed: u64) -> Result<PreparedSplit> {
    let split = train_test_split(&ds.tensors, test_fraction, seed)?;
    let (train_raw, test_raw) = split.take(&ds.tensors);
    let stats = NormStats::fit(&train_raw)?;
    Ok(PreparedSplit {
        train: stats.applied(&train_raw)?,
        test: stats.applied(&test_raw)?,
        split,
        stats,
    })
}

pub const SPLIT_FILE: &str = "split.json";

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("eegconn".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        (
            "dataset_format".to_string(),
            crate::connectivity::DATASET_FORMAT_VERSION.to_string(),
        ),
        (
            "model_format".to_string(),
            crate::model::MODEL_FORMAT_VERSION.to_string(),
        ),
    ])
}

struct Outputs<'a> {
    dir: &'a Path,
    files: Vec<String>,
}

impl Outputs<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }
}

/// Runs the enabled stages in order; any failure names its stage.
pub fn pipeline_run(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = cfg.out_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Outputs { dir, files: vec![] };
    let mut timing = BTreeMap::new();
    let mut warnings = Vec::new();
    let config_hash = cfg.hash();
    out.write("config.json", &serde_json::to_vec_pretty(cfg)?)?;

    let clock = Instant::now();
    let ds = if cfg.stages.extract {
        let ds = build_dataset(cfg).map_err(Error::in_stage("extract"))?;
        save_dataset(&ds, dir.join("dataset")).map_err(Error::in_stage("extract"))?;
        for w in &ds.manifest.windows {
            out.files.push(format!("dataset/{}", w.file));
        }
        out.files.push(format!("dataset/{}", crate::connectivity::MANIFEST));
        ds
    } else {
        load_dataset(dir.join("dataset")).map_err(Error::in_stage("extract"))?
    };
    timing.insert("extract".to_string(), clock.elapsed().as_secs_f64());
    let diag = ds.manifest.diagnostics.clone();
    if diag.unstable_fits > 0 {
        warnings.push(format!(
            "{} of {} MVAR fits were unstable",
            diag.unstable_fits, diag.fits
        ));
    }
    if diag.jitter_events > 0 {
        warnings.push(format!(
            "{} noise covariances needed diagonal jitter",
            diag.jitter_events
        ));
    }

    let PreparedSplit {
        split,
        stats,
        train: train_set,
        test: test_set,
    } = split_and_normalize(&ds, cfg.test_fraction, cfg.split_seed).map_err(Error::in_stage("split"))?;
    out.write(SPLIT_FILE, &serde_json::to_vec_pretty(&split)?)?;

    let model_path = dir.join("model.bin");
    let model = if cfg.stages.train {
        let clock = Instant::now();
        let fresh = FusionModel::build(&cfg.model).map_err(Error::in_stage("train"))?;
        let (model, history) = train(&fresh, &train_set, &cfg.train).map_err(Error::in_stage("train"))?;
        let header = ModelHeader::new(&model, Some(stats), Some(ds.manifest.config_hash.clone()));
        save_model(&model, &header, &model_path).map_err(Error::in_stage("train"))?;
        out.files.push("model.bin".into());
        out.write("history.json", &serde_json::to_vec_pretty(&history)?)?;
        timing.insert("train".to_string(), clock.elapsed().as_secs_f64());
        // evaluate what a later `eval` would see: the stored f32 weights
        load_model(&model_path).map_err(Error::in_stage("train"))?.0
    } else {
        load_model(&model_path).map_err(Error::in_stage("train"))?.0
    };

    if cfg.stages.eval {
        let clock = Instant::now();
        let metrics = evaluate(&model, &test_set, cfg.threshold).map_err(Error::in_stage("eval"))?;
        if !metrics.undefined.is_empty() {
            warnings.push(format!(
                "undefined metrics reported as 0: {}",
                metrics.undefined.join(", ")
            ));
        }
        out.write("metrics.json", &serde_json::to_vec_pretty(&metrics)?)?;
        timing.insert("eval".to_string(), clock.elapsed().as_secs_f64());
    }

    if cfg.stages.explain {
        let clock = Instant::now();
        let report =
            explain(&model, &test_set, cfg.relevance, config_hash.clone()).map_err(Error::in_stage("explain"))?;
        out.write("relevance.json", &serde_json::to_vec_pretty(&report)?)?;
        out.write("relevance.csv", report.to_csv().as_bytes())?;
        out.write("relevance.svg", render_svg(&report).as_bytes())?;
        timing.insert("explain".to_string(), clock.elapsed().as_secs_f64());
    }

    let mut seeds = BTreeMap::from([
        ("split".to_string(), cfg.split_seed),
        ("extract".to_string(), cfg.extract_seed),
        ("model".to_string(), cfg.model.seed),
        ("train".to_string(), cfg.train.seed),
    ]);
    if let DataSource::Synthetic(s) = &cfg.source {
        seeds.insert("synthetic".to_string(), s.seed);
    }
    out.files.push(RUN_MANIFEST.to_string());
    let manifest = RunManifest {
        config_hash,
        versions: versions(),
        seeds,
        warnings,
        diagnostics: diag,
        timing_s: timing,
        outputs: out.files.clone(),
    };
    write_atomic(&dir.join(RUN_MANIFEST), &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal_io::Label;

    #[test]
    fn default_synthetic_dataset_is_balanced() {
        let cfg = SynthDatasetConfig {
            coupled_recordings: 2,
            uncoupled_recordings: 2,
            ..Default::default()
        };
        let w = synth_windows(&cfg).unwrap();
        let seizure = w.iter().filter(|x| x.label == Label::Seizure).count();
        assert_eq!(seizure, 10);
        assert_eq!(w.len() - seizure, 8);
        assert_eq!(w, synth_windows(&cfg).unwrap());
    }

    #[test]
    fn written_recordings_reproduce_seizure_windows() {
        let cfg = SynthDatasetConfig {
            coupled_recordings: 1,
            uncoupled_recordings: 1,
            channels: 2,
            ..Default::default()
        };
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_recordings(&cfg, dir.path()).unwrap();
        let list = load_recording_list(&dir.path().join(RECORDING_LIST)).unwrap();
        assert_eq!(list[1].n_nonseizure, Some(4));
        let from_disk = recording_windows(&list, &ExtractOptions::default(), 0).unwrap();
        let in_memory = synth_windows(&cfg).unwrap();
        assert_eq!(from_disk.len(), in_memory.len());
        let seizure = |w: &[LabeledWindow]| -> Vec<_> {
            w.iter()
                .filter(|x| x.label == Label::Seizure)
                .map(|x| x.samples.clone())
                .collect()
        };
        assert_eq!(seizure(&from_disk), seizure(&in_memory));
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = RunConfig::synthetic("/nonexistent");
        assert!(cfg.validate().is_ok());
        if let DataSource::Synthetic(s) = &mut cfg.source {
            s.fs = 256.0;
        }
        cfg.pipeline.bands[4].high_hz = 200.0;
        let err = cfg.validate().unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().starts_with("pipeline: bands[4]"), "{err}");

        assert_eq!(RunConfig::synthetic("a").hash(), RunConfig::synthetic("b").hash());
        let mut cfg = RunConfig::synthetic("/nonexistent");
        cfg.model.scheme = 4;
        assert!(cfg.validate().unwrap_err().to_string().starts_with("stages.explain"));
    }
}
