//! Recordings, seizure annotations, labeled window extraction and
//! train/test splitting.

mod synth;

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use synth::{generate_synthetic, SynthClass, SynthSpec};

use crate::error::{Error, Result};

pub const WINDOW_S: f64 = 20.0;
pub const DEFAULT_SUBWINDOWS: usize = 10;
pub const DEFAULT_NONSEIZURE: usize = 4;
pub const DEFAULT_GUARD_S: f64 = 60.0;

/// Multichannel recording; `samples` is N×C.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub samples: Array2<f64>,
    pub fs: f64,
    pub channel_names: Vec<String>,
    pub id: String,
}

impl Recording {
    pub fn new(samples: Array2<f64>, fs: f64, channel_names: Vec<String>, id: impl Into<String>) -> Result<Self> {
        let (n, c) = samples.dim();
        if c < 2 {
            return Err(Error::TooFewChannels(c));
        }
        if n == 0 {
            return Err(Error::invalid("recording has no samples"));
        }
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::invalid(format!("sampling rate must be > 0, got {fs}")));
        }
        if channel_names.len() != c {
            return Err(Error::invalid(format!(
                "{} channel names for {c} channels",
                channel_names.len()
            )));
        }
        if let Some(((row, col), _)) = samples.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at row {row}, channel {col}")));
        }
        Ok(Recording {
            samples,
            fs,
            channel_names,
            id: id.into(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.fs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
}

/// Reads a header row of channel names followed by one row per sample.
pub fn load_recording(path: impl AsRef<Path>, fs: f64, format: InputFormat) -> Result<Recording> {
    let path = path.as_ref();
    let InputFormat::Csv = format;
    if !(fs > 0.0) || !fs.is_finite() {
        return Err(Error::invalid(format!("sampling rate must be > 0, got {fs}")));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if names.len() < 2 {
        return Err(Error::TooFewChannels(names.len()));
    }
    let c = names.len();
    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })?;
        if record.len() != c {
            return Err(Error::Format {
                path: path.into(),
                msg: format!("row {} has {} cells, expected {c}", r + 1, record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                _ => {
                    return Err(Error::ParseCell {
                        path: path.into(),
                        row: r + 1,
                        col: j + 1,
                        cell: cell.to_string(),
                    })
                }
            }
        }
    }
    let n = values.len() / c;
    let samples = Array2::from_shape_vec((n, c), values).expect("row-major cells");
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Recording::new(samples, fs, names, id)
}

pub fn write_recording_csv(rec: &Recording, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    })?;
    let wrap = |e: csv::Error| Error::Format {
        path: path.into(),
        msg: e.to_string(),
    };
    w.write_record(&rec.channel_names).map_err(wrap)?;
    for row in rec.samples.rows() {
        w.write_record(row.iter().map(|v| format!("{v}"))).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeizureInterval {
    pub start_s: f64,
    pub end_s: f64,
}

impl SeizureInterval {
    pub fn new(start_s: f64, end_s: f64) -> Self {
        SeizureInterval { start_s, end_s }
    }

    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// On disk: `{"seizures": [{"start_s": .., "end_s": ..}, ..]}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    #[serde(rename = "seizures")]
    pub seizure_intervals: Vec<SeizureInterval>,
}

impl AnnotationSet {
    pub fn new(seizure_intervals: Vec<SeizureInterval>) -> Self {
        AnnotationSet { seizure_intervals }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    /// Sorted, validated against the recording duration, with overlapping
    /// or touching intervals merged.
    pub fn normalized(&self, duration_s: f64) -> Result<AnnotationSet> {
        let mut iv = self.seizure_intervals.clone();
        for i in &iv {
            if !(i.start_s >= 0.0 && i.start_s < i.end_s && i.end_s <= duration_s + 1e-9) {
                return Err(Error::invalid(format!(
                    "seizure interval [{}, {}) outside 0..{duration_s} s or empty",
                    i.start_s, i.end_s
                )));
            }
        }
        iv.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        let mut merged: Vec<SeizureInterval> = Vec::with_capacity(iv.len());
        for i in iv {
            match merged.last_mut() {
                Some(last) if i.start_s <= last.end_s => last.end_s = last.end_s.max(i.end_s),
                _ => merged.push(i),
            }
        }
        Ok(AnnotationSet::new(merged))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NonSeizure,
    Seizure,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::NonSeizure => 0,
            Label::Seizure => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::NonSeizure),
            1 => Some(Label::Seizure),
            _ => None,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::NonSeizure => Label::Seizure,
            Label::Seizure => Label::NonSeizure,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::NonSeizure => "non_seizure",
            Label::Seizure => "seizure",
        }
    }
}

/// Anything carrying a class label; used by splitting and evaluation.
pub trait Labeled {
    fn label(&self) -> Label;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledWindow {
    /// W×C, W = round(20·fs).
    pub samples: Array2<f64>,
    pub label: Label,
    pub source_id: String,
    pub offset_s: f64,
    pub fs: f64,
}

impl LabeledWindow {
    pub fn id(&self) -> String {
        format!("{}@{:.3}s", self.source_id, self.offset_s)
    }
}

impl Labeled for LabeledWindow {
    fn label(&self) -> Label {
        self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractOptions {
    pub n_nonseizure: usize,
    pub guard_s: f64,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            n_nonseizure: DEFAULT_NONSEIZURE,
            guard_s: DEFAULT_GUARD_S,
        }
    }
}

pub fn window_len(fs: f64) -> usize {
    (WINDOW_S * fs).round() as usize
}

/// Seizure windows tile each interval of at least 20 s from its start, plus
/// one window ending exactly at the interval end when a remainder is left.
/// Non-seizure windows start uniformly at random inside regions that keep
/// `guard_s` away from every seizure.
pub fn extract_labeled_windows(
    rec: &Recording,
    ann: &AnnotationSet,
    opts: &ExtractOptions,
    seed: u64,
) -> Result<Vec<LabeledWindow>> {
    let w = window_len(rec.fs);
    let n = rec.n_samples();
    if n < w {
        return Err(Error::SignalTooShort { len: n, min: w });
    }
    let ann = ann.normalized(rec.duration_s())?;
    let make = |start: usize, label: Label| LabeledWindow {
        samples: rec.samples.slice(s![start..start + w, ..]).to_owned(),
        label,
        source_id: rec.id.clone(),
        offset_s: start as f64 / rec.fs,
        fs: rec.fs,
    };

    let mut out = Vec::new();
    for iv in &ann.seizure_intervals {
        let first = ((iv.start_s * rec.fs) - 1e-9).ceil().max(0.0) as usize;
        let last = (((iv.end_s * rec.fs) + 1e-9).floor() as usize).min(n);
        if last < first + w {
            continue;
        }
        let span = last - first;
        for k in 0..span / w {
            out.push(make(first + k * w, Label::Seizure));
        }
        if !span.is_multiple_of(w) {
            out.push(make(last - w, Label::Seizure));
        }
    }

    if opts.n_nonseizure > 0 {
        // allowed sample ranges [a, b) outside guarded seizures
        let mut blocked: Vec<(usize, usize)> = ann
            .seizure_intervals
            .iter()
            .map(|iv| {
                let a = ((iv.start_s - opts.guard_s) * rec.fs).floor().max(0.0) as usize;
                let b = (((iv.end_s + opts.guard_s) * rec.fs).ceil() as usize).min(n);
                (a, b)
            })
            .collect();
        blocked.sort();
        let mut free = Vec::new();
        let mut cursor = 0usize;
        for (a, b) in blocked {
            if a > cursor {
                free.push((cursor, a));
            }
            cursor = cursor.max(b);
        }
        if cursor < n {
            free.push((cursor, n));
        }
        // candidate start ranges [a, b - w]
        let starts: Vec<(usize, usize)> = free
            .into_iter()
            .filter(|(a, b)| b - a >= w)
            .map(|(a, b)| (a, b - w))
            .collect();
        if starts.is_empty() {
            return Err(Error::NoNonSeizureRegion { needed_s: WINDOW_S });
        }
        let total: usize = starts.iter().map(|(a, b)| b - a + 1).sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chosen: Vec<usize> = Vec::with_capacity(opts.n_nonseizure);
        for _ in 0..opts.n_nonseizure {
            let mut pick = None;
            for attempt in 0..1000 {
                let mut k = rng.random_range(0..total);
                let mut cand = 0;
                for &(a, b) in &starts {
                    let len = b - a + 1;
                    if k < len {
                        cand = a + k;
                        break;
                    }
                    k -= len;
                }
                let overlaps = chosen.iter().any(|&c| cand < c + w && c < cand + w);
                // after many rejections the region is too small for disjoint windows
                if !overlaps || attempt == 999 {
                    pick = Some(cand);
                    break;
                }
            }
            chosen.push(pick.expect("loop always picks"));
        }
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|s| make(s, Label::NonSeizure)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubWindowSequence {
    pub sub_windows: Vec<Array2<f64>>,
}

impl SubWindowSequence {
    pub fn concatenate(&self) -> Array2<f64> {
        let views: Vec<_> = self.sub_windows.iter().map(|m| m.view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    }
}

/// T contiguous equal slices of a W×C block, in temporal order.
pub fn split_rows(x: &Array2<f64>, parts: usize) -> Result<Vec<Array2<f64>>> {
    let len = x.nrows();
    if parts == 0 || !len.is_multiple_of(parts) {
        return Err(Error::NotDivisible { len, parts });
    }
    let step = len / parts;
    Ok((0..parts)
        .map(|t| x.slice(s![t * step..(t + 1) * step, ..]).to_owned())
        .collect())
}

pub fn split_subwindows(w: &LabeledWindow, parts: usize) -> Result<SubWindowSequence> {
    Ok(SubWindowSequence {
        sub_windows: split_rows(&w.samples, parts)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn take<T: Clone>(&self, ds: &[T]) -> (Vec<T>, Vec<T>) {
        (
            self.train.iter().map(|&i| ds[i].clone()).collect(),
            self.test.iter().map(|&i| ds[i].clone()).collect(),
        )
    }
}

/// Stratified seeded split; each class contributes `round(n_class · f)`
/// test items, clamped so both sides keep at least one of every class.
pub fn train_test_split<T: Labeled>(ds: &[T], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in [Label::NonSeizure, Label::Seizure] {
        let mut idx: Vec<usize> = (0..ds.len()).filter(|&i| ds[i].label() == label).collect();
        if idx.len() < 2 {
            return Err(Error::ClassTooSmall {
                label: label.as_u8(),
                count: idx.len(),
                min: 2,
            });
        }
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * test_fraction).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}
