//! Interleaved test-then-train evaluation, grid selection over a stream head,
//! and the series CSV format.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::{BelsConfig, BelsModel};
use crate::error::{BelsError, Result};
use crate::linalg::Matrix;
use crate::stream::{Chunk, Sample, StreamConfig, StreamSource, VecStream};

pub const DEFAULT_WINDOW: usize = 1000;
pub const SERIES_HEADER: &str =
    "chunk_index,samples_seen,cumulative_accuracy,window_accuracy,cs_per_1000";

/// Anything that can be evaluated prequentially.
pub trait Learner {
    fn chunk_size(&self) -> usize;
    /// Label-free prediction for a chunk.
    fn predict(&mut self, x: &Matrix) -> Result<Vec<usize>>;
    /// Training on the chunk just predicted.
    fn learn(&mut self, x: &Matrix, y: &Matrix) -> Result<()>;
    fn config_echo(&self) -> Option<BelsConfig> {
        None
    }
}

impl Learner for BelsModel {
    fn chunk_size(&self) -> usize {
        self.config.chunk_size
    }
    fn predict(&mut self, x: &Matrix) -> Result<Vec<usize>> {
        BelsModel::predict(self, x)
    }
    fn learn(&mut self, x: &Matrix, y: &Matrix) -> Result<()> {
        BelsModel::learn(self, x, y).map(|_| ())
    }
    fn config_echo(&self) -> Option<BelsConfig> {
        Some(self.config.clone())
    }
}

impl<L: Learner + ?Sized> Learner for &mut L {
    fn chunk_size(&self) -> usize {
        (**self).chunk_size()
    }
    fn predict(&mut self, x: &Matrix) -> Result<Vec<usize>> {
        (**self).predict(x)
    }
    fn learn(&mut self, x: &Matrix, y: &Matrix) -> Result<()> {
        (**self).learn(x, y)
    }
    fn config_echo(&self) -> Option<BelsConfig> {
        (**self).config_echo()
    }
}

/// Holds a chunk's labels and counts every access made while sealed.
#[derive(Debug)]
pub struct SealedLabels {
    y: Matrix,
    sealed: bool,
    reads_while_sealed: u64,
}

impl SealedLabels {
    pub fn new(y: Matrix) -> Self {
        Self {
            y,
            sealed: true,
            reads_while_sealed: 0,
        }
    }

    pub fn unseal(&mut self) {
        self.sealed = false;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn read(&mut self) -> &Matrix {
        if self.sealed {
            self.reads_while_sealed += 1;
        }
        &self.y
    }

    pub fn reads_while_sealed(&self) -> u64 {
        self.reads_while_sealed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrequentialRecord {
    pub chunk_index: usize,
    pub samples_seen: usize,
    pub cumulative_accuracy: f64,
    pub window_accuracy: f64,
    pub cs_per_1000: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrequentialSeries {
    pub records: Vec<PrequentialRecord>,
    pub final_accuracy: f64,
    pub cs_per_1000: f64,
    pub config_echo: Option<BelsConfig>,
}

#[cfg(not(target_arch = "wasm32"))]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = std::time::Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

// No monotonic clock on wasm32-unknown-unknown; runtimes read as zero there.
#[cfg(target_arch = "wasm32")]
fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    (f(), 0.0)
}

/// Incremental prequential bookkeeping. Serializable so a run can resume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluator {
    window: usize,
    correct: u64,
    seen: u64,
    recent: VecDeque<bool>,
    recent_correct: usize,
    elapsed_secs: f64,
    records: Vec<PrequentialRecord>,
    label_reads_during_predict: u64,
}

impl Evaluator {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(BelsError::InvalidConfig("window must be >= 1".into()));
        }
        Ok(Self {
            window,
            correct: 0,
            seen: 0,
            recent: VecDeque::with_capacity(window),
            recent_correct: 0,
            elapsed_secs: 0.0,
            records: Vec::new(),
            label_reads_during_predict: 0,
        })
    }

    pub fn samples_seen(&self) -> usize {
        self.seen as usize
    }

    pub fn chunks_seen(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[PrequentialRecord] {
        &self.records
    }

    pub fn label_reads_during_predict(&self) -> u64 {
        self.label_reads_during_predict
    }

    pub fn cs_per_1000(&self) -> f64 {
        if self.seen == 0 {
            0.0
        } else {
            self.elapsed_secs * 100.0 * 1000.0 / self.seen as f64
        }
    }

    /// One test-then-train cycle. Labels stay sealed until prediction is done.
    pub fn step<L: Learner + ?Sized>(
        &mut self,
        learner: &mut L,
        chunk: Chunk,
    ) -> Result<&PrequentialRecord> {
        let Chunk { x, y, .. } = chunk;
        let mut labels = SealedLabels::new(y);
        let (prediction, t_predict) = timed(|| learner.predict(&x));
        let prediction = prediction?;
        self.label_reads_during_predict += labels.reads_while_sealed();
        labels.unseal();
        let y = labels.read();
        if prediction.len() != x.rows() {
            return Err(BelsError::shape(
                "evaluate",
                format!("{} predictions for {} rows", prediction.len(), x.rows()),
            ));
        }
        for (r, &p) in prediction.iter().enumerate() {
            let hit = p < y.cols() && y.get(r, p) == 1.0;
            self.correct += u64::from(hit);
            self.seen += 1;
            self.recent.push_back(hit);
            self.recent_correct += usize::from(hit);
            if self.recent.len() > self.window {
                let old = self.recent.pop_front().expect("non-empty window");
                self.recent_correct -= usize::from(old);
            }
        }
        let (trained, t_learn) = timed(|| learner.learn(&x, y));
        trained?;
        self.elapsed_secs += t_predict + t_learn;
        self.records.push(PrequentialRecord {
            chunk_index: self.records.len(),
            samples_seen: self.seen as usize,
            cumulative_accuracy: self.correct as f64 / self.seen as f64,
            window_accuracy: self.recent_correct as f64 / self.recent.len() as f64,
            cs_per_1000: self.cs_per_1000(),
        });
        Ok(self.records.last().expect("record just pushed"))
    }

    pub fn finish(self, config_echo: Option<BelsConfig>) -> Result<PrequentialSeries> {
        let final_accuracy = self
            .records
            .last()
            .ok_or(BelsError::EmptyStream)?
            .cumulative_accuracy;
        let cs_per_1000 = self.cs_per_1000();
        Ok(PrequentialSeries {
            records: self.records,
            final_accuracy,
            cs_per_1000,
            config_echo,
        })
    }
}

/// Runs the learner over the whole stream, test-then-train per chunk.
pub fn evaluate<L, S>(learner: &mut L, stream: &mut S, window: usize) -> Result<PrequentialSeries>
where
    L: Learner + ?Sized,
    S: StreamSource + ?Sized,
{
    let mut eval = Evaluator::new(window)?;
    evaluate_from(learner, stream, &mut eval, None)?;
    eval.finish(learner.config_echo())
}

/// Callback run after every test-then-train cycle.
pub type ChunkHook<'a, L> = &'a mut dyn FnMut(&L, &Evaluator) -> Result<()>;

/// Continues `eval` until the stream ends, calling `on_chunk` after each
/// cycle (used for progress output and periodic snapshots).
pub fn evaluate_from<L, S>(
    learner: &mut L,
    stream: &mut S,
    eval: &mut Evaluator,
    mut on_chunk: Option<ChunkHook<'_, L>>,
) -> Result<()>
where
    L: Learner + ?Sized,
    S: StreamSource + ?Sized,
{
    let size = learner.chunk_size();
    if size == 0 {
        return Err(BelsError::InvalidConfig("chunk size must be >= 1".into()));
    }
    while let Some(chunk) = stream.next_chunk(size, eval.samples_seen())? {
        eval.step(learner, chunk)?;
        if let Some(cb) = on_chunk.as_mut() {
            cb(learner, eval)?;
        }
    }
    Ok(())
}

/// The 15-candidate default grid: three presets times five chunk sizes,
/// preset-major.
pub fn default_grid() -> Vec<BelsConfig> {
    let presets = [
        BelsConfig::bels1(),
        BelsConfig::bels2(),
        BelsConfig::bels3(),
    ];
    presets
        .iter()
        .flat_map(|p| [2, 5, 10, 20, 50].map(|sc| p.clone().with_chunk_size(sc)))
        .collect()
}

/// Head length used for selection: 1000 samples, or 100 for streams
/// shorter than 2000.
pub fn head_len(stream_len: Option<usize>) -> usize {
    match stream_len {
        Some(n) if n < 2000 => 100.min(n),
        _ => 1000,
    }
}

pub fn take_head<S: StreamSource + ?Sized>(stream: &mut S, n: usize) -> Vec<Sample> {
    std::iter::from_fn(|| stream.next_sample())
        .take(n)
        .collect()
}

/// Deterministic relative cost of a candidate on `n_samples`: per chunk, each
/// active output layer accumulates `S_c * w^2` and solves a `w x w` system.
pub fn runtime_estimate(config: &BelsConfig, n_samples: usize) -> f64 {
    let w = config.width() as f64;
    let sc = config.chunk_size as f64;
    let chunks = (n_samples as f64 / sc).ceil();
    let layers = if config.variant.is_ensemble() {
        config.m_o as f64
    } else {
        1.0
    };
    chunks * layers * (sc * w * w + w * w * w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridOutcome {
    pub index: usize,
    pub config: BelsConfig,
    pub accuracies: Vec<f64>,
}

/// Evaluates each candidate from scratch on `head` and returns the most
/// accurate, breaking ties by [`runtime_estimate`] and then grid order.
pub fn grid_select(
    head: &[Sample],
    n_features: usize,
    n_classes: usize,
    candidates: &[BelsConfig],
) -> Result<GridOutcome> {
    if candidates.is_empty() {
        return Err(BelsError::InvalidConfig("grid has no candidates".into()));
    }
    if head.is_empty() {
        return Err(BelsError::EmptyStream);
    }
    if candidates.len() == 1 {
        return Ok(GridOutcome {
            index: 0,
            config: candidates[0].clone(),
            accuracies: vec![],
        });
    }
    let mut accuracies = Vec::with_capacity(candidates.len());
    for cfg in candidates {
        let mut model = BelsModel::new(cfg.clone(), n_features, n_classes)?;
        let mut replay = VecStream::new(head.to_vec(), n_features, n_classes);
        accuracies.push(evaluate(&mut model, &mut replay, DEFAULT_WINDOW)?.final_accuracy);
    }
    let index = (0..candidates.len())
        .min_by(|&a, &b| {
            accuracies[b]
                .total_cmp(&accuracies[a])
                .then(
                    runtime_estimate(&candidates[a], head.len())
                        .total_cmp(&runtime_estimate(&candidates[b], head.len())),
                )
                .then(a.cmp(&b))
        })
        .expect("non-empty grid");
    Ok(GridOutcome {
        index,
        config: candidates[index].clone(),
        accuracies,
    })
}

/// Grid selection on a fresh replica of the configured stream; the chosen
/// config inherits `seed`.
pub fn select_for_stream(
    stream: &StreamConfig,
    seed: u64,
    candidates: &[BelsConfig],
) -> Result<GridOutcome> {
    let mut source = stream.build(seed)?;
    let n = head_len(source.remaining());
    let head = take_head(&mut source, n);
    let candidates: Vec<BelsConfig> = candidates
        .iter()
        .map(|c| c.clone().with_seed(seed))
        .collect();
    grid_select(&head, source.n_features(), source.n_classes(), &candidates)
}

/// Builds the stream and a fresh model, then evaluates the whole stream.
pub fn run_variant(
    config: &BelsConfig,
    stream: &StreamConfig,
    stream_seed: u64,
    window: usize,
) -> Result<PrequentialSeries> {
    let mut source = stream.build(stream_seed)?;
    let mut model = BelsModel::new(config.clone(), source.n_features(), source.n_classes())?;
    evaluate(&mut model, &mut source, window)
}

pub fn format_series(series: &PrequentialSeries) -> String {
    let mut out = String::with_capacity(64 * (series.records.len() + 2));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for r in &series.records {
        let _ = writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            r.chunk_index, r.samples_seen, r.cumulative_accuracy, r.window_accuracy, r.cs_per_1000
        );
    }
    let _ = writeln!(
        out,
        "#summary,final_accuracy={:.6},cs_per_1000={:.6}",
        series.final_accuracy, series.cs_per_1000
    );
    out
}

pub fn write_series(series: &PrequentialSeries, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_series(series))?;
    Ok(())
}

/// Parses a file written by [`write_series`]. The config echo is not stored
/// in the CSV and comes back as `None`.
pub fn read_series(path: impl AsRef<Path>) -> Result<PrequentialSeries> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => BelsError::FileNotFound(path.to_path_buf()),
        _ => BelsError::Io(e),
    })?;
    parse_series(&text)
}

pub fn parse_series(text: &str) -> Result<PrequentialSeries> {
    let bad = |line: usize, message: String| BelsError::Parse { line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SERIES_HEADER => {}
        _ => return Err(bad(1, "missing series header".into())),
    }
    let mut records = Vec::new();
    let mut summary = None;
    for (i, line) in lines {
        let n = i + 1;
        if let Some(rest) = line.strip_prefix("#summary,") {
            let mut acc = None;
            let mut cs = None;
            for kv in rest.split(',') {
                match kv.split_once('=') {
                    Some(("final_accuracy", v)) => acc = v.parse::<f64>().ok(),
                    Some(("cs_per_1000", v)) => cs = v.parse::<f64>().ok(),
                    _ => return Err(bad(n, format!("unexpected summary field `{kv}`"))),
                }
            }
            summary = Some((
                acc.ok_or_else(|| bad(n, "summary lacks final_accuracy".into()))?,
                cs.ok_or_else(|| bad(n, "summary lacks cs_per_1000".into()))?,
            ));
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad(n, format!("expected 5 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(n, format!("`{s}`: {e}")));
        let int = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| bad(n, format!("`{s}`: {e}")))
        };
        records.push(PrequentialRecord {
            chunk_index: int(f[0])?,
            samples_seen: int(f[1])?,
            cumulative_accuracy: num(f[2])?,
            window_accuracy: num(f[3])?,
            cs_per_1000: num(f[4])?,
        });
    }
    let (final_accuracy, cs_per_1000) =
        summary.ok_or_else(|| bad(text.lines().count(), "missing #summary line".into()))?;
    Ok(PrequentialSeries {
        records,
        final_accuracy,
        cs_per_1000,
        config_echo: None,
    })
}
