//! Labelled data streams: synthetic drifting generators, CSV ingestion and
//! the adapters that turn samples into chunks.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{BelsError, Result};
use crate::linalg::Matrix;

/// One labelled observation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: usize,
}

/// A mini-batch of consecutive samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub x: Matrix,
    /// One-hot labels.
    pub y: Matrix,
    /// Stream position of the first row.
    pub start_index: usize,
}

impl Chunk {
    pub fn from_samples(samples: &[Sample], n_classes: usize, start_index: usize) -> Result<Self> {
        let d = samples.first().map_or(0, |s| s.x.len());
        let mut data = Vec::with_capacity(samples.len() * d);
        for s in samples {
            if s.x.len() != d {
                return Err(BelsError::shape("Chunk::from_samples", "ragged samples"));
            }
            if s.label >= n_classes {
                return Err(BelsError::shape(
                    "Chunk::from_samples",
                    format!("label {} outside {n_classes} classes", s.label),
                ));
            }
            data.extend_from_slice(&s.x);
        }
        let x = Matrix::from_vec(samples.len(), d, data)?;
        let y = one_hot(
            &samples.iter().map(|s| s.label).collect::<Vec<_>>(),
            n_classes,
        );
        Ok(Self { x, y, start_index })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn labels(&self) -> Vec<usize> {
        (0..self.y.rows()).map(|r| self.y.row_argmax(r)).collect()
    }
}

pub fn one_hot(labels: &[usize], n_classes: usize) -> Matrix {
    let mut y = Matrix::zeros(labels.len(), n_classes);
    for (r, &l) in labels.iter().enumerate() {
        y.set(r, l, 1.0);
    }
    y
}

/// A sequential, single-consumer source of labelled samples.
pub trait StreamSource {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Samples left, or `None` when unbounded.
    fn remaining(&self) -> Option<usize>;
    fn next_sample(&mut self) -> Option<Sample>;

    /// Pulls up to `size` samples; `None` once the stream is exhausted.
    fn next_chunk(&mut self, size: usize, start_index: usize) -> Result<Option<Chunk>> {
        let mut buf = Vec::with_capacity(size);
        while buf.len() < size {
            match self.next_sample() {
                Some(s) => buf.push(s),
                None => break,
            }
        }
        if buf.is_empty() {
            return Ok(None);
        }
        Chunk::from_samples(&buf, self.n_classes(), start_index).map(Some)
    }
}

impl<S: StreamSource + ?Sized> StreamSource for Box<S> {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn n_classes(&self) -> usize {
        (**self).n_classes()
    }
    fn remaining(&self) -> Option<usize> {
        (**self).remaining()
    }
    fn next_sample(&mut self) -> Option<Sample> {
        (**self).next_sample()
    }
}

/// Replays an in-memory list of samples.
#[derive(Clone, Debug)]
pub struct VecStream {
    samples: Vec<Sample>,
    pos: usize,
    n_features: usize,
    n_classes: usize,
}

impl VecStream {
    pub fn new(samples: Vec<Sample>, n_features: usize, n_classes: usize) -> Self {
        Self {
            samples,
            pos: 0,
            n_features,
            n_classes,
        }
    }
}

impl StreamSource for VecStream {
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn n_classes(&self) -> usize {
        self.n_classes
    }
    fn remaining(&self) -> Option<usize> {
        Some(self.samples.len() - self.pos)
    }
    fn next_sample(&mut self) -> Option<Sample> {
        let s = self.samples.get(self.pos).cloned()?;
        self.pos += 1;
        Some(s)
    }
}

/// Truncates a stream after `limit` samples.
pub struct Limited<S> {
    inner: S,
    left: usize,
}

impl<S: StreamSource> Limited<S> {
    pub fn new(inner: S, limit: usize) -> Self {
        Self { inner, left: limit }
    }
}

impl<S: StreamSource> StreamSource for Limited<S> {
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }
    fn remaining(&self) -> Option<usize> {
        Some(
            self.inner
                .remaining()
                .map_or(self.left, |r| r.min(self.left)),
        )
    }
    fn next_sample(&mut self) -> Option<Sample> {
        if self.left == 0 {
            return None;
        }
        self.left -= 1;
        self.inner.next_sample()
    }
}

/// Running per-feature standardization. Sample `t` is scaled with the mean
/// and deviation of samples `1..t-1` only; features whose deviation is still
/// below `1e-12` map to zero.
pub struct Standardized<S> {
    inner: S,
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

pub const SIGMA_FLOOR: f64 = 1e-12;

impl<S: StreamSource> Standardized<S> {
    pub fn new(inner: S) -> Self {
        let d = inner.n_features();
        Self {
            inner,
            count: 0,
            mean: vec![0.0; d],
            m2: vec![0.0; d],
        }
    }
}

impl<S: StreamSource> StreamSource for Standardized<S> {
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }
    fn remaining(&self) -> Option<usize> {
        self.inner.remaining()
    }
    fn next_sample(&mut self) -> Option<Sample> {
        let raw = self.inner.next_sample()?;
        let n = self.count as f64;
        let scaled = raw
            .x
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                let sigma = if self.count > 0 {
                    (self.m2[j] / n).sqrt()
                } else {
                    0.0
                };
                if sigma > SIGMA_FLOOR {
                    (v - self.mean[j]) / sigma
                } else {
                    0.0
                }
            })
            .collect();
        self.count += 1;
        let n = self.count as f64;
        for (j, &v) in raw.x.iter().enumerate() {
            let delta = v - self.mean[j];
            self.mean[j] += delta / n;
            self.m2[j] += delta * (v - self.mean[j]);
        }
        Some(Sample {
            x: scaled,
            label: raw.label,
        })
    }
}

/// A stationary data-generating concept.
pub trait Concept {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Sample;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Transition {
    #[default]
    Abrupt,
    /// Over `width` samples after each boundary, the new concept is drawn
    /// with probability rising linearly from 0 to 1.
    Gradual { width: usize },
}

/// A sequence of concepts with fixed segment lengths.
pub struct DriftSchedule {
    pub segments: Vec<(Box<dyn Concept>, usize)>,
    pub transition: Transition,
}

impl DriftSchedule {
    pub fn new(segments: Vec<(Box<dyn Concept>, usize)>, transition: Transition) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| BelsError::InvalidConfig("drift schedule needs a segment".into()))?;
        let (d, c) = (first.0.n_features(), first.0.n_classes());
        for (concept, len) in &segments {
            if *len == 0 {
                return Err(BelsError::InvalidConfig(
                    "segment lengths must be >= 1".into(),
                ));
            }
            if concept.n_features() != d || concept.n_classes() != c {
                return Err(BelsError::InvalidConfig(
                    "all segments must share feature and class counts".into(),
                ));
            }
            if let Transition::Gradual { width } = transition {
                if width >= *len {
                    return Err(BelsError::InvalidConfig(format!(
                        "gradual width {width} must be shorter than segment length {len}"
                    )));
                }
            }
        }
        Ok(Self {
            segments,
            transition,
        })
    }

    pub fn into_stream(self, seed: u64) -> ScheduledStream {
        ScheduledStream {
            schedule: self,
            rng: ChaCha8Rng::seed_from_u64(seed),
            segment: 0,
            offset: 0,
        }
    }
}

/// Stream produced by walking a [`DriftSchedule`]. A segment length of
/// `usize::MAX` never ends.
pub struct ScheduledStream {
    schedule: DriftSchedule,
    rng: ChaCha8Rng,
    segment: usize,
    offset: usize,
}

impl StreamSource for ScheduledStream {
    fn n_features(&self) -> usize {
        self.schedule.segments[0].0.n_features()
    }

    fn n_classes(&self) -> usize {
        self.schedule.segments[0].0.n_classes()
    }

    fn remaining(&self) -> Option<usize> {
        let mut total = 0usize;
        for (i, (_, len)) in self.schedule.segments.iter().enumerate().skip(self.segment) {
            if *len == usize::MAX {
                return None;
            }
            total += if i == self.segment {
                len - self.offset
            } else {
                *len
            };
        }
        Some(total)
    }

    fn next_sample(&mut self) -> Option<Sample> {
        let segs = &mut self.schedule.segments;
        while self.segment < segs.len() && self.offset >= segs[self.segment].1 {
            self.segment += 1;
            self.offset = 0;
        }
        if self.segment >= segs.len() {
            return None;
        }
        let mut source = self.segment;
        if let Transition::Gradual { width } = self.schedule.transition {
            if self.segment > 0 && self.offset < width {
                let p_new = (self.offset + 1) as f64 / (width + 1) as f64;
                if !self.rng.gen_bool(p_new) {
                    source = self.segment - 1;
                }
            }
        }
        self.offset += 1;
        Some(segs[source].0.draw(&mut self.rng))
    }
}

/// Standard SEA thresholds on `f1 + f2` for functions 0..=3.
pub const SEA_THRESHOLDS: [f64; 4] = [8.0, 9.0, 7.0, 9.5];

/// SEA concept: three features uniform on [0, 10]; class 1 iff
/// `f1 + f2 <= threshold`, then the label is flipped with probability `noise`.
#[derive(Clone, Debug)]
pub struct SeaConcept {
    pub threshold: f64,
    pub noise: f64,
}

impl SeaConcept {
    pub fn clean_label(&self, x: &[f64]) -> usize {
        usize::from(x[0] + x[1] <= self.threshold)
    }
}

impl Concept for SeaConcept {
    fn n_features(&self) -> usize {
        3
    }
    fn n_classes(&self) -> usize {
        2
    }
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Sample {
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..10.0)).collect();
        let mut label = self.clean_label(&x);
        if self.noise > 0.0 && rng.gen_bool(self.noise) {
            label = 1 - label;
        }
        Sample { x, label }
    }
}

/// SEA stream cycling through `functions`, switching every `segment_len`.
pub fn sea_stream(
    functions: &[usize],
    segment_len: usize,
    noise: f64,
    seed: u64,
) -> Result<ScheduledStream> {
    sea_stream_with(functions, segment_len, noise, Transition::Abrupt, seed)
}

pub fn sea_stream_with(
    functions: &[usize],
    segment_len: usize,
    noise: f64,
    transition: Transition,
    seed: u64,
) -> Result<ScheduledStream> {
    if functions.is_empty() {
        return Err(BelsError::InvalidConfig(
            "SEA needs at least one function".into(),
        ));
    }
    if !(0.0..0.5).contains(&noise) {
        return Err(BelsError::InvalidConfig(format!(
            "SEA noise must lie in [0, 0.5), got {noise}"
        )));
    }
    let segments = functions
        .iter()
        .map(|&f| {
            let threshold = *SEA_THRESHOLDS.get(f).ok_or_else(|| {
                BelsError::InvalidConfig(format!("SEA function must be 0..=3, got {f}"))
            })?;
            Ok((
                Box::new(SeaConcept { threshold, noise }) as Box<dyn Concept>,
                segment_len,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DriftSchedule::new(segments, transition)?.into_stream(seed))
}

/// Rotating hyperplane: x uniform on [0, 1]^d, class 1 iff
/// `sum w_i x_i >= sum w_i / 2`. Each weight moves by `drift_per_sample`
/// per sample in a fixed random direction.
#[derive(Clone, Debug)]
pub struct HyperplaneConcept {
    pub weights: Vec<f64>,
    pub directions: Vec<f64>,
    pub drift_per_sample: f64,
    pub noise: f64,
}

impl HyperplaneConcept {
    pub fn new(d: usize, drift_per_sample: f64, noise: f64, rng: &mut ChaCha8Rng) -> Self {
        let weights = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
        let directions = (0..d)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        Self {
            weights,
            directions,
            drift_per_sample,
            noise,
        }
    }

    pub fn clean_label(&self, x: &[f64]) -> usize {
        let dot: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        let threshold = 0.5 * self.weights.iter().sum::<f64>();
        usize::from(dot >= threshold)
    }
}

impl Concept for HyperplaneConcept {
    fn n_features(&self) -> usize {
        self.weights.len()
    }
    fn n_classes(&self) -> usize {
        2
    }
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Sample {
        let x: Vec<f64> = (0..self.weights.len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let mut label = self.clean_label(&x);
        if self.noise > 0.0 && rng.gen_bool(self.noise) {
            label = 1 - label;
        }
        for (w, dir) in self.weights.iter_mut().zip(&self.directions) {
            *w += dir * self.drift_per_sample;
        }
        Sample { x, label }
    }
}

/// Unbounded rotating-hyperplane stream.
pub fn hyperplane_stream(d: usize, drift_per_sample: f64, seed: u64) -> Result<ScheduledStream> {
    hyperplane_stream_with(d, drift_per_sample, 0.0, seed)
}

pub fn hyperplane_stream_with(
    d: usize,
    drift_per_sample: f64,
    noise: f64,
    seed: u64,
) -> Result<ScheduledStream> {
    if d < 2 {
        return Err(BelsError::InvalidConfig(format!(
            "hyperplane needs d >= 2, got {d}"
        )));
    }
    if !(0.0..0.5).contains(&noise) || !drift_per_sample.is_finite() {
        return Err(BelsError::InvalidConfig(
            "invalid hyperplane noise or drift".into(),
        ));
    }
    let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let concept = HyperplaneConcept::new(d, drift_per_sample, noise, &mut init);
    Ok(
        DriftSchedule::new(vec![(Box::new(concept), usize::MAX)], Transition::Abrupt)?
            .into_stream(seed),
    )
}

/// Seven-segment patterns for digits 0..=9, segment order
/// top, upper-left, upper-right, middle, lower-left, lower-right, bottom.
pub const LED_SEGMENTS: [[u8; 7]; 10] = [
    [1, 1, 1, 0, 1, 1, 1],
    [0, 0, 1, 0, 0, 1, 0],
    [1, 0, 1, 1, 1, 0, 1],
    [1, 0, 1, 1, 0, 1, 1],
    [0, 1, 1, 1, 0, 1, 0],
    [1, 1, 0, 1, 0, 1, 1],
    [1, 1, 0, 1, 1, 1, 1],
    [1, 0, 1, 0, 0, 1, 0],
    [1, 1, 1, 1, 1, 1, 1],
    [1, 1, 1, 1, 0, 1, 1],
];

pub const LED_FEATURES: usize = 24;

/// LED display: 7 relevant segment bits plus 17 random irrelevant bits.
/// `layout[j]` is the output position of logical attribute `j`.
#[derive(Clone, Debug)]
pub struct LedConcept {
    pub noise: f64,
    pub layout: Vec<usize>,
}

impl LedConcept {
    pub fn identity(noise: f64) -> Self {
        Self {
            noise,
            layout: (0..LED_FEATURES).collect(),
        }
    }
}

impl Concept for LedConcept {
    fn n_features(&self) -> usize {
        LED_FEATURES
    }
    fn n_classes(&self) -> usize {
        10
    }
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Sample {
        let digit = rng.gen_range(0..10);
        let mut logical = [0.0; LED_FEATURES];
        for (j, &bit) in LED_SEGMENTS[digit].iter().enumerate() {
            let flip = self.noise > 0.0 && rng.gen_bool(self.noise);
            logical[j] = f64::from(bit ^ u8::from(flip));
        }
        for v in logical.iter_mut().skip(7) {
            *v = f64::from(u8::from(rng.gen_bool(0.5)));
        }
        let mut x = vec![0.0; LED_FEATURES];
        for (j, &pos) in self.layout.iter().enumerate() {
            x[pos] = logical[j];
        }
        Sample { x, label: digit }
    }
}

/// LED stream of `length` samples (unbounded if `None`). If `drift_at` is
/// given, the first `drifting_features` segment bits swap places with
/// randomly chosen irrelevant attributes from that sample on.
pub fn led_stream(
    drifting_features: usize,
    noise: f64,
    drift_at: Option<usize>,
    length: Option<usize>,
    seed: u64,
) -> Result<ScheduledStream> {
    if drifting_features > 7 {
        return Err(BelsError::InvalidConfig(format!(
            "at most 7 drifting features, got {drifting_features}"
        )));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(BelsError::InvalidConfig(format!(
            "LED noise must lie in [0, 1), got {noise}"
        )));
    }
    let total = length.unwrap_or(usize::MAX);
    let before = LedConcept::identity(noise);
    let segments: Vec<(Box<dyn Concept>, usize)> = match drift_at {
        Some(at) if at > 0 && at < total && drifting_features > 0 => {
            let mut init = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
            let mut irrelevant: Vec<usize> = (7..LED_FEATURES).collect();
            irrelevant.shuffle(&mut init);
            let mut after = LedConcept::identity(noise);
            for (j, &other) in irrelevant.iter().take(drifting_features).enumerate() {
                after.layout.swap(j, other);
            }
            let rest = if total == usize::MAX {
                usize::MAX
            } else {
                total - at
            };
            vec![(Box::new(before), at), (Box::new(after), rest)]
        }
        _ => vec![(Box::new(before), total)],
    };
    Ok(DriftSchedule::new(segments, Transition::Abrupt)?.into_stream(seed))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GaussianDrift {
    #[default]
    None,
    /// Segment `s` assigns class `c` the mean of class `(c + s) mod C`.
    Interchange,
    /// Every mean moves by `velocity` after each sample.
    Translate { velocity: Vec<f64> },
}

/// Isotropic Gaussian class clusters with equal priors.
#[derive(Clone, Debug)]
pub struct GaussianConcept {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub velocity: Option<Vec<f64>>,
}

impl Concept for GaussianConcept {
    fn n_features(&self) -> usize {
        self.means[0].len()
    }
    fn n_classes(&self) -> usize {
        self.means.len()
    }
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Sample {
        let label = rng.gen_range(0..self.means.len());
        let normal = Normal::new(0.0, self.sigma).expect("sigma validated positive");
        let x = self.means[label]
            .iter()
            .map(|&m| m + normal.sample(rng))
            .collect();
        if let Some(v) = &self.velocity {
            for mean in &mut self.means {
                for (m, dv) in mean.iter_mut().zip(v) {
                    *m += dv;
                }
            }
        }
        Sample { x, label }
    }
}

pub fn gaussian_clusters_stream(
    means: &[Vec<f64>],
    sigma: f64,
    segment_len: usize,
    segments: usize,
    drift: &GaussianDrift,
    seed: u64,
) -> Result<ScheduledStream> {
    if means.len() < 2 {
        return Err(BelsError::InvalidConfig(
            "need at least two class means".into(),
        ));
    }
    let d = means[0].len();
    if d == 0 || means.iter().any(|m| m.len() != d) {
        return Err(BelsError::InvalidConfig(
            "class means must share a dimension >= 1".into(),
        ));
    }
    if !(sigma > 0.0) {
        return Err(BelsError::InvalidConfig(format!(
            "sigma must be > 0, got {sigma}"
        )));
    }
    if segments == 0 {
        return Err(BelsError::InvalidConfig("need at least one segment".into()));
    }
    let k = means.len();
    let concepts: Vec<(Box<dyn Concept>, usize)> = match drift {
        GaussianDrift::Translate { velocity } => {
            if velocity.len() != d {
                return Err(BelsError::InvalidConfig(
                    "velocity dimension mismatch".into(),
                ));
            }
            let total = segment_len.saturating_mul(segments);
            vec![(
                Box::new(GaussianConcept {
                    means: means.to_vec(),
                    sigma,
                    velocity: Some(velocity.clone()),
                }),
                total,
            )]
        }
        _ => (0..segments)
            .map(|s| {
                let shift = if matches!(drift, GaussianDrift::Interchange) {
                    s
                } else {
                    0
                };
                let permuted = (0..k).map(|c| means[(c + shift) % k].clone()).collect();
                (
                    Box::new(GaussianConcept {
                        means: permuted,
                        sigma,
                        velocity: None,
                    }) as Box<dyn Concept>,
                    segment_len,
                )
            })
            .collect(),
    };
    Ok(DriftSchedule::new(concepts, Transition::Abrupt)?.into_stream(seed))
}

/// Which CSV column holds the label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("label".into())
    }
}

/// How raw label strings become class indices.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMapping {
    /// Classes numbered by order of first appearance in the file.
    #[default]
    FirstAppearance,
    /// Labels are already non-negative integer class indices.
    Integer,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    pub label_column: LabelColumn,
    /// `None` detects a header: the first row is a header when none of its
    /// fields parses as a number.
    pub header: Option<bool>,
    pub label_mapping: LabelMapping,
    /// Non-numeric feature columns to one-hot encode, by header name.
    pub categorical: Vec<String>,
}

/// In-memory CSV stream. Rows keep file order.
#[derive(Clone, Debug)]
pub struct CsvStream {
    inner: VecStream,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
}

impl StreamSource for CsvStream {
    fn n_features(&self) -> usize {
        self.inner.n_features()
    }
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }
    fn remaining(&self) -> Option<usize> {
        self.inner.remaining()
    }
    fn next_sample(&mut self) -> Option<Sample> {
        self.inner.next_sample()
    }
}

enum ColumnKind {
    Numeric,
    Categorical(Vec<String>),
}

pub fn csv_stream(path: impl AsRef<Path>, options: &CsvOptions) -> Result<CsvStream> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(BelsError::FileNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(e, path))?;
    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(e, path))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push((line, rec.iter().map(str::to_owned).collect()));
    }
    let has_header = match options.header {
        Some(h) => h,
        None => rows
            .first()
            .is_some_and(|(_, r)| r.iter().all(|f| f.parse::<f64>().is_err())),
    };
    let width = rows.first().map_or(0, |(_, r)| r.len());
    let names: Vec<String> = if has_header {
        rows.remove(0).1
    } else {
        (0..width).map(|i| format!("column{i}")).collect()
    };
    let label_idx = match &options.label_column {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Name(n) => names.iter().position(|c| c == n).ok_or_else(|| {
            BelsError::InvalidConfig(format!(
                "label column `{n}` not found in {}",
                path.display()
            ))
        })?,
        LabelColumn::Index(i) => {
            return Err(BelsError::InvalidConfig(format!(
                "label column {i} out of range for {width} columns"
            )))
        }
    };
    if rows.is_empty() {
        return Err(BelsError::EmptyStream);
    }

    let feature_cols: Vec<usize> = (0..width).filter(|&c| c != label_idx).collect();
    let mut kinds = Vec::with_capacity(feature_cols.len());
    for &c in &feature_cols {
        let numeric = rows
            .iter()
            .all(|(_, r)| r[c].parse::<f64>().is_ok_and(f64::is_finite));
        if numeric {
            kinds.push(ColumnKind::Numeric);
        } else if options.categorical.contains(&names[c]) {
            let mut cats: Vec<String> = Vec::new();
            for (_, r) in &rows {
                if !cats.contains(&r[c]) {
                    cats.push(r[c].clone());
                }
            }
            kinds.push(ColumnKind::Categorical(cats));
        } else {
            return Err(BelsError::NonNumericFeature {
                column: names[c].clone(),
            });
        }
    }
    let mut feature_names = Vec::new();
    for (&c, kind) in feature_cols.iter().zip(&kinds) {
        match kind {
            ColumnKind::Numeric => feature_names.push(names[c].clone()),
            ColumnKind::Categorical(cats) => {
                feature_names.extend(cats.iter().map(|v| format!("{}={v}", names[c])))
            }
        }
    }

    let mut class_index: HashMap<String, usize> = HashMap::new();
    let mut class_names: Vec<String> = Vec::new();
    let mut samples = Vec::with_capacity(rows.len());
    for (line, r) in &rows {
        let raw = &r[label_idx];
        let label = match options.label_mapping {
            LabelMapping::FirstAppearance => {
                if raw.is_empty() {
                    return Err(BelsError::Parse {
                        line: *line,
                        message: "empty label".into(),
                    });
                }
                *class_index.entry(raw.clone()).or_insert_with(|| {
                    class_names.push(raw.clone());
                    class_names.len() - 1
                })
            }
            LabelMapping::Integer => raw.parse::<usize>().map_err(|_| BelsError::Parse {
                line: *line,
                message: format!("label `{raw}` is not a class index"),
            })?,
        };
        let mut x = Vec::with_capacity(feature_names.len());
        for (&c, kind) in feature_cols.iter().zip(&kinds) {
            match kind {
                ColumnKind::Numeric => x.push(r[c].parse::<f64>().expect("checked numeric")),
                ColumnKind::Categorical(cats) => {
                    x.extend(cats.iter().map(|v| if *v == r[c] { 1.0 } else { 0.0 }))
                }
            }
        }
        samples.push(Sample { x, label });
    }
    let n_classes = match options.label_mapping {
        LabelMapping::FirstAppearance => class_names.len(),
        LabelMapping::Integer => {
            let k = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
            class_names = (0..k).map(|i| i.to_string()).collect();
            k
        }
    };
    Ok(CsvStream {
        inner: VecStream::new(samples, feature_names.len(), n_classes.max(2)),
        feature_names,
        class_names,
    })
}

fn csv_error(e: csv::Error, path: &Path) -> BelsError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            BelsError::FileNotFound(path.to_path_buf())
        }
        csv::ErrorKind::Io(io) => BelsError::Io(io),
        other => BelsError::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Serializable description of a stream, as used in run configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamSpec {
    Sea {
        functions: Vec<usize>,
        segment_len: usize,
        #[serde(default)]
        noise: f64,
        #[serde(default)]
        transition: Transition,
    },
    Hyperplane {
        d: usize,
        drift_per_sample: f64,
        length: usize,
        #[serde(default)]
        noise: f64,
    },
    Led {
        #[serde(default)]
        drifting_features: usize,
        #[serde(default)]
        noise: f64,
        length: usize,
        #[serde(default)]
        drift_at: Option<usize>,
    },
    Gaussian {
        means: Vec<Vec<f64>>,
        sigma: f64,
        segment_len: usize,
        #[serde(default = "one")]
        segments: usize,
        #[serde(default)]
        drift: GaussianDrift,
    },
    Csv {
        path: PathBuf,
        #[serde(flatten)]
        options: CsvOptions,
    },
}

fn one() -> usize {
    1
}

/// A stream spec plus preprocessing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    #[serde(flatten)]
    pub spec: StreamSpec,
    #[serde(default)]
    pub standardize: bool,
}

impl StreamConfig {
    /// Builds a fresh source; identical arguments give identical sample
    /// sequences.
    pub fn build(&self, seed: u64) -> Result<Box<dyn StreamSource>> {
        let raw: Box<dyn StreamSource> = match &self.spec {
            StreamSpec::Sea {
                functions,
                segment_len,
                noise,
                transition,
            } => Box::new(sea_stream_with(
                functions,
                *segment_len,
                *noise,
                *transition,
                seed,
            )?),
            StreamSpec::Hyperplane {
                d,
                drift_per_sample,
                length,
                noise,
            } => Box::new(Limited::new(
                hyperplane_stream_with(*d, *drift_per_sample, *noise, seed)?,
                *length,
            )),
            StreamSpec::Led {
                drifting_features,
                noise,
                length,
                drift_at,
            } => Box::new(led_stream(
                *drifting_features,
                *noise,
                *drift_at,
                Some(*length),
                seed,
            )?),
            StreamSpec::Gaussian {
                means,
                sigma,
                segment_len,
                segments,
                drift,
            } => Box::new(gaussian_clusters_stream(
                means,
                *sigma,
                *segment_len,
                *segments,
                drift,
                seed,
            )?),
            StreamSpec::Csv { path, options } => Box::new(csv_stream(path, options)?),
        };
        Ok(if self.standardize {
            Box::new(Standardized::new(raw))
        } else {
            raw
        })
    }
}
