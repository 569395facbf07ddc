//! The drift-handling ensemble of output layers.
//!
//! A single feature space feeds an active set of output layers. Each chunk
//! runs membership maintenance, a label-free test and hard vote, then (once
//! labels are revealed) per-member scoring against the dynamic threshold,
//! the pool audit and training. Members scoring below the threshold are
//! dropped at the next chunk; when more than half of the set is dropped at
//! once they are parked in a pool instead, from which they can come back
//! after beating the re-admission bar.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{BelsError, Result};
use crate::feature_space::{FeatureSpace, FeatureSpaceParams, MuPolicy};
use crate::linalg::Matrix;
use crate::output_layer::{check_one_hot, score_accuracy, OutputLayerInstance};

/// Ablation ladder, from the plain incremental broad network to the full
/// ensemble with pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// One output layer; sparse maps solved from the first chunk only.
    #[serde(rename = "BLS")]
    Bls,
    /// One output layer; feature accumulators updated on every chunk.
    #[serde(rename = "BELS-FPs")]
    BelsFps,
    /// Ensemble without a pool: dropped members are discarded.
    #[serde(rename = "BELS-Ens")]
    BelsEns,
    #[serde(rename = "BELS")]
    Bels,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Bls,
        Variant::BelsFps,
        Variant::BelsEns,
        Variant::Bels,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Bls => "BLS",
            Variant::BelsFps => "BELS-FPs",
            Variant::BelsEns => "BELS-Ens",
            Variant::Bels => "BELS",
        }
    }

    /// Whether the variant keeps more than one output layer.
    pub fn is_ensemble(self) -> bool {
        matches!(self, Variant::BelsEns | Variant::Bels)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = BelsError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| BelsError::InvalidConfig(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BelsConfig {
    /// Feature-mapping groups.
    pub n: usize,
    /// Enhancement groups.
    pub m: usize,
    /// Nodes per feature-mapping group.
    pub g: usize,
    /// Nodes per enhancement group.
    pub h: usize,
    pub chunk_size: usize,
    /// Active-set capacity.
    pub m_o: usize,
    /// Pool capacity.
    pub m_p: usize,
    /// Pool re-admission accuracy bar.
    pub eta: f64,
    /// Removal threshold before any accuracy has been observed, and for the
    /// whole run when `chunk_size == 2`.
    pub initial_delta: f64,
    pub lambda_ridge: f64,
    pub rho: f64,
    pub admm_iters: usize,
    pub kappa: f64,
    pub shrink: f64,
    pub seed: u64,
    pub variant: Variant,
}

impl Default for BelsConfig {
    fn default() -> Self {
        Self {
            n: 25,
            m: 50,
            g: 1,
            h: 1,
            chunk_size: 10,
            m_o: 75,
            m_p: 300,
            eta: 0.5,
            initial_delta: 0.5,
            lambda_ridge: 1e-8,
            rho: 1.0,
            admm_iters: 50,
            kappa: 0.001,
            shrink: 1.0,
            seed: 0,
            variant: Variant::Bels,
        }
    }
}

impl BelsConfig {
    /// n = 25, m = 1.
    pub fn bels1() -> Self {
        Self {
            n: 25,
            m: 1,
            ..Self::default()
        }
    }

    /// n = 25, m = 50.
    pub fn bels2() -> Self {
        Self {
            n: 25,
            m: 50,
            ..Self::default()
        }
    }

    /// n = 100, m = 100.
    pub fn bels3() -> Self {
        Self {
            n: 100,
            m: 100,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "bels1" => Ok(Self::bels1()),
            "bels2" => Ok(Self::bels2()),
            "bels3" => Ok(Self::bels3()),
            other => Err(BelsError::InvalidConfig(format!(
                "unknown preset `{other}`"
            ))),
        }
    }

    pub fn with_chunk_size(mut self, chunk_size: usize) -> Self {
        self.chunk_size = chunk_size;
        self
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Columns of the broad representation.
    pub fn width(&self) -> usize {
        self.n * self.g + self.m * self.h
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BelsError::InvalidConfig(msg));
        if self.n == 0 || self.g == 0 {
            return bad(format!("n and g must be >= 1 (n={}, g={})", self.n, self.g));
        }
        if self.m > 0 && self.h == 0 {
            return bad("h must be >= 1 when m > 0".into());
        }
        if self.chunk_size == 0 {
            return bad("chunk_size must be >= 1".into());
        }
        if self.m_o == 0 {
            return bad("m_o must be >= 1".into());
        }
        for (name, v) in [("eta", self.eta), ("initial_delta", self.initial_delta)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if !(self.lambda_ridge >= 0.0) || !self.lambda_ridge.is_finite() {
            return bad(format!(
                "lambda_ridge must be >= 0, got {}",
                self.lambda_ridge
            ));
        }
        if !(self.rho > 0.0) || !(self.kappa >= 0.0) || self.admm_iters == 0 {
            return bad("rho > 0, kappa >= 0 and admm_iters >= 1 are required".into());
        }
        if !(self.shrink > 0.0) {
            return bad(format!("shrink must be > 0, got {}", self.shrink));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsemblePoolState {
    pub active: Vec<OutputLayerInstance>,
    pub pool: Vec<OutputLayerInstance>,
    /// Pool members eligible to return, oldest pool entry first.
    pub candidates: Vec<u64>,
    /// Positions in `active` that fell below the threshold on the last chunk.
    pub removal_list: Vec<usize>,
    pub delta: f64,
    pub eta: f64,
    pub m_o: usize,
    pub m_p: usize,
    pub overall_correct: u64,
    pub overall_seen: u64,
    pub discarded: u64,
}

impl EnsemblePoolState {
    pub fn overall_accuracy(&self) -> Option<f64> {
        (self.overall_seen > 0).then(|| self.overall_correct as f64 / self.overall_seen as f64)
    }
}

/// Outcome of one test-then-train cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkResult {
    pub ensemble_prediction: Vec<usize>,
    pub ensemble_accuracy: f64,
    /// `(instance id, accuracy)` for every active member that took part in
    /// the test.
    pub per_instance_accuracy: Vec<(u64, f64)>,
}

#[derive(Clone, Debug)]
struct PendingTest {
    a_test: Matrix,
    scores: Vec<Option<Matrix>>,
    prediction: Vec<usize>,
}

/// Hard vote: each score matrix contributes the argmax of every row; the
/// class with the most votes wins, ties going to the lowest index.
pub fn vote(per_instance_scores: &[&Matrix], n_classes: usize) -> Result<Vec<usize>> {
    let first = per_instance_scores
        .first()
        .ok_or_else(|| BelsError::shape("vote", "no score matrices"))?;
    let (rows, cols) = first.shape();
    if cols != n_classes
        || per_instance_scores
            .iter()
            .any(|s| s.shape() != (rows, cols))
    {
        return Err(BelsError::shape(
            "vote",
            format!("score matrices must all be {rows}x{n_classes}"),
        ));
    }
    let mut counts = vec![0u32; n_classes];
    Ok((0..rows)
        .map(|r| {
            counts.iter_mut().for_each(|c| *c = 0);
            for s in per_instance_scores {
                counts[s.row_argmax(r)] += 1;
            }
            let mut best = 0;
            for c in 1..n_classes {
                if counts[c] > counts[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BelsModel {
    pub config: BelsConfig,
    pub feature_space: FeatureSpace,
    pub ensemble: EnsemblePoolState,
    pub next_instance_id: u64,
    pub n_classes: usize,
    pub chunk_index: usize,
    #[serde(skip)]
    pending: Option<PendingTest>,
}

impl PartialEq for BelsModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.feature_space == other.feature_space
            && self.ensemble == other.ensemble
            && self.next_instance_id == other.next_instance_id
            && self.n_classes == other.n_classes
            && self.chunk_index == other.chunk_index
    }
}

impl BelsModel {
    pub fn new(config: BelsConfig, d: usize, n_classes: usize) -> Result<Self> {
        config.validate()?;
        if n_classes < 2 {
            return Err(BelsError::InvalidConfig(format!(
                "need at least two classes, got {n_classes}"
            )));
        }
        let params = FeatureSpaceParams {
            rho: config.rho,
            kappa: config.kappa,
            admm_iters: config.admm_iters,
            shrink: config.shrink,
            mu_policy: match config.variant {
                Variant::Bls => MuPolicy::FirstChunkOnly,
                _ => MuPolicy::EveryChunk,
            },
        };
        let feature_space = FeatureSpace::new(
            d,
            config.n,
            config.m,
            config.g,
            config.h,
            config.seed,
            params,
        )?;
        let ensemble = EnsemblePoolState {
            active: Vec::new(),
            pool: Vec::new(),
            candidates: Vec::new(),
            removal_list: Vec::new(),
            delta: config.initial_delta,
            eta: config.eta,
            m_o: if config.variant.is_ensemble() {
                config.m_o
            } else {
                1
            },
            m_p: config.m_p,
            overall_correct: 0,
            overall_seen: 0,
            discarded: 0,
        };
        Ok(Self {
            config,
            feature_space,
            ensemble,
            next_instance_id: 0,
            n_classes,
            chunk_index: 0,
            pending: None,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_space.d
    }

    /// Total output layers created so far.
    pub fn instances_created(&self) -> u64 {
        self.next_instance_id
    }

    fn fresh_instance(&mut self) -> OutputLayerInstance {
        let id = self.next_instance_id;
        self.next_instance_id += 1;
        OutputLayerInstance::new(
            id,
            self.feature_space.width(),
            self.n_classes,
            self.config.lambda_ridge,
        )
    }

    /// Membership maintenance driven by the previous chunk's test. Removal,
    /// refill and pool truncation run only once the ensemble is full.
    fn maintain(&mut self) {
        if !self.config.variant.is_ensemble() {
            if self.ensemble.active.is_empty() {
                let fresh = self.fresh_instance();
                self.ensemble.active.push(fresh);
            }
            return;
        }
        let was_full = self.ensemble.active.len() >= self.ensemble.m_o;
        if !was_full {
            let fresh = self.fresh_instance();
            self.ensemble.active.push(fresh);
        }
        let ens = &mut self.ensemble;
        if was_full {
            let mass_removal = ens.removal_list.len() > ens.active.len() / 2;
            let mut idx = std::mem::take(&mut ens.removal_list);
            idx.sort_unstable();
            idx.dedup();
            let mut removed: Vec<OutputLayerInstance> = Vec::with_capacity(idx.len());
            for &i in idx.iter().rev() {
                if i < ens.active.len() {
                    removed.push(ens.active.remove(i));
                }
            }
            removed.reverse();
            if mass_removal && self.config.variant == Variant::Bels {
                ens.pool.extend(removed);
            } else {
                ens.discarded += removed.len() as u64;
            }
            for id in std::mem::take(&mut ens.candidates) {
                if ens.active.len() >= ens.m_o {
                    break;
                }
                if let Some(pos) = ens.pool.iter().position(|p| p.id == id) {
                    ens.active.push(ens.pool.remove(pos));
                }
            }
            if ens.pool.len() > ens.m_p {
                let excess = ens.pool.len() - ens.m_p;
                ens.pool.drain(..excess);
                ens.discarded += excess as u64;
            }
        }
        self.ensemble.removal_list.clear();
        self.ensemble.candidates.clear();
        if self.ensemble.active.is_empty() {
            let fresh = self.fresh_instance();
            self.ensemble.active.push(fresh);
        }
    }

    fn check_x(&self, x: &Matrix, op: &'static str) -> Result<()> {
        if x.cols() != self.n_features() || x.rows() == 0 {
            return Err(BelsError::shape(
                op,
                format!(
                    "chunk is {:?}, model expects {} features and at least one row",
                    x.shape(),
                    self.n_features()
                ),
            ));
        }
        Ok(())
    }

    /// Label-free half of a cycle: maintenance, test and hard vote.
    /// Returns the ensemble's class predictions for `x`.
    pub fn predict(&mut self, x: &Matrix) -> Result<Vec<usize>> {
        self.check_x(x, "predict")?;
        self.maintain();
        let a_test = self.feature_space.transform(x)?;
        let scores = self
            .ensemble
            .active
            .iter()
            .map(|ol| {
                ol.is_trained()
                    .then(|| ol.predict_scores(&a_test))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let voters: Vec<&Matrix> = scores.iter().flatten().collect();
        let prediction = if voters.is_empty() {
            vec![0; x.rows()]
        } else {
            vote(&voters, self.n_classes)?
        };
        self.pending = Some(PendingTest {
            a_test,
            scores,
            prediction: prediction.clone(),
        });
        Ok(prediction)
    }

    /// Label-dependent half of a cycle: member accuracies and the removal
    /// list, threshold update, pool audit, then training. Runs
    /// [`predict`](Self::predict) first if it has not been called for `x`.
    pub fn learn(&mut self, x: &Matrix, y: &Matrix) -> Result<ChunkResult> {
        self.check_x(x, "learn")?;
        if y.rows() != x.rows() || y.cols() != self.n_classes {
            return Err(BelsError::shape(
                "learn",
                format!(
                    "labels {:?} for {} rows and {} classes",
                    y.shape(),
                    x.rows(),
                    self.n_classes
                ),
            ));
        }
        check_one_hot(y, "learn")?;
        let pending = match self.pending.take() {
            Some(p) if p.prediction.len() == x.rows() => p,
            _ => {
                self.predict(x)?;
                self.pending.take().expect("predict stores a pending test")
            }
        };
        let track_threshold = self.config.chunk_size != 2;
        if track_threshold {
            if let Some(acc) = self.ensemble.overall_accuracy() {
                self.ensemble.delta = acc;
            }
        }

        let mut per_instance_accuracy = Vec::new();
        let mut removal = Vec::new();
        for (i, (ol, scores)) in self
            .ensemble
            .active
            .iter_mut()
            .zip(&pending.scores)
            .enumerate()
        {
            if let Some(s) = scores {
                let acc = score_accuracy(s, y)?;
                ol.last_accuracy = acc;
                per_instance_accuracy.push((ol.id, acc));
                if acc < self.ensemble.delta {
                    removal.push(i);
                }
            }
        }
        if self.config.variant.is_ensemble() {
            self.ensemble.removal_list = removal;
        }

        let correct = pending
            .prediction
            .iter()
            .enumerate()
            .filter(|&(r, &p)| y.get(r, p) == 1.0)
            .count();
        self.ensemble.overall_correct += correct as u64;
        self.ensemble.overall_seen += x.rows() as u64;
        if track_threshold {
            self.ensemble.delta = self
                .ensemble
                .overall_accuracy()
                .unwrap_or(self.ensemble.delta);
        }

        if self.config.variant == Variant::Bels {
            let mut eligible = Vec::new();
            for ol in &mut self.ensemble.pool {
                let acc = score_accuracy(&ol.predict_scores(&pending.a_test)?, y)?;
                ol.last_accuracy = acc;
                if acc > self.ensemble.eta {
                    eligible.push(ol.id);
                }
            }
            self.ensemble.candidates = eligible;
        }

        let a_k = self.feature_space.update(x)?;
        let width = a_k.cols();
        let mut gram = Matrix::zeros(width, width);
        gram.add_gram(&a_k)?;
        let cross = a_k.t_matmul(y)?;
        for ol in &mut self.ensemble.active {
            ol.absorb(&a_k, &gram, &cross)?;
        }
        self.chunk_index += 1;

        Ok(ChunkResult {
            ensemble_accuracy: correct as f64 / x.rows() as f64,
            ensemble_prediction: pending.prediction,
            per_instance_accuracy,
        })
    }

    /// One full test-then-train cycle on a labelled chunk.
    pub fn process_chunk(&mut self, x: &Matrix, y: &Matrix) -> Result<ChunkResult> {
        self.predict(x)?;
        self.learn(x, y)
    }
}
