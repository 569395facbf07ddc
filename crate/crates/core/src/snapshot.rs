//! Versioned JSON snapshots of a model and, optionally, evaluation progress.
//!
//! Floats are written with shortest round-trip formatting, so a reloaded
//! model continues bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::BelsModel;
use crate::error::{BelsError, Result};
use crate::prequential::Evaluator;

pub const SNAPSHOT_FORMAT: &str = "bels-snapshot";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Self-describing header, readable without decoding the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub n_classes: usize,
    pub width: usize,
    pub seed: u64,
    pub chunk_index: usize,
    pub samples_seen: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub header: SnapshotHeader,
    pub model: BelsModel,
    pub progress: Option<Evaluator>,
}

impl Snapshot {
    pub fn new(model: &BelsModel, progress: Option<&Evaluator>) -> Self {
        Self {
            header: SnapshotHeader {
                format: SNAPSHOT_FORMAT.into(),
                version: SNAPSHOT_VERSION,
                d: model.n_features(),
                n_classes: model.n_classes,
                width: model.feature_space.width(),
                seed: model.config.seed,
                chunk_index: model.chunk_index,
                samples_seen: progress.map_or(0, Evaluator::samples_seen),
            },
            model: model.clone(),
            progress: progress.cloned(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| BelsError::Snapshot(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let snap: Snapshot =
            serde_json::from_str(text).map_err(|e| BelsError::Snapshot(e.to_string()))?;
        snap.check()?;
        Ok(snap)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => BelsError::FileNotFound(path.to_path_buf()),
            _ => BelsError::Io(e),
        })?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<()> {
        let h = &self.header;
        if h.format != SNAPSHOT_FORMAT {
            return Err(BelsError::Snapshot(format!(
                "unknown format `{}`",
                h.format
            )));
        }
        if h.version != SNAPSHOT_VERSION {
            return Err(BelsError::Snapshot(format!(
                "unsupported version {} (expected {SNAPSHOT_VERSION})",
                h.version
            )));
        }
        let m = &self.model;
        let consistent = h.d == m.n_features()
            && h.n_classes == m.n_classes
            && h.width == m.feature_space.width()
            && h.chunk_index == m.chunk_index
            && h.samples_seen == self.progress.as_ref().map_or(0, Evaluator::samples_seen);
        if !consistent {
            return Err(BelsError::Snapshot("header disagrees with body".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::BelsConfig;
    use crate::prequential::{evaluate_from, Evaluator};
    use crate::stream::{sea_stream, StreamSource};

    #[test]
    fn resume_matches_uninterrupted_run() {
        let cfg = BelsConfig::bels2().with_chunk_size(10);
        let mut full_model = BelsModel::new(cfg.clone(), 3, 2).unwrap();
        let mut full_eval = Evaluator::new(100).unwrap();
        let mut s = sea_stream(&[0, 2], 500, 0.1, 9).unwrap();
        evaluate_from(&mut full_model, &mut s, &mut full_eval, None).unwrap();

        let mut model = BelsModel::new(cfg, 3, 2).unwrap();
        let mut eval = Evaluator::new(100).unwrap();
        let mut s = sea_stream(&[0, 2], 500, 0.1, 9).unwrap();
        for _ in 0..37 {
            let chunk = s.next_chunk(10, eval.samples_seen()).unwrap().unwrap();
            eval.step(&mut model, chunk).unwrap();
        }
        let json = Snapshot::new(&model, Some(&eval)).to_json().unwrap();
        let restored = Snapshot::from_json(&json).unwrap();
        assert_eq!(restored.model, model);
        assert_eq!(restored.header.samples_seen, 370);

        let mut model = restored.model;
        let mut eval = restored.progress.unwrap();
        let mut s = sea_stream(&[0, 2], 500, 0.1, 9).unwrap();
        for _ in 0..eval.samples_seen() {
            s.next_sample();
        }
        evaluate_from(&mut model, &mut s, &mut eval, None).unwrap();
        assert_eq!(model, full_model);
        let acc = |e: &Evaluator| {
            e.records()
                .iter()
                .map(|r| (r.cumulative_accuracy, r.window_accuracy))
                .collect::<Vec<_>>()
        };
        assert_eq!(acc(&eval), acc(&full_eval));
    }

    #[test]
    fn file_round_trip_and_validation() {
        let model = BelsModel::new(BelsConfig::bels1(), 4, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.json");
        let snap = Snapshot::new(&model, None);
        snap.save(&path).unwrap();
        assert_eq!(Snapshot::load(&path).unwrap(), snap);

        let mut bad = snap.clone();
        bad.header.version = 99;
        assert!(matches!(
            Snapshot::from_json(&bad.to_json().unwrap()),
            Err(BelsError::Snapshot(_))
        ));
        let mut bad = snap;
        bad.header.d = 5;
        assert!(Snapshot::from_json(&bad.to_json().unwrap()).is_err());
        assert!(Snapshot::from_json("{").is_err());
        assert!(matches!(
            Snapshot::load(dir.path().join("missing.json")),
            Err(BelsError::FileNotFound(_))
        ));
    }
}
