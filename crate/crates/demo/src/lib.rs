//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Each export has a plain Rust counterpart so it can be tested natively.

use bels_core::stream::{StreamSpec, Transition};
use bels_core::{
    evaluate, BelsConfig, BelsModel, Matrix, PrequentialSeries, Result, StreamConfig, Variant,
};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const WINDOW: usize = 500;

#[derive(Debug, Serialize)]
pub struct DriftCurve {
    pub samples: Vec<usize>,
    pub window_accuracy: Vec<f64>,
    pub cumulative_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    pub drift_points: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct AblationEntry {
    pub variant: &'static str,
    pub accuracy: f64,
}

fn sea(functions: &[u32], segment_len: usize, noise: f64) -> StreamConfig {
    StreamConfig {
        spec: StreamSpec::Sea {
            functions: functions.iter().map(|&f| f as usize).collect(),
            segment_len,
            noise,
            transition: Transition::Abrupt,
        },
        standardize: true,
    }
}

fn run(config: BelsConfig, stream: &StreamConfig, seed: u64) -> Result<PrequentialSeries> {
    let mut source = stream.build(seed)?;
    let mut model = BelsModel::new(config, source.n_features(), source.n_classes())?;
    evaluate(&mut model, &mut source, WINDOW)
}

pub fn drift_curve_data(
    functions: &[u32],
    segment_len: usize,
    noise: f64,
    preset: &str,
    chunk_size: usize,
    seed: u64,
) -> Result<DriftCurve> {
    let config = BelsConfig::preset(preset)?
        .with_chunk_size(chunk_size)
        .with_seed(seed);
    let series = run(config, &sea(functions, segment_len, noise), seed)?;
    let r = &series.records;
    Ok(DriftCurve {
        samples: r.iter().map(|r| r.samples_seen).collect(),
        window_accuracy: r.iter().map(|r| r.window_accuracy).collect(),
        cumulative_accuracy: r.iter().map(|r| r.cumulative_accuracy).collect(),
        final_accuracy: series.final_accuracy,
        drift_points: (1..functions.len()).map(|k| k * segment_len).collect(),
    })
}

pub fn ablation_data(
    segment_len: usize,
    noise: f64,
    chunk_size: usize,
    seed: u64,
) -> Result<Vec<AblationEntry>> {
    let stream = sea(&[0, 2], segment_len, noise);
    let base = BelsConfig::bels2()
        .with_chunk_size(chunk_size)
        .with_seed(seed);
    Variant::ALL
        .into_iter()
        .map(|v| {
            let series = run(base.clone().with_variant(v), &stream, seed)?;
            Ok(AblationEntry {
                variant: v.as_str(),
                accuracy: series.final_accuracy,
            })
        })
        .collect()
}

/// Trains on two Gaussian classes centred at `(-s, -s)` and `(s, s)`, then
/// labels a `resolution x resolution` grid over `[-extent, extent]^2`,
/// row-major from the top-left corner.
pub fn decision_field_data(
    separation: f64,
    sigma: f64,
    samples: usize,
    resolution: usize,
    extent: f64,
    seed: u64,
) -> Result<Vec<u8>> {
    let stream = StreamConfig {
        spec: StreamSpec::Gaussian {
            means: vec![vec![-separation; 2], vec![separation; 2]],
            sigma,
            segment_len: samples,
            segments: 1,
            drift: Default::default(),
        },
        standardize: false,
    };
    let mut source = stream.build(seed)?;
    let config = BelsConfig::bels2().with_chunk_size(10).with_seed(seed);
    let mut model = BelsModel::new(config, 2, 2)?;
    evaluate(&mut model, &mut source, WINDOW)?;
    let step = if resolution > 1 {
        2.0 * extent / (resolution - 1) as f64
    } else {
        0.0
    };
    let grid = Matrix::from_fn(resolution * resolution, 2, |i, c| {
        let (row, col) = (i / resolution, i % resolution);
        if c == 0 {
            -extent + col as f64 * step
        } else {
            extent - row as f64 * step
        }
    });
    Ok(model.predict(&grid)?.into_iter().map(|c| c as u8).collect())
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON `{samples, window_accuracy, cumulative_accuracy, final_accuracy, drift_points}`.
#[wasm_bindgen(js_name = driftCurve)]
pub fn drift_curve(
    functions: Vec<u32>,
    segment_len: u32,
    noise: f64,
    preset: &str,
    chunk_size: u32,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(drift_curve_data(
        &functions,
        segment_len as usize,
        noise,
        preset,
        chunk_size as usize,
        seed.into(),
    ))
}

/// JSON list of `{variant, accuracy}` for the four ablation variants.
#[wasm_bindgen]
pub fn ablation(
    segment_len: u32,
    noise: f64,
    chunk_size: u32,
    seed: u32,
) -> std::result::Result<String, JsError> {
    to_js(ablation_data(
        segment_len as usize,
        noise,
        chunk_size as usize,
        seed.into(),
    ))
}

#[wasm_bindgen(js_name = decisionField)]
pub fn decision_field(
    separation: f64,
    sigma: f64,
    samples: u32,
    resolution: u32,
    extent: f64,
    seed: u32,
) -> std::result::Result<Vec<u8>, JsError> {
    decision_field_data(
        separation,
        sigma,
        samples as usize,
        resolution as usize,
        extent,
        seed.into(),
    )
    .map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_curve_marks_segments() {
        let c = drift_curve_data(&[0, 2], 1000, 0.1, "bels1", 20, 1).unwrap();
        assert_eq!(c.drift_points, [1000]);
        assert_eq!(c.samples.last(), Some(&2000));
        assert_eq!(c.samples.len(), c.window_accuracy.len());
        assert!(drift_curve_data(&[0], 10, 0.0, "nope", 5, 1).is_err());
    }

    #[test]
    fn decision_field_splits_the_plane() {
        let field = decision_field_data(2.0, 0.5, 2000, 9, 3.0, 4).unwrap();
        assert_eq!(field.len(), 81);
        assert_eq!(
            field[8 * 9],
            0,
            "bottom-left belongs to the negative cluster"
        );
        assert_eq!(field[8], 1, "top-right belongs to the positive cluster");
    }
}
