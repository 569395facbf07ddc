use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use bels_core::prequential::{
    default_grid, evaluate_from, select_for_stream, write_series, GridOutcome,
};
use bels_core::{evaluate, BelsConfig, BelsModel, Evaluator, Snapshot, Variant};

use crate::config::{GenerateSpec, ModelChoice, RunConfig};
use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SERIES_FILE: &str = "series.csv";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    pub quiet: bool,
    pub resume: bool,
}

/// Parameter varied by `sweep`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    #[value(name = "chunk_size")]
    ChunkSize,
    #[value(name = "m_o")]
    MO,
    #[value(name = "m_p")]
    MP,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::ChunkSize => "chunk_size",
            SweepParam::MO => "m_o",
            SweepParam::MP => "m_p",
        }
    }

    fn apply(self, cfg: &mut BelsConfig, value: usize) {
        match self {
            SweepParam::ChunkSize => cfg.chunk_size = value,
            SweepParam::MO => cfg.m_o = value,
            SweepParam::MP => cfg.m_p = value,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub accuracy: f64,
    pub cs_per_1000: f64,
    pub improvement_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: usize,
    pub accuracy: f64,
    pub cs_per_1000: f64,
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config types serialize")
}

struct Manifest(Vec<(&'static str, String)>);

impl Manifest {
    fn new(command: &str, cfg: &RunConfig) -> Self {
        Self(vec![
            ("format", "bels-run-manifest".into()),
            ("schema_version", MANIFEST_SCHEMA_VERSION.to_string()),
            ("command", command.into()),
            ("bels_version", env!("CARGO_PKG_VERSION").into()),
            ("seed", cfg.seed.to_string()),
            ("window", cfg.window.to_string()),
            ("stream", json(&cfg.stream)),
        ])
    }

    fn push(&mut self, key: &'static str, value: impl ToString) {
        self.0.push((key, value.to_string()));
    }

    fn selection(&mut self, cfg: &RunConfig, grid: Option<&GridOutcome>, model: &BelsConfig) {
        let how = match (&cfg.model, grid) {
            (ModelChoice::Auto, Some(g)) => {
                self.push("grid_index", g.index);
                "auto"
            }
            (ModelChoice::Auto, None) => "resumed",
            (ModelChoice::Fixed(_), _) => "fixed",
        };
        self.push("model_selection", how);
        self.push("n", model.n);
        self.push("m", model.m);
        self.push("chunk_size", model.chunk_size);
        self.push("model", json(model));
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(text, "{k} = {v}");
        }
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

/// The configured model, with auto selection resolved and the run seed
/// applied.
pub fn resolve_model(cfg: &RunConfig) -> Result<(BelsConfig, Option<GridOutcome>), CliError> {
    match &cfg.model {
        ModelChoice::Fixed(m) => Ok((m.clone().with_seed(cfg.seed), None)),
        ModelChoice::Auto => {
            let outcome = select_for_stream(&cfg.stream, cfg.seed, &default_grid())?;
            Ok((outcome.config.clone(), Some(outcome)))
        }
    }
}

fn resume_state(cfg: &RunConfig, snapshot: &Path) -> Result<(BelsModel, Evaluator), CliError> {
    if !snapshot.exists() {
        return Err(CliError::Config(format!(
            "--resume given but {} does not exist",
            snapshot.display()
        )));
    }
    let snap = Snapshot::load(snapshot)?;
    if snap.header.seed != cfg.seed {
        return Err(CliError::Config(format!(
            "snapshot was taken with seed {}, config asks for {}",
            snap.header.seed, cfg.seed
        )));
    }
    if let ModelChoice::Fixed(m) = &cfg.model {
        if snap.model.config != m.clone().with_seed(cfg.seed) {
            return Err(CliError::Config(
                "snapshot model differs from the configured model".into(),
            ));
        }
    }
    let eval = match snap.progress {
        Some(e) => e,
        None => Evaluator::new(cfg.window)?,
    };
    Ok((snap.model, eval))
}

/// Runs one configured experiment and writes `series.csv` and
/// `manifest.txt` into the output directory.
pub fn cmd_run(
    cfg: &RunConfig,
    opts: RunOptions,
) -> Result<bels_core::PrequentialSeries, CliError> {
    prepare_dir(&cfg.output_dir)?;
    let snapshot_path = cfg.output_dir.join(SNAPSHOT_FILE);
    let mut source = cfg.stream.build(cfg.seed)?;
    let (mut model, mut eval, grid) = if opts.resume {
        let (model, eval) = resume_state(cfg, &snapshot_path)?;
        for _ in 0..eval.samples_seen() {
            if source.next_sample().is_none() {
                return Err(CliError::Config(
                    "snapshot is past the end of the stream".into(),
                ));
            }
        }
        (model, eval, None)
    } else {
        let (config, grid) = resolve_model(cfg)?;
        let model = BelsModel::new(config, source.n_features(), source.n_classes())?;
        (model, Evaluator::new(cfg.window)?, grid)
    };
    if !opts.quiet {
        if let Some(g) = &grid {
            eprintln!(
                "grid selected n={} m={} chunk_size={} (candidate {})",
                g.config.n, g.config.m, g.config.chunk_size, g.index
            );
        }
        if opts.resume {
            eprintln!("resuming at sample {}", eval.samples_seen());
        }
    }

    let start = Instant::now();
    let start_samples = eval.samples_seen();
    let mut on_chunk = |m: &BelsModel, e: &Evaluator| -> bels_core::Result<()> {
        let chunks = e.chunks_seen();
        if let Some(every) = cfg.snapshot_every {
            if chunks.is_multiple_of(every) {
                Snapshot::new(m, Some(e)).save(&snapshot_path)?;
            }
        }
        if !opts.quiet && chunks.is_multiple_of(cfg.progress_every) {
            let rate =
                (e.samples_seen() - start_samples) as f64 / start.elapsed().as_secs_f64().max(1e-9);
            let window = e.records().last().map_or(0.0, |r| r.window_accuracy);
            eprintln!(
                "chunk {chunks} samples {} {rate:.0} samples/s window accuracy {window:.4}",
                e.samples_seen()
            );
        }
        Ok(())
    };
    evaluate_from(&mut model, &mut source, &mut eval, Some(&mut on_chunk))?;
    if cfg.snapshot_every.is_some() {
        Snapshot::new(&model, Some(&eval)).save(&snapshot_path)?;
    }

    let series = eval.finish(Some(model.config.clone()))?;
    write_series(&series, cfg.output_dir.join(SERIES_FILE))?;
    let mut manifest = Manifest::new("run", cfg);
    manifest.selection(cfg, grid.as_ref(), &model.config);
    manifest.push(
        "samples",
        series.records.last().map_or(0, |r| r.samples_seen),
    );
    manifest.push("final_accuracy", format!("{:.6}", series.final_accuracy));
    manifest.push("cs_per_1000", format!("{:.6}", series.cs_per_1000));
    manifest.write(&cfg.output_dir)?;
    if !opts.quiet {
        println!(
            "final accuracy {:.4}, {:.2} cs per 1000 samples",
            series.final_accuracy, series.cs_per_1000
        );
    }
    Ok(series)
}

fn run_once(cfg: &RunConfig, model: &BelsConfig) -> Result<bels_core::PrequentialSeries, CliError> {
    model.validate()?;
    let mut source = cfg.stream.build(cfg.seed)?;
    let mut learner = BelsModel::new(model.clone(), source.n_features(), source.n_classes())?;
    Ok(evaluate(&mut learner, &mut source, cfg.window)?)
}

/// Runs the four ablation variants on the same stream and seed and writes
/// `ablation.csv`.
pub fn cmd_ablate(cfg: &RunConfig, quiet: bool) -> Result<Vec<AblationRow>, CliError> {
    prepare_dir(&cfg.output_dir)?;
    let (base, grid) = resolve_model(cfg)?;
    let mut rows: Vec<AblationRow> = Vec::with_capacity(4);
    for variant in Variant::ALL {
        let series = run_once(cfg, &base.clone().with_variant(variant))?;
        let original = rows.first().map_or(series.final_accuracy, |r| r.accuracy);
        let improvement_pct = if original > 0.0 {
            (series.final_accuracy - original) / original * 100.0
        } else {
            0.0
        };
        if !quiet {
            eprintln!("{variant}: accuracy {:.4}", series.final_accuracy);
        }
        rows.push(AblationRow {
            variant,
            accuracy: series.final_accuracy,
            cs_per_1000: series.cs_per_1000,
            improvement_pct,
        });
    }
    let mut csv = String::from("variant,accuracy,cs_per_1000,improvement_pct\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{:.6},{:.6},{:.6}",
            r.variant, r.accuracy, r.cs_per_1000, r.improvement_pct
        );
    }
    fs::write(cfg.output_dir.join(ABLATION_FILE), &csv)?;
    let mut manifest = Manifest::new("ablate", cfg);
    manifest.selection(cfg, grid.as_ref(), &base);
    manifest.write(&cfg.output_dir)?;
    if !quiet {
        print!("{csv}");
    }
    Ok(rows)
}

pub fn sweep_file(param: SweepParam) -> String {
    format!("sweep_{}.csv", param.name())
}

/// Re-runs the configured experiment once per value of `param` and writes
/// `sweep_<param>.csv`.
pub fn cmd_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[usize],
    quiet: bool,
) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    prepare_dir(&cfg.output_dir)?;
    let (base, grid) = resolve_model(cfg)?;
    let configs: Vec<BelsConfig> = values
        .iter()
        .map(|&v| {
            let mut c = base.clone();
            param.apply(&mut c, v);
            c.validate().map(|_| c)
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::with_capacity(values.len());
    let mut csv = String::from("value,accuracy,cs_per_1000\n");
    for (&value, config) in values.iter().zip(&configs) {
        let series = run_once(cfg, config)?;
        if !quiet {
            eprintln!(
                "{} = {value}: accuracy {:.4}",
                param.name(),
                series.final_accuracy
            );
        }
        let _ = writeln!(
            csv,
            "{value},{:.6},{:.6}",
            series.final_accuracy, series.cs_per_1000
        );
        rows.push(SweepRow {
            value,
            accuracy: series.final_accuracy,
            cs_per_1000: series.cs_per_1000,
        });
    }
    fs::write(cfg.output_dir.join(sweep_file(param)), &csv)?;
    let mut manifest = Manifest::new("sweep", cfg);
    manifest.selection(cfg, grid.as_ref(), &base);
    manifest.push("sweep_parameter", param.name());
    manifest.push("sweep_values", json(&values));
    manifest.write(&cfg.output_dir)?;
    if !quiet {
        print!("{csv}");
    }
    Ok(rows)
}

/// Writes `count` samples as `f0,...,f{d-1},label` rows.
pub fn cmd_generate(spec: &GenerateSpec, out: &Path, count: usize) -> Result<(), CliError> {
    let mut source = spec.stream.build(spec.seed)?;
    if let Some(available) = source.remaining() {
        if available < count {
            return Err(CliError::Config(format!(
                "stream holds {available} samples, {count} requested"
            )));
        }
    }
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        prepare_dir(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(out)?);
    let header: Vec<String> = (0..source.n_features()).map(|i| format!("f{i}")).collect();
    writeln!(w, "{},label", header.join(","))?;
    for _ in 0..count {
        let sample = source
            .next_sample()
            .ok_or_else(|| CliError::Runtime("stream ended early".into()))?;
        for v in &sample.x {
            write!(w, "{v},")?;
        }
        writeln!(w, "{}", sample.label)?;
    }
    w.flush()?;
    Ok(())
}
