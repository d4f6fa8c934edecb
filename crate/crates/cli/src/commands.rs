//! The five commands. Each takes an effective [`RunConfig`] and paths and
//! writes its outputs into a fresh directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use shm_kdme_core::detector::{train_on_features, DetectionReport, DetectorConfig, NoveltyModel};
use shm_kdme_core::features::{build_feature_vector, segment_record, AccelRecord, EtaGrid, FeatureVector};
use shm_kdme_core::kdme::{fit_kdme_traced, KdmeConfig, KdmeFit, KdmeModel};
use shm_kdme_core::synth::{generate_tests, generate_training, read_manifest, write_manifest, ManifestRow};
use shm_kdme_core::Error;

use crate::config::RunConfig;
use crate::error::{CliError, StageExt};

pub const TRAIN_DIR: &str = "train";
pub const TEST_DIR: &str = "test";
pub const MANIFEST: &str = "manifest.csv";
pub const BLOCK_INDEX: &str = "blocks.csv";
pub const MODEL_FILE: &str = "model.json";
pub const TRAINING_REPORT: &str = "training_report.json";
pub const TRAINING_DENSITIES: &str = "training_densities.csv";
pub const SEGMENTS: &str = "segments.csv";
pub const VERDICTS: &str = "verdicts.csv";
pub const METRICS: &str = "metrics.csv";
pub const PLOT: &str = "report.svg";
pub const DENSITY: &str = "density.csv";
pub const DENSITY_SUMMARY: &str = "density_summary.json";
pub const TRACE: &str = "trace.csv";

/// Creates `dir`, refusing one that already has entries.
pub fn prepare_output_dir(dir: &Path) -> Result<(), CliError> {
    if dir.exists() {
        let mut entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        if entries.next().is_some() {
            return Err(CliError::Usage(format!(
                "output directory {} is not empty; choose a new or empty directory",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_with<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
{
    let mut w = create(path)?;
    body(&mut w)?;
    w.flush().map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_record(path: &Path) -> Result<AccelRecord, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    AccelRecord::read_csv(BufReader::new(file)).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// `*.csv` files in `dir` other than the index files, sorted by name.
fn data_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().is_some_and(|n| n != MANIFEST && n != BLOCK_INDEX)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Usage(format!("no CSV records found in {}", dir.display())));
    }
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn record_features(record: &AccelRecord, id: &str, config: &RunConfig, grid: &EtaGrid) -> Result<Vec<FeatureVector>, CliError> {
    let segments = segment_record(record, id, config.features.segment_seconds).stage("segmentation")?;
    if segments.is_empty() {
        return Err(CliError::Usage(format!(
            "record {id} is shorter than one {} s segment",
            config.features.segment_seconds
        )));
    }
    segments
        .iter()
        .map(|s| build_feature_vector(s, grid))
        .collect::<Result<Vec<_>, _>>()
        .stage("features")
}

/// What `simulate` wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub training_blocks: usize,
    pub test_cases: usize,
    pub damaged_cases: usize,
}

/// Generates the synthetic dataset: `train/block_NNNN.csv` with a
/// `train/blocks.csv` index, and `test/test_NNNN.csv` with
/// `test/manifest.csv`.
pub fn simulate(config: &RunConfig, out: &Path) -> Result<SimulateSummary, CliError> {
    config.dataset.validate().stage("simulate")?;
    prepare_output_dir(out)?;
    let header = config.header();
    let train_dir = out.join(TRAIN_DIR);
    let test_dir = out.join(TEST_DIR);
    for d in [&train_dir, &test_dir] {
        std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
    }

    let index_path = train_dir.join(BLOCK_INDEX);
    let mut index = create(&index_path)?;
    for line in header.lines() {
        writeln!(index, "# {line}").map_err(|e| CliError::io(&index_path, e))?;
    }
    writeln!(index, "block,file,start_hours,temperature").map_err(|e| CliError::io(&index_path, e))?;
    let mut blocks = 0;
    let mut failure: Option<CliError> = None;
    generate_training(&config.dataset, |block| {
        let name = format!("block_{:04}.csv", block.index);
        let path = train_dir.join(&name);
        let comment = format!(
            "{header}\ntraining block {} starting at {} h, temperature {:.6} C",
            block.index, block.start_hours, block.temperature
        );
        let written = write_with(&path, |w| Ok(block.record.write_csv(w, Some(&comment))?)).and_then(|_| {
            writeln!(index, "{},{name},{},{:.16e}", block.index, block.start_hours, block.temperature)
                .map_err(|e| CliError::io(&index_path, e))
        });
        match written {
            Ok(()) => {
                blocks += 1;
                Ok(())
            }
            Err(e) => {
                failure = Some(e);
                Err(Error::Numerical("aborted after a write failure".into()))
            }
        }
    })
    .or_else(|e| match failure.take() {
        Some(f) => Err(f),
        None => Err(CliError::Stage {
            stage: "simulate",
            source: e,
        }),
    })?;
    index.flush().map_err(|e| CliError::io(&index_path, e))?;

    let mut rows: Vec<ManifestRow> = Vec::new();
    generate_tests(&config.dataset, |case| {
        let path = test_dir.join(&case.row.file);
        let comment = format!(
            "{header}\ntest case {}, temperature {:.6} C",
            case.row.simulation_id, case.row.temperature
        );
        write_with(&path, |w| Ok(case.record.write_csv(w, Some(&comment))?))
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        rows.push(case.row);
        Ok(())
    })
    .stage("simulate")?;
    let manifest_path = test_dir.join(MANIFEST);
    write_with(&manifest_path, |w| Ok(write_manifest(w, &rows, Some(&header))?))?;
    Ok(SimulateSummary {
        training_blocks: blocks,
        test_cases: rows.len(),
        damaged_cases: rows.iter().filter(|r| r.damaged).count(),
    })
}

/// Per-component summary written to the training report.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    pub component: usize,
    pub moments: usize,
    pub gamma: Vec<f64>,
    pub theta: f64,
    pub gamma_max: f64,
    pub window: (f64, f64),
    pub padding: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingReport {
    pub config_sha256: String,
    pub training_segments: usize,
    pub q: usize,
    pub explained_variance_ratio: Vec<f64>,
    pub total_explained_variance: f64,
    pub ica_converged: Vec<bool>,
    pub threshold: f64,
    /// Fraction of training segments below the threshold.
    pub training_novelty_rate: f64,
    pub components: Vec<ComponentReport>,
}

impl TrainingReport {
    pub fn new(model: &NoveltyModel, config_sha256: String) -> Self {
        let n = model.training_densities.len();
        let novel = model.training_densities.iter().filter(|d| **d < model.threshold).count();
        Self {
            config_sha256,
            training_segments: model.metadata.training_segments,
            q: model.q(),
            explained_variance_ratio: model.pca.explained_variance_ratio.clone(),
            total_explained_variance: model.pca.total_explained(),
            ica_converged: model.ica.converged.clone(),
            threshold: model.threshold,
            training_novelty_rate: novel as f64 / n.max(1) as f64,
            components: model
                .marginals
                .iter()
                .enumerate()
                .map(|(k, m)| ComponentReport {
                    component: k + 1,
                    moments: m.moments(),
                    gamma: m.gamma.clone(),
                    theta: m.theta,
                    gamma_max: m.gamma_max,
                    window: m.window,
                    padding: m.padding,
                    bandwidth: m.bandwidth,
                })
                .collect(),
        }
    }
}

fn validate_detector(config: &DetectorConfig, segments: usize, dim: usize) -> Result<(), CliError> {
    let max_q = segments.saturating_sub(1).min(dim);
    if config.q == 0 || config.q > max_q {
        return Err(CliError::Usage(format!(
            "q = {} is not feasible; it must be in 1..={max_q} for {segments} training segments of dimension {dim}",
            config.q
        )));
    }
    Ok(())
}

fn train_model(config: &RunConfig, features: &[FeatureVector], ids: &[String]) -> Result<NoveltyModel, CliError> {
    let grid = config.eta_grid()?;
    let mut model = train_on_features(features, &grid, config.features.segment_seconds, &config.detector).stage("train")?;
    model.metadata.config_sha256 = Some(config.sha256());
    debug_assert_eq!(ids.len(), features.len());
    Ok(model)
}

fn write_training_outputs(config: &RunConfig, model: &NoveltyModel, ids: &[String], out: &Path) -> Result<(), CliError> {
    let header = config.header();
    std::fs::write(out.join(MODEL_FILE), model.to_bytes().stage("save model")?)
        .map_err(|e| CliError::io(&out.join(MODEL_FILE), e))?;
    write_json(&out.join(TRAINING_REPORT), &TrainingReport::new(model, config.sha256()))?;
    write_with(&out.join(TRAINING_DENSITIES), |w| {
        for line in header.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "segment,record_segment,density,novel")?;
        for (i, (d, id)) in model.training_densities.iter().zip(ids).enumerate() {
            writeln!(w, "{i},{id},{d:.16e},{}", (*d < model.threshold) as u8)?;
        }
        Ok(())
    })
}

/// Locates the training records: `<data>/train` when present, else `<data>`.
fn training_dir(data: &Path) -> PathBuf {
    let sub = data.join(TRAIN_DIR);
    if sub.is_dir() {
        sub
    } else {
        data.to_path_buf()
    }
}

/// Trains a model on every record under the training directory.
pub fn train(config: &RunConfig, data: &Path, out: &Path) -> Result<NoveltyModel, CliError> {
    let grid = config.eta_grid()?;
    let dir = training_dir(data);
    let files = data_files(&dir)?;
    // Cheap feasibility check before any feature extraction.
    let first = read_record(&files[0])?;
    let per_record = segment_record(&first, "probe", config.features.segment_seconds)
        .stage("segmentation")?
        .len();
    validate_detector(&config.detector, per_record * files.len(), 4 * grid.len())?;
    prepare_output_dir(out)?;

    let per_file: Vec<(Vec<String>, Vec<FeatureVector>)> = files
        .par_iter()
        .map(|path| {
            let id = stem(path);
            let features = record_features(&read_record(path)?, &id, config, &grid)?;
            let ids = (0..features.len()).map(|k| format!("{id}:{k}")).collect();
            Ok((ids, features))
        })
        .collect::<Result<_, CliError>>()?;
    let (ids, features): (Vec<Vec<String>>, Vec<Vec<FeatureVector>>) = per_file.into_iter().unzip();
    let ids: Vec<String> = ids.into_iter().flatten().collect();
    let features: Vec<FeatureVector> = features.into_iter().flatten().collect();
    log::info!("training on {} segments from {} records", features.len(), files.len());
    let model = train_model(config, &features, &ids)?;
    write_training_outputs(config, &model, &ids, out)?;
    Ok(model)
}

/// One simulation to score: id, ground truth if known, and its record.
struct Subject {
    id: String,
    label: Option<bool>,
    path: PathBuf,
}

fn test_dir(data: &Path) -> PathBuf {
    let sub = data.join(TEST_DIR);
    if sub.is_dir() {
        sub
    } else {
        data.to_path_buf()
    }
}

fn subjects(data: &Path) -> Result<Vec<Subject>, CliError> {
    let dir = test_dir(data);
    let manifest = dir.join(MANIFEST);
    if manifest.is_file() {
        let file = File::open(&manifest).map_err(|e| CliError::io(&manifest, e))?;
        let rows = read_manifest(BufReader::new(file))
            .map_err(|e| CliError::Usage(format!("{}: {e}", manifest.display())))?;
        return Ok(rows
            .into_iter()
            .map(|r| Subject {
                path: dir.join(&r.file),
                id: r.simulation_id,
                label: Some(r.damaged),
            })
            .collect());
    }
    Ok(data_files(&dir)?
        .into_iter()
        .map(|p| Subject {
            id: stem(&p),
            label: None,
            path: p,
        })
        .collect())
}

fn score(model: &NoveltyModel, features: &[FeatureVector]) -> Result<Vec<(f64, bool)>, CliError> {
    features.iter().map(|f| model.classify(f)).collect::<Result<_, _>>().stage("detect")
}

fn write_report(config_header: &str, report: &DetectionReport, out: &Path, svg: bool) -> Result<(), CliError> {
    write_with(&out.join(SEGMENTS), |w| Ok(report.write_segments_csv(w, Some(config_header))?))?;
    write_with(&out.join(VERDICTS), |w| Ok(report.write_verdicts_csv(w, Some(config_header))?))?;
    if report.metrics.is_some() {
        write_with(&out.join(METRICS), |w| Ok(report.write_metrics_csv(w, Some(config_header))?))?;
    }
    if svg {
        let path = out.join(PLOT);
        std::fs::write(&path, report.to_svg()).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

fn model_header(model: &NoveltyModel) -> String {
    format!(
        "shm-kdme {}\nconfig-sha256: {}",
        env!("CARGO_PKG_VERSION"),
        model.metadata.config_sha256.as_deref().unwrap_or("unknown")
    )
}

/// Scores every test record against a saved model and votes per simulation.
pub fn detect(model_path: &Path, data: &Path, out: &Path, svg: bool) -> Result<DetectionReport, CliError> {
    let bytes = std::fs::read(model_path).map_err(|e| CliError::io(model_path, e))?;
    let model = NoveltyModel::from_bytes(&bytes).stage("load model")?;
    let subjects = subjects(data)?;
    prepare_output_dir(out)?;
    let scored: Vec<(String, Option<bool>, Vec<(f64, bool)>)> = subjects
        .par_iter()
        .map(|s| {
            let record = read_record(&s.path)?;
            let segments =
                segment_record(&record, &s.id, model.metadata.segment_seconds).stage("segmentation")?;
            let features = segments
                .iter()
                .map(|seg| model.features(seg))
                .collect::<Result<Vec<_>, _>>()
                .stage("features")?;
            if features.is_empty() {
                return Err(CliError::Usage(format!("record {} has no complete segment", s.id)));
            }
            Ok((s.id.clone(), s.label, score(&model, &features)?))
        })
        .collect::<Result<_, CliError>>()?;
    let report = DetectionReport::build(model.threshold, scored).stage("vote")?;
    write_report(&model_header(&model), &report, out, svg)?;
    Ok(report)
}

/// Reads one numeric column (by header name, or the first column).
pub fn read_column<R: BufRead>(reader: R, column: Option<&str>) -> Result<Vec<f64>, Error> {
    let mut index: Option<usize> = None;
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let number = i + 1;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = text.split(',').map(str::trim).collect();
        let Some(k) = index else {
            // Header row, unless it already parses as data and no column was named.
            let first_numeric = cells[0].parse::<f64>().is_ok();
            index = Some(match column {
                Some(name) => cells.iter().position(|c| *c == name).ok_or_else(|| Error::Parse {
                    line: number,
                    message: format!("no column named '{name}' in header"),
                })?,
                None => 0,
            });
            if column.is_none() && first_numeric {
                values.push(cells[0].parse().expect("checked above"));
            }
            continue;
        };
        let cell = cells.get(k).ok_or_else(|| Error::Parse {
            line: number,
            message: format!("expected at least {} fields, found {}", k + 1, cells.len()),
        })?;
        let v: f64 = cell.parse().map_err(|_| Error::Parse {
            line: number,
            message: format!("'{cell}' is not a number"),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                line: number,
                message: format!("value {v} is not finite"),
            });
        }
        values.push(v);
    }
    Ok(values)
}

#[derive(Debug, Clone, Serialize)]
struct DensitySummary<'a> {
    config_sha256: String,
    samples: usize,
    model: &'a KdmeModel,
}

fn write_trace(fit: &KdmeFit, path: &Path) -> Result<(), CliError> {
    let width = fit.runs.iter().map(|r| r.moments).max().unwrap_or(0);
    write_with(path, |w| {
        let xs: Vec<String> = (1..=width).map(|k| format!("gamma_{k}")).collect();
        writeln!(w, "run,padding,moments,gamma_max,iteration,{},value,incumbent", xs.join(","))?;
        for (r, run) in fit.runs.iter().enumerate() {
            for e in &run.result.history {
                let mut cells: Vec<String> = e.x.iter().map(|v| format!("{v:e}")).collect();
                cells.resize(width, String::new());
                writeln!(
                    w,
                    "{r},{},{},{},{},{},{:e},{:e}",
                    run.padding,
                    run.moments,
                    run.gamma_max,
                    e.iteration,
                    cells.join(","),
                    e.value,
                    e.incumbent
                )?;
            }
        }
        Ok(())
    })
}

/// Fits a KDME density to one CSV column; writes the density on the
/// evaluation grid and, with `trace`, the optimizer history.
pub fn fit_density(
    config: &RunConfig,
    input: &Path,
    column: Option<&str>,
    out: &Path,
    trace: bool,
) -> Result<KdmeModel, CliError> {
    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    let values = read_column(BufReader::new(file), column).stage("read column")?;
    let kdme = KdmeConfig {
        seed: config.detector.seed,
        ..config.detector.kdme.clone()
    };
    let fit = fit_kdme_traced(&values, &kdme).stage("fit-density")?;
    prepare_output_dir(out)?;
    let header = config.header();
    let x = fit.model.eval_points();
    let f = fit.model.pdf_batch(&x);
    write_with(&out.join(DENSITY), |w| {
        for line in header.lines() {
            writeln!(w, "# {line}")?;
        }
        writeln!(w, "x,density")?;
        for (x, f) in x.iter().zip(&f) {
            writeln!(w, "{x:e},{f:e}")?;
        }
        Ok(())
    })?;
    write_json(
        &out.join(DENSITY_SUMMARY),
        &DensitySummary {
            config_sha256: config.sha256(),
            samples: values.len(),
            model: &fit.model,
        },
    )?;
    if trace {
        write_trace(&fit, &out.join(TRACE))?;
    }
    Ok(fit.model)
}

/// Outcome of an in-memory end-to-end run.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub model: NoveltyModel,
    pub report: DetectionReport,
}

/// Simulates, trains and detects without writing raw records. With
/// `out`, writes the model, training report, detection report and manifest.
pub fn evaluate(config: &RunConfig, out: Option<&Path>) -> Result<Evaluation, CliError> {
    config.dataset.validate().stage("simulate")?;
    let grid = config.eta_grid()?;
    let per_block = (config.dataset.block_minutes * 60.0 / config.features.segment_seconds).floor() as usize;
    validate_detector(&config.detector, per_block * config.dataset.train_blocks(), 4 * grid.len())?;
    if let Some(dir) = out {
        prepare_output_dir(dir)?;
    }

    let mut features = Vec::new();
    let mut ids = Vec::new();
    generate_training(&config.dataset, |block| {
        let id = format!("block_{:04}", block.index);
        let segments = segment_record(&block.record, &id, config.features.segment_seconds)?;
        let batch: Vec<FeatureVector> = segments
            .par_iter()
            .map(|s| build_feature_vector(s, &grid))
            .collect::<Result<_, _>>()?;
        ids.extend((0..batch.len()).map(|k| format!("{id}:{k}")));
        features.extend(batch);
        Ok(())
    })
    .stage("simulate")?;
    log::info!("training on {} simulated segments", features.len());
    let model = train_model(config, &features, &ids)?;

    let mut scored = Vec::new();
    let mut rows = Vec::new();
    generate_tests(&config.dataset, |case| {
        let segments = segment_record(&case.record, &case.row.simulation_id, config.features.segment_seconds)?;
        let scores = segments
            .iter()
            .map(|s| model.classify(&model.features(s)?))
            .collect::<Result<Vec<_>, _>>()?;
        scored.push((case.row.simulation_id.clone(), Some(case.row.damaged), scores));
        rows.push(case.row);
        Ok(())
    })
    .stage("detect")?;
    let report = DetectionReport::build(model.threshold, scored).stage("vote")?;

    if let Some(dir) = out {
        write_training_outputs(config, &model, &ids, dir)?;
        write_report(&config.header(), &report, dir, true)?;
        write_with(&dir.join(MANIFEST), |w| Ok(write_manifest(w, &rows, Some(&config.header()))?))?;
    }
    Ok(Evaluation { model, report })
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_reader() {
        let text = "# note\na,b\n1,2\n3,4\n";
        assert_eq!(read_column(text.as_bytes(), Some("b")).unwrap(), vec![2.0, 4.0]);
        assert_eq!(read_column(text.as_bytes(), None).unwrap(), vec![1.0, 3.0]);
        assert_eq!(read_column("1.5\n2.5\n".as_bytes(), None).unwrap(), vec![1.5, 2.5]);
        let err = read_column("a\n1\nx\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        assert!(matches!(read_column(text.as_bytes(), Some("c")), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn refuses_non_empty_output() {
        let dir = tempfile::tempdir().unwrap();
        prepare_output_dir(&dir.path().join("fresh")).unwrap();
        std::fs::write(dir.path().join("x"), "").unwrap();
        let err = prepare_output_dir(dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
